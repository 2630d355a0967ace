//! Run configuration: a sectioned `key = value` file merged with command
//! line overrides (flags win over file values, file values win over
//! defaults).

use std::collections::BTreeMap;
use std::path::Path;

use ds2dl_core::diffusion::ClusterParams;
use ds2dl_core::umae::TrainConfig;
use ds2dl_core::{Error, Result};

/// `auto` or an explicit number, for the self-tuning parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AutoOr<T> {
    Auto,
    Value(T),
}

impl<T: Copy> AutoOr<T> {
    pub fn as_option(self) -> Option<T> {
        match self {
            AutoOr::Auto => None,
            AutoOr::Value(v) => Some(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    S2dl,
    Ds2dl,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::S2dl => "s2dl",
            Mode::Ds2dl => "ds2dl",
        }
    }
}

/// Union of the training and clustering parameter sets plus file paths.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub umae: TrainConfig,
    pub mode: Mode,
    pub n_superpixels: usize,
    pub reps_per_superpixel: usize,
    pub sigma0: AutoOr<f64>,
    pub k_n: usize,
    pub radius: f64,
    pub k_clusters: usize,
    pub t: f64,
    pub n_eigs: AutoOr<usize>,
    pub ers_lambda: AutoOr<f64>,
    pub sigma_e: AutoOr<f64>,
    pub seed: u64,
    pub paths: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            umae: TrainConfig::default(),
            mode: Mode::Ds2dl,
            n_superpixels: 100,
            reps_per_superpixel: 3,
            sigma0: AutoOr::Auto,
            k_n: 10,
            radius: 20.0,
            k_clusters: 2,
            t: 30.0,
            n_eigs: AutoOr::Auto,
            ers_lambda: AutoOr::Auto,
            sigma_e: AutoOr::Auto,
            seed: 0,
            paths: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn cluster_params(&self) -> ClusterParams {
        ClusterParams {
            n_superpixels: self.n_superpixels,
            reps_per_superpixel: self.reps_per_superpixel,
            sigma0: self.sigma0.as_option(),
            k_n: self.k_n,
            radius: self.radius,
            k_clusters: self.k_clusters,
            t: self.t,
            n_eigs: self.n_eigs.as_option(),
            ers_lambda: self.ers_lambda.as_option(),
            sigma_e: self.sigma_e.as_option(),
        }
    }

    pub fn path(&self, key: &str) -> Result<&str> {
        self.paths
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::param(format!("no `{key}` path configured ([io] section or flag)")))
    }

    /// Every effective value, materialized for the run log.
    pub fn materialize(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("mode".into(), self.mode.as_str().into()),
            ("seed".into(), self.seed.to_string()),
            ("umae.n_t".into(), self.umae.n_t.to_string()),
            ("umae.mask_ratio".into(), self.umae.mask_ratio.to_string()),
            ("umae.patch".into(), self.umae.patch.to_string()),
            ("umae.group_len".into(), self.umae.group_len.to_string()),
            ("umae.latent_dim".into(), self.umae.latent_dim.to_string()),
            ("umae.epochs".into(), self.umae.epochs.to_string()),
            ("umae.enc_depth".into(), self.umae.enc_depth.to_string()),
            ("umae.dec_depth".into(), self.umae.dec_depth.to_string()),
            ("umae.heads".into(), self.umae.n_heads.to_string()),
            ("umae.mlp_ratio".into(), self.umae.mlp_ratio.to_string()),
            (
                "umae.learning_rate".into(),
                self.umae.learning_rate.to_string(),
            ),
            ("umae.beta1".into(), self.umae.adam_beta1.to_string()),
            ("umae.beta2".into(), self.umae.adam_beta2.to_string()),
            ("umae.eps".into(), self.umae.adam_eps.to_string()),
            ("umae.batch".into(), self.umae.batch_size.to_string()),
            (
                "diffusion.superpixels".into(),
                self.n_superpixels.to_string(),
            ),
            ("diffusion.reps".into(), self.reps_per_superpixel.to_string()),
            ("diffusion.sigma0".into(), auto_str(self.sigma0)),
            ("diffusion.knn".into(), self.k_n.to_string()),
            ("diffusion.radius".into(), self.radius.to_string()),
            ("diffusion.clusters".into(), self.k_clusters.to_string()),
            ("diffusion.time".into(), self.t.to_string()),
            (
                "diffusion.eigs".into(),
                match self.n_eigs {
                    AutoOr::Auto => "auto".into(),
                    AutoOr::Value(v) => v.to_string(),
                },
            ),
            ("diffusion.lambda".into(), auto_str(self.ers_lambda)),
            ("diffusion.sigma_e".into(), auto_str(self.sigma_e)),
        ];
        for (k, v) in &self.paths {
            out.push((format!("io.{k}"), v.clone()));
        }
        out
    }
}

fn auto_str(v: AutoOr<f64>) -> String {
    match v {
        AutoOr::Auto => "auto".into(),
        AutoOr::Value(v) => v.to_string(),
    }
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::param(format!("{key}: expected an integer, got `{value}`")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::param(format!("{key}: expected a number, got `{value}`")))
}

fn parse_auto_f64(key: &str, value: &str) -> Result<AutoOr<f64>> {
    if value == "auto" {
        Ok(AutoOr::Auto)
    } else {
        Ok(AutoOr::Value(parse_f64(key, value)?))
    }
}

/// Apply one configuration entry (`section.key` form) to the config.
pub fn apply_entry(config: &mut RunConfig, section: &str, key: &str, value: &str) -> Result<()> {
    let full = if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    };
    match (section, key) {
        ("", "seed") => config.seed = parse_usize(&full, value)? as u64,
        ("umae", "n_t") => config.umae.n_t = parse_usize(&full, value)?,
        ("umae", "mask_ratio") => config.umae.mask_ratio = parse_f64(&full, value)?,
        ("umae", "patch") => config.umae.patch = parse_usize(&full, value)?,
        ("umae", "group_len") => config.umae.group_len = parse_usize(&full, value)?,
        ("umae", "latent_dim") => config.umae.latent_dim = parse_usize(&full, value)?,
        ("umae", "epochs") => config.umae.epochs = parse_usize(&full, value)?,
        ("umae", "enc_depth") => config.umae.enc_depth = parse_usize(&full, value)?,
        ("umae", "dec_depth") => config.umae.dec_depth = parse_usize(&full, value)?,
        ("umae", "heads") => config.umae.n_heads = parse_usize(&full, value)?,
        ("umae", "mlp_ratio") => config.umae.mlp_ratio = parse_usize(&full, value)?,
        ("umae", "learning_rate") => config.umae.learning_rate = parse_f64(&full, value)?,
        ("umae", "beta1") => config.umae.adam_beta1 = parse_f64(&full, value)?,
        ("umae", "beta2") => config.umae.adam_beta2 = parse_f64(&full, value)?,
        ("umae", "eps") => config.umae.adam_eps = parse_f64(&full, value)?,
        ("umae", "batch") => config.umae.batch_size = parse_usize(&full, value)?,
        ("diffusion", "mode") => {
            config.mode = match value {
                "s2dl" => Mode::S2dl,
                "ds2dl" => Mode::Ds2dl,
                other => {
                    return Err(Error::param(format!(
                        "diffusion.mode: expected s2dl or ds2dl, got `{other}`"
                    )))
                }
            }
        }
        ("diffusion", "superpixels") => config.n_superpixels = parse_usize(&full, value)?,
        ("diffusion", "reps") => config.reps_per_superpixel = parse_usize(&full, value)?,
        ("diffusion", "sigma0") => config.sigma0 = parse_auto_f64(&full, value)?,
        ("diffusion", "knn") => config.k_n = parse_usize(&full, value)?,
        ("diffusion", "radius") => config.radius = parse_f64(&full, value)?,
        ("diffusion", "clusters") => config.k_clusters = parse_usize(&full, value)?,
        ("diffusion", "time") => config.t = parse_f64(&full, value)?,
        ("diffusion", "eigs") => {
            config.n_eigs = if value == "auto" {
                AutoOr::Auto
            } else {
                AutoOr::Value(parse_usize(&full, value)?)
            }
        }
        ("diffusion", "lambda") => config.ers_lambda = parse_auto_f64(&full, value)?,
        ("diffusion", "sigma_e") => config.sigma_e = parse_auto_f64(&full, value)?,
        ("io", _) => {
            config.paths.insert(key.to_string(), value.to_string());
        }
        _ => {
            return Err(Error::param(format!("unknown configuration key `{full}`")));
        }
    }
    Ok(())
}

/// Parse a sectioned `key = value` file. `#` starts a comment.
pub fn parse_config_text(text: &str, config: &mut RunConfig) -> Result<()> {
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            if !matches!(section.as_str(), "umae" | "diffusion" | "io") {
                return Err(Error::param(format!(
                    "line {}: unknown section [{section}]",
                    lineno + 1
                )));
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::param(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        apply_entry(config, &section, key.trim(), value.trim())?;
    }
    Ok(())
}

pub fn load_config(path: impl AsRef<Path>, config: &mut RunConfig) -> Result<()> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config_text(&text, config)
}

//! Subcommand implementations. Every command writes its artifact(s) and
//! emits one JSON log line with its wall time and effective parameters.

use std::path::PathBuf;
use std::time::Instant;

use ds2dl_core::diffusion::{cluster, ClusterMap};
use ds2dl_core::io::{
    flatten, load_cube, load_labels, normalize_bands, save_cube, save_labels, unflatten, HsiCube,
    LabelMask,
};
use ds2dl_core::metrics::{aligned_accuracy, confusion, nmi, purity, MetricsReport};
use ds2dl_core::numerics::pca;
use ds2dl_core::superpixel::{build_pixel_graph, default_lambda, default_sigma_e, ers_segment};
use ds2dl_core::umae::{encode_latent, load_checkpoint, save_checkpoint, save_loss_log, train};
use ds2dl_core::{synth, Error, Result};

use crate::config::{Mode, RunConfig};
use crate::logging::RunLog;

fn load_normalized_cube(cfg: &RunConfig) -> Result<HsiCube> {
    let cube = load_cube(cfg.path("cube")?)?;
    Ok(normalize_bands(&cube))
}

/// 3-component false-color image of the raw cube, for segmentation.
fn pc3_image(cube: &HsiCube) -> Result<HsiCube> {
    let flat = flatten(cube);
    let p = pca(&flat, 3.min(cube.bands))?;
    unflatten(&p.scores, cube.height, cube.width)
}

pub struct SynthArgs {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    pub noise: f64,
    pub out_cube: PathBuf,
    pub out_labels: PathBuf,
    pub provenance: Option<PathBuf>,
}

pub fn cmd_synth(args: &SynthArgs, seed: u64, log: &RunLog) -> Result<()> {
    let start = Instant::now();
    let cfg = synth::SynthConfig {
        height: args.height,
        width: args.width,
        bands: args.bands,
        classes: args.classes,
        noise: args.noise,
        seed,
    };
    let scene = synth::generate(&cfg)?;
    save_cube(&scene.cube, &args.out_cube)?;
    save_labels(&scene.labels, &args.out_labels)?;
    if let Some(prov) = &args.provenance {
        let mut text = String::from("# synthetic scene provenance\n");
        text.push_str(&format!(
            "height = {}\nwidth = {}\nbands = {}\nclasses = {}\nnoise = {}\nseed = {}\n",
            cfg.height, cfg.width, cfg.bands, cfg.classes, cfg.noise, cfg.seed
        ));
        for (k, sig) in scene.signatures.iter().enumerate() {
            let joined: Vec<String> = sig.iter().map(|v| format!("{v:.6}")).collect();
            text.push_str(&format!("signature_{} = {}\n", k + 1, joined.join(" ")));
        }
        std::fs::write(prov, text).map_err(|e| Error::io(prov.display().to_string(), e))?;
    }
    log.emit(
        "synth",
        start.elapsed().as_secs_f64(),
        &[
            ("height".into(), cfg.height.to_string()),
            ("width".into(), cfg.width.to_string()),
            ("bands".into(), cfg.bands.to_string()),
            ("classes".into(), cfg.classes.to_string()),
            ("noise".into(), cfg.noise.to_string()),
            ("seed".into(), cfg.seed.to_string()),
            ("out_cube".into(), args.out_cube.display().to_string()),
            ("out_labels".into(), args.out_labels.display().to_string()),
        ],
    )
}

pub fn cmd_train(cfg: &RunConfig, log: &RunLog) -> Result<()> {
    let start = Instant::now();
    let cube = load_normalized_cube(cfg)?;
    let mut train_cfg = cfg.umae.clone();
    train_cfg.seed = cfg.seed;
    let outcome = train(&cube, &train_cfg)?;
    save_checkpoint(&outcome.params, &train_cfg, cfg.path("checkpoint")?)?;
    if let Some(path) = cfg.paths.get("loss_log") {
        save_loss_log(&outcome.loss_log, path)?;
    }
    let mut params = cfg.materialize();
    if let Some(last) = outcome.loss_log.last() {
        params.push(("final_loss".into(), last.to_string()));
        params.push(("first_loss".into(), outcome.loss_log[0].to_string()));
    }
    log.emit("train", start.elapsed().as_secs_f64(), &params)
}

pub fn cmd_encode(cfg: &RunConfig, log: &RunLog) -> Result<()> {
    let start = Instant::now();
    let cube = load_normalized_cube(cfg)?;
    let (params, _ckpt_cfg) = load_checkpoint(cfg.path("checkpoint")?)?;
    let latent = encode_latent(&cube, &params)?;
    save_cube(&latent, cfg.path("latent")?)?;
    let mut p = cfg.materialize();
    p.push(("latent_bands".into(), latent.bands.to_string()));
    log.emit("encode", start.elapsed().as_secs_f64(), &p)
}

pub fn cmd_superpix(cfg: &RunConfig, log: &RunLog) -> Result<()> {
    let start = Instant::now();
    let cube = load_normalized_cube(cfg)?;
    let pc3 = pc3_image(&cube)?;
    let sigma_e = match cfg.sigma_e.as_option() {
        Some(v) => v,
        None => default_sigma_e(&pc3)?,
    };
    let graph = build_pixel_graph(&pc3, sigma_e)?;
    let lambda = cfg
        .ers_lambda
        .as_option()
        .unwrap_or_else(|| default_lambda(&graph, cfg.n_superpixels));
    let seg = ers_segment(&graph, cfg.n_superpixels, lambda)?;
    if seg.n_segments > u16::MAX as usize {
        return Err(Error::param("segment count exceeds the 16-bit label format"));
    }
    let mask = LabelMask::new(
        seg.height,
        seg.width,
        seg.labels.iter().map(|&l| l as u16).collect(),
    )?;
    save_labels(&mask, cfg.path("segmentation")?)?;
    let mut p = cfg.materialize();
    p.push(("sigma_e_effective".into(), sigma_e.to_string()));
    p.push(("lambda_effective".into(), lambda.to_string()));
    log.emit("superpix", start.elapsed().as_secs_f64(), &p)
}

fn write_provenance(map: &ClusterMap, path: &str) -> Result<()> {
    let mut text = String::from("pixel_index,label,stage\n");
    for (px, (&label, stage)) in map.labels.iter().zip(&map.stages).enumerate() {
        text.push_str(&format!("{px},{label},{}\n", stage.as_str()));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.to_string(), e))
}

pub fn cmd_cluster(cfg: &RunConfig, log: &RunLog) -> Result<()> {
    let cube = load_normalized_cube(cfg)?;
    let pc3 = pc3_image(&cube)?;
    let features = match cfg.mode {
        Mode::S2dl => cube.clone(),
        Mode::Ds2dl => {
            let latent_path = cfg.path("latent").map_err(|_| {
                Error::param(
                    "ds2dl mode needs a latent cube; run `ds2dl train` and `ds2dl encode` first, \
                     then pass --latent (or [io] latent)",
                )
            })?;
            load_cube(latent_path).map_err(|e| match e {
                Error::Io { path, source } => Error::Io {
                    path: format!(
                        "{path} (ds2dl mode reads the encoded latent; run `ds2dl train` and \
                         `ds2dl encode` first)"
                    ),
                    source,
                },
                other => other,
            })?
        }
    };

    // the clustering stage is what the runtime comparison measures
    let start = Instant::now();
    let (map, stats) = cluster(&features, &pc3, &cfg.cluster_params())?;
    let rt_seconds = start.elapsed().as_secs_f64();

    save_labels(&map.to_label_mask()?, cfg.path("cluster_map")?)?;
    if let Some(path) = cfg.paths.get("provenance") {
        write_provenance(&map, path)?;
    }
    let mut p = cfg.materialize();
    p.push(("feature_bands".into(), features.bands.to_string()));
    p.push(("rt_seconds".into(), format!("{rt_seconds:.6}")));
    p.push(("sigma0_density_effective".into(), stats.sigma0_density.to_string()));
    p.push(("sigma0_graph_effective".into(), stats.sigma0_graph.to_string()));
    p.push(("sigma_e_effective".into(), stats.sigma_e.to_string()));
    p.push(("lambda_effective".into(), stats.ers_lambda.to_string()));
    p.push(("representatives".into(), stats.n_representatives.to_string()));
    p.push(("off_component".into(), stats.n_off_component.to_string()));
    p.push(("eigenpairs".into(), stats.n_eigs.to_string()));
    for (i, w) in stats.warnings.iter().enumerate() {
        p.push((format!("warning_{i}"), w.clone()));
    }
    log.emit("cluster", rt_seconds, &p)
}

pub struct EvalArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    pub out: PathBuf,
    pub pred_2x: Option<PathBuf>,
    pub pred_3x: Option<PathBuf>,
    pub rt_seconds: f64,
}

fn purity_of(path: &PathBuf, gt: &LabelMask) -> Result<f64> {
    let pred = load_labels(path)?;
    let labels: Vec<u32> = pred.labels.iter().map(|&l| l as u32).collect();
    purity(&confusion(&labels, gt)?)
}

pub fn cmd_eval(args: &EvalArgs, log: &RunLog) -> Result<()> {
    let start = Instant::now();
    let pred = load_labels(&args.pred)?;
    let gt = load_labels(&args.gt)?;
    let labels: Vec<u32> = pred.labels.iter().map(|&l| l as u32).collect();
    let cm = confusion(&labels, &gt)?;
    let (oa, aa, kappa) = aligned_accuracy(&cm)?;
    let report = MetricsReport {
        oa,
        aa,
        kappa,
        purity_1x: purity(&cm)?,
        purity_2x: args.pred_2x.as_ref().map(|p| purity_of(p, &gt)).transpose()?,
        purity_3x: args.pred_3x.as_ref().map(|p| purity_of(p, &gt)).transpose()?,
        nmi: nmi(&cm)?,
        rt_seconds: args.rt_seconds,
    };
    std::fs::write(&args.out, report.to_csv())
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    log.emit(
        "eval",
        start.elapsed().as_secs_f64(),
        &[
            ("pred".into(), args.pred.display().to_string()),
            ("gt".into(), args.gt.display().to_string()),
            ("oa".into(), format!("{oa:.6}")),
            ("aa".into(), format!("{aa:.6}")),
            ("kappa".into(), format!("{kappa:.6}")),
            ("out".into(), args.out.display().to_string()),
        ],
    )
}

pub fn cmd_render(labels: &PathBuf, out: &PathBuf, log: &RunLog) -> Result<()> {
    let start = Instant::now();
    let mask = load_labels(labels)?;
    crate::render::write_ppm(&mask, out)?;
    log.emit(
        "render",
        start.elapsed().as_secs_f64(),
        &[
            ("labels".into(), labels.display().to_string()),
            ("out".into(), out.display().to_string()),
        ],
    )
}

//! Clustering evaluation against a ground-truth mask: overall/average
//! accuracy and Cohen's kappa under optimal cluster-to-class alignment,
//! purity, and normalized mutual information.
//!
//! Unlabeled ground-truth pixels (label 0) are excluded from every metric.

use crate::error::{Error, Result};
use crate::io::LabelMask;
use crate::numerics::{hungarian, Mat};

/// Co-occurrence counts of (predicted cluster, ground-truth class) over
/// labeled pixels. Rows are clusters 1..=n_clusters, columns classes
/// 1..=n_classes.
#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
}

impl ConfusionMatrix {
    pub fn n_clusters(&self) -> usize {
        self.counts.len()
    }

    pub fn n_classes(&self) -> usize {
        self.counts.first().map_or(0, |r| r.len())
    }

    fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_totals(&self) -> Vec<u64> {
        let mut t = vec![0u64; self.n_classes()];
        for row in &self.counts {
            for (c, &v) in row.iter().enumerate() {
                t[c] += v;
            }
        }
        t
    }
}

/// Count co-occurrences of predicted labels (1-based, e.g. a cluster map's
/// label vector) against ground truth; GT label 0 is skipped.
pub fn confusion(pred: &[u32], gt: &LabelMask) -> Result<ConfusionMatrix> {
    if pred.len() != gt.labels.len() {
        return Err(Error::contract(format!(
            "prediction length {} does not match mask {}x{}",
            pred.len(),
            gt.height,
            gt.width
        )));
    }
    let mut n_clusters = 0usize;
    let mut n_classes = 0usize;
    for (&p, &g) in pred.iter().zip(&gt.labels) {
        if g == 0 {
            continue;
        }
        if p == 0 {
            return Err(Error::contract(
                "prediction contains label 0 on a ground-truth pixel",
            ));
        }
        n_clusters = n_clusters.max(p as usize);
        n_classes = n_classes.max(g as usize);
    }
    let mut counts = vec![vec![0u64; n_classes]; n_clusters];
    let mut total = 0u64;
    for (&p, &g) in pred.iter().zip(&gt.labels) {
        if g == 0 {
            continue;
        }
        counts[(p - 1) as usize][(g - 1) as usize] += 1;
        total += 1;
    }
    Ok(ConfusionMatrix { counts, total })
}

/// (OA, AA, kappa) under the optimal one-to-one cluster/class alignment.
///
/// Kappa is (OA - p_e)/(1 - p_e) with the chance-agreement term built from
/// the aligned diagonal: each class contributes its aligned cluster's hit
/// count times its class share, and a class with no aligned cluster
/// contributes its own share squared. A single cluster over two equal
/// classes therefore scores exactly 0.
pub fn aligned_accuracy(cm: &ConfusionMatrix) -> Result<(f64, f64, f64)> {
    if cm.total == 0 {
        return Err(Error::contract(
            "no labeled pixels; accuracy metrics are undefined",
        ));
    }
    let (k, g) = (cm.n_clusters(), cm.n_classes());

    // maximize agreement = hungarian on negated counts
    let mut cost = Mat::zeros(k, g);
    for r in 0..k {
        for c in 0..g {
            cost.set(r, c, -(cm.counts[r][c] as f64));
        }
    }
    let pairs = hungarian(&cost)?;
    // class -> aligned cluster
    let mut cluster_of_class = vec![None; g];
    for &(r, c) in &pairs {
        cluster_of_class[c] = Some(r);
    }

    let total = cm.total as f64;
    let cols = cm.col_totals();

    let mut agreement = 0u64;
    let mut recall_sum = 0.0;
    let mut classes_counted = 0usize;
    let mut p_e = 0.0;
    for class in 0..g {
        if cols[class] == 0 {
            continue; // class absent from the labeled pixels
        }
        classes_counted += 1;
        let col = cols[class] as f64;
        match cluster_of_class[class] {
            Some(cluster) => {
                let hit = cm.counts[cluster][class];
                agreement += hit;
                recall_sum += hit as f64 / col;
                p_e += (hit as f64 * col) / (total * total);
            }
            None => {
                p_e += (col * col) / (total * total);
            }
        }
    }
    let oa = agreement as f64 / total;
    let aa = recall_sum / classes_counted as f64;
    let kappa = if (1.0 - p_e).abs() < 1e-15 {
        1.0
    } else {
        (oa - p_e) / (1.0 - p_e)
    };
    Ok((oa, aa, kappa))
}

/// Fraction of labeled pixels covered by each cluster's majority class;
/// alignment-free, so valid for any cluster count.
pub fn purity(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total == 0 {
        return Err(Error::contract("no labeled pixels; purity is undefined"));
    }
    let hits: u64 = cm
        .counts
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    Ok(hits as f64 / cm.total as f64)
}

fn entropy(totals: &[u64], n: f64) -> f64 {
    totals
        .iter()
        .filter(|&&t| t > 0)
        .map(|&t| {
            let p = t as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// I(pred; gt) / sqrt(H(pred)·H(gt)) with natural logs over labeled pixels.
/// If either marginal entropy is zero the value is 1 when the partitions
/// coincide and 0 otherwise.
pub fn nmi(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total == 0 {
        return Err(Error::contract("no labeled pixels; NMI is undefined"));
    }
    let n = cm.total as f64;
    let rows = cm.row_totals();
    let cols = cm.col_totals();
    let h_pred = entropy(&rows, n);
    let h_gt = entropy(&cols, n);

    if h_pred == 0.0 || h_gt == 0.0 {
        let nonzero_rows = rows.iter().filter(|&&t| t > 0).count();
        let nonzero_cols = cols.iter().filter(|&&t| t > 0).count();
        return Ok(if nonzero_rows == 1 && nonzero_cols == 1 {
            1.0
        } else {
            0.0
        });
    }

    let mut mi = 0.0;
    for (r, row) in cm.counts.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v == 0 {
                continue;
            }
            let p_joint = v as f64 / n;
            let p_r = rows[r] as f64 / n;
            let p_c = cols[c] as f64 / n;
            mi += p_joint * (p_joint / (p_r * p_c)).ln();
        }
    }
    Ok((mi / (h_pred * h_gt).sqrt()).clamp(0.0, 1.0))
}

/// One evaluation row set, serialized as "metric,value" CSV with six
/// decimal places. Purity at 2x/3x the class count is present only when
/// those re-clustered predictions were supplied.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub purity_1x: f64,
    pub purity_2x: Option<f64>,
    pub purity_3x: Option<f64>,
    pub nmi: f64,
    pub rt_seconds: f64,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let mut push = |name: &str, v: f64| {
            out.push_str(&format!("{name},{v:.6}\n"));
        };
        push("oa", self.oa);
        push("aa", self.aa);
        push("kappa", self.kappa);
        push("purity_1x", self.purity_1x);
        if let Some(p) = self.purity_2x {
            push("purity_2x", p);
        }
        if let Some(p) = self.purity_3x {
            push("purity_3x", p);
        }
        push("nmi", self.nmi);
        push("rt_seconds", self.rt_seconds);
        out
    }
}

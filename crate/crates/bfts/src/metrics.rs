//! Fairness and utility metrics, the correlation audit, and discrete
//! distribution pairs for the closed-form adversary analysis.

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Absolute difference in positive-prediction rates between the two
/// sensitive groups over `mask`.
pub fn delta_dp(yhat_hard: &[u8], s_hard: &[u8], mask: &[bool]) -> Result<f64> {
    let mut pos = [0usize; 2];
    let mut total = [0usize; 2];
    for i in 0..mask.len() {
        if !mask[i] {
            continue;
        }
        let g = s_hard[i] as usize;
        total[g] += 1;
        pos[g] += yhat_hard[i] as usize;
    }
    if total[0] == 0 || total[1] == 0 {
        return Err(Error::Degenerate(format!(
            "group sizes {} / {} for demographic parity",
            total[0], total[1]
        )));
    }
    let r1 = pos[1] as f64 / total[1] as f64;
    let r0 = pos[0] as f64 / total[0] as f64;
    Ok((r1 - r0).abs())
}

/// Absolute difference in true-positive rates between the two sensitive
/// groups over `mask`.
pub fn delta_eqop(yhat_hard: &[u8], s_hard: &[u8], y: &[u8], mask: &[bool]) -> Result<f64> {
    let mut tp = [0usize; 2];
    let mut pos = [0usize; 2];
    for i in 0..mask.len() {
        if !mask[i] || y[i] != 1 {
            continue;
        }
        let g = s_hard[i] as usize;
        pos[g] += 1;
        tp[g] += yhat_hard[i] as usize;
    }
    if pos[0] == 0 || pos[1] == 0 {
        return Err(Error::Degenerate(format!(
            "positive counts {} / {} for equality of opportunity",
            pos[0], pos[1]
        )));
    }
    let t1 = tp[1] as f64 / pos[1] as f64;
    let t0 = tp[0] as f64 / pos[0] as f64;
    Ok((t1 - t0).abs())
}

/// F1 = 2PR/(P+R); defined as 0 when there are no positive predictions or
/// no true positives.
pub fn f1(yhat_hard: &[u8], y: &[u8], mask: &[bool]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for i in 0..mask.len() {
        if !mask[i] {
            continue;
        }
        match (yhat_hard[i], y[i]) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    2.0 * p * r / (p + r)
}

/// Step-wise average precision over descending scores. Ties break by node
/// order so output files are reproducible. Errors when the mask holds no
/// positive labels.
pub fn avpr(scores: &[f64], y: &[u8], mask: &[bool]) -> Result<f64> {
    let mut ranked: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let n_pos = ranked.iter().filter(|&&i| y[i] == 1).count();
    if n_pos == 0 {
        return Err(Error::Degenerate("no positive labels for average precision".into()));
    }
    ranked.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut tp = 0usize;
    let mut ap = 0.0;
    for (rank, &i) in ranked.iter().enumerate() {
        if y[i] == 1 {
            tp += 1;
            let precision = tp as f64 / (rank + 1) as f64;
            // recall increment is 1/n_pos per positive hit
            ap += precision / n_pos as f64;
        }
    }
    Ok(ap)
}

/// Pearson correlation; errors when either input has zero variance.
pub fn pearson_corr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(
            "pearson_corr",
            format!("lengths {} and {}", a.len(), b.len()),
        ));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Degenerate("zero variance in correlation input".into()));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// A pair of discrete distributions over the same bins, e.g. the
/// embedding histograms conditioned on each sensitive value.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistPair {
    p1: Vec<f64>,
    p0: Vec<f64>,
}

impl DiscreteDistPair {
    pub fn new(p1: Vec<f64>, p0: Vec<f64>) -> Result<Self> {
        if p1.len() != p0.len() || p1.is_empty() {
            return Err(Error::shape(
                "DiscreteDistPair",
                format!("bin counts {} and {}", p1.len(), p0.len()),
            ));
        }
        for (name, p) in [("p1", &p1), ("p0", &p0)] {
            if p.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidConfig(format!("{name} has a negative mass")));
            }
            let total: f64 = p.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidConfig(format!("{name} sums to {total}")));
            }
        }
        Ok(DiscreteDistPair { p1, p0 })
    }

    pub fn bins(&self) -> usize {
        self.p1.len()
    }

    pub fn p1(&self) -> &[f64] {
        &self.p1
    }

    pub fn p0(&self) -> &[f64] {
        &self.p0
    }
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .map(|(&pi, &mi)| if pi > 0.0 { pi * (pi / mi).ln() } else { 0.0 })
        .sum()
}

/// Jensen-Shannon divergence, natural log: bounded by [0, ln 2], zero iff
/// the distributions match, ln 2 on disjoint supports.
pub fn js_divergence(d: &DiscreteDistPair) -> f64 {
    let m: Vec<f64> = d
        .p1
        .iter()
        .zip(&d.p0)
        .map(|(&a, &b)| 0.5 * (a + b))
        .collect();
    0.5 * kl_to_mixture(&d.p1, &m) + 0.5 * kl_to_mixture(&d.p0, &m)
}

/// The best possible adversary against a frozen embedding distribution:
/// per bin, p1/(p1+p0); 0.5 where both masses vanish.
pub fn optimal_adversary(d: &DiscreteDistPair) -> Vec<f64> {
    d.p1
        .iter()
        .zip(&d.p0)
        .map(|(&a, &b)| if a + b > 0.0 { a / (a + b) } else { 0.5 })
        .collect()
}

/// Bin-wise expectation of the adversary objective
/// `E_{p1}[log f] + E_{p0}[log(1 - f)]` for an arbitrary per-bin response
/// `f`. Terms with zero mass contribute nothing.
pub fn adversary_objective(d: &DiscreteDistPair, f: &[f64]) -> Result<f64> {
    if f.len() != d.bins() {
        return Err(Error::shape(
            "adversary_objective",
            format!("{} responses for {} bins", f.len(), d.bins()),
        ));
    }
    let mut total = 0.0;
    for ((&p1, &p0), &fb) in d.p1.iter().zip(&d.p0).zip(f) {
        if p1 > 0.0 {
            total += p1 * fb.ln();
        }
        if p0 > 0.0 {
            total += p0 * (1.0 - fb).ln();
        }
    }
    Ok(total)
}

/// One correlation-audit row: how strongly a (possibly imputed) sensitive
/// vector tracks the class labels, next to the ground-truth association.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasAuditRow {
    pub method: String,
    pub corr_imputed: f64,
    pub corr_true: f64,
}

/// Correlation table over imputation methods. A constant imputation
/// carries no measurable association and is reported as 0.
pub fn bias_audit(g: &Graph, imputations: &[(String, Vec<u8>)]) -> Result<Vec<BiasAuditRow>> {
    let y: Vec<f64> = g.labels().iter().map(|&v| v as f64).collect();
    let s: Vec<f64> = g.sensitive().iter().map(|&v| v as f64).collect();
    let corr_true = pearson_corr(&s, &y)?;
    imputations
        .iter()
        .map(|(method, shat)| {
            if shat.len() != g.n_nodes() {
                return Err(Error::shape(
                    "bias_audit",
                    format!("{} imputations for {} nodes", shat.len(), g.n_nodes()),
                ));
            }
            let sv: Vec<f64> = shat.iter().map(|&v| v as f64).collect();
            let corr_imputed = match pearson_corr(&sv, &y) {
                Ok(c) => c,
                Err(Error::Degenerate(_)) => 0.0,
                Err(e) => return Err(e),
            };
            Ok(BiasAuditRow {
                method: method.clone(),
                corr_imputed,
                corr_true,
            })
        })
        .collect()
}

/// One evaluated run, as written to the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub mode: String,
    pub alpha: f64,
    pub beta: f64,
    pub observed_frac: f64,
    pub seed: u64,
    pub f1: f64,
    pub avpr: f64,
    pub ddp: f64,
    pub deqop: f64,
    pub corr_true: f64,
    /// Absent for trainers without an imputer.
    pub corr_imputed: Option<f64>,
    pub assortativity: f64,
}

pub const METRICS_CSV_HEADER: &str =
    "mode,alpha,beta,observed_frac,seed,f1,avpr,ddp,deqop,corr_true,corr_imputed,assortativity";

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.mode,
            self.alpha,
            self.beta,
            self.observed_frac,
            self.seed,
            self.f1,
            self.avpr,
            self.ddp,
            self.deqop,
            self.corr_true,
            self.corr_imputed.map(|v| v.to_string()).unwrap_or_default(),
            self.assortativity,
        )
    }
}

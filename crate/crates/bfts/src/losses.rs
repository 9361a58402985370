//! The three training losses and the sensitive-value merge feeding them.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, TensorId};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Margins for the label-distribution-aware loss: `delta_j = C / n_j^(1/4)`
/// over the training pool's class counts.
///
/// The quarter root is computed as `sqrt(sqrt(n))`; both square roots are
/// correctly rounded, which keeps the `delta0/delta1 = (n1/n0)^(1/4)`
/// identity exact whenever the intermediate quantities are representable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdamMargins {
    pub n0: usize,
    pub n1: usize,
    pub delta0: f64,
    pub delta1: f64,
    pub c: f64,
}

fn quarter_root(x: f64) -> f64 {
    x.sqrt().sqrt()
}

impl LdamMargins {
    /// Errors when a class is absent from the pool: the margin is
    /// undefined at n_j = 0.
    pub fn from_counts(n0: usize, n1: usize, c: f64) -> Result<Self> {
        if n0 == 0 || n1 == 0 {
            return Err(Error::Degenerate(format!(
                "margin undefined: class counts n0={n0}, n1={n1}"
            )));
        }
        if c < 0.0 {
            return Err(Error::InvalidConfig(format!("margin constant {c} < 0")));
        }
        Ok(LdamMargins {
            n0,
            n1,
            delta0: c / quarter_root(n0 as f64),
            delta1: c / quarter_root(n1 as f64),
            c,
        })
    }

    pub fn margin_for(&self, class: u8) -> f64 {
        if class == 0 {
            self.delta0
        } else {
            self.delta1
        }
    }
}

/// Which imputation loss the imputer trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputationLossKind {
    Ldam,
    Ce,
}

/// Mean binary cross-entropy of the classifier over the labeled nodes.
pub fn classification_loss(
    tape: &mut Tape,
    yhat: TensorId,
    labels: &[u8],
    train_mask: &[bool],
) -> Result<TensorId> {
    let selected: Vec<usize> = train_mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    if selected.is_empty() {
        return Err(Error::Degenerate("empty train mask".into()));
    }
    let p = tape.select_rows(yhat, train_mask)?;
    let y: Vec<f64> = selected.iter().map(|&i| labels[i] as f64).collect();
    let y_const = tape.constant_column(&y);
    let one_minus_y: Vec<f64> = y.iter().map(|&v| 1.0 - v).collect();
    let omy_const = tape.constant_column(&one_minus_y);

    let log_p = tape.log(p)?;
    let neg_p = tape.scale(p, -1.0)?;
    let one_minus_p = tape.add_scalar(neg_p, 1.0)?;
    let log_omp = tape.log(one_minus_p)?;

    let t1 = tape.mul(y_const, log_p)?;
    let t2 = tape.mul(omy_const, log_omp)?;
    let both = tape.add(t1, t2)?;
    let mean = tape.mean(both)?;
    tape.scale(mean, -1.0)
}

/// Margin-adjusted softmax cross-entropy over the pool: the true-class
/// logit is shifted down by its class margin before the softmax. With zero
/// margins (`Ce`, or `C = 0`) this is plain two-class cross-entropy.
pub fn imputation_loss(
    tape: &mut Tape,
    logits: TensorId,
    targets: &[u8],
    pool_mask: &[bool],
    margins: &LdamMargins,
    kind: ImputationLossKind,
) -> Result<TensorId> {
    let selected: Vec<usize> = pool_mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    if selected.is_empty() {
        return Err(Error::Degenerate("empty imputation pool".into()));
    }
    let (_, cols) = tape.shape(logits);
    if cols != 2 {
        return Err(Error::shape("imputation_loss", format!("{cols} logit columns")));
    }
    let z = tape.select_rows(logits, pool_mask)?;
    let k = selected.len();

    let mut margin_rows = Vec::with_capacity(k * 2);
    let mut onehot_rows = Vec::with_capacity(k * 2);
    for &i in &selected {
        let s = targets[i];
        let m = match kind {
            ImputationLossKind::Ldam => margins.margin_for(s),
            ImputationLossKind::Ce => 0.0,
        };
        let (margin_row, onehot_row) = if s == 0 {
            ([m, 0.0], [1.0, 0.0])
        } else {
            ([0.0, m], [0.0, 1.0])
        };
        margin_rows.extend_from_slice(&margin_row);
        onehot_rows.extend_from_slice(&onehot_row);
    }
    let margin_const = tape.constant(&Matrix::from_vec(k, 2, margin_rows)?);
    let onehot = tape.constant(&Matrix::from_vec(k, 2, onehot_rows)?);

    let shifted = tape.sub(z, margin_const)?;
    let probs = tape.row_softmax(shifted)?;
    let true_probs = tape.mul(probs, onehot)?;
    let ones = tape.constant(&Matrix::from_vec(2, 1, vec![1.0, 1.0])?);
    let p_true = tape.matmul(true_probs, ones)?;
    let log_p = tape.log(p_true)?;
    let mean = tape.mean(log_p)?;
    tape.scale(mean, -1.0)
}

/// Where each node's merged sensitive value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitiveSource {
    Observed,
    Imputed,
    LabelProxy,
}

/// Soft merged sensitive values: ground truth on observed nodes, imputer
/// output elsewhere (or everywhere, in label-proxy mode).
pub struct MergedSensitive {
    pub id: TensorId,
    pub source: Vec<SensitiveSource>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeMode {
    /// Replace entries on observed nodes with ground truth.
    Observed,
    /// No observed values exist; the imputer (trained against the class
    /// labels) supplies every entry.
    LabelProxy,
}

pub fn merge_sensitive(
    tape: &mut Tape,
    si_hat: TensorId,
    g: &Graph,
    mode: MergeMode,
) -> Result<MergedSensitive> {
    let n = g.n_nodes();
    let (rows, cols) = tape.shape(si_hat);
    if rows != n || cols != 1 {
        return Err(Error::shape(
            "merge_sensitive",
            format!("{rows}x{cols} imputations for {n} nodes"),
        ));
    }
    match mode {
        MergeMode::LabelProxy => Ok(MergedSensitive {
            id: si_hat,
            source: vec![SensitiveSource::LabelProxy; n],
        }),
        MergeMode::Observed => {
            if g.n_observed() == 0 {
                return Err(Error::Degenerate(
                    "observed merge with empty observed set; use label-proxy".into(),
                ));
            }
            let mut fixed = Vec::with_capacity(n);
            let mut keep = Vec::with_capacity(n);
            let mut source = Vec::with_capacity(n);
            for v in 0..n {
                if g.observed_mask()[v] {
                    fixed.push(g.sensitive()[v] as f64);
                    keep.push(0.0);
                    source.push(SensitiveSource::Observed);
                } else {
                    fixed.push(0.0);
                    keep.push(1.0);
                    source.push(SensitiveSource::Imputed);
                }
            }
            let fixed_const = tape.constant_column(&fixed);
            let keep_const = tape.constant_column(&keep);
            let kept = tape.mul(keep_const, si_hat)?;
            let merged = tape.add(fixed_const, kept)?;
            Ok(MergedSensitive {
                id: merged,
                source,
            })
        }
    }
}

/// Plain-value version of the merge followed by a 0.5 threshold; used for
/// metrics, never for gradients.
pub fn merged_hard(g: &Graph, si_soft: &[f64]) -> Vec<u8> {
    (0..g.n_nodes())
        .map(|v| {
            if g.observed_mask()[v] {
                g.sensitive()[v]
            } else {
                u8::from(si_soft[v] >= 0.5)
            }
        })
        .collect()
}

/// Group-normalized adversary objective: the soft-weighted empirical form
/// of the two conditional expectations
/// `E[log sa | s=1] + E[log(1 - sa) | s=0]`. Always <= 0; larger means the
/// adversary reads the sensitive attribute more accurately.
pub fn adversary_loss(
    tape: &mut Tape,
    sa: TensorId,
    merged: TensorId,
    eval_mask: &[bool],
) -> Result<TensorId> {
    let (n, _) = tape.shape(sa);
    if tape.shape(merged) != (n, 1) || eval_mask.len() != n {
        return Err(Error::shape(
            "adversary_loss",
            format!("sa {:?}, merged {:?}, mask {}", tape.shape(sa), tape.shape(merged), eval_mask.len()),
        ));
    }
    let w1 = tape.select_rows(merged, eval_mask)?;
    let p = tape.select_rows(sa, eval_mask)?;
    if tape.shape(w1).0 == 0 {
        return Err(Error::Degenerate("empty adversary mask".into()));
    }

    let neg_w1 = tape.scale(w1, -1.0)?;
    let w0 = tape.add_scalar(neg_w1, 1.0)?;
    let w1_total = tape.sum(w1)?;
    let w0_total = tape.sum(w0)?;
    if tape.scalar_value(w1_total) <= 0.0 || tape.scalar_value(w0_total) <= 0.0 {
        return Err(Error::Degenerate(format!(
            "adversary group weights {} / {}",
            tape.scalar_value(w1_total),
            tape.scalar_value(w0_total)
        )));
    }

    let log_p = tape.log(p)?;
    let neg_p = tape.scale(p, -1.0)?;
    let one_minus_p = tape.add_scalar(neg_p, 1.0)?;
    let log_omp = tape.log(one_minus_p)?;

    let num1 = tape.mul(w1, log_p)?;
    let num1 = tape.sum(num1)?;
    let num0 = tape.mul(w0, log_omp)?;
    let num0 = tape.sum(num0)?;

    let t1 = tape.div(num1, w1_total)?;
    let t0 = tape.div(num0, w0_total)?;
    tape.add(t1, t0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;

    fn column_tape(values: &[f64]) -> (Tape, TensorId) {
        let mut tape = Tape::new();
        let id = tape.constant(&Matrix::column(values));
        (tape, id)
    }

    #[test]
    fn classification_loss_uniform_prediction_is_ln2() {
        let (mut tape, p) = column_tape(&[0.5, 0.5, 0.5]);
        let loss =
            classification_loss(&mut tape, p, &[1, 0, 1], &[true, true, true]).unwrap();
        assert!((tape.scalar_value(loss) - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn classification_loss_perfect_prediction_hits_clamp_floor() {
        let (mut tape, p) = column_tape(&[1.0, 0.0]);
        let loss = classification_loss(&mut tape, p, &[1, 0], &[true, true]).unwrap();
        // -ln(1 - 1e-12) per term after clamping
        assert!(tape.scalar_value(loss).abs() < 1e-10);
    }

    #[test]
    fn classification_loss_hand_case() {
        let (mut tape, p) = column_tape(&[0.9, 0.2]);
        let loss = classification_loss(&mut tape, p, &[1, 0], &[true, true]).unwrap();
        let want = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((tape.scalar_value(loss) - want).abs() < 1e-12);
        assert!((want - 0.1643).abs() < 1e-4);
    }

    #[test]
    fn classification_loss_requires_nonempty_mask() {
        let (mut tape, p) = column_tape(&[0.5]);
        assert!(classification_loss(&mut tape, p, &[1], &[false]).is_err());
    }

    #[test]
    fn ldam_margins_require_both_classes() {
        assert!(LdamMargins::from_counts(0, 5, 0.5).is_err());
        assert!(LdamMargins::from_counts(5, 0, 0.5).is_err());
        let m = LdamMargins::from_counts(16, 1, 1.0).unwrap();
        assert_eq!(m.delta0, 0.5);
        assert_eq!(m.delta1, 1.0);
    }

    #[test]
    fn ldam_margin_symmetry_under_count_swap() {
        let a = LdamMargins::from_counts(1, 16, 0.7).unwrap();
        let b = LdamMargins::from_counts(16, 1, 0.7).unwrap();
        assert_eq!(a.delta0, b.delta1);
        assert_eq!(a.delta1, b.delta0);
    }

    #[test]
    fn imputation_loss_uniform_logits_zero_margin_is_ln2() {
        let mut tape = Tape::new();
        let logits = tape.constant(&Matrix::from_vec(2, 2, vec![0.0, 0.0, 0.0, 0.0]).unwrap());
        let margins = LdamMargins::from_counts(1, 1, 0.0).unwrap();
        let loss = imputation_loss(
            &mut tape,
            logits,
            &[0, 1],
            &[true, true],
            &margins,
            ImputationLossKind::Ldam,
        )
        .unwrap();
        assert!((tape.scalar_value(loss) - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn imputation_loss_hand_margin_case() {
        // logits (1,0), true class 0, n0=16, n1=1, C=1: margin 0.5,
        // loss = ln(1 + e^{-0.5})
        let mut tape = Tape::new();
        let logits = tape.constant(&Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap());
        let margins = LdamMargins::from_counts(16, 1, 1.0).unwrap();
        let loss = imputation_loss(
            &mut tape,
            logits,
            &[0],
            &[true],
            &margins,
            ImputationLossKind::Ldam,
        )
        .unwrap();
        let want = (1.0 + (-0.5f64).exp()).ln();
        assert!((tape.scalar_value(loss) - want).abs() < 1e-12);
        assert!((want - 0.4741).abs() < 1e-4);
    }

    #[test]
    fn zero_margin_ldam_equals_softmax_ce() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(31, crate::rng::Stream::Mcar);
        for _ in 0..50 {
            let k = rng.random_range(1..6);
            let logits: Vec<f64> = (0..k * 2).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let targets: Vec<u8> = (0..k).map(|_| u8::from(rng.random::<bool>())).collect();
            let mask = vec![true; k];

            let mut tape = Tape::new();
            let z = tape.constant(&Matrix::from_vec(k, 2, logits.clone()).unwrap());
            let margins = LdamMargins::from_counts(7, 3, 0.0).unwrap();
            let loss =
                imputation_loss(&mut tape, z, &targets, &mask, &margins, ImputationLossKind::Ldam)
                    .unwrap();

            // independent softmax cross-entropy
            let mut want = 0.0;
            for i in 0..k {
                let (z0, z1) = (logits[i * 2], logits[i * 2 + 1]);
                let m = z0.max(z1);
                let denom = (z0 - m).exp() + (z1 - m).exp();
                let zt = if targets[i] == 0 { z0 } else { z1 };
                want += -((zt - m).exp() / denom).ln();
            }
            want /= k as f64;
            assert!((tape.scalar_value(loss) - want).abs() < 1e-12);
        }
    }

    fn graph_with_observed(observed: Vec<bool>, sensitive: Vec<u8>) -> Graph {
        let n = observed.len();
        Graph::new(
            n,
            vec![],
            Matrix::zeros(n, 1),
            vec![0; n],
            sensitive,
            observed,
            vec![false; n],
            vec![false; n],
            vec![false; n],
        )
        .unwrap()
    }

    #[test]
    fn merge_full_observation_returns_ground_truth() {
        let g = graph_with_observed(vec![true; 4], vec![1, 0, 1, 1]);
        let mut tape = Tape::new();
        let si = tape.constant_column(&[0.3, 0.9, 0.2, 0.6]);
        let merged = merge_sensitive(&mut tape, si, &g, MergeMode::Observed).unwrap();
        assert_eq!(tape.value(merged.id), &[1.0, 0.0, 1.0, 1.0]);
        assert!(merged.source.iter().all(|&s| s == SensitiveSource::Observed));
    }

    #[test]
    fn merge_label_proxy_passes_imputations_through() {
        let g = graph_with_observed(vec![false; 3], vec![0, 0, 0]);
        let mut tape = Tape::new();
        let si = tape.constant_column(&[0.3, 0.9, 0.2]);
        let merged = merge_sensitive(&mut tape, si, &g, MergeMode::LabelProxy).unwrap();
        assert_eq!(tape.value(merged.id), &[0.3, 0.9, 0.2]);
        assert!(merge_sensitive(&mut tape, si, &g, MergeMode::Observed).is_err());
    }

    #[test]
    fn merge_half_observed_counts() {
        let g = graph_with_observed(vec![true, false, true, false], vec![1, 1, 0, 0]);
        let mut tape = Tape::new();
        let si = tape.constant_column(&[0.25, 0.75, 0.6, 0.1]);
        let merged = merge_sensitive(&mut tape, si, &g, MergeMode::Observed).unwrap();
        let vals = tape.value(merged.id);
        let mut exact_matches = 0;
        let mut imputed_matches = 0;
        for v in 0..4 {
            if g.observed_mask()[v] {
                assert_eq!(vals[v], g.sensitive()[v] as f64);
                exact_matches += 1;
            } else {
                assert_eq!(vals[v], tape.value(si)[v]);
                imputed_matches += 1;
            }
        }
        assert_eq!((exact_matches, imputed_matches), (2, 2));
    }

    #[test]
    fn adversary_loss_uninformative_is_two_ln_half() {
        let mut tape = Tape::new();
        let sa = tape.constant_column(&[0.5, 0.5, 0.5, 0.5]);
        let merged = tape.constant_column(&[1.0, 0.0, 1.0, 0.0]);
        let loss = adversary_loss(&mut tape, sa, merged, &[true; 4]).unwrap();
        assert!((tape.scalar_value(loss) - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn adversary_loss_hand_case() {
        let mut tape = Tape::new();
        let sa = tape.constant_column(&[0.8, 0.3]);
        let merged = tape.constant_column(&[1.0, 0.0]);
        let loss = adversary_loss(&mut tape, sa, merged, &[true, true]).unwrap();
        let want = 0.8f64.ln() + 0.7f64.ln();
        assert!((tape.scalar_value(loss) - want).abs() < 1e-12);
        assert!((want + 0.5798).abs() < 1e-4);
    }

    #[test]
    fn adversary_loss_perfect_adversary_near_zero() {
        let mut tape = Tape::new();
        let sa = tape.constant_column(&[1.0 - 1e-13, 1e-13]);
        let merged = tape.constant_column(&[1.0, 0.0]);
        let loss = adversary_loss(&mut tape, sa, merged, &[true, true]).unwrap();
        let v = tape.scalar_value(loss);
        assert!(v <= 0.0 && v > -1e-10, "{v}");
    }

    #[test]
    fn adversary_loss_rejects_empty_group() {
        let mut tape = Tape::new();
        let sa = tape.constant_column(&[0.5, 0.5]);
        let merged = tape.constant_column(&[1.0, 1.0]);
        assert!(adversary_loss(&mut tape, sa, merged, &[true, true]).is_err());
    }

    #[test]
    fn adversary_loss_group_normalization_ignores_group_scale() {
        // duplicate group-0 membership 3x with identical composition: the
        // per-group means are unchanged
        let mut tape = Tape::new();
        let sa_small = tape.constant_column(&[0.9, 0.4, 0.2]);
        let m_small = tape.constant_column(&[1.0, 0.0, 0.0]);
        let small = adversary_loss(&mut tape, sa_small, m_small, &[true; 3]).unwrap();

        let sa_big = tape.constant_column(&[0.9, 0.4, 0.2, 0.4, 0.2, 0.4, 0.2]);
        let m_big = tape.constant_column(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let big = adversary_loss(&mut tape, sa_big, m_big, &[true; 7]).unwrap();
        assert!((tape.scalar_value(small) - tape.scalar_value(big)).abs() < 1e-12);
    }

    #[test]
    fn adversary_loss_is_node_permutation_invariant() {
        let sa = [0.9, 0.4, 0.2, 0.7];
        let me = [1.0, 0.0, 0.0, 1.0];
        let perm = [2usize, 0, 3, 1];
        let mut tape = Tape::new();
        let a = tape.constant_column(&sa);
        let m = tape.constant_column(&me);
        let base = adversary_loss(&mut tape, a, m, &[true; 4]).unwrap();
        let sa_p: Vec<f64> = perm.iter().map(|&i| sa[i]).collect();
        let me_p: Vec<f64> = perm.iter().map(|&i| me[i]).collect();
        let ap = tape.constant_column(&sa_p);
        let mp = tape.constant_column(&me_p);
        let permuted = adversary_loss(&mut tape, ap, mp, &[true; 4]).unwrap();
        assert!((tape.scalar_value(base) - tape.scalar_value(permuted)).abs() < 1e-12);
    }
}

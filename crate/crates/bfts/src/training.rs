//! Training loops: the 3-player adversarial scheme and the baseline
//! trainers, with best-validation model selection and per-seed
//! determinism.
//!
//! Per epoch the 3-player loop performs, in order: one descent step on the
//! imputer (imputation loss minus beta times the adversary objective, the
//! other players frozen), one ascent step on the adversary, and one
//! descent step on the classifier (classification loss plus alpha times
//! the adversary objective). Dropout masks are a pure function of
//! (seed, player, epoch), so a player's trajectory does not depend on
//! which other players run.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamState, Matrix, Tape, TensorId};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::{
    adversary_loss, classification_loss, imputation_loss, merge_sensitive, merged_hard,
    ImputationLossKind, LdamMargins, MergeMode,
};
use crate::metrics::avpr;
use crate::models::{
    forward_adversary, forward_classifier, forward_imputer, gcn_fingerprint, init_params,
    mlp_fingerprint, stage_gcn, stage_mlp, stage_propagation, ClassifierOut, ForwardMode, GcnIds,
    GcnNetwork, MlpAdversary, MlpIds, ModelShapes, PlayerParams, PropIds, Propagation,
};
use crate::rng::{stream_rng, Player, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Bfts,
    Vanilla,
    TwoPlayer,
    #[serde(alias = "indep")]
    IndependentImputation,
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Bfts => "bfts",
            TrainMode::Vanilla => "vanilla",
            TrainMode::TwoPlayer => "two-player",
            TrainMode::IndependentImputation => "independent-imputation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitiveMode {
    /// Merge ground truth over the observed set with imputations
    /// elsewhere.
    Observed,
    /// No sensitive information: the imputer trains against the class
    /// labels over the training set and supplies every merged value.
    LabelProxy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Weight of the adversary objective in the classifier step.
    pub alpha: f64,
    /// Weight of the adversary objective in the imputer step.
    pub beta: f64,
    pub ldam_c: f64,
    pub imputation_loss: ImputationLossKind,
    pub lr_classifier: f64,
    pub lr_imputer: f64,
    pub lr_adversary: f64,
    pub epochs: usize,
    pub seed: u64,
    /// L2 penalty coefficient on the two graph networks' weight matrices
    /// (biases and the adversary are not decayed).
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub sensitive_mode: SensitiveMode,
    pub classifier_hidden: usize,
    pub imputer_hidden: usize,
    pub adversary_hidden: usize,
    pub dropout: f64,
    /// When set, the adversary step re-evaluates its objective after the
    /// update on frozen inputs and records the change.
    #[serde(default)]
    pub record_adversary_ascent: bool,
}

fn default_weight_decay() -> f64 {
    0.05
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Bfts,
            alpha: 1.0,
            beta: 1.0,
            ldam_c: 0.5,
            imputation_loss: ImputationLossKind::Ldam,
            lr_classifier: 1e-3,
            lr_imputer: 1e-3,
            lr_adversary: 1e-3,
            epochs: 1000,
            seed: 0,
            weight_decay: default_weight_decay(),
            sensitive_mode: SensitiveMode::Observed,
            classifier_hidden: 64,
            imputer_hidden: 64,
            adversary_hidden: 32,
            dropout: 0.5,
            record_adversary_ascent: false,
        }
    }
}

impl TrainConfig {
    pub fn shapes(&self, g: &Graph) -> ModelShapes {
        ModelShapes {
            n_features: g.features().cols(),
            classifier_hidden: self.classifier_hidden,
            imputer_hidden: self.imputer_hidden,
            adversary_hidden: self.adversary_hidden,
            dropout_rate: self.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub loss_c: f64,
    pub loss_i: Option<f64>,
    pub loss_a: Option<f64>,
    pub val_avpr: Option<f64>,
    /// True when a degenerate adversary group made this epoch skip its
    /// adversarial terms.
    pub adversarial_skipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlayerFingerprints {
    pub classifier: u64,
    pub imputer: u64,
    pub adversary: u64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch index whose parameters were selected (best validation
    /// average precision; last epoch when validation is unusable).
    pub selected_epoch: usize,
    /// Parameters at the selected epoch.
    pub params: PlayerParams,
    /// Parameters after the final epoch.
    pub final_params: PlayerParams,
    /// Per-epoch parameter fingerprints, recorded after each epoch's
    /// updates.
    pub fingerprints: Vec<PlayerFingerprints>,
    /// Post-step minus pre-step adversary objective per epoch, when
    /// `record_adversary_ascent` is on.
    pub adversary_ascent_deltas: Vec<f64>,
    /// Held-out imputation accuracy of stage 1 (two-stage trainer only).
    pub imputer_holdout_accuracy: Option<f64>,
    pub warnings: Vec<String>,
    pub wall_time: Duration,
}

/// Evaluation-mode outputs with hard 0.5 thresholds.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub yhat_soft: Vec<f64>,
    pub yhat_hard: Vec<u8>,
    pub si_soft: Vec<f64>,
    pub si_hard: Vec<u8>,
    pub embeddings: Matrix,
}

// ---- optimizer state ----------------------------------------------------

struct GcnOpt {
    w1: AdamState,
    b1: AdamState,
    w2: AdamState,
    b2: AdamState,
}

impl GcnOpt {
    fn new(net: &GcnNetwork) -> Self {
        GcnOpt {
            w1: AdamState::new(net.w1.len()),
            b1: AdamState::new(net.b1.len()),
            w2: AdamState::new(net.w2.len()),
            b2: AdamState::new(net.b2.len()),
        }
    }
}

struct MlpOpt {
    w1: AdamState,
    b1: AdamState,
    w2: AdamState,
    b2: AdamState,
}

impl MlpOpt {
    fn new(net: &MlpAdversary) -> Self {
        MlpOpt {
            w1: AdamState::new(net.w1.len()),
            b1: AdamState::new(net.b1.len()),
            w2: AdamState::new(net.w2.len()),
            b2: AdamState::new(net.b2.len()),
        }
    }
}

struct PlayerOpt {
    classifier: GcnOpt,
    imputer: GcnOpt,
    adversary: MlpOpt,
}

impl PlayerOpt {
    fn new(params: &PlayerParams) -> Self {
        PlayerOpt {
            classifier: GcnOpt::new(&params.classifier),
            imputer: GcnOpt::new(&params.imputer),
            adversary: MlpOpt::new(&params.adversary),
        }
    }
}

fn grad_of(tape: &Tape, id: TensorId) -> Result<Vec<f64>> {
    tape.grad(id)
        .map(<[f64]>::to_vec)
        .ok_or_else(|| Error::Degenerate("missing gradient on a trainable parameter".into()))
}

fn decayed(mut grad: Vec<f64>, params: &Matrix, weight_decay: f64) -> Vec<f64> {
    if weight_decay > 0.0 {
        for (g, &p) in grad.iter_mut().zip(params.data()) {
            *g += weight_decay * p;
        }
    }
    grad
}

fn gcn_adam(
    net: &mut GcnNetwork,
    ids: &GcnIds,
    tape: &Tape,
    opt: &mut GcnOpt,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let gw1 = decayed(grad_of(tape, ids.w1)?, &net.w1, weight_decay);
    adam_step(&mut net.w1, &gw1, &mut opt.w1, lr)?;
    adam_step(&mut net.b1, &grad_of(tape, ids.b1)?, &mut opt.b1, lr)?;
    let gw2 = decayed(grad_of(tape, ids.w2)?, &net.w2, weight_decay);
    adam_step(&mut net.w2, &gw2, &mut opt.w2, lr)?;
    adam_step(&mut net.b2, &grad_of(tape, ids.b2)?, &mut opt.b2, lr)
}

fn mlp_adam(net: &mut MlpAdversary, ids: &MlpIds, tape: &Tape, opt: &mut MlpOpt, lr: f64) -> Result<()> {
    adam_step(&mut net.w1, &grad_of(tape, ids.w1)?, &mut opt.w1, lr)?;
    adam_step(&mut net.b1, &grad_of(tape, ids.b1)?, &mut opt.b1, lr)?;
    adam_step(&mut net.w2, &grad_of(tape, ids.w2)?, &mut opt.w2, lr)?;
    adam_step(&mut net.b2, &grad_of(tape, ids.b2)?, &mut opt.b2, lr)
}

// ---- shared staging -------------------------------------------------------

/// Where the merged sensitive values for the adversary objective come
/// from.
enum SensitiveValues {
    /// Forward the imputer and merge with observations.
    FromImputer,
    /// Fixed per-node values (two-player baseline, frozen imputations).
    Constant(Vec<f64>),
}

struct TrainCtx<'a> {
    g: &'a Graph,
    cfg: &'a TrainConfig,
    prop: Propagation,
    /// Rows entering the adversary objective.
    adv_mask: Vec<bool>,
    /// Rows entering the imputation loss.
    pool_mask: Vec<bool>,
    /// Imputation targets (sensitive values, or labels in proxy mode).
    pool_targets: Vec<u8>,
    margins: LdamMargins,
    merge_mode: MergeMode,
    sensitive_values: SensitiveValues,
}

impl TrainCtx<'_> {
    fn dropout_rng(&self, player: Player, epoch: usize) -> rand_chacha::ChaCha8Rng {
        stream_rng(
            self.cfg.seed,
            Stream::Dropout {
                player,
                epoch: epoch as u64,
            },
        )
    }
}

fn margins_for_pool(
    targets: &[u8],
    pool: &[bool],
    c: f64,
    kind: ImputationLossKind,
) -> Result<LdamMargins> {
    let mut n = [0usize; 2];
    for (i, &in_pool) in pool.iter().enumerate() {
        if in_pool {
            n[targets[i] as usize] += 1;
        }
    }
    match kind {
        ImputationLossKind::Ldam => LdamMargins::from_counts(n[0], n[1], c),
        // plain cross-entropy never reads the margins; keep them defined
        ImputationLossKind::Ce => LdamMargins::from_counts(n[0].max(1), n[1].max(1), 0.0),
    }
}

/// The feature matrix handed to the players must not embed the sensitive
/// column verbatim.
pub fn assert_features_exclude_sensitive(g: &Graph) -> Result<()> {
    let x = g.features();
    'cols: for c in 0..x.cols() {
        for r in 0..x.rows() {
            if x.get(r, c) != g.sensitive()[r] as f64 {
                continue 'cols;
            }
        }
        return Err(Error::InvalidGraph(format!(
            "feature column {c} equals the sensitive attribute"
        )));
    }
    Ok(())
}

fn build_ctx<'a>(g: &'a Graph, cfg: &'a TrainConfig) -> Result<TrainCtx<'a>> {
    assert_features_exclude_sensitive(g)?;
    if !g.train_mask().iter().any(|&m| m) {
        return Err(Error::Degenerate("no labeled training nodes".into()));
    }
    let n = g.n_nodes();
    let (pool_mask, pool_targets, merge_mode) = match cfg.sensitive_mode {
        SensitiveMode::Observed => {
            if g.n_observed() == 0 {
                return Err(Error::Degenerate(
                    "observed sensitive mode with an empty observed set; use label-proxy".into(),
                ));
            }
            (
                g.observed_mask().to_vec(),
                g.sensitive().to_vec(),
                MergeMode::Observed,
            )
        }
        SensitiveMode::LabelProxy => (
            g.train_mask().to_vec(),
            g.labels().to_vec(),
            MergeMode::LabelProxy,
        ),
    };
    let (adv_mask, sensitive_values) = match cfg.mode {
        // the baseline adversary only sees nodes with observed values
        TrainMode::TwoPlayer => (
            g.observed_mask().to_vec(),
            SensitiveValues::Constant(g.sensitive().iter().map(|&s| s as f64).collect()),
        ),
        _ => (vec![true; n], SensitiveValues::FromImputer),
    };
    let margins = margins_for_pool(&pool_targets, &pool_mask, cfg.ldam_c, cfg.imputation_loss)?;
    Ok(TrainCtx {
        g,
        cfg,
        prop: Propagation::from_graph(g)?,
        adv_mask,
        pool_mask,
        pool_targets,
        margins,
        merge_mode,
        sensitive_values,
    })
}

/// Stage the merged sensitive values on a tape. Returns the imputer ids
/// when the imputer participates (so its step can read gradients).
fn stage_merged(
    tape: &mut Tape,
    ctx: &TrainCtx,
    params: &PlayerParams,
    pids: &PropIds,
    trainable_imputer: bool,
    epoch: usize,
) -> Result<(Option<(GcnIds, TensorId)>, TensorId)> {
    match &ctx.sensitive_values {
        SensitiveValues::Constant(values) => Ok((None, tape.constant_column(values))),
        SensitiveValues::FromImputer => {
            let fi = stage_gcn(tape, &params.imputer, trainable_imputer);
            let mut rng = ctx.dropout_rng(Player::Imputer, epoch);
            let out = forward_imputer(
                tape,
                &fi,
                pids,
                ForwardMode::Train {
                    rng: &mut rng,
                    dropout_rate: params.imputer.dropout_rate,
                },
            )?;
            let merged = merge_sensitive(tape, out.si_hat, ctx.g, ctx.merge_mode)?;
            Ok((Some((fi, out.logits)), merged.id))
        }
    }
}

fn stage_classifier(
    tape: &mut Tape,
    ctx: &TrainCtx,
    params: &PlayerParams,
    pids: &PropIds,
    trainable: bool,
    epoch: usize,
) -> Result<(GcnIds, ClassifierOut)> {
    let fc = stage_gcn(tape, &params.classifier, trainable);
    let mut rng = ctx.dropout_rng(Player::Classifier, epoch);
    let out = forward_classifier(
        tape,
        &fc,
        pids,
        ForwardMode::Train {
            rng: &mut rng,
            dropout_rate: params.classifier.dropout_rate,
        },
    )?;
    Ok((fc, out))
}

/// Outcome of one player step whose adversarial term may have been
/// skipped.
struct StepOutcome {
    primary_loss: f64,
    skipped: bool,
}

/// Descent on the imputer: L_I - beta * L_A with the other players
/// frozen. Only valid when the imputer participates.
fn imputer_step(
    ctx: &TrainCtx,
    params: &mut PlayerParams,
    opt: &mut PlayerOpt,
    epoch: usize,
    beta: f64,
) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let pids = stage_propagation(&mut tape, &ctx.prop);
    let (imputer, merged) = stage_merged(&mut tape, ctx, params, &pids, true, epoch)?;
    let (fi, logits) = imputer.expect("imputer step without an imputer");
    let l_i = imputation_loss(
        &mut tape,
        logits,
        &ctx.pool_targets,
        &ctx.pool_mask,
        &ctx.margins,
        ctx.cfg.imputation_loss,
    )?;
    let mut loss = l_i;
    let mut skipped = false;
    if beta != 0.0 {
        let (_, cls) = stage_classifier(&mut tape, ctx, params, &pids, false, epoch)?;
        let fa = stage_mlp(&mut tape, &params.adversary, false);
        let sa = forward_adversary(&mut tape, &fa, cls.h)?;
        match adversary_loss(&mut tape, sa, merged, &ctx.adv_mask) {
            Ok(l_a) => {
                let scaled = tape.scale(l_a, -beta)?;
                loss = tape.add(l_i, scaled)?;
            }
            Err(Error::Degenerate(_)) => skipped = true,
            Err(e) => return Err(e),
        }
    }
    tape.backward(loss)?;
    gcn_adam(
        &mut params.imputer,
        &fi,
        &tape,
        &mut opt.imputer,
        ctx.cfg.lr_imputer,
        ctx.cfg.weight_decay,
    )?;
    Ok(StepOutcome {
        primary_loss: tape.scalar_value(l_i),
        skipped,
    })
}

/// Ascent on the adversary objective; everything else frozen. Returns
/// (objective before the step, post-step change when requested, skipped).
fn adversary_step(
    ctx: &TrainCtx,
    params: &mut PlayerParams,
    opt: &mut PlayerOpt,
    epoch: usize,
) -> Result<(Option<f64>, Option<f64>, bool)> {
    let mut tape = Tape::new();
    let pids = stage_propagation(&mut tape, &ctx.prop);
    let (_, merged) = stage_merged(&mut tape, ctx, params, &pids, false, epoch)?;
    let (_, cls) = stage_classifier(&mut tape, ctx, params, &pids, false, epoch)?;
    let fa = stage_mlp(&mut tape, &params.adversary, true);
    let sa = forward_adversary(&mut tape, &fa, cls.h)?;
    let l_a = match adversary_loss(&mut tape, sa, merged, &ctx.adv_mask) {
        Ok(l_a) => l_a,
        Err(Error::Degenerate(_)) => return Ok((None, None, true)),
        Err(e) => return Err(e),
    };
    let before = tape.scalar_value(l_a);
    // maximize: descend the negated objective
    let negated = tape.scale(l_a, -1.0)?;
    tape.backward(negated)?;
    mlp_adam(&mut params.adversary, &fa, &tape, &mut opt.adversary, ctx.cfg.lr_adversary)?;

    let delta = if ctx.cfg.record_adversary_ascent {
        tape.set_leaf(fa.w1, params.adversary.w1.data())?;
        tape.set_leaf(fa.b1, params.adversary.b1.data())?;
        tape.set_leaf(fa.w2, params.adversary.w2.data())?;
        tape.set_leaf(fa.b2, params.adversary.b2.data())?;
        tape.recompute_forward();
        Some(tape.scalar_value(l_a) - before)
    } else {
        None
    };
    Ok((Some(before), delta, false))
}

/// Descent on the classifier: L_C + alpha * L_A with the other players
/// frozen. With alpha = 0 the adversarial branch is not even staged, so
/// the classifier's computation is identical to the plain trainer's.
fn classifier_step(
    ctx: &TrainCtx,
    params: &mut PlayerParams,
    opt: &mut PlayerOpt,
    epoch: usize,
    alpha: f64,
) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let pids = stage_propagation(&mut tape, &ctx.prop);
    let (fc, cls) = stage_classifier(&mut tape, ctx, params, &pids, true, epoch)?;
    let l_c = classification_loss(&mut tape, cls.yhat, ctx.g.labels(), ctx.g.train_mask())?;
    let mut loss = l_c;
    let mut skipped = false;
    if alpha != 0.0 {
        let (_, merged) = stage_merged(&mut tape, ctx, params, &pids, false, epoch)?;
        let fa = stage_mlp(&mut tape, &params.adversary, false);
        let sa = forward_adversary(&mut tape, &fa, cls.h)?;
        match adversary_loss(&mut tape, sa, merged, &ctx.adv_mask) {
            Ok(l_a) => {
                let scaled = tape.scale(l_a, alpha)?;
                loss = tape.add(l_c, scaled)?;
            }
            Err(Error::Degenerate(_)) => skipped = true,
            Err(e) => return Err(e),
        }
    }
    tape.backward(loss)?;
    gcn_adam(
        &mut params.classifier,
        &fc,
        &tape,
        &mut opt.classifier,
        ctx.cfg.lr_classifier,
        ctx.cfg.weight_decay,
    )?;
    Ok(StepOutcome {
        primary_loss: tape.scalar_value(l_c),
        skipped,
    })
}

/// Deterministic evaluation-mode classifier forward.
fn eval_classifier(prop: &Propagation, net: &GcnNetwork) -> Result<(Vec<f64>, Matrix)> {
    let mut tape = Tape::new();
    let pids = stage_propagation(&mut tape, prop);
    let fc = stage_gcn(&mut tape, net, false);
    let out = forward_classifier(&mut tape, &fc, &pids, ForwardMode::Eval)?;
    let (rows, cols) = tape.shape(out.h);
    let h = Matrix::from_vec(rows, cols, tape.value(out.h).to_vec())?;
    Ok((tape.value(out.yhat).to_vec(), h))
}

fn eval_imputer(prop: &Propagation, net: &GcnNetwork) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let pids = stage_propagation(&mut tape, prop);
    let fi = stage_gcn(&mut tape, net, false);
    let out = forward_imputer(&mut tape, &fi, &pids, ForwardMode::Eval)?;
    Ok(tape.value(out.si_hat).to_vec())
}

/// Evaluation-mode forwards of both networks with hard 0.5 thresholds.
pub fn predict(params: &PlayerParams, g: &Graph) -> Result<Prediction> {
    let prop = Propagation::from_graph(g)?;
    let (yhat_soft, embeddings) = eval_classifier(&prop, &params.classifier)?;
    let si_soft = eval_imputer(&prop, &params.imputer)?;
    Ok(Prediction {
        yhat_hard: yhat_soft.iter().map(|&p| u8::from(p >= 0.5)).collect(),
        si_hard: si_soft.iter().map(|&p| u8::from(p >= 0.5)).collect(),
        yhat_soft,
        si_soft,
        embeddings,
    })
}

/// Hard merged sensitive values of a parameter set: ground truth where
/// observed, thresholded imputations elsewhere.
pub fn predicted_merged_hard(params: &PlayerParams, g: &Graph) -> Result<Vec<u8>> {
    let prop = Propagation::from_graph(g)?;
    let si = eval_imputer(&prop, &params.imputer)?;
    Ok(merged_hard(g, &si))
}

// ---- run bookkeeping ------------------------------------------------------

struct RunState {
    params: PlayerParams,
    opt: PlayerOpt,
    records: Vec<EpochRecord>,
    fingerprints: Vec<PlayerFingerprints>,
    ascent_deltas: Vec<f64>,
    best: Option<(f64, usize, PlayerParams)>,
    warnings: Vec<String>,
    skipped_epochs: usize,
}

impl RunState {
    fn new(params: PlayerParams) -> Self {
        let opt = PlayerOpt::new(&params);
        RunState {
            params,
            opt,
            records: Vec::new(),
            fingerprints: Vec::new(),
            ascent_deltas: Vec::new(),
            best: None,
            warnings: Vec::new(),
            skipped_epochs: 0,
        }
    }

    fn finish_epoch(&mut self, ctx: &TrainCtx, record: EpochRecord) -> Result<()> {
        let (yhat, _) = eval_classifier(&ctx.prop, &self.params.classifier)?;
        let val_avpr = avpr(&yhat, ctx.g.labels(), ctx.g.val_mask()).ok();
        let epoch_idx = self.records.len();
        if let Some(v) = val_avpr {
            // ties keep the latest epoch: saturated validation scores on
            // small graphs should not pin selection to epoch zero
            if self.best.as_ref().map_or(true, |(b, _, _)| v >= *b) {
                self.best = Some((v, epoch_idx, self.params.clone()));
            }
        }
        if record.adversarial_skipped {
            self.skipped_epochs += 1;
        }
        self.records.push(EpochRecord { val_avpr, ..record });
        self.fingerprints.push(PlayerFingerprints {
            classifier: gcn_fingerprint(&self.params.classifier),
            imputer: gcn_fingerprint(&self.params.imputer),
            adversary: mlp_fingerprint(&self.params.adversary),
        });
        Ok(())
    }

    fn into_report(mut self, started: Instant, holdout: Option<f64>) -> TrainReport {
        if self.skipped_epochs > 0 {
            self.warnings.push(format!(
                "adversarial terms skipped in {} epochs (degenerate merged groups)",
                self.skipped_epochs
            ));
        }
        let (selected_epoch, params) = match self.best {
            Some((_, e, p)) => (e, p),
            None => {
                self.warnings.push(
                    "validation average precision unavailable; selected the final epoch".into(),
                );
                (self.records.len().saturating_sub(1), self.params.clone())
            }
        };
        TrainReport {
            epochs: self.records,
            selected_epoch,
            params,
            final_params: self.params,
            fingerprints: self.fingerprints,
            adversary_ascent_deltas: self.ascent_deltas,
            imputer_holdout_accuracy: holdout,
            warnings: self.warnings,
            wall_time: started.elapsed(),
        }
    }
}

// ---- trainers ---------------------------------------------------------------

/// Train under `cfg.mode`. The report carries both the selected (best
/// validation average precision) and final parameters.
pub fn train(g: &Graph, cfg: &TrainConfig) -> Result<TrainReport> {
    match cfg.mode {
        TrainMode::Bfts => train_bfts(g, cfg),
        TrainMode::Vanilla => train_vanilla(g, cfg),
        TrainMode::TwoPlayer => train_two_player(g, cfg),
        TrainMode::IndependentImputation => train_independent_imputation(g, cfg),
    }
}

pub fn train_bfts(g: &Graph, cfg: &TrainConfig) -> Result<TrainReport> {
    let started = Instant::now();
    let ctx = build_ctx(g, cfg)?;
    let mut state = RunState::new(init_params(&cfg.shapes(g), cfg.seed));
    for epoch in 0..cfg.epochs {
        let imp = imputer_step(&ctx, &mut state.params, &mut state.opt, epoch, cfg.beta)?;
        let (adv_value, ascent_delta, adv_skipped) =
            adversary_step(&ctx, &mut state.params, &mut state.opt, epoch)?;
        if let Some(d) = ascent_delta {
            state.ascent_deltas.push(d);
        }
        let cls = classifier_step(&ctx, &mut state.params, &mut state.opt, epoch, cfg.alpha)?;
        state.finish_epoch(
            &ctx,
            EpochRecord {
                loss_c: cls.primary_loss,
                loss_i: Some(imp.primary_loss),
                loss_a: adv_value,
                val_avpr: None,
                adversarial_skipped: imp.skipped || adv_skipped || cls.skipped,
            },
        )?;
    }
    Ok(state.into_report(started, None))
}

pub fn train_vanilla(g: &Graph, cfg: &TrainConfig) -> Result<TrainReport> {
    let started = Instant::now();
    let ctx = build_ctx(g, cfg)?;
    let mut state = RunState::new(init_params(&cfg.shapes(g), cfg.seed));
    for epoch in 0..cfg.epochs {
        let cls = classifier_step(&ctx, &mut state.params, &mut state.opt, epoch, 0.0)?;
        state.finish_epoch(
            &ctx,
            EpochRecord {
                loss_c: cls.primary_loss,
                loss_i: None,
                loss_a: None,
                val_avpr: None,
                adversarial_skipped: false,
            },
        )?;
    }
    Ok(state.into_report(started, None))
}

pub fn train_two_player(g: &Graph, cfg: &TrainConfig) -> Result<TrainReport> {
    let started = Instant::now();
    let ctx = build_ctx(g, cfg)?;
    let mut state = RunState::new(init_params(&cfg.shapes(g), cfg.seed));
    for epoch in 0..cfg.epochs {
        let (adv_value, ascent_delta, adv_skipped) =
            adversary_step(&ctx, &mut state.params, &mut state.opt, epoch)?;
        if let Some(d) = ascent_delta {
            state.ascent_deltas.push(d);
        }
        // a degenerate adversary group drops the whole adversarial term
        let alpha = if adv_skipped { 0.0 } else { cfg.alpha };
        let cls = classifier_step(&ctx, &mut state.params, &mut state.opt, epoch, alpha)?;
        state.finish_epoch(
            &ctx,
            EpochRecord {
                loss_c: cls.primary_loss,
                loss_i: None,
                loss_a: adv_value,
                val_avpr: None,
                adversarial_skipped: adv_skipped || cls.skipped,
            },
        )?;
    }
    Ok(state.into_report(started, None))
}

/// Two-stage pipeline: train the imputer alone with cross-entropy on the
/// observed pool, freeze it, hard-threshold its outputs into fixed
/// imputations, then run the two-player game against those values over
/// all nodes.
pub fn train_independent_imputation(g: &Graph, cfg: &TrainConfig) -> Result<TrainReport> {
    let started = Instant::now();
    if g.n_observed() == 0 {
        return Err(Error::Degenerate(
            "independent imputation requires observed sensitive values".into(),
        ));
    }

    // hold out part of the observed pool to report stage-1 accuracy
    let observed: Vec<usize> = (0..g.n_nodes()).filter(|&v| g.observed_mask()[v]).collect();
    let mut shuffled = observed;
    {
        use rand::seq::SliceRandom;
        let mut rng = stream_rng(cfg.seed, Stream::Holdout);
        shuffled.shuffle(&mut rng);
    }
    let n_holdout = if shuffled.len() >= 5 { shuffled.len() / 5 } else { 0 };
    let holdout: Vec<usize> = shuffled[..n_holdout].to_vec();
    let mut stage1_pool = vec![false; g.n_nodes()];
    for &v in &shuffled[n_holdout..] {
        stage1_pool[v] = true;
    }

    let stage1_cfg = TrainConfig {
        imputation_loss: ImputationLossKind::Ce,
        sensitive_mode: SensitiveMode::Observed,
        ..cfg.clone()
    };
    let mut ctx = build_ctx(g, &stage1_cfg)?;
    ctx.margins = margins_for_pool(g.sensitive(), &stage1_pool, 0.0, ImputationLossKind::Ce)?;
    ctx.pool_mask = stage1_pool;
    ctx.pool_targets = g.sensitive().to_vec();

    let mut params = init_params(&cfg.shapes(g), cfg.seed);
    let mut opt = PlayerOpt::new(&params);
    // the imputer that maximizes held-out imputation accuracy is the one
    // the pipeline freezes; ties keep the earliest epoch
    let mut best_stage1: Option<(usize, GcnNetwork)> = None;
    for epoch in 0..cfg.epochs {
        imputer_step(&ctx, &mut params, &mut opt, epoch, 0.0)?;
        if !holdout.is_empty() {
            let si = eval_imputer(&ctx.prop, &params.imputer)?;
            let correct = holdout
                .iter()
                .filter(|&&v| u8::from(si[v] >= 0.5) == g.sensitive()[v])
                .count();
            if best_stage1.as_ref().map_or(true, |(b, _)| correct > *b) {
                best_stage1 = Some((correct, params.imputer.clone()));
            }
        }
    }
    let (holdout_accuracy, frozen_imputer) = match best_stage1 {
        Some((correct, net)) => (
            Some(correct as f64 / holdout.len() as f64),
            net,
        ),
        None => (None, params.imputer),
    };
    let si = eval_imputer(&ctx.prop, &frozen_imputer)?;
    let s_prime = merged_hard(g, &si);

    // stage 2: two-player game against the frozen imputations, all nodes
    let mut ctx2 = build_ctx(g, cfg)?;
    ctx2.adv_mask = vec![true; g.n_nodes()];
    ctx2.sensitive_values =
        SensitiveValues::Constant(s_prime.iter().map(|&s| s as f64).collect());

    let mut state = RunState::new(init_params(&cfg.shapes(g), cfg.seed));
    state.params.imputer = frozen_imputer;
    for epoch in 0..cfg.epochs {
        let (adv_value, ascent_delta, adv_skipped) =
            adversary_step(&ctx2, &mut state.params, &mut state.opt, epoch)?;
        if let Some(d) = ascent_delta {
            state.ascent_deltas.push(d);
        }
        let alpha = if adv_skipped { 0.0 } else { cfg.alpha };
        let cls = classifier_step(&ctx2, &mut state.params, &mut state.opt, epoch, alpha)?;
        state.finish_epoch(
            &ctx2,
            EpochRecord {
                loss_c: cls.primary_loss,
                loss_i: None,
                loss_a: adv_value,
                val_avpr: None,
                adversarial_skipped: adv_skipped || cls.skipped,
            },
        )?;
    }
    Ok(state.into_report(started, holdout_accuracy))
}

/// Worst-case-direction probe: pretrain the classifier alone, then the
/// adversary alone, freeze both, and run imputer-only steps. Returns the
/// demographic parity gap between the frozen hard predictions and the
/// evolving hard merged imputations after each step.
pub fn imputer_only_dp_trace(
    g: &Graph,
    cfg: &TrainConfig,
    warmup_epochs: usize,
    steps: usize,
) -> Result<Vec<f64>> {
    let ctx = build_ctx(g, cfg)?;
    let mut params = init_params(&cfg.shapes(g), cfg.seed);
    let mut opt = PlayerOpt::new(&params);
    for epoch in 0..warmup_epochs {
        classifier_step(&ctx, &mut params, &mut opt, epoch, 0.0)?;
    }
    for epoch in 0..warmup_epochs {
        adversary_step(&ctx, &mut params, &mut opt, epoch)?;
    }
    let (yhat, _) = eval_classifier(&ctx.prop, &params.classifier)?;
    let yhat_hard: Vec<u8> = yhat.iter().map(|&p| u8::from(p >= 0.5)).collect();

    let all = vec![true; g.n_nodes()];
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        imputer_step(&ctx, &mut params, &mut opt, warmup_epochs + step, cfg.beta)?;
        let si = eval_imputer(&ctx.prop, &params.imputer)?;
        let shat = merged_hard(g, &si);
        trace.push(crate::metrics::delta_dp(&yhat_hard, &shat, &all)?);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, SbmConfig};
    use crate::missingness::{mcar_mask, degree_adversary};

    fn sbm(n0: usize, n1: usize, seed: u64) -> Graph {
        generate_sbm(&SbmConfig {
            block_sizes: vec![n0, n1],
            n_features: 6,
            n_noise: 2,
            gamma: 1.5,
            p_in: 0.4,
            p_out: 0.05,
            seed,
            ..SbmConfig::default()
        })
        .unwrap()
    }

    fn quick_cfg(mode: TrainMode, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            mode,
            epochs,
            seed,
            classifier_hidden: 8,
            imputer_hidden: 8,
            adversary_hidden: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn smoke_one_epoch_all_losses_finite() {
        let g = sbm(14, 10, 1);
        let report = train(&g, &quick_cfg(TrainMode::Bfts, 1, 3)).unwrap();
        let rec = &report.epochs[0];
        assert!(rec.loss_c.is_finite());
        assert!(rec.loss_i.unwrap().is_finite());
        assert!(rec.loss_a.map_or(true, f64::is_finite));
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let g = sbm(12, 10, 4);
        let cfg = quick_cfg(TrainMode::Bfts, 3, 7);
        let a = train(&g, &cfg).unwrap();
        let b = train(&g, &cfg).unwrap();
        assert_eq!(a.fingerprints, b.fingerprints);
        assert_eq!(a.params, b.params);
        let c = train(&g, &quick_cfg(TrainMode::Bfts, 3, 8)).unwrap();
        assert_ne!(a.fingerprints, c.fingerprints);
    }

    #[test]
    fn bfts_with_zero_weights_matches_vanilla_bitwise() {
        let g = sbm(12, 10, 2);
        let mut cfg = quick_cfg(TrainMode::Bfts, 4, 5);
        cfg.alpha = 0.0;
        cfg.beta = 0.0;
        let b = train(&g, &cfg).unwrap();
        let mut vcfg = cfg.clone();
        vcfg.mode = TrainMode::Vanilla;
        let v = train(&g, &vcfg).unwrap();
        let b_traj: Vec<u64> = b.fingerprints.iter().map(|f| f.classifier).collect();
        let v_traj: Vec<u64> = v.fingerprints.iter().map(|f| f.classifier).collect();
        assert_eq!(b_traj, v_traj);
        assert_eq!(b.params.classifier, v.params.classifier);
        assert_eq!(b.selected_epoch, v.selected_epoch);
    }

    #[test]
    fn two_player_with_nothing_observed_degenerates_to_vanilla() {
        let g = sbm(12, 10, 6);
        let g = g.with_observed_mask(vec![false; g.n_nodes()]).unwrap();
        let mut cfg = quick_cfg(TrainMode::TwoPlayer, 3, 9);
        // the imputation pool is unused by the two-player game, but ctx
        // construction needs a nonempty pool source
        cfg.sensitive_mode = SensitiveMode::LabelProxy;
        let t = train(&g, &cfg).unwrap();
        let mut vcfg = cfg.clone();
        vcfg.mode = TrainMode::Vanilla;
        let v = train(&g, &vcfg).unwrap();
        let t_traj: Vec<u64> = t.fingerprints.iter().map(|f| f.classifier).collect();
        let v_traj: Vec<u64> = v.fingerprints.iter().map(|f| f.classifier).collect();
        assert_eq!(t_traj, v_traj);
        assert!(t.epochs.iter().all(|r| r.adversarial_skipped));
    }

    #[test]
    fn full_observation_two_player_matches_bfts_classifier_and_adversary() {
        // with every sensitive value observed, the merged values equal
        // ground truth, so both games feed the adversary identically
        let g = sbm(12, 10, 3);
        let cfg = quick_cfg(TrainMode::Bfts, 4, 11);
        let b = train(&g, &cfg).unwrap();
        let mut tcfg = cfg.clone();
        tcfg.mode = TrainMode::TwoPlayer;
        let t = train(&g, &tcfg).unwrap();
        for (fb, ft) in b.fingerprints.iter().zip(&t.fingerprints) {
            assert_eq!(fb.classifier, ft.classifier);
            assert_eq!(fb.adversary, ft.adversary);
        }
    }

    #[test]
    fn frozen_players_never_move() {
        let g = sbm(12, 10, 8);
        let mut cfg = quick_cfg(TrainMode::Bfts, 3, 13);
        cfg.lr_imputer = 0.0;
        cfg.lr_adversary = 0.0;
        let r = train(&g, &cfg).unwrap();
        let first = r.fingerprints[0];
        for f in &r.fingerprints {
            assert_eq!(f.imputer, first.imputer);
            assert_eq!(f.adversary, first.adversary);
        }
        // the classifier does move
        assert_ne!(r.fingerprints[0].classifier, r.fingerprints[2].classifier);
    }

    #[test]
    fn vanilla_converges_on_separable_blocks() {
        let g = generate_sbm(&SbmConfig {
            block_sizes: vec![36, 24],
            n_features: 6,
            n_noise: 2,
            gamma: 2.0,
            p_in: 0.5,
            p_out: 0.02,
            seed: 21,
            ..SbmConfig::default()
        })
        .unwrap();
        let mut cfg = quick_cfg(TrainMode::Vanilla, 250, 2);
        cfg.lr_classifier = 5e-3;
        let r = train(&g, &cfg).unwrap();
        let pred = predict(&r.params, &g).unwrap();
        let f1 = crate::metrics::f1(&pred.yhat_hard, g.labels(), &vec![true; g.n_nodes()]);
        assert!(f1 >= 0.9, "f1 = {f1}");

        // 10-epoch moving average of the loss does not increase
        let losses: Vec<f64> = r.epochs.iter().map(|e| e.loss_c).collect();
        let ma = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
        let early = ma(&losses[0..10]);
        let late = ma(&losses[losses.len() - 10..]);
        assert!(late < early, "loss went {early} -> {late}");
    }

    #[test]
    fn adversary_steps_increase_their_objective() {
        let g = sbm(16, 12, 5);
        let mut cfg = quick_cfg(TrainMode::Bfts, 60, 17);
        cfg.record_adversary_ascent = true;
        cfg.lr_adversary = 1e-4;
        let r = train(&g, &cfg).unwrap();
        let ups = r
            .adversary_ascent_deltas
            .iter()
            .filter(|&&d| d > 0.0)
            .count();
        let frac = ups as f64 / r.adversary_ascent_deltas.len() as f64;
        assert!(frac >= 0.95, "ascent fraction {frac}");
    }

    #[test]
    fn independent_imputation_reports_holdout_accuracy() {
        let g = sbm(16, 12, 10);
        let g = g
            .with_observed_mask(mcar_mask(g.n_nodes(), 20, 3))
            .unwrap();
        let r = train(&g, &quick_cfg(TrainMode::IndependentImputation, 5, 19)).unwrap();
        let acc = r.imputer_holdout_accuracy.unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn independent_imputation_with_full_observation_keeps_truth() {
        let g = sbm(12, 10, 12);
        let cfg = quick_cfg(TrainMode::IndependentImputation, 3, 23);
        let r = train(&g, &cfg).unwrap();
        // merged hard values equal ground truth everywhere observed
        let merged = predicted_merged_hard(&r.params, &g).unwrap();
        assert_eq!(merged, g.sensitive());
    }

    #[test]
    fn observed_mode_with_empty_observed_set_errors() {
        let g = sbm(12, 10, 14);
        let g = g.with_observed_mask(vec![false; g.n_nodes()]).unwrap();
        assert!(train(&g, &quick_cfg(TrainMode::Bfts, 1, 1)).is_err());
    }

    #[test]
    fn label_proxy_mode_trains_without_observations() {
        let g = sbm(12, 10, 15);
        let g = g.with_observed_mask(vec![false; g.n_nodes()]).unwrap();
        let mut cfg = quick_cfg(TrainMode::Bfts, 2, 2);
        cfg.sensitive_mode = SensitiveMode::LabelProxy;
        let r = train(&g, &cfg).unwrap();
        assert_eq!(r.epochs.len(), 2);
    }

    #[test]
    fn predictions_threshold_and_range() {
        let g = sbm(12, 10, 16);
        let r = train(&g, &quick_cfg(TrainMode::Bfts, 2, 3)).unwrap();
        let p = predict(&r.params, &g).unwrap();
        for (&soft, &hard) in p.yhat_soft.iter().zip(&p.yhat_hard) {
            assert!(soft > 0.0 && soft < 1.0);
            assert_eq!(hard, u8::from(soft >= 0.5));
        }
        // thresholding twice changes nothing
        let rethresholded: Vec<u8> = p.yhat_hard.iter().map(|&b| u8::from(b >= 1)).collect();
        assert_eq!(rethresholded, p.yhat_hard);
    }

    #[test]
    fn feature_matrix_may_not_contain_sensitive_column() {
        let g = sbm(8, 6, 17);
        let n = g.n_nodes();
        let mut feats = g.features().clone();
        for v in 0..n {
            feats.set(v, 0, g.sensitive()[v] as f64);
        }
        let bad = Graph::new(
            n,
            g.edges().to_vec(),
            feats,
            g.labels().to_vec(),
            g.sensitive().to_vec(),
            g.observed_mask().to_vec(),
            g.train_mask().to_vec(),
            g.val_mask().to_vec(),
            g.test_mask().to_vec(),
        )
        .unwrap();
        assert!(train(&bad, &quick_cfg(TrainMode::Vanilla, 1, 1)).is_err());
    }

    #[test]
    fn dp_trace_runs_and_stays_in_range() {
        let g = sbm(16, 12, 18);
        let g = g
            .with_observed_mask(degree_adversary(&g, 9))
            .unwrap();
        let trace = imputer_only_dp_trace(&g, &quick_cfg(TrainMode::Bfts, 0, 4), 10, 15).unwrap();
        assert_eq!(trace.len(), 15);
        assert!(trace.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

//! The three players: a GCN classifier, a GCN imputer, and an MLP
//! adversary that reads the classifier's embeddings.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Matrix, Tape, TensorId};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{stream_rng, Player, Stream};

/// Two-layer graph convolution: ReLU hidden layer with dropout at train
/// time, linear output head propagated through the same operator.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnNetwork {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub dropout_rate: f64,
}

/// Two-layer perceptron over node embeddings, sigmoid head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpAdversary {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

/// Disjoint parameter sets for the three players.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerParams {
    pub classifier: GcnNetwork,
    pub imputer: GcnNetwork,
    pub adversary: MlpAdversary,
}

/// Layer widths. The classifier head has one output (sigmoid), the imputer
/// two (softmax over s in {0,1}), the adversary one (sigmoid).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelShapes {
    pub n_features: usize,
    pub classifier_hidden: usize,
    pub imputer_hidden: usize,
    pub adversary_hidden: usize,
    pub dropout_rate: f64,
}

impl ModelShapes {
    pub fn for_graph(g: &Graph) -> Self {
        ModelShapes {
            n_features: g.features().cols(),
            classifier_hidden: 64,
            imputer_hidden: 64,
            adversary_hidden: 32,
            dropout_rate: 0.5,
        }
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * limit)
}

fn init_gcn(d_in: usize, hidden: usize, d_out: usize, dropout: f64, rng: &mut ChaCha8Rng) -> GcnNetwork {
    GcnNetwork {
        w1: glorot(d_in, hidden, rng),
        b1: Matrix::zeros(1, hidden),
        w2: glorot(hidden, d_out, rng),
        b2: Matrix::zeros(1, d_out),
        dropout_rate: dropout,
    }
}

/// Glorot-uniform weights, zero biases. Each player draws from its own
/// substream, so one player's initialization is independent of whether the
/// others exist.
pub fn init_params(shapes: &ModelShapes, seed: u64) -> PlayerParams {
    let mut c_rng = stream_rng(seed, Stream::Init(Player::Classifier));
    let mut i_rng = stream_rng(seed, Stream::Init(Player::Imputer));
    let mut a_rng = stream_rng(seed, Stream::Init(Player::Adversary));
    PlayerParams {
        classifier: init_gcn(
            shapes.n_features,
            shapes.classifier_hidden,
            1,
            shapes.dropout_rate,
            &mut c_rng,
        ),
        imputer: init_gcn(
            shapes.n_features,
            shapes.imputer_hidden,
            2,
            shapes.dropout_rate,
            &mut i_rng,
        ),
        adversary: MlpAdversary {
            w1: glorot(shapes.classifier_hidden, shapes.adversary_hidden, &mut a_rng),
            b1: Matrix::zeros(1, shapes.adversary_hidden),
            w2: glorot(shapes.adversary_hidden, 1, &mut a_rng),
            b2: Matrix::zeros(1, 1),
        },
    }
}

/// Propagation operator staged once per graph: the normalized adjacency
/// and its product with the feature matrix (the first-layer input never
/// changes, so the n x n product is paid once per run).
#[derive(Debug, Clone)]
pub struct Propagation {
    pub ahat: Matrix,
    pub ax: Matrix,
}

impl Propagation {
    pub fn from_graph(g: &Graph) -> Result<Self> {
        let ahat = g.normalized_adjacency();
        let ax = ahat.matmul(g.features())?;
        Ok(Propagation { ahat, ax })
    }
}

/// Tape handles for the propagation constants.
#[derive(Debug, Clone, Copy)]
pub struct PropIds {
    pub ahat: TensorId,
    pub ax: TensorId,
}

pub fn stage_propagation(tape: &mut Tape, prop: &Propagation) -> PropIds {
    PropIds {
        ahat: tape.constant(&prop.ahat),
        ax: tape.constant(&prop.ax),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GcnIds {
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
}

#[derive(Debug, Clone, Copy)]
pub struct MlpIds {
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
}

pub fn stage_gcn(tape: &mut Tape, net: &GcnNetwork, trainable: bool) -> GcnIds {
    GcnIds {
        w1: tape.leaf(&net.w1, trainable),
        b1: tape.leaf(&net.b1, trainable),
        w2: tape.leaf(&net.w2, trainable),
        b2: tape.leaf(&net.b2, trainable),
    }
}

pub fn stage_mlp(tape: &mut Tape, net: &MlpAdversary, trainable: bool) -> MlpIds {
    MlpIds {
        w1: tape.leaf(&net.w1, trainable),
        b1: tape.leaf(&net.b1, trainable),
        w2: tape.leaf(&net.w2, trainable),
        b2: tape.leaf(&net.b2, trainable),
    }
}

/// Train-time forwards draw dropout masks from the supplied stream; eval
/// is deterministic in the parameters.
pub enum ForwardMode<'a> {
    Train {
        rng: &'a mut ChaCha8Rng,
        dropout_rate: f64,
    },
    Eval,
}

/// Shared two-layer propagation body: returns the post-dropout hidden
/// representation and the pre-activation output logits.
fn forward_gcn_body(
    tape: &mut Tape,
    ids: &GcnIds,
    prop: &PropIds,
    mode: &mut ForwardMode,
) -> Result<(TensorId, TensorId)> {
    let z1 = tape.matmul(prop.ax, ids.w1)?;
    let z1 = tape.add_row_bias(z1, ids.b1)?;
    let mut h = tape.relu(z1)?;
    if let ForwardMode::Train { rng, dropout_rate } = mode {
        h = tape.dropout(h, *dropout_rate, rng)?;
    }
    let hw = tape.matmul(h, ids.w2)?;
    let propagated = tape.matmul(prop.ahat, hw)?;
    let logits = tape.add_row_bias(propagated, ids.b2)?;
    Ok((h, logits))
}

pub struct ClassifierOut {
    /// Final-layer hidden representation handed to the adversary.
    pub h: TensorId,
    /// Per-node probability of the desired class, in (0, 1).
    pub yhat: TensorId,
}

pub fn forward_classifier(
    tape: &mut Tape,
    ids: &GcnIds,
    prop: &PropIds,
    mut mode: ForwardMode,
) -> Result<ClassifierOut> {
    let (h, logits) = forward_gcn_body(tape, ids, prop, &mut mode)?;
    let yhat = tape.sigmoid(logits)?;
    Ok(ClassifierOut { h, yhat })
}

pub struct ImputerOut {
    /// n x 2 pre-softmax logits, one column per sensitive value.
    pub logits: TensorId,
    /// n x 1 soft probability of s = 1 (softmax column 1).
    pub si_hat: TensorId,
}

pub fn forward_imputer(
    tape: &mut Tape,
    ids: &GcnIds,
    prop: &PropIds,
    mut mode: ForwardMode,
) -> Result<ImputerOut> {
    let (_, logits) = forward_gcn_body(tape, ids, prop, &mut mode)?;
    let probs = tape.row_softmax(logits)?;
    let pick_col1 = tape.constant(&Matrix::from_vec(2, 1, vec![0.0, 1.0])?);
    let si_hat = tape.matmul(probs, pick_col1)?;
    Ok(ImputerOut { logits, si_hat })
}

/// Graph-free adversary over embeddings: sigmoid(W2 relu(W1 h + b1) + b2).
pub fn forward_adversary(tape: &mut Tape, ids: &MlpIds, h: TensorId) -> Result<TensorId> {
    let z1 = tape.matmul(h, ids.w1)?;
    let z1 = tape.add_row_bias(z1, ids.b1)?;
    let a1 = tape.relu(z1)?;
    let z2 = tape.matmul(a1, ids.w2)?;
    let z2 = tape.add_row_bias(z2, ids.b2)?;
    tape.sigmoid(z2)
}

// ---- checkpoints --------------------------------------------------------

const TENSOR_NAMES: [&str; 12] = [
    "fc.w1", "fc.b1", "fc.w2", "fc.b2", "fi.w1", "fi.b1", "fi.w2", "fi.b2", "fa.w1", "fa.b1",
    "fa.w2", "fa.b2",
];

pub fn save_player_params(path: &Path, params: &PlayerParams) -> Result<()> {
    let tensors: [&Matrix; 12] = [
        &params.classifier.w1,
        &params.classifier.b1,
        &params.classifier.w2,
        &params.classifier.b2,
        &params.imputer.w1,
        &params.imputer.b1,
        &params.imputer.w2,
        &params.imputer.b2,
        &params.adversary.w1,
        &params.adversary.b1,
        &params.adversary.w2,
        &params.adversary.b2,
    ];
    let named: Vec<(&str, &Matrix)> = TENSOR_NAMES.iter().copied().zip(tensors).collect();
    save_checkpoint(path, &named)
}

/// Checkpoints carry no dropout rate; loaded networks get the supplied one
/// (irrelevant for evaluation-mode use).
pub fn load_player_params(path: &Path, dropout_rate: f64) -> Result<PlayerParams> {
    let tensors = load_checkpoint(path)?;
    let find = |name: &str| -> Result<Matrix> {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m.clone())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    };
    Ok(PlayerParams {
        classifier: GcnNetwork {
            w1: find("fc.w1")?,
            b1: find("fc.b1")?,
            w2: find("fc.w2")?,
            b2: find("fc.b2")?,
            dropout_rate,
        },
        imputer: GcnNetwork {
            w1: find("fi.w1")?,
            b1: find("fi.b1")?,
            w2: find("fi.w2")?,
            b2: find("fi.b2")?,
            dropout_rate,
        },
        adversary: MlpAdversary {
            w1: find("fa.w1")?,
            b1: find("fa.b1")?,
            w2: find("fa.w2")?,
            b2: find("fa.b2")?,
        },
    })
}

/// FNV-style fingerprint of the exact parameter bits; order-sensitive.
pub fn fingerprint(matrices: &[&Matrix]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for m in matrices {
        for &v in m.data() {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

pub fn gcn_fingerprint(net: &GcnNetwork) -> u64 {
    fingerprint(&[&net.w1, &net.b1, &net.w2, &net.b2])
}

pub fn mlp_fingerprint(net: &MlpAdversary) -> u64 {
    fingerprint(&[&net.w1, &net.b1, &net.w2, &net.b2])
}

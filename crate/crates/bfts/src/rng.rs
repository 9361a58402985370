//! Seeded, splittable random streams.
//!
//! Every stochastic stage in the crate draws from a `ChaCha8Rng` substream
//! derived from a single 64-bit run seed plus a stage tag. Stages are
//! independent: adding feature columns never perturbs edge sampling, and a
//! player's dropout masks never depend on whether the other players ran.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One of the three trained networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Player {
    Classifier,
    Imputer,
    Adversary,
}

impl Player {
    fn tag(self) -> u64 {
        match self {
            Player::Classifier => 0,
            Player::Imputer => 1,
            Player::Adversary => 2,
        }
    }
}

/// A named random stage. Each variant maps to a distinct stream of the
/// underlying generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    SbmEdges,
    SbmSensitive,
    SbmFeatures,
    SbmMasks,
    Mcar,
    /// Parameter initialization for one player.
    Init(Player),
    /// Dropout masks for one player in one epoch. All forward passes of a
    /// player within an epoch share the same masks.
    Dropout { player: Player, epoch: u64 },
    /// Held-out split of the observed pool for two-stage training.
    Holdout,
}

impl Stream {
    fn encode(self) -> u64 {
        match self {
            Stream::SbmEdges => 1,
            Stream::SbmSensitive => 2,
            Stream::SbmFeatures => 3,
            Stream::SbmMasks => 4,
            Stream::Mcar => 5,
            Stream::Holdout => 6,
            Stream::Init(p) => (1 << 32) | p.tag(),
            Stream::Dropout { player, epoch } => (2 << 32) | (player.tag() << 48) | epoch,
        }
    }
}

/// Deterministic generator for `seed` restricted to the given stage.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.encode());
    rng
}

//! Minimal dense reverse-mode differentiation engine.
//!
//! Sufficient for two-layer graph convolutions, an MLP adversary, and the
//! three training losses. 64-bit floats throughout; no operator fusion, no
//! sparse kernels.

mod adam;
mod matrix;
mod tape;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use matrix::Matrix;
pub use tape::{Tape, Tensor, TensorId, LOG_CLAMP};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.constant(&Matrix::from_vec(1, 1, vec![0.0]).unwrap());
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y), &[0.5]);
    }

    #[test]
    fn row_softmax_uniform_on_equal_logits() {
        let mut tape = Tape::new();
        let x = tape.constant(&Matrix::from_vec(1, 2, vec![0.0, 0.0]).unwrap());
        let y = tape.row_softmax(x).unwrap();
        assert_eq!(tape.value(y), &[0.5, 0.5]);
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_quarter() {
        let mut tape = Tape::new();
        let x = tape.param(&Matrix::from_vec(1, 1, vec![0.0]).unwrap());
        let y = tape.sigmoid(x).unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.25]);
    }

    #[test]
    fn sum_of_params_has_unit_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(&Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0]).unwrap());
        let loss = tape.sum(w).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn mean_of_squares_gradient_is_half_w() {
        // loss = mean(w . w) over a 2x2 tensor -> grad = w / 2
        let vals = vec![1.0, -2.0, 0.5, 4.0];
        let mut tape = Tape::new();
        let w = tape.param(&Matrix::from_vec(2, 2, vals.clone()).unwrap());
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.mean(sq).unwrap();
        tape.backward(loss).unwrap();
        let grad = tape.grad(w).unwrap();
        for (g, v) in grad.iter().zip(&vals) {
            assert!((g - v / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_accumulates_without_reset() {
        let mut tape = Tape::new();
        let w = tape.param(&Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap());
        let loss = tape.sum(w).unwrap();
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[2.0, 2.0]);
        tape.zero_grads();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let w = tape.param(&Matrix::zeros(2, 2));
        assert!(tape.backward(w).is_err());
    }

    #[test]
    fn select_rows_and_concat_roundtrip() {
        let mut tape = Tape::new();
        let x = tape.constant(&Matrix::from_vec(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let top = tape.select_rows(x, &[true, false, false]).unwrap();
        let rest = tape.select_rows(x, &[false, true, true]).unwrap();
        let back = tape.concat_rows(top, rest).unwrap();
        assert_eq!(tape.value(back), tape.value(x));
    }

    #[test]
    fn dropout_scales_survivors_and_replays_bitwise() {
        let m = Matrix::from_vec(4, 4, (0..16).map(|i| i as f64 + 1.0).collect()).unwrap();
        let mut rng = stream_rng(9, Stream::SbmEdges);
        let mut tape = Tape::new();
        let x = tape.param(&m);
        let d = tape.dropout(x, 0.5, &mut rng).unwrap();
        let first: Vec<f64> = tape.value(d).to_vec();
        // survivors are doubled, dropped entries are zero
        for (out, orig) in first.iter().zip(m.data()) {
            assert!(*out == 0.0 || (*out - 2.0 * orig).abs() < 1e-15);
        }
        tape.recompute_forward();
        assert_eq!(tape.value(d), first.as_slice());
    }

    #[test]
    fn replay_after_leaf_update_matches_fresh_tape() {
        let a0 = Matrix::from_vec(2, 2, vec![0.2, -0.4, 1.0, 0.7]).unwrap();
        let b0 = Matrix::from_vec(2, 1, vec![0.5, -1.5]).unwrap();
        let a1 = Matrix::from_vec(2, 2, vec![1.2, 0.4, -1.0, 0.3]).unwrap();

        let mut tape = Tape::new();
        let a = tape.param(&a0);
        let b = tape.constant(&b0);
        let prod = tape.matmul(a, b).unwrap();
        let act = tape.sigmoid(prod).unwrap();
        let loss = tape.mean(act).unwrap();
        tape.set_leaf(a, a1.data()).unwrap();
        tape.recompute_forward();
        let replayed = tape.scalar_value(loss);

        let mut fresh = Tape::new();
        let a = fresh.param(&a1);
        let b = fresh.constant(&b0);
        let prod = fresh.matmul(a, b).unwrap();
        let act = fresh.sigmoid(prod).unwrap();
        let loss = fresh.mean(act).unwrap();
        assert_eq!(replayed, fresh.scalar_value(loss));
    }

    #[test]
    fn two_identical_backward_passes_are_bitwise_equal() {
        let run = || {
            let mut rng = stream_rng(5, Stream::SbmFeatures);
            let mut tape = Tape::new();
            let w = tape.param(&Matrix::from_fn(3, 3, |r, c| (r + c) as f64 * 0.3 - 0.5));
            let x = tape.constant(&Matrix::from_fn(3, 3, |r, c| (r * 3 + c) as f64 * 0.1));
            let prod = tape.matmul(x, w).unwrap();
            let act = tape.relu(prod).unwrap();
            let dropped = tape.dropout(act, 0.3, &mut rng).unwrap();
            let loss = tape.mean(dropped).unwrap();
            tape.backward(loss).unwrap();
            tape.grad(w).unwrap().to_vec()
        };
        assert_eq!(run(), run());
    }
}

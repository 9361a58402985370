// per-epoch stage-1 introspection: holdout accuracy/CE vs carve correlation
use bfts::autodiff::{adam_step, AdamState, Tape};
use bfts::graph::{generate_sbm, SbmConfig};
use bfts::losses::{imputation_loss, merged_hard, ImputationLossKind, LdamMargins};
use bfts::metrics::pearson_corr;
use bfts::missingness::degree_adversary;
use bfts::models::*;
use bfts::rng::{stream_rng, Player, Stream};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let frac: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let decay: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let g = generate_sbm(&SbmConfig { seed, ..SbmConfig::default() }).unwrap();
    let k = (g.n_nodes() as f64 * frac).round() as usize;
    let g = g.with_observed_mask(degree_adversary(&g, k)).unwrap();
    let y: Vec<f64> = g.labels().iter().map(|&v| v as f64).collect();

    // holdout split mirrors the trainer
    let observed: Vec<usize> = (0..g.n_nodes()).filter(|&v| g.observed_mask()[v]).collect();
    let mut shuffled = observed.clone();
    use rand::seq::SliceRandom;
    let mut hrng = stream_rng(seed, Stream::Holdout);
    shuffled.shuffle(&mut hrng);
    let n_holdout = shuffled.len() / 5;
    let holdout: Vec<usize> = shuffled[..n_holdout].to_vec();
    let mut pool = vec![false; g.n_nodes()];
    for &v in &shuffled[n_holdout..] { pool[v] = true; }

    let shapes = ModelShapes::for_graph(&g);
    let mut params = init_params(&shapes, seed);
    let prop = Propagation::from_graph(&g).unwrap();
    let mut n = [0usize; 2];
    for (i, &p) in pool.iter().enumerate() { if p { n[g.sensitive()[i] as usize] += 1; } }
    let margins = LdamMargins::from_counts(n[0].max(1), n[1].max(1), 0.0).unwrap();
    let mut opt = [AdamState::new(params.imputer.w1.len()), AdamState::new(params.imputer.b1.len()),
                   AdamState::new(params.imputer.w2.len()), AdamState::new(params.imputer.b2.len())];
    println!("seed={seed} frac={frac} decay={decay} pool n0={} n1={} holdout={}", n[0], n[1], holdout.len());
    let total_epochs: usize = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(300);
    let hidden: usize = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(64);
    let shapes = ModelShapes { imputer_hidden: hidden, ..shapes };
    let mut params = init_params(&shapes, seed);
    let _ = &params;
    for epoch in 0..total_epochs {
        let mut tape = Tape::new();
        let pids = stage_propagation(&mut tape, &prop);
        let fi = stage_gcn(&mut tape, &params.imputer, true);
        let mut rng = stream_rng(seed, Stream::Dropout { player: Player::Imputer, epoch: epoch as u64 });
        let out = forward_imputer(&mut tape, &fi, &pids, ForwardMode::Train { rng: &mut rng, dropout_rate: 0.5 }).unwrap();
        let l = imputation_loss(&mut tape, out.logits, g.sensitive(), &pool, &margins, ImputationLossKind::Ce).unwrap();
        tape.backward(l).unwrap();
        for (m, (id, st)) in [(&mut params.imputer.w1, (fi.w1, 0)), (&mut params.imputer.b1, (fi.b1, 1)),
                              (&mut params.imputer.w2, (fi.w2, 2)), (&mut params.imputer.b2, (fi.b2, 3))] {
            let mut grad = tape.grad(id).unwrap().to_vec();
            if decay > 0.0 && (st == 0 || st == 2) {
                for (gv, pv) in grad.iter_mut().zip(m.data()) { *gv += decay * pv; }
            }
            adam_step(m, &grad, &mut opt[st], 1e-3).unwrap();
        }
        if epoch % 100 == 99 || epoch + 1 == total_epochs {
            // eval
            let mut et = Tape::new();
            let pids = stage_propagation(&mut et, &prop);
            let fi = stage_gcn(&mut et, &params.imputer, false);
            let out = forward_imputer(&mut et, &fi, &pids, ForwardMode::Eval).unwrap();
            let si = et.value(out.si_hat).to_vec();
            let acc = holdout.iter().filter(|&&v| u8::from(si[v] >= 0.5) == g.sensitive()[v]).count() as f64 / holdout.len() as f64;
            let hce: f64 = holdout.iter().map(|&v| {
                let p = si[v].clamp(1e-12, 1.0 - 1e-12);
                if g.sensitive()[v] == 1 { -p.ln() } else { -(1.0 - p).ln() }
            }).sum::<f64>() / holdout.len() as f64;
            let m = merged_hard(&g, &si);
            let mv: Vec<f64> = m.iter().map(|&v| v as f64).collect();
            let corr = pearson_corr(&mv, &y).unwrap_or(0.0);
            // block means of si
            let m1: f64 = (0..600).map(|v| si[v]).sum::<f64>() / 600.0;
            let m0: f64 = (600..1000).map(|v| si[v]).sum::<f64>() / 400.0;
            println!("epoch {epoch:3}: holdout_acc={acc:.3} holdout_ce={hce:.3} corr={corr:+.3} si_block1={m1:.2} si_block0={m0:.2}");
        }
    }
}

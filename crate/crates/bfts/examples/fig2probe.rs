// full grid probe: fractions x seeds, indep vs 3-player correlation audit
use bfts::graph::{generate_sbm, SbmConfig};
use bfts::missingness::degree_adversary;
use bfts::metrics::pearson_corr;
use bfts::training::{train, predicted_merged_hard, TrainConfig, TrainMode};
use rayon::prelude::*;

fn main() {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse::<usize>().ok()).unwrap_or(300);
    let n_seeds: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let fracs = [0.1, 0.2, 0.3, 0.4];
    let mut jobs = Vec::new();
    for &frac in &fracs { for seed in 0..n_seeds { jobs.push((frac, seed)); } }
    let results: Vec<(f64, u64, f64, f64, f64)> = jobs.par_iter().map(|&(frac, seed)| {
        let g = generate_sbm(&SbmConfig { seed, ..SbmConfig::default() }).unwrap();
        let k = (g.n_nodes() as f64 * frac).round() as usize;
        let g = g.with_observed_mask(degree_adversary(&g, k)).unwrap();
        let y: Vec<f64> = g.labels().iter().map(|&v| v as f64).collect();
        let s: Vec<f64> = g.sensitive().iter().map(|&v| v as f64).collect();
        let corr_true = pearson_corr(&s, &y).unwrap();
        let base = TrainConfig { epochs, seed, ..TrainConfig::default() };
        let corr_of = |mode: TrainMode| -> f64 {
            let r = train(&g, &TrainConfig { mode, ..base.clone() }).unwrap();
            let m = predicted_merged_hard(&r.params, &g).unwrap();
            let mv: Vec<f64> = m.iter().map(|&v| v as f64).collect();
            pearson_corr(&mv, &y).unwrap_or(0.0)
        };
        (frac, seed, corr_true, corr_of(TrainMode::IndependentImputation), corr_of(TrainMode::Bfts))
    }).collect();
    for frac in fracs {
        let rows: Vec<_> = results.iter().filter(|r| r.0 == frac).collect();
        let under = rows.iter().filter(|r| r.3 < r.2 - 0.05).count();
        let bfts_ge = rows.iter().filter(|r| r.4 >= r.3).count();
        print!("frac={frac}: under={under}/10 bfts_ge={bfts_ge}/10  indep=[");
        for r in &rows { print!("{:.2} ", r.3); }
        print!("] bfts=[");
        for r in &rows { print!("{:.2} ", r.4); }
        println!("] true~{:.2}", rows[0].2);
    }
}

// probe the alpha sweep and the imputer-only trace
use bfts::graph::{generate_sbm, SbmConfig};
use bfts::missingness::degree_adversary;
use bfts::metrics::{delta_dp, f1};
use bfts::training::{train, predict, imputer_only_dp_trace, TrainConfig, TrainMode};
use rayon::prelude::*;

fn masked(seed: u64) -> bfts::graph::Graph {
    let g = generate_sbm(&SbmConfig { seed, ..SbmConfig::default() }).unwrap();
    let k = (g.n_nodes() as f64 * 0.3).round() as usize;
    g.with_observed_mask(degree_adversary(&g, k)).unwrap()
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "alpha".into());
    let epochs = std::env::args().nth(2).and_then(|s| s.parse::<usize>().ok()).unwrap_or(300);
    if which == "alpha" {
        let alphas = [0.0, 0.1, 1.0, 10.0];
        let seeds: Vec<u64> = (0..5).collect();
        let mut jobs = Vec::new();
        for &a in &alphas { for &s in &seeds { jobs.push(("bfts", a, s)); } }
        for &s in &seeds { jobs.push(("two", 1.0, s)); }
        let results: Vec<(String, f64, u64, f64, f64)> = jobs.par_iter().map(|&(m, alpha, seed)| {
            let g = masked(seed);
            let mode = if m == "bfts" { TrainMode::Bfts } else { TrainMode::TwoPlayer };
            let cfg = TrainConfig { mode, alpha, beta: 1.0, epochs, seed, ..TrainConfig::default() };
            let r = train(&g, &cfg).unwrap();
            let p = predict(&r.params, &g).unwrap();
            let ddp = delta_dp(&p.yhat_hard, g.sensitive(), g.test_mask()).unwrap();
            let f = f1(&p.yhat_hard, g.labels(), g.test_mask());
            (m.to_string(), alpha, seed, ddp, f)
        }).collect();
        for &a in &alphas {
            let rows: Vec<_> = results.iter().filter(|r| r.0 == "bfts" && r.1 == a).collect();
            let mddp: f64 = rows.iter().map(|r| r.3).sum::<f64>() / rows.len() as f64;
            let mf1: f64 = rows.iter().map(|r| r.4).sum::<f64>() / rows.len() as f64;
            println!("bfts alpha={a}: mean ddp={mddp:.3} mean f1={mf1:.3} ddp=[{}]",
                rows.iter().map(|r| format!("{:.2}", r.3)).collect::<Vec<_>>().join(" "));
        }
        let two: Vec<_> = results.iter().filter(|r| r.0 == "two").collect();
        let bf1: Vec<_> = results.iter().filter(|r| r.0 == "bfts" && r.1 == 1.0).collect();
        let wins = bf1.iter().filter(|b| {
            two.iter().find(|t| t.2 == b.2).map_or(false, |t| b.3 <= t.3)
        }).count();
        println!("two-player alpha=1: ddp=[{}]  bfts<=two in {wins}/5 seeds",
            two.iter().map(|r| format!("{:.2}", r.3)).collect::<Vec<_>>().join(" "));
    } else {
        let results: Vec<(u64, f64, f64, bool)> = (0..10u64).into_par_iter().map(|seed| {
            let g = masked(seed + 100);
            let cfg = TrainConfig { seed, ..TrainConfig::default() };
            let trace = imputer_only_dp_trace(&g, &cfg, epochs, 200).unwrap();
            let ma = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
            let start = ma(&trace[0..10]);
            let end = ma(&trace[190..200]);
            (seed, start, end, end > start)
        }).collect();
        let ups = results.iter().filter(|r| r.3).count();
        for r in &results { println!("seed {}: start {:.3} end {:.3} up={}", r.0, r.1, r.2, r.3); }
        println!("rising in {ups}/10 seeds");
    }
}

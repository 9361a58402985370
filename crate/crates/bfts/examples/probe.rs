use bfts::graph::{generate_sbm, SbmConfig};
use bfts::training::{train, predict, TrainConfig, TrainMode};
use bfts::metrics::f1;

fn main() {
    for (epochs, lr, hidden, dropout) in [(250usize, 5e-3, 8usize, 0.5), (400, 5e-3, 8, 0.5), (250, 1e-2, 8, 0.5), (250, 5e-3, 16, 0.5), (250, 5e-3, 8, 0.2), (400, 1e-2, 16, 0.3)] {
        let g = generate_sbm(&SbmConfig {
            block_sizes: vec![36, 24], n_features: 6, n_noise: 2, gamma: 2.0,
            p_in: 0.5, p_out: 0.02, seed: 21, ..SbmConfig::default()
        }).unwrap();
        let cfg = TrainConfig {
            mode: TrainMode::Vanilla, epochs, seed: 2,
            lr_classifier: lr, classifier_hidden: hidden, imputer_hidden: hidden,
            adversary_hidden: 4, dropout, ..TrainConfig::default()
        };
        let r = train(&g, &cfg).unwrap();
        let all = vec![true; g.n_nodes()];
        let ps = predict(&r.params, &g).unwrap();
        let pf = predict(&r.final_params, &g).unwrap();
        println!("epochs={epochs} lr={lr} hidden={hidden} drop={dropout}: sel_epoch={} f1_sel={:.3} f1_final={:.3}",
            r.selected_epoch, f1(&ps.yhat_hard, g.labels(), &all), f1(&pf.yhat_hard, g.labels(), &all));
    }
}

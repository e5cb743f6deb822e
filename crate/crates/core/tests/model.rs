use gtq_core::dataset::{generate, to_examples};
use gtq_core::mbrnn::{checkpoint, forward, mean_sae, train, Arch, ModelParams, TrainConfig};
use gtq_core::scenario::ScenarioConfig;
use gtq_core::seeding::rng_from_seed;

#[test]
fn forward_rows_are_distributions() {
    let arch = Arch::new(3, 2, 50, 2, 16).unwrap();
    let p: ModelParams<f32> = ModelParams::init(arch, &mut rng_from_seed(3));
    let x: Vec<Vec<f64>> = (0..7).map(|t| (0..arch.input()).map(|j| ((t * j) as f64).sin()).collect()).collect();
    for row in forward(&p, &x).unwrap() {
        assert_eq!(row.len(), 51);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        assert!(row.iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn checkpoint_roundtrip_preserves_predictions() {
    let arch = Arch::new(4, 4, 50, 1, 8).unwrap();
    let p: ModelParams<f32> = ModelParams::init(arch, &mut rng_from_seed(4));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&p, &path).unwrap();
    let q = checkpoint::load(&path).unwrap();
    assert_eq!(p, q);
}

#[test]
fn short_training_improves_on_initialisation() {
    let cfg = ScenarioConfig { horizon: 8, ..Default::default() };
    let recs = generate(120, &cfg, 100, 21, None).unwrap();
    let tr = to_examples(&recs[..100], 2, 2).unwrap();
    let va = to_examples(&recs[100..], 2, 2).unwrap();
    let tc = TrainConfig { n_arrival: 2, n_service: 2, layers: 1, hidden: 16, epochs: 8, batch: 16, lr0: 5e-3, ..Default::default() };
    let out = train(&tr, &va, &tc).unwrap();
    assert!(out.history.best_val_sae < out.history.initial_val_sae);
    let again = mean_sae(&out.params, &va).unwrap();
    assert!((again - out.history.best_val_sae).abs() < 1e-9);
}

use std::time::Instant;

use arft_core::autograd::{check_gradients, Tape, Tensor};
use arft_core::losses::{resolve_sigma, SigmaPolicy};
use arft_core::model::{forward, init_params, ModelConfig};
use arft_core::train::{training_objective, LossConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn composite_objective_matches_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let cfg = ModelConfig { p: 5, d_token: 8, n_heads: 2, n_layers: 2, dropout_rate: 0.0, ..Default::default() };
    let params = init_params(&cfg, &mut rng).unwrap();
    let x = Tensor::new(vec![6, 5], (0..30).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
    let labels = [1u8, 0, 1, 0];

    // the median bandwidth is a constant of the loss, so pin it at the base point
    let (_, cls) = forward(&x, &params, &cfg, false, &mut rng).unwrap();
    let rows = |r: std::ops::Range<usize>| {
        Tensor::new(vec![r.len(), 8], r.flat_map(|i| cls.row(i).to_vec()).collect()).unwrap()
    };
    let sigma = resolve_sigma(SigmaPolicy::Median, &rows(0..4), &rows(4..6)).unwrap();
    let mut loss_cfg = LossConfig::default();
    loss_cfg.mmd.sigma = SigmaPolicy::Fixed(sigma);

    let inputs: Vec<Tensor> = params.values().into_iter().cloned().collect();
    let report = check_gradients(&inputs, 1e-5, |tape: &mut Tape, ids| {
        let bound = params.with_values(ids)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = training_objective(tape, &x, 4, &labels, &bound, &cfg, &loss_cfg, 0.5, false, &mut rng)?;
        Ok(loss.total)
    })
    .unwrap();
    assert_eq!(report.checked, params.n_scalars());
    assert!(report.max_rel_err < 1e-3, "{report:?}");
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

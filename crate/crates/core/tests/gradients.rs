//! Analytic parameter gradients against central finite differences.

use hysteresis_rl::nn::Mlp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const MAX_RELATIVE_ERROR: f64 = 1e-4;

fn objective(net: &Mlp, x: &[f64], upstream: &[f64]) -> f64 {
    net.forward(x).unwrap().iter().zip(upstream).map(|(y, g)| y * g).sum()
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[test]
fn backward_matches_finite_differences_for_twenty_seeds() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = rng.gen_range(1..=3);
        let mut dims = vec![2];
        dims.extend((0..hidden).map(|_| rng.gen_range(2..=16)));
        dims.push(rng.gen_range(1..=5));
        let net = Mlp::new(&dims, &mut rng);
        let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let upstream: Vec<f64> = (0..net.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let trace = net.forward_traced(&x).unwrap();
        let analytic = net.backward(&trace, &upstream).unwrap();
        assert_eq!(analytic.len(), net.num_params());

        let mut worst: f64 = 0.0;
        for i in 0..net.num_params() {
            let mut plus = net.clone();
            plus.params_mut()[i] += STEP;
            let mut minus = net.clone();
            minus.params_mut()[i] -= STEP;
            let numeric = (objective(&plus, &x, &upstream) - objective(&minus, &x, &upstream)) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
        assert!(
            worst <= MAX_RELATIVE_ERROR,
            "seed {seed}, dims {dims:?}: worst relative error {worst:e}"
        );
    }
}

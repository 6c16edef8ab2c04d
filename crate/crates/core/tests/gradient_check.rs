//! Finite-difference check of the full training objective: edge profile,
//! network, attention, weight-and-copy and MAE, all in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slicevol_core::affinity::attend;
use slicevol_core::trainer::{network_input, reconstruction_error, reconstruction_loss};
use slicevol_core::{Network, NetworkConfig, ProfileConfig, SlicePlane, WindowSpec};

const EPS: f64 = 1e-4;

fn random_slice(rng: &mut ChaCha8Rng, n: usize) -> SlicePlane {
    SlicePlane::new(n, n, (0..n * n).map(|_| rng.gen()).collect()).unwrap()
}

/// Every piecewise-linear branch taken by the objective: ReLU states of
/// both passes and the sign of each reconstruction residual.
fn branches(net: &Network<f64>, s: &SlicePlane, t: &SlicePlane, p: &ProfileConfig, win: WindowSpec) -> Vec<bool> {
    let (k, kt) = net
        .forward_with_tape(&network_input(s, net.config(), p).unwrap())
        .unwrap();
    let (q, qt) = net
        .forward_with_tape(&network_input(t, net.config(), p).unwrap())
        .unwrap();
    let field: Vec<f64> = s.values.iter().map(|&v| v as f64).collect();
    let tape = attend(&k, &q, win, &field).unwrap();
    let mut out = kt.relu_pattern();
    out.extend(qt.relu_pattern());
    out.extend(tape.output.iter().zip(&t.values).map(|(r, &v)| *r > v as f64));
    out
}

#[test]
fn composite_objective_matches_central_differences() {
    let profile = ProfileConfig::default();
    let win = WindowSpec::new(1);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let cfg = NetworkConfig {
            rng_seed: seed,
            ..NetworkConfig::desk()
        };
        let mut net = Network::<f64>::init(cfg).unwrap();
        let (s, t) = (random_slice(&mut rng, 6), random_slice(&mut rng, 6));
        let (_, grads) = reconstruction_loss(&net, &s, &t, &profile, win).unwrap();
        let base = branches(&net, &s, &t, &profile, win);
        let sizes: Vec<usize> = net.params().map(Vec::len).collect();
        for _ in 0..60 {
            let ti = rng.gen_range(0..sizes.len());
            let pi = rng.gen_range(0..sizes[ti]);
            let analytic = grads.tensors[ti][pi];
            let mut eval = |delta: f64| {
                let orig = net.params_mut().nth(ti).unwrap()[pi];
                net.params_mut().nth(ti).unwrap()[pi] = orig + delta;
                let loss = reconstruction_error(&net, &s, &t, &profile, win).unwrap();
                let same = branches(&net, &s, &t, &profile, win) == base;
                net.params_mut().nth(ti).unwrap()[pi] = orig;
                (loss, same)
            };
            let ((lp, sp), (lm, sm)) = (eval(EPS), eval(-EPS));
            if !(sp && sm) {
                continue;
            }
            let numeric = (lp - lm) / (2.0 * EPS);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    assert!(checked >= 600, "only {checked} samples away from kinks");
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slicevol_core::eval::{
    baseline_static_copy, evaluate_cases, full_grid, select_seed_slice, EvalCase, OracleSegmenter, VolumeSegmenter,
};
use slicevol_core::metrics::mean_std;
use slicevol_core::phantom::synth_generate;
use slicevol_core::propagator::{propagate_volume, IdentityProvider};
use slicevol_core::{dice, MaskPlane, MaskVolume, PhantomSpec, PropagateOptions, Result, Volume};

fn cases(n: u64, spec: &PhantomSpec) -> Vec<EvalCase> {
    (0..n)
        .map(|s| {
            let (v, m) = synth_generate(&PhantomSpec {
                rng_seed: s,
                ..spec.clone()
            })
            .unwrap();
            EvalCase::new(format!("vol{s:02}"), v, m).unwrap()
        })
        .collect()
}

#[test]
fn seed_draws_are_uniform_over_the_window() {
    // equal areas everywhere except a one-pixel bump at slice 8
    let planes = (0..16)
        .map(|k| MaskPlane::from_fn(8, 8, |y, x| y < 4 && (x < 4 || (k == 8 && y == 0 && x == 4))))
        .collect();
    let gt = MaskVolume::from_planes(planes).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 10_000;
    let mut counts = [0usize; 16];
    for _ in 0..n {
        counts[select_seed_slice(&gt, &mut rng).unwrap()] += 1;
    }
    let p = 1.0 / 7.0;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for (k, &c) in counts.iter().enumerate() {
        if (5..=11).contains(&k) {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "slice {k}: {c}");
        } else {
            assert_eq!(c, 0);
        }
    }
}

#[test]
fn static_copy_on_static_and_vanishing_phantoms() {
    let still = PhantomSpec {
        drift_amplitude: 0.0,
        radius_modulation: 0.0,
        ..Default::default()
    };
    let (v, gt) = synth_generate(&still).unwrap();
    let copy = baseline_static_copy(&v, gt.plane(8).unwrap(), 8);
    assert_eq!(dice(&copy, &gt).unwrap(), 100.0);

    let vanishing = PhantomSpec {
        vanish_at_ends: true,
        ..still
    };
    let (v, gt) = synth_generate(&vanishing).unwrap();
    let copy = baseline_static_copy(&v, gt.plane(8).unwrap(), 8);
    assert!(dice(&copy, &gt).unwrap() < 100.0);
}

/// Lattice points of a disc of radius `r` centred on an integer pixel:
/// per-row half-width `floor(sqrt(r² - dy²))`.
fn half_widths(r: f64) -> Vec<i64> {
    let ri = r.floor() as i64;
    (-ri..=ri)
        .map(|dy| ((r * r - (dy * dy) as f64).sqrt()).floor() as i64)
        .collect()
}

#[test]
fn static_copy_dice_matches_closed_form_for_drifting_disc() {
    // disc drifting 1 px/slice along x over 16 slices, seed at slice 0
    let (h, w, d, r) = (24usize, 48usize, 16usize, 5.5f64);
    let (cy, cx0) = (12i64, 8i64);
    let planes: Vec<MaskPlane> = (0..d)
        .map(|z| {
            MaskPlane::from_fn(h, w, |y, x| {
                let (dy, dx) = (y as f64 - cy as f64, x as f64 - (cx0 + z as i64) as f64);
                dy * dy + dx * dx <= r * r
            })
        })
        .collect();
    let gt = MaskVolume::from_planes(planes).unwrap();
    let v = Volume::new(h, w, d, vec![0.0; h * w * d]).unwrap();
    let copy = baseline_static_copy(&v, gt.plane(0).unwrap(), 0);

    // row intervals of width 2a+1 shifted by t overlap in max(0, 2a+1-t) pixels
    let hw = half_widths(r);
    let area: i64 = hw.iter().map(|a| 2 * a + 1).sum();
    let overlap: i64 = (0..d as i64)
        .map(|t| hw.iter().map(|a| (2 * a + 1 - t).max(0)).sum::<i64>())
        .sum();
    let expected = 200.0 * overlap as f64 / (2 * area * d as i64) as f64;
    assert!((dice(&copy, &gt).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn oracle_segmenter_scores_100_and_report_has_expected_shape() {
    let cs = cases(4, &PhantomSpec::default());
    let report = evaluate_cases(&cs, &full_grid(), &PropagateOptions::default(), &OracleSegmenter, 1).unwrap();
    assert_eq!(report.methods.len(), 4);
    assert_eq!(report.baselines.len(), 1);
    for row in &report.methods {
        assert_eq!(row.per_volume.len(), 4);
        assert!(row.per_volume.values().all(|s| s.dice == 100.0));
        assert_eq!((row.mean, row.std), (100.0, 0.0));
    }
    let base = &report.baselines[0];
    assert!(base.mean < 100.0);
    assert!(base.per_volume.values().all(|s| (0.0..=100.0).contains(&s.dice)));
}

struct IdentitySegmenter;

impl VolumeSegmenter for IdentitySegmenter {
    fn segment(&self, case: &EvalCase, seed: &MaskPlane, k: usize, opts: &PropagateOptions) -> Result<MaskVolume> {
        Ok(propagate_volume(&IdentityProvider, &case.volume, seed, k, opts)?.masks)
    }
}

#[test]
fn aggregates_recompute_from_per_volume_entries() {
    let cs = cases(6, &PhantomSpec::default());
    let report = evaluate_cases(&cs, &full_grid(), &PropagateOptions::default(), &IdentitySegmenter, 3).unwrap();
    for row in report.rows() {
        let values: Vec<f64> = row.per_volume.values().map(|s| s.dice).collect();
        let (mean, std) = mean_std(&values);
        assert!((mean - row.mean).abs() < 1e-9);
        assert!((std - row.std).abs() < 1e-9);
        assert!(row.slices_per_second > 0.0);
    }
    // same seed, same seeds and scores regardless of scheduling
    let again = evaluate_cases(&cs, &full_grid(), &PropagateOptions::default(), &IdentitySegmenter, 3).unwrap();
    assert_eq!(report.seed_indices, again.seed_indices);
    for (a, b) in report.rows().zip(again.rows()) {
        let da: Vec<f64> = a.per_volume.values().map(|s| s.dice).collect();
        let db: Vec<f64> = b.per_volume.values().map(|s| s.dice).collect();
        assert_eq!(da, db);
    }
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 1 + 5 * 6);
    let table = report.to_table();
    assert_eq!(table.lines().count(), 1 + 5);
    let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(json["methods"].as_array().unwrap().len(), 4);
}

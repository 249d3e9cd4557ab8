//! Analytic gradients against central finite differences.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajconf_core::estimator::{
    loss_and_gradient, ClassWeights, EstimatorCheckpoint, EstimatorConfig, Normalization,
    TrainingExample,
};
use trajconf_core::trajectory::{tail_align, ConfidenceTrajectory};

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error. Central differences carry
/// roundoff of about `eps * loss / STEP` (~2e-11), so gradients far below
/// 1e-6 are compared absolutely instead.
const FLOOR: f64 = 1e-6;
const ONE_SIDED_TOL: f64 = 1e-3;

fn batch(rng: &mut ChaCha8Rng, l_max: usize, n: usize) -> Vec<TrainingExample> {
    (0..n)
        .map(|i| {
            let len = rng.random_range(1..=l_max + 3);
            let v: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..4.0)).collect();
            TrainingExample {
                question_id: "q".into(),
                trace_id: format!("t{i}"),
                aligned: tail_align(&ConfidenceTrajectory::new(v).unwrap(), l_max).unwrap(),
                correct: i % 2 == 0 || rng.random_bool(0.3),
            }
        })
        .collect()
}

struct Report {
    checked: usize,
    kinks: usize,
    worst: f64,
}

/// Compares every parameter's gradient against central differences.
fn check(config: EstimatorConfig, seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = Normalization {
        mean: 2.0,
        std: 1.1,
    };
    let mut ck = EstimatorCheckpoint::initialize(config.clone(), norm).unwrap();
    // non-zero biases so the bias paths are exercised
    let layout = ck.layout();
    for t in layout.tensors() {
        if t.name.ends_with("bias") {
            for p in &mut ck.params_mut()[t.range()] {
                *p = rng.random_range(-0.2..0.2);
            }
        }
    }
    let examples = batch(&mut rng, config.l_max, 4);
    let refs: Vec<&TrainingExample> = examples.iter().collect();
    let w = ClassWeights {
        positive: 0.8,
        negative: 1.3,
    };
    let (_, grad) = loss_and_gradient(&ck, &refs, w).unwrap();
    let loss_at = |ck: &EstimatorCheckpoint| loss_and_gradient(ck, &refs, w).unwrap().0;
    let base = loss_at(&ck);

    let mut report = Report {
        checked: 0,
        kinks: 0,
        worst: 0.0,
    };
    for i in 0..grad.len() {
        let orig = ck.params()[i];
        ck.params_mut()[i] = orig + STEP;
        let up = loss_at(&ck);
        ck.params_mut()[i] = orig - STEP;
        let down = loss_at(&ck);
        ck.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(FLOOR);
        if rel < REL_TOL {
            report.checked += 1;
            report.worst = report.worst.max(rel);
            continue;
        }
        // A ReLU kink inside the step: the two one-sided differences
        // disagree, and the analytic value must equal one of them (to the
        // O(step) accuracy of a one-sided difference).
        let fwd = (up - base) / STEP;
        let bwd = (base - down) / STEP;
        let close = |x: f64| (grad[i] - x).abs() / grad[i].abs().max(x.abs()).max(FLOOR) < ONE_SIDED_TOL;
        let one_sided = (fwd - bwd).abs() / fwd.abs().max(bwd.abs()).max(FLOOR);
        assert!(
            one_sided > ONE_SIDED_TOL && (close(fwd) || close(bwd)),
            "param {i}: analytic {} numeric {numeric} fwd {fwd} bwd {bwd}",
            grad[i]
        );
        report.kinks += 1;
    }
    report
}

fn small(l_max: usize, blocks: usize, seed: u64) -> EstimatorConfig {
    EstimatorConfig {
        channels: 3,
        blocks,
        kernel: 3,
        head_hidden: 4,
        seed,
        ..EstimatorConfig::new(l_max)
    }
}

#[test]
fn gradients_match_finite_differences_on_default_shape() {
    let cfg = EstimatorConfig {
        channels: 8,
        head_hidden: 6,
        seed: 11,
        ..EstimatorConfig::new(16)
    };
    let r = check(cfg, 11);
    assert!(r.kinks * 50 <= r.checked, "too many kinks: {} of {}", r.kinks, r.checked);
    assert!(r.worst < REL_TOL);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradients_match_finite_differences(
        l_max in prop::sample::select(vec![4usize, 8, 16]),
        blocks in 1usize..=2,
        seed in any::<u64>(),
    ) {
        let r = check(small(l_max, blocks, seed), seed);
        // one activation sitting within a step of zero puts every upstream
        // parameter on a kink, so only a majority of clean checks is required
        prop_assert!(r.kinks * 2 <= r.checked, "kinks {} of {}", r.kinks, r.checked);
        prop_assert!(r.worst < REL_TOL);
    }
}


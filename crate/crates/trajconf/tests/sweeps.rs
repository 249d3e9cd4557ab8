use trajconf::analysis::{run_sweep, SweepKind, SweepSpec};
use trajconf_core::baselines::bottom_group_conf;
use trajconf_core::dataset::Dataset;
use trajconf_core::estimator::EstimatorConfig;
use trajconf_core::metrics::{auc, LabeledScores};
use trajconf_core::synthetic::{generate, SignalKind, SyntheticSpec};

fn dataset(min_len: usize, max_len: usize, signal: SignalKind) -> Dataset {
    generate(&SyntheticSpec {
        questions: 40,
        traces_per_question: 8,
        min_len,
        max_len,
        signal,
        seed: 11,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn small(kind: SweepKind, grid: Vec<usize>) -> SweepSpec {
    SweepSpec {
        kind,
        grid,
        seeds: vec![0, 1],
        estimator: EstimatorConfig {
            channels: 4,
            head_hidden: 4,
            max_epochs: 3,
            ..EstimatorConfig::new(64)
        },
        ..SweepSpec::default()
    }
}

#[test]
fn length_sweep_has_one_record_per_seed_plus_baseline() {
    let d = dataset(40, 120, SignalKind::TailTrend);
    let r = run_sweep(&d, &small(SweepKind::Length, vec![8, 32, 256]), 1).unwrap();
    assert_eq!(r.records.len(), 3 * (2 + 1));
    // every method is scored on the same test traces
    assert!(r.records.iter().all(|x| x.n_test == r.test_traces));
    assert_eq!(r.flags.iter().map(|f| f.grid_value).collect::<Vec<_>>(), [256]);
    let row = r.summary_for("neuralconf", 32).unwrap();
    assert_eq!((row.records, row.auc.unwrap().n), (2, 2));
}

#[test]
fn grouping_sweep_records_and_degenerate_groups() {
    let d = dataset(20, 80, SignalKind::MeanShift);
    let spec = small(SweepKind::Grouping, vec![1, 4, 16, 100]);
    let r = run_sweep(&d, &spec, 1).unwrap();
    assert_eq!(r.records.len(), 4);
    let longest = d.traces().map(|t| t.trajectory.len()).max().unwrap();
    assert_eq!(r.flags.len(), usize::from(100 >= longest));
    for rec in &r.records {
        assert_eq!(rec.method, "bottom-group");
        assert!(rec.seed.is_none() && rec.dbi.is_none());
        assert_eq!(rec.n_test, r.test_traces);
    }
    // all singleton groups and one oversized group both reduce to the trace mean
    let all: Vec<_> = d.traces().collect();
    let labels: Vec<bool> = all.iter().map(|t| t.correct).collect();
    let g1: Vec<f64> = all.iter().map(|t| bottom_group_conf(&t.trajectory, 1, 1.0, 1).unwrap()).collect();
    let gbig: Vec<f64> = all.iter().map(|t| bottom_group_conf(&t.trajectory, 1000, 0.5, 3).unwrap()).collect();
    let a = auc(&LabeledScores::new(g1, labels.clone()).unwrap()).unwrap();
    let b = auc(&LabeledScores::new(gbig, labels).unwrap()).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn position_buckets_for_fixed_length_traces() {
    let d = dataset(256, 256, SignalKind::TailTrend);
    let mut spec = small(SweepKind::Position, vec![]);
    spec.seeds = vec![0];
    let r = run_sweep(&d, &spec, 1).unwrap();
    let positions: Vec<usize> = r.populations.iter().map(|p| p.position).collect();
    assert_eq!(positions, [32, 64, 96, 128, 160, 192, 224]);
    let total = d.trace_count();
    for p in &r.populations {
        assert_eq!(p.train + p.val + p.test, total);
    }
}

#[test]
fn head_tail_comparison_reports_both_alignments() {
    let d = dataset(60, 120, SignalKind::TailTrend);
    let r = run_sweep(&d, &small(SweepKind::HeadTail, vec![16, 32]), 1).unwrap();
    let mut methods = r.methods();
    methods.sort();
    assert_eq!(methods, ["head-aligned", "tail-aligned"]);
    assert_eq!(r.records.len(), 2 * 2 * 2);
}

#[test]
fn null_dataset_gives_chance_baseline() {
    let d = generate(&SyntheticSpec {
        questions: 100,
        traces_per_question: 8,
        signal: SignalKind::None,
        min_len: 32,
        max_len: 64,
        seed: 3,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let r = run_sweep(&d, &small(SweepKind::Grouping, vec![8]), 1).unwrap();
    let a = r.records[0].auc.unwrap();
    assert!((a - 0.5).abs() < 0.1, "{a}");
}

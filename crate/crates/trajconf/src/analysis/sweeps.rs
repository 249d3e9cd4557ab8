use std::collections::BTreeMap;

use trajconf_core::baselines::{bottom_group_conf, tail_conf};
use trajconf_core::dataset::{split_questions, Dataset, QuestionGroup, Split};
use trajconf_core::estimator::{
    head_examples, tail_examples, train, EstimatorCheckpoint, EstimatorConfig, TrainingExample,
    TrainingOutcome,
};
use trajconf_core::metrics::{auc, dbi, threshold_accuracy, EmbeddingSet, LabeledScores};
use trajconf_core::trajectory::sliding_windows;

use super::{
    summarize, BucketPopulation, CheckpointPolicy, GridNote, SweepKind, SweepRecord, SweepResult,
    SweepSpec,
};
use crate::error::{Error, Result};
use crate::jobs::parallel_map;

struct Splits {
    train: Vec<QuestionGroup>,
    val: Vec<QuestionGroup>,
    test: Vec<QuestionGroup>,
}

fn prepare(dataset: &Dataset, spec: &SweepSpec) -> Result<Splits> {
    if spec.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let data = if spec.min_length > 0 {
        dataset.filter_min_length(spec.min_length)
    } else {
        dataset.clone()
    };
    let assignment = split_questions(&data.groups, spec.split, spec.split_seed)?;
    let s = Splits {
        train: data.subset(&assignment, Split::Train),
        val: data.subset(&assignment, Split::Val),
        test: data.subset(&assignment, Split::Test),
    };
    let labels = |g: &[QuestionGroup]| -> (usize, usize) {
        let pos = g.iter().flat_map(|g| &g.traces).filter(|t| t.correct).count();
        let n = g.iter().map(|g| g.traces.len()).sum::<usize>();
        (pos, n)
    };
    let (pos, n) = labels(&s.test);
    if pos == 0 || pos == n {
        return Err(Error::Config(format!(
            "test split has {n} traces of a single class; AUC is undefined"
        )));
    }
    Ok(s)
}

/// Test-set metrics of one scorer.
struct Eval {
    auc: Option<f64>,
    dbi: Option<f64>,
    accuracy: Option<f64>,
    n: usize,
    n_pos: usize,
}

fn eval_scores(scores: Vec<f64>, labels: Vec<bool>, threshold: Option<f64>) -> Result<Eval> {
    let data = LabeledScores::new(scores, labels)?;
    Ok(Eval {
        auc: auc(&data).ok(),
        dbi: None,
        accuracy: threshold.map(|t| threshold_accuracy(&data, t)),
        n: data.len(),
        n_pos: data.positives(),
    })
}

fn eval_checkpoint(ck: &EstimatorCheckpoint, test: &[TrainingExample], threshold: f64) -> Result<Eval> {
    let outs = ck.score_all(test.iter().map(|e| &e.aligned))?;
    let labels: Vec<bool> = test.iter().map(|e| e.correct).collect();
    let mut emb = EmbeddingSet::new(ck.config().channels);
    for (o, &l) in outs.iter().zip(&labels) {
        emb.push(&o.embedding, l)?;
    }
    let scores = outs.iter().map(|o| o.score).collect();
    let mut e = eval_scores(scores, labels, Some(threshold))?;
    e.dbi = dbi(&emb).ok();
    Ok(e)
}

fn neural_record(grid_value: usize, method: &str, seed: Option<u64>, e: Eval, t: Option<&TrainingOutcome>) -> SweepRecord {
    SweepRecord {
        grid_value,
        method: method.to_owned(),
        seed,
        auc: e.auc,
        dbi: e.dbi,
        threshold_accuracy: e.accuracy,
        n_test: e.n,
        n_positive: e.n_pos,
        best_epoch: t.map(|t| t.best_epoch),
        val_auc: t.map(|t| t.best_val_auc),
    }
}

fn config_for(spec: &SweepSpec, l_max: usize, seed: u64) -> EstimatorConfig {
    EstimatorConfig {
        l_max,
        seed,
        ..spec.estimator.clone()
    }
}

type Align = fn(&[QuestionGroup], usize) -> trajconf_core::Result<Vec<TrainingExample>>;

fn train_eval(spec: &SweepSpec, s: &Splits, l_max: usize, seed: u64, align: Align) -> Result<(TrainingOutcome, Eval)> {
    let tr = align(&s.train, l_max)?;
    let va = align(&s.val, l_max)?;
    let te = align(&s.test, l_max)?;
    let outcome = train(&config_for(spec, l_max, seed), &tr, &va)?;
    let e = eval_checkpoint(&outcome.checkpoint, &te, spec.threshold)?;
    Ok((outcome, e))
}

fn check_grid(spec: &SweepSpec) -> Result<()> {
    if spec.grid.is_empty() || spec.grid.contains(&0) {
        return Err(Error::Config("grid must be non-empty with positive values".into()));
    }
    Ok(())
}

fn finish(spec: &SweepSpec, records: Vec<SweepRecord>, s: &Splits) -> SweepResult {
    SweepResult {
        spec: spec.clone(),
        summary: summarize(&records),
        records,
        flags: Vec::new(),
        skipped: Vec::new(),
        populations: Vec::new(),
        test_traces: s.test.iter().map(|g| g.traces.len()).sum(),
    }
}

fn length_flags(spec: &SweepSpec, dataset: &Dataset) -> Vec<GridNote> {
    let longest = dataset.traces().map(|t| t.trajectory.len()).max().unwrap_or(0);
    spec.grid
        .iter()
        .filter(|&&l| l > longest)
        .map(|&l| GridNote {
            grid_value: l,
            note: format!("exceeds every trace length (longest {longest}); inputs are mostly padding"),
        })
        .collect()
}

/// NeuralConf on tail-aligned inputs per grid length and seed, plus the
/// tail-mean baseline at the matching tail length on the same test traces.
pub fn length_sweep(dataset: &Dataset, spec: &SweepSpec, workers: usize) -> Result<SweepResult> {
    check_grid(spec)?;
    let s = prepare(dataset, spec)?;
    let mut records = Vec::new();

    match spec.policy {
        CheckpointPolicy::Retrain => {
            let jobs: Vec<(usize, u64)> = spec
                .grid
                .iter()
                .flat_map(|&l| spec.seeds.iter().map(move |&seed| (l, seed)))
                .collect();
            let results = parallel_map(&jobs, workers, |_, &(l, seed)| {
                log::info!("length sweep: L_max={l} seed={seed}");
                train_eval(spec, &s, l, seed, tail_examples)
            });
            for (&(l, seed), r) in jobs.iter().zip(results) {
                let (outcome, e) = r?;
                records.push(neural_record(l, "neuralconf", Some(seed), e, Some(&outcome)));
            }
        }
        CheckpointPolicy::Fixed => {
            let reference = *spec.grid.iter().max().expect("non-empty grid");
            let results = parallel_map(&spec.seeds, workers, |_, &seed| -> Result<Vec<SweepRecord>> {
                log::info!("length sweep (fixed): training at L_max={reference} seed={seed}");
                let tr = tail_examples(&s.train, reference)?;
                let va = tail_examples(&s.val, reference)?;
                let outcome = train(&config_for(spec, reference, seed), &tr, &va)?;
                let mut out = Vec::new();
                for &l in &spec.grid {
                    let ck = outcome.checkpoint.with_l_max(l)?;
                    let te = tail_examples(&s.test, l)?;
                    let e = eval_checkpoint(&ck, &te, spec.threshold)?;
                    out.push(neural_record(l, "neuralconf", Some(seed), e, Some(&outcome)));
                }
                Ok(out)
            });
            let mut per_seed = Vec::new();
            for r in results {
                per_seed.push(r?);
            }
            // grid-major order, matching the retrain policy
            for i in 0..spec.grid.len() {
                for recs in &per_seed {
                    records.push(recs[i].clone());
                }
            }
        }
    }

    let test: Vec<_> = s.test.iter().flat_map(|g| &g.traces).collect();
    let labels: Vec<bool> = test.iter().map(|t| t.correct).collect();
    for &l in &spec.grid {
        let scores = test.iter().map(|t| tail_conf(&t.trajectory, l)).collect();
        let e = eval_scores(scores, labels.clone(), None)?;
        records.push(neural_record(l, "tailconf", None, e, None));
    }
    records.sort_by_key(|r| spec.grid.iter().position(|&g| g == r.grid_value));

    let mut result = finish(spec, records, &s);
    result.flags = length_flags(spec, dataset);
    Ok(result)
}

/// Matched tail- and head-aligned runs per grid length and seed.
pub fn head_tail_comparison(dataset: &Dataset, spec: &SweepSpec, workers: usize) -> Result<SweepResult> {
    check_grid(spec)?;
    let s = prepare(dataset, spec)?;
    let jobs: Vec<(usize, u64, bool)> = spec
        .grid
        .iter()
        .flat_map(|&l| {
            spec.seeds
                .iter()
                .flat_map(move |&seed| [(l, seed, true), (l, seed, false)])
        })
        .collect();
    let results = parallel_map(&jobs, workers, |_, &(l, seed, tail)| {
        log::info!("head-tail: L_max={l} seed={seed} {}", if tail { "tail" } else { "head" });
        train_eval(spec, &s, l, seed, if tail { tail_examples } else { head_examples })
    });
    let mut records = Vec::new();
    for (&(l, seed, tail), r) in jobs.iter().zip(results) {
        let (outcome, e) = r?;
        let method = if tail { "tail-aligned" } else { "head-aligned" };
        records.push(neural_record(l, method, Some(seed), e, Some(&outcome)));
    }
    let mut result = finish(spec, records, &s);
    result.flags = length_flags(spec, dataset);
    Ok(result)
}

/// Bottom-group baseline AUC on the test traces per grouping length.
pub fn grouping_length_sweep(dataset: &Dataset, spec: &SweepSpec) -> Result<SweepResult> {
    check_grid(spec)?;
    let s = prepare(dataset, spec)?;
    let test: Vec<_> = s.test.iter().flat_map(|g| &g.traces).collect();
    let labels: Vec<bool> = test.iter().map(|t| t.correct).collect();
    let mut records = Vec::new();
    for &g in &spec.grid {
        let scores = test
            .iter()
            .map(|t| bottom_group_conf(&t.trajectory, g, spec.bottom_fraction, spec.group_stride))
            .collect::<trajconf_core::Result<Vec<_>>>()?;
        let e = eval_scores(scores, labels.clone(), None)?;
        records.push(neural_record(g, "bottom-group", None, e, None));
    }
    let mut result = finish(spec, records, &s);
    let longest = dataset.traces().map(|t| t.trajectory.len()).max().unwrap_or(0);
    result.flags = spec
        .grid
        .iter()
        .filter(|&&g| g >= longest)
        .map(|&g| GridNote {
            grid_value: g,
            note: "grouping length covers every trace; scores equal whole-trace means".into(),
        })
        .collect();
    Ok(result)
}

type Buckets = BTreeMap<usize, Vec<TrainingExample>>;

fn window_buckets(groups: &[QuestionGroup], spec: &SweepSpec) -> Result<Buckets> {
    let mut out: Buckets = BTreeMap::new();
    for t in groups.iter().flat_map(|g| &g.traces) {
        if spec.drop_short && t.trajectory.len() < spec.window {
            continue;
        }
        for w in sliding_windows(&t.trajectory, spec.window, spec.window_stride)? {
            out.entry(w.position).or_default().push(TrainingExample {
                question_id: t.question_id.clone(),
                trace_id: t.trace_id.clone(),
                aligned: w.aligned,
                correct: t.correct,
            });
        }
    }
    Ok(out)
}

fn both_classes(ex: &[TrainingExample]) -> bool {
    ex.iter().any(|e| e.correct) && ex.iter().any(|e| !e.correct)
}

/// Per distance-from-end bucket of fixed windows: an estimator trained and
/// tested on that bucket's windows (or one shared model across buckets).
pub fn window_position_analysis(dataset: &Dataset, spec: &SweepSpec, workers: usize) -> Result<SweepResult> {
    if spec.window == 0 || spec.window_stride == 0 {
        return Err(Error::Config("window size and stride must be positive".into()));
    }
    let s = prepare(dataset, spec)?;
    let train_b = window_buckets(&s.train, spec)?;
    let val_b = window_buckets(&s.val, spec)?;
    let test_b = window_buckets(&s.test, spec)?;
    let empty = Vec::new();

    let mut positions: Vec<usize> = train_b.keys().chain(val_b.keys()).chain(test_b.keys()).copied().collect();
    positions.sort_unstable();
    positions.dedup();

    let mut populations = Vec::new();
    let mut skipped = Vec::new();
    let mut usable = Vec::new();
    for &p in &positions {
        let (tr, va, te) = (
            train_b.get(&p).unwrap_or(&empty),
            val_b.get(&p).unwrap_or(&empty),
            test_b.get(&p).unwrap_or(&empty),
        );
        populations.push(BucketPopulation {
            position: p,
            train: tr.len(),
            val: va.len(),
            test: te.len(),
        });
        let need_train = !spec.share_position_model;
        let ok = both_classes(te) && (!need_train || (both_classes(tr) && both_classes(va)));
        if ok {
            usable.push(p);
        } else {
            let note = format!(
                "bucket lacks both classes (train {}, val {}, test {} windows); skipped",
                tr.len(),
                va.len(),
                te.len()
            );
            log::warn!("position {p}: {note}");
            skipped.push(GridNote { grid_value: p, note });
        }
    }

    let mut records = Vec::new();
    let l = spec.window;
    if spec.share_position_model {
        let all = |b: &Buckets| -> Vec<TrainingExample> { b.values().flatten().cloned().collect() };
        let (tr, va) = (all(&train_b), all(&val_b));
        let results = parallel_map(&spec.seeds, workers, |_, &seed| -> Result<Vec<SweepRecord>> {
            log::info!("position sweep (shared model): seed={seed}");
            let outcome = train(&config_for(spec, l, seed), &tr, &va)?;
            usable
                .iter()
                .map(|p| {
                    let e = eval_checkpoint(&outcome.checkpoint, &test_b[p], spec.threshold)?;
                    Ok(neural_record(*p, "neuralconf", Some(seed), e, Some(&outcome)))
                })
                .collect()
        });
        let per_seed = results.into_iter().collect::<Result<Vec<_>>>()?;
        for i in 0..usable.len() {
            for recs in &per_seed {
                records.push(recs[i].clone());
            }
        }
    } else {
        let jobs: Vec<(usize, u64)> = usable
            .iter()
            .flat_map(|&p| spec.seeds.iter().map(move |&seed| (p, seed)))
            .collect();
        let results = parallel_map(&jobs, workers, |_, &(p, seed)| {
            log::info!("position sweep: bucket {p} seed={seed}");
            let outcome = train(&config_for(spec, l, seed), &train_b[&p], &val_b[&p])?;
            let e = eval_checkpoint(&outcome.checkpoint, &test_b[&p], spec.threshold)?;
            Ok::<_, Error>(neural_record(p, "neuralconf", Some(seed), e, Some(&outcome)))
        });
        for r in results {
            records.push(r?);
        }
    }

    let mut result = finish(spec, records, &s);
    result.skipped = skipped;
    result.populations = populations;
    Ok(result)
}

pub fn run_sweep(dataset: &Dataset, spec: &SweepSpec, workers: usize) -> Result<SweepResult> {
    match spec.kind {
        SweepKind::Length => length_sweep(dataset, spec, workers),
        SweepKind::Position => window_position_analysis(dataset, spec, workers),
        SweepKind::HeadTail => head_tail_comparison(dataset, spec, workers),
        SweepKind::Grouping => grouping_length_sweep(dataset, spec),
    }
}

//! Builds problem instances and solver settings from a spec and runs them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use qnbo::lower::estimate_smoothness;
use qnbo::problems::hyperclean::clip_weight;
use qnbo::problems::{
    corrupt_labels, load_csv, load_libsvm, make_hyperclean, make_logreg,
    make_synthetic_classification, make_toy, Dataset, HyperCleanProblem, LogRegHpo, QuadraticToy,
    SyntheticSpec,
};
use qnbo::{
    solve_lower, BilevelProblem, CgConfig, DirectionConfig, Estimator, InitScale, IterateState,
    LowerSolveConfig, NeumannConfig, QSchedule, QnMode, QnboConfig, QnboRun, Selection,
    TraceRecord, XiRule,
};
use rayon::prelude::*;

use crate::config::{
    DataFormat, ExperimentSpec, Method, ProblemSpec, Schedule, SelectionSpec, XiName, XiSpec,
};
use crate::error::{BenchError, Result};
use crate::output::TraceWriter;

/// Overrides every spec's `out_path` when set.
pub const OUT_DIR_ENV: &str = "QNBO_OUT_DIR";

const CORRUPTION_SEED_MIX: u64 = 0x5eed_c0de;
const SMOOTHNESS_ITERS: usize = 50;

pub enum Instance {
    Toy(QuadraticToy<f64>),
    Logreg(LogRegHpo<f64>),
    Hyperclean {
        problem: HyperCleanProblem<f64>,
        /// Training samples whose label was changed by the corruption step.
        corrupted: Vec<bool>,
    },
}

impl Instance {
    pub fn problem(&self) -> &dyn BilevelProblem<f64> {
        match self {
            Instance::Toy(p) => p,
            Instance::Logreg(p) => p,
            Instance::Hyperclean { problem, .. } => problem,
        }
    }

    /// Problem-specific end-of-run metrics.
    pub fn metrics(&self, state: &IterateState<f64>) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        match self {
            Instance::Toy(_) => {}
            Instance::Logreg(p) => {
                m.insert(
                    "val_accuracy".into(),
                    LogRegHpo::accuracy(p.val(), &state.y),
                );
            }
            Instance::Hyperclean { problem, corrupted } => {
                m.insert(
                    "val_accuracy".into(),
                    problem.accuracy(problem.val(), &state.y),
                );
                let mean = |want: bool| {
                    let w: Vec<f64> = state
                        .x
                        .iter()
                        .zip(corrupted)
                        .filter(|(_, &c)| c == want)
                        .map(|(&x, _)| clip_weight(x))
                        .collect();
                    (!w.is_empty()).then(|| w.iter().sum::<f64>() / w.len() as f64)
                };
                if let Some(v) = mean(true) {
                    m.insert("weight_corrupted".into(), v);
                }
                if let Some(v) = mean(false) {
                    m.insert("weight_clean".into(), v);
                }
            }
        }
        m
    }
}

/// A problem instance with its starting point and smoothness estimate.
pub struct Prepared {
    pub instance: Instance,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub l_hat: f64,
}

fn load_dataset(path: &Path, format: DataFormat, header: bool) -> Result<Dataset<f64>> {
    let loaded = match format {
        DataFormat::Libsvm => load_libsvm(path),
        DataFormat::Csv => load_csv(path, header),
    };
    loaded.map_err(|e| match e {
        qnbo::QnboError::Io(io) => BenchError::io(path, io),
        other => BenchError::config(path.display().to_string(), other.to_string()),
    })
}

fn solver_err(run: &str) -> impl Fn(qnbo::QnboError) -> BenchError + '_ {
    move |e| BenchError::from_solver(run, e)
}

/// Instance for repeat `r` (seed `base_seed + r`).
pub fn prepare(spec: &ExperimentSpec, repeat: usize) -> Result<Prepared> {
    let seed = spec.base_seed.wrapping_add(repeat as u64);
    let run = run_label(spec, repeat);
    let err = solver_err(&run);
    let (instance, x0) = match &spec.problem {
        ProblemSpec::Toy { n, x0, .. } => (
            Instance::Toy(make_toy(*n, seed).map_err(&err)?),
            vec![*x0; *n],
        ),
        ProblemSpec::Logreg {
            train_path,
            val_path,
            format,
            csv_header,
            n_train,
            n_val,
            n_features,
            label_noise,
            x0,
        } => {
            let (train, val) = match (train_path, val_path) {
                (Some(t), Some(v)) => (
                    load_dataset(t, *format, *csv_header)?,
                    load_dataset(v, *format, *csv_header)?,
                ),
                _ => make_synthetic_classification(
                    n_train + n_val,
                    *n_features,
                    2,
                    *label_noise,
                    seed,
                )
                .map_err(&err)?
                .split_at(*n_train),
            };
            let train = train.to_signed_binary().map_err(&err)?;
            let val = val.to_signed_binary().map_err(&err)?;
            (
                Instance::Logreg(make_logreg(train, val).map_err(&err)?),
                vec![*x0],
            )
        }
        ProblemSpec::Hyperclean {
            train_path,
            val_path,
            format,
            csv_header,
            n_train,
            n_val,
            n_features,
            n_classes,
            separation,
            corruption,
            ridge,
            x0,
            ..
        } => {
            let (mut train, val) = match (train_path, val_path) {
                (Some(t), Some(v)) => (
                    load_dataset(t, *format, *csv_header)?,
                    load_dataset(v, *format, *csv_header)?,
                ),
                _ => SyntheticSpec {
                    n_samples: n_train + n_val,
                    n_features: *n_features,
                    n_classes: *n_classes,
                    separation: *separation,
                    seed,
                }
                .generate()
                .map_err(&err)?
                .split_at(*n_train),
            };
            let classes = train.n_classes().max(val.n_classes());
            let corrupted =
                corrupt_labels(&mut train, *corruption, classes, seed ^ CORRUPTION_SEED_MIX)
                    .map_err(&err)?;
            let n = train.len();
            let problem = make_hyperclean(train, val, *ridge).map_err(&err)?;
            (Instance::Hyperclean { problem, corrupted }, vec![*x0; n])
        }
    };

    let p = instance.problem();
    let mut y0 = match &spec.problem {
        ProblemSpec::Toy { n, y0, .. } => vec![*y0; *n],
        _ => vec![0.0; p.dim_y()],
    };
    let l_hat = match (spec.solver.smoothness, p.constants()) {
        (Some(l), _) => l,
        (None, Some(c)) => c.l,
        (None, None) => estimate_smoothness(p, &x0, &y0, SMOOTHNESS_ITERS, seed).map_err(&err)?,
    };
    if let ProblemSpec::Hyperclean { pretrain_steps, .. } = &spec.problem {
        if *pretrain_steps > 0 {
            let h0 = InitScale::new(1.0 / l_hat).map_err(&err)?;
            let cfg = LowerSolveConfig {
                warmup_steps: 0,
                qn_steps: *pretrain_steps,
                h0,
                mode: qn_mode(spec.method),
                ..LowerSolveConfig::from_smoothness(l_hat).map_err(&err)?
            };
            y0 = solve_lower(p, &x0, &y0, &cfg).map_err(&err)?.y_final;
        }
    }
    Ok(Prepared {
        instance,
        x0,
        y0,
        l_hat,
    })
}

fn qn_mode(method: Method) -> QnMode {
    match method {
        Method::QnboSr1 => QnMode::Sr1,
        _ => QnMode::Bfgs,
    }
}

/// Solver settings for `spec`, given the smoothness estimate `L̂`.
pub fn solver_config(spec: &ExperimentSpec, l_hat: f64) -> Result<QnboConfig<f64>> {
    let s = &spec.solver;
    let err = |e: qnbo::QnboError| BenchError::config(spec.name.clone(), e.to_string());
    let h0 = InitScale::new(s.h0.resolve(l_hat)).map_err(err)?;
    let mode = qn_mode(spec.method);
    let lower = LowerSolveConfig {
        beta: s.beta.resolve(l_hat),
        gamma: s.gamma,
        warmup_steps: s.warmup_steps,
        qn_steps: s.qn_steps,
        h0,
        mode,
        grad_tol: s.grad_tol,
        memory: s.memory,
    };
    let mut cfg = QnboConfig::new(s.alpha, lower, s.outer_steps);
    cfg.direction = DirectionConfig {
        xi_rule: match s.xi {
            XiSpec::Const(v) => XiRule::Const(v),
            XiSpec::Rule(XiName::One) => XiRule::One,
            XiSpec::Rule(XiName::NormU) => XiRule::NormU,
        },
        h0,
        mode,
        selection: match s.selection {
            SelectionSpec::Last => Selection::Last,
            SelectionSpec::BestResidual => Selection::BestResidual,
        },
        dense_after: s.dense_after,
        ..DirectionConfig::default()
    };
    cfg.q_schedule = match (s.q_schedule, s.q) {
        (Schedule::Linear, _) => QSchedule::Linear,
        (Schedule::Const, Some(q)) => QSchedule::Const(q),
        (Schedule::CappedLinear, Some(q)) => QSchedule::CappedLinear(q),
        _ => {
            return Err(BenchError::config(
                spec.name.clone(),
                "schedule needs solver.q",
            ))
        }
    };
    cfg.warm_start_u = s.warm_start_u;
    cfg.exact_diagnostics = s.exact_diagnostics;
    cfg.estimator = match spec.method {
        Method::QnboBfgs | Method::QnboSr1 => Estimator::QuasiNewton,
        Method::CgBaseline => Estimator::Cg(CgConfig {
            max_iters: s.cg_max_iters.unwrap_or(0),
            residual_tol: s.cg_tol,
        }),
        Method::NeumannBaseline => Estimator::Neumann(NeumannConfig {
            terms: s.neumann_terms.unwrap_or(0),
            step: s.neumann_step.resolve(l_hat),
        }),
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

pub fn run_label(spec: &ExperimentSpec, repeat: usize) -> String {
    format!("{}#{}", spec.name, repeat)
}

/// Directory for a spec's output, honouring [`OUT_DIR_ENV`].
pub fn out_dir(spec: &ExperimentSpec) -> PathBuf {
    out_dir_with(spec, None)
}

fn out_dir_with(spec: &ExperimentSpec, forced: Option<&Path>) -> PathBuf {
    if let Some(d) = forced {
        return d.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => spec.out_path.clone(),
    }
}

pub fn trace_path(dir: &Path, spec: &ExperimentSpec, repeat: usize) -> PathBuf {
    dir.join(format!("{}_r{}.csv", spec.name, repeat))
}

#[derive(Debug, Clone)]
pub struct RepeatResult {
    pub repeat: usize,
    pub seed: u64,
    pub l_hat: f64,
    pub trace: Vec<TraceRecord<f64>>,
    pub state: IterateState<f64>,
    /// Metrics at the starting point, after any pretraining.
    pub initial_metrics: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, f64>,
    pub trace_path: Option<PathBuf>,
}

/// Runs one repeat, streaming the trace to `dir` when given. A failing step
/// still leaves the rows produced so far on disk.
pub fn run_repeat(
    spec: &ExperimentSpec,
    repeat: usize,
    dir: Option<&Path>,
) -> Result<RepeatResult> {
    let run = run_label(spec, repeat);
    let seed = spec.base_seed.wrapping_add(repeat as u64);
    let prepared = prepare(spec, repeat)?;
    let cfg = solver_config(spec, prepared.l_hat)?;
    let p = prepared.instance.problem();

    let mut writer = match dir {
        Some(d) => Some(TraceWriter::create(
            trace_path(d, spec, repeat),
            &[
                format!(
                    "qnbo-bench spec_version={} name={} method={} problem={}",
                    spec.spec_version,
                    spec.name,
                    spec.method.as_str(),
                    spec.problem.kind()
                ),
                format!(
                    "repeat={repeat} seed={seed} outer_steps={} l_hat={:e}",
                    spec.solver.outer_steps, prepared.l_hat
                ),
            ],
        )?),
        None => None,
    };

    let mut solver =
        QnboRun::new(p, prepared.x0.clone(), prepared.y0.clone(), cfg).map_err(solver_err(&run))?;
    let mut trace = Vec::with_capacity(spec.solver.outer_steps);
    let mut failure = None;
    for _ in 0..spec.solver.outer_steps {
        match solver.step() {
            Ok(rec) => {
                if let Some(w) = writer.as_mut() {
                    w.push(&rec)?;
                }
                trace.push(rec);
            }
            Err(e) => {
                failure = Some(BenchError::from_solver(&run, e));
                break;
            }
        }
    }
    let trace_path = writer.map(TraceWriter::commit).transpose()?;
    if let Some(e) = failure {
        return Err(e);
    }
    let state = solver.state().clone();
    Ok(RepeatResult {
        repeat,
        seed,
        l_hat: prepared.l_hat,
        initial_metrics: prepared
            .instance
            .metrics(&IterateState::new(prepared.x0.clone(), prepared.y0.clone())),
        metrics: prepared.instance.metrics(&state),
        trace,
        state,
        trace_path,
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stream traces into each spec's output directory.
    pub write: bool,
    /// Worker threads; `Some(1)` runs sequentially, `None` uses the rayon default.
    pub jobs: Option<usize>,
    /// Takes precedence over both the environment and `out_path`.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub repeats: Vec<RepeatResult>,
}

/// Runs every repeat of every spec. Jobs are independent and seeded, so the
/// result does not depend on the thread count.
pub fn run_all(specs: &[ExperimentSpec], opts: &RunOptions) -> Result<Vec<ExperimentReport>> {
    let jobs: Vec<(usize, usize)> = specs
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.repeats).map(move |r| (i, r)))
        .collect();
    let dirs: Vec<Option<PathBuf>> = specs
        .iter()
        .map(|s| opts.write.then(|| out_dir_with(s, opts.out_dir.as_deref())))
        .collect();
    let one = |&(i, r): &(usize, usize)| run_repeat(&specs[i], r, dirs[i].as_deref());
    let results: Vec<Result<RepeatResult>> = match opts.jobs {
        Some(1) => jobs.iter().map(one).collect(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| BenchError::config("--jobs", e.to_string()))?
            .install(|| jobs.par_iter().map(one).collect()),
        None => jobs.par_iter().map(one).collect(),
    };
    let mut reports: Vec<ExperimentReport> = specs
        .iter()
        .map(|s| ExperimentReport {
            spec: s.clone(),
            repeats: Vec::with_capacity(s.repeats),
        })
        .collect();
    for ((i, _), res) in jobs.into_iter().zip(results) {
        reports[i].repeats.push(res?);
    }
    Ok(reports)
}

pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<ExperimentReport> {
    Ok(run_all(std::slice::from_ref(spec), opts)?.remove(0))
}

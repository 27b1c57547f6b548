//! Experiment files: one TOML document per experiment, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{BenchError, Result};

pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    QnboBfgs,
    QnboSr1,
    CgBaseline,
    NeumannBaseline,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::QnboBfgs => "qnbo_bfgs",
            Method::QnboSr1 => "qnbo_sr1",
            Method::CgBaseline => "cg_baseline",
            Method::NeumannBaseline => "neumann_baseline",
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Method::CgBaseline | Method::NeumannBaseline)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    #[default]
    Libsvm,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Quadratic toy; the instance seed is `base_seed + repeat`.
    Toy {
        n: usize,
        #[serde(default = "defaults::toy_start")]
        x0: f64,
        #[serde(default = "defaults::toy_start")]
        y0: f64,
    },
    /// Scalar ridge tuning. Reads `train_path`/`val_path` when given, otherwise
    /// generates a two-class synthetic set.
    Logreg {
        train_path: Option<PathBuf>,
        val_path: Option<PathBuf>,
        #[serde(default)]
        format: DataFormat,
        #[serde(default)]
        csv_header: bool,
        #[serde(default = "defaults::logreg_train")]
        n_train: usize,
        #[serde(default = "defaults::logreg_val")]
        n_val: usize,
        #[serde(default = "defaults::logreg_features")]
        n_features: usize,
        #[serde(default)]
        label_noise: f64,
        #[serde(default)]
        x0: f64,
    },
    /// Data hyper-cleaning. Synthetic clusters unless paths are given; label
    /// corruption applies to the training split only.
    Hyperclean {
        train_path: Option<PathBuf>,
        val_path: Option<PathBuf>,
        #[serde(default)]
        format: DataFormat,
        #[serde(default)]
        csv_header: bool,
        #[serde(default = "defaults::hc_train")]
        n_train: usize,
        #[serde(default = "defaults::hc_val")]
        n_val: usize,
        #[serde(default = "defaults::hc_features")]
        n_features: usize,
        #[serde(default = "defaults::hc_classes")]
        n_classes: usize,
        #[serde(default = "defaults::hc_separation")]
        separation: f64,
        #[serde(default = "defaults::hc_corruption")]
        corruption: f64,
        #[serde(default = "defaults::hc_ridge")]
        ridge: f64,
        #[serde(default = "defaults::hc_x0")]
        x0: f64,
        /// Lower-level quasi-Newton steps at `x0` before the outer loop starts.
        #[serde(default)]
        pretrain_steps: usize,
    },
}

impl ProblemSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemSpec::Toy { .. } => "toy",
            ProblemSpec::Logreg { .. } => "logreg",
            ProblemSpec::Hyperclean { .. } => "hyperclean",
        }
    }
}

/// A positive scale given either as a number or as `"inverse_smoothness"` (`1/L̂`).
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Scale {
    Value(f64),
    Rule(ScaleRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleRule {
    InverseSmoothness,
}

impl Scale {
    pub fn resolve(self, l_hat: f64) -> f64 {
        match self {
            Scale::Value(v) => v,
            Scale::Rule(ScaleRule::InverseSmoothness) => 1.0 / l_hat,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Const,
    Linear,
    CappedLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum XiSpec {
    Const(f64),
    Rule(XiName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiName {
    One,
    NormU,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionSpec {
    #[default]
    Last,
    BestResidual,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub alpha: f64,
    pub outer_steps: usize,
    #[serde(default = "defaults::schedule")]
    pub q_schedule: Schedule,
    /// Constant `Q`, or the cap for `capped_linear`.
    pub q: Option<usize>,
    #[serde(default = "defaults::warmup")]
    pub warmup_steps: usize,
    #[serde(default = "defaults::qn_steps")]
    pub qn_steps: usize,
    #[serde(default = "defaults::inverse_smoothness")]
    pub beta: Scale,
    #[serde(default = "defaults::one")]
    pub gamma: f64,
    #[serde(default = "defaults::unit")]
    pub h0: Scale,
    #[serde(default = "defaults::xi")]
    pub xi: XiSpec,
    #[serde(default)]
    pub selection: SelectionSpec,
    pub dense_after: Option<usize>,
    #[serde(default)]
    pub warm_start_u: bool,
    pub grad_tol: Option<f64>,
    pub memory: Option<usize>,
    #[serde(default = "defaults::yes")]
    pub exact_diagnostics: bool,
    /// Overrides the smoothness estimate `L̂`.
    pub smoothness: Option<f64>,
    pub cg_max_iters: Option<usize>,
    #[serde(default)]
    pub cg_tol: f64,
    pub neumann_terms: Option<usize>,
    #[serde(default = "defaults::inverse_smoothness")]
    pub neumann_step: Scale,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub spec_version: u32,
    pub name: String,
    pub method: Method,
    #[serde(default = "defaults::repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub out_path: PathBuf,
    /// Iterations-to-threshold cut-off on `hypergrad_err` (or `‖∇̃Φ‖` when no exact oracle).
    pub threshold: Option<f64>,
    pub problem: ProblemSpec,
    pub solver: SolverSpec,
}

mod defaults {
    use super::*;

    pub fn toy_start() -> f64 {
        2.0
    }
    pub fn logreg_train() -> usize {
        200
    }
    pub fn logreg_val() -> usize {
        200
    }
    pub fn logreg_features() -> usize {
        20
    }
    pub fn hc_train() -> usize {
        2000
    }
    pub fn hc_val() -> usize {
        500
    }
    pub fn hc_features() -> usize {
        100
    }
    pub fn hc_classes() -> usize {
        10
    }
    pub fn hc_separation() -> f64 {
        0.5
    }
    pub fn hc_corruption() -> f64 {
        0.5
    }
    pub fn hc_ridge() -> f64 {
        qnbo::problems::hyperclean::DEFAULT_RIDGE
    }
    pub fn hc_x0() -> f64 {
        0.5
    }
    pub fn schedule() -> Schedule {
        Schedule::Linear
    }
    pub fn warmup() -> usize {
        1
    }
    pub fn qn_steps() -> usize {
        15
    }
    pub fn inverse_smoothness() -> Scale {
        Scale::Rule(ScaleRule::InverseSmoothness)
    }
    pub fn unit() -> Scale {
        Scale::Value(1.0)
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn xi() -> XiSpec {
        XiSpec::Rule(XiName::One)
    }
    pub fn yes() -> bool {
        true
    }
    pub fn repeats() -> usize {
        1
    }
}

impl ExperimentSpec {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| BenchError::config(origin, e.to_string()))?;
        spec.validate(origin)?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        let mut spec = Self::parse(&text, &path.display().to_string())?;
        // data paths are relative to the spec file
        if let Some(dir) = path.parent() {
            spec.problem.rebase(dir);
        }
        Ok(spec)
    }

    fn validate(&self, origin: &str) -> Result<()> {
        let bad = |m: String| Err(BenchError::config(origin, m));
        if self.spec_version != SPEC_VERSION {
            return bad(format!(
                "spec_version {} is not supported (expected {SPEC_VERSION})",
                self.spec_version
            ));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!(
                "name '{}' must be non-empty and contain no path separators",
                self.name
            ));
        }
        if self.repeats == 0 {
            return bad("repeats must be ≥ 1".into());
        }
        let s = &self.solver;
        if !(s.alpha > 0.0) || !s.alpha.is_finite() {
            return bad(format!("solver.alpha must be positive, got {}", s.alpha));
        }
        if s.outer_steps == 0 {
            return bad("solver.outer_steps must be ≥ 1".into());
        }
        match (s.q_schedule, s.q) {
            (Schedule::Const | Schedule::CappedLinear, None) => {
                return bad("solver.q is required for const and capped_linear schedules".into())
            }
            (_, Some(0)) => return bad("solver.q must be ≥ 1".into()),
            (Schedule::Linear, Some(_)) => {
                return bad("solver.q has no meaning for the linear schedule".into())
            }
            _ => {}
        }
        for (what, v) in [
            ("beta", s.beta),
            ("h0", s.h0),
            ("neumann_step", s.neumann_step),
        ] {
            if let Scale::Value(x) = v {
                if !(x > 0.0) || !x.is_finite() {
                    return bad(format!("solver.{what} must be positive, got {x}"));
                }
            }
        }
        if let Some(l) = s.smoothness {
            if !(l > 0.0) || !l.is_finite() {
                return bad(format!("solver.smoothness must be positive, got {l}"));
            }
        }
        match self.method {
            Method::CgBaseline if s.cg_max_iters.is_none() => {
                return bad("cg_baseline needs solver.cg_max_iters".into())
            }
            Method::NeumannBaseline if s.neumann_terms.is_none() => {
                return bad("neumann_baseline needs solver.neumann_terms".into())
            }
            _ => {}
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0) {
                return bad(format!("threshold must be positive, got {t}"));
            }
        }
        match &self.problem {
            ProblemSpec::Toy { n, .. } if *n == 0 => bad("problem.n must be ≥ 1".into()),
            ProblemSpec::Logreg {
                train_path,
                val_path,
                ..
            }
            | ProblemSpec::Hyperclean {
                train_path,
                val_path,
                ..
            } if train_path.is_some() != val_path.is_some() => {
                bad("problem.train_path and problem.val_path must be given together".into())
            }
            ProblemSpec::Hyperclean { corruption, .. } if !(0.0..=1.0).contains(corruption) => bad(
                format!("problem.corruption must lie in [0, 1], got {corruption}"),
            ),
            _ => Ok(()),
        }
    }
}

impl ProblemSpec {
    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = dir.join(&*path);
                }
            }
        };
        match self {
            ProblemSpec::Toy { .. } => {}
            ProblemSpec::Logreg {
                train_path,
                val_path,
                ..
            }
            | ProblemSpec::Hyperclean {
                train_path,
                val_path,
                ..
            } => {
                fix(train_path);
                fix(val_path);
            }
        }
    }
}

//! Quick built-in checks: oracle gradients on every problem family and the
//! two-loop/SR1 recursions against explicit dense updates.

use qnbo::gradcheck::check_oracles;
use qnbo::kernels::oracle::{dense_bfgs_oracle, dense_sr1_oracle};
use qnbo::linalg::{dist, norm};
use qnbo::problems::{
    make_hyperclean, make_logreg, make_synthetic_classification, make_toy, SyntheticSpec,
};
use qnbo::rng::{gaussian_vec, seeded};
use qnbo::{apply_inverse, BilevelProblem, CurvaturePair, InitScale, PairHistory, QnMode};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

const GRADCHECK_TOL: f64 = 1e-5;
const KERNEL_CASES: u64 = 200;

fn gradcheck(name: &str, p: &dyn BilevelProblem<f64>, seed: u64) -> Check {
    let mut r = seeded(seed);
    let x: Vec<f64> = gaussian_vec::<f64>(&mut r, p.dim_x())
        .iter()
        .map(|v| 0.5 + 0.2 * v)
        .collect();
    let y = gaussian_vec::<f64>(&mut r, p.dim_y());
    let v = gaussian_vec::<f64>(&mut r, p.dim_y());
    match check_oracles(p, &x, &y, &v, 1e-5) {
        Ok(rep) => Check {
            name: format!("oracles/{name}"),
            passed: rep.worst() <= GRADCHECK_TOL,
            detail: format!("worst relative error {:.2e}", rep.worst()),
        },
        Err(e) => Check {
            name: format!("oracles/{name}"),
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// Pairs from one SPD quadratic, so both updates stay well defined.
fn kernel_case(seed: u64, mode: QnMode) -> qnbo::Result<f64> {
    let mut r = seeded(seed);
    let n = 2 + (seed % 7) as usize;
    let m = 1 + (seed % 11) as usize;
    let toy = make_toy::<f64>(n, seed)?;
    let a = toy.matrix();
    let h0 = InitScale::new(0.5 / toy.constants().map_or(1.0, |c| c.l))?;
    let mut hist = PairHistory::new(n);
    for _ in 0..m {
        let s = gaussian_vec::<f64>(&mut r, n);
        let g = a.matvec(&s);
        hist.push_pair(CurvaturePair::new(s, g)?, mode)?;
    }
    let d = gaussian_vec::<f64>(&mut r, n);
    let fast = apply_inverse(mode, &d, h0, &hist)?;
    let dense = match mode {
        QnMode::Bfgs => dense_bfgs_oracle(h0, &hist)?,
        QnMode::Sr1 => dense_sr1_oracle(h0, &hist)?,
    }
    .matvec(&d);
    Ok(dist(&fast, &dense) / norm(&d))
}

fn kernels(mode: QnMode, name: &str) -> Check {
    let mut worst = 0.0f64;
    for seed in 0..KERNEL_CASES {
        match kernel_case(seed, mode) {
            Ok(e) => worst = worst.max(e),
            Err(e) => {
                return Check {
                    name: format!("kernels/{name}"),
                    passed: false,
                    detail: format!("case {seed}: {e}"),
                }
            }
        }
    }
    Check {
        name: format!("kernels/{name}"),
        passed: worst <= 1e-10,
        detail: format!("{KERNEL_CASES} cases, worst ‖Hd − H_dense d‖/‖d‖ {worst:.2e}"),
    }
}

pub fn run() -> Vec<Check> {
    let mut checks = Vec::new();
    match make_toy::<f64>(8, 3) {
        Ok(toy) => checks.push(gradcheck("toy", &toy, 1)),
        Err(e) => checks.push(Check {
            name: "oracles/toy".into(),
            passed: false,
            detail: e.to_string(),
        }),
    }
    let logreg = make_synthetic_classification::<f64>(60, 5, 2, 0.1, 4)
        .and_then(|d| d.to_signed_binary())
        .and_then(|d| {
            let (t, v) = d.split_at(30);
            make_logreg(t, v)
        });
    match logreg {
        Ok(p) => checks.push(gradcheck("logreg", &p, 2)),
        Err(e) => checks.push(Check {
            name: "oracles/logreg".into(),
            passed: false,
            detail: e.to_string(),
        }),
    }
    let hc = SyntheticSpec {
        n_samples: 40,
        n_features: 4,
        n_classes: 3,
        separation: 1.0,
        seed: 5,
    }
    .generate::<f64>()
    .and_then(|d| {
        let (t, v) = d.split_at(25);
        make_hyperclean(t, v, 0.01)
    });
    match hc {
        Ok(p) => checks.push(gradcheck("hyperclean", &p, 3)),
        Err(e) => checks.push(Check {
            name: "oracles/hyperclean".into(),
            passed: false,
            detail: e.to_string(),
        }),
    }
    checks.push(kernels(QnMode::Bfgs, "bfgs"));
    checks.push(kernels(QnMode::Sr1, "sr1"));
    checks
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qnbo_bench::output::TRACE_COLUMNS;
use qnbo_bench::runner::{run_all, RunOptions};
use qnbo_bench::ExperimentSpec;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qnbo-bench"))
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_in(out: &Path, args: &[&str]) -> Output {
    bin().env("QNBO_OUT_DIR", out).args(args).output().unwrap()
}

fn toy_spec(name: &str, method: &str, extra_solver: &str) -> String {
    format!(
        r#"spec_version = 1
name = "{name}"
method = "{method}"
base_seed = 3
out_path = "unused"

[problem]
kind = "toy"
n = 5

[solver]
alpha = 0.1
outer_steps = 6
beta = 0.1
h0 = "inverse_smoothness"
{extra_solver}
"#
    )
}

fn write_spec(dir: &Path, file: &str, text: &str) -> PathBuf {
    let p = dir.join(file);
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_method_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "a.toml", &toy_spec("a", "qnbo_dfp", ""));
    let o = run_in(&dir.path().join("out"), &["run", spec.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_key_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "a.toml",
        &toy_spec("a", "qnbo_bfgs", "stepsize = 3"),
    );
    let o = run_in(dir.path(), &["run", spec.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("stepsize"), "{}", stderr(&o));
}

#[test]
fn missing_spec_file_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &["run", dir.path().join("nope.toml").to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn unwritable_output_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "a.toml", &toy_spec("a", "qnbo_bfgs", ""));
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = run_in(&blocker.join("sub"), &["run", spec.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn divergence_exits_with_3_and_names_the_phase() {
    let dir = tempfile::tempdir().unwrap();
    let text = toy_spec("blowup", "qnbo_bfgs", "").replace("alpha = 0.1", "alpha = 1e300");
    let spec = write_spec(dir.path(), "a.toml", &text);
    let out = dir.path().join("out");
    let o = run_in(&out, &["run", spec.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("numerical failure ("), "{err}");
    // the rows completed before the failure are kept
    let trace = fs::read_to_string(out.join("blowup_r0.csv")).unwrap();
    assert!(trace.lines().filter(|l| !l.starts_with('#')).count() >= 2);
}

#[test]
fn empty_compare_exits_with_2() {
    let o = bin().arg("compare").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_rejects_different_instances() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_spec(dir.path(), "a.toml", &toy_spec("a", "qnbo_bfgs", ""));
    let b = write_spec(
        dir.path(),
        "b.toml",
        &toy_spec("b", "qnbo_bfgs", "").replace("base_seed = 3", "base_seed = 4"),
    );
    let o = run_in(
        dir.path(),
        &["compare", a.to_str().unwrap(), b.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("problem instance differs"));
}

#[test]
fn repeats_write_one_trace_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let text =
        toy_spec("rep", "qnbo_sr1", "").replace("base_seed = 3", "base_seed = 3\nrepeats = 3");
    let spec = write_spec(dir.path(), "a.toml", &text);
    let out = dir.path().join("out");
    let o = run_in(&out, &["run", "--jobs", "2", spec.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut headers = Vec::new();
    for r in 0..3 {
        let text = fs::read_to_string(out.join(format!("rep_r{r}.csv"))).unwrap();
        let seed_line = text
            .lines()
            .find(|l| l.contains("seed="))
            .unwrap()
            .to_string();
        assert!(
            seed_line.contains(&format!("seed={}", 3 + r)),
            "{seed_line}"
        );
        let header = text
            .lines()
            .find(|l| !l.starts_with('#'))
            .unwrap()
            .to_string();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 7);
        headers.push(header);
    }
    assert!(headers.iter().all(|h| h == &TRACE_COLUMNS.join(",")));
    let summary = fs::read_to_string(out.join("rep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("rep,qnbo_sr1,toy,3,6,"));
}

fn without_wall(text: &str) -> Vec<String> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .take(4)
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            cells[..cells.len() - 1].join(",")
        })
        .collect()
}

#[test]
fn trace_matches_the_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "golden.toml",
        &toy_spec("golden", "qnbo_bfgs", ""),
    );
    let out = dir.path().join("out");
    let o = run_in(&out, &["run", spec.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let got = without_wall(&fs::read_to_string(out.join("golden_r0.csv")).unwrap());
    let golden = fs::read_to_string(
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/toy_trace.csv"),
    )
    .unwrap();
    assert_eq!(got, golden.lines().map(String::from).collect::<Vec<_>>());
}

#[test]
fn parallel_sweep_equals_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let specs: Vec<ExperimentSpec> = [
        ("p", "qnbo_bfgs", ""),
        ("q", "qnbo_sr1", ""),
        ("r", "cg_baseline", "cg_max_iters = 5"),
    ]
    .iter()
    .map(|(n, m, e)| {
        let text = toy_spec(n, m, e).replace("base_seed = 3", "base_seed = 3\nrepeats = 4");
        ExperimentSpec::parse(&text, n).unwrap()
    })
    .collect();
    let opts = |jobs, sub: &str| RunOptions {
        write: true,
        jobs: Some(jobs),
        out_dir: Some(dir.path().join(sub)),
    };
    let seq = run_all(&specs, &opts(1, "seq")).unwrap();
    let par = run_all(&specs, &opts(8, "par")).unwrap();
    for (a, b) in seq.iter().zip(&par) {
        for (ra, rb) in a.repeats.iter().zip(&b.repeats) {
            assert_eq!(ra.state, rb.state);
            let fa = fs::read_to_string(ra.trace_path.as_ref().unwrap()).unwrap();
            let fb = fs::read_to_string(rb.trace_path.as_ref().unwrap()).unwrap();
            let strip = |t: &str| -> Vec<String> {
                t.lines()
                    .map(|l| {
                        if l.starts_with('#') {
                            l.to_string()
                        } else {
                            l.rsplit_once(',').unwrap().0.to_string()
                        }
                    })
                    .collect()
            };
            assert_eq!(strip(&fa), strip(&fb));
        }
    }
}

#[test]
fn generated_data_feeds_a_file_backed_spec() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .current_dir(dir.path())
        .args([
            "gen-data",
            "--samples",
            "120",
            "--features",
            "6",
            "--signed",
            "--label-noise",
            "0.1",
        ])
        .args([
            "--seed",
            "1",
            "--out",
            "train.svm",
            "--val-out",
            "val.svm",
            "--val-samples",
            "80",
        ])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(dir.path().join("val.svm"))
            .unwrap()
            .lines()
            .count(),
        80
    );
    let text = r#"spec_version = 1
name = "files"
method = "qnbo_bfgs"
out_path = "out"

[problem]
kind = "logreg"
train_path = "train.svm"
val_path = "val.svm"

[solver]
alpha = 0.5
outer_steps = 5
q_schedule = "const"
q = 3
h0 = "inverse_smoothness"
"#;
    write_spec(dir.path(), "files.toml", text);
    let o = bin()
        .current_dir(dir.path())
        .args(["run", "files.toml"])
        .env_remove("QNBO_OUT_DIR")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("val_accuracy"));
    assert!(dir.path().join("out/files_r0.csv").exists());
    assert!(dir.path().join("out/files_summary.csv").exists());
}

#[test]
fn selftest_passes() {
    let o = bin().arg("selftest").output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 5);
}

#[test]
fn compare_reports_both_methods_reaching_the_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let linear = configs().join("toy_linear.toml");
    let cg = configs().join("toy_cg.toml");
    let csv = dir.path().join("cmp.csv");
    let o = run_in(
        &dir.path().join("out"),
        &[
            "compare",
            linear.to_str().unwrap(),
            cg.to_str().unwrap(),
            "--out",
            csv.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(
        stdout.contains("fewest jv+hvp calls: toy_linear"),
        "{stdout}"
    );
    let mut rdr = csv::Reader::from_path(&csv).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let err: f64 = row[col("final_hypergrad_err")].parse().unwrap();
        assert!(err < 1e-5, "{row:?}");
        assert!(!row[col("iters_to_threshold")].is_empty());
    }
    assert_eq!(&rows[0][col("hvp")], "0");
    assert!(rows[1][col("hvp")].parse::<u64>().unwrap() > 0);
}

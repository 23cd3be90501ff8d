//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The experiment criteria train about fifty models and take roughly ten
//! minutes on one core.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use active_cli::config::ExperimentConfig;
use active_cli::runner::{run_experiment, ExperimentResult, RunMetrics};
use active_testkit::checks::{gradient_check, graph_oracle_check, loss_oracle_check, metric_check, Summary};

const SEED: u64 = 20_240_501;

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(results: &mut Vec<bool>, id: usize, name: &str, o: Outcome) {
    let tag = if o.passed { "PASS" } else { "FAIL" };
    println!("{tag} criterion {id:>2}: {name}: {}", o.detail);
    results.push(o.passed);
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn summary_outcome(s: &Summary, elapsed: Duration, limit: Duration) -> Outcome {
    let limit_text = if limit == Duration::MAX { "no limit".to_string() } else { format!("limit {}s", limit.as_secs()) };
    let mut detail = format!(
        "{} cases, worst {:.2e}, {} failures, {:.1}s ({limit_text})",
        s.cases,
        s.worst,
        s.failures.len(),
        elapsed.as_secs_f64(),
    );
    if let Some(first) = s.failures.first() {
        detail.push_str(&format!("; first failure: {first}"));
    }
    Outcome {
        passed: s.cases > 0 && s.passed() && elapsed < limit,
        detail,
    }
}

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/blobs.conf")
}

fn base_config() -> ExperimentConfig {
    ExperimentConfig::load(&config_path()).expect("configs/blobs.conf")
}

fn ok_runs(result: &ExperimentResult, point: usize) -> Vec<&RunMetrics> {
    result
        .records
        .iter()
        .filter(|r| r.point == point)
        .filter_map(|r| r.outcome.as_ref().ok())
        .collect()
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn metric(runs: &[&RunMetrics], f: impl Fn(&RunMetrics) -> Option<f64>) -> f64 {
    mean(runs.iter().map(|m| f(m).unwrap_or(f64::NAN)))
}

fn acc(m: &RunMetrics) -> Option<f64> {
    m.report.as_ref().map(|r| r.acc)
}

fn nmi(m: &RunMetrics) -> Option<f64> {
    m.report.as_ref().map(|r| r.nmi)
}

fn run(cfg: &ExperimentConfig, out: &Path) -> ExperimentResult {
    let result = run_experiment(cfg, out).expect("experiment runs");
    if result.failures() > 0 {
        eprintln!("{} of {} runs in {} failed", result.failures(), result.records.len(), out.display());
    }
    result
}

fn main() -> ExitCode {
    let mut results = Vec::new();

    let (grads, t) = timed(|| gradient_check(24, SEED, 1e-4));
    let worst = grads.iter().map(|(_, s)| s.worst).fold(0.0, f64::max);
    let cases: usize = grads.iter().map(|(_, s)| s.cases).sum();
    let failed: Vec<&str> = grads.iter().filter(|(_, s)| !s.passed()).map(|(term, _)| term.name()).collect();
    let per_term = grads.iter().all(|(_, s)| s.cases >= 20);
    report(
        &mut results,
        1,
        "gradients match central differences",
        Outcome {
            passed: failed.is_empty() && per_term && t < Duration::from_secs(60),
            detail: format!(
                "{cases} checks over 4 terms, worst relative error {worst:.2e}, failing terms {failed:?}, {:.1}s",
                t.as_secs_f64()
            ),
        },
    );

    let (s, t) = timed(|| loss_oracle_check(100, SEED, 1e-10));
    report(&mut results, 2, "losses equal loop references", summary_outcome(&s, t, Duration::from_secs(10)));

    let (s, t) = timed(|| graph_oracle_check(50, SEED));
    report(&mut results, 3, "graphs equal exhaustive search", summary_outcome(&s, t, Duration::from_secs(30)));

    let (s, t) = timed(|| metric_check(100, SEED));
    report(&mut results, 4, "metric examples and relabelling invariance", summary_outcome(&s, t, Duration::MAX));

    let dir = tempfile::tempdir().expect("temp dir");
    let base = base_config();

    let (full, t5) = timed(|| run(&base, &dir.path().join("full")));
    let full_runs = ok_runs(&full, 0);
    let full_acc = metric(&full_runs, acc);
    let full_nmi = metric(&full_runs, nmi);
    report(
        &mut results,
        5,
        "synthetic blobs clustering",
        Outcome {
            passed: full_runs.len() == 5 && full_acc >= 0.90 && full_nmi >= 0.75 && t5 < Duration::from_secs(600),
            detail: format!(
                "{} seeds, mean ACC {full_acc:.4} (>= 0.90), mean NMI {full_nmi:.4} (>= 0.75), {:.0}s",
                full_runs.len(),
                t5.as_secs_f64()
            ),
        },
    );

    let mut ablation_cfg = base.clone();
    ablation_cfg
        .set("sweep.train.losses", "wgc+cgc rec+cgc rec+wgc")
        .expect("ablation sweep");
    let ablation = run(&ablation_cfg, &dir.path().join("ablation"));
    let mut worst_gap = f64::NEG_INFINITY;
    let mut parts = Vec::new();
    let mut complete = true;
    for (point, name) in ["wgc+cgc", "rec+cgc", "rec+wgc"].iter().enumerate() {
        let runs = ok_runs(&ablation, point);
        complete &= runs.len() == 5;
        let a = metric(&runs, acc);
        worst_gap = worst_gap.max(a - full_acc);
        parts.push(format!("{name} {a:.4}"));
    }
    report(
        &mut results,
        6,
        "full objective not worse than ablations",
        Outcome {
            passed: complete && worst_gap <= 0.02,
            detail: format!("full {full_acc:.4}; {}; largest ablation lead {worst_gap:+.4} (<= 0.02)", parts.join(", ")),
        },
    );

    let pairs: Vec<(f64, f64)> = full_runs
        .iter()
        .map(|m| {
            (
                m.graph_error_initial.unwrap_or(f64::NAN),
                m.graph_error_final.unwrap_or(f64::NAN),
            )
        })
        .collect();
    report(
        &mut results,
        7,
        "learned graph error <= initial graph error",
        Outcome {
            passed: pairs.len() == 5 && pairs.iter().all(|(p, q)| q <= p),
            detail: pairs
                .iter()
                .map(|(p, q)| format!("P {p:.4} Q {q:.4}"))
                .collect::<Vec<_>>()
                .join("; "),
        },
    );

    let model = metric(&full_runs, |m| m.nrmse);
    let baseline = metric(&full_runs, |m| m.nrmse_baseline);
    report(
        &mut results,
        8,
        "imputation beats column means",
        Outcome {
            passed: model < baseline,
            detail: format!("mean NRMSE {model:.4} vs baseline {baseline:.4}"),
        },
    );

    let mut k_cfg = base.clone();
    k_cfg.set("sweep.train.k", "2 3 4 6 7 8").expect("K sweep");
    let k_sweep = run(&k_cfg, &dir.path().join("k"));
    let mut by_k: Vec<(usize, f64, usize)> = [2, 3, 4, 6, 7, 8]
        .iter()
        .enumerate()
        .map(|(point, &k)| {
            let runs = ok_runs(&k_sweep, point);
            (k, metric(&runs, acc), runs.len())
        })
        .collect();
    by_k.push((5, full_acc, full_runs.len()));
    by_k.sort_by_key(|&(k, _, _)| k);
    let accs: Vec<f64> = by_k.iter().map(|&(_, a, _)| a).collect();
    let spread = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max) - accs.iter().copied().fold(f64::INFINITY, f64::min);
    report(
        &mut results,
        9,
        "accuracy stable across K",
        Outcome {
            passed: by_k.iter().all(|&(_, _, n)| n == 5) && spread <= 0.10,
            detail: format!(
                "{}; spread {spread:.4} (<= 0.10)",
                by_k.iter().map(|(k, a, _)| format!("K={k} {a:.4}")).collect::<Vec<_>>().join(", ")
            ),
        },
    );

    let again = dir.path().join("again");
    let status = Command::new(env!("CARGO_BIN_EXE_active"))
        .arg("sweep")
        .arg("--config")
        .arg(config_path())
        .arg("--out")
        .arg(&again)
        .output()
        .expect("binary runs");
    let first = std::fs::read(dir.path().join("full").join("metrics.csv")).unwrap_or_default();
    let second = std::fs::read(again.join("metrics.csv")).unwrap_or_default();
    report(
        &mut results,
        10,
        "identical config and seed give identical metrics.csv",
        Outcome {
            passed: status.status.success() && !first.is_empty() && first == second,
            detail: format!("{} and {} bytes, equal: {}", first.len(), second.len(), first == second),
        },
    );

    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

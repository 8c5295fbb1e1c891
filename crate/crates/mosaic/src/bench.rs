//! Benchmarking: n independent design trials per task, Pass@k scoring,
//! Wilson confidence intervals, and leaderboard rendering.
//!
//! Trials append to a json-lines ledger keyed by (task, trial) as they
//! finish, so an interrupted run resumes where it stopped and replays of
//! the same scripts reproduce the same ledger. Basic tasks run before
//! composite ones so the tool library is populated first; archiving is
//! deferred to deterministic (task, trial) order regardless of the
//! execution interleaving.

use std::collections::BTreeMap;
use std::io::{BufRead, Seek as _, Write as _};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::agent::{run_design_loop_readonly, ArchiveCandidate, Generator, TrialRecord};
use crate::checks::VerifyOptions;
use crate::library::{archive_design, ToolLibrary};
use crate::tasks::TaskSpec;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("pass@k preconditions violated: n={n}, c={c}, k={k}")]
    BadPassAtK { n: u64, c: u64, k: u64 },
    #[error("wilson preconditions violated: c={c}, n={n}, confidence={confidence}")]
    BadWilson { c: u64, n: u64, confidence: f64 },
    #[error("ledger io: {0}")]
    Io(#[from] std::io::Error),
    #[error("ledger line {0} is not a valid record: {1}")]
    Corrupt(usize, String),
}

/// Unbiased Pass@k: the probability that at least one of k trials drawn
/// from the n recorded ones succeeds, `1 - C(n-c, k)/C(n, k)`, evaluated
/// in product form so nothing overflows.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, BenchError> {
    if c > n || k == 0 || k > n {
        return Err(BenchError::BadPassAtK { n, c, k });
    }
    if c + k > n {
        return Ok(1.0);
    }
    let mut miss = 1.0f64;
    for i in 0..k {
        miss *= (n - c - i) as f64 / (n - i) as f64;
    }
    Ok(1.0 - miss)
}

/// Two-sided normal quantile via the Acklam rational approximation;
/// |error| < 1.2e-9 over the open unit interval.
#[allow(clippy::excessive_precision)]
fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

/// Wilson score interval for a binomial proportion at the given two-sided
/// confidence level (z = 1.6449 at 90%).
pub fn wilson_interval(c: u64, n: u64, confidence: f64) -> Result<(f64, f64), BenchError> {
    if n == 0 || c > n || !(0.0..1.0).contains(&confidence) || confidence <= 0.0 {
        return Err(BenchError::BadWilson { c, n, confidence });
    }
    let z = normal_quantile(0.5 + confidence / 2.0);
    let nf = n as f64;
    let p = c as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    Ok(((center - half).max(0.0), (center + half).min(1.0)))
}

/// All trial records of a run, keyed by (task id, 1-based trial index).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialLedger {
    pub records: BTreeMap<(u32, u32), TrialRecord>,
    pub n_per_task: u32,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct LedgerLine {
    task_id: u32,
    trial_index: u32,
    record: TrialRecord,
}

impl TrialLedger {
    pub fn successes(&self, task_id: u32) -> u64 {
        self.records
            .iter()
            .filter(|((t, _), r)| *t == task_id && r.success)
            .count() as u64
    }

    /// Load a ledger file, tolerating a truncated trailing line from an
    /// interrupted writer.
    pub fn load(path: &Path, n_per_task: u32) -> Result<Self, BenchError> {
        Self::load_with_valid_len(path, n_per_task).map(|(ledger, _)| ledger)
    }

    /// Load plus the byte length of the valid prefix, so a resuming
    /// writer can truncate away a torn final line before appending.
    pub fn load_with_valid_len(path: &Path, n_per_task: u32) -> Result<(Self, u64), BenchError> {
        let mut ledger = TrialLedger {
            records: BTreeMap::new(),
            n_per_task,
        };
        if !path.exists() {
            return Ok((ledger, 0));
        }
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut valid_len: u64 = 0;
        let mut lines = reader.lines().enumerate().peekable();
        while let Some((idx, line)) = lines.next() {
            let line = line?;
            if line.trim().is_empty() {
                valid_len += line.len() as u64 + 1;
                continue;
            }
            match serde_json::from_str::<LedgerLine>(&line) {
                Ok(entry) => {
                    ledger
                        .records
                        .insert((entry.task_id, entry.trial_index), entry.record);
                    valid_len += line.len() as u64 + 1;
                }
                Err(e) => {
                    if lines.peek().is_none() {
                        // torn final line from a killed run; drop it
                        break;
                    }
                    return Err(BenchError::Corrupt(idx + 1, e.to_string()));
                }
            }
        }
        Ok((ledger, valid_len))
    }
}

/// Per-task scoring plus the run-level aggregates.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BenchReport {
    pub n: u32,
    pub per_task: BTreeMap<u32, TaskScore>,
    pub avg_pass_at_1: f64,
    pub avg_pass_at_5: f64,
    pub num_solved: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TaskScore {
    pub successes: u64,
    /// Percent.
    pub pass_at_1: f64,
    /// Percent; absent when n < 5.
    pub pass_at_5: Option<f64>,
    /// 90% Wilson bounds on the success probability.
    pub wilson_90: (f64, f64),
}

/// Score a ledger. Pure: the same ledger always yields the same report.
pub fn score_ledger(ledger: &TrialLedger, task_ids: &[u32]) -> Result<BenchReport, BenchError> {
    let n = ledger.n_per_task as u64;
    let mut per_task = BTreeMap::new();
    for &task_id in task_ids {
        let c = ledger.successes(task_id);
        let p1 = pass_at_k(n, c, 1)? * 100.0;
        let p5 = if n >= 5 {
            Some(pass_at_k(n, c, 5)? * 100.0)
        } else {
            None
        };
        per_task.insert(
            task_id,
            TaskScore {
                successes: c,
                pass_at_1: p1,
                pass_at_5: p5,
                wilson_90: wilson_interval(c, n, 0.90)?,
            },
        );
    }
    let count = per_task.len().max(1) as f64;
    let avg1 = per_task.values().map(|s| s.pass_at_1).sum::<f64>() / count;
    let avg5 = per_task
        .values()
        .map(|s| s.pass_at_5.unwrap_or(0.0))
        .sum::<f64>()
        / count;
    let solved = per_task.values().filter(|s| s.successes >= 1).count();
    Ok(BenchReport {
        n: ledger.n_per_task,
        per_task,
        avg_pass_at_1: avg1,
        avg_pass_at_5: avg5,
        num_solved: solved,
    })
}

/// Plain-text leaderboard: one row per task, then the Avg and # Solved
/// rows, percentages to one decimal.
pub fn render_leaderboard(report: &BenchReport) -> String {
    let mut out = String::from("Task   Pass@1   Pass@5   Wilson 90%\n");
    for (task_id, score) in &report.per_task {
        let p5 = score
            .pass_at_5
            .map(|v| format!("{v:.1}"))
            .unwrap_or_else(|| "-".to_string());
        out.push_str(&format!(
            "{:<6} {:<8.1} {:<8} [{:.3}, {:.3}]\n",
            task_id, score.pass_at_1, p5, score.wilson_90.0, score.wilson_90.1
        ));
    }
    out.push_str(&format!(
        "Avg    {:<8.1} {:<8.1}\n# Solved: {}\n",
        report.avg_pass_at_1, report.avg_pass_at_5, report.num_solved
    ));
    out
}

/// CSV form of the leaderboard.
pub fn leaderboard_csv(report: &BenchReport) -> String {
    let mut out = String::from("task_id,successes,n,pass_at_1,pass_at_5,wilson_lo,wilson_hi\n");
    for (task_id, s) in &report.per_task {
        out.push_str(&format!(
            "{},{},{},{:.1},{},{:.6},{:.6}\n",
            task_id,
            s.successes,
            report.n,
            s.pass_at_1,
            s.pass_at_5.map(|v| format!("{v:.1}")).unwrap_or_default(),
            s.wilson_90.0,
            s.wilson_90.1
        ));
    }
    out
}

/// Supplies one generator per (task, trial) cell.
pub trait GeneratorFactory: Sync {
    fn make(&self, task_id: u32, trial_index: u32) -> Box<dyn Generator>;
}

impl<F> GeneratorFactory for F
where
    F: Fn(u32, u32) -> Box<dyn Generator> + Sync,
{
    fn make(&self, task_id: u32, trial_index: u32) -> Box<dyn Generator> {
        self(task_id, trial_index)
    }
}

pub struct BenchConfig {
    pub n: u32,
    pub concurrency: usize,
    pub ledger_path: Option<PathBuf>,
    /// Skip archiving during the run, reproducing a frozen-library
    /// ablation.
    pub freeze_library: bool,
    pub verify: VerifyOptions,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n: 30,
            concurrency: 1,
            ledger_path: None,
            freeze_library: false,
            verify: VerifyOptions::default(),
        }
    }
}

/// Run n trials per task. Basic tasks run first (they populate the tool
/// library); within a task, trials run concurrently up to the configured
/// limit against a snapshot of the library, and successful designs are
/// archived afterwards in trial order so the library's evolution is
/// deterministic. Generator failures mark their trial failed without
/// aborting the run.
pub fn run_benchmark(
    tasks: &[TaskSpec],
    factory: &dyn GeneratorFactory,
    config: &BenchConfig,
    lib: &mut ToolLibrary,
) -> Result<(TrialLedger, BenchReport), BenchError> {
    let mut ordered: Vec<&TaskSpec> = tasks.iter().collect();
    ordered.sort_by_key(|t| (t.composite, t.id));

    let mut ledger = TrialLedger {
        records: BTreeMap::new(),
        n_per_task: config.n,
    };
    let writer: Option<Mutex<std::fs::File>> = match &config.ledger_path {
        Some(path) => {
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)?;
                }
            }
            let (loaded, valid_len) = TrialLedger::load_with_valid_len(path, config.n)?;
            ledger = loaded;
            let file = std::fs::OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(false)
                .open(path)?;
            // drop any torn trailing line before appending
            file.set_len(valid_len)?;
            let mut file = file;
            file.seek(std::io::SeekFrom::End(0))?;
            Some(Mutex::new(file))
        }
        None => None,
    };

    for task in ordered {
        let pending: Vec<u32> = (1..=config.n)
            .filter(|trial| !ledger.records.contains_key(&(task.id, *trial)))
            .collect();
        if pending.is_empty() {
            continue;
        }
        let snapshot = lib.clone();
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<(u32, TrialRecord, Option<ArchiveCandidate>)>> =
            Mutex::new(Vec::new());
        let workers = config.concurrency.max(1).min(pending.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let slot = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&trial) = pending.get(slot) else {
                        break;
                    };
                    let mut generator = factory.make(task.id, trial);
                    let (record, candidate) = run_design_loop_readonly(
                        task,
                        generator.as_mut(),
                        &snapshot,
                        &config.verify,
                    );
                    results.lock().unwrap().push((trial, record, candidate));
                });
            }
        });
        let mut results = results.into_inner().unwrap();
        results.sort_by_key(|(trial, _, _)| *trial);
        for (trial, record, candidate) in results {
            if let Some(writer) = &writer {
                let line = serde_json::to_string(&LedgerLine {
                    task_id: task.id,
                    trial_index: trial,
                    record: record.clone(),
                })
                .expect("trial records serialize");
                let mut file = writer.lock().unwrap();
                writeln!(file, "{line}")?;
            }
            ledger.records.insert((task.id, trial), record);
            if !config.freeze_library {
                if let Some(c) = candidate {
                    let _ = archive_design(lib, task, &c.circuit, &c.outcome);
                }
            }
        }
    }

    let task_ids: Vec<u32> = {
        let mut ids: Vec<u32> = tasks.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        ids
    };
    let report = score_ledger(&ledger, &task_ids)?;
    Ok((ledger, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_table_values_reproduce() {
        // (c, pass@1 %, pass@5 %) pairs at n = 30
        let cases = [
            (21, 70.0, 99.9),
            (1, 3.3, 16.7),
            (9, 30.0, 85.7),
            (15, 50.0, 97.9),
            (3, 10.0, 43.3),
        ];
        for (c, p1, p5) in cases {
            let got1 = (pass_at_k(30, c, 1).unwrap() * 1000.0).round() / 10.0;
            let got5 = (pass_at_k(30, c, 5).unwrap() * 1000.0).round() / 10.0;
            assert_eq!(got1, p1, "pass@1 for c={c}");
            assert_eq!(got5, p5, "pass@5 for c={c}");
        }
    }

    #[test]
    fn boundaries() {
        assert_eq!(pass_at_k(30, 0, 1).unwrap(), 0.0);
        assert_eq!(pass_at_k(30, 0, 5).unwrap(), 0.0);
        assert_eq!(pass_at_k(30, 30, 1).unwrap(), 1.0);
        assert_eq!(pass_at_k(30, 30, 5).unwrap(), 1.0);
        // c > n - k forces certainty
        assert_eq!(pass_at_k(5, 4, 3).unwrap(), 1.0);
        assert!(pass_at_k(10, 11, 1).is_err());
        assert!(pass_at_k(10, 5, 0).is_err());
        assert!(pass_at_k(10, 5, 11).is_err());
    }

    #[test]
    fn monotone_in_c_and_k() {
        for n in [5u64, 15, 30] {
            for k in 1..=n.min(6) {
                let mut prev = -1.0;
                for c in 0..=n {
                    let v = pass_at_k(n, c, k).unwrap();
                    assert!(v >= prev - 1e-15, "n={n} k={k} c={c}");
                    prev = v;
                }
            }
            for c in [1u64, 3, n / 2] {
                let mut prev = -1.0;
                for k in 1..=n {
                    let v = pass_at_k(n, c, k).unwrap();
                    assert!(v >= prev - 1e-15, "n={n} c={c} k={k}");
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn matches_subset_enumeration() {
        // exhaustive check against direct subset counting for small n
        fn comb(n: u64, k: u64) -> f64 {
            if k > n {
                return 0.0;
            }
            let mut v = 1.0;
            for i in 0..k {
                v = v * (n - i) as f64 / (i + 1) as f64;
            }
            v
        }
        for n in 1..=12u64 {
            for c in 0..=n {
                for k in 1..=n {
                    let direct = 1.0 - comb(n - c, k) / comb(n, k);
                    let got = pass_at_k(n, c, k).unwrap();
                    assert!((got - direct).abs() < 1e-12, "n={n} c={c} k={k}");
                }
            }
        }
    }

    #[test]
    fn closed_form_matches_monte_carlo_subsampling() {
        use rand::rngs::StdRng;
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        // draw k-subsets without replacement from n trials with c
        // successes; the hit rate estimates pass@k and must sit within
        // 3 sigma of the closed form
        let mut rng = StdRng::seed_from_u64(42);
        let resamples = 100_000;
        for (n, c, k) in [(30u64, 9u64, 5u64), (30, 21, 1), (15, 4, 3), (10, 2, 2)] {
            let mut outcomes: Vec<bool> = (0..n).map(|i| i < c).collect();
            let mut hits = 0u64;
            for _ in 0..resamples {
                outcomes.shuffle(&mut rng);
                if outcomes[..k as usize].iter().any(|&ok| ok) {
                    hits += 1;
                }
            }
            let p = pass_at_k(n, c, k).unwrap();
            let estimate = hits as f64 / resamples as f64;
            let sigma = (p * (1.0 - p) / resamples as f64).sqrt();
            assert!(
                (estimate - p).abs() <= 3.0 * sigma.max(1e-6),
                "n={n} c={c} k={k}: {estimate} vs {p}"
            );
        }
    }

    #[test]
    fn wilson_center_is_half_at_symmetric_counts() {
        let (lo, hi) = wilson_interval(15, 30, 0.90).unwrap();
        assert!(((lo + hi) / 2.0 - 0.5).abs() < 1e-12);
        assert!((lo - 0.356).abs() < 1e-3, "lo = {lo}");
        assert!((hi - 0.644).abs() < 1e-3, "hi = {hi}");
    }

    #[test]
    fn wilson_boundaries() {
        let (lo, hi) = wilson_interval(0, 30, 0.90).unwrap();
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0);
        let (lo, hi) = wilson_interval(30, 30, 0.90).unwrap();
        assert!(lo < 1.0);
        assert_eq!(hi, 1.0);
        assert!(wilson_interval(5, 0, 0.9).is_err());
        assert!(wilson_interval(5, 4, 0.9).is_err());
        assert!(wilson_interval(1, 4, 1.5).is_err());
    }

    #[test]
    fn z_quantile_at_ninety_percent() {
        let z = normal_quantile(0.95);
        assert!((z - 1.6449).abs() < 1e-4, "z = {z}");
    }

    #[test]
    fn leaderboard_formatting() {
        let mut ledger = TrialLedger {
            records: BTreeMap::new(),
            n_per_task: 30,
        };
        for trial in 1..=30u32 {
            ledger.records.insert(
                (9, trial),
                TrialRecord {
                    task_id: 9,
                    attempts: vec![],
                    success: trial <= 9,
                    tokens_estimate: 0,
                    transport_failure: None,
                },
            );
        }
        let report = score_ledger(&ledger, &[9]).unwrap();
        let text = render_leaderboard(&report);
        assert!(text.contains("30.0"), "{text}");
        assert!(text.contains("85.7"), "{text}");
        assert!(text.contains("# Solved: 1"), "{text}");
        // empty report renders the header and summary only
        let empty = score_ledger(&TrialLedger { records: BTreeMap::new(), n_per_task: 30 }, &[]).unwrap();
        let text = render_leaderboard(&empty);
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn avg_and_solved_arithmetic() {
        let mut ledger = TrialLedger {
            records: BTreeMap::new(),
            n_per_task: 30,
        };
        for trial in 1..=30u32 {
            for (task, ok) in [(1u32, true), (2u32, false)] {
                ledger.records.insert(
                    (task, trial),
                    TrialRecord {
                        task_id: task,
                        attempts: vec![],
                        success: ok,
                        tokens_estimate: 0,
                        transport_failure: None,
                    },
                );
            }
        }
        let report = score_ledger(&ledger, &[1, 2]).unwrap();
        assert_eq!(report.avg_pass_at_1, 50.0);
        assert_eq!(report.num_solved, 1);
    }
}

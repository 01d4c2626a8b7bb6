//! The `verify` suite: exact oracle cross-checks, Eulerian counts against
//! their estimate, and Monte-Carlo checks against exact and Chebyshev bounds.
//! A check whose enumeration exceeds the budget is skipped, not failed.

use hashtrick::experiment::{cell_hasher, measure_cell, run_grid, GridSpec};
use hashtrick::oracle::{
    eulerian_histogram, eulerian_result, exact_delta, exact_moment_bruteforce,
    exact_moment_sequences, second_moment_closed_form, to_f64, ExactVector,
};
use hashtrick::{Error, Result};
use serde::Serialize;

/// Eulerian sandwich instances `(alpha, r)`; every one costs more than 2^10
/// sequences.
pub const EULER_CASES: [(u32, u32); 6] = [(3, 8), (4, 4), (4, 5), (4, 6), (5, 5), (6, 6)];
/// Largest allowed `|log2(count / Delta)| / r`.
pub const EULER_LOG_RATIO_MAX: f64 = 8.0;

pub struct Settings {
    pub budget: u128,
    pub trials: u64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub status: Status,
    pub passed_cases: usize,
    pub failed_cases: Vec<String>,
    pub skipped_cases: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub passed: bool,
    pub master_seed: String,
    pub budget: String,
    pub trials: u64,
    pub checks: Vec<Check>,
}

struct Tally {
    name: &'static str,
    passed: usize,
    failed: Vec<String>,
    skipped: Vec<String>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally {
            name,
            passed: 0,
            failed: Vec::new(),
            skipped: Vec::new(),
        }
    }

    /// Records one case; a budget error becomes a skip and any other error a
    /// failure.
    fn case(&mut self, label: String, outcome: Result<std::result::Result<(), String>>) {
        match outcome {
            Ok(Ok(())) => self.passed += 1,
            Ok(Err(why)) => self.failed.push(format!("{label}: {why}")),
            Err(Error::BudgetExceeded { cost, budget }) => {
                eprintln!(
                    "warning: {}: skipping {label} (cost {cost} > budget {budget})",
                    self.name
                );
                self.skipped.push(label);
            }
            Err(e) => self.failed.push(format!("{label}: {e}")),
        }
    }

    fn finish(self) -> Check {
        let status = if !self.failed.is_empty() {
            Status::Fail
        } else if self.passed == 0 && !self.skipped.is_empty() {
            Status::Skipped
        } else {
            Status::Pass
        };
        Check {
            name: self.name,
            status,
            passed_cases: self.passed,
            failed_cases: self.failed,
            skipped_cases: self.skipped,
        }
    }
}

fn cross_oracle(s: &Settings) -> Check {
    let mut t = Tally::new("cross_oracle");
    for m in [2, 3] {
        for k in [2, 3, 4] {
            for r in [2, 4] {
                let x = ExactVector::flat_unit(k);
                let outcome = exact_moment_bruteforce(m, &x, r, s.budget).and_then(|bf| {
                    let seq = exact_moment_sequences(m, &x, r, s.budget)?;
                    Ok(if bf == seq {
                        Ok(())
                    } else {
                        Err(format!("brute force {bf} != sequences {seq}"))
                    })
                });
                t.case(format!("m={m} k={k} r={r}"), outcome);
            }
        }
    }
    t.finish()
}

fn closed_form(s: &Settings) -> Check {
    let mut t = Tally::new("second_moment_closed_form");
    for m in [2, 3, 4] {
        for k in [2, 3, 4] {
            let outcome =
                exact_moment_bruteforce(m, &ExactVector::flat_unit(k), 2, s.budget).map(|got| {
                    let want = second_moment_closed_form(m, k);
                    if got == want {
                        Ok(())
                    } else {
                        Err(format!("{got} != {want}"))
                    }
                });
            t.case(format!("m={m} k={k}"), outcome);
        }
    }
    t.finish()
}

fn eulerian_sandwich(s: &Settings) -> Check {
    let mut t = Tally::new("eulerian_sandwich");
    for (alpha, r) in EULER_CASES {
        let hist = match eulerian_histogram(alpha, r, s.budget) {
            Ok(h) => h,
            Err(e) => {
                t.case(format!("alpha={alpha} r={r}"), Err(e));
                continue;
            }
        };
        for beta in 1..=alpha / 2 {
            let label = format!("alpha={alpha} beta={beta} r={r}");
            let outcome = eulerian_result(alpha, beta, r, hist[beta as usize]).map(|res| {
                if res.log2_ratio_per_r <= EULER_LOG_RATIO_MAX {
                    Ok(())
                } else if res.exact_count == 0.into() && alpha == 2 * beta && r % 2 == 1 {
                    // every component is a pair joined by an even number of edges
                    Ok(())
                } else {
                    Err(format!(
                        "count {} vs estimate {}: log ratio per r {}",
                        res.exact_count, res.delta_ref, res.log2_ratio_per_r
                    ))
                }
            });
            t.case(label, outcome);
        }
    }
    t.finish()
}

fn chebyshev(s: &Settings) -> Check {
    let mut t = Tally::new("chebyshev_regime");
    let spec = GridSpec {
        m_values: vec![1 << 8, 1 << 10, 1 << 12],
        k_values: vec![2, 8, 32, 128],
        eps_values: vec![0.125, 0.25, 0.5],
        delta_values: (0..=10).rev().map(|e| 2f64.powi(-e)).collect(),
        trials_per_cell: s.trials.max(hashtrick::experiment::MIN_TRIALS),
        master_seed: s.seed,
    };
    let cells = match run_grid(&spec) {
        Ok(c) => c,
        Err(e) => {
            t.case("grid".into(), Err(e));
            return t.finish();
        }
    };
    for c in &cells {
        for &delta in &spec.delta_values {
            if (c.m as f64) < 2.0 / (c.eps * c.eps * delta) {
                continue;
            }
            let limit = delta + 4.0 * (delta / c.trials as f64).sqrt();
            let hat = c.delta_hat();
            let outcome = if hat <= limit {
                Ok(())
            } else {
                Err(format!("delta_hat {hat} > {limit}"))
            };
            t.case(
                format!("m={} k={} eps={} delta={delta}", c.m, c.k, c.eps),
                Ok(outcome),
            );
        }
    }
    t.finish()
}

fn monte_carlo_vs_exact(s: &Settings) -> Check {
    let mut t = Tally::new("monte_carlo_vs_exact");
    for (m, k, eps) in [(2u64, 2u64, 0.5), (16, 2, 0.5), (4, 3, 0.25), (8, 4, 0.25)] {
        let outcome = exact_delta(m as usize, k as usize, eps, s.budget).and_then(|q| {
            let p = to_f64(&q);
            let hasher = cell_hasher(s.seed, m, k)?;
            let hat = measure_cell(&hasher, k, s.trials, &[eps])[0] as f64 / s.trials as f64;
            let tol = 4.0 * (p * (1.0 - p) / s.trials as f64).sqrt();
            Ok(if (hat - p).abs() <= tol {
                Ok(())
            } else {
                Err(format!("delta_hat {hat} vs exact {p} (tolerance {tol})"))
            })
        });
        t.case(format!("m={m} k={k} eps={eps}"), outcome);
    }
    t.finish()
}

pub fn run(s: &Settings) -> Report {
    let checks = vec![
        cross_oracle(s),
        closed_form(s),
        eulerian_sandwich(s),
        chebyshev(s),
        monte_carlo_vs_exact(s),
    ];
    Report {
        passed: checks.iter().all(|c| c.status != Status::Fail),
        master_seed: format!("{:#018x}", s.seed),
        budget: s.budget.to_string(),
        trials: s.trials,
        checks,
    }
}

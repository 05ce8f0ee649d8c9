//! Seeded ensembles of runs and their statistics.
//!
//! Run `i` of an ensemble with seed `s` draws every random choice (which
//! boundary emits, which path a collapsing splitter takes, which detector
//! fires) from `RunRng::stream(s, i)`, so results do not depend on the
//! order or parallelism of execution.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_at, run_ct, run_st, TheoryKind, TransitionRecord};
use crate::error::{config, precondition, Error, Result};
use crate::optics::SplitterMode;
use crate::rng::{enumerate, Chooser, RunRng, RNG_ALGORITHM};
use crate::scenario::Scenario;

/// Significance level of the chi-square flag.
pub const CHI_SQUARE_ALPHA: f64 = 0.01;

pub const DEFAULT_RUNS: u64 = 10_000;

/// Upper 1% points of the chi-square distribution.
pub fn chi_square_critical(df: usize) -> Option<f64> {
    match df {
        1 => Some(6.635),
        2 => Some(9.210),
        3 => Some(11.34),
        4 => Some(13.28),
        5 => Some(15.09),
        _ => None,
    }
}

/// Which boundary starts each run: a source for CT and ST, a detector for AT.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "element")]
pub enum SourcePolicy {
    Fixed(String),
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub scenario: Scenario,
    pub theory: TheoryKind,
    pub mode: SplitterMode,
    pub n: u64,
    pub seed: u64,
    pub policy: SourcePolicy,
}

impl EnsembleConfig {
    pub fn new(scenario: Scenario, theory: TheoryKind, mode: SplitterMode, n: u64, seed: u64) -> Self {
        Self {
            scenario,
            theory,
            mode,
            n,
            seed,
            policy: SourcePolicy::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(precondition("an ensemble needs at least one run"));
        }
        self.scenario.validate()?;
        let starts = self.starting_boundaries()?;
        if starts.is_empty() {
            return Err(config("scenario has no boundary to start runs from"));
        }
        Ok(())
    }

    fn starting_boundaries(&self) -> Result<Vec<String>> {
        let all = match self.theory {
            TheoryKind::At => self.scenario.detectors(),
            _ => self.scenario.sources(),
        };
        match &self.policy {
            SourcePolicy::Uniform => Ok(all.into_iter().map(String::from).collect()),
            SourcePolicy::Fixed(id) if all.contains(&id.as_str()) => Ok(vec![id.clone()]),
            SourcePolicy::Fixed(id) => Err(config(format!(
                "{id} cannot start a {} run (expected one of {})",
                self.theory.label(),
                all.join(", ")
            ))),
        }
    }
}

/// One outcome class: a (source, detector) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellKey {
    /// 1-based ensemble number.
    pub ensemble: usize,
    pub source: String,
    pub detector: String,
}

/// The outcome classes of a scenario: same-index pairs first, then the
/// crossed ones. For the standard layout this is the usual numbering
/// (S1,D1), (S2,D2), (S1,D2), (S2,D1).
pub fn cells(scenario: &Scenario) -> Vec<CellKey> {
    let sources = scenario.sources();
    let detectors = scenario.detectors();
    let mut pairs: Vec<(usize, usize)> = (0..sources.len())
        .flat_map(|i| (0..detectors.len()).map(move |j| (i, j)))
        .collect();
    pairs.sort_by_key(|&(i, j)| (i != j, i, j));
    pairs
        .into_iter()
        .enumerate()
        .map(|(k, (i, j))| CellKey {
            ensemble: k + 1,
            source: sources[i].to_string(),
            detector: detectors[j].to_string(),
        })
        .collect()
}

fn cell_index(cells: &[CellKey], record: &TransitionRecord) -> Result<u8> {
    cells
        .iter()
        .position(|c| c.source == record.source && c.detector == record.detector)
        .map(|i| i as u8)
        .ok_or_else(|| config(format!("run ended in unknown cell {}->{}", record.source, record.detector)))
}

/// One complete run with every random choice taken from `chooser`.
pub fn run_once(cfg: &EnsembleConfig, chooser: &mut dyn Chooser) -> Result<TransitionRecord> {
    let starts = cfg.starting_boundaries()?;
    let start = if starts.len() == 1 {
        &starts[0]
    } else {
        &starts[chooser.choose(&vec![1.0; starts.len()])]
    };
    match cfg.theory {
        TheoryKind::Ct => run_ct(&cfg.scenario, start, cfg.mode, chooser),
        TheoryKind::At => run_at(&cfg.scenario, start, cfg.mode, chooser),
        TheoryKind::St => {
            let detectors = cfg.scenario.detectors();
            let mut records = Vec::with_capacity(detectors.len());
            for d in &detectors {
                records.push(run_st(&cfg.scenario, start, d, cfg.mode, chooser)?);
            }
            let weights: Vec<f64> = records.iter().map(|r| r.weight).collect();
            if !weights.iter().any(|w| *w > 0.0) {
                return Err(config(format!("no detector has a nonzero transition weight from {start}")));
            }
            let pick = chooser.choose(&weights);
            Ok(records.swap_remove(pick))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    #[serde(flatten)]
    pub key: CellKey,
    pub count: u64,
    pub probability: f64,
    /// Exact probability of the cell under the same engine and mode.
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub scenario_name: String,
    pub theory: TheoryKind,
    pub mode: SplitterMode,
    pub n_runs: u64,
    pub seed: u64,
    pub rng: String,
    pub cells: Vec<CellStats>,
    /// Pearson statistic against `expected`; `None` when a cell with zero
    /// expected probability was observed.
    pub chi_square: Option<f64>,
    pub degrees_of_freedom: usize,
    pub critical_value: Option<f64>,
    pub passes: bool,
    /// Cell index of every run, in run order.
    pub outcomes: Vec<u8>,
    /// Everything needed to replay the ensemble.
    pub config: EnsembleConfig,
}

impl EnsembleStats {
    pub fn cell(&self, source: &str, detector: &str) -> Option<&CellStats> {
        self.cells.iter().find(|c| c.key.source == source && c.key.detector == detector)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# scenario={},theory={},mode={},n={},seed={},rng={}",
            self.scenario_name,
            self.theory.label(),
            self.mode.label(),
            self.n_runs,
            self.seed,
            self.rng
        );
        out.push_str("ensemble,source,detector,count,probability,expected\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                c.key.ensemble, c.key.source, c.key.detector, c.count, c.probability, c.expected
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} / {} / {}  n={} seed={}",
            self.scenario_name,
            self.theory.label(),
            self.mode.label(),
            self.n_runs,
            self.seed
        );
        let _ = writeln!(out, "{:>8} {:>6} {:>8} {:>8} {:>10} {:>10}", "ensemble", "source", "detector", "count", "p", "expected");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{:>8} {:>6} {:>8} {:>8} {:>10.4} {:>10.4}",
                c.key.ensemble, c.key.source, c.key.detector, c.count, c.probability, c.expected
            );
        }
        let chi = self.chi_square.map_or("inf".to_string(), |c| format!("{c:.3}"));
        let crit = self.critical_value.map_or("-".to_string(), |c| format!("{c}"));
        let _ = writeln!(
            out,
            "chi-square {chi} (df {}, critical {crit}) {}",
            self.degrees_of_freedom,
            if self.passes { "pass" } else { "FAIL" }
        );
        let _ = writeln!(out, "rng: {}", self.rng);
        out
    }
}

/// Exact outcome distribution, by enumerating every random choice.
pub fn analytic_distribution(cfg: &EnsembleConfig) -> Result<Vec<f64>> {
    let cells = cells(&cfg.scenario);
    let mut probs = vec![0.0; cells.len()];
    for (p, record) in enumerate(|c| run_once(cfg, c))? {
        probs[cell_index(&cells, &record)? as usize] += p;
    }
    Ok(probs)
}

/// Pearson chi-square over cells with nonzero expectation. Returns the
/// statistic (`None` if an impossible cell was observed) and the degrees of
/// freedom.
pub fn chi_square(counts: &[u64], expected: &[f64]) -> (Option<f64>, usize) {
    let n: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut used: usize = 0;
    for (&o, &p) in counts.iter().zip(expected) {
        let e = p * n as f64;
        if p > 0.0 {
            used += 1;
            stat += (o as f64 - e).powi(2) / e;
        } else if o > 0 {
            return (None, used.saturating_sub(1));
        }
    }
    (Some(stat), used.saturating_sub(1))
}

fn run_outcomes(cfg: &EnsembleConfig, cells: &[CellKey]) -> Result<Vec<u8>> {
    let results: Vec<Result<u8>> = (0..cfg.n)
        .into_par_iter()
        .map(|run| {
            let mut rng = RunRng::stream(cfg.seed, run);
            run_once(cfg, &mut rng)
                .and_then(|r| cell_index(cells, &r))
                .map_err(|e| Error::Run { run, source: Box::new(e) })
        })
        .collect();
    results.into_iter().collect()
}

pub fn run_ensemble(cfg: &EnsembleConfig) -> Result<EnsembleStats> {
    cfg.validate()?;
    let keys = cells(&cfg.scenario);
    let outcomes = run_outcomes(cfg, &keys)?;
    let expected = analytic_distribution(cfg)?;
    Ok(summarize(cfg, keys, outcomes, &expected))
}

fn summarize(cfg: &EnsembleConfig, keys: Vec<CellKey>, outcomes: Vec<u8>, expected: &[f64]) -> EnsembleStats {
    let mut counts = vec![0u64; keys.len()];
    for &o in &outcomes {
        counts[o as usize] += 1;
    }
    let (chi, df) = chi_square(&counts, expected);
    let critical = chi_square_critical(df);
    let passes = match (chi, critical) {
        (Some(c), Some(k)) => c < k,
        (Some(_), None) => df == 0,
        (None, _) => false,
    };
    let cells = keys
        .into_iter()
        .zip(&counts)
        .zip(expected)
        .map(|((key, &count), &e)| CellStats {
            key,
            count,
            probability: count as f64 / cfg.n as f64,
            expected: e,
        })
        .collect();
    EnsembleStats {
        scenario_name: cfg.scenario.name.clone(),
        theory: cfg.theory,
        mode: cfg.mode,
        n_runs: cfg.n,
        seed: cfg.seed,
        rng: RNG_ALGORITHM.to_string(),
        cells,
        chi_square: chi,
        degrees_of_freedom: df,
        critical_value: critical,
        passes,
        outcomes,
        config: cfg.clone(),
    }
}

fn cell_label(stats: &EnsembleStats, index: u8) -> String {
    match stats.cells.get(index as usize) {
        Some(c) => format!("{}->{}", c.key.source, c.key.detector),
        None => format!("cell {index}"),
    }
}

/// Re-runs an ensemble from its recorded configuration and checks that
/// every run lands in the recorded cell.
pub fn replay(stats: &EnsembleStats) -> Result<EnsembleStats> {
    let mut cfg = stats.config.clone();
    cfg.seed = stats.seed;
    cfg.n = stats.n_runs;
    let fresh = run_ensemble(&cfg)?;
    if let Some(run) = (0..stats.outcomes.len().max(fresh.outcomes.len()))
        .find(|&i| stats.outcomes.get(i) != fresh.outcomes.get(i))
    {
        let label = |s: &EnsembleStats| match s.outcomes.get(run) {
            Some(&o) => cell_label(s, o),
            None => "nothing".to_string(),
        };
        return Err(Error::ReplayMismatch {
            run: run as u64,
            recorded: label(stats),
            replayed: label(&fresh),
        });
    }
    Ok(fresh)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDelta {
    #[serde(flatten)]
    pub key: CellKey,
    /// Collapse-mode minus always-split empirical probability.
    pub delta: f64,
    pub analytic_delta: f64,
    /// Binomial standard deviation of `delta` under the analytic
    /// probabilities.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub always_split: EnsembleStats,
    pub collapse: EnsembleStats,
    pub deltas: Vec<CellDelta>,
    pub max_delta: f64,
    pub verdict: String,
}

pub const VERDICT_AGREE: &str = "modes agree";
pub const VERDICT_DIVERGE: &str = "modes diverge";

/// Runs the same ensemble under both splitter models. The modes agree when
/// every cell's difference is within three binomial standard deviations.
pub fn compare_modes(cfg: &EnsembleConfig) -> Result<ModeComparison> {
    let with_mode = |mode| EnsembleConfig { mode, ..cfg.clone() };
    let always = run_ensemble(&with_mode(SplitterMode::AlwaysSplit))?;
    let collapse = run_ensemble(&with_mode(SplitterMode::CollapseAtSplitter))?;
    let n = cfg.n as f64;
    let deltas: Vec<CellDelta> = always
        .cells
        .iter()
        .zip(&collapse.cells)
        .map(|(a, c)| {
            let var = (a.expected * (1.0 - a.expected) + c.expected * (1.0 - c.expected)) / n;
            CellDelta {
                key: a.key.clone(),
                delta: c.probability - a.probability,
                analytic_delta: c.expected - a.expected,
                sigma: var.sqrt(),
            }
        })
        .collect();
    let max_delta = deltas.iter().map(|d| d.delta.abs()).fold(0.0, f64::max);
    let agree = deltas.iter().all(|d| d.delta.abs() <= 3.0 * d.sigma);
    Ok(ModeComparison {
        always_split: always,
        collapse,
        deltas,
        max_delta,
        verdict: if agree { VERDICT_AGREE } else { VERDICT_DIVERGE }.to_string(),
    })
}

impl ModeComparison {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} / {}  n={} seed={}",
            self.always_split.scenario_name,
            self.always_split.theory.label(),
            self.always_split.n_runs,
            self.always_split.seed
        );
        let _ = writeln!(
            out,
            "{:>8} {:>6} {:>8} {:>12} {:>10} {:>10} {:>10}",
            "ensemble", "source", "detector", "always-split", "collapse", "delta", "analytic"
        );
        for (d, (a, c)) in self.deltas.iter().zip(self.always_split.cells.iter().zip(&self.collapse.cells)) {
            let _ = writeln!(
                out,
                "{:>8} {:>6} {:>8} {:>12.4} {:>10.4} {:>10.4} {:>10.4}",
                d.key.ensemble, d.key.source, d.key.detector, a.probability, c.probability, d.delta, d.analytic_delta
            );
        }
        let _ = writeln!(out, "max |delta| {:.4}: {}", self.max_delta, self.verdict);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("ensemble,source,detector,always_split,collapse,delta,analytic_delta,sigma\n");
        for (d, (a, c)) in self.deltas.iter().zip(self.always_split.cells.iter().zip(&self.collapse.cells)) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                d.key.ensemble, d.key.source, d.key.detector, a.probability, c.probability, d.delta, d.analytic_delta, d.sigma
            );
        }
        out
    }
}

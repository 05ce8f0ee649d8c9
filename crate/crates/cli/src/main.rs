use std::fmt::Write as _;
use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mzi_core::engine::{run_st, TheoryKind, TransitionRecord};
use mzi_core::geometry::Vec2;
use mzi_core::harness::{compare_modes, run_ensemble, run_once, EnsembleConfig, SourcePolicy, DEFAULT_RUNS};
use mzi_core::optics::SplitterMode;
use mzi_core::oracle::{compare_closed_form, OracleComparison, OracleGrid};
use mzi_core::render::{default_grid, render_frames, FrameRequest, DEFAULT_RESOLUTION};
use mzi_core::rng::RunRng;
use mzi_core::scenario::Scenario;
use mzi_core::wavepacket::{Complex, GaussianPacket};
use mzi_server::ServerConfig;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CHECK: u8 = 3;

const ORACLE_L2_LIMIT: f64 = 1e-8;
const ORACLE_WIDTH_LIMIT: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "mzi", version, about = "Single-particle Mach-Zehnder interferometer simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Args)]
struct Common {
    /// Built-in scenario (BE, ME, CE, ABE, AME, ACE) or a scenario JSON file.
    #[arg(long, global = true, default_value = "BE")]
    scenario: String,
    /// Theory: ct, at or st.
    #[arg(long, global = true, default_value = "ct", value_parser = parse::<TheoryKind>)]
    theory: TheoryKind,
    /// Splitter model: always-split or collapse.
    #[arg(long, global = true, default_value = "always-split", value_parser = parse::<SplitterMode>)]
    mode: SplitterMode,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Number of runs.
    #[arg(long, global = true, default_value_t = DEFAULT_RUNS)]
    n: u64,
    /// Output file (frames: output directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// One run; prints the transition record.
    Simulate {
        /// Boundary to start from (a source, or a detector for at).
        #[arg(long)]
        start: Option<String>,
        /// st only: detector for the final boundary instead of sampling one.
        #[arg(long)]
        detector: Option<String>,
    },
    /// Many runs; prints per-ensemble counts and the chi-square test.
    Ensemble,
    /// Renders density frames as PGM and CSV.
    Frames {
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        detector: Option<String>,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        /// Comma-separated frame times.
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
    },
    /// Runs the ensemble under both splitter models and compares them.
    Compare,
    /// Checks the closed-form packet against the spectral oracle.
    Oracle {
        /// Evolution times, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "1000")]
        dt: Vec<f64>,
        #[arg(long, default_value_t = 1 << 14)]
        points: usize,
        #[arg(long, default_value_t = 0.5)]
        dx: f64,
    },
    /// Serves live sessions over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

fn parse<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

enum Failure {
    Runtime(String),
    Check(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn emit(common: &Common, text: String) -> Result<(), Failure> {
    match &common.out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn record_text(r: &TransitionRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} -> {}  ({} / {})", r.source, r.detector, r.theory.label(), r.mode.label());
    for (id, p) in &r.probabilities {
        let a = r.amplitudes.get(id).copied().unwrap_or_default();
        let _ = writeln!(out, "  {id}: p={p:.6} amplitude={:.6}{:+.6}i", a.re, a.im);
    }
    let _ = writeln!(out, "  weight {:.6}", r.weight);
    let _ = writeln!(out, "  arms: upper={} lower={}", r.arm_support.upper, r.arm_support.lower);
    for c in &r.collapse_events {
        let _ = writeln!(out, "  collapse at {} t={}", c.element, c.time);
    }
    out
}

fn record_csv(r: &TransitionRecord) -> String {
    let mut out = String::from("source,detector,theory,mode,boundary,probability,amplitude_re,amplitude_im\n");
    for (id, p) in &r.probabilities {
        let a = r.amplitudes.get(id).copied().unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{id},{p},{},{}", r.source, r.detector, r.theory.label(), r.mode.label(), a.re, a.im);
    }
    out
}

fn oracle_text(results: &[OracleComparison]) -> String {
    let mut out = String::new();
    for c in results {
        let _ = writeln!(
            out,
            "dt={} n={} dx={}  L2={:.3e} (axial {:.3e}, transverse {:.3e})  centroid {:.3e}  width {:.3e}",
            c.dt, c.grid.n, c.grid.dx, c.l2, c.axial_l2, c.transverse_l2, c.centroid_error, c.width_relative_error
        );
    }
    out
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = &cli.common;
    if let Cmd::Serve { addr } = cli.command {
        eprintln!("listening on http://{addr}");
        mzi_server::serve_blocking(addr, ServerConfig::default())?;
        return Ok(());
    }
    let scenario = Scenario::resolve_name(&c.scenario)?;
    scenario.validate()?;
    let ensemble_cfg = || EnsembleConfig::new(scenario.clone(), c.theory, c.mode, c.n, c.seed);
    match cli.command {
        Cmd::Simulate { start, detector } => {
            let mut rng = RunRng::stream(c.seed, 0);
            let record = match (c.theory, detector) {
                (TheoryKind::St, Some(d)) => {
                    let s = match start {
                        Some(s) => s,
                        None => scenario.sources().first().ok_or("scenario has no source")?.to_string(),
                    };
                    run_st(&scenario, &s, &d, c.mode, &mut rng)?
                }
                (_, Some(_)) => return Err(Failure::Runtime("--detector applies to st only".into())),
                (_, None) => {
                    let mut cfg = ensemble_cfg();
                    cfg.n = 1;
                    if let Some(s) = start {
                        cfg.policy = SourcePolicy::Fixed(s);
                    }
                    cfg.validate()?;
                    run_once(&cfg, &mut rng)?
                }
            };
            let text = match c.format {
                Format::Json => serde_json::to_string_pretty(&record)? + "\n",
                Format::Csv => record_csv(&record),
                Format::Text => record_text(&record),
            };
            emit(c, text)
        }
        Cmd::Ensemble => {
            let stats = run_ensemble(&ensemble_cfg())?;
            let text = match c.format {
                Format::Json => stats.to_json()? + "\n",
                Format::Csv => stats.to_csv(),
                Format::Text => stats.to_text(),
            };
            emit(c, text)
        }
        Cmd::Compare => {
            let cmp = compare_modes(&ensemble_cfg())?;
            let text = match c.format {
                Format::Json => serde_json::to_string_pretty(&cmp)? + "\n",
                Format::Csv => cmp.to_csv(),
                Format::Text => cmp.to_text(),
            };
            emit(c, text)
        }
        Cmd::Frames { source, detector, resolution, times } => {
            let mut req = FrameRequest::new(&scenario, c.theory, c.mode);
            req.seed = c.seed;
            req.grid = default_grid(&scenario, resolution);
            if let Some(s) = source {
                req.source = s;
            }
            if let Some(d) = detector {
                req.detector = d;
            }
            if let Some(t) = times {
                req.times = t;
            }
            let dir = c.out.clone().unwrap_or_else(|| PathBuf::from("frames"));
            let paths = render_frames(&scenario, &req, &dir)?;
            for p in paths {
                println!("{}", p.display());
            }
            Ok(())
        }
        Cmd::Oracle { dt, points, dx } => {
            let k = scenario.constants;
            let packet = GaussianPacket::new(Complex::new(1.0, 0.0), 0.0, Vec2::ZERO, Vec2::new(1.0, 0.0), k)?;
            let grid = OracleGrid { n: points, dx };
            let results = dt
                .iter()
                .map(|&t| compare_closed_form(&packet, t, grid))
                .collect::<Result<Vec<_>, _>>()?;
            let text = match c.format {
                Format::Json => serde_json::to_string_pretty(&results)? + "\n",
                Format::Csv => {
                    let mut s = String::from("dt,n,dx,l2,axial_l2,transverse_l2,centroid_error,width_relative_error\n");
                    for r in &results {
                        let _ = writeln!(
                            s,
                            "{},{},{},{},{},{},{},{}",
                            r.dt, r.grid.n, r.grid.dx, r.l2, r.axial_l2, r.transverse_l2, r.centroid_error, r.width_relative_error
                        );
                    }
                    s
                }
                Format::Text => oracle_text(&results),
            };
            emit(c, text)?;
            let bad: Vec<String> = results
                .iter()
                .filter(|r| !(r.l2 < ORACLE_L2_LIMIT && r.width_relative_error < ORACLE_WIDTH_LIMIT))
                .map(|r| format!("dt={}", r.dt))
                .collect();
            if bad.is_empty() {
                Ok(())
            } else {
                Err(Failure::Check(format!("oracle check failed at {}", bad.join(", "))))
            }
        }
        Cmd::Serve { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CHECK)
        }
    }
}

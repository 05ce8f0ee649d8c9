//! Density frames: sampling, PGM and CSV output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_at_detailed, run_ct_detailed, run_st_detailed, TheoryKind};
use crate::error::{config, Result};
use crate::optics::SplitterMode;
use crate::rng::RunRng;
use crate::scenario::Scenario;
use crate::wavepacket::{density_grid, FieldGrid, GridSpec};

pub const DEFAULT_RESOLUTION: usize = 512;

/// Offset used to place frames just before or after an event.
pub const FRAME_EPSILON: f64 = 1.0;

/// Grid over the bounding box of all elements, padded by four initial widths.
pub fn default_grid(scenario: &Scenario, resolution: usize) -> GridSpec {
    let (lo, hi) = scenario.bounds();
    let pad = 4.0 * scenario.constants.sigma0;
    GridSpec {
        x_min: lo.x - pad,
        x_max: hi.x + pad,
        y_min: lo.y - pad,
        y_max: hi.y + pad,
        nx: resolution,
        ny: resolution,
    }
}

/// Emission, splitting, mirrors, recombination, arrival and just after
/// arrival, for the standard flight time.
pub fn default_times(scenario: &Scenario) -> Vec<f64> {
    let leg = scenario.duration / 4.0;
    let e = FRAME_EPSILON;
    vec![leg - e, 1.5 * leg, 2.5 * leg, 3.0 * leg + e, 4.0 * leg - e, 4.0 * leg + e]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRequest {
    pub theory: TheoryKind,
    pub mode: SplitterMode,
    pub source: String,
    pub detector: String,
    pub seed: u64,
    pub times: Vec<f64>,
    pub grid: GridSpec,
}

impl FrameRequest {
    pub fn new(scenario: &Scenario, theory: TheoryKind, mode: SplitterMode) -> Self {
        Self {
            theory,
            mode,
            source: scenario.sources().first().map(|s| s.to_string()).unwrap_or_default(),
            detector: scenario.detectors().first().map(|s| s.to_string()).unwrap_or_default(),
            seed: 0,
            times: default_times(scenario),
            grid: default_grid(scenario, DEFAULT_RESOLUTION),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub time: f64,
    pub field: FieldGrid,
}

/// Computes the frames. For CT the field is `|ψ|²` of a run from the
/// requested source. For AT it is `|φ|²` of a run from the requested
/// detector, with frame times read on the advanced clock (time since the
/// detection, so the sequence starts at the detector). For ST it is
/// `|conj(Ω) φ* ψ|` between the requested source and detector; ST times
/// are clamped to the experiment's duration.
pub fn compute_frames(scenario: &Scenario, req: &FrameRequest) -> Result<Vec<Frame>> {
    req.grid.validate()?;
    if req.times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(config("frame times must be strictly increasing"));
    }
    if let Some(t) = req.times.iter().find(|t| !t.is_finite() || **t < 0.0) {
        return Err(config(format!("frame time {t} is outside the experiment")));
    }
    let mut rng = RunRng::stream(req.seed, 0);
    let fields: Vec<Result<FieldGrid>> = match req.theory {
        TheoryKind::Ct => {
            let run = run_ct_detailed(scenario, &req.source, req.mode, &mut rng)?;
            req.times.par_iter().map(|&t| density_grid(&run.packets_at(t), &req.grid, t)).collect()
        }
        TheoryKind::At => {
            let run = run_at_detailed(scenario, &req.detector, req.mode, &mut rng)?;
            req.times
                .par_iter()
                .map(|&t| density_grid(&run.reversed.packets_at(t), &req.grid, t))
                .collect()
        }
        TheoryKind::St => {
            let run = run_st_detailed(scenario, &req.source, &req.detector, req.mode, &mut rng)?;
            req.times
                .par_iter()
                .map(|&t| run.product_grid(t.clamp(0.0, scenario.duration), &req.grid))
                .collect()
        }
    };
    req.times
        .iter()
        .zip(fields)
        .map(|(&time, field)| Ok(Frame { time, field: field? }))
        .collect()
}

/// 16-bit binary PGM, top row at `y_max`, scaled so that `max` maps to 65535.
pub fn encode_pgm(field: &FieldGrid, max: f64) -> Vec<u8> {
    let spec = field.spec;
    let mut out = format!("P5\n{} {}\n65535\n", spec.nx, spec.ny).into_bytes();
    out.reserve(2 * spec.len());
    for j in (0..spec.ny).rev() {
        for i in 0..spec.nx {
            let v = if max > 0.0 { field.value(i, j) / max } else { 0.0 };
            let level = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
            out.extend_from_slice(&level.to_be_bytes());
        }
    }
    out
}

/// Raw values, one grid row per line from `y_min` upwards, after a header
/// describing the grid. Values use the shortest round-trip representation.
pub fn encode_csv(field: &FieldGrid, time: f64) -> String {
    let s = field.spec;
    let mut out = String::with_capacity(s.len() * 12);
    let _ = writeln!(
        out,
        "# t={time},x_min={},x_max={},y_min={},y_max={},nx={},ny={},order=row-major rows along increasing y",
        s.x_min, s.x_max, s.y_min, s.y_max, s.nx, s.ny
    );
    for j in 0..s.ny {
        for i in 0..s.nx {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", field.value(i, j));
        }
        out.push('\n');
    }
    out
}

/// Writes one PGM and one CSV per frame into `dir`, normalized to the
/// largest value over all frames, and returns the paths written.
pub fn write_frames(frames: &[Frame], dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let max = frames.iter().map(|f| f.field.max()).fold(0.0, f64::max);
    let mut paths = Vec::new();
    for (k, f) in frames.iter().enumerate() {
        let base = format!("{stem}_{k:02}_t{}", f.time);
        let pgm = dir.join(format!("{base}.pgm"));
        fs::write(&pgm, encode_pgm(&f.field, max))?;
        let csv = dir.join(format!("{base}.csv"));
        fs::write(&csv, encode_csv(&f.field, f.time))?;
        paths.push(pgm);
        paths.push(csv);
    }
    Ok(paths)
}

pub fn render_frames(scenario: &Scenario, req: &FrameRequest, dir: &Path) -> Result<Vec<PathBuf>> {
    let frames = compute_frames(scenario, req)?;
    let stem = format!("{}_{}", scenario.name.replace(|c: char| !c.is_ascii_alphanumeric(), "_"), req.theory.label());
    write_frames(&frames, dir, &stem)
}

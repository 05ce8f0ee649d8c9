//! Brute-force reference propagator.
//!
//! Free evolution is diagonal in momentum space, so a sampled wavefunction
//! can be evolved exactly (up to sampling) by an FFT, a phase per momentum
//! bin and an inverse FFT. This shares no code with the closed-form packets
//! and is what they are checked against.

use std::f64::consts::PI;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::geometry::Vec2;
use crate::wavepacket::{Complex, GaussianPacket, PhysicalConstants};

/// Fraction of the domain at each end that must stay empty.
pub const EDGE_FRACTION: f64 = 0.05;

/// Largest norm fraction allowed in the edge bands.
pub const EDGE_MASS_LIMIT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledWavefunction {
    pub x_min: f64,
    pub dx: f64,
    pub values: Vec<Complex>,
}

impl SampledWavefunction {
    pub fn new(x_min: f64, dx: f64, values: Vec<Complex>) -> Result<Self> {
        if !values.len().is_power_of_two() || values.len() < 2 {
            return Err(config(format!("sample count {} is not a power of two", values.len())));
        }
        if !(dx > 0.0 && dx.is_finite() && x_min.is_finite()) {
            return Err(config(format!("invalid sampling x_min={x_min}, dx={dx}")));
        }
        Ok(Self { x_min, dx, values })
    }

    pub fn from_fn(x_min: f64, dx: f64, n: usize, f: impl Fn(f64) -> Complex) -> Result<Self> {
        let values = (0..n).map(|i| f(x_min + i as f64 * dx)).collect();
        Self::new(x_min, dx, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.dx
    }

    /// Mean and standard deviation of `|ψ|²`.
    pub fn moments(&self) -> (f64, f64) {
        let w: Vec<f64> = self.values.iter().map(|v| v.norm_sqr()).collect();
        let total: f64 = w.iter().sum();
        let mean = w.iter().enumerate().map(|(i, p)| p * self.x(i)).sum::<f64>() / total;
        let var = w
            .iter()
            .enumerate()
            .map(|(i, p)| p * (self.x(i) - mean).powi(2))
            .sum::<f64>()
            / total;
        (mean, var.sqrt())
    }

    pub fn edge_mass(&self) -> f64 {
        let band = ((self.len() as f64 * EDGE_FRACTION).ceil() as usize).max(1);
        let n = self.len();
        let edge: f64 = self.values[..band]
            .iter()
            .chain(&self.values[n - band..])
            .map(|v| v.norm_sqr())
            .sum();
        let total: f64 = self.values.iter().map(|v| v.norm_sqr()).sum();
        edge / total
    }

    fn check_edges(&self) -> Result<()> {
        let edge_mass = self.edge_mass();
        if edge_mass > EDGE_MASS_LIMIT {
            return Err(Error::DomainTooSmall { edge_mass, limit: EDGE_MASS_LIMIT });
        }
        Ok(())
    }

    /// `‖self - other‖ / ‖other‖` over matching samples.
    pub fn relative_l2(&self, other: &SampledWavefunction) -> f64 {
        relative_l2(&self.values, &other.values)
    }
}

pub fn relative_l2(a: &[Complex], reference: &[Complex]) -> f64 {
    let diff: f64 = a.iter().zip(reference).map(|(x, y)| (x - y).norm_sqr()).sum();
    let norm: f64 = reference.iter().map(|y| y.norm_sqr()).sum();
    (diff / norm).sqrt()
}

fn wavenumbers(n: usize, dx: f64) -> Vec<f64> {
    let dk = 2.0 * PI / (n as f64 * dx);
    (0..n)
        .map(|j| if j < n / 2 { j as f64 } else { j as f64 - n as f64 } * dk)
        .collect()
}

/// Free evolution by `t` (negative `t` evolves backwards, which is the
/// advanced equation run forward in its own clock).
pub fn spectral_evolve(field: &SampledWavefunction, t: f64, c: &PhysicalConstants) -> Result<SampledWavefunction> {
    field.check_edges()?;
    let n = field.len();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf = field.values.clone();
    planner.plan_fft_forward(n).process(&mut buf);
    for (v, k) in buf.iter_mut().zip(wavenumbers(n, field.dx)) {
        *v *= Complex::from_polar(1.0 / n as f64, -c.hbar * k * k * t / (2.0 * c.mass));
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let out = SampledWavefunction { values: buf, ..field.clone() };
    out.check_edges()?;
    Ok(out)
}

/// Square sampled field in 2D, row-major with rows along y.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField2d {
    pub origin: Vec2,
    pub dx: f64,
    pub n: usize,
    pub values: Vec<Complex>,
}

impl SampledField2d {
    pub fn from_fn(origin: Vec2, dx: f64, n: usize, f: impl Fn(Vec2) -> Complex) -> Result<Self> {
        if !n.is_power_of_two() {
            return Err(config(format!("sample count {n} is not a power of two")));
        }
        let mut values = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                values.push(f(origin + Vec2::new(i as f64 * dx, j as f64 * dx)));
            }
        }
        Ok(Self { origin, dx, n, values })
    }

    pub fn point(&self, i: usize, j: usize) -> Vec2 {
        self.origin + Vec2::new(i as f64 * self.dx, j as f64 * self.dx)
    }

    pub fn edge_mass(&self) -> f64 {
        let band = ((self.n as f64 * EDGE_FRACTION).ceil() as usize).max(1);
        let inner = band..self.n - band;
        let mut edge = 0.0;
        let mut total = 0.0;
        for j in 0..self.n {
            for i in 0..self.n {
                let p = self.values[j * self.n + i].norm_sqr();
                total += p;
                if !inner.contains(&i) || !inner.contains(&j) {
                    edge += p;
                }
            }
        }
        edge / total
    }
}

fn fft_rows(values: &mut [Complex], n: usize, inverse: bool, planner: &mut FftPlanner<f64>) {
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    for row in values.chunks_mut(n) {
        fft.process(row);
    }
}

fn transpose(values: &[Complex], n: usize) -> Vec<Complex> {
    let mut out = vec![Complex::new(0.0, 0.0); n * n];
    for j in 0..n {
        for i in 0..n {
            out[i * n + j] = values[j * n + i];
        }
    }
    out
}

/// 2D free evolution by `t`.
pub fn spectral_evolve_2d(field: &SampledField2d, t: f64, c: &PhysicalConstants) -> Result<SampledField2d> {
    let check = |f: &SampledField2d| {
        let edge_mass = f.edge_mass();
        if edge_mass > EDGE_MASS_LIMIT {
            Err(Error::DomainTooSmall { edge_mass, limit: EDGE_MASS_LIMIT })
        } else {
            Ok(())
        }
    };
    check(field)?;
    let n = field.n;
    let mut planner = FftPlanner::<f64>::new();
    let mut buf = field.values.clone();
    fft_rows(&mut buf, n, false, &mut planner);
    let mut buf = transpose(&buf, n);
    fft_rows(&mut buf, n, false, &mut planner);
    // Now indexed [kx][ky].
    let k = wavenumbers(n, field.dx);
    let scale = 1.0 / (n * n) as f64;
    for (ix, kx) in k.iter().enumerate() {
        for (iy, ky) in k.iter().enumerate() {
            let phase = -c.hbar * (kx * kx + ky * ky) * t / (2.0 * c.mass);
            buf[ix * n + iy] *= Complex::from_polar(scale, phase);
        }
    }
    fft_rows(&mut buf, n, true, &mut planner);
    let mut buf = transpose(&buf, n);
    fft_rows(&mut buf, n, true, &mut planner);
    let out = SampledField2d { values: buf, ..field.clone() };
    check(&out)?;
    Ok(out)
}

/// Oracle sampling for [`compare_closed_form`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleGrid {
    pub n: usize,
    pub dx: f64,
}

impl Default for OracleGrid {
    fn default() -> Self {
        Self { n: 1 << 14, dx: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub dt: f64,
    pub grid: OracleGrid,
    /// Relative L2 difference along the line through the packet centre in
    /// the direction of travel.
    pub axial_l2: f64,
    /// Same across the direction of travel.
    pub transverse_l2: f64,
    pub l2: f64,
    /// Oracle density moments against the closed-form centre and width.
    pub centroid_error: f64,
    pub width_relative_error: f64,
}

/// Evolves the packet's birth slice with the oracle for `dt` and compares
/// `amplitude_at` with it along two perpendicular lines through the centre.
/// The packet separates into a factor along its direction of travel and
/// one across it, so the two 1D oracles give the 2D reference on these
/// lines.
pub fn compare_closed_form(packet: &GaussianPacket, dt: f64, grid: OracleGrid) -> Result<OracleComparison> {
    if dt < 0.0 {
        return Err(config("oracle comparison needs dt >= 0"));
    }
    let c = packet.constants;
    let d = packet.direction;
    let perp = d.perp();
    let span = grid.n as f64 * grid.dx;
    let drift = c.group_velocity() * dt;
    // Axial coordinate s is measured from the origin, transverse u from the ray.
    let s_min = (0.5 * drift - 0.5 * span) / grid.dx;
    let s_min = s_min.round() * grid.dx;
    let u_min = -0.5 * span;

    let t0 = packet.birth_time;
    let t1 = t0 + dt;
    let at = |s: f64, u: f64, t: f64| packet.amplitude_at(packet.origin + d * s + perp * u, t);

    let axial0 = SampledWavefunction::new(
        s_min,
        grid.dx,
        (0..grid.n).map(|i| at(s_min + i as f64 * grid.dx, 0.0, t0)).collect::<Result<_>>()?,
    )?;
    let u_centre = grid.n / 2;
    let trans0 = SampledWavefunction::new(
        u_min,
        grid.dx,
        (0..grid.n).map(|i| at(0.0, u_min + i as f64 * grid.dx, t0)).collect::<Result<_>>()?,
    )?;
    // The birth slice factorises as axial(s)·transverse(u) / value at centre.
    let peak0 = at(0.0, 0.0, t0)?;

    let axial1 = spectral_evolve(&axial0, dt, &c)?;
    let trans1 = spectral_evolve(&trans0, dt, &c)?;

    let s_centre_index = ((drift - s_min) / grid.dx).round() as usize;
    let s_centre = axial1.x(s_centre_index);
    let u_zero = trans1.values[u_centre];

    let reference_axial: Vec<Complex> = axial1.values.iter().map(|a| a * u_zero / peak0).collect();
    let closed_axial: Vec<Complex> = (0..grid.n)
        .map(|i| at(axial1.x(i), 0.0, t1))
        .collect::<Result<_>>()?;
    let a_centre = axial1.values[s_centre_index];
    let reference_trans: Vec<Complex> = trans1.values.iter().map(|v| v * a_centre / peak0).collect();
    let closed_trans: Vec<Complex> = (0..grid.n)
        .map(|i| at(s_centre, trans1.x(i), t1))
        .collect::<Result<_>>()?;

    let axial_l2 = relative_l2(&closed_axial, &reference_axial);
    let transverse_l2 = relative_l2(&closed_trans, &reference_trans);
    let (mean, std) = axial1.moments();
    let width = packet.width_at(t1)?;
    Ok(OracleComparison {
        dt,
        grid,
        axial_l2,
        transverse_l2,
        l2: axial_l2.max(transverse_l2),
        centroid_error: (mean - drift).abs(),
        width_relative_error: (std - width).abs() / width,
    })
}

//! Free-particle Gaussian wavepackets in the plane.
//!
//! A [`GaussianPacket`] is one coherent branch of a wavefunction: an exact
//! solution of the free Schrödinger equation whose slice at `birth_time` is an
//! isotropic Gaussian (density standard deviation `sigma0`) centred on
//! `origin` and carrying the plane wave `exp(i k direction·(r - origin))`.
//!
//! Packets produced by mirrors and splitters are mirror images of their
//! parent, so they keep the parent's birth time and get a *virtual* origin
//! (the parent origin reflected through the element plane). The closed form
//! then stays exact through any number of reflections.
//!
//! At any fixed time a packet is a complex Gaussian
//! `s · exp(-a |r - p|² + i q·(r - p))` ([`GaussianForm`]), which is what the
//! overlap integrals, Gram norms and grid sampling work with.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, precondition, Error, Result};
use crate::geometry::{Vec2, UNIT_TOLERANCE};

pub type Complex = num_complex::Complex64;

/// Width of the localized wavefunction that replaces the packet set on
/// collapse, in grid units.
pub const SIGMA_COLLAPSE: f64 = 5.0;

/// Branches whose amplitude modulus drops below this are discarded.
pub const PRUNE_AMPLITUDE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub mass: f64,
    pub wavenumber: f64,
    pub sigma0: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            hbar: 1.0,
            mass: 1.0,
            wavenumber: 0.4,
            sigma0: 50.0,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [self.hbar, self.mass, self.wavenumber, self.sigma0];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(config(format!("physical constants must be strictly positive: {self:?}")))
        }
    }

    pub fn group_velocity(&self) -> f64 {
        self.hbar * self.wavenumber / self.mass
    }

    /// Time for the width to grow by a factor sqrt(2).
    pub fn spreading_time(&self) -> f64 {
        2.0 * self.mass * self.sigma0 * self.sigma0 / self.hbar
    }

    pub fn with_sigma0(self, sigma0: f64) -> Self {
        Self { sigma0, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    Emit,
    Reflect,
    Transmit,
    /// Crossed the location of an element that was absent.
    Pass,
    Collapse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub element: String,
    pub interaction: Interaction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPacket {
    pub amplitude: Complex,
    pub birth_time: f64,
    pub origin: Vec2,
    pub direction: Vec2,
    pub constants: PhysicalConstants,
    pub lineage: Vec<LineageEntry>,
}

impl GaussianPacket {
    pub fn new(
        amplitude: Complex,
        birth_time: f64,
        origin: Vec2,
        direction: Vec2,
        constants: PhysicalConstants,
    ) -> Result<Self> {
        constants.validate()?;
        if !(amplitude.norm() <= 1.0 + 1e-12) {
            return Err(precondition(format!("branch amplitude {amplitude} exceeds 1 in modulus")));
        }
        if !birth_time.is_finite() || !origin.is_finite() {
            return Err(precondition("packet birth time and origin must be finite"));
        }
        Ok(Self {
            amplitude,
            birth_time,
            origin,
            direction: direction.unit(UNIT_TOLERANCE)?,
            constants,
            lineage: Vec::new(),
        })
    }

    pub fn with_lineage(mut self, element: &str, interaction: Interaction) -> Self {
        self.push_lineage(element, interaction);
        self
    }

    pub fn push_lineage(&mut self, element: &str, interaction: Interaction) {
        self.lineage.push(LineageEntry {
            element: element.to_string(),
            interaction,
        });
    }

    pub fn passed_through(&self, element: &str) -> bool {
        self.lineage.iter().any(|e| e.element == element)
    }

    fn elapsed(&self, t: f64) -> Result<f64> {
        let dt = t - self.birth_time;
        // Allow for rounding in event times computed from positions.
        if dt < -1e-9 || !dt.is_finite() {
            return Err(precondition(format!(
                "packet born at t={} evaluated at t={t}",
                self.birth_time
            )));
        }
        Ok(dt.max(0.0))
    }

    /// Complex spreading factor `1 + i ħ τ / (2 m σ₀²)`.
    fn spreading(&self, dt: f64) -> Complex {
        Complex::new(1.0, dt / self.constants.spreading_time())
    }

    pub fn center_at(&self, t: f64) -> Result<Vec2> {
        let dt = self.elapsed(t)?;
        Ok(self.origin + self.direction * (self.constants.group_velocity() * dt))
    }

    /// Standard deviation of the density along any axis.
    pub fn width_at(&self, t: f64) -> Result<f64> {
        let dt = self.elapsed(t)?;
        let r = dt / self.constants.spreading_time();
        Ok(self.constants.sigma0 * (1.0 + r * r).sqrt())
    }

    pub fn form_at(&self, t: f64) -> Result<GaussianForm> {
        let dt = self.elapsed(t)?;
        let c = &self.constants;
        let alpha = self.spreading(dt);
        let norm = 1.0 / (2.0 * PI * c.sigma0 * c.sigma0).sqrt();
        let phase = c.hbar * c.wavenumber * c.wavenumber * dt / (2.0 * c.mass);
        Ok(GaussianForm {
            scale: self.amplitude * norm / alpha * Complex::from_polar(1.0, phase),
            a: 1.0 / (4.0 * c.sigma0 * c.sigma0 * alpha),
            center: self.origin + self.direction * (c.group_velocity() * dt),
            momentum: self.direction * c.wavenumber,
        })
    }

    pub fn amplitude_at(&self, r: Vec2, t: f64) -> Result<Complex> {
        Ok(self.form_at(t)?.eval(r))
    }

    /// Unit-amplitude 1D factor along the direction of travel, with `s`
    /// measured from the origin. Together with [`transverse_profile`] this is
    /// a second, independent evaluation route of [`amplitude_at`]:
    /// `amplitude_at(o + s d + u d⊥) = amplitude · axial(s) · transverse(u)`.
    ///
    /// [`transverse_profile`]: GaussianPacket::transverse_profile
    /// [`amplitude_at`]: GaussianPacket::amplitude_at
    pub fn axial_profile(&self, s: f64, t: f64) -> Result<Complex> {
        let dt = self.elapsed(t)?;
        Ok(free_gaussian_1d(&self.constants, self.constants.wavenumber, s, dt))
    }

    pub fn transverse_profile(&self, u: f64, t: f64) -> Result<Complex> {
        let dt = self.elapsed(t)?;
        Ok(free_gaussian_1d(&self.constants, 0.0, u, dt))
    }

    pub fn descriptor(&self, t: f64) -> Result<PacketDescriptor> {
        Ok(PacketDescriptor {
            center: self.center_at(t)?,
            width: self.width_at(t)?,
            amplitude: self.amplitude,
            direction: self.direction,
        })
    }
}

/// 1D free Gaussian with unit norm, density std `sigma0` at `dt = 0`,
/// centred at 0 and carrying wavenumber `kappa`.
pub fn free_gaussian_1d(c: &PhysicalConstants, kappa: f64, x: f64, dt: f64) -> Complex {
    let alpha = Complex::new(1.0, dt / c.spreading_time());
    let v = c.hbar * kappa / c.mass;
    let pref = (2.0 * PI * c.sigma0 * c.sigma0).powf(-0.25) / alpha.sqrt();
    let shifted = x - v * dt;
    let exponent = -shifted * shifted / (4.0 * c.sigma0 * c.sigma0 * alpha)
        + Complex::i() * (kappa * x - c.hbar * kappa * kappa * dt / (2.0 * c.mass));
    pref * exponent.exp()
}

/// Summary of a packet at one instant, used in collapse records and streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketDescriptor {
    pub center: Vec2,
    pub width: f64,
    pub amplitude: Complex,
    pub direction: Vec2,
}

/// `scale · exp(-a |r - center|² + i momentum·(r - center))` with `Re a > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianForm {
    pub scale: Complex,
    pub a: Complex,
    pub center: Vec2,
    pub momentum: Vec2,
}

impl GaussianForm {
    pub fn eval(&self, r: Vec2) -> Complex {
        let d = r - self.center;
        let exponent = -self.a * d.norm_sqr() + Complex::new(0.0, self.momentum.dot(d));
        self.scale * exponent.exp()
    }

    pub fn conj(&self) -> GaussianForm {
        GaussianForm {
            scale: self.scale.conj(),
            a: self.a.conj(),
            center: self.center,
            momentum: -self.momentum,
        }
    }

    pub fn scaled(&self, factor: Complex) -> GaussianForm {
        GaussianForm {
            scale: self.scale * factor,
            ..*self
        }
    }

    /// `∫ f g d²r` (no conjugation).
    pub fn integral_of_product(&self, other: &GaussianForm) -> Complex {
        let (a1, a2) = (self.a, other.a);
        let delta = other.center - self.center;
        let big_a = a1 + a2;
        let bx = a2 * (2.0 * delta.x) + Complex::new(0.0, self.momentum.x + other.momentum.x);
        let by = a2 * (2.0 * delta.y) + Complex::new(0.0, self.momentum.y + other.momentum.y);
        let exponent = (bx * bx + by * by) / (4.0 * big_a) - a2 * delta.norm_sqr()
            - Complex::new(0.0, other.momentum.dot(delta));
        self.scale * other.scale * (PI / big_a) * exponent.exp()
    }

    /// `⟨f|g⟩ = ∫ conj(f) g d²r`.
    pub fn inner(&self, other: &GaussianForm) -> Complex {
        self.conj().integral_of_product(other)
    }

    /// `∫ |f| |g| d²r`.
    pub fn modulus_overlap(&self, other: &GaussianForm) -> f64 {
        let (a1, a2) = (self.a.re, other.a.re);
        let d2 = (other.center - self.center).norm_sqr();
        self.scale.norm() * other.scale.norm() * (PI / (a1 + a2)) * (-a1 * a2 * d2 / (a1 + a2)).exp()
    }

    fn coherent_with(&self, other: &GaussianForm) -> bool {
        let close = |x: f64, y: f64, scale: f64| (x - y).abs() <= 1e-9 * scale.max(1.0);
        let ca = self.a.norm();
        close(self.a.re, other.a.re, ca)
            && close(self.a.im, other.a.im, ca)
            && close(self.center.x, other.center.x, self.center.norm())
            && close(self.center.y, other.center.y, self.center.norm())
            && close(self.momentum.x, other.momentum.x, 1.0)
            && close(self.momentum.y, other.momentum.y, 1.0)
    }
}

/// Merges forms that describe the same spatial mode by summing their scales.
pub fn coherent_groups(forms: &[GaussianForm]) -> Vec<GaussianForm> {
    let mut groups: Vec<GaussianForm> = Vec::new();
    for f in forms {
        match groups.iter_mut().find(|g| g.coherent_with(f)) {
            Some(g) => g.scale += f.scale,
            None => groups.push(*f),
        }
    }
    groups
}

/// `‖Σ f_i‖²` from pairwise overlap integrals.
pub fn gram_norm(forms: &[GaussianForm]) -> f64 {
    let mut total = Complex::new(0.0, 0.0);
    for f in forms {
        for g in forms {
            total += f.inner(g);
        }
    }
    total.re
}

pub fn forms_at(packets: &[GaussianPacket], t: f64) -> Result<Vec<GaussianForm>> {
    packets.iter().map(|p| p.form_at(t)).collect()
}

/// Coherent superposition of packets at one point. All packets must share
/// physical constants.
pub fn field_at(packets: &[GaussianPacket], r: Vec2, t: f64) -> Result<Complex> {
    if let Some(first) = packets.first() {
        if packets.iter().any(|p| p.constants != first.constants) {
            return Err(precondition("superposed packets must share physical constants"));
        }
    }
    packets
        .iter()
        .try_fold(Complex::new(0.0, 0.0), |acc, p| Ok(acc + p.amplitude_at(r, t)?))
}

/// Regular grid including both end points on each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(config(format!("degenerate grid bounds: {self:?}")));
        }
        if self.nx < 2 || self.ny < 2 {
            return Err(config(format!("grid needs at least 2x2 points, got {}x{}", self.nx, self.ny)));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny - 1) as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    /// Point at column `i`, row `j` (rows run along increasing y).
    pub fn point(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            self.x_min + i as f64 * self.dx(),
            self.y_min + j as f64 * self.dy(),
        )
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples a sum of forms on every grid point (row-major, rows along y).
pub fn sample_forms(forms: &[GaussianForm], spec: &GridSpec) -> Result<Vec<Complex>> {
    spec.validate()?;
    let rows: Vec<Vec<Complex>> = (0..spec.ny)
        .into_par_iter()
        .map(|j| {
            (0..spec.nx)
                .map(|i| {
                    let r = spec.point(i, j);
                    forms.iter().map(|f| f.eval(r)).sum()
                })
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// Real-valued field on a grid: a probability density or the modulus of a
/// product of wavefunctions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl FieldGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(config(format!(
                "grid of {} values does not match {}x{}",
                values.len(),
                spec.nx,
                spec.ny
            )));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("field grid values must be non-negative".into()));
        }
        Ok(Self { spec, values })
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.spec.nx + i]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Grid point holding the largest value.
    pub fn argmax(&self) -> Vec2 {
        let (k, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (k, &v)| if v > best.1 { (k, v) } else { best });
        self.spec.point(k % self.spec.nx, k / self.spec.nx)
    }

    pub fn mass(&self) -> f64 {
        self.mass_where(|_| true)
    }

    pub fn mass_where(&self, mut region: impl FnMut(Vec2) -> bool) -> f64 {
        let mut total = 0.0;
        for j in 0..self.spec.ny {
            for i in 0..self.spec.nx {
                let v = self.value(i, j);
                if v != 0.0 && region(self.spec.point(i, j)) {
                    total += v;
                }
            }
        }
        total * self.spec.cell_area()
    }

    pub fn centroid(&self) -> Vec2 {
        let mut acc = Vec2::ZERO;
        let mut w = 0.0;
        for j in 0..self.spec.ny {
            for i in 0..self.spec.nx {
                let v = self.value(i, j);
                acc = acc + self.spec.point(i, j) * v;
                w += v;
            }
        }
        acc * (1.0 / w)
    }
}

/// `|Σ ψ|²` sampled on a grid.
pub fn density_grid(packets: &[GaussianPacket], spec: &GridSpec, t: f64) -> Result<FieldGrid> {
    let forms = forms_at(packets, t)?;
    let values = sample_forms(&forms, spec)?.into_iter().map(|z| z.norm_sqr()).collect();
    FieldGrid::new(*spec, values)
}

/// `|w · φ* · ψ|` sampled on a grid, where `forward` sums to ψ and
/// `advanced` sums to φ* at the same instant.
pub fn product_grid(
    forward: &[GaussianForm],
    advanced: &[GaussianForm],
    weight: Complex,
    spec: &GridSpec,
) -> Result<FieldGrid> {
    let psi = sample_forms(forward, spec)?;
    let phi = sample_forms(advanced, spec)?;
    let values = psi.iter().zip(&phi).map(|(a, b)| (weight * a * b).norm()).collect();
    FieldGrid::new(*spec, values)
}

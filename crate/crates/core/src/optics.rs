//! Sources, detectors, mirrors and beam-splitters.
//!
//! Phase conventions: transmission through a splitter is phase free, a
//! reflection off the dielectric-coated face flips the sign, a reflection off
//! the glass face does not, and a mirror always flips the sign. Each splitter
//! passes half the intensity each way.

use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::geometry::{Vec2, UNIT_TOLERANCE};
use crate::rng::Chooser;
use crate::wavepacket::{Complex, GaussianPacket, Interaction};

/// Distance from an element within which a packet centre counts as hitting it.
pub const CAPTURE_RADIUS: f64 = 1.0;

/// Incidence closer to the splitter plane than this is treated as grazing.
const GRAZING: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ElementKind {
    Source { emit_direction: Vec2 },
    /// `aperture` points from the detector back into the apparatus: packets
    /// arrive travelling along `-aperture`, and the time-reversed detector
    /// emits along `aperture`.
    Detector { aperture: Vec2 },
    Mirror { normal: Vec2 },
    /// `dielectric_side` is the unit normal of the splitter plane pointing
    /// out of the coated face.
    BeamSplitter { dielectric_side: Vec2 },
}

impl ElementKind {
    pub fn is_boundary(&self) -> bool {
        matches!(self, ElementKind::Source { .. } | ElementKind::Detector { .. })
    }

    fn unit_vector(&self) -> Vec2 {
        match *self {
            ElementKind::Source { emit_direction } => emit_direction,
            ElementKind::Detector { aperture } => aperture,
            ElementKind::Mirror { normal } => normal,
            ElementKind::BeamSplitter { dielectric_side } => dielectric_side,
        }
    }
}

/// Which end of an [`Interval`] is closed. Forward-time schedules use
/// `[on, off)`; time reversal turns them into `(on, off]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Closure {
    #[serde(rename = "[)")]
    Start,
    #[serde(rename = "(]")]
    End,
}

/// Presence interval. Serialized as `[on, off]` when half-open on the right,
/// `[on, off, "(]"]` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "IntervalRepr", into = "IntervalRepr")]
pub struct Interval {
    pub on: f64,
    pub off: f64,
    pub closed: Closure,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum IntervalRepr {
    Standard(f64, f64),
    Explicit(f64, f64, Closure),
}

impl From<IntervalRepr> for Interval {
    fn from(r: IntervalRepr) -> Self {
        match r {
            IntervalRepr::Standard(on, off) => Interval::new(on, off),
            IntervalRepr::Explicit(on, off, closed) => Interval { on, off, closed },
        }
    }
}

impl From<Interval> for IntervalRepr {
    fn from(i: Interval) -> Self {
        match i.closed {
            Closure::Start => IntervalRepr::Standard(i.on, i.off),
            Closure::End => IntervalRepr::Explicit(i.on, i.off, i.closed),
        }
    }
}

impl Interval {
    /// `[on, off)`.
    pub const fn new(on: f64, off: f64) -> Self {
        Self {
            on,
            off,
            closed: Closure::Start,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        match self.closed {
            Closure::Start => self.on <= t && t < self.off,
            Closure::End => self.on < t && t <= self.off,
        }
    }

    /// Image under `t -> horizon - t`.
    pub fn reversed(&self, horizon: f64) -> Interval {
        Interval {
            on: horizon - self.off,
            off: horizon - self.on,
            closed: match self.closed {
                Closure::Start => Closure::End,
                Closure::End => Closure::Start,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalElement {
    pub id: String,
    #[serde(flatten)]
    pub kind: ElementKind,
    pub position: Vec2,
    #[serde(default)]
    pub presence: Vec<Interval>,
}

impl OpticalElement {
    pub fn new(id: &str, kind: ElementKind, position: Vec2, presence: Vec<Interval>) -> Self {
        Self {
            id: id.to_string(),
            kind,
            position,
            presence,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.unit_vector().unit(UNIT_TOLERANCE).map_err(|e| {
            Error::Geometry(format!("element {}: {e}", self.id))
        })?;
        if !self.position.is_finite() {
            return Err(Error::Geometry(format!("element {} has a non-finite position", self.id)));
        }
        for w in self.presence.windows(2) {
            if w[0].off > w[1].on {
                return Err(Error::Config(format!(
                    "element {}: presence intervals must be sorted and disjoint",
                    self.id
                )));
            }
        }
        if self.presence.iter().any(|i| !(i.on <= i.off)) {
            return Err(Error::Config(format!("element {}: interval ends before it starts", self.id)));
        }
        Ok(())
    }
}

pub fn is_present(element: &OpticalElement, t: f64) -> bool {
    element.presence.iter().any(|i| i.contains(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitterMode {
    /// A splitter always divides the incoming wavefunction into a reflected
    /// and a transmitted part.
    AlwaysSplit,
    /// A splitter acts as a which-path measurement: the particle leaves on
    /// one path only, chosen with probability ½.
    CollapseAtSplitter,
}

impl SplitterMode {
    pub fn label(&self) -> &'static str {
        match self {
            SplitterMode::AlwaysSplit => "always-split",
            SplitterMode::CollapseAtSplitter => "collapse",
        }
    }
}

impl std::str::FromStr for SplitterMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "always-split" | "always_split" => Ok(SplitterMode::AlwaysSplit),
            "collapse" | "collapse-at-splitter" | "collapse_at_splitter" => Ok(SplitterMode::CollapseAtSplitter),
            other => Err(Error::Config(format!("unknown splitter mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    Dielectric,
    Glass,
}

pub fn face_hit(dielectric_side: Vec2, incoming: Vec2) -> Result<Face> {
    let c = incoming.dot(dielectric_side);
    if c.abs() < GRAZING {
        return Err(Error::Geometry("grazing incidence on a beam-splitter".into()));
    }
    Ok(if c < 0.0 { Face::Dielectric } else { Face::Glass })
}

/// Reflection and transmission factors for a packet arriving along
/// `incoming`.
pub fn splitter_factors(dielectric_side: Vec2, incoming: Vec2) -> Result<(Complex, Complex)> {
    let t = Complex::new(FRAC_1_SQRT_2, 0.0);
    let r = match face_hit(dielectric_side, incoming)? {
        Face::Dielectric => Complex::new(-FRAC_1_SQRT_2, 0.0),
        Face::Glass => Complex::new(FRAC_1_SQRT_2, 0.0),
    };
    Ok((r, t))
}

pub const MIRROR_FACTOR: Complex = Complex::new(-1.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub enum ScatterResult {
    /// The element was absent; the packet continues unchanged apart from a
    /// `Pass` entry in its lineage.
    Passed(GaussianPacket),
    /// Outgoing branches, reflected first.
    Children(Vec<(GaussianPacket, Interaction)>),
    /// The packet reached a source or detector.
    Boundary,
}

fn reflected_child(packet: &GaussianPacket, anchor: Vec2, normal: Vec2, factor: Complex) -> GaussianPacket {
    GaussianPacket {
        amplitude: packet.amplitude * factor,
        origin: packet.origin.reflect_about(anchor, normal),
        direction: packet.direction.reflect(normal),
        ..packet.clone()
    }
}

/// Interaction of `packet` with `element` at `t_hit`. `present` is the
/// element's presence as judged by the caller (usually `is_present` at
/// `t_hit`).
pub fn scatter_with_presence(
    packet: &GaussianPacket,
    element: &OpticalElement,
    t_hit: f64,
    present: bool,
    mode: SplitterMode,
    chooser: &mut dyn Chooser,
) -> Result<ScatterResult> {
    let center = packet.center_at(t_hit)?;
    if center.distance(element.position) > CAPTURE_RADIUS {
        return Err(precondition(format!(
            "packet centre ({:.3}, {:.3}) is not at element {} at t={t_hit}",
            center.x, center.y, element.id
        )));
    }
    if element.kind.is_boundary() {
        return Ok(ScatterResult::Boundary);
    }
    if !present {
        let mut p = packet.clone();
        p.push_lineage(&element.id, Interaction::Pass);
        return Ok(ScatterResult::Passed(p));
    }
    let children = match element.kind {
        ElementKind::Mirror { normal } => {
            let child = reflected_child(packet, element.position, normal, MIRROR_FACTOR)
                .with_lineage(&element.id, Interaction::Reflect);
            vec![(child, Interaction::Reflect)]
        }
        ElementKind::BeamSplitter { dielectric_side } => {
            let (r, t) = splitter_factors(dielectric_side, packet.direction)?;
            let reflect = |factor| {
                reflected_child(packet, element.position, dielectric_side, factor)
                    .with_lineage(&element.id, Interaction::Reflect)
            };
            let transmit = |factor: Complex| {
                let mut p = packet.clone();
                p.amplitude *= factor;
                p.with_lineage(&element.id, Interaction::Transmit)
            };
            match mode {
                SplitterMode::AlwaysSplit => vec![
                    (reflect(r), Interaction::Reflect),
                    (transmit(t), Interaction::Transmit),
                ],
                SplitterMode::CollapseAtSplitter => {
                    // The full particle continues on one path; only the
                    // phase of the branch factor is kept.
                    if chooser.choose(&[r.norm_sqr(), t.norm_sqr()]) == 0 {
                        vec![(reflect(r / r.norm()), Interaction::Reflect)]
                    } else {
                        vec![(transmit(t / t.norm()), Interaction::Transmit)]
                    }
                }
            }
        }
        ElementKind::Source { .. } | ElementKind::Detector { .. } => unreachable!(),
    };
    Ok(ScatterResult::Children(children))
}

pub fn scatter(
    packet: &GaussianPacket,
    element: &OpticalElement,
    t_hit: f64,
    mode: SplitterMode,
    chooser: &mut dyn Chooser,
) -> Result<ScatterResult> {
    scatter_with_presence(packet, element, t_hit, is_present(element, t_hit), mode, chooser)
}

/// Earliest time `t > after` at which the packet centre passes within the
/// capture radius of `position`.
pub fn next_arrival(packet: &GaussianPacket, position: Vec2, after: f64) -> Option<f64> {
    let v = packet.constants.group_velocity();
    let rel = position - packet.origin;
    let along = rel.dot(packet.direction);
    let off_ray = (rel - packet.direction * along).norm();
    if off_ray > CAPTURE_RADIUS {
        return None;
    }
    let t = packet.birth_time + along / v;
    (t > after).then_some(t)
}

/// Earliest `t ≥ birth_time` at which the packet reaches the element.
pub fn arrival_time(packet: &GaussianPacket, element: &OpticalElement) -> Option<f64> {
    next_arrival(packet, element.position, packet.birth_time - 1e-9).map(|t| t.max(packet.birth_time))
}

/// Product of the element factors along a chain that starts at a source.
/// Dynamical phases are common to all equal-length chains and are excluded.
pub fn transfer_amplitude(chain: &[(&OpticalElement, Interaction)]) -> Result<Complex> {
    let inconsistent = |msg: String| Error::Geometry(format!("inconsistent chain: {msg}"));
    let (first, rest) = chain
        .split_first()
        .ok_or_else(|| inconsistent("empty chain".into()))?;
    let mut direction = match (first.0.kind, first.1) {
        (ElementKind::Source { emit_direction }, Interaction::Emit) => emit_direction,
        _ => return Err(inconsistent(format!("chain must start with an emitting source, got {}", first.0.id))),
    };
    let mut position = first.0.position;
    let mut amplitude = Complex::new(1.0, 0.0);
    for (k, (element, interaction)) in rest.iter().enumerate() {
        let rel = element.position - position;
        let along = rel.dot(direction);
        if along <= 0.0 || (rel - direction * along).norm() > CAPTURE_RADIUS {
            return Err(inconsistent(format!("{} is not ahead on the ray", element.id)));
        }
        position = element.position;
        let last = k + 1 == rest.len();
        match (element.kind, interaction) {
            (_, Interaction::Pass) if !element.kind.is_boundary() => {}
            (ElementKind::Mirror { normal }, Interaction::Reflect) => {
                amplitude *= MIRROR_FACTOR;
                direction = direction.reflect(normal);
            }
            (ElementKind::BeamSplitter { dielectric_side }, Interaction::Reflect) => {
                amplitude *= splitter_factors(dielectric_side, direction)?.0;
                direction = direction.reflect(dielectric_side);
            }
            (ElementKind::BeamSplitter { dielectric_side }, Interaction::Transmit) => {
                amplitude *= splitter_factors(dielectric_side, direction)?.1;
            }
            (ElementKind::Detector { .. }, Interaction::Collapse) if last => {}
            _ => {
                return Err(inconsistent(format!("{:?} is not possible at {}", interaction, element.id)));
            }
        }
    }
    Ok(amplitude)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{NoChoice, RunRng};
    use crate::wavepacket::PhysicalConstants;

    const S: f64 = FRAC_1_SQRT_2;

    fn splitter(id: &str, side: Vec2, presence: Vec<Interval>) -> OpticalElement {
        OpticalElement::new(id, ElementKind::BeamSplitter { dielectric_side: side }, Vec2::ZERO, presence)
    }

    fn packet(amplitude: f64, origin: Vec2, direction: Vec2) -> GaussianPacket {
        GaussianPacket::new(Complex::new(amplitude, 0.0), 0.0, origin, direction, PhysicalConstants::default()).unwrap()
    }

    #[test]
    fn presence_intervals() {
        let b2 = splitter("B2", Vec2::new(S, -S), vec![Interval::new(5000.0, 8000.0)]);
        assert!(!is_present(&b2, 4999.0));
        assert!(is_present(&b2, 5000.0));
        assert!(!is_present(&b2, 8000.0));
        let gone = splitter("B2", Vec2::new(S, -S), vec![]);
        assert!(!is_present(&gone, 0.0) && !is_present(&gone, 1e6));
        let rev = Interval::new(5000.0, 8000.0).reversed(8000.0);
        assert!(!rev.contains(0.0) && rev.contains(3000.0) && rev.contains(2000.0));
        assert_eq!(rev.reversed(8000.0), Interval::new(5000.0, 8000.0));
    }

    #[test]
    fn interval_serialization() {
        let s = serde_json::to_string(&Interval::new(0.0, 3000.0)).unwrap();
        assert_eq!(s, "[0.0,3000.0]");
        let r = Interval::new(5000.0, 8000.0).reversed(8000.0);
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, "[0.0,3000.0,\"(]\"]");
        assert_eq!(serde_json::from_str::<Interval>(&s).unwrap(), r);
    }

    #[test]
    fn splitter_phase_rules() {
        let side = Vec2::new(-S, S);
        let (r, t) = splitter_factors(side, Vec2::new(1.0, 0.0)).unwrap();
        assert!((r.re + S).abs() < 1e-15 && (t.re - S).abs() < 1e-15);
        let (r, t) = splitter_factors(side, Vec2::new(0.0, 1.0)).unwrap();
        assert!((r.re - S).abs() < 1e-15 && (t.re - S).abs() < 1e-15);
        assert!(splitter_factors(side, Vec2::new(S, S)).is_err());
    }

    #[test]
    fn splitter_matrix_is_unitary() {
        let side = Vec2::new(-S, S);
        let (r_diel, t) = splitter_factors(side, Vec2::new(1.0, 0.0)).unwrap();
        let (r_glass, _) = splitter_factors(side, Vec2::new(0.0, 1.0)).unwrap();
        // Columns of [[t, r_glass], [r_diel, t]].
        assert!((r_diel.norm_sqr() + t.norm_sqr() - 1.0).abs() < 1e-12);
        assert!((r_glass.norm_sqr() + t.norm_sqr() - 1.0).abs() < 1e-12);
        assert!((t * r_glass.conj() + r_diel * t.conj()).norm() < 1e-12);
    }

    #[test]
    fn mirror_flips_sign_and_direction() {
        let m = OpticalElement::new(
            "M2",
            ElementKind::Mirror { normal: Vec2::new(S, -S) },
            Vec2::new(800.0, 0.0),
            vec![Interval::new(0.0, 8000.0)],
        );
        let p = packet(S, Vec2::ZERO, Vec2::new(1.0, 0.0));
        let ScatterResult::Children(children) = scatter(&p, &m, 2000.0, SplitterMode::AlwaysSplit, &mut NoChoice).unwrap() else {
            panic!("mirror must reflect");
        };
        assert_eq!(children.len(), 1);
        let (child, kind) = &children[0];
        assert_eq!(*kind, Interaction::Reflect);
        assert!((child.amplitude.re + S).abs() < 1e-15);
        assert!(child.direction.distance(Vec2::new(0.0, 1.0)) < 1e-15);
        let c = child.center_at(3000.0).unwrap();
        assert!(c.distance(Vec2::new(800.0, 400.0)) < 1e-9);
    }

    #[test]
    fn parallel_mirrors_restore_direction() {
        let n = Vec2::new(S, -S);
        let d = Vec2::new(1.0, 0.0);
        assert!(d.reflect(n).reflect(n).distance(d) < 1e-15);
        assert_eq!(MIRROR_FACTOR * MIRROR_FACTOR, Complex::new(1.0, 0.0));
    }

    #[test]
    fn always_split_from_the_coated_side() {
        let b1 = splitter("B1", Vec2::new(-S, S), vec![Interval::new(0.0, 8000.0)]);
        let p = packet(1.0, Vec2::new(-800.0, 0.0), Vec2::new(1.0, 0.0));
        let ScatterResult::Children(children) = scatter(&p, &b1, 2000.0, SplitterMode::AlwaysSplit, &mut NoChoice).unwrap() else {
            panic!();
        };
        assert_eq!(children.len(), 2);
        assert!((children[0].0.amplitude.re + S).abs() < 1e-15);
        assert!((children[1].0.amplitude.re - S).abs() < 1e-15);
        let total: f64 = children.iter().map(|(c, _)| c.amplitude.norm_sqr()).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn collapse_picks_one_branch_with_full_modulus() {
        let b1 = splitter("B1", Vec2::new(-S, S), vec![Interval::new(0.0, 8000.0)]);
        let p = packet(1.0, Vec2::new(-800.0, 0.0), Vec2::new(1.0, 0.0));
        let mut reflected = 0;
        for seed in 0..10_000u64 {
            let mut rng = RunRng::stream(seed, 0);
            let ScatterResult::Children(children) = scatter(&p, &b1, 2000.0, SplitterMode::CollapseAtSplitter, &mut rng).unwrap() else {
                panic!();
            };
            assert_eq!(children.len(), 1);
            assert!((children[0].0.amplitude.norm() - 1.0).abs() < 1e-15);
            if children[0].1 == Interaction::Reflect {
                assert!((children[0].0.amplitude.re + 1.0).abs() < 1e-15);
                reflected += 1;
            }
        }
        let ratio = reflected as f64 / 10_000.0;
        assert!((ratio - 0.5).abs() < 0.02, "ratio {ratio}");
    }

    #[test]
    fn absent_element_lets_the_packet_pass() {
        let b2 = splitter("B2", Vec2::new(S, -S), vec![]);
        let p = packet(1.0, Vec2::new(-800.0, 0.0), Vec2::new(1.0, 0.0));
        match scatter(&p, &b2, 2000.0, SplitterMode::AlwaysSplit, &mut NoChoice).unwrap() {
            ScatterResult::Passed(q) => {
                assert_eq!(q.amplitude, p.amplitude);
                assert_eq!(q.lineage.last().unwrap().interaction, Interaction::Pass);
            }
            other => panic!("expected pass, got {other:?}"),
        }
    }

    #[test]
    fn scatter_away_from_the_element_is_rejected() {
        let b2 = splitter("B2", Vec2::new(S, -S), vec![Interval::new(0.0, 1e4)]);
        let p = packet(1.0, Vec2::new(-800.0, 0.0), Vec2::new(1.0, 0.0));
        assert!(scatter(&p, &b2, 1000.0, SplitterMode::AlwaysSplit, &mut NoChoice).is_err());
    }

    #[test]
    fn arrival_times() {
        let p = packet(1.0, Vec2::ZERO, Vec2::new(1.0, 0.0));
        let at = |x: f64, y: f64| {
            let e = OpticalElement::new("X", ElementKind::Mirror { normal: Vec2::new(S, -S) }, Vec2::new(x, y), vec![]);
            arrival_time(&p, &e)
        };
        assert!((at(800.0, 0.0).unwrap() - 2000.0).abs() < 1e-9);
        assert_eq!(at(800.0, 1.5), None);
        assert_eq!(at(-800.0, 0.0), None);
        assert_eq!(at(0.0, 0.0), Some(0.0));
    }
}

//! Executable theories.
//!
//! All three are built on [`propagate`], an event-driven walk of one
//! wavefunction from an emitting boundary element through the apparatus:
//! packets move ballistically, scatter at elements in arrival order and end
//! at sources or detectors.
//!
//! * CT runs it forward from a source and collapses onto one detector.
//! * AT runs it on the time-reversed scenario from a detector and collapses
//!   onto one source.
//! * ST runs both legs and works with the product `φ*ψ`, where
//!   `φ*(r, t) = φ_rev(r, T - t)` and `φ_rev` is the reversed-time leg.

use std::collections::{BTreeMap, VecDeque};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::geometry::Vec2;
use crate::optics::{next_arrival, scatter_with_presence, ElementKind, ScatterResult, SplitterMode};
use crate::rng::{enumerate, Chooser, NoChoice};
use crate::scenario::{Arm, ArmGeometry, Scenario, LOWER_MIRROR, UPPER_MIRROR};
use crate::wavepacket::{
    forms_at, gram_norm, sample_forms, Complex, FieldGrid, GaussianForm, GaussianPacket, GridSpec, Interaction,
    PacketDescriptor, PRUNE_AMPLITUDE, SIGMA_COLLAPSE,
};

/// Relative threshold for an arm to count as carrying the wavefunction.
pub const EPSILON_SUPPORT: f64 = 1e-9;

/// Absolute floor under which a product mass counts as zero.
pub const ZERO_MASS: f64 = 1e-12;

/// Detection probabilities below this are treated as exact zeros.
const ZERO_PROBABILITY: f64 = PRUNE_AMPLITUDE * PRUNE_AMPLITUDE;

const MAX_EVENTS: usize = 10_000;

/// Minimum spacing between consecutive events of one packet.
const EVENT_GAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TheoryKind {
    Ct,
    At,
    St,
}

impl TheoryKind {
    pub fn label(&self) -> &'static str {
        match self {
            TheoryKind::Ct => "ct",
            TheoryKind::At => "at",
            TheoryKind::St => "st",
        }
    }
}

impl FromStr for TheoryKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ct" => Ok(TheoryKind::Ct),
            "at" => Ok(TheoryKind::At),
            "st" => Ok(TheoryKind::St),
            other => Err(config(format!("unknown theory `{other}` (expected ct, at or st)"))),
        }
    }
}

/// How a leg sees element presence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PresenceRule {
    /// Presence at the instant of each interaction.
    Dynamic,
    /// Presence as it was just after the given instant, for the whole leg.
    FrozenAt(f64),
}

/// One packet over the time span in which it exists unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub packet: GaussianPacket,
    pub start: f64,
    /// Time of the interaction that ended the segment, if any.
    pub end: Option<f64>,
    /// Ended at a source or detector. Terminal segments include their end
    /// point; others hand over to their children at `end`.
    pub terminal: bool,
}

impl Segment {
    pub fn alive_at(&self, t: f64) -> bool {
        t >= self.start
            && match self.end {
                None => true,
                Some(end) if self.terminal => t <= end,
                Some(end) => t < end,
            }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arrival {
    pub element: String,
    pub time: f64,
    pub packet: GaussianPacket,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub emitter: String,
    pub emit_time: f64,
    pub segments: Vec<Segment>,
    /// Packets that reached a detector.
    pub arrivals: Vec<Arrival>,
    /// Packets that ran back into a source.
    pub lost: Vec<Arrival>,
}

impl Propagation {
    pub fn packets_at(&self, t: f64) -> Vec<GaussianPacket> {
        self.segments
            .iter()
            .filter(|s| s.alive_at(t))
            .map(|s| s.packet.clone())
            .collect()
    }

    pub fn arrivals_at<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Arrival> + 'a {
        self.arrivals.iter().filter(move |a| a.element == id)
    }

    fn last_arrival_time(&self, id: &str) -> Option<f64> {
        self.arrivals_at(id).map(|a| a.time).reduce(f64::max)
    }

    /// `‖Σ packets arriving at id‖²`.
    pub fn arrival_probability(&self, id: &str) -> Result<f64> {
        let Some(t) = self.last_arrival_time(id) else {
            return Ok(0.0);
        };
        let packets: Vec<GaussianPacket> = self.arrivals_at(id).map(|a| a.packet.clone()).collect();
        let p = gram_norm(&forms_at(&packets, t)?);
        Ok(if p < ZERO_PROBABILITY { 0.0 } else { p })
    }

    pub fn arrival_amplitude(&self, id: &str) -> Complex {
        self.arrivals_at(id).map(|a| a.packet.amplitude).sum()
    }
}

/// Event-driven propagation of the wavefunction emitted by `emitter`.
pub fn propagate(
    scenario: &Scenario,
    emitter: &str,
    mode: SplitterMode,
    rule: PresenceRule,
    chooser: &mut dyn Chooser,
) -> Result<Propagation> {
    let (src_idx, src) = scenario
        .elements
        .iter()
        .enumerate()
        .find(|(_, e)| e.id == emitter)
        .ok_or_else(|| config(format!("no element {emitter}")))?;
    let ElementKind::Source { emit_direction } = src.kind else {
        return Err(config(format!("{emitter} is not a source")));
    };
    let emit_time = *scenario
        .emissions
        .get(emitter)
        .ok_or_else(|| config(format!("{emitter} has no emission time")))?;
    let first = GaussianPacket::new(Complex::new(1.0, 0.0), emit_time, src.position, emit_direction, scenario.constants)?
        .with_lineage(emitter, Interaction::Emit);

    let mut out = Propagation {
        emitter: emitter.to_string(),
        emit_time,
        segments: Vec::new(),
        arrivals: Vec::new(),
        lost: Vec::new(),
    };
    let mut queue = VecDeque::from([(first, emit_time, src_idx)]);
    let mut events = 0;
    while let Some((packet, start, last)) = queue.pop_front() {
        events += 1;
        if events > MAX_EVENTS {
            return Err(config(format!("more than {MAX_EVENTS} scattering events; is there a mirror cavity?")));
        }
        let hit = scenario
            .elements
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != last)
            .filter_map(|(i, e)| next_arrival(&packet, e.position, start + EVENT_GAP).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let Some((t, idx)) = hit else {
            out.segments.push(Segment { packet, start, end: None, terminal: false });
            continue;
        };
        let element = &scenario.elements[idx];
        let present = match rule {
            PresenceRule::Dynamic => scenario.presence_at(&element.id, t),
            PresenceRule::FrozenAt(t0) => scenario.presence_at(&element.id, t0 + EVENT_GAP),
        }
        .unwrap_or(false);
        match scatter_with_presence(&packet, element, t, present, mode, chooser)? {
            ScatterResult::Boundary => {
                out.segments.push(Segment { packet: packet.clone(), start, end: Some(t), terminal: true });
                let arrival = Arrival { element: element.id.clone(), time: t, packet };
                match element.kind {
                    ElementKind::Detector { .. } => out.arrivals.push(arrival),
                    _ => out.lost.push(arrival),
                }
            }
            ScatterResult::Passed(next) => {
                out.segments.push(Segment { packet, start, end: Some(t), terminal: false });
                queue.push_back((next, t, idx));
            }
            ScatterResult::Children(children) => {
                out.segments.push(Segment { packet, start, end: Some(t), terminal: false });
                for (child, _) in children {
                    if child.amplitude.norm() >= PRUNE_AMPLITUDE {
                        queue.push_back((child, t, idx));
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ArmSupport {
    pub upper: bool,
    pub lower: bool,
}

/// Arm flags from the lineage of the packets that make up an amplitude:
/// an arm counts if a packet that went through it carries at least
/// `epsilon` of the summed branch moduli.
pub fn arm_support_from_lineage(packets: &[GaussianPacket], epsilon: f64) -> ArmSupport {
    let total: f64 = packets.iter().map(|p| p.amplitude.norm()).sum();
    let mut s = ArmSupport::default();
    if total <= 0.0 {
        return s;
    }
    for p in packets.iter().filter(|p| p.amplitude.norm() >= epsilon * total) {
        s.upper |= p.passed_through(UPPER_MIRROR);
        s.lower |= p.passed_through(LOWER_MIRROR);
    }
    s
}

/// Arm flags from integrated masses. A zero total gives no support at all.
pub fn arm_support_from_masses(upper: f64, lower: f64, epsilon: f64) -> ArmSupport {
    let total = upper + lower;
    if !(total > ZERO_MASS) {
        return ArmSupport::default();
    }
    ArmSupport {
        upper: upper > epsilon * total,
        lower: lower > epsilon * total,
    }
}

/// Arm masses of a product field sampled on a grid.
pub fn arm_masses_from_grid(grid: &FieldGrid, geometry: &ArmGeometry) -> (f64, f64) {
    let upper = grid.mass_where(|r| geometry.arm_of(r) == Arm::Upper);
    let lower = grid.mass_where(|r| geometry.arm_of(r) == Arm::Lower);
    (upper, lower)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseEvent {
    pub time: f64,
    pub element: String,
    pub pre: Vec<PacketDescriptor>,
    pub post: PacketDescriptor,
}

/// Product masses per arm, summed over the sample times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmMass {
    pub upper: f64,
    pub lower: f64,
    pub sample_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub source: String,
    pub detector: String,
    pub theory: TheoryKind,
    pub mode: SplitterMode,
    pub arm_support: ArmSupport,
    /// Summed branch amplitudes at each element of the collapsing boundary
    /// (detectors for CT and ST, sources for AT).
    pub amplitudes: BTreeMap<String, Complex>,
    pub probabilities: BTreeMap<String, f64>,
    pub weight: f64,
    pub collapse_events: Vec<CollapseEvent>,
    /// ST only: `∫ φ* ψ` at the first arm sample time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_amplitude: Option<Complex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm_mass: Option<ArmMass>,
}

/// A conventional run with everything needed to draw it.
#[derive(Debug, Clone)]
pub struct CtRun {
    pub record: TransitionRecord,
    pub propagation: Propagation,
    pub detection_time: f64,
    /// Localized wavefunction that replaces the packets on detection.
    pub collapsed: GaussianPacket,
}

impl CtRun {
    pub fn packets_at(&self, t: f64) -> Vec<GaussianPacket> {
        if t > self.detection_time {
            vec![self.collapsed.clone()]
        } else {
            self.propagation.packets_at(t)
        }
    }
}

pub fn run_ct(scenario: &Scenario, source: &str, mode: SplitterMode, chooser: &mut dyn Chooser) -> Result<TransitionRecord> {
    Ok(run_ct_detailed(scenario, source, mode, chooser)?.record)
}

pub fn run_ct_detailed(
    scenario: &Scenario,
    source: &str,
    mode: SplitterMode,
    chooser: &mut dyn Chooser,
) -> Result<CtRun> {
    let prop = propagate(scenario, source, mode, PresenceRule::Dynamic, chooser)?;
    let detection_time = prop
        .arrivals
        .iter()
        .map(|a| a.time)
        .reduce(f64::max)
        .ok_or_else(|| config(format!("no detector is reachable from {source}")))?;

    let detectors = scenario.detectors();
    let mut probabilities = BTreeMap::new();
    let mut amplitudes = BTreeMap::new();
    let mut weights = Vec::with_capacity(detectors.len());
    for d in &detectors {
        let packets: Vec<GaussianPacket> = prop.arrivals_at(d).map(|a| a.packet.clone()).collect();
        let p = gram_norm(&forms_at(&packets, detection_time)?);
        let p = if p < ZERO_PROBABILITY { 0.0 } else { p };
        probabilities.insert(d.to_string(), p);
        amplitudes.insert(d.to_string(), prop.arrival_amplitude(d));
        weights.push(p);
    }
    if !weights.iter().any(|w| *w > 0.0) {
        return Err(config(format!("no detector is reachable from {source}")));
    }
    let winner = detectors[chooser.choose(&weights)];
    let arriving: Vec<GaussianPacket> = prop.arrivals_at(winner).map(|a| a.packet.clone()).collect();

    let element = scenario.element(winner).expect("detector listed by scenario");
    let collapsed = GaussianPacket::new(
        Complex::new(1.0, 0.0),
        detection_time,
        element.position,
        arriving[0].direction,
        scenario.constants.with_sigma0(SIGMA_COLLAPSE),
    )?
    .with_lineage(winner, Interaction::Collapse);
    let pre = arriving
        .iter()
        .map(|p| p.descriptor(detection_time))
        .collect::<Result<Vec<_>>>()?;
    let event = CollapseEvent {
        time: detection_time,
        element: winner.to_string(),
        pre,
        post: collapsed.descriptor(detection_time)?,
    };
    let record = TransitionRecord {
        source: source.to_string(),
        detector: winner.to_string(),
        theory: TheoryKind::Ct,
        mode,
        arm_support: arm_support_from_lineage(&arriving, EPSILON_SUPPORT),
        weight: probabilities[winner],
        amplitudes,
        probabilities,
        collapse_events: vec![event],
        transition_amplitude: None,
        arm_mass: None,
    };
    Ok(CtRun { record, propagation: prop, detection_time, collapsed })
}

/// An advanced run. `reversed` is the conventional run on the reversed
/// scenario; its clock is the advanced clock `T - t`.
#[derive(Debug, Clone)]
pub struct AtRun {
    pub record: TransitionRecord,
    pub reversed: CtRun,
}

pub fn run_at(scenario: &Scenario, detector: &str, mode: SplitterMode, chooser: &mut dyn Chooser) -> Result<TransitionRecord> {
    Ok(run_at_detailed(scenario, detector, mode, chooser)?.record)
}

pub fn run_at_detailed(
    scenario: &Scenario,
    detector: &str,
    mode: SplitterMode,
    chooser: &mut dyn Chooser,
) -> Result<AtRun> {
    let reversed = scenario.time_reverse();
    let run = run_ct_detailed(&reversed, detector, mode, chooser)?;
    let horizon = scenario.duration;
    let mut record = run.record.clone();
    record.source = run.record.detector.clone();
    record.detector = detector.to_string();
    record.theory = TheoryKind::At;
    for ev in &mut record.collapse_events {
        ev.time = horizon - ev.time;
    }
    Ok(AtRun { record, reversed: run })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leg {
    Forward,
    Backward,
}

/// A symmetrical run: the forward leg from the source and the backward
/// leg from the detector on the reversed scenario.
#[derive(Debug, Clone)]
pub struct StRun {
    pub record: TransitionRecord,
    pub horizon: f64,
    pub forward: Propagation,
    pub backward: Propagation,
    /// The leg propagated with collapsing splitters, if any.
    pub collapse_leg: Option<Leg>,
}

impl StRun {
    pub fn forward_forms(&self, t: f64) -> Result<Vec<GaussianForm>> {
        forms_at(&self.forward.packets_at(t), t)
    }

    /// Forms summing to `φ*` at forward time `t`.
    pub fn advanced_forms(&self, t: f64) -> Result<Vec<GaussianForm>> {
        let tau = self.horizon - t;
        forms_at(&self.backward.packets_at(tau), tau)
    }

    /// `∫ φ* ψ d²r` at time `t`.
    pub fn transition_amplitude(&self, t: f64) -> Result<Complex> {
        let fwd = self.forward_forms(t)?;
        let adv = self.advanced_forms(t)?;
        Ok(adv.iter().flat_map(|a| fwd.iter().map(move |f| a.integral_of_product(f))).sum())
    }

    /// `|conj(Ω) φ* ψ|` on a grid. The `conj(Ω)` factor makes forbidden
    /// transitions vanish even where both wavefunctions are nonzero.
    pub fn product_grid(&self, t: f64, spec: &GridSpec) -> Result<FieldGrid> {
        let omega = self.transition_amplitude(t)?;
        let psi = sample_forms(&self.forward_forms(t)?, spec)?;
        let phi = sample_forms(&self.advanced_forms(t)?, spec)?;
        let values = psi.iter().zip(&phi).map(|(a, b)| (omega.conj() * a * b).norm()).collect();
        FieldGrid::new(*spec, values)
    }

    /// Analytic arm masses `|Ω| Σ ∫ |φ*_i| |ψ_j|` at time `t`, summed over
    /// pairs of branches that are both in the arm. Pairs from different
    /// arms only meet through their Gaussian tails and count for neither.
    pub fn arm_masses_at(&self, t: f64, geometry: &ArmGeometry) -> Result<(f64, f64)> {
        let omega = self.transition_amplitude(t)?.norm();
        let fwd = self.forward_forms(t)?;
        let adv = self.advanced_forms(t)?;
        let (mut upper, mut lower) = (0.0, 0.0);
        for a in &adv {
            for f in &fwd {
                let arm = geometry.arm_of(a.center);
                if arm != geometry.arm_of(f.center) {
                    continue;
                }
                let m = omega * a.modulus_overlap(f);
                match arm {
                    Arm::Upper => upper += m,
                    Arm::Lower => lower += m,
                }
            }
        }
        Ok((upper, lower))
    }
}

/// Times at which a packet from `source` is halfway between the first
/// splitter and the mirrors, and halfway between the mirrors and the second
/// splitter.
pub fn arm_sample_times(scenario: &Scenario, source: &str, geometry: &ArmGeometry) -> Option<[f64; 2]> {
    let emit = *scenario.emissions.get(source)?;
    let start = scenario.element(source)?.position;
    let v = scenario.constants.group_velocity();
    let to_splitter = start.distance(geometry.first_splitter);
    let to_mirror = geometry.first_splitter.distance(geometry.upper_mirror);
    let to_second = geometry.upper_mirror.distance(geometry.second_splitter);
    Some([
        emit + (to_splitter + 0.5 * to_mirror) / v,
        emit + (to_splitter + to_mirror + 0.5 * to_second) / v,
    ])
}

/// Whether some splitter is absent when the leg starts and inserted later.
fn splitter_switches_on(scenario: &Scenario, t0: f64) -> bool {
    scenario.elements.iter().any(|e| {
        matches!(e.kind, ElementKind::BeamSplitter { .. })
            && scenario.presence_at(&e.id, t0 + EVENT_GAP) == Some(false)
            && e.presence.iter().any(|i| i.on > t0)
    })
}

/// Which leg collapses when a symmetrical run uses collapsing splitters:
/// the one that starts with a splitter missing that is put back later,
/// i.e. the leg on which the choice is delayed. Forward by default.
pub fn collapse_leg(scenario: &Scenario, source: &str, detector: &str) -> Leg {
    let resolved = scenario.resolved();
    let forward_start = resolved.emissions.get(source).copied().unwrap_or(0.0);
    if splitter_switches_on(&resolved, forward_start) {
        return Leg::Forward;
    }
    let reversed = resolved.time_reverse();
    let backward_start = reversed.emissions.get(detector).copied().unwrap_or(0.0);
    if splitter_switches_on(&reversed, backward_start) {
        Leg::Backward
    } else {
        Leg::Forward
    }
}

/// A collapsing leg propagated with presence frozen at its start. Among
/// its possible histories only those ending at `target` are consistent
/// with both boundaries; one is picked by probability.
fn collapsing_leg(
    scenario: &Scenario,
    emitter: &str,
    target: &str,
    chooser: &mut dyn Chooser,
) -> Result<(Option<Propagation>, f64)> {
    let start = *scenario
        .emissions
        .get(emitter)
        .ok_or_else(|| config(format!("{emitter} has no emission time")))?;
    let histories = enumerate(|c| {
        propagate(scenario, emitter, SplitterMode::CollapseAtSplitter, PresenceRule::FrozenAt(start), c)
    })?;
    let consistent: Vec<(f64, Propagation)> = histories
        .into_iter()
        .filter(|(_, h)| h.arrivals_at(target).next().is_some())
        .collect();
    let total: f64 = consistent.iter().map(|(p, _)| p).sum();
    let pick = match consistent.len() {
        0 => return Ok((None, 0.0)),
        1 => 0,
        _ => chooser.choose(&consistent.iter().map(|(p, _)| *p).collect::<Vec<_>>()),
    };
    Ok((consistent.into_iter().nth(pick).map(|(_, h)| h), total))
}

pub fn run_st(
    scenario: &Scenario,
    source: &str,
    detector: &str,
    mode: SplitterMode,
    chooser: &mut dyn Chooser,
) -> Result<TransitionRecord> {
    Ok(run_st_detailed(scenario, source, detector, mode, chooser)?.record)
}

pub fn run_st_detailed(
    scenario: &Scenario,
    source: &str,
    detector: &str,
    mode: SplitterMode,
    chooser: &mut dyn Chooser,
) -> Result<StRun> {
    if !scenario.detections.contains_key(detector) {
        return Err(config(format!("{detector} has no detection time")));
    }
    let reversed = scenario.time_reverse();
    let unitary = |s: &Scenario, emitter: &str| {
        propagate(s, emitter, SplitterMode::AlwaysSplit, PresenceRule::Dynamic, &mut NoChoice)
    };
    let leg = (mode == SplitterMode::CollapseAtSplitter).then(|| collapse_leg(scenario, source, detector));
    let empty = |emitter: &str, t| Propagation {
        emitter: emitter.to_string(),
        emit_time: t,
        segments: Vec::new(),
        arrivals: Vec::new(),
        lost: Vec::new(),
    };
    let (forward, backward, history_weight) = match leg {
        None => (unitary(scenario, source)?, unitary(&reversed, detector)?, None),
        Some(Leg::Forward) => {
            let (h, w) = collapsing_leg(scenario, source, detector, chooser)?;
            let forward = h.unwrap_or_else(|| empty(source, scenario.emissions[source]));
            (forward, unitary(&reversed, detector)?, Some(w))
        }
        Some(Leg::Backward) => {
            let (h, _) = collapsing_leg(&reversed, detector, source, chooser)?;
            let backward = h.unwrap_or_else(|| empty(detector, reversed.emissions[detector]));
            (unitary(scenario, source)?, backward, None)
        }
    };

    let mut amplitudes = BTreeMap::new();
    let mut probabilities = BTreeMap::new();
    for d in scenario.detectors() {
        amplitudes.insert(d.to_string(), forward.arrival_amplitude(d));
        probabilities.insert(d.to_string(), forward.arrival_probability(d)?);
    }
    let weight = match history_weight {
        Some(w) => w,
        None => probabilities.get(detector).copied().unwrap_or(0.0),
    };

    let mut run = StRun {
        record: TransitionRecord {
            source: source.to_string(),
            detector: detector.to_string(),
            theory: TheoryKind::St,
            mode,
            arm_support: ArmSupport::default(),
            amplitudes,
            probabilities,
            weight,
            collapse_events: Vec::new(),
            transition_amplitude: None,
            arm_mass: None,
        },
        horizon: scenario.duration,
        forward,
        backward,
        collapse_leg: leg,
    };
    if let Some(geometry) = scenario.arm_geometry() {
        if let Some(times) = arm_sample_times(scenario, source, &geometry) {
            let (mut upper, mut lower) = (0.0, 0.0);
            for t in times {
                let (u, l) = run.arm_masses_at(t, &geometry)?;
                upper += u;
                lower += l;
            }
            run.record.transition_amplitude = Some(run.transition_amplitude(times[0])?);
            run.record.arm_support = arm_support_from_masses(upper, lower, EPSILON_SUPPORT);
            run.record.arm_mass = Some(ArmMass { upper, lower, sample_times: times.to_vec() });
        }
    }
    Ok(run)
}

/// Position of the detector or source a run ended at, for convenience in
/// rendering and tests.
pub fn element_position(scenario: &Scenario, id: &str) -> Option<Vec2> {
    scenario.element(id).map(|e| e.position)
}

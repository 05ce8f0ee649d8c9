//! Element layouts, emission/detection schedules and choice timelines.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::geometry::Vec2;
use crate::optics::{is_present, ElementKind, Interval, OpticalElement};
use crate::wavepacket::PhysicalConstants;

pub const FORMAT_VERSION: u32 = 1;

pub const BUILTIN_NAMES: [&str; 6] = ["BE", "ME", "CE", "ABE", "AME", "ACE"];

const REVERSED_SUFFIX: &str = " (reversed)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceAction {
    Insert,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceEvent {
    pub t: f64,
    pub action: ChoiceAction,
    pub element: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub format: u32,
    pub name: String,
    pub duration: f64,
    #[serde(default)]
    pub constants: PhysicalConstants,
    pub elements: Vec<OpticalElement>,
    /// Source id → emission time.
    pub emissions: BTreeMap<String, f64>,
    /// Detector id → detection (final boundary) time.
    #[serde(default)]
    pub detections: BTreeMap<String, f64>,
    #[serde(default)]
    pub timeline: Vec<ChoiceEvent>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// A built-in name, or else a path to a scenario file.
    pub fn resolve_name(name_or_path: &str) -> Result<Self> {
        match builtin_scenario(name_or_path) {
            Ok(s) => Ok(s),
            Err(Error::UnknownScenario(_)) if Path::new(name_or_path).is_file() => {
                Self::load(Path::new(name_or_path))
            }
            Err(e) => Err(e),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT_VERSION {
            return Err(config(format!(
                "unsupported scenario format {} (expected {FORMAT_VERSION})",
                self.format
            )));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(config(format!("duration must be positive, got {}", self.duration)));
        }
        self.constants.validate()?;
        for (i, e) in self.elements.iter().enumerate() {
            e.validate()?;
            for other in &self.elements[..i] {
                if other.id == e.id {
                    return Err(config(format!("duplicate element id {}", e.id)));
                }
                if other.position.distance(e.position) <= crate::optics::CAPTURE_RADIUS {
                    return Err(Error::Geometry(format!(
                        "elements {} and {} share a position",
                        other.id, e.id
                    )));
                }
            }
        }
        for (id, t) in &self.emissions {
            match self.element(id).map(|e| e.kind) {
                Some(ElementKind::Source { .. }) => {}
                _ => return Err(config(format!("emission scheduled for {id}, which is not a source"))),
            }
            if !t.is_finite() {
                return Err(config(format!("emission time of {id} is not finite")));
            }
        }
        for (id, t) in &self.detections {
            match self.element(id).map(|e| e.kind) {
                Some(ElementKind::Detector { .. }) => {}
                _ => return Err(config(format!("detection scheduled for {id}, which is not a detector"))),
            }
            if !t.is_finite() {
                return Err(config(format!("detection time of {id} is not finite")));
            }
        }
        let mut last = f64::NEG_INFINITY;
        for ev in &self.timeline {
            if !(ev.t > 0.0 && ev.t < self.duration) {
                return Err(config(format!(
                    "choice at t={} for {} is outside (0, {})",
                    ev.t, ev.element, self.duration
                )));
            }
            if ev.t < last {
                return Err(config("timeline events must be in time order"));
            }
            last = ev.t;
            match self.element(&ev.element) {
                Some(e) if !e.kind.is_boundary() => {}
                Some(_) => return Err(config(format!("{} cannot be inserted or removed", ev.element))),
                None => return Err(config(format!("timeline names unknown element {}", ev.element))),
            }
        }
        Ok(())
    }

    pub fn element(&self, id: &str) -> Option<&OpticalElement> {
        self.elements.iter().find(|e| e.id == id)
    }

    pub fn sources(&self) -> Vec<&str> {
        self.ids_where(|k| matches!(k, ElementKind::Source { .. }))
    }

    pub fn detectors(&self) -> Vec<&str> {
        self.ids_where(|k| matches!(k, ElementKind::Detector { .. }))
    }

    fn ids_where(&self, f: impl Fn(&ElementKind) -> bool) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .elements
            .iter()
            .filter(|e| f(&e.kind))
            .map(|e| e.id.as_str())
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Presence of `id` at `t`, with the timeline applied.
    pub fn presence_at(&self, id: &str, t: f64) -> Option<bool> {
        let e = self.element(id)?;
        let last = self.timeline.iter().filter(|ev| ev.element == id && ev.t <= t).last();
        Some(match last {
            Some(ev) => ev.action == ChoiceAction::Insert,
            None => is_present(e, t),
        })
    }

    /// Folds the timeline into the presence intervals. The result has an
    /// empty timeline and the same presence at every instant.
    pub fn resolved(&self) -> Scenario {
        if self.timeline.is_empty() {
            return self.clone();
        }
        let mut out = self.clone();
        for e in &mut out.elements {
            let events: Vec<&ChoiceEvent> = self.timeline.iter().filter(|ev| ev.element == e.id).collect();
            if events.is_empty() {
                continue;
            }
            let mut cuts: Vec<f64> = vec![0.0, self.duration];
            for i in &e.presence {
                cuts.extend([i.on, i.off]);
            }
            cuts.extend(events.iter().map(|ev| ev.t));
            cuts.retain(|c| c.is_finite());
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let state = |t: f64| match events.iter().filter(|ev| ev.t <= t).last() {
                Some(ev) => ev.action == ChoiceAction::Insert,
                None => is_present(e, t),
            };
            let mut intervals: Vec<Interval> = Vec::new();
            for w in cuts.windows(2) {
                if !state(0.5 * (w[0] + w[1])) {
                    continue;
                }
                match intervals.last_mut() {
                    Some(last) if last.off == w[0] => last.off = w[1],
                    _ => intervals.push(Interval::new(w[0], w[1])),
                }
            }
            e.presence = intervals;
        }
        out.timeline.clear();
        out
    }

    /// The same experiment seen with time running backwards: presence
    /// intervals are mirrored about `duration / 2`, sources become
    /// detectors and vice versa, and emission and detection schedules swap.
    /// Applying it twice gives back the resolved scenario.
    pub fn time_reverse(&self) -> Scenario {
        let resolved = self.resolved();
        let horizon = self.duration;
        let elements = resolved
            .elements
            .iter()
            .map(|e| {
                let kind = match e.kind {
                    ElementKind::Source { emit_direction } => ElementKind::Detector { aperture: emit_direction },
                    ElementKind::Detector { aperture } => ElementKind::Source { emit_direction: aperture },
                    other => other,
                };
                let presence = e.presence.iter().rev().map(|i| i.reversed(horizon)).collect();
                OpticalElement {
                    id: e.id.clone(),
                    kind,
                    position: e.position,
                    presence,
                }
            })
            .collect();
        let flip = |m: &BTreeMap<String, f64>| m.iter().map(|(k, t)| (k.clone(), horizon - t)).collect();
        let name = match resolved.name.strip_suffix(REVERSED_SUFFIX) {
            Some(base) => base.to_string(),
            None => format!("{}{REVERSED_SUFFIX}", resolved.name),
        };
        Scenario {
            format: resolved.format,
            name,
            duration: horizon,
            constants: resolved.constants,
            elements,
            emissions: flip(&resolved.detections),
            detections: flip(&resolved.emissions),
            timeline: Vec::new(),
        }
    }

    /// Arms of a two-splitter interferometer, if the layout has one.
    pub fn arm_geometry(&self) -> Option<ArmGeometry> {
        let pos = |id: &str| self.element(id).map(|e| e.position);
        Some(ArmGeometry {
            first_splitter: pos("B1")?,
            second_splitter: pos("B2")?,
            upper_mirror: pos("M1")?,
            lower_mirror: pos("M2")?,
        })
    }

    /// Bounding box of all element positions: (min, max).
    pub fn bounds(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for e in &self.elements {
            lo = Vec2::new(lo.x.min(e.position.x), lo.y.min(e.position.y));
            hi = Vec2::new(hi.x.max(e.position.x), hi.y.max(e.position.y));
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Upper,
    Lower,
}

/// Id of the mirror that defines each arm.
pub const UPPER_MIRROR: &str = "M1";
pub const LOWER_MIRROR: &str = "M2";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmGeometry {
    pub first_splitter: Vec2,
    pub second_splitter: Vec2,
    pub upper_mirror: Vec2,
    pub lower_mirror: Vec2,
}

impl ArmGeometry {
    /// Which side of the splitter-to-splitter line a point is on.
    pub fn arm_of(&self, r: Vec2) -> Arm {
        let axis = self.second_splitter - self.first_splitter;
        let side = axis.cross(r - self.first_splitter);
        let upper = axis.cross(self.upper_mirror - self.first_splitter);
        if side * upper > 0.0 {
            Arm::Upper
        } else {
            Arm::Lower
        }
    }
}

const ARM: f64 = 800.0;

/// The standard interferometer with every element present throughout.
fn layout(duration: f64) -> Vec<OpticalElement> {
    let s = FRAC_1_SQRT_2;
    let all = || vec![Interval::new(0.0, duration)];
    let e = |id, kind, x, y| OpticalElement::new(id, kind, Vec2::new(x, y), all());
    vec![
        e("S1", ElementKind::Source { emit_direction: Vec2::new(1.0, 0.0) }, -ARM, 0.0),
        e("S2", ElementKind::Source { emit_direction: Vec2::new(0.0, 1.0) }, 0.0, -ARM),
        e("B1", ElementKind::BeamSplitter { dielectric_side: Vec2::new(-s, s) }, 0.0, 0.0),
        e("M1", ElementKind::Mirror { normal: Vec2::new(s, -s) }, 0.0, ARM),
        e("M2", ElementKind::Mirror { normal: Vec2::new(s, -s) }, ARM, 0.0),
        e("B2", ElementKind::BeamSplitter { dielectric_side: Vec2::new(s, -s) }, ARM, ARM),
        e("D1", ElementKind::Detector { aperture: Vec2::new(-1.0, 0.0) }, 2.0 * ARM, ARM),
        e("D2", ElementKind::Detector { aperture: Vec2::new(0.0, -1.0) }, ARM, 2.0 * ARM),
    ]
}

/// One of the six named experiments, in laboratory (forward) time.
/// The advanced experiments share the forward layout; the advanced engine
/// reverses them itself.
pub fn builtin_scenario(name: &str) -> Result<Scenario> {
    let constants = PhysicalConstants::default();
    let leg = ARM / constants.group_velocity();
    let duration = 4.0 * leg;
    let mut elements = layout(duration);
    let mut set = |id: &str, presence: Vec<Interval>| {
        elements.iter_mut().find(|e| e.id == id).expect("layout element").presence = presence;
    };
    match name {
        "BE" | "ABE" => {}
        "ME" => set("B2", vec![]),
        "AME" => set("B1", vec![]),
        "CE" => set("B2", vec![Interval::new(2.5 * leg, duration)]),
        "ACE" => set("B1", vec![Interval::new(0.0, 1.5 * leg)]),
        other => return Err(Error::UnknownScenario(other.to_string())),
    }
    let ids = |a: &str, b: &str, t: f64| BTreeMap::from([(a.to_string(), t), (b.to_string(), t)]);
    Ok(Scenario {
        format: FORMAT_VERSION,
        name: name.to_string(),
        duration,
        constants,
        elements,
        emissions: ids("S1", "S2", 0.0),
        detections: ids("D1", "D2", duration),
        timeline: Vec::new(),
    })
}

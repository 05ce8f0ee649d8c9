//! Steerable live sessions.
//!
//! A [`Session`] is a transport-free state machine: it advances a simulation
//! clock in fixed steps, launches one particle per `start_run`, lets the
//! operator insert or remove elements while the particle is in flight and
//! emits totally ordered events. Everything that changes an outcome goes
//! through [`Session::submit`], which records it in the command log, so a
//! log replayed against a fresh session reproduces every detection.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::engine::{propagate, PresenceRule, TheoryKind, TransitionRecord};
use crate::error::{config, Error, Result};
use crate::harness::{cells, run_once, CellKey, EnsembleConfig, SourcePolicy};
use crate::optics::{Interval, SplitterMode, CAPTURE_RADIUS};
use crate::rng::{Chooser, RunRng};
use crate::scenario::{builtin_scenario, ChoiceAction, ChoiceEvent, Scenario};
use crate::wavepacket::{density_grid, GaussianPacket, GridSpec, PacketDescriptor};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_CADENCE: f64 = 10.0;
pub const DEFAULT_FRAME_EVERY: f64 = 100.0;
pub const DEFAULT_RATE: f64 = 1000.0;
pub const DEFAULT_STREAM_GRID: usize = 64;
pub const MAX_STREAM_GRID: usize = 128;

pub const CHOICE_WINDOW_CLOSED: &str = "choice window closed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSpec {
    Name(String),
    Inline(Box<Scenario>),
}

impl ScenarioSpec {
    pub fn load(&self) -> Result<Scenario> {
        let s = match self {
            ScenarioSpec::Name(n) => builtin_scenario(n)?,
            ScenarioSpec::Inline(s) => (**s).clone(),
        };
        s.validate()?;
        Ok(s)
    }
}

fn default_cadence() -> f64 {
    DEFAULT_CADENCE
}
fn default_frame_every() -> f64 {
    DEFAULT_FRAME_EVERY
}
fn default_rate() -> f64 {
    DEFAULT_RATE
}
fn default_grid() -> usize {
    DEFAULT_STREAM_GRID
}
fn default_policy() -> SourcePolicy {
    SourcePolicy::Uniform
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub scenario: ScenarioSpec,
    pub theory: TheoryKind,
    pub mode: SplitterMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_policy")]
    pub policy: SourcePolicy,
    /// Simulation time units per wall-clock second.
    #[serde(default = "default_rate")]
    pub rate: f64,
    /// Clock step; commands take effect on these boundaries.
    #[serde(default = "default_cadence")]
    pub cadence: f64,
    /// Simulation time between state events.
    #[serde(default = "default_frame_every")]
    pub frame_every: f64,
    /// Side of the downsampled density grid in state events.
    #[serde(default = "default_grid")]
    pub grid: usize,
}

impl SessionConfig {
    pub fn new(scenario: &str, theory: TheoryKind, mode: SplitterMode, seed: u64) -> Self {
        Self {
            scenario: ScenarioSpec::Name(scenario.to_string()),
            theory,
            mode,
            seed,
            policy: SourcePolicy::Uniform,
            rate: DEFAULT_RATE,
            cadence: DEFAULT_CADENCE,
            frame_every: DEFAULT_FRAME_EVERY,
            grid: DEFAULT_STREAM_GRID,
        }
    }

    fn validate(&self) -> Result<Scenario> {
        let scenario = self.scenario.load()?;
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.rate) || !positive(self.cadence) || !positive(self.frame_every) {
            return Err(config("rate, cadence and frame_every must be positive"));
        }
        if self.frame_every < self.cadence {
            return Err(config("frame_every must be at least one cadence step"));
        }
        if !(2..=MAX_STREAM_GRID).contains(&self.grid) {
            return Err(config(format!("stream grid must be between 2 and {MAX_STREAM_GRID}")));
        }
        EnsembleConfig {
            scenario: scenario.clone(),
            theory: self.theory,
            mode: self.mode,
            n: 1,
            seed: self.seed,
            policy: self.policy.clone(),
        }
        .validate()?;
        Ok(scenario)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Command {
    StartRun,
    Pause,
    Resume,
    SetRate { rate: f64 },
    Insert { element: String },
    Remove { element: String },
    ResetScoreboard,
}

/// A command as sent by a client, with an optional idempotency key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRequest {
    #[serde(flatten)]
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl From<Command> for CommandRequest {
    fn from(command: Command) -> Self {
        Self { command, id: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    InFlight,
    /// The step on which a detection happened.
    Detected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub protocol: u32,
    pub seq: u64,
    pub session: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub clock: f64,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCell {
    #[serde(flatten)]
    pub key: CellKey,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scoreboard {
    pub cells: Vec<ScoreCell>,
    pub completed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub run: u64,
    pub ensemble: usize,
    pub source: String,
    pub detector: String,
    pub record: TransitionRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePayload {
    pub phase: Phase,
    pub paused: bool,
    pub rate: f64,
    pub run: Option<u64>,
    /// Time since the current particle was launched.
    pub run_clock: Option<f64>,
    pub presence: BTreeMap<String, bool>,
    /// Whether an insert or remove of each element would be accepted now.
    pub choice_open: BTreeMap<String, bool>,
    pub packets: Vec<PacketDescriptor>,
    pub scoreboard: Scoreboard,
    pub grid: Option<StreamGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub clock: f64,
    #[serde(flatten)]
    pub command: Command,
}

/// Everything needed to replay a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub protocol: u32,
    pub config: SessionConfig,
    pub entries: Vec<LogEntry>,
    pub final_clock: f64,
    pub detections: Vec<Detection>,
    pub scoreboard: Scoreboard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandOutcome {
    pub accepted: bool,
    pub reason: Option<String>,
    pub clock: f64,
}

#[derive(Debug, Clone)]
struct ActiveRun {
    index: u64,
    start: f64,
    boundary: String,
    /// Presence at launch.
    initial: BTreeMap<String, bool>,
    choices: Vec<ChoiceEvent>,
    /// Generator state after the launch draw, used for display.
    rng: RunRng,
}

pub struct Session {
    id: String,
    cfg: SessionConfig,
    scenario: Scenario,
    cells: Vec<CellKey>,
    presence: BTreeMap<String, bool>,
    clock: f64,
    pending_wall: f64,
    last_frame: f64,
    phase: Phase,
    paused: bool,
    rate: f64,
    runs_started: u64,
    active: Option<ActiveRun>,
    counts: Vec<u64>,
    completed: u64,
    detections: Vec<Detection>,
    log: Vec<LogEntry>,
    seq: u64,
    seen: HashMap<String, CommandOutcome>,
}

impl Session {
    pub fn new(id: impl Into<String>, cfg: SessionConfig) -> Result<Self> {
        let scenario = cfg.validate()?;
        let resolved = scenario.resolved();
        let presence = resolved
            .elements
            .iter()
            .filter(|e| !e.kind.is_boundary())
            .map(|e| (e.id.clone(), resolved.presence_at(&e.id, 0.0).unwrap_or(false)))
            .collect();
        let cells = cells(&scenario);
        Ok(Self {
            id: id.into(),
            rate: cfg.rate,
            counts: vec![0; cells.len()],
            cells,
            cfg,
            scenario: resolved,
            presence,
            clock: 0.0,
            pending_wall: 0.0,
            last_frame: 0.0,
            phase: Phase::Idle,
            paused: false,
            runs_started: 0,
            active: None,
            completed: 0,
            detections: Vec::new(),
            log: Vec::new(),
            seq: 0,
            seen: HashMap::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn scoreboard(&self) -> Scoreboard {
        Scoreboard {
            cells: self
                .cells
                .iter()
                .zip(&self.counts)
                .map(|(key, &count)| ScoreCell { key: key.clone(), count })
                .collect(),
            completed: self.completed,
        }
    }

    pub fn export_log(&self) -> SessionLog {
        SessionLog {
            protocol: PROTOCOL_VERSION,
            config: self.cfg.clone(),
            entries: self.log.clone(),
            final_clock: self.clock,
            detections: self.detections.clone(),
            scoreboard: self.scoreboard(),
        }
    }

    fn event(&mut self, kind: &str, payload: serde_json::Value) -> Event {
        self.seq += 1;
        Event {
            protocol: PROTOCOL_VERSION,
            seq: self.seq,
            session: self.id.clone(),
            kind: kind.to_string(),
            clock: self.clock,
            payload,
        }
    }

    /// Applies a command at the current clock. Rejections are reported in
    /// the outcome and as an event; they change nothing and are not logged.
    /// A request carrying an id that was seen before gets the earlier
    /// outcome back without being applied again.
    pub fn submit(&mut self, req: CommandRequest) -> (CommandOutcome, Vec<Event>) {
        if let Some(prev) = req.id.as_ref().and_then(|id| self.seen.get(id)) {
            return (prev.clone(), Vec::new());
        }
        let mut events = Vec::new();
        let outcome = match self.apply(&req.command, &mut events) {
            Ok(()) => {
                self.log.push(LogEntry { clock: self.clock, command: req.command.clone() });
                let payload = serde_json::json!({ "command": req.command, "id": req.id });
                events.push(self.event("ack", payload));
                CommandOutcome { accepted: true, reason: None, clock: self.clock }
            }
            Err(e) => {
                let reason = match e {
                    Error::Rejected(r) => r,
                    other => other.to_string(),
                };
                let payload = serde_json::json!({ "command": req.command, "id": req.id, "reason": reason });
                events.push(self.event("rejected", payload));
                CommandOutcome { accepted: false, reason: Some(reason), clock: self.clock }
            }
        };
        if let Some(id) = req.id {
            self.seen.insert(id, outcome.clone());
        }
        (outcome, events)
    }

    pub fn command(&mut self, command: Command) -> Result<Vec<Event>> {
        let (outcome, events) = self.submit(command.into());
        match outcome.reason {
            Some(reason) if !outcome.accepted => Err(Error::Rejected(reason)),
            _ => Ok(events),
        }
    }

    fn apply(&mut self, command: &Command, events: &mut Vec<Event>) -> Result<()> {
        let reject = |msg: String| Err(Error::Rejected(msg));
        match command {
            Command::StartRun => {
                if self.phase == Phase::InFlight {
                    return reject("a particle is already in flight".into());
                }
                self.launch(events)
            }
            Command::Pause => {
                self.paused = true;
                Ok(())
            }
            Command::Resume => {
                self.paused = false;
                Ok(())
            }
            Command::SetRate { rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return reject(format!("rate must be positive, got {rate}"));
                }
                self.rate = *rate;
                Ok(())
            }
            Command::Insert { element } | Command::Remove { element } => {
                let insert = matches!(command, Command::Insert { .. });
                self.choose(element, insert)
            }
            Command::ResetScoreboard => {
                self.counts.iter_mut().for_each(|c| *c = 0);
                self.completed = 0;
                Ok(())
            }
        }
    }

    fn choose(&mut self, element: &str, insert: bool) -> Result<()> {
        if !self.presence.contains_key(element) {
            return Err(Error::Rejected(format!("{element} cannot be inserted or removed")));
        }
        if self.phase == Phase::Detected {
            return Err(Error::Rejected(CHOICE_WINDOW_CLOSED.into()));
        }
        if let Some(run) = &self.active {
            let position = self.scenario.element(element).expect("known element").position;
            let busy = self
                .live_packets()?
                .iter()
                .any(|p| p.center.distance(position) <= CAPTURE_RADIUS);
            if busy {
                return Err(Error::Rejected(format!("{CHOICE_WINDOW_CLOSED}: a packet is at {element}")));
            }
            let t = self.clock - run.start;
            let action = if insert { ChoiceAction::Insert } else { ChoiceAction::Remove };
            let run = self.active.as_mut().expect("active run");
            if t <= 0.0 {
                run.initial.insert(element.to_string(), insert);
            } else {
                run.choices.push(ChoiceEvent { t, action, element: element.to_string() });
            }
        }
        self.presence.insert(element.to_string(), insert);
        Ok(())
    }

    fn ensemble_config(&self, scenario: Scenario) -> EnsembleConfig {
        EnsembleConfig {
            scenario,
            theory: self.cfg.theory,
            mode: self.cfg.mode,
            n: 1,
            seed: self.cfg.seed,
            policy: self.cfg.policy.clone(),
        }
    }

    fn launch(&mut self, events: &mut Vec<Event>) -> Result<()> {
        let index = self.runs_started;
        let mut rng = RunRng::stream(self.cfg.seed, index);
        let starts = match self.cfg.theory {
            TheoryKind::At => self.scenario.detectors(),
            _ => self.scenario.sources(),
        };
        let boundary = match &self.cfg.policy {
            SourcePolicy::Fixed(id) => id.clone(),
            SourcePolicy::Uniform if starts.len() == 1 => starts[0].to_string(),
            SourcePolicy::Uniform => starts[rng.choose(&vec![1.0; starts.len()])].to_string(),
        };
        self.runs_started += 1;
        self.active = Some(ActiveRun {
            index,
            start: self.clock,
            boundary: boundary.clone(),
            initial: self.presence.clone(),
            choices: Vec::new(),
            rng,
        });
        self.phase = Phase::InFlight;
        let payload = serde_json::json!({ "run": index, "boundary": boundary });
        events.push(self.event("run_started", payload));
        Ok(())
    }

    /// The scenario as realized by the current run so far: presence at
    /// launch, then the operator's choices, on the run's own clock.
    fn realized(&self, run: &ActiveRun) -> Scenario {
        let mut s = self.scenario.clone();
        for e in &mut s.elements {
            if let Some(&present) = run.initial.get(&e.id) {
                e.presence = if present { vec![Interval::new(0.0, s.duration)] } else { Vec::new() };
            }
        }
        s.timeline = run.choices.clone();
        s.name = format!("{} (live run {})", self.scenario.name, run.index);
        s
    }

    /// Packets of the displayed wavefunction: ψ for CT and ST, φ* for AT.
    fn live_wavefunction(&self) -> Result<Option<(Vec<GaussianPacket>, f64)>> {
        let Some(run) = &self.active else {
            return Ok(None);
        };
        let t = self.clock - run.start;
        let scenario = self.realized(run);
        let mut rng = run.rng.clone();
        let (prop, at) = match self.cfg.theory {
            TheoryKind::At => {
                let reversed = scenario.time_reverse();
                let tau = scenario.duration - t;
                (propagate(&reversed, &run.boundary, self.cfg.mode, PresenceRule::Dynamic, &mut rng)?, tau)
            }
            _ => (propagate(&scenario, &run.boundary, self.cfg.mode, PresenceRule::Dynamic, &mut rng)?, t),
        };
        Ok(Some((prop.packets_at(at), at)))
    }

    fn live_packets(&self) -> Result<Vec<PacketDescriptor>> {
        match self.live_wavefunction()? {
            Some((packets, t)) => packets.iter().map(|p| p.descriptor(t)).collect(),
            None => Ok(Vec::new()),
        }
    }

    pub fn snapshot(&self, with_grid: bool) -> Result<StatePayload> {
        let live = self.live_wavefunction()?;
        let packets = match &live {
            Some((packets, t)) => packets.iter().map(|p| p.descriptor(*t)).collect::<Result<_>>()?,
            None => Vec::new(),
        };
        let grid = match (&live, with_grid) {
            (Some((packets, t)), true) => {
                let spec = crate::render::default_grid(&self.scenario, self.cfg.grid);
                let field = density_grid(packets, &spec, *t)?;
                Some(StreamGrid { spec, values: field.values })
            }
            _ => None,
        };
        let choice_open = self
            .presence
            .keys()
            .map(|id| {
                let position = self.scenario.element(id).expect("known element").position;
                let busy = packets.iter().any(|p: &PacketDescriptor| p.center.distance(position) <= CAPTURE_RADIUS);
                (id.clone(), self.phase != Phase::Detected && !busy)
            })
            .collect();
        Ok(StatePayload {
            choice_open,
            phase: self.phase,
            paused: self.paused,
            rate: self.rate,
            run: self.active.as_ref().map(|r| r.index),
            run_clock: self.active.as_ref().map(|r| self.clock - r.start),
            presence: self.presence.clone(),
            packets,
            scoreboard: self.scoreboard(),
            grid,
        })
    }

    fn finish(&mut self, events: &mut Vec<Event>) -> Result<()> {
        let run = self.active.take().expect("finishing an active run");
        let cfg = self.ensemble_config(self.realized(&run));
        let record = run_once(&cfg, &mut RunRng::stream(self.cfg.seed, run.index))?;
        let cell = self
            .cells
            .iter()
            .position(|c| c.source == record.source && c.detector == record.detector)
            .ok_or_else(|| config(format!("unknown outcome {}->{}", record.source, record.detector)))?;
        self.counts[cell] += 1;
        self.completed += 1;
        let detection = Detection {
            run: run.index,
            ensemble: self.cells[cell].ensemble,
            source: record.source.clone(),
            detector: record.detector.clone(),
            record,
        };
        self.detections.push(detection.clone());
        self.phase = Phase::Detected;
        events.push(self.event("detection", serde_json::to_value(&detection)?));
        Ok(())
    }

    /// One clock step, regardless of pause.
    pub fn step(&mut self) -> Result<Vec<Event>> {
        let mut events = Vec::new();
        if self.phase == Phase::Detected {
            self.phase = Phase::Idle;
        }
        self.clock += self.cfg.cadence;
        if let Some(run) = &self.active {
            if self.clock - run.start >= self.scenario.duration {
                self.finish(&mut events)?;
            }
        }
        if self.clock - self.last_frame >= self.cfg.frame_every - 1e-9 || !events.is_empty() {
            self.last_frame = self.clock;
            let state = serde_json::to_value(self.snapshot(true)?)?;
            events.push(self.event("state", state));
        }
        Ok(events)
    }

    /// Advances by `wall_seconds` of real time at the current rate, in
    /// whole steps; nothing happens while paused.
    pub fn advance(&mut self, wall_seconds: f64) -> Result<Vec<Event>> {
        if self.paused || !(wall_seconds > 0.0) {
            return Ok(Vec::new());
        }
        self.pending_wall += wall_seconds * self.rate;
        let mut events = Vec::new();
        while self.pending_wall >= self.cfg.cadence {
            self.pending_wall -= self.cfg.cadence;
            events.extend(self.step()?);
        }
        Ok(events)
    }

    /// Steps until the clock reaches `clock`.
    pub fn advance_to(&mut self, clock: f64) -> Result<Vec<Event>> {
        let mut events = Vec::new();
        while self.clock + 0.5 * self.cfg.cadence < clock {
            events.extend(self.step()?);
        }
        Ok(events)
    }

    /// Steps until the current run (if any) has been detected.
    pub fn run_to_detection(&mut self) -> Result<Vec<Event>> {
        let mut events = Vec::new();
        while self.phase == Phase::InFlight {
            events.extend(self.step()?);
        }
        Ok(events)
    }
}

/// Replays a session log against a fresh session.
pub fn replay_log(log: &SessionLog, id: &str) -> Result<Session> {
    if log.protocol != PROTOCOL_VERSION {
        return Err(config(format!("unsupported log protocol {}", log.protocol)));
    }
    let mut s = Session::new(id, log.config.clone())?;
    for entry in &log.entries {
        s.advance_to(entry.clock)?;
        s.command(entry.command.clone())?;
    }
    s.advance_to(log.final_clock)?;
    Ok(s)
}

/// Replays a log and checks the detections and scoreboard against it.
pub fn verify_log(log: &SessionLog) -> Result<Session> {
    let s = replay_log(log, "replay")?;
    for (k, (a, b)) in log.detections.iter().zip(s.detections()).enumerate() {
        if a != b {
            return Err(Error::ReplayMismatch {
                run: k as u64,
                recorded: format!("{}->{}", a.source, a.detector),
                replayed: format!("{}->{}", b.source, b.detector),
            });
        }
    }
    if log.detections.len() != s.detections().len() || log.scoreboard != s.scoreboard() {
        return Err(Error::ReplayMismatch {
            run: log.detections.len().min(s.detections().len()) as u64,
            recorded: format!("{} detections", log.detections.len()),
            replayed: format!("{} detections", s.detections().len()),
        });
    }
    Ok(s)
}

use mzi_core::engine::{run_at, TheoryKind};
use mzi_core::harness::{
    analytic_distribution, compare_modes, replay, run_ensemble, EnsembleConfig, EnsembleStats, SourcePolicy,
    VERDICT_AGREE,
};
use mzi_core::optics::SplitterMode;
use mzi_core::render::{render_frames, FrameRequest};
use mzi_core::rng::RunRng;
use mzi_core::scenario::builtin_scenario;
use mzi_core::session::{replay_log, verify_log, Command, Phase, Session, SessionConfig};
use mzi_core::wavepacket::GridSpec;
use mzi_core::Error;

const ALWAYS: SplitterMode = SplitterMode::AlwaysSplit;
const COLLAPSE: SplitterMode = SplitterMode::CollapseAtSplitter;

fn config(name: &str, theory: TheoryKind, mode: SplitterMode, n: u64) -> EnsembleConfig {
    EnsembleConfig::new(builtin_scenario(name).unwrap(), theory, mode, n, 42)
}

#[test]
fn ensembles_do_not_depend_on_thread_count() {
    let cfg = config("CE", TheoryKind::Ct, COLLAPSE, 500);
    let parallel = run_ensemble(&cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let serial = pool.install(|| run_ensemble(&cfg).unwrap());
    assert_eq!(parallel, serial);
    let other = run_ensemble(&EnsembleConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(parallel.outcomes, other.outcomes);
}

#[test]
fn stats_round_trip_through_json_and_csv() {
    let stats = run_ensemble(&config("ME", TheoryKind::Ct, ALWAYS, 400)).unwrap();
    let back = EnsembleStats::from_json(&stats.to_json().unwrap()).unwrap();
    assert_eq!(back, stats);
    let csv = stats.to_csv();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 2 + stats.cells.len());
    assert_eq!(rows[1], "ensemble,source,detector,count,probability,expected");
    assert!(stats.to_text().contains("chi-square"));
}

#[test]
fn tampered_stats_fail_replay() {
    let mut stats = run_ensemble(&config("ME", TheoryKind::Ct, ALWAYS, 200)).unwrap();
    let k = 17;
    stats.outcomes[k] = (stats.outcomes[k] + 1) % 4;
    match replay(&stats) {
        Err(Error::ReplayMismatch { run, .. }) => assert_eq!(run, k as u64),
        other => panic!("expected a mismatch, got {other:?}"),
    }
}

#[test]
fn advanced_ensembles_mirror_conventional_ones() {
    let at = analytic_distribution(&config("ACE", TheoryKind::At, ALWAYS, 1)).unwrap();
    // Ensembles 1 and 2 only: the advanced wave from D1 reaches S1 alone.
    assert_eq!(at, vec![0.5, 0.5, 0.0, 0.0]);
    let collapse = analytic_distribution(&config("ACE", TheoryKind::At, COLLAPSE, 1)).unwrap();
    for p in collapse {
        assert!((p - 0.25).abs() < 1e-12);
    }
    let rec = run_at(&builtin_scenario("BE").unwrap(), "D1", ALWAYS, &mut RunRng::stream(0, 0)).unwrap();
    assert_eq!((rec.source.as_str(), rec.detector.as_str()), ("S1", "D1"));
}

#[test]
fn symmetrical_ensembles() {
    let cfg = config("CE", TheoryKind::St, COLLAPSE, 400);
    let stats = run_ensemble(&cfg).unwrap();
    for c in &stats.cells {
        assert!((c.expected - 0.25).abs() < 1e-9, "{:?}", c);
    }
    assert!(stats.passes);
    let fixed = EnsembleConfig { policy: SourcePolicy::Fixed("S2".into()), ..config("BE", TheoryKind::St, ALWAYS, 50) };
    let stats = run_ensemble(&fixed).unwrap();
    assert_eq!(stats.cell("S2", "D2").unwrap().count, 50);
}

#[test]
fn modes_agree_where_nothing_changes_mid_flight() {
    let cmp = compare_modes(&config("ME", TheoryKind::Ct, ALWAYS, 2000)).unwrap();
    assert_eq!(cmp.verdict, VERDICT_AGREE);
    assert!(cmp.to_text().contains(VERDICT_AGREE));
}

#[test]
fn invalid_ensembles_are_rejected() {
    assert!(run_ensemble(&config("BE", TheoryKind::Ct, ALWAYS, 0)).is_err());
    let bad = EnsembleConfig { policy: SourcePolicy::Fixed("B1".into()), ..config("BE", TheoryKind::Ct, ALWAYS, 5) };
    assert!(run_ensemble(&bad).is_err());
}

#[test]
fn frames_are_written_per_time() {
    let s = builtin_scenario("BE").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut req = FrameRequest::new(&s, TheoryKind::Ct, ALWAYS);
    req.grid = GridSpec { nx: 48, ny: 48, ..req.grid };
    let paths = render_frames(&s, &req, dir.path()).unwrap();
    assert_eq!(paths.len(), 12);
    let pgm = std::fs::read(paths.iter().find(|p| p.extension().unwrap() == "pgm").unwrap()).unwrap();
    assert!(pgm.starts_with(b"P5\n48 48\n65535\n"));
    assert_eq!(pgm.len(), b"P5\n48 48\n65535\n".len() + 2 * 48 * 48);
    assert!(render_frames(&s, &req, std::path::Path::new("/proc/forbidden/frames")).is_err());
}

#[test]
fn live_ce_session_reproduces_the_delayed_choice() {
    let mut cfg = SessionConfig::new("CE", TheoryKind::Ct, ALWAYS, 1);
    cfg.policy = SourcePolicy::Fixed("S1".into());
    cfg.grid = 16;
    let mut s = Session::new("ce", cfg).unwrap();
    s.command(Command::Remove { element: "B2".into() }).unwrap();
    s.command(Command::StartRun).unwrap();
    s.advance_to(5000.0).unwrap();
    s.command(Command::Insert { element: "B2".into() }).unwrap();
    s.run_to_detection().unwrap();
    assert_eq!(s.detections()[0].detector, "D1");
    assert!(s.command(Command::Remove { element: "B2".into() }).is_err());

    // Never inserting B2 leaves both detectors possible.
    let mut detectors = std::collections::BTreeSet::new();
    for _ in 0..20 {
        s.step().unwrap();
        s.command(Command::Remove { element: "B2".into() }).unwrap();
        s.command(Command::StartRun).unwrap();
        s.run_to_detection().unwrap();
        detectors.insert(s.detections().last().unwrap().detector.clone());
    }
    assert_eq!(detectors.len(), 2);
    assert_eq!(s.scoreboard().completed, 21);

    let log = s.export_log();
    let again = verify_log(&log).unwrap();
    assert_eq!(again.detections(), s.detections());
}

#[test]
fn replay_notices_a_forged_log() {
    let mut s = Session::new("x", SessionConfig::new("ME", TheoryKind::Ct, COLLAPSE, 9)).unwrap();
    for _ in 0..5 {
        s.command(Command::StartRun).unwrap();
        s.run_to_detection().unwrap();
        s.step().unwrap();
    }
    let mut log = s.export_log();
    let first = &mut log.detections[0];
    first.detector = if first.detector == "D1" { "D2".into() } else { "D1".into() };
    assert!(matches!(verify_log(&log), Err(Error::ReplayMismatch { run: 0, .. })));
    let fresh = replay_log(&log, "y").unwrap();
    assert_eq!(fresh.phase(), Phase::Idle);
    assert_eq!(fresh.clock(), s.clock());
}

#[test]
fn state_events_carry_a_bounded_grid() {
    let mut s = Session::new("g", SessionConfig::new("BE", TheoryKind::St, ALWAYS, 2)).unwrap();
    s.command(Command::StartRun).unwrap();
    let events = s.advance_to(3000.0).unwrap();
    let states: Vec<_> = events.iter().filter(|e| e.kind == "state").collect();
    assert_eq!(states.len(), 30);
    let grid = &states.last().unwrap().payload["grid"];
    assert_eq!(grid["values"].as_array().unwrap().len(), 64 * 64);
    assert_eq!(states.last().unwrap().payload["packets"].as_array().unwrap().len(), 2);
}

#[test]
fn advanced_sessions_start_from_a_detector() {
    let mut s = Session::new("a", SessionConfig::new("ABE", TheoryKind::At, ALWAYS, 3)).unwrap();
    let events = s.command(Command::StartRun).unwrap();
    let boundary = events[0].payload["boundary"].as_str().unwrap().to_string();
    assert!(boundary.starts_with('D'));
    s.run_to_detection().unwrap();
    assert_eq!(s.detections()[0].detector, boundary);
}

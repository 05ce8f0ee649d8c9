//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::f64::consts::FRAC_1_SQRT_2;
use std::process::ExitCode;

use mzi_core::engine::{
    propagate, run_at, run_ct, run_ct_detailed, run_st, run_st_detailed, PresenceRule, TheoryKind,
};
use mzi_core::geometry::Vec2;
use mzi_core::harness::{
    compare_modes, replay, run_ensemble, EnsembleConfig, EnsembleStats, SourcePolicy, VERDICT_DIVERGE,
};
use mzi_core::optics::SplitterMode;
use mzi_core::oracle::{compare_closed_form, spectral_evolve_2d, OracleGrid, SampledField2d};
use mzi_core::render::{compute_frames, encode_csv, encode_pgm, write_frames, Frame, FrameRequest};
use mzi_core::rng::{NoChoice, RunRng};
use mzi_core::scenario::{builtin_scenario, Arm, Scenario, BUILTIN_NAMES};
use mzi_core::session::{verify_log, Command, Session, SessionConfig, SessionLog};
use mzi_core::wavepacket::{forms_at, gram_norm, Complex, GaussianPacket, GridSpec, PhysicalConstants};

const ALWAYS: SplitterMode = SplitterMode::AlwaysSplit;
const COLLAPSE: SplitterMode = SplitterMode::CollapseAtSplitter;
const RUNS: u64 = 10_000;
const SEED: u64 = 20_240_607;

/// Collects named checks for one criterion.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    passed: usize,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if ok {
            self.passed += 1;
        } else {
            self.failed.push(what.into());
        }
    }
}

fn scenario(name: &str) -> Scenario {
    builtin_scenario(name).expect("built-in scenario")
}

fn ensemble(name: &str, theory: TheoryKind, mode: SplitterMode) -> EnsembleStats {
    let cfg = EnsembleConfig::new(scenario(name), theory, mode, RUNS, SEED);
    run_ensemble(&cfg).expect("ensemble")
}

fn counts(stats: &EnsembleStats) -> Vec<u64> {
    stats.cells.iter().map(|c| c.count).collect()
}

fn all_conventional(c: &mut Checks) {
    let s = scenario("BE");
    let rec = run_ct(&s, "S1", ALWAYS, &mut RunRng::stream(SEED, 0)).unwrap();
    c.check((rec.probabilities["D1"] - 1.0).abs() < 1e-12, format!("P(D1|S1) = {}", rec.probabilities["D1"]));
    c.check(rec.probabilities["D2"].abs() < 1e-12, format!("P(D2|S1) = {}", rec.probabilities["D2"]));

    // Factor products along each path: B1 splits, the mirror flips the
    // sign, B2 recombines. S1 meets B1's dielectric face; the upper-arm
    // packet meets B2's glass face and the lower-arm packet its dielectric.
    let h = FRAC_1_SQRT_2;
    let upper_d1 = (-h) * (-1.0) * h;
    let lower_d1 = h * (-1.0) * (-h);
    let upper_d2 = (-h) * (-1.0) * h;
    let lower_d2 = h * (-1.0) * h;
    let d1 = rec.amplitudes["D1"];
    let d2 = rec.amplitudes["D2"];
    c.check((d1 - Complex::new(upper_d1 + lower_d1, 0.0)).norm() < 1e-12, format!("amplitude D1 = {d1}"));
    c.check((d2 - Complex::new(upper_d2 + lower_d2, 0.0)).norm() < 1e-12, format!("amplitude D2 = {d2}"));

    let stats = ensemble("BE", TheoryKind::Ct, ALWAYS);
    let n = counts(&stats);
    c.check(n[2] == 0 && n[3] == 0, format!("BE crossed counts {:?}", n));
    c.check(n[0] + n[1] == RUNS, "BE diagonal counts sum to n");
}

fn equal_ensembles(c: &mut Checks) {
    let stats = ensemble("ME", TheoryKind::Ct, ALWAYS);
    for cell in &stats.cells {
        c.check((cell.expected - 0.25).abs() < 1e-12, format!("ME analytic {} = {}", cell.key.ensemble, cell.expected));
    }
    c.check(stats.degrees_of_freedom == 3, format!("df = {}", stats.degrees_of_freedom));
    let chi = stats.chi_square.unwrap_or(f64::INFINITY);
    c.check(chi < 11.34, format!("ME chi-square {chi:.3}"));
}

fn mode_divergence(c: &mut Checks) {
    let cfg = EnsembleConfig::new(scenario("CE"), TheoryKind::Ct, ALWAYS, RUNS, SEED);
    let cmp = compare_modes(&cfg).unwrap();
    let a = &cmp.always_split;
    let k = &cmp.collapse;
    c.check(a.cells[2].expected == 0.0 && a.cells[3].expected == 0.0, "always-split crossed cells impossible");
    c.check(a.cells[2].count == 0 && a.cells[3].count == 0, format!("always-split counts {:?}", counts(a)));
    for cell in &k.cells {
        let sigma = (0.25f64 * 0.75 / RUNS as f64).sqrt();
        c.check((cell.expected - 0.25).abs() < 1e-12, format!("collapse analytic {}", cell.expected));
        c.check(
            (cell.probability - 0.25).abs() <= 4.0 * sigma,
            format!("collapse ensemble {} at {}", cell.key.ensemble, cell.probability),
        );
    }
    c.check(k.passes, "collapse chi-square");
    for d in &cmp.deltas[2..] {
        c.check((d.analytic_delta - 0.25).abs() < 1e-12, format!("analytic delta {}", d.analytic_delta));
    }
    c.check((cmp.max_delta - 0.25).abs() < 0.03, format!("max delta {}", cmp.max_delta));
    c.check(cmp.verdict == VERDICT_DIVERGE, format!("verdict {}", cmp.verdict));
}

fn duality(c: &mut Checks) {
    for name in BUILTIN_NAMES {
        let s = scenario(name);
        let reversed = s.time_reverse();
        for mode in [ALWAYS, COLLAPSE] {
            for d in s.detectors() {
                for i in 0..200 {
                    let at = run_at(&s, d, mode, &mut RunRng::stream(SEED, i)).unwrap();
                    let ct = run_ct(&reversed, d, mode, &mut RunRng::stream(SEED, i)).unwrap();
                    let same = at.source == ct.detector
                        && at.detector == ct.source
                        && at.probabilities.len() == ct.probabilities.len()
                        && at
                            .probabilities
                            .iter()
                            .zip(&ct.probabilities)
                            .all(|((ka, pa), (kc, pc))| ka == kc && pa.to_bits() == pc.to_bits())
                        && at.amplitudes == ct.amplitudes;
                    if !same {
                        c.check(false, format!("{name} {} {d} run {i}", mode.label()));
                        break;
                    }
                }
            }
        }
        c.check(true, name);
    }
}

fn support_table(c: &mut Checks) {
    let st = |name: &str, s: &str, d: &str, mode| run_st(&scenario(name), s, d, mode, &mut NoChoice).unwrap();
    for (s, d) in [("S1", "D1"), ("S2", "D2")] {
        let r = st("CE", s, d, ALWAYS);
        let m = r.arm_mass.clone().unwrap();
        c.check(r.arm_support.upper && r.arm_support.lower, format!("CE {s}->{d} support {:?}", r.arm_support));
        c.check(m.upper > 0.1 && m.lower > 0.1, format!("CE {s}->{d} masses {} {}", m.upper, m.lower));
    }
    let ce = scenario("CE");
    let grid = GridSpec { x_min: -300.0, x_max: 1100.0, y_min: -300.0, y_max: 1100.0, nx: 141, ny: 141 };
    let arms = ce.arm_geometry().unwrap();
    for (s, d) in [("S1", "D2"), ("S2", "D1")] {
        let r = st("CE", s, d, ALWAYS);
        let m = r.arm_mass.clone().unwrap();
        c.check(!r.arm_support.upper && !r.arm_support.lower, format!("CE {s}->{d} support {:?}", r.arm_support));
        c.check(m.upper < 1e-12 && m.lower < 1e-12, format!("CE {s}->{d} masses {} {}", m.upper, m.lower));
        let run = run_st_detailed(&ce, s, d, ALWAYS, &mut NoChoice).unwrap();
        for t in [3000.0, 5000.0] {
            let g = run.product_grid(t, &grid).unwrap();
            let upper = g.mass_where(|r| arms.arm_of(r) == Arm::Upper);
            let lower = g.mass_where(|r| arms.arm_of(r) == Arm::Lower);
            c.check(upper < 1e-12 && lower < 1e-12, format!("CE {s}->{d} grid mass {upper:e} {lower:e} at {t}"));
        }
    }
    let ce1 = st("CE", "S1", "D1", COLLAPSE).arm_support;
    let ace1 = st("ACE", "S1", "D1", COLLAPSE).arm_support;
    c.check(ce1.upper && !ce1.lower, format!("CE collapse ensemble 1 {ce1:?}"));
    c.check(!ace1.upper && ace1.lower, format!("ACE collapse ensemble 1 {ace1:?}"));
}

fn oracle_gate(c: &mut Checks) {
    let k = PhysicalConstants::default();
    let packet = GaussianPacket::new(Complex::new(1.0, 0.0), 0.0, Vec2::new(-800.0, 0.0), Vec2::new(1.0, 0.0), k).unwrap();
    let cmp = compare_closed_form(&packet, 1000.0, OracleGrid::default()).unwrap();
    c.check(cmp.l2 < 1e-8, format!("L2 at 1000: {:e}", cmp.l2));
    for dt in [1000.0, 5000.0, 8000.0] {
        let cmp = compare_closed_form(&packet, dt, OracleGrid::default()).unwrap();
        c.check(cmp.width_relative_error < 1e-6, format!("width at {dt}: {:e}", cmp.width_relative_error));
        c.check(cmp.centroid_error < 1e-6, format!("centroid at {dt}: {:e}", cmp.centroid_error));
    }

    for name in BUILTIN_NAMES {
        let s = scenario(name);
        let reversed = s.time_reverse();
        for (sc, starts) in [(&s, s.sources()), (&reversed, reversed.sources())] {
            for start in starts {
                for (mode, seed) in [(ALWAYS, 0), (COLLAPSE, 1), (COLLAPSE, 2)] {
                    let prop = propagate(sc, start, mode, PresenceRule::Dynamic, &mut RunRng::stream(seed, 0)).unwrap();
                    let worst = (0..80)
                        .map(|i| {
                            let t = 50.0 + 100.0 * i as f64;
                            let forms = forms_at(&prop.packets_at(t), t).unwrap();
                            (gram_norm(&forms) - 1.0).abs()
                        })
                        .fold(0.0, f64::max);
                    c.check(worst < 1e-9, format!("{name} from {start} {}: norm off by {worst:e}", mode.label()));
                }
            }
        }
    }

    // 2D spot check of the symmetrical product in the arms at t = 3000.
    let be = scenario("BE");
    let run = run_st_detailed(&be, "S1", "D1", ALWAYS, &mut NoChoice).unwrap();
    let (n, dx) = (512usize, 4.0);
    let origin = Vec2::new(-700.0, -700.0);
    let psi_packets = run.forward.packets_at(3000.0);
    let phi_packets = run.backward.packets_at(5000.0);
    let psi0 = SampledField2d::from_fn(origin, dx, n, sum_at(&psi_packets, 2000.0)).unwrap();
    let phi0 = SampledField2d::from_fn(origin, dx, n, sum_at(&phi_packets, 4000.0)).unwrap();
    let psi1 = spectral_evolve_2d(&psi0, 1000.0, &k).unwrap();
    let phi1 = spectral_evolve_2d(&phi0, 1000.0, &k).unwrap();
    let omega_oracle: Complex =
        psi1.values.iter().zip(&phi1.values).map(|(a, b)| a * b).sum::<Complex>() * (dx * dx);
    let omega = run.transition_amplitude(3000.0).unwrap();
    let omega_err = (omega_oracle.norm() - omega.norm()).abs() / omega.norm();
    c.check(omega_err < 1e-6, format!("|Ω| oracle {} vs {}", omega_oracle.norm(), omega.norm()));
    let span = (n - 1) as f64 * dx;
    let spec = GridSpec {
        x_min: origin.x,
        x_max: origin.x + span,
        y_min: origin.y,
        y_max: origin.y + span,
        nx: n,
        ny: n,
    };
    let engine = run.product_grid(3000.0, &spec).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for (k, (a, b)) in psi1.values.iter().zip(&phi1.values).enumerate() {
        let reference = omega_oracle.norm() * a.norm() * b.norm();
        num += (engine.values[k] - reference).powi(2);
        den += reference * reference;
    }
    let rel = (num / den).sqrt();
    c.check(rel < 1e-6, format!("2D product relative L2 {rel:e}"));
}

fn sum_at(packets: &[GaussianPacket], t: f64) -> impl Fn(Vec2) -> Complex + '_ {
    move |r| packets.iter().map(|p| p.amplitude_at(r, t).unwrap()).sum()
}

fn mass_near(frame: &Frame, centre: Vec2, radius: f64) -> f64 {
    frame.field.mass_where(|r| r.distance(centre) <= radius) / frame.field.mass()
}

fn frame_goldens(c: &mut Checks) {
    let be = scenario("BE");
    let arms = be.arm_geometry().unwrap();
    let pos = |id: &str| be.element(id).unwrap().position;
    let width = |t: f64| {
        let p = GaussianPacket::new(Complex::new(1.0, 0.0), 0.0, Vec2::ZERO, Vec2::new(1.0, 0.0), be.constants).unwrap();
        p.width_at(t).unwrap()
    };
    let arm_split = |f: &Frame| {
        let total = f.field.mass();
        let u = f.field.mass_where(|r| arms.arm_of(r) == Arm::Upper) / total;
        (u, 1.0 - u)
    };
    let dir = tempfile::tempdir().unwrap();
    for theory in [TheoryKind::Ct, TheoryKind::At, TheoryKind::St] {
        let req = FrameRequest::new(&be, theory, ALWAYS);
        let a = compute_frames(&be, &req).unwrap();
        let b = compute_frames(&be, &req).unwrap();
        let stable = a.iter().zip(&b).all(|(x, y)| {
            let max = x.field.max();
            encode_pgm(&x.field, max) == encode_pgm(&y.field, max) && encode_csv(&x.field, x.time) == encode_csv(&y.field, y.time)
        });
        c.check(stable && a.len() == 6, format!("{} frames byte-stable", theory.label()));
        let pa = write_frames(&a, &dir.path().join("a"), theory.label()).unwrap();
        let pb = write_frames(&b, &dir.path().join("b"), theory.label()).unwrap();
        let files_equal = pa.iter().zip(&pb).all(|(x, y)| std::fs::read(x).unwrap() == std::fs::read(y).unwrap());
        c.check(files_equal && pa.len() == 12, format!("{} frame files identical", theory.label()));

        let end = if theory == TheoryKind::At { pos("S1") } else { pos("D1") };
        for k in [1, 2] {
            let (u, l) = arm_split(&a[k]);
            c.check((u - 0.5).abs() < 0.02 && (l - 0.5).abs() < 0.02, format!("{} panel {k} arms {u:.4}/{l:.4}", theory.label()));
        }
        let near_end = mass_near(&a[4], end, 3.0 * width(a[4].time));
        c.check(near_end >= 0.98, format!("{} panel 4 mass near the end {near_end:.5}", theory.label()));
        let last = &a[5];
        let centroid_err = last.field.centroid().distance(end);
        c.check(centroid_err < 1.0, format!("{} panel 5 centroid off by {centroid_err}", theory.label()));
        // CT and AT have collapsed by now; ST is already localized without a collapse.
        let radius = if theory == TheoryKind::St { 3.0 * width(be.duration) } else { 25.0 };
        let tight = mass_near(last, end, radius);
        c.check(tight >= 0.98, format!("{} panel 5 localized mass {tight:.5}", theory.label()));
    }

    let st = run_st(&be, "S1", "D1", ALWAYS, &mut NoChoice).unwrap();
    c.check(st.collapse_events.is_empty(), "st run has no collapse");

    // Just after recombination: the D2-bound branches cancel.
    let run = run_ct_detailed(&be, "S1", ALWAYS, &mut RunRng::stream(SEED, 0)).unwrap();
    let t = 6001.0;
    let packets = run.packets_at(t);
    let total = gram_norm(&forms_at(&packets, t).unwrap());
    let towards_d2: Vec<GaussianPacket> = packets
        .iter()
        .filter(|p| p.passed_through("B2") && p.direction.dot(Vec2::new(0.0, 1.0)) > 0.5)
        .cloned()
        .collect();
    let d2_mass = gram_norm(&forms_at(&towards_d2, t).unwrap()).abs();
    c.check(towards_d2.len() == 2, format!("{} D2-bound branches", towards_d2.len()));
    c.check(d2_mass < 1e-9 * total, format!("D2-bound mass {d2_mass:e}"));
}

fn replays(c: &mut Checks) {
    let configs = [
        ("ME", TheoryKind::Ct, ALWAYS, 2000),
        ("CE", TheoryKind::Ct, COLLAPSE, 2000),
        ("ACE", TheoryKind::At, COLLAPSE, 2000),
        ("CE", TheoryKind::St, COLLAPSE, 300),
        ("ME", TheoryKind::St, ALWAYS, 300),
    ];
    for (name, theory, mode, n) in configs {
        let mut cfg = EnsembleConfig::new(scenario(name), theory, mode, n, 99);
        cfg.policy = SourcePolicy::Uniform;
        let stats = run_ensemble(&cfg).unwrap();
        let restored = EnsembleStats::from_json(&stats.to_json().unwrap()).unwrap();
        let label = format!("{name} {} {}", theory.label(), mode.label());
        match replay(&restored) {
            Ok(fresh) => c.check(fresh == stats, format!("{label}: replay differs")),
            Err(e) => c.check(false, format!("{label}: {e}")),
        }
    }

    let mut cfg = SessionConfig::new("CE", TheoryKind::Ct, COLLAPSE, 5);
    cfg.grid = 32;
    let mut live = Session::new("acceptance", cfg).unwrap();
    let script: &[(f64, Command)] = &[
        (0.0, Command::StartRun),
        (3000.0, Command::Insert { element: "B2".into() }),
        (8200.0, Command::StartRun),
        (12000.0, Command::Remove { element: "B2".into() }),
        (16500.0, Command::SetRate { rate: 250.0 }),
        (16500.0, Command::StartRun),
        (19000.0, Command::Insert { element: "B2".into() }),
        (19500.0, Command::Remove { element: "B1".into() }),
        (24600.0, Command::StartRun),
    ];
    for (clock, cmd) in script {
        live.advance_to(*clock).unwrap();
        live.command(cmd.clone()).unwrap();
    }
    live.run_to_detection().unwrap();
    live.step().unwrap();
    let log = live.export_log();
    let restored: SessionLog = serde_json::from_str(&serde_json::to_string(&log).unwrap()).unwrap();
    c.check(log.detections.len() == 4, format!("{} live detections", log.detections.len()));
    match verify_log(&restored) {
        Ok(s) => c.check(s.detections() == live.detections(), "live replay detections"),
        Err(e) => c.check(false, format!("live replay: {e}")),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn(&mut Checks)); 8] = [
        ("BE conventional all-or-nothing", all_conventional),
        ("ME four equal ensembles", equal_ensembles),
        ("CE splitter-model divergence", mode_divergence),
        ("conventional/advanced duality", duality),
        ("symmetrical support table", support_table),
        ("closed form against spectral oracle", oracle_gate),
        ("frame goldens", frame_goldens),
        ("replay", replays),
    ];
    let mut all = true;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let mut c = Checks::default();
        f(&mut c);
        let ok = c.failed.is_empty();
        all &= ok;
        println!("criterion {} {}: {} ({} checks)", k + 1, if ok { "PASS" } else { "FAIL" }, name, c.passed + c.failed.len());
        for f in &c.failed {
            println!("    failed: {f}");
        }
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

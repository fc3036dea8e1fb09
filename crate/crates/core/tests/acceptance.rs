//! Acceptance suite. Runs every criterion, prints one line each and exits
//! non-zero when any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use sha2::{Digest, Sha256};

use scenario_mcts::dynamics::{
    bicycle_step, idm_acceleration, ControlInput, IdmParams, VehicleClass, VehicleSpec,
    VehicleState,
};
use scenario_mcts::geometry::{OrientedRect, Vec2};
use scenario_mcts::harness::{
    run_experiment, write_outputs, Experiment, ExperimentConfig, ExperimentRun, Mode,
};
use scenario_mcts::metrics::{drac, time_to_collision, PairKinematics};
use scenario_mcts::netmodel::LaneIdx;
use scenario_mcts::reward::discounted_return;
use scenario_mcts::search::{
    lcb_score, run_search, ucb_score, Arm, BanditEnv, ChildStats, SearchConfig, SelectionStrategy,
};
use scenario_mcts::simcore::{detect_overlap_groups, Body, SimRng, TerminalStatus};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config(name: &str) -> ExperimentConfig {
    let path = configs_dir().join(name);
    let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    ExperimentConfig::from_json(&text).expect("valid config")
}

fn execute(cfg: ExperimentConfig) -> ExperimentRun {
    let exp = Experiment::prepare(cfg, &configs_dir()).expect("experiment prepares");
    run_experiment(&exp).expect("experiment runs")
}

fn hybrid_run() -> &'static ExperimentRun {
    static RUN: OnceLock<ExperimentRun> = OnceLock::new();
    RUN.get_or_init(|| execute(config("intersection_hybrid.json")))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn baseline_safety() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for name in [
        "intersection",
        "t_junction",
        "narrow_corridor",
        "roundabout",
    ] {
        let run = execute(config(&format!("baseline_{name}.json")));
        let s = &run.summary;
        ok &= s.episodes >= 50 && s.feasible > 0 && s.collisions == 0 && s.failure_rate == 0.0;
        parts.push(format!(
            "{name} {}/{} feasible rate {}",
            s.feasible, s.episodes, s.failure_rate
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 120.0;
    check(ok, format!("{}; {secs:.1}s", parts.join(", ")))
}

fn search_efficacy() -> Outcome {
    let start = Instant::now();
    let run = hybrid_run();
    let secs = start.elapsed().as_secs_f64();
    let s = &run.summary;
    let ok = s.episodes == 20 && s.failure_rate >= 0.6 && secs < 1200.0 && run.trees.len() == 20;
    check(
        ok,
        format!(
            "failure rate {:.3} over {} feasible, {} distinct signatures; {secs:.1}s",
            s.failure_rate, s.feasible, s.diversity_count
        ),
    )
}

fn diversity_effect() -> Outcome {
    let distinct = |beta: f64, k: u64| {
        let mut cfg = config("intersection_hybrid.json");
        cfg.reward.diversity_decay = beta;
        cfg.reward.zero_repeats = false;
        cfg.base_seed = 1000 * k;
        execute(cfg).summary.diversity_count
    };
    let mut wins = 0;
    let (mut on_total, mut off_total) = (0, 0);
    let mut parts = Vec::new();
    for k in 0..5 {
        let (on, off) = (distinct(0.5, k), distinct(1.0, k));
        wins += (on > off) as u32;
        on_total += on;
        off_total += off;
        parts.push(format!("{on}/{off}"));
    }
    check(
        on_total >= off_total && wins >= 3,
        format!(
            "distinct with/without bonus {}; totals {on_total}/{off_total}, strictly more in {wins}/5",
            parts.join(" ")
        ),
    )
}

fn mean_abs(run: &ExperimentRun, field: &str) -> f64 {
    let v: Vec<f64> = run
        .reports
        .iter()
        .filter_map(|r| {
            r.quality
                .map(|q| q.field(field).expect("known metric").abs())
        })
        .collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn risk_aversion() -> Outcome {
    let hybrid = hybrid_run();
    let mut cfg = config("intersection_hybrid.json");
    cfg.mode = Mode::SearchUcbOnly;
    let ucb = execute(cfg);
    let fields = [
        "lon_accel_cost",
        "lat_accel_cost",
        "emergency_brake_cost",
        "sharp_turn_cost",
    ];
    let mut improved = 0;
    let mut ok = true;
    let mut parts = Vec::new();
    for f in fields {
        let (h, u) = (mean_abs(hybrid, f), mean_abs(&ucb, f));
        improved += (h < u) as u32;
        ok &= h <= 1.25 * u;
        if f == "emergency_brake_cost" || f == "sharp_turn_cost" {
            ok &= h <= u;
        }
        parts.push(format!("{f} {h:.4}/{u:.4}"));
    }
    ok &= improved >= 2;
    check(
        ok,
        format!(
            "hybrid/ucb_only mean |cost| {}; {improved}/4 improved",
            parts.join(", ")
        ),
    )
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

fn formula_oracles() -> Outcome {
    let mut rng = SimRng::new(5);
    let trials = 200;
    let mut bad = Vec::new();
    let mut note = |name: &str, ok: bool| {
        if !ok && !bad.contains(&name.to_string()) {
            bad.push(name.to_string());
        }
    };
    for _ in 0..trials {
        let p = IdmParams {
            desired_speed: rng.uniform(5.0, 30.0),
            time_headway: rng.uniform(0.5, 2.5),
            min_gap: rng.uniform(1.0, 4.0),
            max_accel: rng.uniform(0.5, 3.0),
            comfort_decel: rng.uniform(1.0, 4.0),
            exponent: rng.uniform(1.0, 6.0),
        };
        let (v, gap, dv) = (
            rng.uniform(0.0, 30.0),
            rng.uniform(0.5, 80.0),
            rng.uniform(-10.0, 10.0),
        );
        let max_decel = 9.0;
        let s_star = p.min_gap
            + (v * p.time_headway + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt()))
                .max(0.0);
        let raw =
            p.max_accel * (1.0 - (v / p.desired_speed).powf(p.exponent) - (s_star / gap).powi(2));
        let want = raw.max(-max_decel).min(p.max_accel);
        note(
            "idm",
            close(idm_acceleration(&p, v, gap, dv, max_decel).unwrap(), want),
        );
        let free = p.max_accel * (1.0 - (v / p.desired_speed).powf(p.exponent));
        let free = free.max(-max_decel).min(p.max_accel);
        note(
            "idm",
            close(
                idm_acceleration(&p, v, f64::INFINITY, dv, max_decel).unwrap(),
                free,
            ),
        );

        let spec = VehicleSpec::default_for(VehicleClass::Car);
        let state = VehicleState {
            position: Vec2::new(rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0)),
            heading: rng.uniform(-3.0, 3.0),
            speed: rng.uniform(0.0, 20.0),
            accel: 0.0,
            steer: 0.0,
            lane: LaneIdx(0),
            s: 0.0,
            d: 0.0,
            odometer: 0.0,
        };
        let dt = 0.1;
        let steer = rng.uniform(-spec.max_steer, spec.max_steer);
        let accel = rng.uniform(-spec.max_decel.min(state.speed / dt), spec.max_accel);
        let next = bicycle_step(&state, &spec, ControlInput::new(steer, accel), dt);
        let v1 = state.speed + accel * dt;
        let yaw = state.speed * steer.tan() / spec.wheelbase * dt;
        let dist = (state.speed + v1) / 2.0 * dt;
        let th = state.heading + yaw / 2.0;
        let heading_diff = (next.heading - (state.heading + yaw)).rem_euclid(std::f64::consts::TAU);
        note(
            "bicycle_step",
            close(next.speed, v1)
                && close(next.position.x, state.position.x + dist * th.cos())
                && close(next.position.y, state.position.y + dist * th.sin())
                && (heading_diff < 1e-9 || std::f64::consts::TAU - heading_diff < 1e-9),
        );
        let brake = -spec.max_decel;
        if state.speed + brake * dt < 0.0 {
            let stop = bicycle_step(&state, &spec, ControlInput::new(0.0, brake), dt);
            let d = state.speed * state.speed / (2.0 * spec.max_decel);
            note(
                "bicycle_step",
                stop.speed == 0.0 && close(stop.position.distance(state.position), d),
            );
        }

        let (n, c) = (rng.range_inclusive(1, 10_000), rng.uniform(0.0, 3.0));
        let (k, q) = (rng.range_inclusive(1, n), rng.uniform(-1.0, 1.0));
        let radius = c * ((n as f64).ln() / k as f64).sqrt();
        note("ucb", close(ucb_score(n, k, q, c), q + radius));
        note("lcb", close(lcb_score(n, k, q, c), q - radius));

        let pk = PairKinematics {
            gap: rng.uniform(0.1, 60.0),
            follower_speed: rng.uniform(0.0, 30.0),
            leader_speed: rng.uniform(0.0, 30.0),
        };
        let closing = pk.follower_speed - pk.leader_speed;
        let ttc = time_to_collision(pk).unwrap();
        note(
            "ttc",
            if closing > 0.0 {
                close(ttc, pk.gap / closing)
            } else {
                ttc.is_infinite()
            },
        );
        let want_drac = if closing > 0.0 {
            closing.powi(2) / (2.0 * pk.gap)
        } else {
            0.0
        };
        note("drac", close(drac(pk).unwrap(), want_drac));

        let len = rng.range_inclusive(0, 80) as usize;
        let rewards: Vec<f64> = (0..len).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let gamma = rng.uniform(0.5, 1.0);
        let want: f64 = rewards
            .iter()
            .enumerate()
            .map(|(t, r)| gamma.powi(t as i32) * r)
            .sum();
        note(
            "discounted_return",
            close(discounted_return(&rewards, gamma), want),
        );
    }
    check(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{trials} random inputs per formula agree to 1e-9")
        } else {
            format!("mismatch in {}", bad.join(", "))
        },
    )
}

fn random_rect(rng: &mut SimRng) -> OrientedRect {
    OrientedRect::new(
        Vec2::new(rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0)),
        rng.uniform(-3.2, 3.2),
        rng.uniform(0.5, 6.0),
        rng.uniform(0.3, 2.5),
    )
}

/// Whether any lattice point of `a` at spacing `h` lies in `b` grown by `grow`.
fn sampled_overlap(a: &OrientedRect, b: &OrientedRect, h: f64, grow: f64) -> bool {
    let grown = OrientedRect {
        half_length: b.half_length + grow,
        half_width: b.half_width + grow,
        ..*b
    };
    let [u, v] = a.axes();
    let (nu, nv) = (
        (2.0 * a.half_length / h).ceil() as i32,
        (2.0 * a.half_width / h).ceil() as i32,
    );
    for i in 0..=nu {
        let su = -a.half_length + 2.0 * a.half_length * i as f64 / nu as f64;
        for j in 0..=nv {
            let sv = -a.half_width + 2.0 * a.half_width * j as f64 / nv as f64;
            if grown.contains(a.center + u * su + v * sv) {
                return true;
            }
        }
    }
    false
}

fn collision_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = SimRng::new(17);
    let h = 0.05;
    let (mut overlaps, mut boundary, mut wrong) = (0, 0, 0);
    for _ in 0..1000 {
        let (a, b) = (random_rect(&mut rng), random_rect(&mut rng));
        let bodies = [
            Body {
                id: 0,
                rect: a,
                class: VehicleClass::Car,
            },
            Body {
                id: 1,
                rect: b,
                class: VehicleClass::Car,
            },
        ];
        let detected = !detect_overlap_groups(&bodies, 8.0).is_empty();
        if detected != a.overlaps(&b) {
            wrong += 1;
            continue;
        }
        overlaps += detected as u32;
        let plain = sampled_overlap(&a, &b, h, 0.0);
        if plain == detected {
            continue;
        }
        // Within resolution: sampling against b grown by h must see what
        // the exact test sees, and b itself can never contain a sample of a
        // when the exact test reports separation.
        if detected && sampled_overlap(&a, &b, h, h) {
            boundary += 1;
        } else {
            wrong += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        wrong == 0 && secs < 60.0,
        format!("1000 pairs, {overlaps} overlapping, {boundary} boundary-resolution differences, {wrong} disagreements; {secs:.1}s"),
    )
}

fn bandit_convergence() -> Outcome {
    let five = BanditEnv {
        arms: [0.1, 0.3, 0.5, 0.7, 0.9].map(Arm::Bernoulli).to_vec(),
    };
    let cfg = SearchConfig {
        max_iterations: 10_000,
        max_depth: 1,
        strategy: SelectionStrategy::UcbOnly,
        ..SearchConfig::default()
    };
    let mut fraction = 0.0;
    for seed in 0..20 {
        let (_, tree) = run_search(&five, false, &cfg, seed);
        let best = tree.node(tree.root().children[4].expect("expanded")).visits;
        fraction += best as f64 / tree.root().visits as f64 / 20.0;
    }

    let two = BanditEnv {
        arms: vec![
            Arm::Bernoulli(0.6),
            Arm::TwoPoint {
                mean: 0.55,
                spread: 0.0475f64.sqrt(),
            },
        ],
    };
    let low = 1;
    let (mut by_lcb, mut by_visits) = (0, 0);
    let mut parts = Vec::new();
    for n in [30, 60, 100, 200] {
        let cfg = SearchConfig {
            max_iterations: n,
            max_depth: 1,
            strategy: SelectionStrategy::UcbOnly,
            ..SearchConfig::default()
        };
        let (mut l, mut m) = (0, 0);
        for seed in 0..100 {
            let (_, tree) = run_search(&two, false, &cfg, seed);
            let kids = tree.child_scores(0, cfg.exploration_constant);
            l += (first_max(&kids, |c| c.lcb) == low) as u32;
            m += (first_max(&kids, |c| c.visits as f64) == low) as u32;
        }
        by_lcb += l;
        by_visits += m;
        parts.push(format!("N={n} {l}/{m}"));
    }
    check(
        fraction > 0.9 && by_lcb > by_visits,
        format!(
            "best-arm fraction {fraction:.3}; low-variance picks lcb/most-visited {} (total {by_lcb}/{by_visits})",
            parts.join(" ")
        ),
    )
}

/// Earliest child with the largest key, the extraction tie rule.
fn first_max(kids: &[ChildStats], key: impl Fn(&ChildStats) -> f64) -> usize {
    let mut best = 0;
    for (i, c) in kids.iter().enumerate() {
        if key(c) > key(&kids[best]) {
            best = i;
        }
    }
    kids[best].action
}

fn hash_dir(dir: &Path) -> String {
    fn walk(dir: &Path, root: &Path, files: &mut Vec<PathBuf>) {
        for entry in fs::read_dir(dir).expect("readable dir") {
            let p = entry.expect("dir entry").path();
            if p.is_dir() {
                walk(&p, root, files);
            } else {
                files.push(p.strip_prefix(root).expect("inside root").to_path_buf());
            }
        }
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files);
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(fs::read(dir.join(&f)).expect("readable file"));
        h.update([0]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn determinism() -> Outcome {
    let mut cfg = config("intersection_hybrid.json");
    cfg.search.max_iterations = 300;
    cfg.episode_count = 6;
    cfg.base_seed = 42;
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut hashes = Vec::new();
    for name in ["a", "b"] {
        let dir = tmp.path().join(name);
        write_outputs(&dir, &execute(cfg.clone())).expect("outputs written");
        hashes.push(hash_dir(&dir));
    }
    check(
        hashes[0] == hashes[1],
        format!("sha256 {} vs {}", &hashes[0][..16], &hashes[1][..16]),
    )
}

fn snapshot_fidelity() -> Outcome {
    let exp = Experiment::prepare(config("intersection_hybrid.json"), &configs_dir())
        .expect("experiment prepares");
    let horizon = 400;
    let mut rng = SimRng::new(99);
    let (mut cycles, mut mismatches, mut episodes) = (0, 0, 0);
    while cycles < 1000 {
        let seed = rng.next_u64();
        let Ok(start) = exp.spawn(seed) else { continue };
        episodes += 1;
        let controls: Vec<ControlInput> = (0..horizon)
            .map(|_| exp.grid.action(rng.below(exp.grid.len() as u64) as usize))
            .collect();
        let mut line = start.clone();
        let mut reference = vec![line.state_hash()];
        for u in &controls {
            if line.is_terminal(horizon) != TerminalStatus::Running {
                break;
            }
            line.step(*u);
            reference.push(line.state_hash());
        }
        let mut world = start;
        let mut t = 0;
        while t + 1 < reference.len() && cycles < 1000 {
            let snap = world.snapshot();
            for _ in 0..rng.range_inclusive(1, 15) {
                if world.is_terminal(horizon) != TerminalStatus::Running {
                    break;
                }
                world.step(exp.grid.action(rng.below(exp.grid.len() as u64) as usize));
            }
            world = snap.restore();
            mismatches += (world.state_hash() != reference[t]) as u32;
            let advance = (rng.range_inclusive(1, 8) as usize).min(reference.len() - 1 - t);
            for u in &controls[t..t + advance] {
                world.step(*u);
            }
            t += advance;
            mismatches += (world.state_hash() != reference[t]) as u32;
            cycles += 1;
        }
    }
    check(
        mismatches == 0,
        format!("{cycles} cycles over {episodes} episodes, {mismatches} hash mismatches"),
    )
}

fn count_conservation() -> Outcome {
    let run = hybrid_run();
    let mut errors = Vec::new();
    for ((seed, tree), report) in run.trees.iter().zip(&run.reports) {
        let iterations = report.search.as_ref().map_or(0, |s| s.iterations);
        if let Err(e) = tree.check_counts(iterations as u64) {
            errors.push(format!("seed {seed}: {e}"));
        }
    }
    check(
        errors.is_empty() && run.trees.len() == 20,
        if errors.is_empty() {
            format!("{} trees conserve counts", run.trees.len())
        } else {
            errors.join("; ")
        },
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("baseline safety", baseline_safety),
        ("search efficacy", search_efficacy),
        ("diversity effect", diversity_effect),
        ("risk-aversion direction", risk_aversion),
        ("formula oracles", formula_oracles),
        ("collision-detection oracle", collision_oracle),
        ("bandit convergence", bandit_convergence),
        ("determinism", determinism),
        ("snapshot fidelity", snapshot_fidelity),
        ("count conservation", count_conservation),
    ];
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n} {name}: PASS ({d}) [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({d}) [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Oracles are computed here independently of the library.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use ibr_core::confidence::posterior_update;
use ibr_core::dynamics::{idm_rollout, IdmParams, MIN_GAP};
use ibr_core::geometry::{box_clearance, boxes_collide, Footprint, OrientedBox, Pose, Vec2};
use ibr_core::ibr::{nash_oracle, run_ibr, GameState, InteractionTable, RewardWeights, UpdateOrder};
use ibr_core::metrics::{composite, score_trace, MetricsReport};
use ibr_core::predictor::Maneuver;
use ibr_core::scenario_io::{resolve_scenario, write_results, ResultsFile, ScenarioFile};
use ibr_core::simulator::{run_closed_loop, Behavior, SimTrace};
use ibr_core::PlannerConfig;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run(file: &ScenarioFile, cfg: &PlannerConfig) -> (SimTrace, MetricsReport) {
    let scenario = file.to_scenario().expect("bundled scenario is valid");
    let trace = run_closed_loop(&scenario, cfg).expect("closed loop runs");
    let metrics = score_trace(&trace, &scenario, &cfg.comfort).expect("trace scores");
    (trace, metrics)
}

fn bundled(name: &str) -> ScenarioFile {
    resolve_scenario(name).expect("bundled scenario exists")
}

// 1 ---------------------------------------------------------------------

struct RandomGame {
    psi: [[f64; 3]; 3],
    progress: [f64; 3],
    comfort: [f64; 3],
}

fn random_game(rng: &mut ChaCha8Rng, cfg: &RewardWeights) -> RandomGame {
    let values = [cfg.u_c, cfg.u_d, 0.0];
    let mut psi = [[0.0; 3]; 3];
    for row in &mut psi {
        for v in row.iter_mut() {
            *v = values[rng.gen_range(0..3)];
        }
    }
    let mut progress = [0.0; 3];
    let mut comfort = [0.0; 3];
    for l in 0..3 {
        progress[l] = rng.gen_range(0.0..=cfg.alpha + cfg.beta);
        comfort[l] = f64::from(rng.gen_range(0u8..2));
    }
    RandomGame { psi, progress, comfort }
}

/// Pure payoff straight from the drawn matrices.
fn payoff(g: &RandomGame, cfg: &RewardWeights, agent: usize, profile: [usize; 2]) -> f64 {
    let [l, m] = profile;
    let own = if agent == 0 {
        cfg.w_p * g.progress[l] + cfg.w_c * g.comfort[l]
    } else {
        0.0
    };
    g.psi[l][m] + own
}

fn is_nash(g: &RandomGame, cfg: &RewardWeights, profile: [usize; 2], eps: f64) -> bool {
    (0..2).all(|agent| {
        let base = payoff(g, cfg, agent, profile);
        (0..3).all(|alt| {
            let mut dev = profile;
            dev[agent] = alt;
            payoff(g, cfg, agent, dev) <= base + eps
        })
    })
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cfg = RewardWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut concentrated, mut agreed) = (0, 0);
    for _ in 0..100 {
        let g = random_game(&mut rng, &cfg);
        let pairs = BTreeMap::from([((0, 1), g.psi.iter().flatten().copied().collect())]);
        let table = InteractionTable::from_parts(vec![3, 3], pairs, g.progress.to_vec(), g.comfort.to_vec()).unwrap();
        let state = GameState::new(
            vec!["ego".into(), "agent".into()],
            vec![vec![1.0 / 3.0; 3]; 2],
            vec![vec![1.0; 3]; 2],
            table,
            cfg,
            vec![1.0, 1.0],
            UpdateOrder::EgoFirst,
        )
        .unwrap();
        let (state, _) = run_ibr(state, 50);
        if !state.distributions().iter().all(|d| d.max_prob() > 0.99) {
            continue;
        }
        concentrated += 1;
        let p = state.profile();
        let profile = [p[0], p[1]];
        let library = nash_oracle(&state.table, &cfg, &p, 1e-9).unwrap().is_equilibrium();
        if is_nash(&g, &cfg, profile, 1e-9) && library {
            agreed += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        concentrated > 0 && agreed == concentrated && secs < 10.0,
        format!("{agreed}/{concentrated} concentrated runs certified (of 100 games), {secs:.2} s"),
    )
}

// 2 ---------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let cfg = RewardWeights {
        w_p: 1.0,
        w_c: 0.0,
        ..RewardWeights::default()
    };
    let table = InteractionTable::from_parts(vec![3], BTreeMap::new(), vec![1.0, 0.5, 0.0], vec![0.0; 3]).unwrap();
    let state = GameState::new(
        vec!["solo".into()],
        vec![vec![1.0 / 3.0; 3]],
        vec![vec![1.0; 3]],
        table,
        cfg,
        vec![1.0],
        UpdateOrder::EgoFirst,
    )
    .unwrap();
    let (state, _) = run_ibr(state, 10);
    let top = state.distribution(0).max_prob();
    let e = std::f64::consts::E;
    let expected = e.powi(10) / (e.powi(10) + e.powi(5) + 1.0);
    let err = (top - expected).abs();
    check(err <= 1e-9, format!("top {top:.15} vs closed form {expected:.15} (|err| {err:.1e})"))
}

// 3 ---------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let file = bundled("lane_change_dense");
    let reports: Vec<MetricsReport> = (0..=10)
        .map(|k| {
            let cfg = PlannerConfig {
                iterations: k,
                ..PlannerConfig::default()
            };
            run(&file, &cfg).1
        })
        .collect();
    let jump = reports[1].ep - reports[0].ep;
    let drift: f64 = reports[1..].windows(2).map(|w| (w[1].composite - w[0].composite).abs()).sum();
    check(
        jump >= 0.1 && drift < 0.05,
        format!(
            "EP {:.4} -> {:.4} (jump {jump:.4}); composite drift over iterations 1..10 = {drift:.4}",
            reports[0].ep, reports[1].ep
        ),
    )
}

// 4 ---------------------------------------------------------------------

fn criterion_4() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["lane_change_dense", "merge_gap"] {
        let (trace, _) = run(&bundled(name), &PlannerConfig::default());
        let ego = trace.mean_ego_entropy().unwrap_or_default();
        let agents = trace.mean_agent_entropy().unwrap_or_default();
        let (Some(e10), Some(a0), Some(a10)) = (ego.get(10), agents.first(), agents.get(10)) else {
            return Err(format!("{name}: entropy trace shorter than 11 iterations"));
        };
        ok &= *e10 < 0.8 && a10 < a0;
        parts.push(format!("{name}: ego H10 {e10:.3}, agents H0 {a0:.3} -> H10 {a10:.3}"));
    }
    check(ok, parts.join("; "))
}

// 5 ---------------------------------------------------------------------

/// `lane_change_dense` with the trailing agent 6 m closer and a replaced
/// behavior, so the cut-in interacts from the first cycle.
fn cut_in(behavior: Behavior) -> ScenarioFile {
    let mut file = bundled("lane_change_dense");
    let trailing = file.agents.iter_mut().find(|a| a.id == "trailing").unwrap();
    trailing.pose.x = 44.0;
    trailing.behavior = behavior;
    file
}

const CUT_IN_SIGMA: f64 = 0.05;

fn confidence_cfg(enabled: bool) -> PlannerConfig {
    let mut cfg = PlannerConfig {
        confidence_enabled: enabled,
        ..PlannerConfig::default()
    };
    cfg.confidence.sigma = CUT_IN_SIGMA;
    cfg
}

fn trailing_confidence(trace: &SimTrace, cycles: usize) -> Vec<f64> {
    trace.cycles[..=cycles]
        .iter()
        .map(|c| c.confidences.iter().find(|a| a.id == "trailing").unwrap().gain)
        .collect()
}

fn criterion_5() -> Outcome {
    let adversarial = cut_in(Behavior::Scripted {
        maneuver: Maneuver::KeepSpeed,
    });
    let cooperative = cut_in(Behavior::Cooperative);
    let (adv_on, adv_on_m) = run(&adversarial, &confidence_cfg(true));
    let (_, adv_off_m) = run(&adversarial, &confidence_cfg(false));
    let (coop_on, _) = run(&cooperative, &confidence_cfg(true));
    let adv_min = trailing_confidence(&adv_on, 10).into_iter().fold(f64::INFINITY, f64::min);
    let coop_max = trailing_confidence(&coop_on, 10).into_iter().fold(0.0, f64::max);
    let ttc = |m: &MetricsReport| m.min_ttc.unwrap_or(f64::INFINITY);
    check(
        adv_min < 0.2 && coop_max > 0.8 && ttc(&adv_off_m) < ttc(&adv_on_m),
        format!(
            "sigma {CUT_IN_SIGMA}: adversarial c {adv_min:.3}, cooperative c {coop_max:.3}, \
             min TTC off {:.3} s vs on {:.3} s",
            ttc(&adv_off_m),
            ttc(&adv_on_m)
        ),
    )
}

// 6 ---------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let cfg = RewardWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut games = 0;
    for _ in 0..50 {
        let n = rng.gen_range(2..=4);
        let sizes: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=5)).collect();
        let mut pairs = BTreeMap::new();
        for i in 0..n {
            for j in i + 1..n {
                let m = (0..sizes[i] * sizes[j]).map(|_| [cfg.u_c, cfg.u_d, 0.0][rng.gen_range(0..3)]).collect();
                pairs.insert((i, j), m);
            }
        }
        let progress = (0..sizes[0]).map(|_| rng.gen_range(0.0..0.3)).collect();
        let comfort = (0..sizes[0]).map(|_| f64::from(rng.gen_range(0u8..2))).collect();
        let table = InteractionTable::from_parts(sizes.clone(), pairs, progress, comfort).unwrap();
        let base: Vec<Vec<f64>> = sizes
            .iter()
            .map(|&m| {
                let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let weights: Vec<Vec<f64>> = sizes.iter().map(|&m| (0..m).map(|_| rng.gen_range(0.2..3.0)).collect()).collect();
        let state = GameState::new(
            (0..n).map(|i| format!("a{i}")).collect(),
            base,
            weights,
            table,
            cfg,
            vec![0.0; n],
            UpdateOrder::EgoFirst,
        )
        .unwrap();
        let before = state.distributions();
        let (after, _) = run_ibr(state, 10);
        if after.distributions() != before {
            return Err(format!("game {games} changed under c = 0"));
        }
        games += 1;
    }
    check(true, format!("{games} random games bit-identical after 10 sweeps"))
}

// 7 ---------------------------------------------------------------------

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let p0: f64 = rng.gen_range(0.05..0.95);
        let mut p = p0;
        let mut log_ratio = 0.0;
        for _ in 0..20 {
            // Ratios within [0.8, 1.25] keep the 20-step posterior inside the
            // clamp interval, where recursion and batch form must agree.
            let lp: f64 = rng.gen_range(0.1..2.0);
            let lb = lp * rng.gen_range(0.8..1.25);
            p = posterior_update(p, lb, lp).unwrap();
            log_ratio += (lb / lp).ln();
        }
        let odds = p0 / (1.0 - p0) * log_ratio.exp();
        let batch = odds / (1.0 + odds);
        worst = worst.max((p - batch).abs());
    }
    check(worst <= 1e-9, format!("200 sequences of 20 steps, max |recursive - batch| = {worst:.2e}"))
}

// 8 ---------------------------------------------------------------------

fn corners(b: &OrientedBox) -> [Vec2; 4] {
    let (s, c) = b.pose.heading.sin_cos();
    let (hl, hw) = (b.footprint.length / 2.0, b.footprint.width / 2.0);
    [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(u, v)| [b.pose.x + c * u - s * v, b.pose.y + s * u + c * v])
}

fn inside(b: &OrientedBox, p: Vec2) -> bool {
    let (s, c) = b.pose.heading.sin_cos();
    let (dx, dy) = (p[0] - b.pose.x, p[1] - b.pose.y);
    let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
    u.abs() <= b.footprint.length / 2.0 && v.abs() <= b.footprint.width / 2.0
}

/// Perimeter samples at spacing <= `h`, vertices included.
fn perimeter(b: &OrientedBox, h: f64) -> Vec<Vec2> {
    let c = corners(b);
    let mut pts = Vec::new();
    for i in 0..4 {
        let (a, z) = (c[i], c[(i + 1) % 4]);
        let len = ((z[0] - a[0]).powi(2) + (z[1] - a[1]).powi(2)).sqrt();
        let n = (len / h).ceil() as usize;
        for k in 0..n {
            let t = k as f64 / n as f64;
            pts.push([a[0] + t * (z[0] - a[0]), a[1] + t * (z[1] - a[1])]);
        }
    }
    pts
}

fn point_segment(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

fn sampled_clearance(from: &[Vec2], to: &OrientedBox) -> f64 {
    let c = corners(to);
    from.iter()
        .map(|&p| (0..4).map(|i| point_segment(p, c[i], c[(i + 1) % 4])).fold(f64::INFINITY, f64::min))
        .fold(f64::INFINITY, f64::min)
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 0.005;
    let (mut agree, mut hits, mut worst_gap) = (0, 0, 0.0_f64);
    for _ in 0..1000 {
        let mut draw = || {
            let length: f64 = rng.gen_range(1.0..6.0);
            let width = rng.gen_range(0.5..=length.min(3.0));
            OrientedBox::new(
                Pose::new(rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), rng.gen_range(-3.2..3.2)),
                Footprint::new(length, width).unwrap(),
            )
        };
        let (a, b) = (draw(), draw());
        let (pa, pb) = (perimeter(&a, h), perimeter(&b, h));
        let oracle = pa.iter().any(|&p| inside(&b, p)) || pb.iter().any(|&p| inside(&a, p));
        if oracle == boxes_collide(&a, &b) {
            agree += 1;
        }
        hits += usize::from(oracle);
        if !oracle {
            let sampled = sampled_clearance(&pa, &b).min(sampled_clearance(&pb, &a));
            worst_gap = worst_gap.max((sampled - box_clearance(&a, &b)).abs());
        }
    }
    check(
        agree == 1000 && worst_gap <= 1e-2,
        format!("{agree}/1000 collision verdicts agree ({hits} overlapping); max clearance gap {worst_gap:.2e} m"),
    )
}

// 9 ---------------------------------------------------------------------

/// Explicit Euler of the constant-s* law with the same clamps as the model.
fn reference_final_speed(p: &IdmParams, v0: f64, gap0: f64, horizon: f64, dt: f64) -> f64 {
    let (mut x, mut v) = (0.0_f64, v0);
    for _ in 0..(horizon / dt).round() as usize {
        let s = (gap0 - x).max(MIN_GAP);
        let a = (p.a_max * (1.0 - (v / p.v_target).powf(p.delta) - (p.s_star / s).powi(2))).max(-p.max_decel);
        x += v * dt;
        v = (v + a * dt).max(0.0);
    }
    v
}

fn criterion_9() -> Outcome {
    let p = IdmParams::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for gap0 in [20.0, 40.0] {
        let leader = move |_t: f64| gap0;
        let coarse = idm_rollout(&p, 10.0, Some(&leader), 4.0, 0.1).unwrap().final_speed();
        let fine = reference_final_speed(&p, 10.0, gap0, 4.0, 1e-3);
        let rel = if fine == 0.0 { coarse.abs() } else { (coarse - fine).abs() / fine };
        ok &= rel <= 0.05;
        parts.push(format!("leader {gap0} m: v(4 s) {coarse:.4} vs {fine:.4} ({:.2}%)", 100.0 * rel));
    }
    let eq = idm_rollout(&p, p.v_target, None, 4.0, 0.1).unwrap();
    let drift = eq.speeds.iter().map(|v| (v - p.v_target).abs()).fold(0.0, f64::max);
    ok &= drift <= 1e-9;
    parts.push(format!("equilibrium drift {drift:.1e}"));
    check(ok, parts.join("; "))
}

// 10 --------------------------------------------------------------------

fn criterion_10() -> Outcome {
    let examples = [
        composite(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0),
        composite(0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0),
        composite(1.0, 1.0, 1.0, 1.0, 1.0, 0.8, 1.0, 1.0),
    ];
    let exact = examples == [1.0, 0.0, 0.9375];
    let mut runner = TestRunner::new(PropConfig {
        cases: 1000,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let strategy = (
        prop::collection::vec(prop::sample::select(vec![0.0, 0.5, 1.0]), 4),
        prop::collection::vec(0.0f64..=1.0, 4),
        0usize..8,
        0.0f64..=1.0,
    );
    let property = runner.run(&strategy, |(mult, graded, which, bump)| {
        let mut v: Vec<f64> = mult.iter().chain(&graded).copied().collect();
        let c = |v: &[f64]| composite(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]);
        let base = c(&v);
        prop_assert!((0.0..=1.0).contains(&base));
        v[which] = (v[which] + bump).min(1.0);
        prop_assert!(c(&v) >= base);
        Ok(())
    });
    check(
        exact && property.is_ok(),
        format!("examples {examples:?}; monotonicity over 1000 cases: {}", if property.is_ok() { "holds" } else { "violated" }),
    )
}

// 11 --------------------------------------------------------------------

fn results_bytes(dir: &std::path::Path, tag: &str) -> Vec<u8> {
    let file = bundled("lane_change_dense");
    let cfg = PlannerConfig::default();
    let (trace, metrics) = run(&file, &cfg);
    let path = dir.join(format!("{tag}.results.json"));
    write_results(&ResultsFile::new(&file, &cfg, trace, metrics), &path).unwrap();
    std::fs::read(path).unwrap()
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let a = results_bytes(dir.path(), "a");
    let b = results_bytes(dir.path(), "b");
    check(a == b, format!("two results files of {} bytes, identical: {}", a.len(), a == b))
}

// 12 --------------------------------------------------------------------

fn criterion_12() -> Outcome {
    let (trace, metrics) = run(&bundled("lane_change_dense"), &PlannerConfig::default());
    let speeds = trace.agent_speeds("trailing");
    let during: Vec<f64> = trace
        .steps
        .iter()
        .zip(&speeds)
        .filter(|(w, _)| w.ego_lane_changing)
        .map(|(_, v)| *v)
        .collect();
    if during.is_empty() {
        return Err("the ego never changed lanes".into());
    }
    let min = during.iter().copied().fold(f64::INFINITY, f64::min);
    let drop = speeds[0] - min;
    check(
        drop >= 0.5 && metrics.nc == 1.0,
        format!("trailing speed {:.2} -> min {min:.2} during lane change (drop {drop:.2}); nc = {}", speeds[0], metrics.nc),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("Nash-oracle agreement", criterion_1),
        ("multiplicative-weight closed form", criterion_2),
        ("first-iteration jump", criterion_3),
        ("entropy concentration", criterion_4),
        ("confidence behavior", criterion_5),
        ("confidence-freeze identity", criterion_6),
        ("Bayes exactness", criterion_7),
        ("collision oracle", criterion_8),
        ("IDM oracle", criterion_9),
        ("metric algebra", criterion_10),
        ("determinism", criterion_11),
        ("interaction trend", criterion_12),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion, each driven through
//! the same runner the binary uses. Exits nonzero if any criterion fails.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use carnot_potential::{run, ExperimentConfig, Summary};
use serde_json::{json, Value};

struct Runner {
    dir: tempfile::TempDir,
    count: usize,
}

impl Runner {
    fn run_with(&mut self, cfg: Value, threads: Option<usize>) -> (Summary, std::path::PathBuf) {
        self.count += 1;
        let out = self.dir.path().join(format!("run{}", self.count));
        let cfg = ExperimentConfig::from_json(&cfg.to_string()).expect("acceptance configs parse");
        let s = run(&cfg, &out, threads);
        (s, out)
    }

    fn run(&mut self, cfg: Value) -> Summary {
        self.run_with(cfg, None).0
    }
}

fn check(s: &Summary, name: &str) -> f64 {
    s.checks
        .iter()
        .find(|c| c.name == name)
        .map(|c| c.value)
        .unwrap_or(f64::NAN)
}

fn ok(s: &Summary) -> bool {
    s.exit_code == 0
}

fn why(s: &Summary) -> String {
    match &s.error {
        Some(e) => format!(" [{}: {}]", e.kind, e.message),
        None => String::new(),
    }
}

fn group(kind: &str, n: usize) -> Value {
    json!({"kind": kind, "n": n})
}

fn h1() -> Value {
    group("heisenberg", 1)
}

const THIRD: f64 = 1.0 / 3.0;

fn cantor_maps() -> Value {
    json!([
        {"translation": [0.0, 0.0, 0.0], "ratio": THIRD},
        {"translation": [2.0 * THIRD, 0.0, 0.0], "ratio": THIRD}
    ])
}

fn fixed(start: [f64; 3], u: [f64; 2], delta: f64) -> Value {
    json!({"start": start, "rule": {"kind": "fixed", "u": u}, "delta": delta})
}

fn criterion_1(r: &mut Runner) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for (kind, n) in [
        ("euclidean", 3),
        ("euclidean", 5),
        ("heisenberg", 1),
        ("heisenberg", 2),
        ("quaternionic", 1),
        ("octonionic", 1),
    ] {
        let s = r.run(json!({"experiment": "group-check", "group": group(kind, n),
                             "params": {"samples": 10000, "tol": 1e-12, "htype_tol": 1e-10}, "rng_seed": 11}));
        let worst = [
            "associativity",
            "identity",
            "inverse",
            "dilation_automorphism",
        ]
        .iter()
        .map(|k| check(&s, k))
        .fold(0.0, f64::max);
        pass &= ok(&s);
        parts.push(format!(
            "{} max {:.1e} J {:.1e}{}",
            s.group.clone().unwrap_or_default(),
            worst,
            check(&s, "htype"),
            why(&s)
        ));
    }
    (pass, parts.join("; "))
}

fn criterion_2(r: &mut Runner) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for (kind, n) in [
        ("euclidean", 3),
        ("heisenberg", 1),
        ("heisenberg", 2),
        ("quaternionic", 1),
        ("octonionic", 1),
    ] {
        let s = r.run(json!({"experiment": "gauge-check", "group": group(kind, n),
                             "params": {"samples": 10000, "tol": 1e-12, "order": 2.0, "order_tol": 0.2}, "rng_seed": 12}));
        pass &= ok(&s);
        parts.push(format!(
            "{} hom {:.1e} sym {:.1e} order {:.3}{}",
            s.group.clone().unwrap_or_default(),
            check(&s, "homogeneity"),
            check(&s, "symmetry"),
            s.result["stencil_order"].as_f64().unwrap_or(f64::NAN),
            why(&s)
        ));
    }
    let want = 1.0 / (4.0 * std::f64::consts::PI);
    let s = r.run(
        json!({"experiment": "calibrate", "group": group("euclidean", 3),
                         "params": {"expected": want, "tol": 1e-3}}),
    );
    pass &= ok(&s);
    parts.push(format!(
        "R^3 c = {:.6} (1/4pi = {want:.6}){}",
        s.result["cGamma"].as_f64().unwrap_or(f64::NAN),
        why(&s)
    ));
    (pass, parts.join("; "))
}

fn criterion_3(r: &mut Runner) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for (kind, n) in [("heisenberg", 1), ("quaternionic", 1)] {
        let s = r.run(json!({"experiment": "flow-check", "group": group(kind, n), "rng_seed": 13,
                             "params": {"points": 200, "det_points": 4, "tol_linearity": 1e-8,
                                        "tol_speed": 1e-7, "tol_semigroup": 1e-7, "tol_det": 1e-3}}));
        pass &= ok(&s);
        parts.push(format!(
            "{} lin {:.1e} speed {:.1e} semi {:.1e} det {:.1e}{}",
            s.group.clone().unwrap_or_default(),
            check(&s, "gauge_linearity"),
            check(&s, "constant_speed"),
            check(&s, "semigroup"),
            check(&s, "jacobian"),
            why(&s)
        ));
    }
    (pass, parts.join("; "))
}

fn criterion_4(r: &mut Runner) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for (kind, tol) in [("heisenberg", 0.02), ("quaternionic", 0.03)] {
        let s = r.run(json!({"experiment": "polar-check", "group": group(kind, 1), "rng_seed": 14,
                             "params": {"functions": ["gauge_gaussian", "gaussian"], "samples": 20000, "tol": tol}}));
        pass &= ok(&s);
        parts.push(format!(
            "{} rel {:.4} / {:.4} (tol {tol}){}",
            s.group.clone().unwrap_or_default(),
            check(&s, "polar_gauge_gaussian"),
            check(&s, "polar_gaussian"),
            why(&s)
        ));
    }
    let s = r.run(json!({"experiment": "polar-check", "group": group("euclidean", 3), "rng_seed": 14,
                         "params": {"functions": [], "sigma": {"samples": 40000, "reference": 4.0 * std::f64::consts::PI, "tol": 0.01}}}));
    pass &= ok(&s);
    parts.push(format!(
        "R^3 sigma {:.4} (rel {:.4}){}",
        s.result["sigma"]["total"].as_f64().unwrap_or(f64::NAN),
        check(&s, "sigma_total"),
        why(&s)
    ));
    (pass, parts.join("; "))
}

fn criterion_5(r: &mut Runner) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    let cases = [
        (group("euclidean", 3), 1.0, 1.0, vec![0.15, -0.1, 0.02]),
        (h1(), 0.9, 0.9, vec![0.05, 0.03, 0.002]),
        (h1(), 1.5, 0.5, vec![0.2, 0.0, 0.0]),
    ];
    for (grp, a, b, p) in cases {
        let s = r.run(json!({"experiment": "giraud-scan", "group": grp, "rng_seed": 15,
                             "params": {"a_grid": [a], "b_grid": [b], "pair_samples": 3,
                                        "separations": {"from": 1e-3, "to": 1.0, "n": 7}, "slope_tol": 0.1,
                                        "annulus": {"a": a, "b": b, "p": p, "tol": 0.01}}}));
        pass &= ok(&s);
        parts.push(format!(
            "{} ({a},{b}) slope {:+.4} partition {:.1e}{}",
            s.group.clone().unwrap_or_default(),
            s.result["boundedness"][0]["fit"]["slope"]
                .as_f64()
                .unwrap_or(f64::NAN),
            check(&s, "annulus_partition"),
            why(&s)
        ));
    }
    (pass, parts.join("; "))
}

fn criterion_6(r: &mut Runner) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    let runs = [
        (
            "horizontal segment",
            json!({"kind": "segment", "n": 100000, "vertical": false}),
            json!({"from": 0.1, "to": 1e-4, "n": 7}),
            1.0,
            0.1,
        ),
        (
            "vertical segment",
            json!({"kind": "segment", "n": 100000, "vertical": true}),
            json!({"from": 0.3, "to": 0.01, "n": 6}),
            2.0,
            0.1,
        ),
        (
            "gauge ball",
            json!({"kind": "gauge_ball", "chunks": 24, "chunk_size": 1000000}),
            json!({"from": 0.12, "to": 0.025, "n": 6}),
            4.0,
            0.15,
        ),
    ];
    for (name, sample, scales, want, tol) in runs {
        let s = r.run(json!({"experiment": "boxcount", "group": h1(), "rng_seed": 16,
                             "params": {"sample": sample, "scales": scales, "expected": want, "tol": tol}}));
        pass &= ok(&s);
        parts.push(format!(
            "{name} {:.3} (want {want} +- {tol}){}",
            s.result["slope"].as_f64().unwrap_or(f64::NAN),
            why(&s)
        ));
    }
    let s = r.run(json!({"experiment": "ifs", "group": h1(), "rng_seed": 16,
                         "params": {"maps": cantor_maps(), "n_points": 100000,
                                    "scales": {"from": 0.1, "to": 1e-4, "n": 7}, "tol": 0.05}}));
    pass &= ok(&s);
    parts.push(format!(
        "Cantor {:.4} (want {:.4} +- 0.05){}",
        s.result["cover"]["slope"].as_f64().unwrap_or(f64::NAN),
        2f64.ln() / 3f64.ln(),
        why(&s)
    ));
    (pass, parts.join("; "))
}

fn criterion_7(r: &mut Runner) -> (bool, String) {
    let atom = r.run(json!({"experiment": "divergence-probe", "group": h1(),
                            "params": {"measure": {"atoms": [[[0.0, 0.0, 0.0], 1.0]]},
                                       "curve": fixed([0.0; 3], [1.0, 0.0], 1.0),
                                       "t_mins": {"from": 1e-3, "to": 1e-6, "n": 4},
                                       "expected_growth": -1.0, "growth_tol": 0.05}}));
    let away = r.run(json!({"experiment": "divergence-probe", "group": h1(),
                            "params": {"measure": {"atoms": [[[0.0, 3.0, 0.0], 1.0], [[1.0, 2.5, 0.1], 0.5]]},
                                       "curve": fixed([0.0; 3], [0.6, 0.8], 1.0),
                                       "t_mins": {"from": 1e-3, "to": 1e-7, "n": 5},
                                       "cauchy_tol": 1e-6}}));
    (
        ok(&atom) && ok(&away),
        format!(
            "point mass growth {:+.4}{}; mass away last step {:.1e}{}",
            atom.result["growth"]["slope"].as_f64().unwrap_or(f64::NAN),
            why(&atom),
            check(&away, "cauchy"),
            why(&away)
        ),
    )
}

fn criterion_8(r: &mut Runner) -> (bool, String) {
    let grid: Vec<Vec<f64>> = (0..=8)
        .flat_map(|i| (0..=2).map(move |k| vec![i as f64 / 8.0, 0.0, (k as f64 - 1.0) * 0.01]))
        .chain([vec![0.0; 3], vec![1.0, 0.0, 0.0], vec![2.0 / 9.0, 0.0, 0.0]])
        .collect();
    let cfg = |t: f64| {
        json!({"experiment": "ifs", "group": h1(), "rng_seed": 18,
               "params": {"maps": cantor_maps(), "n_points": 40000, "scales": {"from": 0.1, "to": 1e-4, "n": 7},
                          "tol": 0.05, "phi": {"t": t, "points": grid, "drift_tol": 0.1}}})
    };
    let s = r.run(cfg(0.3));
    // t at or above the dimension is outside the functional's domain
    let bad = r.run(cfg(0.7));
    let refused = bad.exit_code == 2;
    (
        ok(&s) && refused,
        format!(
            "t = 0.3: drift {:.4} over {} points, bounded {}{}; t = 0.7 refused: {refused}{}",
            check(&s, "phi_drift"),
            grid.len(),
            check(&s, "phi_bounded") == 1.0,
            why(&s),
            why(&bad)
        ),
    )
}

fn criterion_9(r: &mut Runner) -> (bool, String) {
    let atom = r.run(json!({"experiment": "threshold", "group": h1(), "rng_seed": 1, "params": {
        "maps": [{"translation": [0.0, 0.0, 0.0], "ratio": 0.5}],
        "curves": [fixed([0.0; 3], [1.0, 0.0], 1.0), fixed([0.0; 3], [0.6, 0.8], 1.0),
                   {"start": [0.0, 0.0, 0.0], "rule": {"kind": "radial_flow", "direction": [0.2, -1.0, 0.7]}, "delta": 1.0}],
        "target_dim": 0.0, "n_points": 10000, "scales": {"from": 0.1, "to": 1e-4, "n": 5},
        "mass": {"kind": "atoms", "atoms": [[[0.0, 0.0, 0.0], 1.0]]},
        "probe_times": {"from": 0.5, "to": 1e-5, "n": 12}}}));
    let cantor = r.run(json!({"experiment": "threshold", "group": h1(), "rng_seed": 2, "params": {
        "maps": cantor_maps(),
        "curves": [fixed([0.0; 3], [0.0, 1.0], 0.5), fixed([0.0; 3], [-0.6, 0.8], 0.5), fixed([1.0, 0.0, 0.0], [0.0, -1.0], 0.5)],
        "target_dim": 2f64.ln() / 3f64.ln(), "n_points": 200000, "scales": {"from": 0.1, "to": 1e-4, "n": 7},
        "mass": {"kind": "on_set", "n_atoms": 100000, "mass": 1.0},
        "probe_times": {"from": 0.3, "to": 1e-5, "n": 16}}}));
    let dust = r.run(json!({"experiment": "threshold", "group": h1(), "rng_seed": 3, "params": {
        "maps": [{"translation": [0.0, 0.0, 0.0], "ratio": THIRD}, {"translation": [2.0 * THIRD, 0.0, 0.0], "ratio": THIRD},
                 {"translation": [0.0, 2.0 * THIRD, 0.0], "ratio": THIRD}, {"translation": [2.0 * THIRD, 2.0 * THIRD, 0.0], "ratio": THIRD}],
        "curves": [fixed([0.0; 3], [-0.6, -0.8], 0.5), fixed([1.0, 1.0, 0.0], [0.6, 0.8], 0.5)],
        "target_dim": 4f64.ln() / 3f64.ln(), "n_points": 1000000, "scales": {"from": 0.1, "to": 1e-3, "n": 7},
        "mass": {"kind": "on_set", "n_atoms": 100000, "mass": 1.0},
        "probe_times": {"from": 0.3, "to": 1e-4, "n": 14},
        "witness": {"delta": 0.25, "n_nu": 8000, "n_mu": 2000, "doublings": 2, "scan_pairs": 8}}}));
    let betas = |s: &Summary| -> String {
        s.result["curves"]
            .as_array()
            .map(|cs| {
                cs.iter()
                    .map(|c| format!("{:.2}", c["blowup"]["slope"].as_f64().unwrap_or(f64::NAN)))
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .unwrap_or_default()
    };
    let below = |s: &Summary| {
        ok(s) && s.result["below_threshold"] == true && s.result["all_blow_up"] == true
    };
    let w = &dust.result["witness"];
    let witness_ok = ok(&dust)
        && dust.result["below_threshold"] == false
        && w["finite"] == true
        && w["drift"].as_f64().is_some_and(|d| d <= 0.05);
    (
        below(&atom) && below(&cantor) && witness_ok,
        format!(
            "atom dim {:.3} beta [{}]{}; Cantor dim {:.3} beta [{}]{}; dust dim {:.3}, witness {:.4} drift {:.4}{}",
            atom.result["cover"]["slope"].as_f64().unwrap_or(f64::NAN),
            betas(&atom),
            why(&atom),
            cantor.result["cover"]["slope"].as_f64().unwrap_or(f64::NAN),
            betas(&cantor),
            why(&cantor),
            dust.result["cover"]["slope"].as_f64().unwrap_or(f64::NAN),
            w["estimates"].as_array().and_then(|v| v.last()).and_then(|v| v.as_f64()).unwrap_or(f64::NAN),
            w["drift"].as_f64().unwrap_or(f64::NAN),
            why(&dust)
        ),
    )
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn criterion_10(r: &mut Runner) -> (bool, String) {
    let cfgs = [
        json!({"experiment": "group-check", "group": group("octonionic", 1), "params": {"samples": 5000}, "rng_seed": 20}),
        json!({"experiment": "gauge-check", "group": h1(), "params": {"samples": 5000}, "rng_seed": 20}),
        json!({"experiment": "flow-check", "group": group("quaternionic", 1), "params": {"points": 40, "det_points": 2}, "rng_seed": 20}),
        json!({"experiment": "ifs", "group": h1(), "rng_seed": 20,
               "params": {"maps": cantor_maps(), "n_points": 40000, "scales": {"from": 0.1, "to": 1e-4, "n": 7},
                          "phi": {"t": 0.3, "points": [[0.5, 0.0, 0.0]]}}}),
        json!({"experiment": "boxcount", "group": h1(), "rng_seed": 20,
               "params": {"sample": {"kind": "gauge_ball", "chunks": 4, "chunk_size": 50000}, "scales": [0.3, 0.2, 0.1, 0.05]}}),
        json!({"experiment": "polar-check", "group": h1(), "rng_seed": 20, "params": {"samples": 2000, "tol": 1.0}}),
        json!({"experiment": "potential-eval", "group": h1(),
               "params": {"measure": {"atoms": [[[0.0, 0.0, 0.0], 1.0], [[0.5, 0.2, 0.1], 2.0]]},
                          "points": [[1.0, 1.0, 1.0], [0.5, 0.2, 0.1]],
                          "harmonicity": {"region": {"lo": [1.0, 1.0, 1.0], "hi": [2.0, 2.0, 2.0]}, "per_axis": 3, "h": 0.01}}}),
        json!({"experiment": "threshold", "group": h1(), "rng_seed": 20, "params": {
            "maps": cantor_maps(), "curves": [fixed([0.0; 3], [0.0, 1.0], 0.5)],
            "target_dim": 2f64.ln() / 3f64.ln(), "n_points": 100000, "scales": {"from": 0.1, "to": 1e-4, "n": 7},
            "mass": {"kind": "on_set", "n_atoms": 5000, "mass": 1.0},
            "probe_times": {"from": 0.3, "to": 1e-3, "n": 8}}}),
    ];
    let mut pass = true;
    let mut names = Vec::new();
    for cfg in cfgs {
        let name = cfg["experiment"].as_str().unwrap().to_string();
        let (_, a) = r.run_with(cfg.clone(), Some(1));
        let (_, b) = r.run_with(cfg, Some(4));
        let same = snapshot(&a) == snapshot(&b);
        pass &= same;
        names.push(if same {
            name
        } else {
            format!("{name} DIFFERS")
        });
    }
    (
        pass,
        format!("1 vs 4 threads byte-identical: {}", names.join(", ")),
    )
}

fn main() {
    type Criterion = fn(&mut Runner) -> (bool, String);
    let criteria: [(&str, Duration, Criterion); 10] = [
        ("group algebra", Duration::from_secs(30), criterion_1),
        (
            "gauge and fundamental solution",
            Duration::from_secs(120),
            criterion_2,
        ),
        ("radial flow", Duration::from_secs(180), criterion_3),
        ("polar formula", Duration::from_secs(600), criterion_4),
        ("Giraud boundedness", Duration::from_secs(900), criterion_5),
        (
            "dimension estimators",
            Duration::from_secs(300),
            criterion_6,
        ),
        ("divergence condition", Duration::from_secs(60), criterion_7),
        ("phi continuity", Duration::from_secs(120), criterion_8),
        ("threshold evidence", Duration::from_secs(1200), criterion_9),
        ("determinism", Duration::from_secs(600), criterion_10),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut runner = Runner {
        dir: tempfile::tempdir().unwrap(),
        count: 0,
    };
    let mut failed = 0;
    for (k, (name, budget, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != k + 1) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = f(&mut runner);
        let took = t.elapsed();
        let in_time = took <= *budget;
        let verdict = if pass && in_time { "PASS" } else { "FAIL" };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!(
            "{verdict} criterion {}: {name} — {detail} ({:.1}s, budget {}s{})",
            k + 1,
            took.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

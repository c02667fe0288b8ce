//! The experiments behind `carnot-potential run`. Each one reads its own
//! parameter block, runs on the core library and reports checks and tables.

use std::path::PathBuf;

use carnot_core::giraud::{
    annulus_decomposition, boundedness_scan, constant_scan, InequalityCase, QuadSpec,
};
use carnot_core::hausdorff::{
    box_count, box_count_stream, gauge_ball_chunk, ifs_attractor, phi_functional, segment_sample,
    separation, threshold_experiment, EmpiricalMeasure, IFSSystem, IfsMap, MassBuilder,
    WitnessSpec,
};
use carnot_core::polar::{
    flow, flow_coords, flow_discrepancy, flow_speed, flow_trace_coords, jacobian_det_check,
    polar_formula_check, random_regular_points, sigma_sample, FlowOptions, PolarSpec,
};
use carnot_core::potential::{
    box_grid, divergence_probe, potential_batch, superharmonicity_scan, DensityGrid,
    HorizontalCurve, RadonMeasure,
};
use carnot_core::stats::{fit_loglog, logspace};
use carnot_core::{rng, BumpSpec, CoordBox, GaugeFn, GridSpec, GroupStructure, Point};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{Experiment, ExperimentConfig};
use crate::{num, Check, Outcome, RunError, Table};

type Res<T> = Result<T, RunError>;

pub fn dispatch(config: &ExperimentConfig) -> Res<Outcome> {
    let g = config.build_group()?;
    let d = config.build_gauge(&g)?;
    let seed = if config.experiment.randomized() {
        config.seed()?
    } else {
        config.rng_seed.unwrap_or(0)
    };
    match config.experiment {
        Experiment::GroupCheck => group_check(&g, config.params()?, seed),
        Experiment::GaugeCheck => gauge_check(&d, config.params()?, seed),
        Experiment::Calibrate => calibrate(d, config.params()?),
        Experiment::FlowCheck => flow_check(&d, config.params()?, seed),
        Experiment::PolarCheck => polar_check(&d, config.params()?, seed),
        Experiment::GiraudScan => giraud_scan(&d, config.params()?, seed),
        Experiment::Boxcount => boxcount(&d, config.params()?, seed),
        Experiment::Ifs => ifs(&d, config.params()?, seed),
        Experiment::PotentialEval => potential_eval(&d, config.params()?),
        Experiment::DivergenceProbe => divergence(&d, config.params()?),
        Experiment::Threshold => threshold(&d, config.params()?, seed),
    }
}

fn validation<T>(msg: impl Into<String>) -> Res<T> {
    Err(RunError::Validation(msg.into()))
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report serializes")
}

fn row(vals: &[f64]) -> Vec<String> {
    vals.iter().map(|v| num(*v)).collect()
}

fn coords_text(x: &[f64]) -> String {
    x.iter().map(|v| num(*v)).collect::<Vec<_>>().join(" ")
}

/// Scales or times, either listed or log-spaced.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Spacing {
    List(Vec<f64>),
    Log { from: f64, to: f64, n: usize },
}

impl Spacing {
    fn values(&self) -> Res<Vec<f64>> {
        let v = match self {
            Spacing::List(v) => v.clone(),
            Spacing::Log { from, to, n } => {
                if !(*from > 0.0 && *to > 0.0) || *n < 2 {
                    return validation("log spacing needs positive ends and n >= 2");
                }
                logspace(*from, *to, *n)
            }
        };
        if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return validation("spacing values must be positive and finite");
        }
        Ok(v)
    }
}

// ---------------------------------------------------------------- group-check

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GroupCheckParams {
    samples: usize,
    scale: f64,
    tol: f64,
    htype_tol: f64,
}

impl Default for GroupCheckParams {
    fn default() -> Self {
        GroupCheckParams {
            samples: 10_000,
            scale: 1.0,
            tol: 1e-12,
            htype_tol: 1e-10,
        }
    }
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn sq(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum()
}

fn group_check(g: &GroupStructure, p: GroupCheckParams, seed: u64) -> Res<Outcome> {
    if p.samples == 0 || !(p.scale > 0.0) {
        return validation("samples and scale must be positive");
    }
    // errors are relative to the size of the quadratic terms involved
    let errs: Vec<[f64; 4]> = (0..p.samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let a = g.random_point(&mut r, p.scale).into_coords();
            let b = g.random_point(&mut r, p.scale).into_coords();
            let c = g.random_point(&mut r, p.scale).into_coords();
            let lambda = r.random_range(-2.0f64..2.0).exp();
            let e = vec![0.0; g.dim()];
            let scale = 1.0 + sq(&a) + sq(&b) + sq(&c);
            let assoc = sup(
                &g.compose_coords(&g.compose_coords(&a, &b), &c),
                &g.compose_coords(&a, &g.compose_coords(&b, &c)),
            ) / scale;
            let ident =
                sup(&g.compose_coords(&a, &e), &a).max(sup(&g.compose_coords(&e, &a), &a)) / scale;
            let ap = g.point(a.clone()).unwrap();
            let inv = g.inverse(&ap).unwrap().into_coords();
            let inverse = sup(&g.compose_coords(&a, &inv), &e)
                .max(sup(&g.compose_coords(&inv, &a), &e))
                / scale;
            let lhs = g.dilate_coords(lambda, &g.compose_coords(&a, &b));
            let rhs = g.compose_coords(&g.dilate_coords(lambda, &a), &g.dilate_coords(lambda, &b));
            let auto = sup(&lhs, &rhs) / (lambda.max(lambda * lambda) * scale);
            [assoc, ident, inverse, auto]
        })
        .collect();
    let mut max = [0.0f64; 4];
    for e in &errs {
        for k in 0..4 {
            max[k] = max[k].max(e[k]);
        }
    }
    let htype = g.htype_residual(p.samples.min(2000), rng::derive_seed(seed, 1));
    let names = [
        "associativity",
        "identity",
        "inverse",
        "dilation_automorphism",
    ];
    let mut table = Table::new("group_check", &["invariant", "max_error", "tol"]);
    let mut checks = Vec::new();
    for (n, v) in names.iter().zip(max) {
        table.push([n.to_string(), num(v), num(p.tol)]);
        checks.push(Check::at_most(*n, v, p.tol));
    }
    table.push(["htype".to_string(), num(htype), num(p.htype_tol)]);
    checks.push(Check::at_most("htype", htype, p.htype_tol));
    Ok(Outcome {
        result: json!({
            "q": g.q(),
            "n1": g.n1(),
            "n2": g.n2(),
            "samples": p.samples,
            "associativity": max[0],
            "identity": max[1],
            "inverse": max[2],
            "dilation_automorphism": max[3],
            "htype": htype,
        }),
        checks,
        tables: vec![table],
    })
}

// ---------------------------------------------------------------- gauge-check

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GaugeCheckParams {
    samples: usize,
    tol: f64,
    stencil_points: usize,
    steps: Vec<f64>,
    order: f64,
    order_tol: f64,
}

impl Default for GaugeCheckParams {
    fn default() -> Self {
        GaugeCheckParams {
            samples: 10_000,
            tol: 1e-12,
            stencil_points: 8,
            steps: vec![0.04, 0.02, 0.01, 0.005],
            order: 2.0,
            order_tol: 0.2,
        }
    }
}

fn gauge_check(d: &GaugeFn, p: GaugeCheckParams, seed: u64) -> Res<Outcome> {
    let g = d.group();
    if p.samples == 0
        || p.stencil_points == 0
        || p.steps.len() < 2
        || p.steps.iter().any(|h| !(*h > 0.0))
    {
        return validation(
            "samples and stencil_points must be positive, with at least two positive steps",
        );
    }
    let errs: Vec<(f64, f64)> = (0..p.samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let x = g.random_point(&mut r, 1.0);
            let lambda = r.random_range(-2.0f64..2.0).exp();
            let dx = d.gauge_coords(x.coords());
            if dx == 0.0 {
                return (0.0, 0.0);
            }
            let hom = (d.gauge_coords(&g.dilate_coords(lambda, x.coords())) - lambda * dx).abs()
                / (lambda * dx);
            let inv = g.inverse(&x).unwrap();
            let sym = (d.gauge_coords(inv.coords()) - dx).abs() / dx;
            (hom, sym)
        })
        .collect();
    let hom = errs.iter().map(|e| e.0).fold(0.0, f64::max);
    let sym = errs.iter().map(|e| e.1).fold(0.0, f64::max);

    // stencil residual of Delta Gamma at unit-gauge points off the pole
    let mut r = rng::stream(seed, u64::MAX);
    let mut points = Vec::new();
    while points.len() < p.stencil_points {
        let x = g.random_point(&mut r, 1.0).into_coords();
        let dx = d.gauge_coords(&x);
        if dx > 0.1 {
            points.push(g.dilate_coords(1.0 / dx, &x));
        }
    }
    let mut stencil = Table::new("stencil", &["point", "h", "residual"]);
    let mut totals = vec![0.0; p.steps.len()];
    for (k, x) in points.iter().enumerate() {
        for (j, &h) in p.steps.iter().enumerate() {
            let res = d.harmonic_residual(x, h);
            totals[j] += res;
            stencil.push([k.to_string(), num(h), num(res)]);
        }
    }
    let fit = fit_loglog(&p.steps, &totals);
    let checks = vec![
        Check::at_most("homogeneity", hom, p.tol),
        Check::at_most("symmetry", sym, p.tol),
        Check::at_most("stencil_order", (fit.slope - p.order).abs(), p.order_tol),
    ];
    Ok(Outcome {
        result: json!({
            "homogeneity": hom,
            "symmetry": sym,
            "vertical_coefficient": d.vertical_coefficient(),
            "stencil_order": fit.slope,
            "stencil_fit": to_json(&fit),
        }),
        checks,
        tables: vec![stencil],
    })
}

// ---------------------------------------------------------------- calibrate

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct CalibrateParams {
    bump: BumpSpec,
    grid: GridSpec,
    expected: Option<f64>,
    tol: Option<f64>,
}

fn calibrate(mut d: GaugeFn, p: CalibrateParams) -> Res<Outcome> {
    let rep = d.calibrate_constant(&p.bump, &p.grid)?;
    let mut levels = Table::new("calibration_levels", &["cells", "integral"]);
    for (c, v) in &rep.levels {
        levels.push([c.to_string(), num(*v)]);
    }
    let mut checks = Vec::new();
    if let Some(want) = p.expected {
        let tol = p.tol.unwrap_or(1e-3);
        checks.push(Check::at_most("c_gamma", (rep.c_gamma - want).abs(), tol));
    }
    Ok(Outcome {
        result: to_json(&rep),
        checks,
        tables: vec![levels],
    })
}

// ---------------------------------------------------------------- flow-check

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FlowCheckParams {
    points: usize,
    scale: f64,
    min_grad: f64,
    s_values: Vec<f64>,
    semigroup_pairs: Vec<(f64, f64)>,
    det_points: usize,
    det_s: f64,
    fd_step: f64,
    tol_linearity: f64,
    tol_speed: f64,
    tol_semigroup: f64,
    tol_det: f64,
}

impl Default for FlowCheckParams {
    fn default() -> Self {
        FlowCheckParams {
            points: 200,
            scale: 1.0,
            min_grad: 0.05,
            s_values: vec![0.1, 0.5, 2.0, 8.0],
            semigroup_pairs: vec![(0.3, 1.7), (2.0, 0.4), (0.7, 3.0), (5.0, 0.25)],
            det_points: 4,
            det_s: 2.0,
            fd_step: 1e-5,
            tol_linearity: 1e-8,
            tol_speed: 1e-7,
            tol_semigroup: 1e-7,
            tol_det: 1e-3,
        }
    }
}

fn flow_check(d: &GaugeFn, p: FlowCheckParams, seed: u64) -> Res<Outcome> {
    if p.points == 0 || p.s_values.is_empty() || p.s_values.iter().any(|s| !(*s > 0.0)) {
        return validation("flow-check needs points > 0 and positive s_values");
    }
    let pts = random_regular_points(d, p.points, p.scale, p.min_grad, seed);
    let per: Vec<Res<[f64; 3]>> = pts
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let opts = FlowOptions::default();
            let dg = d.gauge_coords(g.coords());
            let mut lin: f64 = 0.0;
            for &s in &p.s_values {
                let st = flow(d, g, s, &opts)?;
                lin = lin.max(((st.gauge_value - s * dg) / (s * dg)).abs());
            }
            let trace = flow_trace_coords(d, g.coords(), &p.s_values, &opts)?;
            let v0 = flow_speed(d, g.coords(), 1.0)?;
            let mut speed: f64 = 0.0;
            for (x, &s) in trace.iter().zip(&p.s_values) {
                speed = speed.max((flow_speed(d, x, s)? / v0 - 1.0).abs());
            }
            let mut semi: f64 = 0.0;
            if !p.semigroup_pairs.is_empty() {
                let tight = FlowOptions::tight();
                let (s, t) = p.semigroup_pairs[i % p.semigroup_pairs.len()];
                let inner = flow_coords(d, g.coords(), t, &tight)?;
                let twice = flow_coords(d, &inner, s, &tight)?;
                let once = flow_coords(d, g.coords(), s * t, &tight)?;
                semi = flow_discrepancy(d, &twice, &once);
            }
            Ok([lin, speed, semi])
        })
        .collect();
    let mut table = Table::new("flow_check", &["point", "linearity", "speed", "semigroup"]);
    let mut max = [0.0f64; 3];
    for (i, r) in per.into_iter().enumerate() {
        let v = r?;
        for k in 0..3 {
            max[k] = max[k].max(v[k]);
        }
        let mut cells = vec![i.to_string()];
        cells.extend(row(&v));
        table.push(cells);
    }
    let det_pts = random_regular_points(
        d,
        p.det_points,
        p.scale,
        p.min_grad.max(0.2),
        rng::derive_seed(seed, 1),
    );
    let dets: Vec<Res<f64>> = det_pts
        .par_iter()
        .map(|g| {
            Ok(jacobian_det_check(
                d,
                g,
                p.det_s,
                p.fd_step,
                &FlowOptions::tight(),
            )?)
        })
        .collect();
    let mut det_table = Table::new("jacobian", &["point", "s", "det_over_s_q"]);
    let mut det_err: f64 = 0.0;
    for (i, r) in dets.into_iter().enumerate() {
        let v = r?;
        det_err = det_err.max((v - 1.0).abs());
        det_table.push([i.to_string(), num(p.det_s), num(v)]);
    }
    let checks = vec![
        Check::at_most("gauge_linearity", max[0], p.tol_linearity),
        Check::at_most("constant_speed", max[1], p.tol_speed),
        Check::at_most("semigroup", max[2], p.tol_semigroup),
        Check::at_most("jacobian", det_err, p.tol_det),
    ];
    Ok(Outcome {
        result: json!({
            "points": pts.len(),
            "gauge_linearity": max[0],
            "constant_speed": max[1],
            "semigroup": max[2],
            "jacobian": det_err,
        }),
        checks,
        tables: vec![table, det_table],
    })
}

// ---------------------------------------------------------------- polar-check

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
#[serde(rename_all = "snake_case")]
enum TestFunction {
    /// `exp(-d^4)`
    GaugeGaussian,
    /// `exp(-|x|^2)` in coordinates; not a function of the gauge.
    Gaussian,
}

impl TestFunction {
    fn default_s_max(self) -> f64 {
        match self {
            TestFunction::GaugeGaussian => 2.2,
            TestFunction::Gaussian => 5.0,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SigmaParams {
    samples: usize,
    /// Reference value; `Q |B_1|` from the closed-form ball volume if absent.
    #[serde(default)]
    reference: Option<f64>,
    #[serde(default = "sigma_tol")]
    tol: f64,
}

fn sigma_tol() -> f64 {
    0.01
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PolarParams {
    functions: Vec<TestFunction>,
    annulus: (f64, f64),
    samples: usize,
    s_max: Option<f64>,
    s_min: f64,
    lhs_rel_tol: f64,
    tol: f64,
    sigma: Option<SigmaParams>,
}

impl Default for PolarParams {
    fn default() -> Self {
        let s = PolarSpec::default();
        PolarParams {
            functions: vec![TestFunction::GaugeGaussian, TestFunction::Gaussian],
            annulus: s.annulus,
            samples: s.samples,
            s_max: None,
            s_min: s.s_min,
            lhs_rel_tol: s.lhs_rel_tol,
            tol: s.tol,
            sigma: None,
        }
    }
}

fn polar_check(d: &GaugeFn, p: PolarParams, seed: u64) -> Res<Outcome> {
    let mut table = Table::new(
        "polar_check",
        &[
            "function",
            "lhs",
            "lhs_error",
            "rhs",
            "rhs_stderr",
            "rel_err",
            "sigma_total",
            "accepted",
        ],
    );
    let mut checks = Vec::new();
    let mut reports = Vec::new();
    for (k, &f) in p.functions.iter().enumerate() {
        let spec = PolarSpec {
            annulus: p.annulus,
            samples: p.samples,
            s_max: p.s_max.unwrap_or(f.default_s_max()),
            s_min: p.s_min,
            lhs_rel_tol: p.lhs_rel_tol,
            tol: p.tol,
        };
        let s = rng::derive_seed(seed, k as u64);
        let opts = FlowOptions::sampling();
        let rep = match f {
            TestFunction::GaugeGaussian => {
                let dd = d.clone();
                polar_formula_check(d, move |x| (-dd.gauge4_coords(x)).exp(), &spec, s, &opts)?
            }
            TestFunction::Gaussian => polar_formula_check(d, |x| (-sq(x)).exp(), &spec, s, &opts)?,
        };
        let name = serde_json::to_value(f)
            .unwrap()
            .as_str()
            .unwrap()
            .to_string();
        table.push(vec![
            name.clone(),
            num(rep.lhs),
            num(rep.lhs_error),
            num(rep.rhs),
            num(rep.rhs_stderr),
            num(rep.rel_err),
            num(rep.sigma_total),
            rep.accepted.to_string(),
        ]);
        checks.push(Check::at_most(format!("polar_{name}"), rep.rel_err, p.tol));
        reports.push(json!({"function": name, "report": to_json(&rep)}));
    }
    let mut sigma_json = serde_json::Value::Null;
    if let Some(sp) = &p.sigma {
        let sample = sigma_sample(
            d,
            p.annulus,
            sp.samples,
            rng::derive_seed(seed, 100),
            &FlowOptions::sampling(),
        )?;
        let (total, err) = sample.integrate(|_| 1.0);
        let reference = sp.reference.unwrap_or(d.group().q() * d.unit_ball_volume());
        let rel = (total / reference - 1.0).abs();
        checks.push(Check::at_most("sigma_total", rel, sp.tol));
        table.push(vec![
            "sigma".into(),
            num(reference),
            String::new(),
            num(total),
            num(err),
            num(rel),
            num(total),
            sample.accepted.to_string(),
        ]);
        sigma_json = json!({"total": total, "stderr": err, "reference": reference, "rel_err": rel});
    }
    Ok(Outcome {
        result: json!({"functions": reports, "sigma": sigma_json}),
        checks,
        tables: vec![table],
    })
}

// ---------------------------------------------------------------- giraud-scan

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadParams {
    rel_tol: f64,
    refine: f64,
    max_evals: usize,
}

impl From<&QuadParams> for QuadSpec {
    fn from(q: &QuadParams) -> Self {
        QuadSpec {
            rel_tol: q.rel_tol,
            refine: q.refine,
            max_evals: q.max_evals,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnulusParams {
    a: f64,
    b: f64,
    /// Point `p`; `y` is the identity.
    p: Vec<f64>,
    #[serde(default = "partition_tol")]
    tol: f64,
}

fn partition_tol() -> f64 {
    0.01
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GiraudParams {
    #[serde(default)]
    omega: Option<CoordBox>,
    a_grid: Vec<f64>,
    b_grid: Vec<f64>,
    #[serde(default = "pair_samples")]
    pair_samples: usize,
    #[serde(default = "sep_range")]
    sep_range: (f64, f64),
    /// Separations of the axis-pair boundedness scan; skipped if empty.
    #[serde(default)]
    separations: Option<Spacing>,
    #[serde(default = "slope_tol")]
    slope_tol: f64,
    #[serde(default)]
    quad: Option<QuadParams>,
    #[serde(default)]
    annulus: Option<AnnulusParams>,
}

fn pair_samples() -> usize {
    4
}

fn sep_range() -> (f64, f64) {
    (1e-3, 1.0)
}

fn slope_tol() -> f64 {
    0.1
}

fn giraud_scan(d: &GaugeFn, p: GiraudParams, seed: u64) -> Res<Outcome> {
    let g = d.group();
    let q = g.q();
    for &a in &p.a_grid {
        for &b in &p.b_grid {
            if !(a > 0.0 && b > 0.0 && a < q && b < q && a + b < q) {
                return validation(format!(
                    "exponents a = {a}, b = {b} violate the constraint a, b in (0, Q) and a + b < Q with Q = {q}"
                ));
            }
        }
    }
    let omega = match p.omega {
        Some(o) => o,
        None => CoordBox::new(vec![-1.0; g.dim()], vec![1.0; g.dim()])?,
    };
    let spec = p.quad.as_ref().map(QuadSpec::from).unwrap_or_default();
    let scan = constant_scan(
        d,
        &omega,
        &p.a_grid,
        &p.b_grid,
        p.pair_samples,
        p.sep_range,
        seed,
        &spec,
    )?;
    let mut rows = Table::new(
        "giraud_scan",
        &["group", "a", "b", "sep", "ratio", "converged"],
    );
    for r in &scan.rows {
        rows.push([
            r.group.clone(),
            num(r.a),
            num(r.b),
            num(r.sep),
            num(r.ratio),
            r.converged.to_string(),
        ]);
    }
    let mut cells = Table::new(
        "giraud_constants",
        &["a", "b", "c_hat", "slope", "nonconverged"],
    );
    for c in &scan.cells {
        cells.push([
            num(c.a),
            num(c.b),
            num(c.c_hat),
            num(c.slope),
            c.nonconverged.to_string(),
        ]);
    }
    let mut checks: Vec<Check> = scan
        .cells
        .iter()
        .map(|c| {
            Check::holds(
                format!("c_hat_finite_a{}_b{}", c.a, c.b),
                c.c_hat.is_finite() && c.c_hat > 0.0,
            )
        })
        .collect();
    let mut tables = vec![rows, cells];
    let mut bounded = Vec::new();
    if let Some(seps) = &p.separations {
        let seps = seps.values()?;
        let mut t = Table::new("boundedness", &["a", "b", "sep", "ratio"]);
        for &a in &p.a_grid {
            for &b in &p.b_grid {
                let rep = boundedness_scan(d, &omega, a, b, &seps, &spec)?;
                for (s, r) in rep.separations.iter().zip(&rep.ratios) {
                    t.push(row(&[a, b, *s, *r]));
                }
                checks.push(Check::at_most(
                    format!("slope_a{a}_b{b}"),
                    rep.fit.slope.abs(),
                    p.slope_tol,
                ));
                bounded.push(to_json(&rep));
            }
        }
        tables.push(t);
    }
    let mut annulus = serde_json::Value::Null;
    if let Some(ap) = &p.annulus {
        let y = g.identity();
        let pt = g.point(ap.p.clone())?;
        let case = InequalityCase::with_gauge(d.clone(), omega.clone(), ap.a, ap.b, pt, y)?;
        let rep = annulus_decomposition(&case, &spec)?;
        checks.push(Check::at_most(
            "annulus_partition",
            rep.partition_error,
            ap.tol,
        ));
        annulus = to_json(&rep);
    }
    Ok(Outcome {
        result: json!({
            "q": q,
            "omega": to_json(&omega),
            "cells": to_json(&scan.cells),
            "boundedness": bounded,
            "annulus": annulus,
        }),
        checks,
        tables,
    })
}

// ---------------------------------------------------------------- boxcount

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum SampleParams {
    Segment {
        n: usize,
        #[serde(default)]
        vertical: bool,
    },
    GaugeBall {
        chunks: usize,
        chunk_size: usize,
        #[serde(default = "one")]
        radius: f64,
    },
    /// Points, one per row, from a CSV file; a non-numeric first row is a
    /// header.
    Csv { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxcountParams {
    sample: SampleParams,
    scales: Spacing,
    #[serde(default)]
    expected: Option<f64>,
    #[serde(default)]
    tol: Option<f64>,
}

fn read_points(path: &PathBuf, dim: usize) -> Res<Vec<Vec<f64>>> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| RunError::Validation(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(|s| s.parse::<f64>()).collect();
        match parsed {
            Ok(v) if v.len() == dim => out.push(v),
            Ok(v) => {
                return validation(format!(
                    "row {} has {} coordinates, expected {dim}",
                    i + 1,
                    v.len()
                ))
            }
            Err(_) if i == 0 => continue,
            Err(e) => return validation(format!("row {}: {e}", i + 1)),
        }
    }
    Ok(out)
}

fn boxcount(d: &GaugeFn, p: BoxcountParams, seed: u64) -> Res<Outcome> {
    let g = d.group();
    let scales = p.scales.values()?;
    let rep = match &p.sample {
        SampleParams::Segment { n, vertical } => {
            box_count(d, &segment_sample(g, *n, *vertical, seed), &scales)?
        }
        SampleParams::GaugeBall {
            chunks,
            chunk_size,
            radius,
        } => box_count_stream(
            d,
            *chunks,
            |i| gauge_ball_chunk(d, *chunk_size, *radius, seed, i as u64),
            &scales,
        )?,
        SampleParams::Csv { path } => box_count(d, &read_points(path, g.dim())?, &scales)?,
    };
    let mut t = Table::new("box_counts", &["scale", "count"]);
    for (s, c) in rep.scales.iter().zip(&rep.counts) {
        t.push([num(*s), c.to_string()]);
    }
    let mut checks = Vec::new();
    if let Some(want) = p.expected {
        checks.push(Check::at_most(
            "dimension",
            (rep.slope - want).abs(),
            p.tol.unwrap_or(0.1),
        ));
    }
    Ok(Outcome {
        result: to_json(&rep),
        checks,
        tables: vec![t],
    })
}

// ---------------------------------------------------------------- ifs

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PhiParams {
    t: f64,
    points: Vec<Vec<f64>>,
    #[serde(default = "drift_tol")]
    drift_tol: f64,
}

fn drift_tol() -> f64 {
    0.1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IfsParams {
    maps: Vec<IfsMap>,
    n_points: usize,
    scales: Spacing,
    #[serde(default = "per_map")]
    separation_samples: usize,
    /// Accepted `|slope - moran|`.
    #[serde(default = "moran_tol")]
    tol: f64,
    #[serde(default)]
    write_samples: bool,
    /// Continuity check of `phi` under sample doubling.
    #[serde(default)]
    phi: Option<PhiParams>,
}

fn per_map() -> usize {
    400
}

fn moran_tol() -> f64 {
    0.05
}

fn ifs(d: &GaugeFn, p: IfsParams, seed: u64) -> Res<Outcome> {
    let g = d.group();
    let sys = IFSSystem { maps: p.maps };
    sys.validate(g)?;
    let scales = p.scales.values()?;
    let sample = ifs_attractor(g, &sys, p.n_points, seed)?;
    let rep = box_count(d, &sample.points, &scales)?;
    let sep = separation(d, &sample, sys.maps.len(), p.separation_samples);
    let moran = sys.moran_dimension();
    let mut tables = Vec::new();
    let mut t = Table::new("box_counts", &["scale", "count"]);
    for (s, c) in rep.scales.iter().zip(&rep.counts) {
        t.push([num(*s), c.to_string()]);
    }
    tables.push(t);
    if p.write_samples {
        let mut s = Table::new("samples", &["map", "coords"]);
        for (x, l) in sample.points.iter().zip(&sample.labels) {
            s.push([l.to_string(), coords_text(x)]);
        }
        tables.push(s);
    }
    let mut checks = vec![Check::at_most(
        "moran_agreement",
        (rep.slope - moran).abs(),
        p.tol,
    )];
    let mut phi_json = serde_json::Value::Null;
    if let Some(ph) = &p.phi {
        let s_dim = rep.slope;
        let half = p.n_points / 2;
        let nu_half = EmpiricalMeasure::uniform(sample.points[..half].to_vec(), 1.0, s_dim)?;
        let nu_full = EmpiricalMeasure::uniform(sample.points.clone(), 1.0, s_dim)?;
        let mut pt = Table::new("phi", &["point", "half", "full", "drift"]);
        let mut drift: f64 = 0.0;
        let mut bounded = true;
        for y in &ph.points {
            let a = phi_functional(&nu_half, d, ph.t, y)?;
            let b = phi_functional(&nu_full, d, ph.t, y)?;
            bounded &= a.is_finite() && b.is_finite();
            let dr = (a / b - 1.0).abs();
            drift = drift.max(dr);
            pt.push([coords_text(y), num(a), num(b), num(dr)]);
        }
        tables.push(pt);
        checks.push(Check::holds("phi_bounded", bounded));
        checks.push(Check::at_most("phi_drift", drift, ph.drift_tol));
        phi_json = json!({"t": ph.t, "s": s_dim, "drift": drift, "bounded": bounded});
    }
    Ok(Outcome {
        result: json!({
            "moran_dimension": moran,
            "cover": to_json(&rep),
            "separation": to_json(&sep),
            "separated": sep.is_separated(),
            "phi": phi_json,
        }),
        checks,
        tables,
    })
}

// ---------------------------------------------------------------- potential-eval

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct MeasureParams {
    atoms: Vec<(Vec<f64>, f64)>,
    density: Option<DensityGrid>,
    support_box: Option<CoordBox>,
    /// A measure file written by the library; excludes the other fields.
    path: Option<PathBuf>,
}

impl MeasureParams {
    fn build(&self, g: &GroupStructure) -> Res<RadonMeasure> {
        if let Some(path) = &self.path {
            if !self.atoms.is_empty() || self.density.is_some() || self.support_box.is_some() {
                return validation("measure.path excludes atoms, density and support_box");
            }
            return Ok(RadonMeasure::read_json(g, path)?);
        }
        let atoms = self
            .atoms
            .iter()
            .map(|(x, w)| Ok((g.point(x.clone())?, *w)))
            .collect::<Res<Vec<(Point, f64)>>>()?;
        Ok(match (&self.density, &self.support_box) {
            (None, None) => RadonMeasure::atomic(g, atoms)?,
            (Some(grid), None) if atoms.is_empty() => RadonMeasure::from_density(g, grid.clone())?,
            (density, Some(bx)) => RadonMeasure::new(g, atoms, density.clone(), bx.clone())?,
            (Some(_), None) => return validation("atoms together with a density need support_box"),
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HarmonicityParams {
    region: CoordBox,
    per_axis: usize,
    h: f64,
    #[serde(default = "harmonic_tol")]
    tol: f64,
}

fn harmonic_tol() -> f64 {
    1e-2
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PotentialParams {
    measure: MeasureParams,
    points: Vec<Vec<f64>>,
    #[serde(default)]
    harmonicity: Option<HarmonicityParams>,
}

fn potential_eval(d: &GaugeFn, p: PotentialParams) -> Res<Outcome> {
    let g = d.group();
    let mu = p.measure.build(g)?;
    for x in &p.points {
        g.check(&Point::from_coords(x.clone(), g.n1()))?;
    }
    let vals = potential_batch(d, &mu, &p.points);
    let mut t = Table::new("potentials", &["coords", "value"]);
    let mut out = Vec::new();
    for (x, v) in p.points.iter().zip(&vals) {
        t.push([coords_text(x), num(v.value())]);
        out.push(json!({"point": x, "value": if v.is_infinite() { json!("inf") } else { json!(v.value()) }}));
    }
    let mut checks = Vec::new();
    let mut harm = serde_json::Value::Null;
    if let Some(h) = &p.harmonicity {
        let grid = box_grid(&h.region, h.per_axis);
        let rep = superharmonicity_scan(d, &mu, &grid, h.h)?;
        checks.push(Check::at_most(
            "exterior_harmonicity",
            rep.max_scaled_residual,
            h.tol,
        ));
        harm = to_json(&rep);
    }
    Ok(Outcome {
        result: json!({"total_mass": mu.total_mass(), "values": out, "harmonicity": harm}),
        checks,
        tables: vec![t],
    })
}

// ---------------------------------------------------------------- divergence-probe

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DivergenceParams {
    measure: MeasureParams,
    curve: HorizontalCurve,
    #[serde(default)]
    exponent: Option<f64>,
    t_mins: Spacing,
    /// Expected log-log growth of the integral against `t_min`.
    #[serde(default)]
    expected_growth: Option<f64>,
    #[serde(default = "growth_tol")]
    growth_tol: f64,
    /// Bound on the change over the last `t_min` step.
    #[serde(default)]
    cauchy_tol: Option<f64>,
}

fn growth_tol() -> f64 {
    0.05
}

fn divergence(d: &GaugeFn, p: DivergenceParams) -> Res<Outcome> {
    let mu = p.measure.build(d.group())?;
    let rep = divergence_probe(d, &mu, &p.curve, p.exponent, &p.t_mins.values()?)?;
    let mut t = Table::new("divergence", &["t_min", "integral", "error"]);
    for ((a, b), c) in rep.t_mins.iter().zip(&rep.values).zip(&rep.errors) {
        t.push(row(&[*a, *b, *c]));
    }
    let mut checks = Vec::new();
    if let Some(want) = p.expected_growth {
        checks.push(Check::at_most(
            "growth",
            (rep.growth.slope - want).abs(),
            p.growth_tol,
        ));
    }
    if let Some(tol) = p.cauchy_tol {
        checks.push(Check::at_most("cauchy", rep.last_step_change, tol));
    }
    Ok(Outcome {
        result: to_json(&rep),
        checks,
        tables: vec![t],
    })
}

// ---------------------------------------------------------------- threshold

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdParams {
    maps: Vec<IfsMap>,
    curves: Vec<HorizontalCurve>,
    target_dim: f64,
    n_points: usize,
    scales: Spacing,
    mass: MassBuilder,
    probe_times: Spacing,
    #[serde(default)]
    witness: Option<WitnessSpec>,
}

fn threshold(d: &GaugeFn, p: ThresholdParams, seed: u64) -> Res<Outcome> {
    if d.group().n2() == 0 {
        return validation("threshold evidence needs a step-two group");
    }
    let sys = IFSSystem { maps: p.maps };
    let spec = carnot_core::hausdorff::ThresholdSpec {
        target_dim: p.target_dim,
        n_points: p.n_points,
        scales: p.scales.values()?,
        mass: p.mass,
        probe_times: p.probe_times.values()?,
        witness: p.witness,
        seed,
    };
    let rep = threshold_experiment(d, &sys, &p.curves, &spec)?;
    let mut curves = Table::new("curves", &["curve", "t", "potential"]);
    for (k, c) in rep.curves.iter().enumerate() {
        for (t, v) in c.times.iter().zip(&c.potentials) {
            curves.push([k.to_string(), num(*t), num(*v)]);
        }
    }
    let mut tables = vec![curves];
    let mut checks = Vec::new();
    if rep.below_threshold {
        checks.push(Check::holds("all_blow_up", rep.all_blow_up));
    }
    if let Some(w) = &rep.witness {
        let mut wt = Table::new(
            "witness",
            &["level", "n_nu", "n_mu", "double_integral", "estimate"],
        );
        for (k, (((a, b), c), e)) in w
            .nu_counts
            .iter()
            .zip(&w.mu_counts)
            .zip(&w.double_integrals)
            .zip(&w.estimates)
            .enumerate()
        {
            wt.push([
                k.to_string(),
                a.to_string(),
                b.to_string(),
                num(*c),
                num(*e),
            ]);
        }
        tables.push(wt);
        checks.push(Check::holds("witness_finite", w.finite));
        checks.push(Check::at_most(
            "witness_drift",
            w.drift,
            carnot_core::hausdorff::WITNESS_DRIFT,
        ));
    }
    Ok(Outcome {
        result: to_json(&rep),
        checks,
        tables,
    })
}

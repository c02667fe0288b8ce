//! Radial flow of the gauge and polar coordinates.
//!
//! The flow lines solve `d/ds phi = (d(phi)/s) grad_0 d / |grad_0 d|^2`,
//! lifted horizontally, with `phi(1, g) = g`. Integrated in `tau = ln s` the
//! field is autonomous. Along a line `d(phi(s, g)) = s d(g)`, the horizontal
//! speed is constant and `det D phi = s^Q` on polarizable (H-type) groups.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, CarnotError, Result};
use crate::gauge::GaugeFn;
use crate::group::Point;
use crate::ode::{self, OdeOptions};
use crate::quadrature;
use crate::rng;

/// Half-width of the rejected band around the characteristic set.
pub const BAND_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowOptions {
    pub rtol: f64,
    pub atol: f64,
    pub band: f64,
    /// Step budget per integration. Lines very close to `Z` wind around it
    /// quickly and run out of it.
    pub max_steps: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            rtol: 1e-9,
            atol: 1e-12,
            band: BAND_TOL,
            max_steps: 50_000,
        }
    }
}

impl FlowOptions {
    pub fn tight() -> Self {
        FlowOptions {
            rtol: 1e-12,
            atol: 1e-15,
            band: BAND_TOL,
            max_steps: 200_000,
        }
    }

    /// Looser tolerances for Monte-Carlo work, where sampling error dominates.
    pub fn sampling() -> Self {
        FlowOptions {
            rtol: 1e-7,
            atol: 1e-10,
            band: BAND_TOL,
            max_steps: 50_000,
        }
    }

    fn ode(&self) -> OdeOptions {
        OdeOptions {
            rtol: self.rtol,
            atol: self.atol,
            h_init: 1e-2,
            max_steps: self.max_steps,
            ..OdeOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowState {
    pub point: Point,
    pub s: f64,
    pub gauge_value: f64,
}

/// `Z = {e} u {grad_0 d = 0}`, widened to the band `|grad_0 d| < tol`.
#[derive(Clone, Copy, Debug)]
pub struct CharacteristicSet<'a> {
    gauge: &'a GaugeFn,
    pub tol: f64,
}

impl<'a> CharacteristicSet<'a> {
    pub fn new(gauge: &'a GaugeFn, tol: f64) -> Self {
        CharacteristicSet { gauge, tol }
    }

    /// `|grad_0 d|` is 0-homogeneous, so the band needs no normalization.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.gauge.gauge_coords(x) == 0.0 || self.gauge.horizontal_gradient_norm(x) < self.tol
    }
}

/// Flow field in `tau = ln s`.
pub fn flow_field(d: &GaugeFn, x: &[f64], band: f64) -> Result<Vec<f64>> {
    let g = d.group();
    let n1 = g.n1();
    let r = d.gauge_coords(x);
    if r == 0.0 {
        return Err(CarnotError::FlowSingularity(
            "flow reached the identity".into(),
        ));
    }
    let grad = d.horizontal_gradient_unchecked(x);
    let n2: f64 = grad.iter().map(|v| v * v).sum();
    if !(n2.sqrt() >= band) {
        return Err(CarnotError::FlowSingularity(format!(
            "flow entered the characteristic band (|grad_0 d| = {:.3e})",
            n2.sqrt()
        )));
    }
    let mut out = grad;
    out.iter_mut().for_each(|v| *v *= r / n2);
    for k in 0..g.n2() {
        let lift = 0.5 * g.bracket_k(k, &x[..n1], &out[..n1]);
        out.push(lift);
    }
    Ok(out)
}

/// `d/ds phi(s, g)` at the point `x = phi(s, g)`.
pub fn flow_velocity(d: &GaugeFn, x: &[f64], s: f64) -> Result<Vec<f64>> {
    Ok(flow_field(d, x, 0.0)?.into_iter().map(|v| v / s).collect())
}

/// Horizontal speed `|first layer of d/ds phi|`.
pub fn flow_speed(d: &GaugeFn, x: &[f64], s: f64) -> Result<f64> {
    let n1 = d.group().n1();
    Ok(flow_velocity(d, x, s)?[..n1]
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt())
}

fn check_start(d: &GaugeFn, g: &[f64], opts: &FlowOptions) -> Result<()> {
    if CharacteristicSet::new(d, opts.band).contains(g) {
        return Err(CarnotError::FlowSingularity(
            "flow started on the characteristic set".into(),
        ));
    }
    Ok(())
}

pub fn flow_coords(d: &GaugeFn, g: &[f64], s_target: f64, opts: &FlowOptions) -> Result<Vec<f64>> {
    if !(s_target > 0.0) || !s_target.is_finite() {
        return domain(format!("flow parameter must be positive, got {s_target}"));
    }
    check_start(d, g, opts)?;
    let (y, _) = ode::solve(
        |_, x| flow_field(d, x, opts.band),
        0.0,
        g,
        s_target.ln(),
        &opts.ode(),
    )?;
    Ok(y)
}

pub fn flow(d: &GaugeFn, g: &Point, s_target: f64, opts: &FlowOptions) -> Result<FlowState> {
    d.group().check(g)?;
    let y = flow_coords(d, g.coords(), s_target, opts)?;
    let gauge_value = d.gauge_coords(&y);
    Ok(FlowState {
        point: Point::from_coords(y, g.n1()),
        s: s_target,
        gauge_value,
    })
}

/// `phi(s, g)` at every `s` in `s_values` (any order), integrating outward
/// from `s = 1` in both directions.
pub fn flow_trace_coords(
    d: &GaugeFn,
    g: &[f64],
    s_values: &[f64],
    opts: &FlowOptions,
) -> Result<Vec<Vec<f64>>> {
    if s_values.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return domain("flow parameters must be positive");
    }
    check_start(d, g, opts)?;
    let mut order: Vec<usize> = (0..s_values.len()).collect();
    order.sort_by(|&a, &b| s_values[a].total_cmp(&s_values[b]));
    let split = order.partition_point(|&i| s_values[i] < 1.0);
    let mut out = vec![Vec::new(); s_values.len()];
    let field = |_: f64, x: &[f64]| flow_field(d, x, opts.band);
    let down: Vec<usize> = order[..split].iter().rev().copied().collect();
    let up = &order[split..];
    for idx in [down.as_slice(), up] {
        if idx.is_empty() {
            continue;
        }
        let taus: Vec<f64> = idx.iter().map(|&i| s_values[i].ln()).collect();
        let ys = ode::solve_at(field, 0.0, g, &taus, &opts.ode())?;
        for (&i, y) in idx.iter().zip(ys) {
            out[i] = y;
        }
    }
    Ok(out)
}

pub fn flow_trace(
    d: &GaugeFn,
    g: &Point,
    s_values: &[f64],
    opts: &FlowOptions,
) -> Result<Vec<FlowState>> {
    d.group().check(g)?;
    let ys = flow_trace_coords(d, g.coords(), s_values, opts)?;
    Ok(ys
        .into_iter()
        .zip(s_values)
        .map(|(y, &s)| FlowState {
            gauge_value: d.gauge_coords(&y),
            point: Point::from_coords(y, g.n1()),
            s,
        })
        .collect())
}

/// CSV with columns `s, x1.., gauge`.
pub fn write_flow_trace_csv(path: &Path, states: &[FlowState]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let dim = states.first().map_or(0, |s| s.point.dim());
    let cols: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    writeln!(w, "s,{},gauge", cols.join(","))?;
    for st in states {
        let coords: Vec<String> = st
            .point
            .coords()
            .iter()
            .map(|v| format!("{v:.17e}"))
            .collect();
        writeln!(
            w,
            "{:.17e},{},{:.17e}",
            st.s,
            coords.join(","),
            st.gauge_value
        )?;
    }
    Ok(())
}

/// Largest coordinate difference of `a` and `b` measured in units of the
/// dilation scale of `b` (`d(b)` on the first layer, `d(b)^2` on the
/// second). The gauge distance itself is only Hölder-1/2 in the vertical
/// coordinates, so this is the meaningful relative error for flow output.
pub fn flow_discrepancy(d: &GaugeFn, a: &[f64], b: &[f64]) -> f64 {
    let r = d.gauge_coords(b);
    let n1 = d.group().n1();
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| (x - y).abs() / if i < n1 { r } else { r * r })
        .fold(0.0, f64::max)
}

/// The unique point of `g`'s flow line on the unit gauge sphere.
pub fn project_to_sphere_coords(d: &GaugeFn, g: &[f64], opts: &FlowOptions) -> Result<Vec<f64>> {
    let r = d.gauge_coords(g);
    if r == 0.0 {
        return Err(CarnotError::FlowSingularity(
            "cannot project the identity".into(),
        ));
    }
    if r == 1.0 {
        check_start(d, g, opts)?;
        return Ok(g.to_vec());
    }
    flow_coords(d, g, 1.0 / r, opts)
}

pub fn project_to_sphere(d: &GaugeFn, g: &Point, opts: &FlowOptions) -> Result<Point> {
    d.group().check(g)?;
    Ok(Point::from_coords(
        project_to_sphere_coords(d, g.coords(), opts)?,
        g.n1(),
    ))
}

/// `det D_g phi(s, g) / s^Q` with a central finite-difference Jacobian.
pub fn jacobian_det_check(
    d: &GaugeFn,
    g: &Point,
    s: f64,
    fd_step: f64,
    opts: &FlowOptions,
) -> Result<f64> {
    let grp = d.group();
    grp.check(g)?;
    if !(fd_step > 0.0) {
        return domain("finite-difference step must be positive");
    }
    let n = grp.dim();
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut p = g.coords().to_vec();
        let mut m = g.coords().to_vec();
        p[j] += fd_step;
        m[j] -= fd_step;
        let fp = flow_coords(d, &p, s, opts).map_err(band_to_singularity)?;
        let fm = flow_coords(d, &m, s, opts).map_err(band_to_singularity)?;
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * fd_step);
        }
    }
    Ok(jac.determinant() / s.powf(grp.q()))
}

fn band_to_singularity(e: CarnotError) -> CarnotError {
    match e {
        CarnotError::FlowSingularity(m) => CarnotError::Singularity(m),
        other => other,
    }
}

/// Weighted sample of the surface measure `sigma` on `S \ Z`.
#[derive(Clone, Debug, Serialize)]
pub struct SigmaSample {
    pub points: Vec<Vec<f64>>,
    /// Common weight of every accepted sample.
    pub weight: f64,
    pub annulus: (f64, f64),
    pub drawn: usize,
    pub accepted: usize,
    pub rejected_band: usize,
}

impl SigmaSample {
    /// Estimate of `sigma(S \ Z)`.
    pub fn total(&self) -> f64 {
        self.weight * self.points.len() as f64
    }

    /// `int_S u dsigma` and its Monte-Carlo standard error; `u` is evaluated
    /// once per accepted sample.
    pub fn integrate<F: Fn(&[f64]) -> f64 + Sync>(&self, u: F) -> (f64, f64) {
        let vals: Vec<f64> = self.points.par_iter().map(|p| u(p)).collect();
        self.estimate(&vals)
    }

    /// Estimate from per-sample values (rejected draws count as zeros).
    pub fn estimate(&self, vals: &[f64]) -> (f64, f64) {
        let n = self.drawn as f64;
        let s1: f64 = vals.iter().sum();
        let s2: f64 = vals.iter().map(|v| v * v).sum();
        let mean = s1 / n;
        let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
        let scale = self.weight * n;
        (scale * mean, scale * (var / n).sqrt())
    }

    /// CSV with columns `x1.., weight`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let dim = self.points.first().map_or(0, |p| p.len());
        let cols: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "{},weight", cols.join(","))?;
        for p in &self.points {
            let c: Vec<String> = p.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{},{:.17e}", c.join(","), self.weight)?;
        }
        Ok(())
    }
}

pub fn euclidean_ball_volume(n: usize, r: f64) -> f64 {
    let h = 0.5 * n as f64;
    std::f64::consts::PI.powf(h) / statrs::function::gamma::gamma(h + 1.0) * r.powi(n as i32)
}

fn uniform_in_ball<R: Rng>(rng: &mut R, n: usize, r: f64) -> Vec<f64> {
    let dir = rng::unit_vector(rng, n);
    let rho = r * rng.random::<f64>().powf(1.0 / n as f64);
    dir.into_iter().map(|v| v * rho).collect()
}

/// Sample `sigma` by drawing Lebesgue-uniform points in the annulus
/// `a < d < b` and projecting them to `S` along the flow. The polar formula
/// applied to functions constant on flow lines gives the weight
/// `Q / (b^Q - a^Q) * vol(proposal) / n`.
pub fn sigma_sample(
    d: &GaugeFn,
    annulus: (f64, f64),
    n: usize,
    seed: u64,
    opts: &FlowOptions,
) -> Result<SigmaSample> {
    let (a, b) = annulus;
    if !(a > 0.0 && b > a && b.is_finite()) {
        return domain(format!("annulus needs 0 < a < b, got ({a}, {b})"));
    }
    if n == 0 {
        return domain("sample count must be positive");
    }
    let q = d.group().q();
    let n1 = d.group().n1();
    let n2 = d.group().n2();
    // proposal: product of Euclidean balls holding the gauge ball, which
    // wastes far fewer draws than the coordinate box
    let w = d.ball_half_widths(b);
    let r1 = w[0];
    let r2 = if n2 > 0 { w[n1] } else { 0.0 };
    let vol = euclidean_ball_volume(n1, r1)
        * if n2 > 0 {
            euclidean_ball_volume(n2, r2)
        } else {
            1.0
        };
    let band = CharacteristicSet::new(d, opts.band);
    // None: outside the annulus; Some(None): rejected near Z
    let draws: Vec<Result<Option<Option<Vec<f64>>>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let mut x = uniform_in_ball(&mut r, n1, r1);
            if n2 > 0 {
                x.extend(uniform_in_ball(&mut r, n2, r2));
            }
            let dx = d.gauge_coords(&x);
            if !(dx > a && dx < b) {
                return Ok(None);
            }
            if band.contains(&x) {
                return Ok(Some(None));
            }
            match project_to_sphere_coords(d, &x, opts) {
                Ok(p) => Ok(Some(Some(p))),
                // flow lines close to Z wind around it very fast; a start
                // point that exhausts the step budget is treated as inside
                // the band
                Err(e) if e.is_accuracy() => Ok(Some(None)),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut points = Vec::new();
    let mut rejected_band = 0;
    for r in draws {
        match r? {
            None => {}
            Some(None) => rejected_band += 1,
            Some(Some(p)) => points.push(p),
        }
    }
    let accepted = points.len();
    if ((accepted + rejected_band) as f64) < 0.01 * n as f64 {
        return Err(CarnotError::Geometry(format!(
            "annulus acceptance rate {:.4} below 1%",
            (accepted + rejected_band) as f64 / n as f64
        )));
    }
    Ok(SigmaSample {
        points,
        weight: q / (b.powf(q) - a.powf(q)) * vol / n as f64,
        annulus,
        drawn: n,
        accepted,
        rejected_band,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarSpec {
    pub annulus: (f64, f64),
    pub samples: usize,
    /// Truncation of the `s` integral and of the left-hand box, in gauge units.
    pub s_max: f64,
    pub s_min: f64,
    /// Relative tolerance of the left-hand cubature.
    pub lhs_rel_tol: f64,
    /// Relative tolerance the two sides must meet.
    pub tol: f64,
}

impl Default for PolarSpec {
    fn default() -> Self {
        PolarSpec {
            annulus: (1.0, 2.0),
            samples: 40_000,
            s_max: 3.0,
            s_min: 0.05,
            lhs_rel_tol: 1e-4,
            tol: 0.02,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PolarReport {
    pub lhs: f64,
    /// Estimated absolute error of the left-hand side.
    pub lhs_error: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    pub rel_err: f64,
    pub sigma_total: f64,
    pub accepted: usize,
    /// Samples lost to the characteristic band, including flow lines that
    /// exhausted the step budget.
    pub rejected_band: usize,
    pub passed: bool,
}

/// `int u dx` over the box holding the gauge ball of radius `s_max`, by
/// adaptive Genz–Malik cubature.
pub fn box_integral<F: Fn(&[f64]) -> f64>(
    d: &GaugeFn,
    u: &F,
    s_max: f64,
    rel_tol: f64,
) -> quadrature::QuadResult {
    let hi = d.ball_half_widths(s_max);
    let lo: Vec<f64> = hi.iter().map(|v| -v).collect();
    quadrature::cubature(
        u,
        &lo,
        &hi,
        quadrature::Tolerance::new(0.0, rel_tol, 50_000_000),
    )
}

/// `int_{s_min}^{s_max} u(phi(s, v)) s^{Q-1} ds`, carried as an extra ODE
/// component `u(x) e^{Q tau}` alongside the flow in `tau = ln s`.
pub fn radial_line_integral<F: Fn(&[f64]) -> f64>(
    d: &GaugeFn,
    v: &[f64],
    u: &F,
    s_min: f64,
    s_max: f64,
    opts: &FlowOptions,
) -> Result<f64> {
    if !(s_min > 0.0 && s_max > s_min) {
        return domain("radial integral needs 0 < s_min < s_max");
    }
    check_start(d, v, opts)?;
    let q = d.group().q();
    let n = v.len();
    let field = |tau: f64, y: &[f64]| -> Result<Vec<f64>> {
        let mut out = flow_field(d, &y[..n], opts.band)?;
        out.push(u(&y[..n]) * (q * tau).exp());
        Ok(out)
    };
    let mut y0 = v.to_vec();
    y0.push(0.0);
    let ode_opts = OdeOptions {
        atol: opts.atol.max(1e-14),
        ..opts.ode()
    };
    // the line is known at s = 1; I(tau) = int_0^tau, signed
    let at = |tau: f64| -> Result<f64> {
        if tau == 0.0 {
            return Ok(0.0);
        }
        Ok(ode::solve(field, 0.0, &y0, tau, &ode_opts)?.0[n])
    };
    Ok(at(s_max.ln())? - at(s_min.ln())?)
}

/// Compare `int u dx` with `int_{s_min}^{s_max} int_S u(phi(s, v)) s^{Q-1}
/// dsigma ds` (sigma sample plus one augmented flow per sample).
pub fn polar_formula_check<F>(
    d: &GaugeFn,
    u: F,
    spec: &PolarSpec,
    seed: u64,
    opts: &FlowOptions,
) -> Result<PolarReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let left = box_integral(d, &u, spec.s_max, spec.lhs_rel_tol);
    let lhs = left.value;
    let lhs_error = left.error;
    if !left.converged && lhs_error > 0.25 * spec.tol * lhs.abs() {
        return Err(CarnotError::Accuracy(format!(
            "left-hand cubature stopped at estimated error {lhs_error:.2e}"
        )));
    }

    let sigma = sigma_sample(d, spec.annulus, spec.samples, seed, opts)?;
    let line: Vec<Result<Option<f64>>> = sigma
        .points
        .par_iter()
        .map(
            |v| match radial_line_integral(d, v, &u, spec.s_min, spec.s_max, opts) {
                Ok(x) => Ok(Some(x)),
                Err(e) if e.is_accuracy() => Ok(None),
                Err(e) => Err(e),
            },
        )
        .collect();
    let mut vals = Vec::with_capacity(line.len());
    let mut dropped = 0;
    for v in line {
        match v? {
            Some(v) => vals.push(v),
            None => dropped += 1,
        }
    }
    let (rhs, rhs_stderr) = sigma.estimate(&vals);
    let rel_err = if lhs == 0.0 && rhs == 0.0 {
        0.0
    } else {
        ((rhs - lhs) / lhs.abs().max(rhs.abs())).abs()
    };
    Ok(PolarReport {
        lhs,
        lhs_error,
        rhs,
        rhs_stderr,
        rel_err,
        sigma_total: sigma.total(),
        accepted: sigma.accepted,
        rejected_band: sigma.rejected_band + dropped,
        passed: rel_err <= spec.tol,
    })
}

/// `sigma(S) * int_0^s_max f(s) s^{Q-1} ds` for a function of the gauge
/// alone.
pub fn radial_reduction<F: Fn(f64) -> f64>(sigma_total: f64, q: f64, f: F, s_max: f64) -> f64 {
    let tol = quadrature::Tolerance::new(1e-14, 1e-12, 100_000);
    sigma_total * quadrature::integrate(|s| f(s) * s.powf(q - 1.0), 0.0, s_max, tol).value
}

/// Random start points off the characteristic band.
pub fn random_regular_points(
    d: &GaugeFn,
    n: usize,
    scale: f64,
    min_grad: f64,
    seed: u64,
) -> Vec<Point> {
    let mut out = Vec::with_capacity(n);
    let mut i = 0u64;
    while out.len() < n {
        let mut r = rng::stream(seed, i);
        i += 1;
        let p = d.group().random_point(&mut r, scale);
        let _: f64 = r.random();
        if d.horizontal_gradient_norm(p.coords()) >= min_grad {
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupStructure;
    use std::f64::consts::PI;

    fn gauge(g: GroupStructure) -> GaugeFn {
        GaugeFn::new(&g)
    }

    #[test]
    fn horizontal_ray_is_a_dilation() {
        let d = gauge(GroupStructure::heisenberg(1).unwrap());
        let g = d.group().point(vec![0.6, -0.8, 0.0]).unwrap();
        for s in [0.1, 0.5, 2.0, 7.0] {
            let st = flow(&d, &g, s, &FlowOptions::default()).unwrap();
            let expect = [0.6 * s, -0.8 * s, 0.0];
            for (a, b) in st.point.coords().iter().zip(expect) {
                assert!((a - b).abs() < 1e-9 * s);
            }
        }
        let p = project_to_sphere(
            &d,
            &d.group().point(vec![2.0, 0.0, 0.0]).unwrap(),
            &FlowOptions::default(),
        )
        .unwrap();
        assert!(
            (p.coords()[0] - 1.0).abs() < 1e-9
                && p.coords()[1].abs() < 1e-12
                && p.coords()[2].abs() < 1e-12
        );
    }

    #[test]
    fn characteristic_classification() {
        let d = gauge(GroupStructure::heisenberg(1).unwrap());
        let z = CharacteristicSet::new(&d, BAND_TOL);
        assert!(z.contains(&[0.0, 0.0, 0.3]));
        assert!(z.contains(&[0.0; 3]));
        assert!(!z.contains(&[0.2, 0.0, 0.0]));
        assert!(!z.contains(&[0.2, 0.1, 0.5]));
        assert!(matches!(
            flow_coords(&d, &[0.0, 0.0, 1.0], 2.0, &FlowOptions::default()),
            Err(CarnotError::FlowSingularity(_))
        ));
        assert!(flow_coords(&d, &[1.0, 0.0, 0.0], 0.0, &FlowOptions::default()).is_err());
    }

    #[test]
    fn gauge_is_linear_along_flow() {
        for grp in [
            GroupStructure::heisenberg(1).unwrap(),
            GroupStructure::quaternionic(1).unwrap(),
        ] {
            let d = gauge(grp);
            let starts = random_regular_points(&d, 300, 1.0, 0.1, 61);
            for (i, g) in starts.iter().enumerate() {
                let s = 0.1 * 100f64.powf(i as f64 / 299.0);
                let st = flow(&d, g, s, &FlowOptions::default()).unwrap();
                let expect = s * d.gauge_coords(g.coords());
                assert!(
                    ((st.gauge_value - expect) / expect).abs() < 1e-8,
                    "{}",
                    st.gauge_value / expect - 1.0
                );
            }
        }
    }

    #[test]
    fn projection_lands_on_sphere_and_fixes_it() {
        let d = gauge(GroupStructure::heisenberg(2).unwrap());
        for g in random_regular_points(&d, 50, 2.0, 0.1, 3) {
            let p = project_to_sphere_coords(&d, g.coords(), &FlowOptions::default()).unwrap();
            assert!((d.gauge_coords(&p) - 1.0).abs() < 1e-8);
            let again = project_to_sphere_coords(&d, &p, &FlowOptions::default()).unwrap();
            let err: f64 = again
                .iter()
                .zip(&p)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-10);
        }
    }

    /// On H-type groups with `J_z^2 = -|z|^2` the flow integrates in closed
    /// form: `t = t0 e^{2 tau}`, `x1 = e^tau exp(4 tau J_{t0} / |x1_0|^2) x1_0`.
    fn htype_flow_oracle(grp: &GroupStructure, g: &[f64], s: f64) -> Vec<f64> {
        let n1 = grp.n1();
        let tau = s.ln();
        let x1 = &g[..n1];
        let t = &g[n1..];
        let tn = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h2: f64 = x1.iter().map(|v| v * v).sum();
        let mut jx = vec![0.0; n1];
        let mut tmp = vec![0.0; n1];
        for (k, tk) in t.iter().enumerate() {
            grp.apply_j(k, x1, &mut tmp);
            for (a, b) in jx.iter_mut().zip(&tmp) {
                *a += tk / tn.max(1e-300) * b;
            }
        }
        let theta = 4.0 * tau * tn / h2;
        let mut out: Vec<f64> = x1
            .iter()
            .zip(&jx)
            .map(|(x, j)| s * (theta.cos() * x + theta.sin() * j))
            .collect();
        out.extend(t.iter().map(|v| v * s * s));
        out
    }

    #[test]
    fn flow_matches_closed_form_on_htype_groups() {
        for grp in [
            GroupStructure::heisenberg(1).unwrap(),
            GroupStructure::heisenberg(2).unwrap(),
            GroupStructure::quaternionic(1).unwrap(),
            GroupStructure::octonionic().unwrap(),
        ] {
            let d = gauge(grp.clone());
            for (i, g) in random_regular_points(&d, 40, 1.0, 0.2, 9)
                .iter()
                .enumerate()
            {
                let s = [0.2, 0.7, 1.9, 4.5][i % 4];
                let num = flow_coords(&d, g.coords(), s, &FlowOptions::tight()).unwrap();
                let exact = htype_flow_oracle(&grp, g.coords(), s);
                // coordinate error on the dilation-normalized scale
                let diff = grp.dilate_coords(
                    1.0 / s,
                    &num.iter()
                        .zip(&exact)
                        .map(|(a, b)| a - b)
                        .collect::<Vec<_>>(),
                );
                let err = diff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(err < 1e-9, "{} {err:e}", grp.describe());
            }
        }
    }

    #[test]
    fn speed_is_constant_and_velocity_horizontal() {
        let d = gauge(GroupStructure::quaternionic(1).unwrap());
        let n1 = d.group().n1();
        for g in random_regular_points(&d, 20, 1.0, 0.1, 12) {
            let ss = [0.3, 0.8, 1.0, 2.5, 6.0];
            let ys = flow_trace_coords(&d, g.coords(), &ss, &FlowOptions::default()).unwrap();
            let v0 = flow_speed(&d, g.coords(), 1.0).unwrap();
            for (y, s) in ys.iter().zip(ss) {
                let v = flow_speed(&d, y, s).unwrap();
                assert!((v / v0 - 1.0).abs() < 1e-7);
                let vel = flow_velocity(&d, y, s).unwrap();
                let lift = d.group().horizontal_lift(&y[..n1], &vel[..n1]);
                for (a, b) in vel[n1..].iter().zip(&lift) {
                    assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
                }
            }
        }
    }

    #[test]
    fn euclidean_flow_is_scaling() {
        let d = gauge(GroupStructure::euclidean(3).unwrap());
        let g = d.group().point(vec![0.3, -0.5, 0.2]).unwrap();
        let det = jacobian_det_check(&d, &g, 3.0, 1e-5, &FlowOptions::tight()).unwrap();
        assert!((det - 1.0).abs() < 1e-6, "{det}");
        let det1 = jacobian_det_check(&d, &g, 1.0, 1e-5, &FlowOptions::tight()).unwrap();
        assert!((det1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn trace_matches_single_flows_and_writes_csv() {
        let d = gauge(GroupStructure::heisenberg(1).unwrap());
        let g = d.group().point(vec![0.4, 0.3, 0.2]).unwrap();
        let ss = [2.0, 0.25, 1.0, 0.5, 4.0];
        let trace = flow_trace(&d, &g, &ss, &FlowOptions::tight()).unwrap();
        for st in &trace {
            let single = flow(&d, &g, st.s, &FlowOptions::tight()).unwrap();
            assert!(st.point.max_abs_diff(&single.point) < 1e-9);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_flow_trace_csv(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("s,x1,x2,x3,gauge\n"));
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn sigma_of_euclidean_sphere() {
        let d = gauge(GroupStructure::euclidean(3).unwrap());
        let sig = sigma_sample(&d, (1.0, 2.0), 200_000, 5, &FlowOptions::default()).unwrap();
        assert!(
            (sig.total() / (4.0 * PI) - 1.0).abs() < 0.01,
            "{}",
            sig.total()
        );
        // half-space through e
        let (half, _) = sig.integrate(|p| if p[0] > 0.0 { 1.0 } else { 0.0 });
        assert!((half / sig.total() - 0.5).abs() < 0.01);
    }

    #[test]
    fn sigma_rejects_bad_annulus() {
        let d = gauge(GroupStructure::heisenberg(1).unwrap());
        assert!(sigma_sample(&d, (2.0, 1.0), 10, 1, &FlowOptions::default()).is_err());
        // a hair-thin annulus is a geometry error
        assert!(matches!(
            sigma_sample(&d, (1.0, 1.0001), 1000, 1, &FlowOptions::default()),
            Err(CarnotError::Geometry(_))
        ));
    }
}

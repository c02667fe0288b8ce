//! Giraud-type convolution bounds
//!
//! ```text
//! int_Omega d(x^{-1} y)^{a-Q} d(p^{-1} x)^{b-Q} dx <= C d(p^{-1} y)^{a+b-Q},   a, b in (0, Q), a + b < Q.
//! ```
//!
//! The integral is split by smooth cutoffs `eta(d / rho)` about `y` and `p`.
//! The two singular pieces are computed in gauge-polar charts with the radial
//! substitution that absorbs the pole, and the bounded remainder by adaptive
//! cubature over the box. Convergence is certified by two tolerance levels
//! agreeing within 1%.

use rayon::prelude::*;
use serde::Serialize;

use crate::chart::{accumulate, chart_integral, PolarChart, Radial};
use crate::error::{domain, CarnotError, Result};
use crate::gauge::{GaugeBall, GaugeFn};
use crate::group::{CoordBox, GroupStructure, Point};
use crate::quadrature::{cubature_regions, partition_toward, QuadResult, Tolerance};
use crate::rng;
use crate::stats::{fit_line, logspace, LineFit};

/// `eps` in the exterior-piece bound.
pub const EXTERIOR_EPSILON: f64 = 0.1;
/// Two refinement levels must agree within this fraction.
pub const LEVEL_AGREEMENT: f64 = 0.01;

/// Smooth cutoff: 1 on `[0, 1/2]`, 0 on `[1, inf)`.
pub fn cutoff(t: f64) -> f64 {
    if t <= 0.5 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        let h = |s: f64| (-1.0 / s).exp();
        let a = h(1.0 - t);
        a / (a + h(t - 0.5))
    }
}

/// One instance of the inequality. `omega` is the box `frame o [lo, hi]`;
/// all integration happens in frame coordinates so that left translations
/// of the whole configuration are exact.
#[derive(Clone, Debug)]
pub struct InequalityCase {
    gauge: GaugeFn,
    omega: CoordBox,
    frame: Point,
    a: f64,
    b: f64,
    p: Point,
    y: Point,
    // p and y in frame coordinates
    p_local: Vec<f64>,
    y_local: Vec<f64>,
}

impl InequalityCase {
    pub fn new(
        group: &GroupStructure,
        omega: CoordBox,
        a: f64,
        b: f64,
        p: Point,
        y: Point,
    ) -> Result<Self> {
        Self::with_gauge(GaugeFn::new(group), omega, a, b, p, y)
    }

    pub fn with_gauge(
        gauge: GaugeFn,
        omega: CoordBox,
        a: f64,
        b: f64,
        p: Point,
        y: Point,
    ) -> Result<Self> {
        let frame = gauge.group().identity();
        Self::framed(gauge, frame, omega, a, b, p, y)
    }

    /// `Omega = frame o omega`.
    pub fn framed(
        gauge: GaugeFn,
        frame: Point,
        omega: CoordBox,
        a: f64,
        b: f64,
        p: Point,
        y: Point,
    ) -> Result<Self> {
        let g = gauge.group();
        let q = g.q();
        check_exponents(q, a, b)?;
        for x in [&frame, &p, &y] {
            g.check(x)?;
        }
        if omega.dim() != g.dim() {
            return Err(CarnotError::Dimension {
                expected: g.dim(),
                got: omega.dim(),
            });
        }
        if p.max_abs_diff(&y) == 0.0 {
            return domain("p and y must differ");
        }
        let p_local = g.relative_coords(frame.coords(), p.coords());
        let y_local = g.relative_coords(frame.coords(), y.coords());
        Ok(InequalityCase {
            gauge,
            omega,
            frame,
            a,
            b,
            p,
            y,
            p_local,
            y_local,
        })
    }

    pub fn gauge(&self) -> &GaugeFn {
        &self.gauge
    }

    pub fn exponents(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn p(&self) -> &Point {
        &self.p
    }

    pub fn y(&self) -> &Point {
        &self.y
    }

    pub fn omega(&self) -> &CoordBox {
        &self.omega
    }

    /// `d(p^{-1} o y)`.
    pub fn separation(&self) -> f64 {
        self.gauge.distance_coords(&self.y_local, &self.p_local)
    }

    /// Left-translate `Omega`, `p` and `y` by `h`.
    pub fn translated(&self, h: &Point) -> Result<Self> {
        let g = self.gauge.group();
        Self::framed(
            self.gauge.clone(),
            g.compose(h, &self.frame)?,
            self.omega.clone(),
            self.a,
            self.b,
            g.compose(h, &self.p)?,
            g.compose(h, &self.y)?,
        )
    }

    /// Apply `delta_lambda` to `Omega`, `p` and `y`.
    pub fn dilated(&self, lambda: f64) -> Result<Self> {
        let g = self.gauge.group();
        let lo = g.dilate_coords(lambda, &self.omega.lo);
        let hi = g.dilate_coords(lambda, &self.omega.hi);
        Self::framed(
            self.gauge.clone(),
            g.dilate(lambda, &self.frame)?,
            CoordBox::new(lo, hi)?,
            self.a,
            self.b,
            g.dilate(lambda, &self.p)?,
            g.dilate(lambda, &self.y)?,
        )
    }

    /// The integrand at frame coordinates `z`.
    fn kernel(&self, z: &[f64]) -> f64 {
        let q = self.gauge.group().q();
        let dy = self.gauge.distance_coords(&self.y_local, z);
        let dp = self.gauge.distance_coords(z, &self.p_local);
        dy.powf(self.a - q) * dp.powf(self.b - q)
    }

    /// Largest gauge radius about the frame point `c` whose ball stays in
    /// the box, capped at `cap`; zero if `c` is not interior.
    fn interior_radius(&self, c: &[f64], cap: f64) -> f64 {
        if !strictly_inside(&self.omega, c) {
            return 0.0;
        }
        let g = self.gauge.group();
        let centre = g.point(c.to_vec()).expect("frame coordinates conform");
        let fits = |r: f64| {
            let bb = GaugeBall {
                center: centre.clone(),
                radius: r,
            }
            .bounding_box(&self.gauge);
            bb.lo.iter().zip(&self.omega.lo).all(|(a, b)| a >= b)
                && bb.hi.iter().zip(&self.omega.hi).all(|(a, b)| a <= b)
        };
        if fits(cap) {
            return cap;
        }
        let (mut lo, mut hi) = (0.0, cap);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if fits(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn ball_inside(&self, c: &[f64], r: f64) -> bool {
        self.interior_radius(c, r) >= r
    }

    /// A partition of `Omega` refined toward the pair `{p, y}`, so that
    /// cubature sees the singular cluster however small the separation.
    fn regions(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let g = self.gauge.group();
        let sep = self.separation();
        let mut lo = self.omega.hi.clone();
        let mut hi = self.omega.lo.clone();
        for c in [&self.p_local, &self.y_local] {
            let bb = GaugeBall {
                center: g.point(c.clone()).expect("frame coordinates conform"),
                radius: sep,
            }
            .bounding_box(&self.gauge);
            for i in 0..lo.len() {
                lo[i] = lo[i].min(bb.lo[i]).max(self.omega.lo[i]);
                hi[i] = hi[i].max(bb.hi[i]).min(self.omega.hi[i]);
            }
        }
        if lo.iter().zip(&hi).any(|(a, b)| a >= b) {
            return vec![(self.omega.lo.clone(), self.omega.hi.clone())];
        }
        partition_toward(&self.omega.lo, &self.omega.hi, &lo, &hi, 2.0)
    }
}

fn strictly_inside(b: &CoordBox, x: &[f64]) -> bool {
    x.iter()
        .zip(b.lo.iter().zip(&b.hi))
        .all(|(v, (lo, hi))| v > lo && v < hi)
}

fn check_exponents(q: f64, a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && a < q && b > 0.0 && b < q) {
        return domain(format!(
            "exponents must lie in (0, Q) = (0, {q}); got a = {a}, b = {b}"
        ));
    }
    if a + b >= q {
        return domain(format!(
            "the inequality needs a + b < Q; got a + b = {} >= Q = {q}",
            a + b
        ));
    }
    Ok(())
}

/// Tolerances for [`kernel_integral`]; the fine level uses `rel_tol / refine`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct QuadSpec {
    pub rel_tol: f64,
    pub refine: f64,
    pub max_evals: usize,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec {
            rel_tol: 2e-3,
            refine: 4.0,
            max_evals: 4_000_000,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelIntegral {
    pub value: f64,
    pub coarse: f64,
    /// Pieces at the fine level: bounded remainder, and the parts near `y`
    /// and near `p`.
    pub regular: f64,
    pub near_y: f64,
    pub near_p: f64,
    pub error: f64,
    pub evals: usize,
    pub converged: bool,
}

fn level(
    case: &InequalityCase,
    chart: &PolarChart,
    rel: f64,
    max_evals: usize,
) -> Result<[QuadResult; 3]> {
    let sep = case.separation();
    // disjoint cutoff balls: the Kaplan gauge satisfies the triangle inequality
    let cap = sep / 3.0;
    let rho_y = case.interior_radius(&case.y_local, cap);
    let rho_p = case.interior_radius(&case.p_local, cap);
    let tol = Tolerance::new(0.0, rel, max_evals);
    let chi = |z: &[f64], c: &[f64], rho: f64| {
        if rho > 0.0 {
            cutoff(case.gauge.distance_coords(z, c) / rho)
        } else {
            0.0
        }
    };
    let mut near = Vec::with_capacity(2);
    for (c, rho, e) in [
        (&case.y_local, rho_y, case.a),
        (&case.p_local, rho_p, case.b),
    ] {
        if rho > 0.0 {
            let r = chart_integral(
                &case.gauge,
                chart,
                c,
                (0.0, rho),
                Radial::Power(e),
                |z| chi(z, c, rho) * case.kernel(z),
                tol,
            )?;
            near.push(r);
        } else if case.omega.contains(c) {
            return domain("singular point on the boundary of Omega");
        } else {
            near.push(QuadResult {
                value: 0.0,
                error: 0.0,
                evals: 0,
                converged: true,
            });
        }
    }
    let reg = cubature_regions(
        |z| {
            let w = 1.0 - chi(z, &case.y_local, rho_y) - chi(z, &case.p_local, rho_p);
            if w <= 0.0 {
                0.0
            } else {
                w * case.kernel(z)
            }
        },
        &case.regions(),
        tol,
    );
    Ok([reg, near.remove(0), near.remove(0)])
}

/// `int_Omega d(x^{-1} y)^{a-Q} d(p^{-1} x)^{b-Q} dx`, certified by two
/// tolerance levels agreeing within 1%.
pub fn kernel_integral(case: &InequalityCase, spec: &QuadSpec) -> Result<KernelIntegral> {
    let chart = PolarChart::new(&case.gauge)?;
    let coarse = level(case, &chart, spec.rel_tol, spec.max_evals)?;
    let fine = level(case, &chart, spec.rel_tol / spec.refine, spec.max_evals)?;
    let sum = |l: &[QuadResult; 3]| l.iter().map(|r| r.value).sum::<f64>();
    let (vc, vf) = (sum(&coarse), sum(&fine));
    let mut total = QuadResult {
        value: 0.0,
        error: 0.0,
        evals: 0,
        converged: true,
    };
    for r in coarse.iter().chain(fine.iter()) {
        accumulate(&mut total, r);
    }
    let agree = (vc - vf).abs() <= LEVEL_AGREEMENT * vf.abs();
    if !agree {
        return Err(CarnotError::Accuracy(format!(
            "kernel integral levels disagree: {vc:.6e} vs {vf:.6e}"
        )));
    }
    Ok(KernelIntegral {
        value: vf,
        coarse: vc,
        regular: fine[0].value,
        near_y: fine[1].value,
        near_p: fine[2].value,
        error: (vc - vf).abs().max(fine.iter().map(|r| r.error).sum()),
        evals: total.evals,
        converged: fine.iter().all(|r| r.converged),
    })
}

/// `kernel_integral * d(p^{-1} y)^{Q-(a+b)}`, the quantity bounded by `C`.
pub fn giraud_ratio(case: &InequalityCase, spec: &QuadSpec) -> Result<f64> {
    let k = kernel_integral(case, spec)?;
    let q = case.gauge.group().q();
    Ok(k.value * case.separation().powf(q - case.a - case.b))
}

/// The four regions from the classical proof, with `y` at the identity:
/// `I = B(p, |p|/2)`, `II1 = B(0, |p|/2)`, `II2` the rest of `B(p, 3|p|)` and
/// `III` the exterior, all intersected with `Omega`.
#[derive(Clone, Debug, Serialize)]
pub struct AnnulusReport {
    pub p_gauge: f64,
    pub i: f64,
    pub ii1: f64,
    pub ii2: f64,
    pub iii: f64,
    pub sum: f64,
    pub whole: f64,
    pub partition_error: f64,
    /// Explicit constants `C` with `piece <= C |p|^{a+b-Q}` from the proof,
    /// in the order I, II1, II2, III (the last with `eps = 0.1`).
    pub constants: [f64; 4],
    pub bounds_hold: [bool; 4],
    /// Whether each ball region lies fully inside `Omega` (I, II1, B(p, 3|p|)).
    pub coverage: [bool; 3],
    pub converged: bool,
    pub epsilon: f64,
}

pub fn annulus_decomposition(case: &InequalityCase, spec: &QuadSpec) -> Result<AnnulusReport> {
    let g = case.gauge.group();
    if case.y_local.iter().any(|v| *v != 0.0) {
        return domain("annulus decomposition is stated with y at the identity of the frame");
    }
    let q = g.q();
    let (a, b) = (case.a, case.b);
    let pg = case.gauge.gauge_coords(&case.p_local);
    let chart = PolarChart::new(&case.gauge)?;
    let tol = Tolerance::new(0.0, spec.rel_tol, spec.max_evals * 4);
    let origin = vec![0.0; g.dim()];
    let in_omega = |z: &[f64]| case.omega.contains(z);
    let p = &case.p_local;

    let i = chart_integral(
        &case.gauge,
        &chart,
        p,
        (0.0, 0.5 * pg),
        Radial::Power(b),
        |z| if in_omega(z) { case.kernel(z) } else { 0.0 },
        tol,
    )?;
    let ii1 = chart_integral(
        &case.gauge,
        &chart,
        &origin,
        (0.0, 0.5 * pg),
        Radial::Power(a),
        |z| if in_omega(z) { case.kernel(z) } else { 0.0 },
        tol,
    )?;
    let ii2 = chart_integral(
        &case.gauge,
        &chart,
        p,
        (0.5 * pg, 3.0 * pg),
        Radial::Linear,
        |z| {
            if in_omega(z) && case.gauge.gauge_coords(z) >= 0.5 * pg {
                case.kernel(z)
            } else {
                0.0
            }
        },
        tol,
    )?;
    let iii = cubature_regions(
        |z| {
            if case.gauge.distance_coords(z, p) >= 3.0 * pg {
                case.kernel(z)
            } else {
                0.0
            }
        },
        &case.regions(),
        tol,
    );
    let whole = kernel_integral(case, spec)?;
    let sum = i.value + ii1.value + ii2.value + iii.value;
    let vol = case.gauge.unit_ball_volume();
    let eps = EXTERIOR_EPSILON;
    let constants = [
        2f64.powf(q - a - b) * q * vol / b,
        2f64.powf(q - a - b) * q * vol / a,
        2f64.powf(2.0 * q - a - b) * 3f64.powf(q) * vol,
        1.5f64.powf(q - a) * q * vol * 3f64.powf(a + b - q) / eps,
    ];
    let scale = pg.powf(a + b - q);
    let pieces = [i.value, ii1.value, ii2.value, iii.value];
    let mut bounds_hold = [false; 4];
    for k in 0..4 {
        bounds_hold[k] = pieces[k].is_finite() && pieces[k] <= constants[k] * scale;
    }
    Ok(AnnulusReport {
        p_gauge: pg,
        i: i.value,
        ii1: ii1.value,
        ii2: ii2.value,
        iii: iii.value,
        sum,
        whole: whole.value,
        partition_error: (sum - whole.value).abs() / whole.value,
        constants,
        bounds_hold,
        coverage: [
            case.ball_inside(p, 0.5 * pg),
            case.ball_inside(&origin, 0.5 * pg),
            case.ball_inside(p, 3.0 * pg),
        ],
        converged: i.converged
            && ii1.converged
            && ii2.converged
            && iii.converged
            && whole.converged,
        epsilon: eps,
    })
}

/// Place `y = c o (-s/2 e1)` and `p = c o (s/2 e1)`, so that `d(p^{-1} y) = s`.
pub fn axis_pair(g: &GroupStructure, center: &[f64], s: f64) -> (Point, Point) {
    let mut h = vec![0.0; g.dim()];
    h[0] = 0.5 * s;
    let p = g.compose_coords(center, &h);
    h[0] = -0.5 * s;
    let y = g.compose_coords(center, &h);
    (g.point(p).unwrap(), g.point(y).unwrap())
}

/// Ratios along log-spaced separations and the slope of `log ratio` against
/// `log separation`, the checkable form of "there exists C".
#[derive(Clone, Debug, Serialize)]
pub struct BoundednessReport {
    pub a: f64,
    pub b: f64,
    pub separations: Vec<f64>,
    pub ratios: Vec<f64>,
    pub fit: LineFit,
    pub max_ratio: f64,
    pub min_ratio: f64,
}

/// Boundedness protocol with pairs on the first axis through the centre of
/// `omega`.
pub fn boundedness_scan(
    gauge: &GaugeFn,
    omega: &CoordBox,
    a: f64,
    b: f64,
    separations: &[f64],
    spec: &QuadSpec,
) -> Result<BoundednessReport> {
    check_exponents(gauge.group().q(), a, b)?;
    if separations.len() < 3 {
        return domain("boundedness scan needs at least three separations");
    }
    let c = omega.center();
    let ratios: Vec<Result<f64>> = separations
        .par_iter()
        .map(|&s| {
            let (p, y) = axis_pair(gauge.group(), &c, s);
            let case = InequalityCase::with_gauge(gauge.clone(), omega.clone(), a, b, p, y)?;
            giraud_ratio(&case, spec)
        })
        .collect();
    let ratios = ratios.into_iter().collect::<Result<Vec<_>>>()?;
    let ls: Vec<f64> = separations.iter().map(|v| v.ln()).collect();
    let lr: Vec<f64> = ratios.iter().map(|v| v.ln()).collect();
    Ok(BoundednessReport {
        a,
        b,
        separations: separations.to_vec(),
        fit: fit_line(&ls, &lr),
        max_ratio: ratios.iter().cloned().fold(f64::MIN, f64::max),
        min_ratio: ratios.iter().cloned().fold(f64::MAX, f64::min),
        ratios,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanRow {
    pub group: String,
    pub a: f64,
    pub b: f64,
    pub sep: f64,
    pub ratio: f64,
    pub converged: bool,
    pub p: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanCell {
    pub a: f64,
    pub b: f64,
    /// Empirical `C`: the largest ratio seen.
    pub c_hat: f64,
    pub slope: f64,
    pub r2: f64,
    pub nonconverged: usize,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ScanTable {
    pub rows: Vec<ScanRow>,
    pub cells: Vec<ScanCell>,
}

impl ScanTable {
    /// Columns `group,a,b,sep,ratio,converged`.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::from("group,a,b,sep,ratio,converged\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:e},{:e},{}\n",
                r.group, r.a, r.b, r.sep, r.ratio, r.converged
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Scan `C` over an `(a, b)` grid. Each cell draws `pair_samples` pairs
/// with separations log-spaced over `sep_range` and random directions and
/// offsets. Cells outside `a + b < Q` are a domain error; nonconverged pairs
/// are flagged, not fatal.
pub fn constant_scan(
    gauge: &GaugeFn,
    omega: &CoordBox,
    a_grid: &[f64],
    b_grid: &[f64],
    pair_samples: usize,
    sep_range: (f64, f64),
    seed: u64,
    spec: &QuadSpec,
) -> Result<ScanTable> {
    let g = gauge.group();
    let q = g.q();
    for &a in a_grid {
        for &b in b_grid {
            check_exponents(q, a, b)?;
        }
    }
    if a_grid.is_empty() || b_grid.is_empty() || pair_samples == 0 {
        return Ok(ScanTable::default());
    }
    if !(sep_range.0 > 0.0 && sep_range.1 > sep_range.0) {
        return domain("separation range must satisfy 0 < lo < hi");
    }
    let seps = logspace(sep_range.0, sep_range.1, pair_samples);
    let center = omega.center();
    let half: Vec<f64> = omega
        .lo
        .iter()
        .zip(&omega.hi)
        .map(|(l, h)| 0.5 * (h - l))
        .collect();
    let mut jobs = Vec::new();
    for &a in a_grid {
        for &b in b_grid {
            for (k, &s) in seps.iter().enumerate() {
                jobs.push((a, b, k, s));
            }
        }
    }
    let rows: Vec<ScanRow> = jobs
        .par_iter()
        .enumerate()
        .map(|(idx, &(a, b, _, s))| {
            let mut r = rng::stream(seed, idx as u64);
            // a few attempts to keep both points inside Omega
            let mut outcome = None;
            let mut pair = (Vec::new(), Vec::new());
            for _ in 0..16 {
                let offset: Vec<f64> = half
                    .iter()
                    .map(|h| 0.2 * h * (2.0 * rand::Rng::random::<f64>(&mut r) - 1.0))
                    .collect();
                let yc: Vec<f64> = center.iter().zip(&offset).map(|(c, o)| c + o).collect();
                let u = g.random_point(&mut r, 1.0);
                let du = gauge.gauge_coords(u.coords());
                if du < 1e-3 {
                    continue;
                }
                let step = g.dilate_coords(s / du, u.coords());
                let pc = g.compose_coords(&yc, &step);
                if !strictly_inside(omega, &pc) {
                    continue;
                }
                pair = (pc.clone(), yc.clone());
                let case = InequalityCase::with_gauge(
                    gauge.clone(),
                    omega.clone(),
                    a,
                    b,
                    g.point(pc).unwrap(),
                    g.point(yc).unwrap(),
                );
                outcome = Some(match case.and_then(|c| giraud_ratio(&c, spec)) {
                    Ok(v) => (v, true),
                    Err(_) => (f64::NAN, false),
                });
                break;
            }
            let (ratio, converged) = outcome.unwrap_or((f64::NAN, false));
            ScanRow {
                group: g.describe(),
                a,
                b,
                sep: s,
                ratio,
                converged,
                p: pair.0,
                y: pair.1,
            }
        })
        .collect();
    let mut cells = Vec::new();
    for &a in a_grid {
        for &b in b_grid {
            let sel: Vec<&ScanRow> = rows
                .iter()
                .filter(|r| r.a == a && r.b == b && r.converged)
                .collect();
            let nonconverged = rows
                .iter()
                .filter(|r| r.a == a && r.b == b && !r.converged)
                .count();
            let (slope, r2) = if sel.len() >= 3 {
                let ls: Vec<f64> = sel.iter().map(|r| r.sep.ln()).collect();
                let lr: Vec<f64> = sel.iter().map(|r| r.ratio.ln()).collect();
                let f = fit_line(&ls, &lr);
                (f.slope, f.r2)
            } else {
                (f64::NAN, f64::NAN)
            };
            cells.push(ScanCell {
                a,
                b,
                c_hat: sel.iter().map(|r| r.ratio).fold(f64::NAN, f64::max),
                slope,
                r2,
                nonconverged,
            });
        }
    }
    Ok(ScanTable { rows, cells })
}

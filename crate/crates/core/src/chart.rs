//! Gauge-polar coordinates about a point.
//!
//! Euclidean: `x = r omega`. Kaplan gauge: with `|x1|^2 = r^2 cos(alpha)` and
//! `sqrt(k) |x2| = r^2 sin(alpha)`,
//!
//! ```text
//! x1 = r sqrt(cos a) w1,  x2 = r^2 sin(a) / sqrt(k) w2,  dx = r^{Q-1} A(a, w1, w2) dr da dw1 dw2
//! A = cos(a)^{(n1-2)/2} sin(a)^{n2-1} k^{-n2/2} J(w1) J(w2)
//! ```
//!
//! so the gauge is exactly `r` and integrals against functions of the gauge
//! separate. Unit spheres use hyperspherical angles; `S^0` is a pair of
//! branches.

use crate::error::{domain, Result};
use crate::gauge::{GaugeFn, GaugeKind};
use crate::quadrature::{cubature, cubature_regions, uniform_partition, QuadResult, Tolerance};
use std::f64::consts::PI;

#[derive(Clone, Debug)]
pub struct PolarChart {
    n1: usize,
    n2: usize,
    euclidean: bool,
    kappa: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Sign choices for an `S^0` factor (a single `1.0` when there is none).
    branches: Vec<f64>,
}

/// How the radius is parametrised on `[r0, r1]`.
#[derive(Clone, Copy, Debug)]
pub enum Radial {
    Linear,
    /// `r = r1 w^{1/e}` with `r0 = 0`, which absorbs an `r^{e-Q}` singularity
    /// of the integrand at the center.
    Power(f64),
}

fn sphere_angles(m: usize, lo: &mut Vec<f64>, hi: &mut Vec<f64>) {
    if m >= 2 {
        for _ in 0..m - 2 {
            lo.push(0.0);
            hi.push(PI);
        }
        lo.push(0.0);
        hi.push(2.0 * PI);
    }
}

/// Writes the point of `S^{m-1}` (`m >= 2`) and returns its area density.
fn sphere_point(m: usize, ang: &[f64], out: &mut [f64]) -> f64 {
    let mut prod = 1.0;
    let mut jac = 1.0;
    for k in 0..m - 1 {
        let (s, c) = ang[k].sin_cos();
        out[k] = prod * c;
        if k < m - 2 {
            jac *= s.powi((m - 2 - k) as i32);
        }
        prod *= s;
    }
    out[m - 1] = prod;
    jac
}

impl PolarChart {
    pub fn new(d: &GaugeFn) -> Result<Self> {
        let g = d.group();
        let (n1, n2) = (g.n1(), g.n2());
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        let euclidean = d.kind() == GaugeKind::EuclideanNorm;
        let spare = if euclidean {
            sphere_angles(n1 + n2, &mut lo, &mut hi);
            n1 + n2
        } else {
            if n1 < 2 {
                return domain("Kaplan chart needs a first layer of dimension >= 2");
            }
            lo.push(0.0);
            hi.push(0.5 * PI);
            sphere_angles(n1, &mut lo, &mut hi);
            sphere_angles(n2, &mut lo, &mut hi);
            n2
        };
        let branches = if spare == 1 {
            vec![1.0, -1.0]
        } else {
            vec![1.0]
        };
        Ok(PolarChart {
            n1,
            n2,
            euclidean,
            kappa: d.vertical_coefficient(),
            lo,
            hi,
            branches,
        })
    }

    /// Number of angular variables.
    pub fn angular_dim(&self) -> usize {
        self.lo.len()
    }

    pub fn angular_box(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }

    pub fn branches(&self) -> &[f64] {
        &self.branches
    }

    /// Relative coordinates of the chart point at radius `r`; returns the
    /// angular density `A`.
    pub fn point(&self, r: f64, ang: &[f64], branch: f64, out: &mut [f64]) -> f64 {
        if self.euclidean {
            let n = self.n1 + self.n2;
            let jac = if n == 1 {
                out[0] = branch;
                1.0
            } else {
                sphere_point(n, ang, out)
            };
            for v in out.iter_mut() {
                *v *= r;
            }
            return jac;
        }
        let (n1, n2) = (self.n1, self.n2);
        let (sa, ca) = ang[0].sin_cos();
        let ca = ca.max(0.0);
        let j1 = sphere_point(n1, &ang[1..n1], &mut out[..n1]);
        let j2 = if n2 == 1 {
            out[n1] = branch;
            1.0
        } else {
            sphere_point(n2, &ang[n1..], &mut out[n1..])
        };
        let r1 = r * ca.sqrt();
        let r2 = r * r * sa / self.kappa.sqrt();
        for v in &mut out[..n1] {
            *v *= r1;
        }
        for v in &mut out[n1..] {
            *v *= r2;
        }
        ca.powf(0.5 * (n1 as f64 - 2.0))
            * sa.powi(n2 as i32 - 1)
            * self.kappa.powf(-0.5 * n2 as f64)
            * j1
            * j2
    }

    /// `sum over branches of int A`, which equals `Q |B_1|`.
    pub fn total_angular_mass(&self, tol: Tolerance) -> QuadResult {
        let mut out = vec![0.0; self.n1 + self.n2];
        let mut acc = QuadResult {
            value: 0.0,
            error: 0.0,
            evals: 0,
            converged: true,
        };
        for &b in &self.branches {
            let res = if self.angular_dim() == 0 {
                QuadResult {
                    value: self.point(1.0, &[], b, &mut out),
                    error: 0.0,
                    evals: 1,
                    converged: true,
                }
            } else {
                cubature(|a| self.point(1.0, a, b, &mut out), &self.lo, &self.hi, tol)
            };
            accumulate(&mut acc, &res);
        }
        acc
    }
}

pub(crate) fn accumulate(acc: &mut QuadResult, r: &QuadResult) {
    acc.value += r.value;
    acc.error += r.error;
    acc.evals += r.evals;
    acc.converged &= r.converged;
}

/// `int_{r0 <= d(c^{-1} x) <= r1} f(x) dx` in gauge-polar coordinates about
/// `center`; `f` receives absolute coordinates.
///
/// Near the center `x` carries roundoff of order `eps |center|`, so a kernel
/// that recomputes `c^{-1} x` from it is only accurate to about that level
/// relative to `d(c^{-1} x)^2`. Use [`chart_integral_offset`] when the
/// integrand is a function of the offset.
pub fn chart_integral<F: FnMut(&[f64]) -> f64>(
    d: &GaugeFn,
    chart: &PolarChart,
    center: &[f64],
    radii: (f64, f64),
    radial: Radial,
    mut f: F,
    tol: Tolerance,
) -> Result<QuadResult> {
    let g = d.group();
    if center.len() != g.dim() {
        return Err(crate::CarnotError::Dimension {
            expected: g.dim(),
            got: center.len(),
        });
    }
    let mut x = vec![0.0; g.dim()];
    chart_integral_offset(
        d,
        chart,
        radii,
        radial,
        |rel| {
            g.compose_into(center, rel, &mut x);
            if x.as_slice() == center {
                // offset below roundoff: the point is the center itself, a null set
                return 0.0;
            }
            f(&x)
        },
        tol,
    )
}

/// `int_{r0 <= d(z) <= r1} f(z) dz` in gauge-polar coordinates; `f` receives
/// the offset `z = c^{-1} x` from the center, computed without cancellation.
pub fn chart_integral_offset<F: FnMut(&[f64]) -> f64>(
    d: &GaugeFn,
    chart: &PolarChart,
    (r0, r1): (f64, f64),
    radial: Radial,
    mut f: F,
    tol: Tolerance,
) -> Result<QuadResult> {
    if !(r0 >= 0.0 && r1 > r0) {
        return domain("chart integral needs 0 <= r0 < r1");
    }
    let g = d.group();
    let q = g.q();
    let dim = g.dim();
    if let Radial::Power(e) = radial {
        if r0 != 0.0 || !(e > 0.0) {
            return domain("power substitution needs r0 = 0 and a positive exponent");
        }
    }
    let mut lo = vec![0.0];
    let mut hi = vec![1.0];
    lo.extend_from_slice(&chart.lo);
    hi.extend_from_slice(&chart.hi);
    // start from a grid so that a lucky first estimate cannot end the search
    let seed = uniform_partition(&lo, &hi, if lo.len() <= 4 { 4 } else { 2 });
    let mut rel = vec![0.0; dim];
    let mut acc = QuadResult {
        value: 0.0,
        error: 0.0,
        evals: 0,
        converged: true,
    };
    // split the tolerance over branches
    let tol_b = Tolerance::new(
        tol.abs / chart.branches.len() as f64,
        tol.rel,
        tol.max_evals,
    );
    for &branch in &chart.branches {
        let mut integrand = |v: &[f64]| -> f64 {
            let (r, dr) = match radial {
                Radial::Linear => (r0 + (r1 - r0) * v[0], r1 - r0),
                Radial::Power(e) => {
                    let r = r1 * v[0].powf(1.0 / e);
                    (r, r1 / e * v[0].powf(1.0 / e - 1.0))
                }
            };
            if r == 0.0 {
                return 0.0;
            }
            let a = chart.point(r, &v[1..], branch, &mut rel);
            if a == 0.0 {
                return 0.0;
            }
            let val = f(&rel);
            if val == 0.0 {
                return 0.0;
            }
            val * r.powf(q - 1.0) * dr * a
        };
        let res = cubature_regions(&mut integrand, &seed, tol_b);
        accumulate(&mut acc, &res);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupStructure;

    fn groups() -> Vec<GroupStructure> {
        vec![
            GroupStructure::euclidean(3).unwrap(),
            GroupStructure::euclidean(4).unwrap(),
            GroupStructure::heisenberg(1).unwrap(),
            GroupStructure::heisenberg(2).unwrap(),
            GroupStructure::quaternionic(1).unwrap(),
        ]
    }

    #[test]
    fn chart_points_have_the_right_gauge() {
        for g in groups() {
            let d = GaugeFn::new(&g);
            let c = PolarChart::new(&d).unwrap();
            let mut out = vec![0.0; g.dim()];
            let (lo, hi) = c.angular_box();
            for k in 0..50 {
                let t = (k as f64 + 0.5) / 50.0;
                let ang: Vec<f64> = lo
                    .iter()
                    .zip(hi)
                    .map(|(a, b)| a + (b - a) * (t * 7.3 % 1.0))
                    .collect();
                for &b in c.branches() {
                    c.point(1.7, &ang, b, &mut out);
                    assert!((d.gauge_coords(&out) - 1.7).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn angular_mass_is_q_times_ball_volume() {
        for g in groups() {
            let d = GaugeFn::new(&g);
            let c = PolarChart::new(&d).unwrap();
            let m = c.total_angular_mass(Tolerance::new(0.0, 1e-8, 2_000_000));
            let want = g.q() * d.unit_ball_volume();
            assert!(
                (m.value - want).abs() < 1e-6 * want,
                "{}: {} vs {want}",
                g.describe(),
                m.value
            );
        }
    }

    /// A non-radial integrand against direct box cubature.
    #[test]
    fn chart_integral_matches_box_cubature() {
        for g in [
            GroupStructure::euclidean(3).unwrap(),
            GroupStructure::heisenberg(1).unwrap(),
        ] {
            let d = GaugeFn::new(&g);
            let c = PolarChart::new(&d).unwrap();
            let center = vec![0.3, -0.2, 0.1];
            let f = |x: &[f64]| {
                let rel = g.relative_coords(&center, x);
                (-d.gauge4_coords(&rel)).exp() * (1.0 + x[0] + x[1] * x[2] * x[2])
            };
            let polar = chart_integral(
                &d,
                &c,
                &center,
                (0.0, 3.0),
                Radial::Linear,
                f,
                Tolerance::new(0.0, 1e-8, 4_000_000),
            )
            .unwrap();
            // the box holds the gauge ball of radius 3 about the center
            let bb = crate::gauge::GaugeBall {
                center: g.point(center.clone()).unwrap(),
                radius: 3.0,
            }
            .bounding_box(&d);
            let boxed = cubature(
                |x| {
                    if d.gauge4_coords(&g.relative_coords(&center, x)) < 81.0 {
                        f(x)
                    } else {
                        0.0
                    }
                },
                &bb.lo,
                &bb.hi,
                Tolerance::new(0.0, 1e-7, 20_000_000),
            );
            assert!(
                (polar.value - boxed.value).abs() < 1e-5 * boxed.value.abs(),
                "{} vs {}",
                polar.value,
                boxed.value
            );
        }
    }

    /// `int_{d < R} d^{e-Q} dx = Q |B_1| R^e / e`, exact under the power substitution.
    #[test]
    fn power_substitution_removes_the_pole() {
        let g = GroupStructure::heisenberg(1).unwrap();
        let d = GaugeFn::new(&g);
        let c = PolarChart::new(&d).unwrap();
        for e in [0.5, 1.0, 2.5] {
            let f = |z: &[f64]| d.gauge_coords(z).powf(e - 4.0);
            let r = chart_integral_offset(
                &d,
                &c,
                (0.0, 0.7),
                Radial::Power(e),
                f,
                Tolerance::new(0.0, 1e-10, 1_000_000),
            )
            .unwrap();
            let want = 4.0 * d.unit_ball_volume() * 0.7f64.powf(e) / e;
            assert!((r.value - want).abs() < 1e-8 * want, "{e}: {r:?} vs {want}");
        }
    }

    /// Same pole about an off-origin center, with the kernel recomputing the
    /// offset from absolute coordinates.
    #[test]
    fn absolute_kernel_about_a_center() {
        let g = GroupStructure::heisenberg(1).unwrap();
        let d = GaugeFn::new(&g);
        let c = PolarChart::new(&d).unwrap();
        let center = [0.1, 0.4, -0.3];
        for e in [0.5, 1.0, 2.5] {
            let f = |x: &[f64]| d.gauge_coords(&g.relative_coords(&center, x)).powf(e - 4.0);
            let r = chart_integral(
                &d,
                &c,
                &center,
                (0.0, 0.7),
                Radial::Power(e),
                f,
                Tolerance::new(0.0, 1e-8, 1_000_000),
            )
            .unwrap();
            assert!(r.value.is_finite(), "{e}: {r:?}");
            let want = 4.0 * d.unit_ball_volume() * 0.7f64.powf(e) / e;
            assert!((r.value - want).abs() < 1e-5 * want, "{e}: {r:?} vs {want}");
        }
    }
}

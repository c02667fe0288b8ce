//! Gauge-metric dimension estimates.
//!
//! Box counting uses cells adapted to the group: at scale `r` the cell of `x`
//! is `c o ([0, r)^{n1} x [0, r^2)^{n2})` where `c = (r floor(x1 / r), 0)`.
//! Cells are left translates of one dilated model cell, so their gauge
//! diameter is `kappa r` for a group constant `kappa`. Plain coordinate boxes
//! would be sheared by the group law away from the vertical axis.
//!
//! Box counting bounds the upper box dimension. For the separated
//! self-similar sets used here it agrees with the Hausdorff dimension; that is
//! not claimed in general.

use std::collections::HashSet;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, CarnotError, Result};
use crate::gauge::GaugeFn;
use crate::giraud::{constant_scan, QuadSpec};
use crate::group::{CoordBox, GroupStructure, Point};
use crate::potential::{
    divergence_probe, potential_eval, DivergenceReport, HorizontalCurve, RadonMeasure,
};
use crate::rng;
use crate::stats::{fit_line, fit_loglog, LineFit};

/// Minimum sample size accepted by [`box_count`].
pub const MIN_POINTS: usize = 10_000;
/// The scales (or the counts they produce) must span this many decades.
pub const MIN_DECADES: f64 = 2.5;
/// Chaos-game burn-in.
pub const BURN_IN: usize = 1000;

pub const BOX_COUNT_NOTE: &str =
    "box counting estimates the upper box dimension, which bounds the Hausdorff dimension from above";

/// Lattice index of the cell containing `x` at scale `r`.
pub fn cell_index(g: &GroupStructure, x: &[f64], r: f64) -> Vec<i64> {
    let n1 = g.n1();
    let mut key = Vec::with_capacity(x.len());
    let mut c1 = vec![0.0; n1];
    for i in 0..n1 {
        let k = (x[i] / r).floor();
        key.push(k as i64);
        c1[i] = k * r;
    }
    let r2 = r * r;
    for k in 0..g.n2() {
        let z = x[n1 + k] - 0.5 * g.bracket_k(k, &c1, &x[..n1]);
        key.push((z / r2).floor() as i64);
    }
    key
}

/// Gauge diameter of the unit model cell, estimated from its corners and
/// random pairs (deterministic).
pub fn cell_kappa(d: &GaugeFn) -> f64 {
    let g = d.group();
    let dim = g.dim();
    let mut best: f64 = 0.0;
    if dim <= 8 {
        let corners: Vec<Vec<f64>> = (0..1usize << dim)
            .map(|m| (0..dim).map(|i| (m >> i & 1) as f64).collect())
            .collect();
        for a in &corners {
            for b in &corners {
                best = best.max(d.distance_coords(b, a));
            }
        }
    }
    let mut r = rng::stream(0x006b_6170_7061, 0);
    let lo = vec![0.0; dim];
    let hi = vec![1.0; dim];
    for _ in 0..20_000 {
        let a = rng::uniform_in_box(&mut r, &lo, &hi);
        let b = rng::uniform_in_box(&mut r, &lo, &hi);
        best = best.max(d.distance_coords(&b, &a));
    }
    best
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverReport {
    pub scales: Vec<f64>,
    pub counts: Vec<usize>,
    pub slope: f64,
    /// Half-width of the 95% confidence interval of the slope.
    pub ci: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Gauge diameter of a cell divided by its scale.
    pub kappa: f64,
    pub n_points: usize,
    pub note: String,
}

impl CoverReport {
    pub fn certified(&self, half_width: f64) -> bool {
        self.ci <= half_width
    }
}

/// Collision-resistant 128-bit key of the cell containing `x`; the same
/// cell as [`cell_index`] without allocating.
fn cell_key(g: &GroupStructure, x: &[f64], r: f64) -> u128 {
    let n1 = g.n1();
    let mut a = DefaultHasher::new();
    let mut b = DefaultHasher::new();
    0x5eed_u16.hash(&mut b);
    let mut c1 = [0.0; 16];
    let c1 = &mut c1[..n1.min(16)];
    let mut push = |k: i64| {
        k.hash(&mut a);
        k.hash(&mut b);
    };
    if n1 > 16 {
        for k in cell_index(g, x, r) {
            push(k);
        }
    } else {
        for i in 0..n1 {
            let k = (x[i] / r).floor();
            push(k as i64);
            c1[i] = k * r;
        }
        let r2 = r * r;
        for k in 0..g.n2() {
            let z = x[n1 + k] - 0.5 * g.bracket_k(k, c1, &x[..n1]);
            push((z / r2).floor() as i64);
        }
    }
    ((a.finish() as u128) << 64) | b.finish() as u128
}

pub fn count_cells(g: &GroupStructure, points: &[Vec<f64>], r: f64) -> usize {
    let keys: Vec<u128> = points.par_iter().map(|x| cell_key(g, x, r)).collect();
    keys.into_iter().collect::<HashSet<_>>().len()
}

fn check_scales(scales: &[f64]) -> Result<()> {
    if scales.len() < 4 {
        return domain("box counting needs at least four scales");
    }
    if scales.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return domain("scales must be positive");
    }
    Ok(())
}

fn check_dims(g: &GroupStructure, points: &[Vec<f64>]) -> Result<()> {
    match points.iter().find(|p| p.len() != g.dim()) {
        Some(p) => Err(crate::error::CarnotError::Dimension {
            expected: g.dim(),
            got: p.len(),
        }),
        None => Ok(()),
    }
}

fn fit_counts(
    d: &GaugeFn,
    scales: &[f64],
    counts: Vec<usize>,
    n_points: usize,
) -> Result<CoverReport> {
    let rmax = scales.iter().cloned().fold(f64::MIN, f64::max);
    let rmin = scales.iter().cloned().fold(f64::MAX, f64::min);
    let cmax = *counts.iter().max().unwrap() as f64;
    let cmin = *counts.iter().min().unwrap() as f64;
    let span = (rmax / rmin).log10().max((cmax / cmin).log10());
    if span < MIN_DECADES {
        return domain(format!(
            "scales must span {MIN_DECADES} decades in r or in N(r); got {span:.2}"
        ));
    }
    let x: Vec<f64> = scales.iter().map(|r| -r.ln()).collect();
    let y: Vec<f64> = counts.iter().map(|&c| (c as f64).ln()).collect();
    let fit: LineFit = fit_line(&x, &y);
    Ok(CoverReport {
        scales: scales.to_vec(),
        counts,
        slope: fit.slope,
        ci: fit.ci_half_width,
        intercept: fit.intercept,
        r2: fit.r2,
        kappa: cell_kappa(d),
        n_points,
        note: BOX_COUNT_NOTE.to_string(),
    })
}

/// Box-counting slope of `log N(r)` against `log(1/r)`.
pub fn box_count(d: &GaugeFn, points: &[Vec<f64>], scales: &[f64]) -> Result<CoverReport> {
    let g = d.group();
    if points.len() < MIN_POINTS {
        return domain(format!(
            "box counting needs at least {MIN_POINTS} points, got {}",
            points.len()
        ));
    }
    check_scales(scales)?;
    check_dims(g, points)?;
    let counts: Vec<usize> = scales.iter().map(|&r| count_cells(g, points, r)).collect();
    fit_counts(d, scales, counts, points.len())
}

/// [`box_count`] over samples produced chunk by chunk, for sample sets too
/// large to hold in memory. `chunk(i)` must be deterministic in `i`.
pub fn box_count_stream<F>(
    d: &GaugeFn,
    n_chunks: usize,
    chunk: F,
    scales: &[f64],
) -> Result<CoverReport>
where
    F: Fn(usize) -> Vec<Vec<f64>>,
{
    let g = d.group();
    check_scales(scales)?;
    let mut sets: Vec<HashSet<u128>> = vec![HashSet::new(); scales.len()];
    let mut n = 0;
    for i in 0..n_chunks {
        let pts = chunk(i);
        check_dims(g, &pts)?;
        n += pts.len();
        for (set, &r) in sets.iter_mut().zip(scales) {
            let keys: Vec<u128> = pts.par_iter().map(|x| cell_key(g, x, r)).collect();
            set.extend(keys);
        }
    }
    if n < MIN_POINTS {
        return domain(format!(
            "box counting needs at least {MIN_POINTS} points, got {n}"
        ));
    }
    fit_counts(d, scales, sets.iter().map(|s| s.len()).collect(), n)
}

/// One similarity `x -> p o delta_r(x)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IfsMap {
    pub translation: Vec<f64>,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IFSSystem {
    pub maps: Vec<IfsMap>,
}

impl IFSSystem {
    pub fn new(g: &GroupStructure, maps: Vec<(Point, f64)>) -> Result<Self> {
        if maps.is_empty() {
            return domain("an IFS needs at least one map");
        }
        let mut out = Vec::with_capacity(maps.len());
        for (p, r) in maps {
            g.check(&p)?;
            if !(r > 0.0 && r < 1.0) {
                return domain(format!("contraction ratios must lie in (0, 1); got {r}"));
            }
            out.push(IfsMap {
                translation: p.into_coords(),
                ratio: r,
            });
        }
        Ok(IFSSystem { maps: out })
    }

    pub fn validate(&self, g: &GroupStructure) -> Result<()> {
        let maps = self
            .maps
            .iter()
            .map(|m| Ok((g.point(m.translation.clone())?, m.ratio)))
            .collect::<Result<Vec<_>>>()?;
        IFSSystem::new(g, maps).map(|_| ())
    }

    pub fn apply(&self, g: &GroupStructure, i: usize, x: &[f64]) -> Vec<f64> {
        let m = &self.maps[i];
        g.compose_coords(&m.translation, &g.dilate_coords(m.ratio, x))
    }

    /// Solution `s` of `sum r_i^s = 1`.
    pub fn moran_dimension(&self) -> f64 {
        if self.maps.len() == 1 {
            return 0.0;
        }
        let f = |s: f64| self.maps.iter().map(|m| m.ratio.powf(s)).sum::<f64>() - 1.0;
        let (mut lo, mut hi) = (0.0, 1.0);
        while f(hi) > 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Map probabilities `r_i^s`, which make the chaos game sample the
    /// natural self-similar measure.
    pub fn probabilities(&self) -> Vec<f64> {
        let s = self.moran_dimension();
        let w: Vec<f64> = self.maps.iter().map(|m| m.ratio.powf(s)).collect();
        let t: f64 = w.iter().sum();
        w.into_iter().map(|v| v / t).collect()
    }
}

/// Chaos-game samples of the attractor, each labelled with the map that
/// produced it (so the point lies in that first-level image).
#[derive(Clone, Debug)]
pub struct AttractorSample {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

pub fn ifs_attractor(
    g: &GroupStructure,
    system: &IFSSystem,
    n_points: usize,
    seed: u64,
) -> Result<AttractorSample> {
    system.validate(g)?;
    let probs = system.probabilities();
    let mut cum = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cum.push(acc);
    }
    let mut r = rng::stream(seed, 0);
    let mut x = vec![0.0; g.dim()];
    let mut points = Vec::with_capacity(n_points);
    let mut labels = Vec::with_capacity(n_points);
    for step in 0..BURN_IN + n_points {
        let u: f64 = r.random();
        let i = cum.iter().position(|c| u < *c).unwrap_or(cum.len() - 1);
        x = system.apply(g, i, &x);
        if step >= BURN_IN {
            points.push(x.clone());
            labels.push(i);
        }
    }
    Ok(AttractorSample { points, labels })
}

/// Separation between first-level images and their largest diameter, both
/// from a sample.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Separation {
    pub min_distance: f64,
    pub max_image_diameter: f64,
}

impl Separation {
    /// The separation condition under which the Moran dimension is expected.
    pub fn is_separated(&self) -> bool {
        self.min_distance > 2.0 * self.max_image_diameter
    }
}

pub fn separation(
    d: &GaugeFn,
    sample: &AttractorSample,
    n_maps: usize,
    per_map: usize,
) -> Separation {
    let mut groups: Vec<Vec<&Vec<f64>>> = vec![Vec::new(); n_maps];
    for (p, &l) in sample.points.iter().zip(&sample.labels) {
        if groups[l].len() < per_map {
            groups[l].push(p);
        }
    }
    let mut min_distance = f64::INFINITY;
    let mut max_diam: f64 = 0.0;
    for i in 0..n_maps {
        for a in &groups[i] {
            for b in &groups[i] {
                max_diam = max_diam.max(d.distance_coords(b, a));
            }
            for other in &groups[i + 1..] {
                for b in other {
                    min_distance = min_distance.min(d.distance_coords(b, a));
                }
            }
        }
    }
    Separation {
        min_distance,
        max_image_diameter: max_diam,
    }
}

/// Weighted samples standing in for `H^s` restricted to a set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub s: f64,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>, s: f64) -> Result<Self> {
        if points.len() != weights.len() {
            return domain("one weight per point");
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return domain("weights must be finite and nonnegative");
        }
        Ok(EmpiricalMeasure { points, weights, s })
    }

    /// Equal weights summing to `mass`.
    pub fn uniform(points: Vec<Vec<f64>>, mass: f64, s: f64) -> Result<Self> {
        let n = points.len().max(1);
        let w = vec![mass / n as f64; points.len()];
        Self::new(points, w, s)
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `nu(B(x, r))`.
    pub fn ball_mass(&self, d: &GaugeFn, x: &[f64], r: f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .filter(|(p, _)| d.distance_coords(p, x) < r)
            .map(|(_, w)| w)
            .sum()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularityReport {
    pub s: f64,
    pub radii: Vec<f64>,
    /// `max over centers of nu(B(x, r)) / r^s`, per radius.
    pub max_ratio: Vec<f64>,
    pub median_ratio: Vec<f64>,
    pub b_hat: f64,
    /// Slope of `log max_ratio` against `log r`; clearly negative means the
    /// ratio blows up as `r` shrinks, i.e. `s` is too large for the set.
    pub trend: f64,
    pub diverging: bool,
    /// Pairs with a ratio above `b_bound`, when a bound is given.
    pub violations: usize,
    pub pairs: usize,
}

/// Empirical check of `nu(B(x, r)) <= b r^s` over sampled centers in the
/// support and the given radii.
pub fn regularity_check(
    d: &GaugeFn,
    nu: &EmpiricalMeasure,
    n_centers: usize,
    radii: &[f64],
    b_bound: Option<f64>,
    seed: u64,
) -> Result<RegularityReport> {
    if !(nu.s > 0.0) {
        return domain("regularity exponent s must be positive");
    }
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
        return domain("radii must lie in (0, 1]");
    }
    if nu.is_empty() || n_centers == 0 {
        return domain("need a nonempty measure and at least one center");
    }
    let mut r = rng::stream(seed, 0);
    let centers: Vec<usize> = (0..n_centers)
        .map(|_| r.random_range(0..nu.len()))
        .collect();
    let ratios: Vec<Vec<f64>> = centers
        .par_iter()
        .map(|&c| {
            let x = &nu.points[c];
            let dist: Vec<f64> = nu.points.iter().map(|p| d.distance_coords(p, x)).collect();
            radii
                .iter()
                .map(|&rad| {
                    let m: f64 = dist
                        .iter()
                        .zip(&nu.weights)
                        .filter(|(v, _)| **v < rad)
                        .map(|(_, w)| w)
                        .sum();
                    m / rad.powf(nu.s)
                })
                .collect()
        })
        .collect();
    let mut max_ratio = Vec::new();
    let mut median_ratio = Vec::new();
    for k in 0..radii.len() {
        let mut col: Vec<f64> = ratios.iter().map(|row| row[k]).collect();
        col.sort_by(f64::total_cmp);
        max_ratio.push(*col.last().unwrap());
        median_ratio.push(col[col.len() / 2]);
    }
    let violations = match b_bound {
        Some(b) => ratios.iter().flatten().filter(|v| **v > b).count(),
        None => 0,
    };
    let trend = if radii.len() >= 2 {
        let lx: Vec<f64> = radii.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = max_ratio.iter().map(|v| v.max(1e-300).ln()).collect();
        fit_line(&lx, &ly).slope
    } else {
        0.0
    };
    Ok(RegularityReport {
        s: nu.s,
        radii: radii.to_vec(),
        b_hat: max_ratio.iter().cloned().fold(0.0, f64::max),
        max_ratio,
        median_ratio,
        trend,
        diverging: trend < -0.25,
        violations,
        pairs: n_centers * radii.len(),
    })
}

/// Number of nearest samples replaced by the continuum estimate in
/// [`phi_functional`].
pub const NEAR_FIELD_K: usize = 16;

/// `phi(y) = int d(y, p)^{-t} dnu(p)` for `0 <= t < s`.
///
/// The `k` nearest samples are replaced by the regular-measure estimate
/// `int_{B(y, rho)} d^{-t} dnu ~ nu(B(y, rho)) rho^{-t} s / (s - t)`, where
/// `rho` is the distance to the `k`-th nearest sample. Without it a query
/// point on the support is dominated by whichever sample lands closest.
pub fn phi_functional(nu: &EmpiricalMeasure, d: &GaugeFn, t: f64, y: &[f64]) -> Result<f64> {
    if !(t >= 0.0) {
        return domain("phi needs t >= 0");
    }
    if t >= nu.s {
        return domain(format!("phi needs t < s; got t = {t}, s = {}", nu.s));
    }
    if t == 0.0 {
        return Ok(nu.total_mass());
    }
    let mut dist: Vec<(f64, f64)> = nu
        .points
        .iter()
        .zip(&nu.weights)
        .map(|(p, w)| (d.distance_coords(p, y), *w))
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0));
    let k = NEAR_FIELD_K.min(dist.len());
    if k == 0 {
        return Ok(0.0);
    }
    let rho = dist[k - 1].0;
    let near_mass: f64 = dist[..k].iter().map(|(_, w)| w).sum();
    let near = if rho > 0.0 {
        near_mass * rho.powf(-t) * nu.s / (nu.s - t)
    } else {
        f64::INFINITY
    };
    let far: f64 = dist[k..].iter().map(|(r, w)| w * r.powf(-t)).sum();
    Ok(near + far)
}

/// Uniform samples of a segment `{ a o (t v, 0) : t in [0, len] }`, or of a
/// vertical segment when `vertical` is set.
pub fn segment_sample(g: &GroupStructure, n: usize, vertical: bool, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, 0);
    (0..n)
        .map(|_| {
            let t: f64 = r.random();
            let mut x = vec![0.0; g.dim()];
            if vertical {
                x[g.n1()] = t;
            } else {
                x[0] = t;
            }
            x
        })
        .collect()
}

/// Uniform samples of the gauge ball of radius `radius` about the identity.
pub fn gauge_ball_sample(d: &GaugeFn, n: usize, radius: f64, seed: u64) -> Vec<Vec<f64>> {
    let chunks = 64;
    let per = n.div_ceil(chunks);
    let parts: Vec<Vec<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| gauge_ball_chunk(d, per, radius, seed, c as u64))
        .collect();
    let mut all: Vec<Vec<f64>> = parts.into_iter().flatten().collect();
    all.truncate(n);
    all
}

/// One reproducible chunk of uniform gauge-ball samples from stream `index`.
pub fn gauge_ball_chunk(
    d: &GaugeFn,
    n: usize,
    radius: f64,
    seed: u64,
    index: u64,
) -> Vec<Vec<f64>> {
    let w = d.ball_half_widths(radius);
    let lo: Vec<f64> = w.iter().map(|v| -v).collect();
    let mut r = rng::stream(seed, index);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = rng::uniform_in_box(&mut r, &lo, &w);
        if d.gauge_coords(&x) < radius {
            out.push(x);
        }
    }
    out
}

/// Where the threshold experiment places the mass whose potential should
/// blow up on the set.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MassBuilder {
    /// Explicit atoms `(coords, weight)`.
    Atoms { atoms: Vec<(Vec<f64>, f64)> },
    /// `n_atoms` equal atoms of total mass `mass` drawn from the set's
    /// natural measure, independently of the sample used for box counting.
    OnSet { n_atoms: usize, mass: f64 },
}

/// Settings of the finiteness witness for sets above the threshold.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WitnessSpec {
    /// Radius of the balls around points of the set.
    pub delta: f64,
    /// Base size of the `H^s` sample (doubled `doublings` times).
    pub n_nu: usize,
    /// Base number of mass samples (doubled alongside).
    pub n_mu: usize,
    pub doublings: usize,
    /// Pairs used to estimate the Giraud constant.
    pub scan_pairs: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSpec {
    /// Expected dimension of the set, reported next to the measured one.
    pub target_dim: f64,
    pub n_points: usize,
    pub scales: Vec<f64>,
    pub mass: MassBuilder,
    /// Times `t` at which `R(gamma(t))` is sampled along every curve.
    pub probe_times: Vec<f64>,
    #[serde(default)]
    pub witness: Option<WitnessSpec>,
    pub seed: u64,
}

/// Largest CI half-width of the dimension estimate accepted by
/// [`threshold_experiment`].
pub const CERTIFY_HALF_WIDTH: f64 = 0.1;
/// Drift over the last doubling accepted for the witness.
pub const WITNESS_DRIFT: f64 = 0.05;

#[derive(Clone, Debug, Serialize)]
pub struct CurveEvidence {
    pub start: Vec<f64>,
    pub times: Vec<f64>,
    /// `R(gamma(t))`; `inf` where the curve meets an atom.
    pub potentials: Vec<f64>,
    /// Below this time the empirical mass no longer resolves the set.
    pub resolved_from: f64,
    /// Log-log slope `beta` of `R(gamma(t))` against `t` over resolved times.
    pub blowup: LineFit,
    /// `R` grows as the curve reaches its start.
    pub blows_up: bool,
    /// `beta p <= -1`: the power law makes `int R^p dt` diverge.
    pub predicts_divergence: bool,
    /// The curve integral over the resolved `t_min` values.
    pub integral: DivergenceReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct WitnessReport {
    pub epsilon: f64,
    /// Kernel exponent of the double integral, `(Q-2)/2`.
    pub t: f64,
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    pub omega: CoordBox,
    /// Largest sampled Giraud ratio on `omega`.
    pub c_giraud: f64,
    pub giraud_pairs: usize,
    pub nu_counts: Vec<usize>,
    pub mu_counts: Vec<usize>,
    /// `mu(S) mean_y phi(y)` per level.
    pub double_integrals: Vec<f64>,
    /// `c_Gamma C_G` times the double integral: an upper bound for the
    /// integral of `R` over `delta`-balls against `r^alpha` weights.
    pub estimates: Vec<f64>,
    pub drift: f64,
    pub finite: bool,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdReport {
    pub q: f64,
    /// `(Q-2)/2`.
    pub threshold: f64,
    pub exponent: f64,
    pub target_dim: f64,
    pub moran_dim: f64,
    pub cover: CoverReport,
    pub below_threshold: bool,
    pub curves: Vec<CurveEvidence>,
    pub all_blow_up: bool,
    pub all_predict_divergence: bool,
    pub any_convergent: bool,
    pub witness: Option<WitnessReport>,
    pub note: String,
}

fn omega_around(d: &GaugeFn, points: &[Vec<f64>], delta: f64) -> Result<CoordBox> {
    let g = d.group();
    let dim = g.dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in points {
        for k in 0..dim {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    // the vertical reach of p o B(e, delta) is affine in p1, so the corners
    // of the sample's box bound it
    let mut r = rng::stream(0xb0, 0);
    let sphere: Vec<Vec<f64>> = (0..512)
        .filter_map(|_| {
            let u = g.random_point(&mut r, 1.0);
            let du = d.gauge_coords(u.coords());
            (du > 1e-6).then(|| g.dilate_coords(delta / du, u.coords()))
        })
        .collect();
    let (blo, bhi) = (lo.clone(), hi.clone());
    for m in 0..(1usize << dim) {
        let corner: Vec<f64> = (0..dim)
            .map(|k| if m >> k & 1 == 1 { bhi[k] } else { blo[k] })
            .collect();
        for z in &sphere {
            let x = g.compose_coords(&corner, z);
            for k in 0..dim {
                lo[k] = lo[k].min(x[k]);
                hi[k] = hi[k].max(x[k]);
            }
        }
    }
    for k in 0..dim {
        let pad = 0.1 * (hi[k] - lo[k]).max(delta * delta);
        lo[k] -= pad;
        hi[k] += pad;
    }
    CoordBox::new(lo, hi)
}

fn mass_samples(
    g: &GroupStructure,
    system: &IFSSystem,
    mass: &MassBuilder,
    n: usize,
    seed: u64,
) -> Result<Vec<(Vec<f64>, f64)>> {
    match mass {
        MassBuilder::Atoms { atoms } => {
            for (c, w) in atoms {
                if c.len() != g.dim() {
                    return Err(CarnotError::Dimension {
                        expected: g.dim(),
                        got: c.len(),
                    });
                }
                if !(*w >= 0.0 && w.is_finite()) {
                    return domain("atom weights must be finite and nonnegative");
                }
            }
            Ok(atoms.clone())
        }
        MassBuilder::OnSet { n_atoms, mass } => {
            if *n_atoms == 0 || !(*mass > 0.0) {
                return domain("mass on the set needs atoms and positive mass");
            }
            let n = if n == 0 { *n_atoms } else { n };
            let pts = ifs_attractor(g, system, n, seed)?.points;
            Ok(pts.into_iter().map(|p| (p, mass / n as f64)).collect())
        }
    }
}

fn curve_evidence(
    d: &GaugeFn,
    mu: &RadonMeasure,
    curve: &HorizontalCurve,
    times: &[f64],
    resolved_from: f64,
    exponent: f64,
) -> Result<CurveEvidence> {
    let prepared = curve.prepare(d)?;
    let mut times: Vec<f64> = times
        .iter()
        .copied()
        .filter(|t| *t > 0.0 && *t <= curve.delta)
        .collect();
    times.sort_by(|a, b| b.total_cmp(a));
    let potentials: Vec<f64> = times
        .par_iter()
        .map(|t| Ok(potential_eval(d, mu, &prepared.point(*t)?).value()))
        .collect::<Result<Vec<_>>>()?;
    let (rt, rv): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&potentials)
        .filter(|(t, v)| **t >= resolved_from && v.is_finite() && **v > 0.0)
        .map(|(t, v)| (*t, *v))
        .unzip();
    if rt.len() < 3 {
        return Err(CarnotError::Precondition(format!(
            "only {} probe times are resolved (t >= {resolved_from:.3e})",
            rt.len()
        )));
    }
    let blowup = fit_loglog(&rt, &rv);
    let t_mins: Vec<f64> = rt.iter().copied().filter(|t| *t < curve.delta).collect();
    let integral = divergence_probe(d, mu, curve, Some(exponent), &t_mins)?;
    Ok(CurveEvidence {
        start: curve.start.clone(),
        blows_up: blowup.slope + blowup.ci_half_width < 0.0,
        predicts_divergence: blowup.slope * exponent <= -1.0,
        resolved_from,
        blowup,
        integral,
        times,
        potentials,
    })
}

/// Evidence for the dimension threshold `(Q-2)/2`: the box dimension of an
/// IFS attractor, the behaviour of `R` and `int R^p` along horizontal
/// curves from points of the set, and, for sets above the threshold, a
/// finiteness witness
/// `c_Gamma C_G mu(S) mean_y int d(y, p)^{-t} dH^s(p)` with `C_G` a sampled
/// Giraud constant.
pub fn threshold_experiment(
    d: &GaugeFn,
    system: &IFSSystem,
    curves: &[HorizontalCurve],
    spec: &ThresholdSpec,
) -> Result<ThresholdReport> {
    let g = d.group();
    let q = g.q();
    let exponent = g.completeness_exponent()?;
    let threshold = (q - 2.0) / 2.0;
    if curves.is_empty() {
        return domain("threshold experiment needs at least one curve");
    }
    let sample = ifs_attractor(g, system, spec.n_points, rng::derive_seed(spec.seed, 1))?;
    let cover = box_count(d, &sample.points, &spec.scales)?;
    if !cover.certified(CERTIFY_HALF_WIDTH) {
        return Err(CarnotError::Precondition(format!(
            "dimension not certified: CI half-width {:.3} > {CERTIFY_HALF_WIDTH}",
            cover.ci
        )));
    }
    let s_hat = cover.slope.max(0.0);

    let atoms = mass_samples(g, system, &spec.mass, 0, rng::derive_seed(spec.seed, 2))?;
    let n_atoms = atoms.len();
    let mu = RadonMeasure::atomic(
        g,
        atoms
            .into_iter()
            .map(|(c, w)| Ok((g.point(c)?, w)))
            .collect::<Result<Vec<_>>>()?,
    )?;
    // below this scale fewer than NEAR_FIELD_K atoms sit in a ball
    let resolved_from = if s_hat < 1e-3 || n_atoms <= NEAR_FIELD_K {
        0.0
    } else {
        4.0 * (NEAR_FIELD_K as f64 / n_atoms as f64).powf(1.0 / s_hat)
    };
    let evidence = curves
        .iter()
        .map(|c| curve_evidence(d, &mu, c, &spec.probe_times, resolved_from, exponent))
        .collect::<Result<Vec<_>>>()?;

    let witness = match &spec.witness {
        None => None,
        Some(w) => Some(finiteness_witness(
            d,
            system,
            spec,
            w,
            s_hat,
            threshold,
            &sample.points,
        )?),
    };
    Ok(ThresholdReport {
        q,
        threshold,
        exponent,
        target_dim: spec.target_dim,
        moran_dim: system.moran_dimension(),
        below_threshold: s_hat + cover.ci <= threshold,
        all_blow_up: evidence.iter().all(|e| e.blows_up),
        all_predict_divergence: evidence.iter().all(|e| e.predicts_divergence),
        any_convergent: evidence.iter().any(|e| !e.predicts_divergence),
        curves: evidence,
        witness,
        cover,
        note: format!(
            "{BOX_COUNT_NOTE} Curve diagnostics are finite-sample trends over resolved scales; the witness bounds one integral and is evidence, not a proof."
        ),
    })
}

fn finiteness_witness(
    d: &GaugeFn,
    system: &IFSSystem,
    spec: &ThresholdSpec,
    w: &WitnessSpec,
    s_hat: f64,
    threshold: f64,
    set_points: &[Vec<f64>],
) -> Result<WitnessReport> {
    let g = d.group();
    let q = g.q();
    if (g.completeness_exponent()? - 1.0).abs() > 1e-12 {
        return domain("the finiteness witness needs R^p linear in mu, i.e. Q = 4");
    }
    let epsilon = s_hat - threshold;
    if !(epsilon > 0.0) {
        return Err(CarnotError::Precondition(format!(
            "witness needs a set above the threshold; dimension {s_hat:.3} <= {threshold}"
        )));
    }
    if !(w.delta > 0.0) || w.n_nu == 0 || w.n_mu == 0 || w.scan_pairs < 3 {
        return domain("witness needs delta > 0, samples and at least three Giraud pairs");
    }
    // t at the threshold gives alpha = 0: the plain radial integral of R
    let t = threshold;
    let b = 2.0;
    let a = q - b - t;
    let alpha = a - 1.0;
    let omega = omega_around(d, set_points, w.delta)?;
    let diam = omega
        .hi
        .iter()
        .zip(&omega.lo)
        .map(|(h, l)| h - l)
        .fold(0.0, f64::max);
    let scan = constant_scan(
        d,
        &omega,
        &[a],
        &[b],
        w.scan_pairs,
        (1e-3 * diam, 0.3 * diam),
        rng::derive_seed(spec.seed, 3),
        &QuadSpec::default(),
    )?;
    let c_giraud = scan.cells.first().map_or(f64::NAN, |c| c.c_hat);
    if !c_giraud.is_finite() {
        return Err(CarnotError::Precondition(
            "Giraud scan produced no converged ratio".into(),
        ));
    }
    let top = w.doublings;
    let nu_all = ifs_attractor(g, system, w.n_nu << top, rng::derive_seed(spec.seed, 4))?.points;
    let mu_all = mass_samples(
        g,
        system,
        &spec.mass,
        w.n_mu << top,
        rng::derive_seed(spec.seed, 5),
    )?;
    let mu_mass: f64 = mu_all.iter().map(|(_, m)| m).sum();
    let mut nu_counts = Vec::new();
    let mut mu_counts = Vec::new();
    let mut double_integrals = Vec::new();
    for k in 0..=top {
        let n_nu = w.n_nu << k;
        let nu = EmpiricalMeasure::uniform(nu_all[..n_nu].to_vec(), 1.0, s_hat)?;
        let ys = &mu_all[..(w.n_mu << k).min(mu_all.len())];
        let weighted: f64 = ys
            .par_iter()
            .map(|(y, m)| Ok(m * phi_functional(&nu, d, t, y)?))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .sum();
        let prefix_mass: f64 = ys.iter().map(|(_, m)| m).sum();
        // mu(S) times the weighted mean of phi over the prefix
        let total = if prefix_mass > 0.0 {
            mu_mass * weighted / prefix_mass
        } else {
            0.0
        };
        nu_counts.push(n_nu);
        mu_counts.push(ys.len());
        double_integrals.push(total);
    }
    let estimates: Vec<f64> = double_integrals
        .iter()
        .map(|v| d.c_gamma() * c_giraud * v)
        .collect();
    let drift = match estimates.as_slice() {
        [.., x, y] if *y != 0.0 => (y - x).abs() / y.abs(),
        _ => 0.0,
    };
    let finite = estimates.iter().all(|v| v.is_finite());
    Ok(WitnessReport {
        epsilon,
        t,
        alpha,
        a,
        b,
        delta: w.delta,
        omega,
        c_giraud,
        giraud_pairs: w.scan_pairs,
        nu_counts,
        mu_counts,
        double_integrals,
        estimates,
        converged: finite && drift <= WITNESS_DRIFT,
        finite,
        drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::logspace;

    fn h1() -> GaugeFn {
        GaugeFn::new(&GroupStructure::heisenberg(1).unwrap())
    }

    #[test]
    fn cells_tile_and_dilate() {
        let d = h1();
        let g = d.group();
        let mut r = rng::stream(1, 0);
        for _ in 0..1000 {
            let x = g.random_point(&mut r, 2.0);
            let key = cell_index(g, x.coords(), 0.1);
            // the cell of delta_lambda x at scale lambda r is the same lattice cell
            let y = g.dilate_coords(0.5, x.coords());
            assert_eq!(cell_index(g, &y, 0.05), key);
            // the point lies in c o K with K the model cell
            let c: Vec<f64> = key[..2]
                .iter()
                .map(|k| *k as f64 * 0.1)
                .chain([0.0])
                .collect();
            let z = g.relative_coords(&c, x.coords());
            assert!(z[0] >= -1e-12 && z[0] < 0.1 + 1e-12 && z[1] >= -1e-12 && z[1] < 0.1 + 1e-12);
            assert!(
                z[2] >= key[2] as f64 * 0.01 - 1e-12 && z[2] < (key[2] + 1) as f64 * 0.01 + 1e-12
            );
        }
    }

    #[test]
    fn kappa_is_a_finite_group_constant() {
        let k = cell_kappa(&h1());
        assert!(k > 1.0 && k < 3.0, "{k}");
        let e = GaugeFn::new(&GroupStructure::euclidean(3).unwrap());
        assert!((cell_kappa(&e) - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn preconditions() {
        let d = h1();
        let pts = segment_sample(d.group(), 100, false, 0);
        assert!(box_count(&d, &pts, &[0.1, 0.01, 0.001, 0.0001]).is_err());
        let pts = segment_sample(d.group(), 20_000, false, 0);
        assert!(box_count(&d, &pts, &[0.1, 0.01, 0.001]).is_err());
        assert!(box_count(&d, &pts, &[0.1, 0.09, 0.08, 0.07]).is_err());
    }

    #[test]
    fn moran_dimension_and_probabilities() {
        let g = GroupStructure::heisenberg(1).unwrap();
        let e = g.identity();
        let two = IFSSystem::new(
            &g,
            vec![
                (e.clone(), 1.0 / 3.0),
                (g.point(vec![2.0 / 3.0, 0.0, 0.0]).unwrap(), 1.0 / 3.0),
            ],
        )
        .unwrap();
        assert!((two.moran_dimension() - 2f64.ln() / 3f64.ln()).abs() < 1e-12);
        let p = two.probabilities();
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!(IFSSystem::new(&g, vec![(e.clone(), 1.0)]).is_err());
        let one = IFSSystem::new(&g, vec![(e, 0.5)]).unwrap();
        assert_eq!(one.moran_dimension(), 0.0);
        let s = ifs_attractor(&g, &one, 100, 3).unwrap();
        assert!(s.points.iter().all(|x| x.iter().all(|v| v.abs() < 1e-300)));
    }

    #[test]
    fn chaos_game_is_deterministic_per_seed() {
        let g = GroupStructure::heisenberg(1).unwrap();
        let sys = IFSSystem::new(
            &g,
            vec![
                (g.identity(), 0.4),
                (g.point(vec![0.6, 0.0, 0.1]).unwrap(), 0.4),
                (g.point(vec![0.0, 0.6, 0.0]).unwrap(), 0.3),
            ],
        )
        .unwrap();
        let a = ifs_attractor(&g, &sys, 500, 9).unwrap();
        let b = ifs_attractor(&g, &sys, 500, 9).unwrap();
        assert_eq!(a.points, b.points);
        let c = ifs_attractor(&g, &sys, 500, 10).unwrap();
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn phi_basics() {
        let d = h1();
        let pts = segment_sample(d.group(), 2000, false, 4);
        let nu = EmpiricalMeasure::uniform(pts, 1.0, 1.0).unwrap();
        assert_eq!(
            phi_functional(&nu, &d, 0.0, &[0.5, 0.0, 0.0]).unwrap(),
            nu.total_mass()
        );
        assert!(phi_functional(&nu, &d, 1.0, &[0.5, 0.0, 0.0]).is_err());
        assert!(phi_functional(&nu, &d, 1.5, &[0.5, 0.0, 0.0]).is_err());
        // uniform measure on [0, 1] x {0}: phi(y) = int_0^1 |x - y|^{-t} dx off the segment's ends
        let t = 0.5;
        let y = [0.5, 0.0, 0.0];
        let want = 2.0 * 0.5f64.powf(1.0 - t) / (1.0 - t);
        let got = phi_functional(&nu, &d, t, &y).unwrap();
        assert!((got / want - 1.0).abs() < 0.05, "{got} vs {want}");
    }

    #[test]
    fn regularity_on_a_segment() {
        let d = h1();
        let radii = logspace(0.01, 0.5, 5);
        let mut b = Vec::new();
        for n in [4000, 8000] {
            let nu =
                EmpiricalMeasure::uniform(segment_sample(d.group(), n, false, n as u64), 1.0, 1.0)
                    .unwrap();
            let rep = regularity_check(&d, &nu, 64, &radii, None, 1).unwrap();
            assert!(!rep.diverging, "{rep:?}");
            b.push(rep.b_hat);
        }
        assert!(b[0] / b[1] < 2.0 && b[1] / b[0] < 2.0);
        // s well above the dimension blows up
        let nu =
            EmpiricalMeasure::uniform(segment_sample(d.group(), 8000, false, 2), 1.0, 1.5).unwrap();
        let rep = regularity_check(&d, &nu, 64, &radii, Some(10.0), 1).unwrap();
        assert!(rep.diverging && rep.violations > 0, "{rep:?}");
        // a single atom: the ratio at the atom is w / r^s
        let atom = EmpiricalMeasure::uniform(vec![vec![0.0; 3]], 2.0, 1.0).unwrap();
        let rep = regularity_check(&d, &atom, 1, &[0.1, 0.01], None, 0).unwrap();
        assert!((rep.max_ratio[1] - 200.0).abs() < 1e-9);
        let bad = EmpiricalMeasure::uniform(vec![vec![0.0; 3]], 1.0, 0.0).unwrap();
        assert!(regularity_check(&d, &bad, 1, &[0.1], None, 0).is_err());
        assert!(regularity_check(&d, &atom, 1, &[2.0], None, 0).is_err());
    }
}

//! Potentials `R(x) = int Gamma(y^{-1} o x) dmu(y)` of Radon measures, the
//! stencil sub-Laplacian, and integrals of `R^p` along horizontal curves.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, CarnotError, Result};
use crate::gauge::GaugeFn;
use crate::giraud::{kernel_integral, InequalityCase, QuadSpec};
use crate::group::{CoordBox, GroupStructure, Point};
use crate::hausdorff::EmpiricalMeasure;
use crate::polar::{flow_coords, project_to_sphere_coords, FlowOptions};
use crate::quadrature::{gauss_legendre, integrate_with_breaks, Tolerance};
use crate::rng;
use crate::stats::{fit_loglog, mean_and_stderr, LineFit};
use crate::stencil;

/// Depth of the recursive split of the grid cell holding the evaluation point.
pub const SINGULAR_DEPTH: usize = 6;

/// A potential value; `Infinite` at atoms instead of an overflowed float.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PotentialValue {
    Finite(f64),
    Infinite,
}

impl PotentialValue {
    pub fn is_infinite(&self) -> bool {
        matches!(self, PotentialValue::Infinite)
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            PotentialValue::Finite(v) => Some(*v),
            PotentialValue::Infinite => None,
        }
    }

    /// `f64::INFINITY` for the marker.
    pub fn value(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl Serialize for PotentialValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PotentialValue::Finite(v) => s.serialize_f64(*v),
            PotentialValue::Infinite => s.serialize_str("inf"),
        }
    }
}

/// Piecewise-constant density on a coordinate grid. Cell `i` spans
/// `origin + i * spacing` to `origin + (i + 1) * spacing`; values are
/// row-major with the last axis fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(
        origin: Vec<f64>,
        spacing: Vec<f64>,
        shape: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let dim = origin.len();
        if spacing.len() != dim || shape.len() != dim {
            return domain(
                "density grid origin, spacing and shape must have one entry per coordinate",
            );
        }
        if spacing.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return domain("density grid spacing must be positive");
        }
        if shape.contains(&0) {
            return domain("density grid shape must be positive");
        }
        if values.len() != shape.iter().product::<usize>() {
            return domain("density grid needs one value per cell");
        }
        if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return domain("density values must be finite and nonnegative");
        }
        Ok(DensityGrid {
            origin,
            spacing,
            shape,
            values,
        })
    }

    /// Constant density `value` on `bx`, split into `shape` cells.
    pub fn uniform(bx: &CoordBox, shape: Vec<usize>, value: f64) -> Result<Self> {
        let spacing = bx
            .lo
            .iter()
            .zip(&bx.hi)
            .zip(&shape)
            .map(|((l, h), n)| (h - l) / *n as f64)
            .collect();
        let n = shape.iter().product();
        Self::new(bx.lo.clone(), spacing, shape, vec![value; n])
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn bounds(&self) -> CoordBox {
        let hi = self
            .origin
            .iter()
            .zip(&self.spacing)
            .zip(&self.shape)
            .map(|((o, h), n)| o + h * *n as f64)
            .collect();
        CoordBox {
            lo: self.origin.clone(),
            hi,
        }
    }

    pub fn cell_index(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        let mut rest = flat;
        for k in (0..self.dim()).rev() {
            idx[k] = rest % self.shape[k];
            rest /= self.shape[k];
        }
        idx
    }

    pub fn cell_lo(&self, flat: usize) -> Vec<f64> {
        self.cell_index(flat)
            .iter()
            .enumerate()
            .map(|(k, i)| self.origin[k] + *i as f64 * self.spacing[k])
            .collect()
    }

    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        self.cell_lo(flat)
            .iter()
            .zip(&self.spacing)
            .map(|(l, h)| l + 0.5 * h)
            .collect()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }
}

/// Atoms plus an optional gridded density, all inside `support`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadonMeasure {
    atoms: Vec<(Point, f64)>,
    density: Option<DensityGrid>,
    support: CoordBox,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DensityFile {
    origin: Vec<f64>,
    spacing: Vec<f64>,
    shape: Vec<usize>,
    values_path: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureFile {
    atoms: Vec<(Vec<f64>, f64)>,
    #[serde(default)]
    density: Option<DensityFile>,
    support_box: CoordBox,
}

impl RadonMeasure {
    pub fn new(
        g: &GroupStructure,
        atoms: Vec<(Point, f64)>,
        density: Option<DensityGrid>,
        support: CoordBox,
    ) -> Result<Self> {
        if support.dim() != g.dim() {
            return Err(CarnotError::Dimension {
                expected: g.dim(),
                got: support.dim(),
            });
        }
        for (p, w) in &atoms {
            g.check(p)?;
            if !(*w >= 0.0 && w.is_finite()) {
                return domain("atom weights must be finite and nonnegative");
            }
            if !support.contains(p.coords()) {
                return domain("atoms must lie in the support box");
            }
        }
        if let Some(grid) = &density {
            if grid.dim() != g.dim() {
                return Err(CarnotError::Dimension {
                    expected: g.dim(),
                    got: grid.dim(),
                });
            }
            let b = grid.bounds();
            let slack = 1e-12
                * (1.0
                    + support
                        .hi
                        .iter()
                        .chain(&support.lo)
                        .fold(0.0f64, |m, v| m.max(v.abs())));
            let inside = b.lo.iter().zip(&support.lo).all(|(a, s)| *a >= s - slack)
                && b.hi.iter().zip(&support.hi).all(|(a, s)| *a <= s + slack);
            if !inside {
                return domain("the density grid must lie in the support box");
            }
        }
        Ok(RadonMeasure {
            atoms,
            density,
            support,
        })
    }

    /// Atoms only; the support box is their bounding box.
    pub fn atomic(g: &GroupStructure, atoms: Vec<(Point, f64)>) -> Result<Self> {
        let dim = g.dim();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for (p, _) in &atoms {
            g.check(p)?;
            for i in 0..dim {
                lo[i] = lo[i].min(p.coords()[i]);
                hi[i] = hi[i].max(p.coords()[i]);
            }
        }
        if atoms.is_empty() {
            lo = vec![0.0; dim];
            hi = vec![0.0; dim];
        }
        Self::new(g, atoms, None, CoordBox { lo, hi })
    }

    pub fn zero(g: &GroupStructure) -> Self {
        Self::atomic(g, Vec::new()).expect("empty measure")
    }

    /// A density grid alone, supported on its own bounds.
    pub fn from_density(g: &GroupStructure, grid: DensityGrid) -> Result<Self> {
        let support = grid.bounds();
        Self::new(g, Vec::new(), Some(grid), support)
    }

    pub fn atoms(&self) -> &[(Point, f64)] {
        &self.atoms
    }

    pub fn density(&self) -> Option<&DensityGrid> {
        self.density.as_ref()
    }

    pub fn support(&self) -> &CoordBox {
        &self.support
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|(_, w)| w).sum::<f64>()
            + self.density.as_ref().map_or(0.0, |g| g.mass())
    }

    pub fn scaled(&self, a: f64) -> Result<Self> {
        if !(a >= 0.0 && a.is_finite()) {
            return domain("measures scale by nonnegative factors");
        }
        let mut out = self.clone();
        for (_, w) in &mut out.atoms {
            *w *= a;
        }
        if let Some(grid) = &mut out.density {
            for v in &mut grid.values {
                *v *= a;
            }
        }
        Ok(out)
    }

    /// `self + other`; density grids must share their layout.
    pub fn add(&self, other: &Self) -> Result<Self> {
        let density = match (&self.density, &other.density) {
            (None, None) => None,
            (Some(a), None) => Some(a.clone()),
            (None, Some(b)) => Some(b.clone()),
            (Some(a), Some(b)) => {
                if a.origin != b.origin || a.spacing != b.spacing || a.shape != b.shape {
                    return domain("added densities must share a grid");
                }
                let mut c = a.clone();
                for (v, w) in c.values.iter_mut().zip(&b.values) {
                    *v += w;
                }
                Some(c)
            }
        };
        let support = CoordBox {
            lo: self
                .support
                .lo
                .iter()
                .zip(&other.support.lo)
                .map(|(a, b)| a.min(*b))
                .collect(),
            hi: self
                .support
                .hi
                .iter()
                .zip(&other.support.hi)
                .map(|(a, b)| a.max(*b))
                .collect(),
        };
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        Ok(RadonMeasure {
            atoms,
            density,
            support,
        })
    }

    /// The push-forward under `x -> h o x`. Left translation shears
    /// coordinate grids, so only atomic measures are supported.
    pub fn translated(&self, g: &GroupStructure, h: &Point) -> Result<Self> {
        if self.density.is_some() {
            return domain("left translation of a gridded density is not a grid");
        }
        let atoms = self
            .atoms
            .iter()
            .map(|(p, w)| Ok((g.compose(h, p)?, *w)))
            .collect::<Result<Vec<_>>>()?;
        Self::atomic(g, atoms)
    }

    /// Writes the JSON description and, for a density, a little-endian f64
    /// sidecar named `<stem>.values.bin` next to it.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let density = match &self.density {
            None => None,
            Some(grid) => {
                let stem = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("measure");
                let name = format!("{stem}.values.bin");
                let side = path.with_file_name(&name);
                let bytes: Vec<u8> = grid.values.iter().flat_map(|v| v.to_le_bytes()).collect();
                fs::write(&side, bytes)?;
                Some(DensityFile {
                    origin: grid.origin.clone(),
                    spacing: grid.spacing.clone(),
                    shape: grid.shape.clone(),
                    values_path: name,
                })
            }
        };
        let file = MeasureFile {
            atoms: self
                .atoms
                .iter()
                .map(|(p, w)| (p.coords().to_vec(), *w))
                .collect(),
            density,
            support_box: self.support.clone(),
        };
        fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    /// Reads [`RadonMeasure::write_json`] output; `values_path` is relative
    /// to the JSON file.
    pub fn read_json(g: &GroupStructure, path: &Path) -> Result<Self> {
        let file: MeasureFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        let atoms = file
            .atoms
            .into_iter()
            .map(|(c, w)| Ok((g.point(c)?, w)))
            .collect::<Result<Vec<_>>>()?;
        let density = match file.density {
            None => None,
            Some(df) => {
                let side = path.with_file_name(&df.values_path);
                let bytes = fs::read(&side)?;
                if bytes.len() % 8 != 0 {
                    return domain("density sidecar length is not a multiple of 8 bytes");
                }
                let values = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Some(DensityGrid::new(df.origin, df.spacing, df.shape, values)?)
            }
        };
        Self::new(g, atoms, density, file.support_box)
    }
}

fn gamma(d: &GaugeFn, y: &[f64], x: &[f64]) -> f64 {
    let q = d.group().q();
    d.c_gamma() * d.distance_coords(x, y).powf(2.0 - q)
}

fn gauss_box<F: FnMut(&[f64]) -> f64>(lo: &[f64], hi: &[f64], order: usize, mut f: F) -> f64 {
    let (nodes, weights) = gauss_legendre(order);
    let dim = lo.len();
    let mut idx = vec![0usize; dim];
    let mut x = vec![0.0; dim];
    let vol: f64 = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).product();
    let mut total = 0.0;
    loop {
        let mut w = vol;
        for k in 0..dim {
            x[k] = 0.5 * (lo[k] + hi[k]) + 0.5 * (hi[k] - lo[k]) * nodes[idx[k]];
            w *= weights[idx[k]];
        }
        total += w * f(&x);
        let mut k = 0;
        loop {
            if k == dim {
                return total;
            }
            idx[k] += 1;
            if idx[k] < order {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn in_box(x: &[f64], lo: &[f64], hi: &[f64]) -> bool {
    x.iter()
        .zip(lo)
        .zip(hi)
        .all(|((v, l), h)| *v >= *l && *v < *h)
}

/// `int Gamma(y^{-1} o x) dy` over a cell containing `x`: split in `3^N`,
/// integrate the sub-cells that miss `x` by Gauss rules and recurse into the
/// one that holds it, dropping it at the last level.
fn singular_cell(d: &GaugeFn, x: &[f64], lo: &[f64], hi: &[f64], depth: usize) -> f64 {
    let dim = lo.len();
    let order = if dim <= 4 { 3 } else { 2 };
    let third: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| (b - a) / 3.0).collect();
    let mut total = 0.0;
    let mut sub_lo = vec![0.0; dim];
    let mut sub_hi = vec![0.0; dim];
    for m in 0..3usize.pow(dim as u32) {
        let mut rest = m;
        for k in 0..dim {
            let i = rest % 3;
            rest /= 3;
            sub_lo[k] = lo[k] + i as f64 * third[k];
            sub_hi[k] = if i == 2 { hi[k] } else { sub_lo[k] + third[k] };
        }
        if in_box(x, &sub_lo, &sub_hi) {
            if depth > 0 {
                total += singular_cell(d, x, &sub_lo, &sub_hi, depth - 1);
            }
        } else {
            total += gauss_box(&sub_lo, &sub_hi, order, |y| gamma(d, y, x));
        }
    }
    total
}

/// `plan` picks the rule per cell; stencils pass their centre so that all
/// stencil points see the same rules.
fn density_potential(d: &GaugeFn, grid: &DensityGrid, x: &[f64], plan: &[f64]) -> f64 {
    let vol = grid.cell_volume();
    let order = if grid.dim() <= 4 { 4 } else { 2 };
    let mut total = 0.0;
    for (flat, &v) in grid.values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let lo = grid.cell_lo(flat);
        let hi: Vec<f64> = lo.iter().zip(&grid.spacing).map(|(l, h)| l + h).collect();
        // Chebyshev distance from x to the cell centre, in cells
        let reach = plan
            .iter()
            .zip(&lo)
            .zip(&grid.spacing)
            .map(|((xv, l), h)| ((xv - l) / h - 0.5).abs())
            .fold(0.0, f64::max);
        let contribution = if in_box(plan, &lo, &hi) || in_box(x, &lo, &hi) {
            singular_cell(d, x, &lo, &hi, SINGULAR_DEPTH)
        } else if reach < 2.5 {
            gauss_box(&lo, &hi, order, |y| gamma(d, y, x))
        } else {
            let c = grid.cell_center(flat);
            vol * gamma(d, &c, x)
        };
        total += v * contribution;
    }
    total
}

/// `R(x) = sum_j w_j Gamma(y_j^{-1} o x) + int_grid rho(y) Gamma(y^{-1} o x) dy`.
pub fn potential_eval(d: &GaugeFn, mu: &RadonMeasure, x: &[f64]) -> PotentialValue {
    potential_eval_planned(d, mu, x, x)
}

fn potential_eval_planned(
    d: &GaugeFn,
    mu: &RadonMeasure,
    x: &[f64],
    plan: &[f64],
) -> PotentialValue {
    let mut total = 0.0;
    for (p, w) in &mu.atoms {
        if *w == 0.0 {
            continue;
        }
        let r = d.distance_coords(x, p.coords());
        if r == 0.0 {
            return PotentialValue::Infinite;
        }
        total += w * d.c_gamma() * r.powf(2.0 - d.group().q());
    }
    if let Some(grid) = &mu.density {
        total += density_potential(d, grid, x, plan);
    }
    PotentialValue::Finite(total)
}

pub fn potential_point(d: &GaugeFn, mu: &RadonMeasure, x: &Point) -> Result<PotentialValue> {
    d.group().check(x)?;
    Ok(potential_eval(d, mu, x.coords()))
}

/// Potentials at many points, in input order.
pub fn potential_batch(d: &GaugeFn, mu: &RadonMeasure, xs: &[Vec<f64>]) -> Vec<PotentialValue> {
    xs.par_iter().map(|x| potential_eval(d, mu, x)).collect()
}

/// `sum_i [f(x o h e_i) - 2 f(x) + f(x o -h e_i)] / h^2`.
pub fn sub_laplacian_apply<F: Fn(&[f64]) -> f64>(
    g: &GroupStructure,
    f: F,
    x: &[f64],
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return domain("stencil step must be positive");
    }
    Ok(stencil::sub_laplacian(g, f, x, h))
}

/// Points of a regular grid over `bx` with `n` points per axis, endpoints
/// included.
pub fn box_grid(bx: &CoordBox, n: usize) -> Vec<Vec<f64>> {
    let dim = bx.dim();
    let n = n.max(2);
    let total = n.pow(dim as u32);
    (0..total)
        .map(|m| {
            let mut rest = m;
            (0..dim)
                .map(|k| {
                    let i = rest % n;
                    rest /= n;
                    bx.lo[k] + (bx.hi[k] - bx.lo[k]) * i as f64 / (n - 1) as f64
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SuperharmonicityReport {
    pub n_points: usize,
    /// Points inside the density support, where `-Delta R = rho` is expected.
    pub n_skipped: usize,
    pub min_neg_laplacian: f64,
    pub max_neg_laplacian: f64,
    /// `max |Delta R| / (c sum_j m_j d_j^{-Q})`, the stencil residual relative
    /// to the size of second derivatives of the potential.
    pub max_scaled_residual: f64,
    pub h: f64,
}

fn laplacian_scale(d: &GaugeFn, mu: &RadonMeasure, x: &[f64]) -> f64 {
    let q = d.group().q();
    let mut s: f64 = mu
        .atoms
        .iter()
        .map(|(p, w)| w * d.distance_coords(x, p.coords()).powf(-q))
        .sum();
    if let Some(grid) = &mu.density {
        let vol = grid.cell_volume();
        for (flat, v) in grid.values.iter().enumerate() {
            s += v * vol * d.distance_coords(x, &grid.cell_center(flat)).powf(-q);
        }
    }
    d.c_gamma() * s
}

/// `-Delta_G R` at each grid point outside the density support.
pub fn superharmonicity_scan(
    d: &GaugeFn,
    mu: &RadonMeasure,
    points: &[Vec<f64>],
    h: f64,
) -> Result<SuperharmonicityReport> {
    let g = d.group();
    if !(h > 0.0) {
        return domain("stencil step must be positive");
    }
    for x in points {
        if x.len() != g.dim() {
            return Err(CarnotError::Dimension {
                expected: g.dim(),
                got: x.len(),
            });
        }
        for (p, w) in &mu.atoms {
            if *w > 0.0 && d.distance_coords(x, p.coords()) < 3.0 * h {
                return Err(CarnotError::Precondition(format!(
                    "grid point {x:?} lies within 3h of an atom"
                )));
            }
        }
    }
    let support = mu.density.as_ref().map(|grid| grid.bounds());
    let kept: Vec<&Vec<f64>> = points
        .iter()
        .filter(|x| support.as_ref().is_none_or(|b| !b.contains(x)))
        .collect();
    let rows: Vec<(f64, f64)> = kept
        .par_iter()
        .map(|x| {
            let lap =
                stencil::sub_laplacian(g, |y| potential_eval_planned(d, mu, y, x).value(), x, h);
            let scale = laplacian_scale(d, mu, x);
            (
                -lap,
                if scale > 0.0 {
                    lap.abs() / scale
                } else {
                    lap.abs()
                },
            )
        })
        .collect();
    Ok(SuperharmonicityReport {
        n_points: kept.len(),
        n_skipped: points.len() - kept.len(),
        min_neg_laplacian: rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
        max_neg_laplacian: rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max),
        max_scaled_residual: rows.iter().map(|r| r.1).fold(0.0, f64::max),
        h,
    })
}

/// How a horizontal curve moves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveRule {
    /// `gamma(t) = start o (t u, 0)`.
    Fixed { u: Vec<f64> },
    /// `gamma(t) = start o phi(t, v)` with `v` the gauge-sphere projection of
    /// `direction`.
    RadialFlow { direction: Vec<f64> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizontalCurve {
    pub start: Vec<f64>,
    pub rule: CurveRule,
    pub delta: f64,
}

/// Maximum relative horizontality residual accepted for a curve.
pub const HORIZONTALITY_TOL: f64 = 1e-6;

impl HorizontalCurve {
    pub fn fixed(start: &Point, u: Vec<f64>, delta: f64) -> Self {
        HorizontalCurve {
            start: start.coords().to_vec(),
            rule: CurveRule::Fixed { u },
            delta,
        }
    }

    pub fn radial(start: &Point, direction: Vec<f64>, delta: f64) -> Self {
        HorizontalCurve {
            start: start.coords().to_vec(),
            rule: CurveRule::RadialFlow { direction },
            delta,
        }
    }

    /// Checks shapes and resolves the unit-sphere point for radial curves.
    pub fn prepare(&self, d: &GaugeFn) -> Result<PreparedCurve> {
        let g = d.group();
        if self.start.len() != g.dim() {
            return Err(CarnotError::Dimension {
                expected: g.dim(),
                got: self.start.len(),
            });
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return domain("curve length delta must be positive");
        }
        let motion = match &self.rule {
            CurveRule::Fixed { u } => {
                if u.len() != g.n1() {
                    return Err(CarnotError::Dimension {
                        expected: g.n1(),
                        got: u.len(),
                    });
                }
                Motion::Fixed(u.clone())
            }
            CurveRule::RadialFlow { direction } => {
                if direction.len() != g.dim() {
                    return Err(CarnotError::Dimension {
                        expected: g.dim(),
                        got: direction.len(),
                    });
                }
                let v = project_to_sphere_coords(d, direction, &FlowOptions::tight())?;
                Motion::Radial(v)
            }
        };
        Ok(PreparedCurve {
            d: d.clone(),
            start: self.start.clone(),
            motion,
            delta: self.delta,
        })
    }
}

#[derive(Clone, Debug)]
enum Motion {
    Fixed(Vec<f64>),
    Radial(Vec<f64>),
}

/// A curve ready for evaluation.
#[derive(Clone, Debug)]
pub struct PreparedCurve {
    d: GaugeFn,
    start: Vec<f64>,
    motion: Motion,
    delta: f64,
}

impl PreparedCurve {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn point(&self, t: f64) -> Result<Vec<f64>> {
        let g = self.d.group();
        if t == 0.0 {
            return Ok(self.start.clone());
        }
        let step = match &self.motion {
            Motion::Fixed(u) => {
                let mut s = vec![0.0; g.dim()];
                for (k, v) in u.iter().enumerate() {
                    s[k] = t * v;
                }
                s
            }
            Motion::Radial(v) => flow_coords(&self.d, v, t, &FlowOptions::tight())?,
        };
        Ok(g.compose_coords(&self.start, &step))
    }

    /// Largest residual of `dx2/dt = B(x1, dx1/dt) / 2` from central
    /// differences at `samples` times, relative to the horizontal speed.
    pub fn horizontality_residual(&self, samples: usize) -> Result<f64> {
        let g = self.d.group();
        let n1 = g.n1();
        let mut worst: f64 = 0.0;
        for j in 1..=samples.max(1) {
            let t = self.delta * j as f64 / (samples.max(1) + 1) as f64;
            let k = 1e-4 * t;
            let a = self.point(t - k)?;
            let b = self.point(t + k)?;
            let m = self.point(t)?;
            let dx1: Vec<f64> = (0..n1).map(|i| b[i] - a[i]).collect();
            let speed = dx1.iter().map(|v| v * v).sum::<f64>().sqrt() / (2.0 * k);
            for q in 0..g.n2() {
                let lhs = b[n1 + q] - a[n1 + q];
                let rhs = 0.5 * g.bracket_k(q, &m[..n1], &dx1);
                worst = worst.max((lhs - rhs).abs() / (2.0 * k) / speed.max(1.0));
            }
        }
        Ok(worst)
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CurveIntegral {
    pub value: f64,
    pub error: f64,
    pub evals: usize,
    pub converged: bool,
}

/// `int_{t_min}^{delta} R(gamma(t))^p dt` with `p` defaulting to `2/(Q-2)`.
pub fn horizontal_curve_integrate(
    d: &GaugeFn,
    mu: &RadonMeasure,
    curve: &HorizontalCurve,
    exponent: Option<f64>,
    t_min: f64,
) -> Result<CurveIntegral> {
    let prepared = curve.prepare(d)?;
    let res = prepared.horizontality_residual(4)?;
    if !(res <= HORIZONTALITY_TOL) {
        return Err(CarnotError::Structural(format!(
            "curve is not horizontal: residual {res:.3e}"
        )));
    }
    integrate_prepared(d, mu, &prepared, exponent, t_min)
}

fn integrate_prepared(
    d: &GaugeFn,
    mu: &RadonMeasure,
    curve: &PreparedCurve,
    exponent: Option<f64>,
    t_min: f64,
) -> Result<CurveIntegral> {
    let p = match exponent {
        Some(p) => p,
        None => d.group().completeness_exponent()?,
    };
    let delta = curve.delta;
    if !(t_min > 0.0 && t_min < delta) {
        return domain(format!("t_min must lie in (0, delta); got {t_min}"));
    }
    if p == 0.0 {
        return Ok(CurveIntegral {
            value: delta - t_min,
            error: 0.0,
            evals: 0,
            converged: true,
        });
    }
    // geometric breaks resolve the growth near t = 0
    let mut breaks = vec![t_min];
    let mut t = t_min;
    while t * 2.0 < delta {
        t *= 2.0;
        breaks.push(t);
    }
    breaks.push(delta);
    let mut failure: Option<CarnotError> = None;
    let mut f = |t: f64| -> f64 {
        if failure.is_some() {
            return 0.0;
        }
        match curve.point(t) {
            Ok(x) => match potential_eval(d, mu, &x) {
                PotentialValue::Finite(v) => v.powf(p),
                PotentialValue::Infinite => {
                    failure = Some(CarnotError::Singularity(format!(
                        "curve meets an atom at t = {t}"
                    )));
                    0.0
                }
            },
            Err(e) => {
                failure = Some(e);
                0.0
            }
        }
    };
    let r = integrate_with_breaks(&mut f, &breaks, Tolerance::new(1e-14, 1e-10, 200_000));
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(CurveIntegral {
        value: r.value,
        error: r.error,
        evals: r.evals,
        converged: r.converged,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DivergenceReport {
    pub exponent: f64,
    pub t_mins: Vec<f64>,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    /// Log-log slope of the integral against `t_min`; `-1` for a `t^{-2}`
    /// integrand, `0` for a bounded one.
    pub growth: LineFit,
    pub monotone: bool,
    /// Largest change between consecutive `t_min` values.
    pub max_step_change: f64,
    /// Change over the last step; small means the integral has settled.
    pub last_step_change: f64,
    pub diverging: bool,
}

/// The curve integral at decreasing `t_min`; growth signals divergence.
pub fn divergence_probe(
    d: &GaugeFn,
    mu: &RadonMeasure,
    curve: &HorizontalCurve,
    exponent: Option<f64>,
    t_mins: &[f64],
) -> Result<DivergenceReport> {
    if t_mins.len() < 2 {
        return domain("divergence probe needs at least two t_min values");
    }
    let mut t_sorted = t_mins.to_vec();
    t_sorted.sort_by(|a, b| b.total_cmp(a));
    let prepared = curve.prepare(d)?;
    let res = prepared.horizontality_residual(4)?;
    if !(res <= HORIZONTALITY_TOL) {
        return Err(CarnotError::Structural(format!(
            "curve is not horizontal: residual {res:.3e}"
        )));
    }
    let rows: Vec<Result<CurveIntegral>> = t_sorted
        .par_iter()
        .map(|&t| integrate_prepared(d, mu, &prepared, exponent, t))
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let steps: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let monotone = values.windows(2).all(|w| w[1] >= w[0] - 1e-12 * w[0].abs());
    let growth = fit_loglog(
        &t_sorted,
        &values.iter().map(|v| v.max(1e-300)).collect::<Vec<_>>(),
    );
    let p = match exponent {
        Some(p) => p,
        None => d.group().completeness_exponent()?,
    };
    Ok(DivergenceReport {
        exponent: p,
        diverging: growth.slope < -0.5,
        t_mins: t_sorted,
        values,
        errors,
        growth,
        monotone,
        max_step_change: steps.iter().cloned().fold(0.0, f64::max),
        last_step_change: *steps.last().unwrap(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct FinitenessReport {
    pub n: usize,
    pub alpha: f64,
    pub delta: f64,
    pub sample_counts: Vec<usize>,
    pub estimates: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// Relative change over the last doubling.
    pub drift: f64,
    /// The same triple integral with the sphere and radius integrals done in
    /// closed form (Newton's shell theorem) and the outer one summed.
    pub shell_value: f64,
    /// Giraud cross-check: for a few `(p, y)` pairs the box integral that
    /// bounds the inner ball integral, and the ratio times `|y-p|^{N-a-b}`.
    pub giraud: Vec<GiraudCheck>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GiraudCheck {
    pub separation: f64,
    pub ball_value: f64,
    pub box_bound: f64,
    pub ratio: f64,
}

fn sphere_area(n: usize) -> f64 {
    n as f64 * crate::polar::euclidean_ball_volume(n, 1.0)
}

/// `int_0^delta max(r, rho)^{2-N} r^alpha dr`.
fn shell_radial(n: usize, alpha: f64, rho: f64, delta: f64) -> f64 {
    let m = 2.0 - n as f64;
    if rho >= delta {
        return rho.powf(m) * delta.powf(alpha + 1.0) / (alpha + 1.0);
    }
    let e = m + alpha + 1.0;
    let inner = rho.powf(e) / (alpha + 1.0);
    let outer = if e.abs() < 1e-12 {
        (delta / rho).ln()
    } else {
        (delta.powf(e) - rho.powf(e)) / e
    };
    inner + outer
}

/// Point masses standing in for `mu`: atoms, plus one per density cell.
fn point_masses(mu: &RadonMeasure) -> Vec<(Vec<f64>, f64)> {
    let mut out: Vec<(Vec<f64>, f64)> = mu
        .atoms
        .iter()
        .map(|(p, w)| (p.coords().to_vec(), *w))
        .collect();
    if let Some(grid) = &mu.density {
        let vol = grid.cell_volume();
        for (flat, v) in grid.values.iter().enumerate() {
            if *v > 0.0 {
                out.push((grid.cell_center(flat), v * vol));
            }
        }
    }
    out
}

/// Monte-Carlo estimate of
/// `int_{S'} dnu(p) int_{S^{N-1}} dsigma int_0^delta R(p + r sigma) r^alpha dr`
/// in `R^N`, at sample counts `n0, 2 n0, ...` (nested: each estimate reuses
/// the previous samples).
#[allow(clippy::too_many_arguments)]
pub fn euclidean_finiteness_experiment(
    n: usize,
    mu: &RadonMeasure,
    s_prime: &EmpiricalMeasure,
    alpha: f64,
    delta: f64,
    n0: usize,
    doublings: usize,
    seed: u64,
) -> Result<FinitenessReport> {
    let limit = (n as f64 - 4.0) / 2.0;
    match n {
        4 if alpha > 0.0 => return domain(format!("N = 4 needs alpha <= 0; got {alpha}")),
        5 if alpha >= limit => {
            return domain(format!(
                "alpha must be below (N-4)/2 = {limit}; got {alpha}"
            ))
        }
        4 | 5 => {}
        _ => {
            return domain(format!(
                "the finiteness experiment runs in N = 4 or 5; got {n}"
            ))
        }
    }
    if alpha <= -1.0 {
        return domain("alpha must exceed -1");
    }
    if !(delta > 0.0) || n0 == 0 {
        return domain("need delta > 0 and a positive base sample count");
    }
    let g = GroupStructure::euclidean(n)?;
    let d = GaugeFn::new(&g);
    if mu.support.dim() != n || s_prime.points.iter().any(|p| p.len() != n) {
        return Err(CarnotError::Dimension {
            expected: n,
            got: mu.support.dim(),
        });
    }
    let masses = point_masses(mu);
    let area = sphere_area(n);
    let nu_mass = s_prime.total_mass();
    let total = n0 << doublings;

    // closed form of the inner two integrals for each (p, y), summed over S'
    let shell_value: f64 = s_prime
        .points
        .iter()
        .zip(&s_prime.weights)
        .map(|(p, wp)| {
            wp * masses
                .iter()
                .map(|(y, w)| {
                    let rho = d.distance_coords(p, y);
                    w * d.c_gamma() * area * shell_radial(n, alpha, rho, delta)
                })
                .sum::<f64>()
        })
        .sum();

    let mut cum = Vec::with_capacity(s_prime.len());
    let mut acc = 0.0;
    for w in &s_prime.weights {
        acc += w;
        cum.push(acc);
    }
    let samples: Vec<Result<f64>> = (0..total)
        .into_par_iter()
        .map(|i| {
            if masses.is_empty() || s_prime.is_empty() || nu_mass == 0.0 {
                return Ok(0.0);
            }
            let mut r = rng::stream(seed, i as u64);
            let u: f64 = r.random::<f64>() * nu_mass;
            let k = cum.partition_point(|c| *c <= u).min(cum.len() - 1);
            let p = &s_prime.points[k];
            let sigma = rng::unit_vector(&mut r, n);
            // break the radius at the closest approach to each mass
            let mut breaks = vec![0.0, delta];
            for (y, _) in &masses {
                let t: f64 = y
                    .iter()
                    .zip(p)
                    .zip(&sigma)
                    .map(|((a, b), s)| (a - b) * s)
                    .sum();
                if t > 0.0 && t < delta {
                    breaks.push(t);
                }
            }
            breaks.sort_by(f64::total_cmp);
            let mut f = |rad: f64| {
                let x: Vec<f64> = p.iter().zip(&sigma).map(|(a, s)| a + rad * s).collect();
                masses
                    .iter()
                    .map(|(y, w)| w * d.c_gamma() * d.distance_coords(&x, y).powf(2.0 - n as f64))
                    .sum::<f64>()
                    * rad.powf(alpha)
            };
            let q = integrate_with_breaks(&mut f, &breaks, Tolerance::new(1e-12, 1e-8, 100_000));
            Ok(q.value * area * nu_mass)
        })
        .collect();
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let mut sample_counts = Vec::new();
    let mut estimates = Vec::new();
    let mut stderrs = Vec::new();
    for k in 0..=doublings {
        let m = n0 << k;
        let (mean, se) = mean_and_stderr(&samples[..m]);
        sample_counts.push(m);
        estimates.push(mean);
        stderrs.push(se);
    }
    let drift = if estimates.len() >= 2 {
        let (a, b) = (
            estimates[estimates.len() - 2],
            estimates[estimates.len() - 1],
        );
        if b == 0.0 {
            0.0
        } else {
            (b - a).abs() / b.abs()
        }
    } else {
        0.0
    };

    let mut giraud = Vec::new();
    if n == 5 {
        let a = alpha + 1.0;
        let b = 2.0;
        for (p, _) in s_prime.points.iter().zip(&s_prime.weights).take(3) {
            for (y, _) in masses.iter().take(2) {
                let lo: Vec<f64> = p.iter().zip(y).map(|(u, v)| u.min(*v) - delta).collect();
                let hi: Vec<f64> = p.iter().zip(y).map(|(u, v)| u.max(*v) + delta).collect();
                let case = InequalityCase::new(
                    &g,
                    CoordBox::new(lo, hi)?,
                    a,
                    b,
                    g.point(p.clone())?,
                    g.point(y.clone())?,
                )?;
                let k = kernel_integral(&case, &QuadSpec::default())?;
                let rho = d.distance_coords(p, y);
                giraud.push(GiraudCheck {
                    separation: rho,
                    ball_value: area * shell_radial(n, alpha, rho, delta),
                    box_bound: k.value,
                    ratio: k.value * rho.powf(n as f64 - a - b),
                });
            }
        }
    }
    Ok(FinitenessReport {
        n,
        alpha,
        delta,
        sample_counts,
        estimates,
        stderrs,
        drift,
        shell_value,
        giraud,
    })
}

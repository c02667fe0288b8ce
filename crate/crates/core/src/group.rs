//! Homogeneous Carnot groups of step at most two in exponential coordinates.
//!
//! A group is described by its layer dimensions `(n1, n2)` and `n2`
//! skew-symmetric `n1 x n1` matrices `J_k`. The bracket is
//! `B_k(x, x') = <J_k x, x'>` and the group law is
//!
//! ```text
//! (a1, a2) o (b1, b2) = (a1 + b1, a2 + b2 + B(a1, b1) / 2)
//! ```
//!
//! so the inverse is plain negation. The built-in step-two groups are all of
//! Heisenberg type: `(sum_k z_k J_k)^2 = -|z|^2 Id`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, CarnotError, Result};
use crate::hypercomplex;
use crate::rng;

/// Skew-symmetry tolerance for bracket matrices.
pub const SKEW_TOL: f64 = 1e-12;
/// Tolerance of the H-type identity `(sum z_k J_k)^2 = -c^2 |z|^2 Id`.
pub const HTYPE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub n1: usize,
    pub n2: usize,
}

impl LayerSpec {
    pub fn new(n1: usize, n2: usize) -> Result<Self> {
        if n1 == 0 {
            return domain("first layer must have at least one coordinate");
        }
        Ok(LayerSpec { n1, n2 })
    }

    /// Ambient dimension `N = n1 + n2`.
    pub fn ambient(&self) -> usize {
        self.n1 + self.n2
    }

    /// Homogeneous dimension `Q = n1 + 2 n2`.
    pub fn homogeneous(&self) -> usize {
        self.n1 + 2 * self.n2
    }

    /// Dilation weight (1 or 2) of each ambient coordinate.
    pub fn weights(&self) -> Vec<i32> {
        let mut w = vec![1; self.n1];
        w.extend(std::iter::repeat_n(2, self.n2));
        w
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GroupKind {
    Euclidean,
    Heisenberg(usize),
    Quaternionic(usize),
    Octonionic,
    Custom,
}

impl GroupKind {
    pub fn tag(&self) -> &'static str {
        match self {
            GroupKind::Euclidean => "euclidean",
            GroupKind::Heisenberg(_) => "heisenberg",
            GroupKind::Quaternionic(_) => "quaternionic",
            GroupKind::Octonionic => "octonionic",
            GroupKind::Custom => "custom",
        }
    }
}

/// A point in layered exponential coordinates. Coordinates are stored flat,
/// first layer followed by second layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    coords: Vec<f64>,
    n1: usize,
}

impl Point {
    pub fn new(first: Vec<f64>, second: Vec<f64>) -> Self {
        let n1 = first.len();
        let mut coords = first;
        coords.extend(second);
        Point { coords, n1 }
    }

    pub fn from_coords(coords: Vec<f64>, n1: usize) -> Self {
        assert!(n1 <= coords.len());
        Point { coords, n1 }
    }

    pub fn first(&self) -> &[f64] {
        &self.coords[..self.n1]
    }

    pub fn second(&self) -> &[f64] {
        &self.coords[self.n1..]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Point) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct GroupStructure {
    layers: LayerSpec,
    /// Row-major `n1 x n1` bracket matrices.
    jmaps: Vec<Vec<f64>>,
    kind: GroupKind,
    /// `c^2` in `J_z^2 = -c^2 |z|^2 Id`; 1 for the built-in groups.
    htype_scale: f64,
}

impl GroupStructure {
    pub fn euclidean(n: usize) -> Result<Self> {
        Ok(GroupStructure {
            layers: LayerSpec::new(n, 0)?,
            jmaps: Vec::new(),
            kind: GroupKind::Euclidean,
            htype_scale: 1.0,
        })
    }

    /// Heisenberg group `H^n` on `R^{2n} x R` with block-diagonal symplectic
    /// form, `J e_{2i-1} = e_{2i}`.
    pub fn heisenberg(n: usize) -> Result<Self> {
        if n == 0 {
            return domain("heisenberg group needs n >= 1");
        }
        let n1 = 2 * n;
        let mut j = vec![0.0; n1 * n1];
        for b in 0..n {
            let (p, q) = (2 * b, 2 * b + 1);
            j[q * n1 + p] = 1.0;
            j[p * n1 + q] = -1.0;
        }
        Self::validated(LayerSpec::new(n1, 1)?, vec![j], GroupKind::Heisenberg(n))
    }

    /// Quaternionic Heisenberg group on `H^n x Im H`; bracket maps are right
    /// multiplication by `i, j, k` on each quaternion block.
    pub fn quaternionic(n: usize) -> Result<Self> {
        if n == 0 {
            return domain("quaternionic heisenberg group needs n >= 1");
        }
        let units = hypercomplex::quaternion_right_units();
        let jmaps = units.iter().map(|u| block_diagonal(u, 4, n)).collect();
        Self::validated(LayerSpec::new(4 * n, 3)?, jmaps, GroupKind::Quaternionic(n))
    }

    /// Octonionic Heisenberg group on `O x Im O`.
    pub fn octonionic() -> Result<Self> {
        Self::validated(
            LayerSpec::new(8, 7)?,
            hypercomplex::octonion_right_units(),
            GroupKind::Octonionic,
        )
    }

    /// A user-supplied step-two group. The maps must be skew and satisfy the
    /// H-type identity up to a common positive scale `c^2`.
    pub fn custom(n1: usize, jmaps: Vec<Vec<f64>>) -> Result<Self> {
        let n2 = jmaps.len();
        Self::validated(LayerSpec::new(n1, n2)?, jmaps, GroupKind::Custom)
    }

    fn validated(layers: LayerSpec, jmaps: Vec<Vec<f64>>, kind: GroupKind) -> Result<Self> {
        let n1 = layers.n1;
        for (k, j) in jmaps.iter().enumerate() {
            if j.len() != n1 * n1 {
                return Err(CarnotError::Structural(format!(
                    "bracket matrix {k} has {} entries, expected {}",
                    j.len(),
                    n1 * n1
                )));
            }
            if j.iter().any(|v| !v.is_finite()) {
                return Err(CarnotError::Structural(format!(
                    "bracket matrix {k} is not finite"
                )));
            }
            for r in 0..n1 {
                for c in 0..n1 {
                    if (j[r * n1 + c] + j[c * n1 + r]).abs() > SKEW_TOL {
                        return Err(CarnotError::Structural(format!(
                            "bracket matrix {k} is not skew-symmetric at ({r}, {c})"
                        )));
                    }
                }
            }
        }
        let mut g = GroupStructure {
            layers,
            jmaps,
            kind,
            htype_scale: 1.0,
        };
        if layers.n2 > 0 {
            let sq = g.j_square(&unit(layers.n2, 0));
            let c2 = -sq[0];
            if c2 <= 0.0 {
                return Err(CarnotError::Structural(
                    "J_1^2 is not negative definite".into(),
                ));
            }
            g.htype_scale = c2;
            let residual = g.htype_residual(1000, 0x4854_5950);
            if residual > HTYPE_TOL * c2 {
                return Err(CarnotError::Structural(format!(
                    "H-type identity fails: residual {residual:e}"
                )));
            }
        }
        Ok(g)
    }

    pub fn layers(&self) -> LayerSpec {
        self.layers
    }

    pub fn kind(&self) -> &GroupKind {
        &self.kind
    }

    pub fn jmaps(&self) -> &[Vec<f64>] {
        &self.jmaps
    }

    pub fn n1(&self) -> usize {
        self.layers.n1
    }

    pub fn n2(&self) -> usize {
        self.layers.n2
    }

    pub fn dim(&self) -> usize {
        self.layers.ambient()
    }

    pub fn homogeneous_dim(&self) -> usize {
        self.layers.homogeneous()
    }

    /// `Q` as a float, the exponent that appears everywhere downstream.
    pub fn q(&self) -> f64 {
        self.layers.homogeneous() as f64
    }

    /// `c^2` in `J_z^2 = -c^2 |z|^2 Id`.
    pub fn htype_scale(&self) -> f64 {
        self.htype_scale
    }

    /// Exponent `2 / (Q - 2)` of the horizontal completeness integral.
    pub fn completeness_exponent(&self) -> Result<f64> {
        let q = self.q();
        if q <= 2.0 {
            return domain("completeness exponent needs Q > 2");
        }
        Ok(2.0 / (q - 2.0))
    }

    pub fn identity(&self) -> Point {
        Point::from_coords(vec![0.0; self.dim()], self.n1())
    }

    pub fn point(&self, coords: Vec<f64>) -> Result<Point> {
        if coords.len() != self.dim() {
            return Err(CarnotError::Dimension {
                expected: self.dim(),
                got: coords.len(),
            });
        }
        Ok(Point::from_coords(coords, self.n1()))
    }

    pub fn check(&self, p: &Point) -> Result<()> {
        if p.dim() != self.dim() || p.n1() != self.n1() {
            return Err(CarnotError::Dimension {
                expected: self.dim(),
                got: p.dim(),
            });
        }
        Ok(())
    }

    /// `J_k x` written into `out`.
    pub fn apply_j(&self, k: usize, x: &[f64], out: &mut [f64]) {
        let n1 = self.n1();
        let j = &self.jmaps[k];
        for r in 0..n1 {
            let row = &j[r * n1..(r + 1) * n1];
            out[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// `B_k(a, b) = <J_k a, b>` for a single k.
    pub fn bracket_k(&self, k: usize, a: &[f64], b: &[f64]) -> f64 {
        let n1 = self.n1();
        let j = &self.jmaps[k];
        let mut s = 0.0;
        for r in 0..n1 {
            if b[r] == 0.0 {
                continue;
            }
            let row = &j[r * n1..(r + 1) * n1];
            let ja: f64 = row.iter().zip(a).map(|(m, v)| m * v).sum();
            s += ja * b[r];
        }
        s
    }

    /// The full bracket `B(a, b)` in `R^{n2}`.
    pub fn bracket(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        (0..self.n2()).map(|k| self.bracket_k(k, a, b)).collect()
    }

    /// Flat-coordinate group law, `out = a o b`.
    pub fn compose_into(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let n1 = self.n1();
        for i in 0..self.dim() {
            out[i] = a[i] + b[i];
        }
        for k in 0..self.n2() {
            out[n1 + k] += 0.5 * self.bracket_k(k, &a[..n1], &b[..n1]);
        }
    }

    pub fn compose_coords(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.compose_into(a, b, &mut out);
        out
    }

    pub fn compose(&self, a: &Point, b: &Point) -> Result<Point> {
        self.check(a)?;
        self.check(b)?;
        Ok(Point::from_coords(
            self.compose_coords(a.coords(), b.coords()),
            self.n1(),
        ))
    }

    pub fn inverse(&self, a: &Point) -> Result<Point> {
        self.check(a)?;
        Ok(Point::from_coords(
            a.coords().iter().map(|v| -v).collect(),
            self.n1(),
        ))
    }

    /// `a^{-1} o b`, the relative position used by every left-invariant kernel.
    pub fn relative_coords(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let n1 = self.n1();
        let mut out: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
        for k in 0..self.n2() {
            out[n1 + k] -= 0.5 * self.bracket_k(k, &a[..n1], &b[..n1]);
        }
        out
    }

    pub fn dilate_coords(&self, lambda: f64, a: &[f64]) -> Vec<f64> {
        let n1 = self.n1();
        let l2 = lambda * lambda;
        a.iter()
            .enumerate()
            .map(|(i, v)| if i < n1 { lambda * v } else { l2 * v })
            .collect()
    }

    pub fn dilate(&self, lambda: f64, a: &Point) -> Result<Point> {
        self.check(a)?;
        if !(lambda > 0.0) || !lambda.is_finite() {
            return domain(format!("dilation factor must be positive, got {lambda}"));
        }
        Ok(Point::from_coords(
            self.dilate_coords(lambda, a.coords()),
            self.n1(),
        ))
    }

    /// `a o (h e_i, 0)`: the time-`h` flow of the left-invariant field `Z_i`
    /// (zero-based `i`).
    pub fn horizontal_translate_coords(&self, a: &[f64], i: usize, h: f64) -> Vec<f64> {
        let n1 = self.n1();
        let mut out = a.to_vec();
        out[i] += h;
        for k in 0..self.n2() {
            // B_k(a1, h e_i) = h (J_k a1)_i
            let row = &self.jmaps[k][i * n1..(i + 1) * n1];
            let ja: f64 = row.iter().zip(&a[..n1]).map(|(m, v)| m * v).sum();
            out[n1 + k] += 0.5 * h * ja;
        }
        out
    }

    /// Checked version of [`horizontal_translate_coords`](Self::horizontal_translate_coords)
    /// with a one-based generator index.
    pub fn horizontal_translate(&self, a: &Point, i: usize, h: f64) -> Result<Point> {
        self.check(a)?;
        if i == 0 || i > self.n1() {
            return domain(format!("generator index {i} outside 1..={}", self.n1()));
        }
        Ok(Point::from_coords(
            self.horizontal_translate_coords(a.coords(), i - 1, h),
            self.n1(),
        ))
    }

    /// Second-layer velocity `B(x1, v) / 2` of a horizontal curve at first
    /// layer position `x1` moving with first-layer velocity `v`.
    pub fn horizontal_lift(&self, x1: &[f64], v: &[f64]) -> Vec<f64> {
        (0..self.n2())
            .map(|k| 0.5 * self.bracket_k(k, x1, v))
            .collect()
    }

    /// `(sum_k z_k J_k)^2`, row-major.
    pub fn j_square(&self, z: &[f64]) -> Vec<f64> {
        let n1 = self.n1();
        let mut m = vec![0.0; n1 * n1];
        for (k, zk) in z.iter().enumerate() {
            for (mv, jv) in m.iter_mut().zip(&self.jmaps[k]) {
                *mv += zk * jv;
            }
        }
        let mut sq = vec![0.0; n1 * n1];
        for r in 0..n1 {
            for c in 0..n1 {
                sq[r * n1 + c] = (0..n1).map(|t| m[r * n1 + t] * m[t * n1 + c]).sum();
            }
        }
        sq
    }

    /// Max over `samples` random unit `z` of `||J_z^2 + c^2 Id||_inf`.
    pub fn htype_residual(&self, samples: usize, seed: u64) -> f64 {
        let n1 = self.n1();
        let n2 = self.n2();
        if n2 == 0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for s in 0..samples {
            let z = if s < n2 {
                unit(n2, s)
            } else {
                rng::unit_vector(&mut rng::stream(seed, s as u64), n2)
            };
            let sq = self.j_square(&z);
            for r in 0..n1 {
                for c in 0..n1 {
                    let target = if r == c { -self.htype_scale } else { 0.0 };
                    worst = worst.max((sq[r * n1 + c] - target).abs());
                }
            }
        }
        worst
    }

    /// A random point with first-layer entries in `[-scale, scale]` and
    /// second-layer entries in `[-scale^2, scale^2]`.
    pub fn random_point<R: Rng>(&self, rng: &mut R, scale: f64) -> Point {
        let n1 = self.n1();
        let coords = (0..self.dim())
            .map(|i| {
                let s = if i < n1 { scale } else { scale * scale };
                s * (2.0 * rng.random::<f64>() - 1.0)
            })
            .collect();
        Point::from_coords(coords, n1)
    }

    pub fn to_spec(&self) -> GroupSpec {
        match self.kind {
            GroupKind::Euclidean => GroupSpec {
                kind: "euclidean".into(),
                n: Some(self.n1()),
                jmaps: None,
            },
            GroupKind::Heisenberg(n) => GroupSpec {
                kind: "heisenberg".into(),
                n: Some(n),
                jmaps: None,
            },
            GroupKind::Quaternionic(n) => GroupSpec {
                kind: "quaternionic".into(),
                n: Some(n),
                jmaps: None,
            },
            GroupKind::Octonionic => GroupSpec {
                kind: "octonionic".into(),
                n: None,
                jmaps: None,
            },
            GroupKind::Custom => {
                let n1 = self.n1();
                let jm = self
                    .jmaps
                    .iter()
                    .map(|j| j.chunks(n1).map(|r| r.to_vec()).collect())
                    .collect();
                GroupSpec {
                    kind: "custom".into(),
                    n: Some(n1),
                    jmaps: Some(jm),
                }
            }
        }
    }

    pub fn from_spec(spec: &GroupSpec) -> Result<Self> {
        let need_n = || {
            spec.n
                .ok_or_else(|| CarnotError::Domain(format!("group kind '{}' needs 'n'", spec.kind)))
        };
        if spec.jmaps.is_some() && spec.kind != "custom" {
            return domain("'jmaps' is only accepted for custom groups");
        }
        match spec.kind.as_str() {
            "euclidean" => Self::euclidean(need_n()?),
            "heisenberg" => Self::heisenberg(need_n()?),
            "quaternionic" => Self::quaternionic(need_n()?),
            "octonionic" => match spec.n {
                None | Some(1) => Self::octonionic(),
                Some(n) => domain(format!("octonionic heisenberg group has n = 1, got {n}")),
            },
            "custom" => {
                let n1 = need_n()?;
                let mats = spec
                    .jmaps
                    .as_ref()
                    .ok_or_else(|| CarnotError::Domain("custom group needs 'jmaps'".into()))?;
                let mut flat = Vec::with_capacity(mats.len());
                for m in mats {
                    if m.len() != n1 || m.iter().any(|r| r.len() != n1) {
                        return Err(CarnotError::Structural(format!(
                            "custom bracket matrices must be {n1} x {n1}"
                        )));
                    }
                    flat.push(m.iter().flatten().copied().collect());
                }
                Self::custom(n1, flat)
            }
            other => domain(format!("unknown group kind '{other}'")),
        }
    }

    pub fn describe(&self) -> String {
        match self.kind {
            GroupKind::Euclidean => format!("R^{}", self.n1()),
            GroupKind::Heisenberg(n) => format!("H^{n}"),
            GroupKind::Quaternionic(n) => format!("quaternionic H^{n}"),
            GroupKind::Octonionic => "octonionic H".to_string(),
            GroupKind::Custom => format!("custom({}, {})", self.n1(), self.n2()),
        }
    }
}

/// JSON form of a group: `{kind, n, jmaps?}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jmaps: Option<Vec<Vec<Vec<f64>>>>,
}

fn unit(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

fn block_diagonal(block: &[f64], size: usize, copies: usize) -> Vec<f64> {
    let n = size * copies;
    let mut m = vec![0.0; n * n];
    for b in 0..copies {
        for r in 0..size {
            for c in 0..size {
                m[(b * size + r) * n + b * size + c] = block[r * size + c];
            }
        }
    }
    m
}

/// An axis-aligned coordinate box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl CoordBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(CarnotError::Dimension {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite())
        {
            return domain("degenerate box: every side must have hi > lo");
        }
        Ok(CoordBox { lo, hi })
    }

    pub fn unit(dim: usize) -> Self {
        CoordBox {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HaarScalingReport {
    /// Monte-Carlo estimate of `m(delta_lambda E) / m(E)`.
    pub ratio: f64,
    pub ratio_stderr: f64,
    /// `lambda^Q`.
    pub expected: f64,
    /// Exact ratio of the two box volumes.
    pub analytic: f64,
    pub samples: usize,
}

/// Monte-Carlo check of `m(delta_lambda E) = lambda^Q m(E)` for a coordinate box.
pub fn haar_scaling_check(
    g: &GroupStructure,
    e: &CoordBox,
    lambda: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<HaarScalingReport> {
    let e = CoordBox::new(e.lo.clone(), e.hi.clone())?;
    if e.dim() != g.dim() {
        return Err(CarnotError::Dimension {
            expected: g.dim(),
            got: e.dim(),
        });
    }
    if !(lambda > 0.0) {
        return domain("dilation factor must be positive");
    }
    if mc_samples < 10_000 {
        return domain("haar scaling check needs at least 1e4 samples");
    }
    let image = CoordBox::new(
        g.dilate_coords(lambda, &e.lo),
        g.dilate_coords(lambda, &e.hi),
    )?;
    let hull = CoordBox {
        lo: e.lo.iter().zip(&image.lo).map(|(a, b)| a.min(*b)).collect(),
        hi: e.hi.iter().zip(&image.hi).map(|(a, b)| a.max(*b)).collect(),
    };
    let inv = 1.0 / lambda;
    let (mut in_e, mut in_img) = (0usize, 0usize);
    for s in 0..mc_samples {
        let mut r = rng::stream(seed, s as u64);
        let x = rng::uniform_in_box(&mut r, &hull.lo, &hull.hi);
        if e.contains(&x) {
            in_e += 1;
        }
        // x in delta_lambda(E) iff delta_{1/lambda}(x) in E
        if e.contains(&g.dilate_coords(inv, &x)) {
            in_img += 1;
        }
    }
    if in_e == 0 || in_img == 0 {
        return Err(CarnotError::Accuracy(
            "no Monte-Carlo hits in one of the boxes".into(),
        ));
    }
    let n = mc_samples as f64;
    let (pe, pi) = (in_e as f64 / n, in_img as f64 / n);
    let ratio = pi / pe;
    // delta-method standard error of a ratio of two binomial proportions
    let rel = ((1.0 - pe) / (n * pe) + (1.0 - pi) / (n * pi)).sqrt();
    Ok(HaarScalingReport {
        ratio,
        ratio_stderr: ratio * rel,
        expected: lambda.powi(g.homogeneous_dim() as i32),
        analytic: image.volume() / e.volume(),
        samples: mc_samples,
    })
}

/// All built-in groups exercised by the algebra checks.
pub fn builtin_groups() -> Vec<GroupStructure> {
    vec![
        GroupStructure::euclidean(3).unwrap(),
        GroupStructure::euclidean(5).unwrap(),
        GroupStructure::heisenberg(1).unwrap(),
        GroupStructure::heisenberg(2).unwrap(),
        GroupStructure::quaternionic(1).unwrap(),
        GroupStructure::octonionic().unwrap(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h1() -> GroupStructure {
        GroupStructure::heisenberg(1).unwrap()
    }

    #[test]
    fn homogeneous_dimensions() {
        assert_eq!(GroupStructure::heisenberg(1).unwrap().homogeneous_dim(), 4);
        assert_eq!(GroupStructure::heisenberg(3).unwrap().homogeneous_dim(), 8);
        assert_eq!(
            GroupStructure::quaternionic(1).unwrap().homogeneous_dim(),
            10
        );
        assert_eq!(
            GroupStructure::quaternionic(2).unwrap().homogeneous_dim(),
            14
        );
        assert_eq!(GroupStructure::octonionic().unwrap().homogeneous_dim(), 22);
        assert_eq!(GroupStructure::euclidean(5).unwrap().homogeneous_dim(), 5);
    }

    #[test]
    fn compose_identity_and_symplectic_example() {
        let g = h1();
        let e = g.identity();
        let p = g.point(vec![0.3, -1.1, 2.5]).unwrap();
        assert_eq!(g.compose(&e, &p).unwrap(), p);
        let a = g.point(vec![1.0, 0.0, 0.0]).unwrap();
        let b = g.point(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(g.compose(&a, &b).unwrap().coords(), &[1.0, 1.0, 0.5]);
        // the bracket is antisymmetric, so the reversed product has -1/2
        assert_eq!(g.compose(&b, &a).unwrap().coords(), &[1.0, 1.0, -0.5]);
    }

    #[test]
    fn inverse_is_negation() {
        let g = h1();
        assert_eq!(g.inverse(&g.identity()).unwrap(), g.identity());
        let p = g.point(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.inverse(&p).unwrap().coords(), &[-1.0, -2.0, -3.0]);
    }

    #[test]
    fn dilation_examples_and_errors() {
        let g = h1();
        let p = g.point(vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(g.dilate(2.0, &p).unwrap().coords(), &[2.0, 2.0, 4.0]);
        assert_eq!(g.dilate(1.0, &p).unwrap(), p);
        assert!(matches!(g.dilate(0.0, &p), Err(CarnotError::Domain(_))));
        assert!(matches!(g.dilate(-1.0, &p), Err(CarnotError::Domain(_))));
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let g = h1();
        let bad = Point::new(vec![1.0, 2.0, 3.0], vec![]);
        let ok = g.identity();
        assert!(matches!(
            g.compose(&bad, &ok),
            Err(CarnotError::Dimension { .. })
        ));
        assert!(matches!(
            g.point(vec![1.0]),
            Err(CarnotError::Dimension { .. })
        ));
    }

    #[test]
    fn horizontal_translate_from_identity() {
        let g = h1();
        let p = g.horizontal_translate(&g.identity(), 1, 0.25).unwrap();
        assert_eq!(p.coords(), &[0.25, 0.0, 0.0]);
        assert!(g.horizontal_translate(&g.identity(), 0, 0.1).is_err());
        assert!(g.horizontal_translate(&g.identity(), 3, 0.1).is_err());
    }

    #[test]
    fn horizontal_translate_matches_compose() {
        let g = GroupStructure::quaternionic(1).unwrap();
        let mut r = rng::stream(3, 0);
        for _ in 0..50 {
            let a = g.random_point(&mut r, 1.0);
            for i in 0..g.n1() {
                let mut step = vec![0.0; g.dim()];
                step[i] = 0.37;
                let via_compose = g.compose_coords(a.coords(), &step);
                let direct = g.horizontal_translate_coords(a.coords(), i, 0.37);
                for (x, y) in via_compose.iter().zip(&direct) {
                    assert!((x - y).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn second_difference_along_generator() {
        let g = h1();
        let f = |x: &[f64]| x[0] * x[0];
        let h = 1e-3;
        let e = g.identity();
        let plus = f(&g.horizontal_translate_coords(e.coords(), 0, h));
        let minus = f(&g.horizontal_translate_coords(e.coords(), 0, -h));
        let d2 = (plus - 2.0 * f(e.coords()) + minus) / (h * h);
        assert!((d2 - 2.0).abs() < 1e-6);
    }

    #[test]
    fn builtin_groups_pass_htype_identity() {
        for g in builtin_groups() {
            assert!(g.htype_residual(1000, 11) < HTYPE_TOL, "{}", g.describe());
            assert_eq!(g.htype_scale(), 1.0);
        }
    }

    #[test]
    fn custom_group_validation() {
        // scaled symplectic form is accepted with c^2 = 4
        let g = GroupStructure::custom(2, vec![vec![0.0, -2.0, 2.0, 0.0]]).unwrap();
        assert!((g.htype_scale() - 4.0).abs() < 1e-15);
        // not skew
        assert!(matches!(
            GroupStructure::custom(2, vec![vec![1.0, 0.0, 0.0, 1.0]]),
            Err(CarnotError::Structural(_))
        ));
        // skew but not H-type: degenerate in one block
        let mut j = vec![0.0; 16];
        j[4] = 1.0;
        j[1] = -1.0;
        assert!(matches!(
            GroupStructure::custom(4, vec![j]),
            Err(CarnotError::Structural(_))
        ));
    }

    #[test]
    fn spec_round_trip() {
        for g in builtin_groups() {
            let spec = g.to_spec();
            let json = serde_json::to_string(&spec).unwrap();
            let back = GroupStructure::from_spec(&serde_json::from_str(&json).unwrap()).unwrap();
            assert_eq!(back.kind(), g.kind());
            assert_eq!(back.jmaps(), g.jmaps());
        }
        let custom = GroupStructure::custom(2, vec![vec![0.0, -1.0, 1.0, 0.0]]).unwrap();
        let back = GroupStructure::from_spec(&custom.to_spec()).unwrap();
        assert_eq!(back.jmaps(), custom.jmaps());
        let bad: std::result::Result<GroupSpec, _> =
            serde_json::from_str(r#"{"kind":"heisenberg","n":1,"x":2}"#);
        assert!(bad.is_err());
        let err = GroupStructure::from_spec(&GroupSpec {
            kind: "heisenberg".into(),
            n: None,
            jmaps: None,
        });
        assert!(err.is_err());
    }

    #[test]
    fn haar_scaling_examples() {
        let g = h1();
        let r = haar_scaling_check(&g, &CoordBox::unit(3), 2.0, 200_000, 5).unwrap();
        assert_eq!(r.expected, 16.0);
        assert_eq!(r.analytic, 16.0);
        assert!((r.ratio - 16.0).abs() < 4.0 * r.ratio_stderr, "{r:?}");
        let r1 = haar_scaling_check(&g, &CoordBox::unit(3), 1.0, 10_000, 5).unwrap();
        assert_eq!(r1.ratio, 1.0);
        let q = GroupStructure::quaternionic(1).unwrap();
        let rq = haar_scaling_check(&q, &CoordBox::unit(7), 2.0, 400_000, 9).unwrap();
        assert_eq!(rq.expected, 1024.0);
        assert_eq!(rq.analytic, 1024.0);
        assert!((rq.ratio - 1024.0).abs() < 4.0 * rq.ratio_stderr, "{rq:?}");
        assert!(haar_scaling_check(&g, &CoordBox::unit(3), 2.0, 100, 5).is_err());
        let degenerate = CoordBox {
            lo: vec![0.0; 3],
            hi: vec![1.0, 0.0, 1.0],
        };
        assert!(matches!(
            haar_scaling_check(&g, &degenerate, 2.0, 10_000, 5),
            Err(CarnotError::Domain(_))
        ));
    }

    fn coords_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, dim)
    }

    proptest! {
        #[test]
        fn group_axioms_hold(
            a in coords_strategy(15),
            b in coords_strategy(15),
            c in coords_strategy(15),
            lambda in 0.1f64..5.0,
        ) {
            for g in builtin_groups() {
                let n = g.dim();
                let (a, b, c) = (&a[..n], &b[..n], &c[..n]);
                let ab_c = g.compose_coords(&g.compose_coords(a, b), c);
                let a_bc = g.compose_coords(a, &g.compose_coords(b, c));
                for (x, y) in ab_c.iter().zip(&a_bc) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
                let inv: Vec<f64> = a.iter().map(|v| -v).collect();
                for v in g.compose_coords(a, &inv).iter().chain(&g.compose_coords(&inv, a)) {
                    prop_assert!(v.abs() < 1e-12);
                }
                let lhs = g.dilate_coords(lambda, &g.compose_coords(a, b));
                let rhs = g.compose_coords(&g.dilate_coords(lambda, a), &g.dilate_coords(lambda, b));
                for (x, y) in lhs.iter().zip(&rhs) {
                    prop_assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
                }
            }
        }
    }
}

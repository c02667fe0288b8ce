//! Finite-difference stencils along the horizontal left-invariant fields.
//!
//! Moving along `Z_i` for time `h` is right translation by `(h e_i, 0)`, so
//! the central second difference of `f` along that curve approximates `Z_i^2 f`
//! with an `O(h^2)` error.

use crate::group::GroupStructure;

/// `sum_i [f(x o h e_i) - 2 f(x) + f(x o (-h) e_i)] / h^2`.
pub fn sub_laplacian<F: Fn(&[f64]) -> f64>(g: &GroupStructure, f: F, x: &[f64], h: f64) -> f64 {
    let f0 = f(x);
    let mut acc = 0.0;
    for i in 0..g.n1() {
        let p = g.horizontal_translate_coords(x, i, h);
        let m = g.horizontal_translate_coords(x, i, -h);
        acc += f(&p) - 2.0 * f0 + f(&m);
    }
    acc / (h * h)
}

/// Central first difference of `f` along `Z_i`.
pub fn horizontal_derivative<F: Fn(&[f64]) -> f64>(
    g: &GroupStructure,
    f: F,
    x: &[f64],
    i: usize,
    h: f64,
) -> f64 {
    let p = g.horizontal_translate_coords(x, i, h);
    let m = g.horizontal_translate_coords(x, i, -h);
    (f(&p) - f(&m)) / (2.0 * h)
}

/// Horizontal gradient `(Z_1 f, ..., Z_n1 f)` by central differences.
pub fn horizontal_gradient<F: Fn(&[f64]) -> f64>(
    g: &GroupStructure,
    f: F,
    x: &[f64],
    h: f64,
) -> Vec<f64> {
    (0..g.n1())
        .map(|i| horizontal_derivative(g, &f, x, i, h))
        .collect()
}

/// Richardson-extrapolated sub-Laplacian from steps `h` and `h / 2`.
pub fn sub_laplacian_richardson<F: Fn(&[f64]) -> f64>(
    g: &GroupStructure,
    f: F,
    x: &[f64],
    h: f64,
) -> f64 {
    let coarse = sub_laplacian(g, &f, x, h);
    let fine = sub_laplacian(g, &f, x, 0.5 * h);
    (4.0 * fine - coarse) / 3.0
}

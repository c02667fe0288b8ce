//! WebAssembly bindings for the browser demo in `www/`. Everything runs on
//! the first Heisenberg group with the Kaplan gauge and `c_Gamma = 1`.
//!
//! The plain Rust functions in [`demo`] carry the logic and are what the
//! native tests exercise; the `#[wasm_bindgen]` wrappers only convert errors.

use wasm_bindgen::prelude::*;

pub mod demo {
    use carnot_core::hausdorff::{box_count, ifs_attractor, IFSSystem};
    use carnot_core::potential::{potential_batch, RadonMeasure};
    use carnot_core::stats::logspace;
    use carnot_core::{GaugeFn, GroupStructure};

    fn h1() -> (GroupStructure, GaugeFn) {
        let g = GroupStructure::heisenberg(1).expect("H1 exists");
        let d = GaugeFn::new(&g);
        (g, d)
    }

    fn triple(v: &[f64], what: &str) -> Result<Vec<f64>, String> {
        if v.len() != 3 || v.iter().any(|x| !x.is_finite()) {
            return Err(format!("{what} needs three finite coordinates"));
        }
        Ok(v.to_vec())
    }

    /// `[d(p^{-1} q), Gamma(p^{-1} q)]`; Gamma is infinite at `p = q`.
    pub fn gauge_pair(p: &[f64], q: &[f64]) -> Result<[f64; 2], String> {
        let (_, d) = h1();
        let dist = d.distance_coords(&triple(p, "p")?, &triple(q, "q")?);
        let gamma = if dist > 0.0 {
            dist.powi(-2)
        } else {
            f64::INFINITY
        };
        Ok([dist, gamma])
    }

    /// Potential of point masses `[x, y, t, w, ...]` on the `n x n` grid of
    /// `(x, y, t0)` with `|x|, |y| <= extent`, rows of constant `y`.
    pub fn potential_slice(
        atoms: &[f64],
        t0: f64,
        extent: f64,
        n: usize,
    ) -> Result<Vec<f64>, String> {
        if atoms.is_empty() || !atoms.len().is_multiple_of(4) {
            return Err("atoms are packed as [x, y, t, weight] quadruples".into());
        }
        if !(extent > 0.0 && t0.is_finite()) || !(2..=400).contains(&n) {
            return Err("need extent > 0, finite t0 and 2 <= n <= 400".into());
        }
        let (g, d) = h1();
        let list = atoms
            .chunks(4)
            .map(|c| {
                Ok((
                    g.point(triple(&c[..3], "atom")?)
                        .map_err(|e| e.to_string())?,
                    c[3],
                ))
            })
            .collect::<Result<Vec<_>, String>>()?;
        let mu = RadonMeasure::atomic(&g, list).map_err(|e| e.to_string())?;
        let step = 2.0 * extent / (n - 1) as f64;
        let pts: Vec<Vec<f64>> = (0..n * n)
            .map(|k| {
                vec![
                    -extent + (k % n) as f64 * step,
                    -extent + (k / n) as f64 * step,
                    t0,
                ]
            })
            .collect();
        Ok(potential_batch(&d, &mu, &pts)
            .iter()
            .map(|v| v.value())
            .collect())
    }

    /// Two-map set `{x/r-scaled copies at e and (1 - r, 0, 0)}`:
    /// `[similarity dimension, box-counting slope, 95% half-width]`.
    pub fn cantor_dimension(ratio: f64, n_points: usize, seed: u64) -> Result<[f64; 3], String> {
        if !(ratio > 0.0 && ratio < 0.5) {
            return Err("ratio must lie in (0, 1/2)".into());
        }
        if !(10_000..=2_000_000).contains(&n_points) {
            return Err("n_points must lie in [1e4, 2e6]".into());
        }
        let (g, d) = h1();
        let shift = g
            .point(vec![1.0 - ratio, 0.0, 0.0])
            .map_err(|e| e.to_string())?;
        let sys = IFSSystem::new(&g, vec![(g.identity(), ratio), (shift, ratio)])
            .map_err(|e| e.to_string())?;
        let sample = ifs_attractor(&g, &sys, n_points, seed).map_err(|e| e.to_string())?;
        let rep =
            box_count(&d, &sample.points, &logspace(0.1, 1e-4, 7)).map_err(|e| e.to_string())?;
        Ok([sys.moran_dimension(), rep.slope, rep.ci])
    }
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = gaugePair)]
pub fn gauge_pair(p: Vec<f64>, q: Vec<f64>) -> Result<Vec<f64>, JsError> {
    demo::gauge_pair(&p, &q).map(|v| v.to_vec()).map_err(js)
}

#[wasm_bindgen(js_name = potentialSlice)]
pub fn potential_slice(
    atoms: Vec<f64>,
    t0: f64,
    extent: f64,
    n: usize,
) -> Result<Vec<f64>, JsError> {
    demo::potential_slice(&atoms, t0, extent, n).map_err(js)
}

#[wasm_bindgen(js_name = cantorDimension)]
pub fn cantor_dimension(ratio: f64, n_points: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    demo::cantor_dimension(ratio, n_points, seed as u64)
        .map(|v| v.to_vec())
        .map_err(js)
}

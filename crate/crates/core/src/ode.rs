//! Dormand–Prince 5(4) embedded Runge–Kutta integrator with adaptive steps.

use crate::error::{CarnotError, Result};

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-9,
            atol: 1e-12,
            h_init: 1e-2,
            h_min: 1e-14,
            max_steps: 200_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evals: usize,
    /// Step size proposed for the next step, useful for restarting.
    pub next_h: f64,
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate `y' = f(t, y)` from `t0` to `t1` (either direction). The
/// right-hand side may fail, which aborts the integration.
pub fn solve<F>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    opts: &OdeOptions,
) -> Result<(Vec<f64>, OdeStats)>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let n = y0.len();
    let mut stats = OdeStats::default();
    let mut y = y0.to_vec();
    let span = t1 - t0;
    if span == 0.0 {
        stats.next_h = opts.h_init;
        return Ok((y, stats));
    }
    let dir = span.signum();
    let mut t = t0;
    let mut h = opts.h_init.abs().min(span.abs()).max(opts.h_min);
    let mut k: [Vec<f64>; 7] = Default::default();
    k[0] = f(t, &y)?;
    stats.evals += 1;
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    loop {
        let remaining = (t1 - t) * dir;
        if remaining <= 1e-15 * span.abs() {
            break;
        }
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        let hs = h * dir;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    let a = A[s][j];
                    if a != 0.0 {
                        acc += hs * a * kj[i];
                    }
                }
                ytmp[i] = acc;
            }
            if s == 6 {
                ynew.copy_from_slice(&ytmp);
            }
            k[s] = f(t + C[s] * hs, &ytmp)?;
            stats.evals += 1;
        }
        let mut err2 = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for (s, ks) in k.iter().enumerate() {
                e += E[s] * ks[i];
            }
            let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            err2 += (hs * e / sc).powi(2);
        }
        let err = (err2 / n as f64).sqrt();
        if err <= 1.0 || h <= opts.h_min {
            if err > 1.0 {
                return Err(CarnotError::Accuracy(format!(
                    "step size underflow at t = {t} (h = {h:e})"
                )));
            }
            t = if last { t1 } else { t + hs };
            y.copy_from_slice(&ynew);
            k[0] = k[6].clone();
            stats.accepted += 1;
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            let proposed = h * fac;
            stats.next_h = proposed;
            if last {
                break;
            }
            h = proposed;
        } else {
            stats.rejected += 1;
            h = (h * (0.9 * err.powf(-0.2)).max(0.1)).max(opts.h_min);
        }
        if stats.accepted + stats.rejected > opts.max_steps {
            return Err(CarnotError::Accuracy(format!(
                "exceeded {} ODE steps",
                opts.max_steps
            )));
        }
    }
    Ok((y, stats))
}

/// Integrate through a sorted (monotone) sequence of output times starting
/// from `(t0, y0)`, returning the state at each time.
pub fn solve_at<F>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    times: &[f64],
    opts: &OdeOptions,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let mut out = Vec::with_capacity(times.len());
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut o = *opts;
    for &tn in times {
        let (yn, st) = solve(&mut f, t, &y, tn, &o)?;
        if st.next_h > 0.0 {
            o.h_init = st.next_h;
        }
        t = tn;
        y = yn;
        out.push(y.clone());
    }
    Ok(out)
}

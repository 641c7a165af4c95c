//! Dormand-Prince 5(4) with step-size control, landing exactly on the
//! requested output times.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct OdeOpts {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub h0: f64,
}

impl Default for OdeOpts {
    fn default() -> Self {
        OdeOpts { rtol: 1e-12, atol: 1e-12, max_steps: 100_000, h0: 0.0 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Clone, Debug, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
}

fn comb<const N: usize>(y: &[f64; N], h: f64, ks: &[(&[f64; N], f64)]) -> [f64; N] {
    let mut o = *y;
    for (k, c) in ks {
        for i in 0..N {
            o[i] += h * c * k[i];
        }
    }
    o
}

/// Integrate `y' = f(t, y)` from `t0` through the monotone list `touts`
/// (all on the same side of `t0`), returning the state at each output time.
pub fn dopri5<const N: usize, F: FnMut(f64, &[f64; N]) -> [f64; N]>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    touts: &[f64],
    opts: OdeOpts,
) -> Result<(Vec<[f64; N]>, OdeStats)> {
    let mut out = Vec::with_capacity(touts.len());
    let mut stats = OdeStats::default();
    if touts.is_empty() {
        return Ok((out, stats));
    }
    let dir = if touts[touts.len() - 1] >= t0 { 1.0 } else { -1.0 };
    let span = (touts[touts.len() - 1] - t0).abs();
    let mut h = if opts.h0 > 0.0 { opts.h0 } else { (span / 16.0).max(1e-6) };
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut steps = 0;
    for &tgt in touts {
        while (tgt - t) * dir > 1e-15 * (1.0 + t.abs()) {
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::OdeToleranceNotMet(format!("step budget exhausted at t = {t}")));
            }
            let remaining = (tgt - t).abs();
            let hh = h.min(remaining) * dir;
            let k2 = f(t + C2 * hh, &comb(&y, hh, &[(&k1, A21)]));
            let k3 = f(t + C3 * hh, &comb(&y, hh, &[(&k1, A31), (&k2, A32)]));
            let k4 = f(t + C4 * hh, &comb(&y, hh, &[(&k1, A41), (&k2, A42), (&k3, A43)]));
            let k5 = f(
                t + C5 * hh,
                &comb(&y, hh, &[(&k1, A51), (&k2, A52), (&k3, A53), (&k4, A54)]),
            );
            let k6 = f(
                t + hh,
                &comb(&y, hh, &[(&k1, A61), (&k2, A62), (&k3, A63), (&k4, A64), (&k5, A65)]),
            );
            let y5 = comb(&y, hh, &[(&k1, B1), (&k3, B3), (&k4, B4), (&k5, B5), (&k6, B6)]);
            let k7 = f(t + hh, &y5);
            let mut err = 0.0f64;
            for i in 0..N {
                let e = hh
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
                err = err.max((e / sc).abs());
            }
            if !err.is_finite() {
                h *= 0.1;
                stats.rejected += 1;
                if h < 1e-14 * (1.0 + t.abs()) {
                    return Err(Error::OdeToleranceNotMet(format!("non-finite state near t = {t}")));
                }
                continue;
            }
            if err <= 1.0 {
                t = if hh.abs() >= remaining { tgt } else { t + hh };
                y = y5;
                k1 = k7;
                stats.accepted += 1;
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                // do not let a short landing step shrink the controller's step
                h = (hh.abs() * fac).max(if hh.abs() < h { h } else { 0.0 });
            } else {
                stats.rejected += 1;
                h = hh.abs() * (0.9 * err.powf(-0.2)).max(0.1);
                if h < 1e-14 * (1.0 + t.abs()) {
                    return Err(Error::OdeToleranceNotMet(format!("step underflow at t = {t}")));
                }
            }
        }
        out.push(y);
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_period() {
        let tau = 2.0 * std::f64::consts::PI;
        let (ys, _) = dopri5(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [1.0, 0.0], &[tau / 4.0, tau], OdeOpts::default())
            .unwrap();
        assert!((ys[0][0]).abs() < 1e-10);
        assert!((ys[1][0] - 1.0).abs() < 1e-10);
        assert!((ys[1][1]).abs() < 1e-10);
    }

    #[test]
    fn backward_in_time() {
        let (ys, _) =
            dopri5(|_, y: &[f64; 1]| [y[0]], 0.0, [1.0], &[-0.5, -1.0], OdeOpts::default()).unwrap();
        assert!((ys[1][0] - (-1.0f64).exp()).abs() < 1e-11);
    }
}

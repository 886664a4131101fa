//! Hybrid equi-angular cube warp of face coordinates.
//!
//! `u` is mapped equi-angularly; `v` is adjusted by `t = 0.4·v·(u² − 1)`.

use std::f64::consts::PI;

use super::ProjectionError;

const HEC_ALPHA: f64 = 0.4;

fn check_domain(u: f64, v: f64) -> Result<(), ProjectionError> {
    if !(u.abs() <= 1.0 && v.abs() <= 1.0) {
        return Err(ProjectionError::OutOfDomain { u, v });
    }
    Ok(())
}

/// Cube-face coordinates to HEC coordinates, both in `[-1, 1]²`.
pub fn hec_forward(u: f64, v: f64) -> Result<(f64, f64), ProjectionError> {
    check_domain(u, v)?;
    Ok(hec_forward_unchecked(u, v))
}

#[inline]
pub(crate) fn hec_forward_unchecked(u: f64, v: f64) -> (f64, f64) {
    let u_h = 4.0 / PI * u.atan();
    let t = HEC_ALPHA * v * (u * u - 1.0);
    let v_h = if t == 0.0 {
        v
    } else {
        // (1 − √(1 − 4t(v − t))) / 2t, rationalized to avoid cancellation at small t.
        2.0 * (v - t) / (1.0 + (1.0 - 4.0 * t * (v - t)).sqrt())
    };
    (u_h, v_h)
}

/// Exact inverse of [`hec_forward`].
pub fn hec_inverse(u_h: f64, v_h: f64) -> Result<(f64, f64), ProjectionError> {
    check_domain(u_h, v_h)?;
    Ok(hec_inverse_unchecked(u_h, v_h))
}

#[inline]
pub(crate) fn hec_inverse_unchecked(u_h: f64, v_h: f64) -> (f64, f64) {
    let u = (PI * u_h / 4.0).tan();
    let a = HEC_ALPHA * (u * u - 1.0);
    let v = v_h / (1.0 - a * (1.0 - v_h * v_h));
    (u, v)
}

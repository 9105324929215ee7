use super::{check_finite, check_square, dagger, hermitian_function, identity, norm_estimate, CMat};
use super::Tolerances;
use crate::error::{Error, Result};

const TAYLOR_DEGREE: usize = 18;

/// `exp(scale * Q)` for anti-Hermitian `Q` by scaling and squaring of the
/// truncated Taylor series. The result is unitary up to round-off.
pub fn expm_antihermitian(q: &CMat, scale: f64) -> Result<CMat> {
    check_square(q, "expm_antihermitian")?;
    check_finite(q, "expm_antihermitian input")?;
    let n = q.nrows();
    let norm = norm_estimate(q);
    let deviation = (q + &dagger(q)).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tol = Tolerances::DEFAULT.anti_hermitian * norm.max(1.0);
    if deviation > tol {
        return Err(Error::NotAntiHermitian { deviation, tolerance: tol });
    }
    if scale == 0.0 || norm == 0.0 {
        return Ok(identity(n));
    }
    let x_norm = norm * scale.abs();
    let squarings = if x_norm > 0.5 {
        (x_norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let factor = scale / 2f64.powi(squarings);
    let x = q.mapv(|z| z * factor);

    // Horner: I + X (I + X/2 (I + X/3 (...)))
    let eye = identity(n);
    let mut acc = eye.clone();
    for k in (1..=TAYLOR_DEGREE).rev() {
        acc = &eye + &x.dot(&acc).mapv(|z| z / (k as f64));
    }
    for _ in 0..squarings {
        acc = acc.dot(&acc);
    }
    Ok(acc)
}

/// `exp(t * H)` for Hermitian `H`, evaluated in its eigenbasis.
pub fn expm_hermitian(h: &CMat, t: f64) -> Result<CMat> {
    hermitian_function(h, |w| (t * w).exp())
}

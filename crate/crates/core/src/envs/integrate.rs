use crate::error::{first_non_finite, Error, Result};

/// Classical fourth-order Runge-Kutta for an autonomous system, applied
/// `substeps` times with step `dt / substeps`.
pub fn rk4_step<const N: usize, F>(
    derivs: F,
    state: [f64; N],
    dt: f64,
    substeps: usize,
) -> Result<[f64; N]>
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    if !(dt > 0.0) || substeps == 0 {
        return Err(Error::InvalidArgument(format!(
            "rk4 needs dt > 0 and substeps >= 1 (dt={dt}, substeps={substeps})"
        )));
    }
    let h = dt / substeps as f64;
    let mut y = state;
    for _ in 0..substeps {
        let k1 = derivs(&y);
        let k2 = derivs(&axpy(&y, 0.5 * h, &k1));
        let k3 = derivs(&axpy(&y, 0.5 * h, &k2));
        let k4 = derivs(&axpy(&y, h, &k3));
        for i in 0..N {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    if let Some(i) = first_non_finite(&y) {
        return Err(Error::numerical("rk4 integration", Some(i)));
    }
    Ok(y)
}

#[inline]
fn axpy<const N: usize>(y: &[f64; N], a: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += a * k[i];
    }
    out
}

//! Small dense-vector helpers shared by the scoring code.

use crate::error::{Error, Result};

/// Inner product accumulated in `f64`.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

pub fn norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit L2 norm in place.
pub fn normalize(v: &mut [f32]) -> Result<()> {
    let n = norm(v);
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::Contract(format!("cannot normalize a vector with norm {n}")));
    }
    for x in v.iter_mut() {
        *x = (f64::from(*x) / n) as f32;
    }
    Ok(())
}

pub fn normalized(mut v: Vec<f32>) -> Result<Vec<f32>> {
    normalize(&mut v)?;
    Ok(v)
}

pub fn check_unit(v: &[f32], tol: f64, what: &str) -> Result<()> {
    let n = norm(v);
    if (n - 1.0).abs() > tol {
        return Err(Error::Contract(format!(
            "{what} must be unit-norm within {tol:e}, got norm {n}"
        )));
    }
    Ok(())
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

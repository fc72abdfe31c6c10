//! Truncations used to localise the Itô formula for `|Y|²` and `|Y|^p`.

use crate::error::{LabError, Result};

/// `x²` on `[-M, M)`, continued linearly with slope `±2M` outside.
pub fn psi_m(x: f64, m: f64) -> f64 {
    if x >= m {
        m * (2.0 * x - m)
    } else if x < -m {
        -m * (2.0 * x + m)
    } else {
        x * x
    }
}

pub fn psi_m_prime(x: f64, m: f64) -> f64 {
    if x >= m {
        2.0 * m
    } else if x < -m {
        -2.0 * m
    } else {
        2.0 * x
    }
}

fn check_np(x: f64, n: f64, p: f64) -> Result<()> {
    if x < 0.0 {
        return Err(LabError::Domain(format!("phi_N,p needs x >= 0, got {x}")));
    }
    if !(n > 0.0 && p > 2.0) {
        return Err(LabError::Argument(format!("phi_N,p needs N > 0 and p > 2, got N = {n}, p = {p}")));
    }
    Ok(())
}

/// `x^{p/2}` on `[0, N)`, continued by its tangent line at `N`.
pub fn phi_np(x: f64, n: f64, p: f64) -> Result<f64> {
    check_np(x, n, p)?;
    Ok(if x < n {
        x.powf(p / 2.0)
    } else {
        n.powf((p - 2.0) / 2.0) * (p / 2.0 * x - (p - 2.0) / 2.0 * n)
    })
}

pub fn phi_np_prime(x: f64, n: f64, p: f64) -> Result<f64> {
    check_np(x, n, p)?;
    Ok(if x < n {
        p / 2.0 * x.powf((p - 2.0) / 2.0)
    } else {
        p / 2.0 * n.powf((p - 2.0) / 2.0)
    })
}

use nalgebra::{DMatrix, DVector};

use crate::error::{FogasError, Result};

/// Solves `a x = b` by LU with partial pivoting.
pub(crate) fn lu_solve(a: DMatrix<f64>, b: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    a.lu().solve(b).ok_or(FogasError::Singular(what))
}

pub(crate) fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub(crate) fn check_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Formats a float with 17 significant digits so it round-trips exactly.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

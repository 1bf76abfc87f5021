//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff (after unit-norm column scaling) below which
/// a design matrix is declared rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Least-squares fit of one or more targets on a shared design.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    /// k × m coefficients, one column per target.
    pub coefficients: DMatrix<f64>,
    /// n × m residuals.
    pub residuals: DMatrix<f64>,
    /// k × m conventional OLS standard errors.
    pub std_errors: DMatrix<f64>,
    /// (ZᵀZ + λI)⁻¹, k × k.
    pub gram_inverse: DMatrix<f64>,
}

/// Solves `min ‖Y − Z B‖² + ridge ‖B‖²` column by column.
///
/// With `ridge == 0` a rank-deficient design is an error; the caller maps the
/// generic [`Error::SingularRegressors`] onto its own vocabulary.
pub fn least_squares(design: &DMatrix<f64>, targets: &DMatrix<f64>, ridge: f64) -> Result<LeastSquares> {
    let (n, k) = design.shape();
    if targets.nrows() != n {
        return Err(Error::Shape(format!(
            "design has {n} rows, targets have {}",
            targets.nrows()
        )));
    }
    if n == 0 || k == 0 {
        return Err(Error::InsufficientObservations("empty design".into()));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidInput(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    if design.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares input".into()));
    }

    let extra = if ridge > 0.0 { k } else { 0 };
    if n + extra < k {
        return Err(Error::InsufficientObservations(format!(
            "{n} rows for {k} regressors"
        )));
    }

    // Augmented system [Z; √λ I] carries the ridge penalty.
    let mut aug = DMatrix::<f64>::zeros(n + extra, k);
    aug.rows_mut(0, n).copy_from(design);
    let root = ridge.sqrt();
    for j in 0..extra {
        aug[(n + j, j)] = root;
    }

    let mut scale = DVector::<f64>::zeros(k);
    for j in 0..k {
        let norm = aug.column(j).norm();
        scale[j] = if norm > 0.0 { norm } else { 1.0 };
        if norm == 0.0 {
            return Err(Error::SingularRegressors(format!("regressor column {j} is identically zero")));
        }
        let s = scale[j];
        aug.column_mut(j).scale_mut(1.0 / s);
    }

    let svd = aug.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_max > 0.0) || s_min / s_max < RANK_TOL {
        return Err(Error::SingularRegressors(format!(
            "condition {:.3e} exceeds tolerance",
            if s_min > 0.0 { s_max / s_min } else { f64::INFINITY }
        )));
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");

    let mut aug_targets = DMatrix::<f64>::zeros(n + extra, targets.ncols());
    aug_targets.rows_mut(0, n).copy_from(targets);

    // B_scaled = V S⁻¹ Uᵀ Y
    let mut uty = u.transpose() * &aug_targets;
    for (i, s) in svd.singular_values.iter().enumerate() {
        uty.row_mut(i).scale_mut(1.0 / s);
    }
    let mut coefficients = v_t.transpose() * uty;
    for j in 0..k {
        coefficients.row_mut(j).scale_mut(1.0 / scale[j]);
    }

    // (AᵀA)⁻¹ in the scaled basis is V S⁻² Vᵀ.
    let mut vs = v_t.transpose();
    for (i, s) in svd.singular_values.iter().enumerate() {
        vs.column_mut(i).scale_mut(1.0 / s);
    }
    let mut gram_inverse = &vs * vs.transpose();
    for i in 0..k {
        for j in 0..k {
            gram_inverse[(i, j)] /= scale[i] * scale[j];
        }
    }

    let residuals = targets - design * &coefficients;
    let dof = n.saturating_sub(k).max(1) as f64;
    let mut std_errors = DMatrix::<f64>::zeros(k, targets.ncols());
    for m in 0..targets.ncols() {
        let sigma2 = residuals.column(m).norm_squared() / dof;
        for j in 0..k {
            std_errors[(j, m)] = (sigma2 * gram_inverse[(j, j)].max(0.0)).sqrt();
        }
    }

    Ok(LeastSquares {
        coefficients,
        residuals,
        std_errors,
        gram_inverse,
    })
}

/// Spectral radius of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    // Unbounded Schur iteration can stall on defective matrices (nilpotent
    // companions), so cap it and fall back to Gelfand's formula.
    match nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 10_000) {
        Some(schur) => schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max),
        None => gelfand_radius(m),
    }
}

/// lim ‖M^k‖^{1/k} by repeated squaring with rescaling.
fn gelfand_radius(m: &DMatrix<f64>) -> f64 {
    let mut a = m.clone();
    let mut log_scale = 0.0;
    let mut k = 1.0;
    for _ in 0..40 {
        let norm = a.norm();
        if norm == 0.0 {
            return 0.0;
        }
        a /= norm;
        log_scale = 2.0 * (log_scale + norm.ln());
        a = &a * &a;
        k *= 2.0;
    }
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    ((log_scale + norm.ln()) / k).exp()
}

/// Companion matrix of a VAR with lag matrices `phis` (each N × N).
pub fn companion(phis: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p = phis.len();
    if p == 0 {
        return DMatrix::zeros(0, 0);
    }
    let n = phis[0].nrows();
    let mut c = DMatrix::<f64>::zeros(n * p, n * p);
    for (i, phi) in phis.iter().enumerate() {
        c.view_mut((0, i * n), (n, n)).copy_from(phi);
    }
    for i in 1..p {
        for d in 0..n {
            c[(i * n + d, (i - 1) * n + d)] = 1.0;
        }
    }
    c
}

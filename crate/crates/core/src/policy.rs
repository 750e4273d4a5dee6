//! Noiseless linear signaling policies `y = L·x` realizing projection-form
//! posteriors.

use crate::error::{Error, Result};
use crate::game::check_feasible;
use crate::linalg::{
    loewner_margin, max_abs, pinv_mat, Mat, PsdMatrix, ProjectionMatrix, SymMatrix, ORTHO_TOL, PINV_CUTOFF,
    PSD_TOL,
};

/// Signal map `y = L·x`. Nash policies are `p×p` with zero rows for
/// directions that stay concealed.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    l: Mat,
}

impl LinearPolicy {
    pub fn new(l: Mat) -> Self {
        LinearPolicy { l }
    }

    pub fn matrix(&self) -> &Mat {
        &self.l
    }

    /// Number of nonzero rows.
    pub fn active_rows(&self) -> usize {
        self.l.row_iter().filter(|r| r.iter().any(|v| *v != 0.0)).count()
    }

    /// Posterior covariance of the MMSE estimate from `y = L·x`.
    pub fn induced_posterior(&self, prior: &Mat) -> Mat {
        induced_posterior(prior, &self.l)
    }
}

/// `Σ·Lᵀ·(L·Σ·Lᵀ)†·L·Σ`.
pub fn induced_posterior(prior: &Mat, l: &Mat) -> Mat {
    let sl = prior * l.transpose();
    let inner = pinv_mat(&(l * &sl), PINV_CUTOFF);
    let s = &sl * inner * sl.transpose();
    (&s + s.transpose()) * 0.5
}

/// Posterior covariance from observing every signal in `policies` jointly.
pub fn joint_posterior(prior: &Mat, policies: &[&Mat]) -> Mat {
    let p = prior.ncols();
    let rows: usize = policies.iter().map(|l| l.nrows()).sum();
    let mut stacked = Mat::zeros(rows, p);
    let mut at = 0;
    for l in policies {
        stacked.rows_mut(at, l.nrows()).copy_from(l);
        at += l.nrows();
    }
    induced_posterior(prior, &stacked)
}

/// `Lᵀ = Σ^{†1/2}·U·Λ` where `P = U·Λ·Uᵀ`, with `Λ` rounded to exact 0/1.
pub(crate) fn policy_from_projection(whiten: &Mat, p: &ProjectionMatrix) -> LinearPolicy {
    let eig = p.sym().eig();
    let n = whiten.nrows();
    let mut l = Mat::zeros(n, n);
    for (j, &lam) in eig.values.iter().enumerate() {
        if lam > 0.5 {
            let row = eig.vectors.column(j).transpose() * whiten;
            l.set_row(j, &row);
        }
    }
    LinearPolicy { l }
}

/// `P' = Σx^{†1/2}·S·Σx^{†1/2}`, which must be an orthogonal projection for
/// `S` to be achievable by a noiseless linear policy.
pub fn posterior_projection(prior: &PsdMatrix, s: &PsdMatrix) -> Result<ProjectionMatrix> {
    let ph = prior.pinv_sqrt(PINV_CUTOFF);
    let p = SymMatrix::from_product(ph.matrix() * s.matrix() * ph.matrix());
    ProjectionMatrix::new(p)
}

/// Nash policy `L` with `Lᵀ = Σx^{−1/2}·U·Λ` from
/// `Σx^{−1/2}·Σ*·Σx^{−1/2} = U·Λ·Uᵀ`. Every sender may use it (or any
/// [`policy_variant`] of it).
pub fn nash_policy_from_posterior(prior: &PsdMatrix, s: &PsdMatrix) -> Result<LinearPolicy> {
    check_feasible(prior, s)?;
    let ph = prior.pinv_sqrt(PINV_CUTOFF);
    let p = ProjectionMatrix::new(SymMatrix::from_product(ph.matrix() * s.matrix() * ph.matrix()))?;
    Ok(policy_from_projection(ph.matrix(), &p))
}

/// `G·L` for `G` with orthonormal columns; induces the same posterior as `L`.
pub fn policy_variant(policy: &LinearPolicy, g: &Mat) -> Result<LinearPolicy> {
    if g.ncols() != policy.l.nrows() {
        return Err(Error::DimError {
            expected: format!("G with {} columns", policy.l.nrows()),
            found: format!("{} columns", g.ncols()),
        });
    }
    let defect = max_abs(&(g.transpose() * g - Mat::identity(g.ncols(), g.ncols())));
    if defect > ORTHO_TOL || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidScaling { defect });
    }
    Ok(LinearPolicy { l: g * &policy.l })
}

/// Entrant policy `B` with `Bᵀ = (Σx − Σ₁)^{†1/2}·U₂·Λ₂`, where
/// `(Σx − Σ₁)^{†1/2}·(Σ* − Σ₁)·(Σx − Σ₁)^{†1/2} = U₂·Λ₂·U₂ᵀ`.
///
/// Together with the incumbent's policy for `Σ₁`, the joint MMSE posterior is
/// `Σ₁ + (Σx−Σ₁)·Bᵀ·(B·(Σx−Σ₁)·Bᵀ)†·B·(Σx−Σ₁) = Σ*`.
pub fn sequential_entry_policy(prior: &PsdMatrix, s1: &PsdMatrix, s: &PsdMatrix) -> Result<LinearPolicy> {
    check_feasible(prior, s1)?;
    check_feasible(prior, s)?;
    let order = loewner_margin(s.sym(), s1.sym())?;
    if order < -PSD_TOL {
        return Err(Error::InfeasiblePosterior { violation: order });
    }
    let gap = PsdMatrix::clamped(prior.matrix() - s1.matrix())
        .map_err(|_| Error::InfeasiblePosterior { violation: order })?;
    let gh = gap.pinv_sqrt(PINV_CUTOFF);
    let p = ProjectionMatrix::new(SymMatrix::from_product(
        gh.matrix() * (s.matrix() - s1.matrix()) * gh.matrix(),
    ))?;
    Ok(policy_from_projection(gh.matrix(), &p))
}

/// `Σ₁ + D·Bᵀ·(B·D·Bᵀ)†·B·D` with `D = Σx − Σ₁`.
pub fn innovation_posterior(prior: &Mat, s1: &Mat, b: &Mat) -> Mat {
    let d = prior - s1;
    s1 + induced_posterior(&d, b)
}

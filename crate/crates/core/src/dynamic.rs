//! Finite-horizon games over a linear Gauss–Markov state
//! `x_k = A·x_{k−1} + w_{k−1}`.
//!
//! Each stage is solved greedily: the static fold runs on the innovation
//! covariance `Σ_k − A·S_{k−1}·Aᵀ`, and the resulting disclosure is added to
//! the propagated posterior `A·S_{k−1}·Aᵀ`. Signals are memoryless linear maps
//! of the current state; the receiver estimates recursively.

use crate::equilibrium::{clamp_into, equilibrium_posterior, stability_certificate};
use crate::error::{Error, Result};
use crate::game::{best_response_gain, check_invertible_weight, incentive_for, trace_cost, Costs, IncentiveMatrix, Player, PlayerCost};
use crate::linalg::{pinv_mat, Mat, PsdMatrix, ProjectionMatrix, SymMatrix, PD_TOL, PINV_CUTOFF, PSD_TOL};
use crate::policy::{policy_from_projection, LinearPolicy};

/// Costs of every player at one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCosts {
    pub senders: Vec<PlayerCost>,
    pub receiver: PlayerCost,
}

/// Dynamics, initial covariance, per-stage costs and the sender ordering used
/// at every stage. Stage indices are 0-based (stage `k` in `0..n` is the
/// `(k+1)`-th decision).
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGameSpec {
    a: Mat,
    sigma0: PsdMatrix,
    sigma_w: PsdMatrix,
    stages: Vec<StageCosts>,
    ordering: Vec<usize>,
    priors: Vec<PsdMatrix>,
}

impl DynamicGameSpec {
    /// Validates shapes, each stage's receiver and the propagated priors.
    pub fn new(a: Mat, sigma0: Mat, sigma_w: Mat, stages: Vec<StageCosts>, ordering: Vec<usize>) -> Result<Self> {
        let p = a.nrows();
        if a.ncols() != p {
            return Err(Error::DimError {
                expected: "square A".into(),
                found: format!("{}x{}", a.nrows(), a.ncols()),
            });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry in A".into()));
        }
        let sigma0 = PsdMatrix::from_mat(sigma0)?;
        let sigma_w = PsdMatrix::from_mat(sigma_w)?;
        if sigma0.dim() != p || sigma_w.dim() != p {
            return Err(Error::DimError {
                expected: format!("{p}x{p} covariances"),
                found: format!("{0}x{0} and {1}x{1}", sigma0.dim(), sigma_w.dim()),
            });
        }
        if stages.is_empty() {
            return Err(Error::InvalidGame("horizon must be at least 1".into()));
        }
        let m = stages[0].senders.len();
        if m == 0 {
            return Err(Error::InvalidGame("at least one sender is required".into()));
        }
        for (k, st) in stages.iter().enumerate() {
            if st.senders.len() != m {
                return Err(Error::InvalidGame(format!(
                    "stage {k} has {} senders, expected {m}",
                    st.senders.len()
                )));
            }
            let t = st.receiver.r.ncols();
            for c in st.senders.iter().chain(std::iter::once(&st.receiver)) {
                if c.q.ncols() != p || c.r.ncols() != t {
                    return Err(Error::DimError {
                        expected: format!("Q with {p} columns and R with {t} columns at stage {k}"),
                        found: format!("{} and {}", c.q.ncols(), c.r.ncols()),
                    });
                }
            }
            check_invertible_weight(&st.receiver.r)?;
        }
        let mut sorted = ordering.clone();
        sorted.sort_unstable();
        if sorted != (0..m).collect::<Vec<_>>() {
            return Err(Error::InvalidOrdering(ordering));
        }
        let priors = propagate(&a, &sigma0, &sigma_w, stages.len())?;
        Ok(DynamicGameSpec {
            a,
            sigma0,
            sigma_w,
            stages,
            ordering,
            priors,
        })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn sigma0(&self) -> &PsdMatrix {
        &self.sigma0
    }

    pub fn sigma_w(&self) -> &PsdMatrix {
        &self.sigma_w
    }

    pub fn stages(&self) -> &[StageCosts] {
        &self.stages
    }

    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn dim_state(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_senders(&self) -> usize {
        self.stages[0].senders.len()
    }
}

/// `Σ_k = A·Σ_{k−1}·Aᵀ + Σ_w` for `k = 1..n`, each required to be positive
/// definite.
pub fn propagate(a: &Mat, sigma0: &PsdMatrix, sigma_w: &PsdMatrix, n: usize) -> Result<Vec<PsdMatrix>> {
    let mut out = Vec::with_capacity(n);
    let mut cur = sigma0.matrix().clone();
    for k in 0..n {
        cur = a * &cur * a.transpose() + sigma_w.matrix();
        let sym = SymMatrix::from_product(cur.clone());
        let low = sym.min_eig();
        if low <= PD_TOL {
            return Err(Error::DegeneratePrior { stage: k, min_eig: low });
        }
        cur = sym.matrix().clone();
        out.push(PsdMatrix::new(sym)?);
    }
    Ok(out)
}

/// Prior covariances `Σ_1..Σ_n` of the state at each stage.
pub fn propagate_prior(spec: &DynamicGameSpec) -> &[PsdMatrix] {
    &spec.priors
}

/// Per-sender incentive matrices `V_k^i` at stage `k`.
pub fn stage_incentives(spec: &DynamicGameSpec, k: usize) -> Result<Vec<IncentiveMatrix>> {
    let st = spec
        .stages
        .get(k)
        .ok_or_else(|| Error::InvalidGame(format!("stage {k} beyond horizon {}", spec.horizon())))?;
    let gain = best_response_gain(&st.receiver)?;
    Ok(st
        .senders
        .iter()
        .enumerate()
        .map(|(i, c)| IncentiveMatrix {
            v: incentive_for(c, &gain),
            owner: Player::Sender(i),
        })
        .collect())
}

/// Greedy dynamic equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicEquilibrium {
    /// `S_k*` for each stage.
    pub posteriors: Vec<PsdMatrix>,
    /// Innovation covariances `Σ_k − A·S_{k−1}*·Aᵀ`.
    pub innovations: Vec<PsdMatrix>,
    /// `P_k` with `S_k* − A·S_{k−1}*·Aᵀ = D_k^{1/2}·P_k·D_k^{1/2}`.
    pub projections: Vec<ProjectionMatrix>,
    pub policies: Vec<LinearPolicy>,
    pub stage_costs: Vec<Costs>,
    /// Per-stage minimum eigenvalue over the senders' whitened incentives.
    pub certificates: Vec<f64>,
}

fn floored_innovation(k: usize, d: Mat) -> Result<PsdMatrix> {
    let sym = SymMatrix::from_product(d);
    let eig = sym.eig();
    let low = eig.values[eig.values.len() - 1];
    if low >= 0.0 {
        return PsdMatrix::new(sym);
    }
    if low < -PSD_TOL * eig.max_abs_value().max(1.0) {
        return Err(Error::DegeneratePrior { stage: k, min_eig: low });
    }
    PsdMatrix::clamped(sym.into_inner())
}

/// Runs the greedy per-stage equilibrium over the whole horizon.
pub fn solve_dynamic(spec: &DynamicGameSpec) -> Result<DynamicEquilibrium> {
    let p = spec.dim_state();
    let n = spec.horizon();
    let mut eq = DynamicEquilibrium {
        posteriors: Vec::with_capacity(n),
        innovations: Vec::with_capacity(n),
        projections: Vec::with_capacity(n),
        policies: Vec::with_capacity(n),
        stage_costs: Vec::with_capacity(n),
        certificates: Vec::with_capacity(n),
    };
    let mut prev = PsdMatrix::zeros(p);
    for k in 0..n {
        let sigma = &spec.priors[k];
        let base = &spec.a * prev.matrix() * spec.a.transpose();
        let d = floored_innovation(k, sigma.matrix() - &base)?;
        let stage = &spec.stages[k];
        let gain = best_response_gain(&stage.receiver)?;
        let vs: Vec<SymMatrix> = stage.senders.iter().map(|c| incentive_for(c, &gain)).collect();
        let disclosed = equilibrium_posterior(&d, &vs, &spec.ordering)?;
        let posterior = if prev.matrix().iter().all(|v| *v == 0.0) {
            disclosed.clone()
        } else {
            clamp_into(sigma, base + disclosed.matrix())?
        };

        let dh = d.pinv_sqrt(PINV_CUTOFF);
        let proj = ProjectionMatrix::new(SymMatrix::from_product(dh.matrix() * disclosed.matrix() * dh.matrix()))?;
        let policy = policy_from_projection(dh.matrix(), &proj);

        let cost = |c: &PlayerCost| trace_cost(&c.q, &incentive_for(c, &gain), sigma.matrix(), posterior.matrix());
        let costs = Costs {
            senders: stage.senders.iter().map(cost).collect(),
            receivers: vec![cost(&stage.receiver)],
        };
        let certificate = stability_certificate(sigma, &posterior, &vs)?;

        eq.innovations.push(d);
        eq.projections.push(proj);
        eq.policies.push(policy);
        eq.stage_costs.push(costs);
        eq.certificates.push(certificate);
        eq.posteriors.push(posterior.clone());
        prev = posterior;
    }
    Ok(eq)
}

/// Memoryless policies `L_k` with `L_kᵀ = D_k^{†1/2}·U_k·Λ_k` from
/// `P_k = U_k·Λ_k·U_kᵀ`.
pub fn dynamic_policies(eq: &DynamicEquilibrium, spec: &DynamicGameSpec) -> Result<Vec<LinearPolicy>> {
    if eq.projections.len() != spec.horizon() || eq.innovations.len() != spec.horizon() {
        return Err(Error::DimError {
            expected: format!("{} stages", spec.horizon()),
            found: format!("{} stages", eq.projections.len()),
        });
    }
    Ok(eq
        .projections
        .iter()
        .zip(&eq.innovations)
        .map(|(p, d)| policy_from_projection(d.pinv_sqrt(PINV_CUTOFF).matrix(), p))
        .collect())
}

/// One step of the receiver's recursive estimator
/// `x̂_k = A·x̂_{k−1} + G_k·(x_k − A·x̂_{k−1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorStage {
    /// `G_k = D_k·L_kᵀ·(L_k·D_k·L_kᵀ)†·L_k`.
    pub gain: Mat,
    /// Innovation covariance `D_k = Cov(x_k − A·x̂_{k−1})`.
    pub innovation: Mat,
    /// `Cov(x̂_k)`.
    pub covariance: Mat,
}

/// Propagates the joint covariance of `(x_k, x̂_k)` under the given policies
/// in closed form, without reference to any solver output.
pub fn estimator_recursion(spec: &DynamicGameSpec, policies: &[LinearPolicy]) -> Result<Vec<EstimatorStage>> {
    let p = spec.dim_state();
    if policies.len() != spec.horizon() {
        return Err(Error::DimError {
            expected: format!("{} policies", spec.horizon()),
            found: format!("{}", policies.len()),
        });
    }
    let a = &spec.a;
    let at = a.transpose();
    let mut pxx = spec.sigma0.matrix().clone();
    let mut pxh = Mat::zeros(p, p);
    let mut phh = Mat::zeros(p, p);
    let eye = Mat::identity(p, p);
    let mut out = Vec::with_capacity(policies.len());
    for l in policies {
        let l = l.matrix();
        if l.ncols() != p {
            return Err(Error::DimError {
                expected: format!("policy with {p} columns"),
                found: format!("{}", l.ncols()),
            });
        }
        let cxx = a * &pxx * &at + spec.sigma_w.matrix();
        let cxh = a * &pxh * &at;
        let chh = a * &phh * &at;
        let d = &cxx - &cxh - cxh.transpose() + &chh;
        let d = (&d + d.transpose()) * 0.5;
        let dl = &d * l.transpose();
        let gain = &dl * pinv_mat(&(l * &dl), PINV_CUTOFF) * l;
        let keep = &eye - &gain;
        pxh = &cxx * gain.transpose() + &cxh * keep.transpose();
        let hh = &gain * &cxx * gain.transpose()
            + &gain * &cxh * keep.transpose()
            + &keep * cxh.transpose() * gain.transpose()
            + &keep * &chh * keep.transpose();
        phh = (&hh + hh.transpose()) * 0.5;
        pxx = cxx;
        out.push(EstimatorStage {
            gain,
            innovation: d,
            covariance: phh.clone(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::solve_ordering;
    use crate::game::GameSpec;
    use crate::linalg::max_abs;
    use approx::assert_abs_diff_eq;

    fn example7(n: usize) -> DynamicGameSpec {
        let stages = (1..=n)
            .map(|k| {
                let w = k as f64 / n as f64;
                StageCosts {
                    senders: vec![
                        PlayerCost::scalar(&[1.0, w, 0.0], -1.0).unwrap(),
                        PlayerCost::scalar(&[1.0, 0.0, 1.0 - w], -1.0).unwrap(),
                    ],
                    receiver: PlayerCost::scalar(&[1.0, 0.0, 0.0], -1.0).unwrap(),
                }
            })
            .collect();
        DynamicGameSpec::new(
            Mat::identity(3, 3),
            Mat::from_row_slice(3, 3, &[1.0, 0.5, 0.5, 0.5, 1.0, 0.0, 0.5, 0.0, 1.0]),
            Mat::identity(3, 3),
            stages,
            vec![0, 1],
        )
        .unwrap()
    }

    #[test]
    fn propagation_cases() {
        let s0 = PsdMatrix::identity(2);
        let sw = PsdMatrix::from_mat(Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let zero = propagate(&Mat::zeros(2, 2), &s0, &sw, 3).unwrap();
        assert!(zero.iter().all(|s| s.matrix() == sw.matrix()));
        let grow = propagate(&Mat::identity(2, 2), &s0, &PsdMatrix::identity(2), 4).unwrap();
        for (k, s) in grow.iter().enumerate() {
            assert_abs_diff_eq!(s.matrix().clone(), Mat::identity(2, 2) * (k as f64 + 2.0), epsilon = 1e-14);
        }
        let spec = example7(10);
        assert_abs_diff_eq!(
            propagate_prior(&spec)[0].matrix().clone(),
            spec.sigma0().matrix() + Mat::identity(3, 3),
            epsilon = 1e-15
        );
    }

    #[test]
    fn degenerate_prior_detected() {
        let err = propagate(&Mat::zeros(2, 2), &PsdMatrix::identity(2), &PsdMatrix::zeros(2), 1).unwrap_err();
        assert!(matches!(err, Error::DegeneratePrior { stage: 0, .. }));
    }

    #[test]
    fn example7_stage_incentives() {
        let n = 10;
        let spec = example7(n);
        for k in 0..n {
            let w = (k + 1) as f64 / n as f64;
            let vs = stage_incentives(&spec, k).unwrap();
            assert_abs_diff_eq!(
                vs[0].v.matrix().clone(),
                Mat::from_row_slice(3, 3, &[-1.0, -w, 0.0, -w, 0.0, 0.0, 0.0, 0.0, 0.0]),
                epsilon = 1e-15
            );
            assert_abs_diff_eq!(
                vs[1].v.matrix().clone(),
                Mat::from_row_slice(3, 3, &[-1.0, 0.0, -(1.0 - w), 0.0, 0.0, 0.0, -(1.0 - w), 0.0, 0.0]),
                epsilon = 1e-15
            );
        }
        assert!(stage_incentives(&spec, n).is_err());
    }

    #[test]
    fn single_stage_matches_static_bitwise() {
        let full = example7(10);
        let spec = DynamicGameSpec::new(
            full.a().clone(),
            full.sigma0().matrix().clone(),
            full.sigma_w().matrix().clone(),
            vec![full.stages()[3].clone()],
            vec![1, 0],
        )
        .unwrap();
        let dynamic = solve_dynamic(&spec).unwrap();
        let st = &spec.stages()[0];
        let g = GameSpec::new(propagate_prior(&spec)[0].matrix().clone(), st.senders.clone(), st.receiver.clone()).unwrap();
        let fixed = solve_ordering(&g, &[1, 0]).unwrap();
        assert_eq!(dynamic.posteriors[0], fixed.posterior);
        assert_eq!(dynamic.stage_costs[0], fixed.costs);
        assert_eq!(dynamic.certificates[0], fixed.certificate);
    }

    #[test]
    fn aligned_senders_reveal_everything() {
        let full = PlayerCost::new(Mat::identity(2, 2), -Mat::identity(2, 2)).unwrap();
        let stages = vec![
            StageCosts {
                senders: vec![full.clone(), full.clone()],
                receiver: full.clone(),
            };
            4
        ];
        let spec = DynamicGameSpec::new(
            Mat::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]),
            Mat::identity(2, 2),
            Mat::identity(2, 2) * 0.5,
            stages,
            vec![0, 1],
        )
        .unwrap();
        let eq = solve_dynamic(&spec).unwrap();
        for (s, sigma) in eq.posteriors.iter().zip(propagate_prior(&spec)) {
            assert!(max_abs(&(s.matrix() - sigma.matrix())) < 1e-10);
        }
        for c in &eq.stage_costs {
            assert_abs_diff_eq!(c.receiver(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn example7_recursion_and_shape() {
        let spec = example7(10);
        let eq = solve_dynamic(&spec).unwrap();
        let a = spec.a();
        let mut prev = Mat::zeros(3, 3);
        for k in 0..10 {
            let base = a * &prev * a.transpose();
            let d = eq.innovations[k].sqrt();
            let rebuilt = &base + d.matrix() * eq.projections[k].matrix() * d.matrix();
            assert!(max_abs(&(rebuilt - eq.posteriors[k].matrix())) < 1e-8);
            assert!(eq.certificates[k] >= -1e-7);
            prev = eq.posteriors[k].matrix().clone();
        }
        let j1: Vec<f64> = eq.stage_costs.iter().map(|c| c.senders[0]).collect();
        assert!(j1.windows(2).all(|w| w[1] > w[0]));
        let jr: Vec<f64> = eq.stage_costs.iter().map(|c| c.receiver()).collect();
        assert!(jr[0] < jr[4] && jr[9] < jr[4]);
    }

    #[test]
    fn closed_form_estimator_matches_posteriors() {
        let spec = example7(10);
        let eq = solve_dynamic(&spec).unwrap();
        let policies = dynamic_policies(&eq, &spec).unwrap();
        assert_eq!(policies, eq.policies);
        let rec = estimator_recursion(&spec, &policies).unwrap();
        for (r, s) in rec.iter().zip(&eq.posteriors) {
            assert!(max_abs(&(&r.covariance - s.matrix())) < 1e-6);
        }
    }

    #[test]
    fn ordering_must_be_permutation() {
        let full = example7(2);
        let err = DynamicGameSpec::new(
            full.a().clone(),
            full.sigma0().matrix().clone(),
            full.sigma_w().matrix().clone(),
            full.stages().to_vec(),
            vec![0, 0],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidOrdering(_)));
    }
}

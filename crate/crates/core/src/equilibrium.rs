//! Static equilibria: stability of a posterior for a sender, best-response
//! disclosure from a given posterior, equilibria folded over sender
//! orderings, and the cooperative benchmark.
//!
//! A posterior `Σ'` is stable for sender `i` when the whitened incentive
//! `W_i = (Σx − Σ')^{1/2}·V_i·(Σx − Σ')^{1/2}` is PSD: no further disclosure
//! lowers `Tr(V_i·S)`. The best response from `Σ'` discloses exactly the
//! strictly negative eigenspace of `W_i`.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{expected_costs, weighted_incentive, Costs, GameSpec, IncentiveMatrix};
use crate::linalg::{
    loewner_margin, projection_from_negative_eigs, Mat, PsdMatrix, ProjectionMatrix, SymMatrix, NEG_EIG_CUTOFF, PINV_CUTOFF,
    PSD_TOL,
};
use crate::policy::{nash_policy_from_posterior, posterior_projection, LinearPolicy};

/// Certificates below `-STABILITY_TOL` are failures.
pub const STABILITY_TOL: f64 = 1e-7;
/// Largest sender count for which all `m!` orderings are enumerated.
pub const ORDERING_CAP: usize = 7;

/// Equilibrium posterior with its projection form, policy and costs.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub posterior: PsdMatrix,
    /// `P'` with `Σ* = Σx^{1/2}·P'·Σx^{1/2}`.
    pub projection: ProjectionMatrix,
    /// Sender indices (0-based) in the order their best responses were folded.
    pub ordering: Vec<usize>,
    pub costs: Costs,
    pub policy: LinearPolicy,
    /// Smallest eigenvalue over all senders' whitened incentives at `Σ*`.
    pub certificate: f64,
}

impl EquilibriumResult {
    pub fn is_certified(&self) -> bool {
        self.certificate >= -STABILITY_TOL
    }
}

/// Minimum eigenvalue of a whitened incentive, with the verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stability {
    pub stable: bool,
    pub min_eig: f64,
}

/// `Σx − Σ'` as a PSD matrix, failing when `Σ'` leaves `[O, Σx]`.
fn disclosure_gap(prior: &PsdMatrix, base: &PsdMatrix) -> Result<PsdMatrix> {
    let upper = loewner_margin(prior.sym(), base.sym())?;
    let lower = base.min_eig() / base.eigen().max_abs_value().max(1.0);
    let worst = upper.min(lower);
    if worst < -PSD_TOL {
        return Err(Error::InfeasiblePosterior { violation: worst });
    }
    PsdMatrix::clamped(prior.matrix() - base.matrix()).map_err(|_| Error::InfeasiblePosterior { violation: worst })
}

fn whiten(gap_sqrt: &Mat, v: &SymMatrix) -> SymMatrix {
    SymMatrix::from_product(gap_sqrt * v.matrix() * gap_sqrt)
}

/// `W = (Σx − Σ')^{1/2}·V·(Σx − Σ')^{1/2}`.
pub fn whitened_incentive(prior: &PsdMatrix, base: &PsdMatrix, v: &IncentiveMatrix) -> Result<SymMatrix> {
    let gap = disclosure_gap(prior, base)?;
    Ok(whiten(gap.sqrt().matrix(), &v.v))
}

/// Stability of `Σ'` for the sender owning `v`.
pub fn is_stable_for(base: &PsdMatrix, v: &IncentiveMatrix, prior: &PsdMatrix) -> Result<Stability> {
    let min_eig = whitened_incentive(prior, base, v)?.min_eig();
    Ok(Stability {
        stable: min_eig >= -STABILITY_TOL,
        min_eig,
    })
}

/// Smallest eigenvalue over the whitened incentives of all `vs` at `s`.
pub fn stability_certificate(prior: &PsdMatrix, s: &PsdMatrix, vs: &[SymMatrix]) -> Result<f64> {
    let gap = disclosure_gap(prior, s)?;
    let root = gap.sqrt();
    Ok(vs
        .iter()
        .map(|v| whiten(root.matrix(), v).min_eig())
        .fold(f64::INFINITY, f64::min))
}

/// Re-symmetrizes and clamps `s` into `[O, Σx]`.
pub(crate) fn clamp_into(prior: &PsdMatrix, s: Mat) -> Result<PsdMatrix> {
    let s = PsdMatrix::clamped(s).map_err(|e| match e {
        Error::NotPsd { min_eig } => Error::InfeasiblePosterior { violation: min_eig },
        other => other,
    })?;
    let gap = prior.matrix() - s.matrix();
    let gap_sym = SymMatrix::from_product(gap.clone());
    if gap_sym.min_eig() >= 0.0 {
        return Ok(s);
    }
    let gap = PsdMatrix::clamped(gap).map_err(|e| match e {
        Error::NotPsd { min_eig } => Error::InfeasiblePosterior { violation: min_eig },
        other => other,
    })?;
    PsdMatrix::clamped(prior.matrix() - gap.matrix())
        .map_err(|_| Error::InfeasiblePosterior { violation: gap_sym.min_eig() })
}

/// `D^{1/2}` with eigenvalues below `PINV_CUTOFF·max(1, λ_max)` treated as
/// zero; the square root would otherwise lift rounding noise in fully
/// disclosed directions to the order of `1e−8`.
fn gap_root(gap: &PsdMatrix) -> Mat {
    let e = gap.eigen();
    let cutoff = PINV_CUTOFF * e.max_abs_value().max(1.0);
    e.reconstruct_with(|l| if l > cutoff { l.sqrt() } else { 0.0 })
}

fn best_response_raw(prev: &PsdMatrix, v: &SymMatrix, prior: &PsdMatrix) -> Result<PsdMatrix> {
    let gap = disclosure_gap(prior, prev)?;
    let root = gap_root(&gap);
    let w = whiten(&root, v);
    let p = projection_from_negative_eigs(&w, NEG_EIG_CUTOFF);
    if p.rank() == 0 {
        return Ok(prev.clone());
    }
    let s = prev.matrix() + &root * p.matrix() * &root;
    clamp_into(prior, s)
}

/// `S = Σ_prev + D^{1/2}·P·D^{1/2}` with `D = Σx − Σ_prev` and `P` the
/// projection onto the strictly negative eigenspace of the whitened
/// incentive. Returns `Σ_prev` unchanged when it is already stable.
pub fn best_response_posterior(prev: &PsdMatrix, v: &IncentiveMatrix, prior: &PsdMatrix) -> Result<PsdMatrix> {
    best_response_raw(prev, &v.v, prior)
}

/// Minimizer of `Tr(V·S)` over `Σx ⪰ S ⪰ O` with the least disclosure:
/// `Σx^{1/2}·P*·Σx^{1/2}`.
pub fn single_sender_optimum(prior: &PsdMatrix, v: &IncentiveMatrix) -> PsdMatrix {
    single_sender_optimum_of(prior, &v.v)
}

fn single_sender_optimum_of(prior: &PsdMatrix, v: &SymMatrix) -> PsdMatrix {
    best_response_raw(&PsdMatrix::zeros(prior.dim()), v, prior)
        .expect("the zero posterior is always feasible")
}

fn check_permutation(order: &[usize], m: usize) -> Result<()> {
    let mut seen = vec![false; m];
    if order.len() != m {
        return Err(Error::InvalidOrdering(order.to_vec()));
    }
    for &i in order {
        if i >= m || seen[i] {
            return Err(Error::InvalidOrdering(order.to_vec()));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Folds best responses over `order` starting from `O`.
pub fn equilibrium_posterior(prior: &PsdMatrix, vs: &[SymMatrix], order: &[usize]) -> Result<PsdMatrix> {
    check_permutation(order, vs.len())?;
    let mut s = PsdMatrix::zeros(prior.dim());
    for &i in order {
        s = best_response_raw(&s, &vs[i], prior)?;
    }
    Ok(s)
}

/// Projection form, policy and certificate for a folded posterior.
pub(crate) fn assemble(
    prior: &PsdMatrix,
    vs: &[SymMatrix],
    order: &[usize],
    posterior: PsdMatrix,
    costs: Costs,
) -> Result<EquilibriumResult> {
    let projection = posterior_projection(prior, &posterior)?;
    let policy = nash_policy_from_posterior(prior, &posterior)?;
    let certificate = stability_certificate(prior, &posterior, vs)?;
    Ok(EquilibriumResult {
        posterior,
        projection,
        ordering: order.to_vec(),
        costs,
        policy,
        certificate,
    })
}

/// Equilibrium reached when senders best-respond in the order `order`
/// (0-based sender indices; the first entry moves first).
pub fn solve_ordering(g: &GameSpec, order: &[usize]) -> Result<EquilibriumResult> {
    let vs: Vec<SymMatrix> = g.incentives()?.into_iter().map(|v| v.v).collect();
    let posterior = equilibrium_posterior(g.prior(), &vs, order)?;
    let costs = expected_costs(g, &posterior)?;
    assemble(g.prior(), &vs, order, posterior, costs)
}

/// All permutations of `0..m` in lexicographic order.
pub fn permutations(m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..m).collect();
    loop {
        out.push(cur.clone());
        // Next lexicographic permutation.
        let Some(i) = (1..m).rev().find(|&i| cur[i - 1] < cur[i]) else {
            break;
        };
        let j = (i..m).rev().find(|&j| cur[j] > cur[i - 1]).expect("pivot exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

/// Equilibrium for every ordering, keyed by ordering. Fails with
/// `TooManyOrderings` above [`ORDERING_CAP`] senders.
pub fn enumerate_orderings(g: &GameSpec) -> Result<BTreeMap<Vec<usize>, EquilibriumResult>> {
    let m = g.num_senders();
    if m > ORDERING_CAP {
        return Err(Error::TooManyOrderings { m, cap: ORDERING_CAP });
    }
    solve_orderings(g, &permutations(m))
}

/// Equilibria for an explicit list of orderings.
pub fn solve_orderings(g: &GameSpec, orders: &[Vec<usize>]) -> Result<BTreeMap<Vec<usize>, EquilibriumResult>> {
    orders
        .par_iter()
        .map(|o| solve_ordering(g, o).map(|r| (o.clone(), r)))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().collect())
}

/// Optimum of the weighted-sum objective `Tr((Σ w_i V_i)·S)`.
pub fn cooperative_optimum(g: &GameSpec, weights: &[f64]) -> Result<PsdMatrix> {
    if weights.len() != g.num_senders()
        || weights.iter().any(|w| !w.is_finite() || *w < 0.0)
        || weights.iter().all(|w| *w == 0.0)
    {
        return Err(Error::InvalidWeights);
    }
    let v = weighted_incentive(&g.incentives()?, weights);
    Ok(single_sender_optimum_of(g.prior(), &v))
}

/// Checks that every equilibrium of `g` found by ordering enumeration is
/// stable for each sender in `subset`.
pub fn stable_set_shrinkage_check(g: &GameSpec, subset: &[usize]) -> Result<bool> {
    if subset.iter().any(|&i| i >= g.num_senders()) {
        return Err(Error::InvalidGame(format!("subset {subset:?} is not within the sender set")));
    }
    let vs = g.incentives()?;
    for eq in enumerate_orderings(g)?.values() {
        for &i in subset {
            if !is_stable_for(&eq.posterior, &vs[i], g.prior())?.stable {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{incentive_matrix, Player, PlayerCost};
    use approx::assert_abs_diff_eq;

    fn example1() -> GameSpec {
        GameSpec::new(
            Mat::from_row_slice(3, 3, &[1.0, 0.5, 0.7, 0.5, 1.5, 0.2, 0.7, 0.2, 1.0]),
            vec![
                PlayerCost::scalar(&[1.0, 1.0, 0.0], -1.0).unwrap(),
                PlayerCost::scalar(&[1.0, 0.0, 1.0], -1.0).unwrap(),
            ],
            PlayerCost::scalar(&[1.0, 0.0, 0.0], -1.0).unwrap(),
        )
        .unwrap()
    }

    fn incentive(v: SymMatrix) -> IncentiveMatrix {
        IncentiveMatrix {
            v,
            owner: Player::Sender(0),
        }
    }

    #[test]
    fn whitened_at_full_revelation_is_zero() {
        let g = example1();
        let v = incentive_matrix(&g, 0).unwrap();
        let w = whitened_incentive(g.prior(), g.prior(), &v).unwrap();
        assert!(w.matrix().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn whitened_identity_prior() {
        let v = incentive(SymMatrix::from_diagonal(&[-1.0, 1.0]));
        let w = whitened_incentive(&PsdMatrix::identity(2), &PsdMatrix::zeros(2), &v).unwrap();
        assert_abs_diff_eq!(w.into_inner(), SymMatrix::from_diagonal(&[-1.0, 1.0]).into_inner(), epsilon = 1e-15);
    }

    #[test]
    fn concealment_unstable_in_example1() {
        let g = example1();
        let v = incentive_matrix(&g, 0).unwrap();
        let w = whitened_incentive(g.prior(), &PsdMatrix::zeros(3), &v).unwrap();
        assert!(w.min_eig() < 0.0);
        assert!(!is_stable_for(&PsdMatrix::zeros(3), &v, g.prior()).unwrap().stable);
        assert!(is_stable_for(g.prior(), &v, g.prior()).unwrap().stable);
    }

    #[test]
    fn single_sender_extremes() {
        let prior = PsdMatrix::from_mat(Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let aligned = incentive(SymMatrix::from_diagonal(&[-1.0, -2.0]));
        assert_abs_diff_eq!(
            single_sender_optimum(&prior, &aligned).matrix().clone(),
            prior.matrix().clone(),
            epsilon = 1e-12
        );
        let opposed = incentive(SymMatrix::from_diagonal(&[1.0, 2.0]));
        assert_eq!(single_sender_optimum(&prior, &opposed).matrix(), &Mat::zeros(2, 2));
        let mixed = incentive(SymMatrix::from_diagonal(&[-1.0, 1.0]));
        let s = single_sender_optimum(&PsdMatrix::identity(2), &mixed);
        assert_abs_diff_eq!(s.matrix().clone(), SymMatrix::from_diagonal(&[1.0, 0.0]).into_inner(), epsilon = 1e-14);
    }

    #[test]
    fn stable_base_is_kept() {
        let g = example1();
        let v = incentive_matrix(&g, 0).unwrap();
        let s = single_sender_optimum(g.prior(), &v);
        assert_eq!(best_response_posterior(&s, &v, g.prior()).unwrap(), s);
    }

    #[test]
    fn example1_both_orderings() {
        let g = example1();
        let r = solve_ordering(&g, &[0, 1]).unwrap();
        let expect = Mat::from_row_slice(
            3,
            3,
            &[0.9715, 0.5571, 0.7793, 0.5571, 1.3859, 0.0413, 0.7793, 0.0413, 0.7794],
        );
        assert_abs_diff_eq!(r.posterior.matrix().clone(), expect, epsilon = 1e-3);
        assert_abs_diff_eq!(r.costs.senders[0], 1.4144, epsilon = 1e-3);
        assert_abs_diff_eq!(r.costs.senders[1], 0.8699, epsilon = 1e-3);
        assert_abs_diff_eq!(r.costs.receiver(), 0.0285, epsilon = 1e-3);
        assert!(r.is_certified());

        let r = solve_ordering(&g, &[1, 0]).unwrap();
        let expect = Mat::from_row_slice(
            3,
            3,
            &[0.9786, 0.6069, 0.7406, 0.6069, 0.9652, -0.0028, 0.7406, -0.0028, 0.9231],
        );
        assert_abs_diff_eq!(r.posterior.matrix().clone(), expect, epsilon = 1e-3);
        assert!(r.is_certified());
    }

    #[test]
    fn invalid_orderings() {
        let g = example1();
        assert!(matches!(solve_ordering(&g, &[0, 0]), Err(Error::InvalidOrdering(_))));
        assert!(matches!(solve_ordering(&g, &[0]), Err(Error::InvalidOrdering(_))));
        assert!(matches!(solve_ordering(&g, &[0, 2]), Err(Error::InvalidOrdering(_))));
    }

    #[test]
    fn permutation_listing() {
        assert_eq!(permutations(1), vec![vec![0]]);
        assert_eq!(
            permutations(3),
            vec![
                vec![0, 1, 2],
                vec![0, 2, 1],
                vec![1, 0, 2],
                vec![1, 2, 0],
                vec![2, 0, 1],
                vec![2, 1, 0]
            ]
        );
        assert_eq!(permutations(5).len(), 120);
    }

    #[test]
    fn ordering_cap() {
        let senders = vec![PlayerCost::scalar(&[1.0, 0.0], -1.0).unwrap(); 8];
        let g = GameSpec::new(Mat::identity(2, 2), senders, PlayerCost::scalar(&[1.0, 0.0], -1.0).unwrap()).unwrap();
        assert!(matches!(enumerate_orderings(&g), Err(Error::TooManyOrderings { m: 8, .. })));
    }

    #[test]
    fn single_sender_enumeration() {
        let g = example1().restrict(&[0]).unwrap();
        let all = enumerate_orderings(&g).unwrap();
        assert_eq!(all.len(), 1);
        let v = incentive_matrix(&g, 0).unwrap();
        assert_eq!(all[&vec![0]].posterior, single_sender_optimum(g.prior(), &v));
    }

    #[test]
    fn cooperative_cases() {
        let g = example1().restrict(&[0]).unwrap();
        let v = incentive_matrix(&g, 0).unwrap();
        assert_eq!(cooperative_optimum(&g, &[1.0]).unwrap(), single_sender_optimum(g.prior(), &v));
        assert!(matches!(cooperative_optimum(&g, &[0.0]), Err(Error::InvalidWeights)));
        assert!(matches!(cooperative_optimum(&g, &[-1.0]), Err(Error::InvalidWeights)));

    }

    #[test]
    fn opposed_senders_cancel() {
        let g = example1();
        let v1 = incentive_matrix(&g, 0).unwrap().v;
        let sum = weighted_incentive(
            &[
                IncentiveMatrix { v: v1.clone(), owner: Player::Sender(0) },
                IncentiveMatrix { v: SymMatrix::from_product(-v1.matrix()), owner: Player::Sender(1) },
            ],
            &[1.0, 1.0],
        );
        assert!(sum.matrix().iter().all(|x| *x == 0.0));
        assert_eq!(single_sender_optimum(g.prior(), &incentive(sum)).matrix(), &Mat::zeros(3, 3));
    }

    #[test]
    fn shrinkage_trivial_and_nested() {
        let g = example1();
        assert!(stable_set_shrinkage_check(&g, &[0, 1]).unwrap());
        assert!(stable_set_shrinkage_check(&g, &[0]).unwrap());
        assert!(stable_set_shrinkage_check(&g, &[3]).is_err());
    }
}

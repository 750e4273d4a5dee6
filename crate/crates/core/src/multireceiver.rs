//! Two receivers playing a coupled quadratic game on the same signals.
//!
//! Every player's loss is `‖Q·x + R_1·u_1 + R_2·u_2‖²`. The receivers' Nash
//! actions solve the stacked first-order conditions `R·u = −q` and are linear
//! in the estimate, `u_ℓ = −K_ℓ·x̂`. Substituting them turns each sender's
//! objective into a trace over the posterior, so the static fold applies.

use nalgebra::SVD;

use crate::equilibrium::{assemble, equilibrium_posterior, EquilibriumResult};
use crate::error::{Error, Result};
use crate::game::{check_feasible, check_invertible_weight, incentive_from_action_map, trace_cost, Costs, IncentiveMatrix, Player};
use crate::linalg::{Mat, PsdMatrix, SymMatrix};

/// Condition-number ceiling for the aggregate receiver matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Loss `‖Q·x + R_1·u_1 + R_2·u_2‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledCost {
    pub q: Mat,
    pub r1: Mat,
    pub r2: Mat,
}

impl CoupledCost {
    pub fn new(q: Mat, r1: Mat, r2: Mat) -> Result<Self> {
        if r1.nrows() != q.nrows() || r2.nrows() != q.nrows() {
            return Err(Error::DimError {
                expected: format!("R blocks with {} rows", q.nrows()),
                found: format!("{} and {}", r1.nrows(), r2.nrows()),
            });
        }
        if q.iter().chain(r1.iter()).chain(r2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite cost entry".into()));
        }
        Ok(CoupledCost { q, r1, r2 })
    }

    /// Single-row cost with scalar actions.
    pub fn scalar(q: &[f64], r1: f64, r2: f64) -> Result<Self> {
        Self::new(
            Mat::from_row_slice(1, q.len(), q),
            Mat::from_element(1, 1, r1),
            Mat::from_element(1, 1, r2),
        )
    }

    /// `M = R_1·K_1 + R_2·K_2`, so the loss is `‖Q·x − M·x̂‖²`.
    fn action_map(&self, k1: &Mat, k2: &Mat) -> Mat {
        &self.r1 * k1 + &self.r2 * k2
    }
}

/// Senders and two receivers sharing one Gaussian prior.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiReceiverSpec {
    prior: PsdMatrix,
    senders: Vec<CoupledCost>,
    receivers: [CoupledCost; 2],
}

impl MultiReceiverSpec {
    /// Validates shapes, each receiver's own-action weight and the
    /// invertibility of the aggregate matrix.
    pub fn new(prior: Mat, senders: Vec<CoupledCost>, receivers: [CoupledCost; 2]) -> Result<Self> {
        let prior = PsdMatrix::from_mat(prior)?;
        if senders.is_empty() {
            return Err(Error::InvalidGame("at least one sender is required".into()));
        }
        let p = prior.dim();
        let t1 = receivers[0].r1.ncols();
        let t2 = receivers[1].r2.ncols();
        for c in senders.iter().chain(receivers.iter()) {
            if c.q.ncols() != p || c.r1.ncols() != t1 || c.r2.ncols() != t2 {
                return Err(Error::DimError {
                    expected: format!("Q with {p} columns, R_1 with {t1}, R_2 with {t2}"),
                    found: format!("{}, {}, {}", c.q.ncols(), c.r1.ncols(), c.r2.ncols()),
                });
            }
        }
        check_invertible_weight(&receivers[0].r1)?;
        check_invertible_weight(&receivers[1].r2)?;
        let spec = MultiReceiverSpec {
            prior,
            senders,
            receivers,
        };
        receiver_nash_gains(&spec)?;
        Ok(spec)
    }

    pub fn prior(&self) -> &PsdMatrix {
        &self.prior
    }

    pub fn senders(&self) -> &[CoupledCost] {
        &self.senders
    }

    pub fn receivers(&self) -> &[CoupledCost; 2] {
        &self.receivers
    }

    pub fn num_senders(&self) -> usize {
        self.senders.len()
    }
}

/// Aggregate matrix of the receivers' stacked first-order conditions,
/// `[[R_11ᵀR_11, R_11ᵀR_12], [R_22ᵀR_21, R_22ᵀR_22]]`.
pub fn aggregate_matrix(spec: &MultiReceiverSpec) -> Mat {
    let [a, b] = &spec.receivers;
    let t1 = a.r1.ncols();
    let t2 = b.r2.ncols();
    let mut r = Mat::zeros(t1 + t2, t1 + t2);
    r.view_mut((0, 0), (t1, t1)).copy_from(&(a.r1.transpose() * &a.r1));
    r.view_mut((0, t1), (t1, t2)).copy_from(&(a.r1.transpose() * &a.r2));
    r.view_mut((t1, 0), (t2, t1)).copy_from(&(b.r2.transpose() * &b.r1));
    r.view_mut((t1, t1), (t2, t2)).copy_from(&(b.r2.transpose() * &b.r2));
    r
}

/// Linear part of `q`: `q = [R_11ᵀQ_r1; R_22ᵀQ_r2]·x̂`.
fn stacked_targets(spec: &MultiReceiverSpec) -> Mat {
    let [a, b] = &spec.receivers;
    let top = a.r1.transpose() * &a.q;
    let bottom = b.r2.transpose() * &b.q;
    let mut out = Mat::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(&top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(&bottom);
    out
}

/// Receivers' Nash gains `(K_1, K_2)` with `u_ℓ = −K_ℓ·x̂`.
pub fn receiver_nash_gains(spec: &MultiReceiverSpec) -> Result<(Mat, Mat)> {
    let r = aggregate_matrix(spec);
    let sv = SVD::new(r.clone(), false, false).singular_values;
    let hi = sv.iter().cloned().fold(0.0_f64, f64::max);
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::NoUniqueReceiverNash { cond });
    }
    let k = r
        .lu()
        .solve(&stacked_targets(spec))
        .ok_or(Error::NoUniqueReceiverNash { cond })?;
    let t1 = spec.receivers[0].r1.ncols();
    let t2 = spec.receivers[1].r2.ncols();
    Ok((k.rows(0, t1).clone_owned(), k.rows(t1, t2).clone_owned()))
}

/// `R·u* + q` at estimate `x̂`; zero when the gains satisfy the first-order
/// conditions.
pub fn first_order_residual(spec: &MultiReceiverSpec, xhat: &Mat) -> Result<Mat> {
    let (k1, k2) = receiver_nash_gains(spec)?;
    let mut u = Mat::zeros(k1.nrows() + k2.nrows(), xhat.ncols());
    u.rows_mut(0, k1.nrows()).copy_from(&(-(&k1 * xhat)));
    u.rows_mut(k1.nrows(), k2.nrows()).copy_from(&(-(&k2 * xhat)));
    Ok(aggregate_matrix(spec) * u + stacked_targets(spec) * xhat)
}

fn incentive_of(c: &CoupledCost, k1: &Mat, k2: &Mat) -> SymMatrix {
    incentive_from_action_map(&c.q, &c.action_map(k1, k2))
}

/// Sender incentive under the receivers' Nash play:
/// `V = K_1ᵀR_1ᵀR_2K_2 + K_2ᵀR_2ᵀR_1K_1 + K_1ᵀR_1ᵀR_1K_1 + K_2ᵀR_2ᵀR_2K_2
///      − K_1ᵀR_1ᵀQ − K_2ᵀR_2ᵀQ − QᵀR_1K_1 − QᵀR_2K_2`.
pub fn sender_incentive_multi(spec: &MultiReceiverSpec, i: usize) -> Result<IncentiveMatrix> {
    let c = spec
        .senders
        .get(i)
        .ok_or_else(|| Error::InvalidGame(format!("sender index {i} out of range")))?;
    let (k1, k2) = receiver_nash_gains(spec)?;
    Ok(IncentiveMatrix {
        v: incentive_of(c, &k1, &k2),
        owner: Player::Sender(i),
    })
}

/// Expected costs of all senders and both receivers at posterior `S`.
pub fn multi_costs(spec: &MultiReceiverSpec, s: &PsdMatrix) -> Result<Costs> {
    check_feasible(&spec.prior, s)?;
    let (k1, k2) = receiver_nash_gains(spec)?;
    let prior = spec.prior.matrix();
    let cost = |c: &CoupledCost| trace_cost(&c.q, &incentive_of(c, &k1, &k2), prior, s.matrix());
    Ok(Costs {
        senders: spec.senders.iter().map(cost).collect(),
        receivers: spec.receivers.iter().map(cost).collect(),
    })
}

/// Equilibrium for the sender ordering `order` (0-based).
pub fn solve_multireceiver(spec: &MultiReceiverSpec, order: &[usize]) -> Result<EquilibriumResult> {
    let vs: Vec<SymMatrix> = (0..spec.num_senders())
        .map(|i| sender_incentive_multi(spec, i).map(|v| v.v))
        .collect::<Result<_>>()?;
    let posterior = equilibrium_posterior(&spec.prior, &vs, order)?;
    let costs = multi_costs(spec, &posterior)?;
    assemble(&spec.prior, &vs, order, posterior, costs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{incentive_matrix, GameSpec, PlayerCost};
    use approx::assert_abs_diff_eq;

    fn row(v: &[f64]) -> Mat {
        Mat::from_row_slice(1, v.len(), v)
    }

    fn coupled(alpha: f64) -> MultiReceiverSpec {
        let s = 1.0 + alpha;
        MultiReceiverSpec::new(
            Mat::from_row_slice(3, 3, &[1.0, 0.5, 0.5, 0.5, 1.0, 0.25, 0.5, 0.25, 1.0]),
            vec![CoupledCost::scalar(&[1.0, 0.0, 1.0], -0.5, -0.5).unwrap()],
            [
                CoupledCost::scalar(&[s, 0.0, 0.0], -1.0, -alpha).unwrap(),
                CoupledCost::scalar(&[s, s, 0.0], -alpha, -1.0).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn closed_form_gains() {
        for i in 0..10 {
            let a = i as f64 / 10.0;
            let (k1, k2) = receiver_nash_gains(&coupled(a)).unwrap();
            assert_abs_diff_eq!(k1, row(&[-1.0, a / (1.0 - a), 0.0]), epsilon = 1e-10);
            assert_abs_diff_eq!(k2, row(&[-1.0, -1.0 / (1.0 - a), 0.0]), epsilon = 1e-10);
        }
        let (k1, k2) = receiver_nash_gains(&coupled(0.0)).unwrap();
        assert_abs_diff_eq!(k1, row(&[-1.0, 0.0, 0.0]), epsilon = 1e-15);
        assert_abs_diff_eq!(k2, row(&[-1.0, -1.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn printed_sender_incentive() {
        let expect = Mat::from_row_slice(3, 3, &[-1.0, 0.0, -1.0, 0.0, 0.25, -0.5, -1.0, -0.5, 0.0]);
        for i in 0..10 {
            let v = sender_incentive_multi(&coupled(i as f64 / 10.0), 0).unwrap();
            assert_abs_diff_eq!(v.v.into_inner(), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn perfect_coupling_rejected() {
        let err = MultiReceiverSpec::new(
            Mat::identity(3, 3),
            vec![CoupledCost::scalar(&[1.0, 0.0, 1.0], -0.5, -0.5).unwrap()],
            [
                CoupledCost::scalar(&[1.0, 0.0, 0.0], -1.0, -1.0).unwrap(),
                CoupledCost::scalar(&[1.0, 1.0, 0.0], -1.0, -1.0).unwrap(),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoUniqueReceiverNash { .. }));
    }

    #[test]
    fn decoupled_receivers_use_single_gains() {
        let q1 = Mat::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, 0.0]);
        let r11 = Mat::from_row_slice(2, 2, &[2.0, 0.0, 1.0, -1.0]);
        let q2 = row(&[0.5, -1.0, 1.0]);
        let r22 = Mat::from_element(1, 1, -3.0);
        let spec = MultiReceiverSpec::new(
            Mat::identity(3, 3),
            vec![CoupledCost::new(row(&[1.0, 1.0, 1.0]), Mat::zeros(1, 2), Mat::zeros(1, 1)).unwrap()],
            [
                CoupledCost::new(q1.clone(), r11.clone(), Mat::zeros(2, 1)).unwrap(),
                CoupledCost::new(q2.clone(), Mat::zeros(1, 2), r22.clone()).unwrap(),
            ],
        )
        .unwrap();
        let (k1, k2) = receiver_nash_gains(&spec).unwrap();
        let single = |q: &Mat, r: &Mat| (r.transpose() * r).try_inverse().unwrap() * r.transpose() * q;
        assert_abs_diff_eq!(k1, single(&q1, &r11), epsilon = 1e-12);
        assert_abs_diff_eq!(k2, single(&q2, &r22), epsilon = 1e-12);
        // All-zero sender coupling gives V = O.
        let v = sender_incentive_multi(&spec, 0).unwrap();
        assert!(v.v.matrix().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn embedded_single_receiver_matches_static_incentive() {
        let prior = Mat::from_row_slice(3, 3, &[1.0, 0.5, 0.7, 0.5, 1.5, 0.2, 0.7, 0.2, 1.0]);
        let spec = MultiReceiverSpec::new(
            prior.clone(),
            vec![CoupledCost::scalar(&[1.0, 1.0, 0.0], -1.0, 0.0).unwrap()],
            [
                CoupledCost::scalar(&[1.0, 0.0, 0.0], -1.0, 0.0).unwrap(),
                CoupledCost::scalar(&[0.0, 0.0, 1.0], 0.0, 1.0).unwrap(),
            ],
        )
        .unwrap();
        let g = GameSpec::new(
            prior,
            vec![PlayerCost::scalar(&[1.0, 1.0, 0.0], -1.0).unwrap()],
            PlayerCost::scalar(&[1.0, 0.0, 0.0], -1.0).unwrap(),
        )
        .unwrap();
        assert_abs_diff_eq!(
            sender_incentive_multi(&spec, 0).unwrap().v.into_inner(),
            incentive_matrix(&g, 0).unwrap().v.into_inner(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn first_order_conditions_hold() {
        let spec = coupled(0.7);
        let xhat = Mat::from_row_slice(3, 2, &[0.3, -1.2, 2.0, 0.4, -0.7, 1.1]);
        let res = first_order_residual(&spec, &xhat).unwrap();
        assert!(res.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn sender_cost_and_posterior() {
        let r = solve_multireceiver(&coupled(0.3), &[0]).unwrap();
        assert_abs_diff_eq!(r.costs.senders[0], 0.3464, epsilon = 1e-3);
        assert!(r.is_certified());
        assert_eq!(r.costs.receivers.len(), 2);
    }
}

//! Quadratic costs, the receiver's best response and the incentive matrices
//! that reduce each sender's objective to a trace over the posterior.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{loewner_margin, trace_product, Mat, PsdMatrix, SymMatrix, PD_TOL, PSD_TOL};

/// Loss `‖Q·x + R·u‖²` with `Q` of shape `q×p` and `R` of shape `q×t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerCost {
    pub q: Mat,
    pub r: Mat,
}

impl PlayerCost {
    pub fn new(q: Mat, r: Mat) -> Result<Self> {
        if q.nrows() != r.nrows() {
            return Err(Error::DimError {
                expected: format!("R with {} rows", q.nrows()),
                found: format!("{} rows", r.nrows()),
            });
        }
        if r.ncols() > q.nrows() {
            return Err(Error::InvalidGame(format!(
                "action dimension {} exceeds cost rows {}",
                r.ncols(),
                q.nrows()
            )));
        }
        if q.iter().chain(r.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite cost entry".into()));
        }
        Ok(PlayerCost { q, r })
    }

    /// Single-row cost `(q·x + r·u)²` with scalar action.
    pub fn scalar(q: &[f64], r: f64) -> Result<Self> {
        Self::new(Mat::from_row_slice(1, q.len(), q), Mat::from_element(1, 1, r))
    }
}

/// Identifies a player.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Player {
    Sender(usize),
    Receiver(usize),
}

/// Sender objective reduced to `Tr(V·S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncentiveMatrix {
    pub v: SymMatrix,
    pub owner: Player,
}

/// Expected costs, senders first, then receivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Costs {
    pub senders: Vec<f64>,
    pub receivers: Vec<f64>,
}

impl Costs {
    pub fn sender_total(&self) -> f64 {
        self.senders.iter().sum()
    }

    pub fn receiver(&self) -> f64 {
        self.receivers[0]
    }
}

/// Static game: zero-mean Gaussian prior, `m ≥ 1` senders and one receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSpec {
    prior: PsdMatrix,
    senders: Vec<PlayerCost>,
    receiver: PlayerCost,
}

impl GameSpec {
    /// Validates dimensions, the prior and the receiver's `RᵀR`.
    ///
    /// The prior only has to be PSD: rank-deficient priors are handled with
    /// pseudo-inverse square roots throughout.
    pub fn new(prior: Mat, senders: Vec<PlayerCost>, receiver: PlayerCost) -> Result<Self> {
        let prior = PsdMatrix::from_mat(prior)?;
        Self::from_parts(prior, senders, receiver)
    }

    pub fn from_parts(prior: PsdMatrix, senders: Vec<PlayerCost>, receiver: PlayerCost) -> Result<Self> {
        if senders.is_empty() {
            return Err(Error::InvalidGame("at least one sender is required".into()));
        }
        let p = prior.dim();
        let t = receiver.r.ncols();
        for (i, c) in senders.iter().chain(std::iter::once(&receiver)).enumerate() {
            if c.q.ncols() != p {
                return Err(Error::DimError {
                    expected: format!("Q with {p} columns"),
                    found: format!("player {i}: {} columns", c.q.ncols()),
                });
            }
            if c.r.ncols() != t {
                return Err(Error::DimError {
                    expected: format!("R with {t} columns"),
                    found: format!("player {i}: {} columns", c.r.ncols()),
                });
            }
        }
        check_invertible_weight(&receiver.r)?;
        Ok(GameSpec {
            prior,
            senders,
            receiver,
        })
    }

    pub fn prior(&self) -> &PsdMatrix {
        &self.prior
    }

    pub fn senders(&self) -> &[PlayerCost] {
        &self.senders
    }

    pub fn receiver(&self) -> &PlayerCost {
        &self.receiver
    }

    pub fn dim_state(&self) -> usize {
        self.prior.dim()
    }

    pub fn dim_action(&self) -> usize {
        self.receiver.r.ncols()
    }

    pub fn num_senders(&self) -> usize {
        self.senders.len()
    }

    /// The game restricted to the listed senders, in the listed order.
    pub fn restrict(&self, subset: &[usize]) -> Result<Self> {
        let mut senders = Vec::with_capacity(subset.len());
        for &i in subset {
            let c = self.senders.get(i).ok_or_else(|| {
                Error::InvalidGame(format!("sender index {i} out of range"))
            })?;
            senders.push(c.clone());
        }
        Self::from_parts(self.prior.clone(), senders, self.receiver.clone())
    }

    pub fn incentives(&self) -> Result<Vec<IncentiveMatrix>> {
        (0..self.num_senders()).map(|i| incentive_matrix(self, i)).collect()
    }
}

/// Fails with `SingularReceiver` unless `RᵀR` has every eigenvalue above
/// `PD_TOL`.
pub(crate) fn check_invertible_weight(r: &Mat) -> Result<()> {
    let rtr = SymMatrix::from_product(r.transpose() * r);
    let low = rtr.min_eig();
    if low <= PD_TOL {
        return Err(Error::SingularReceiver { min_eig: low });
    }
    Ok(())
}

/// Receiver best-response gain `K_r = −(R_rᵀR_r)⁻¹R_rᵀQ_r`, so `u = K_r·x̂`.
pub fn receiver_gain(g: &GameSpec) -> Result<Mat> {
    best_response_gain(&g.receiver)
}

pub(crate) fn best_response_gain(c: &PlayerCost) -> Result<Mat> {
    check_invertible_weight(&c.r)?;
    let rtr = c.r.transpose() * &c.r;
    let chol = rtr.clone().cholesky().ok_or(Error::SingularReceiver { min_eig: 0.0 })?;
    Ok(-chol.solve(&(c.r.transpose() * &c.q)))
}

/// Incentive matrix of a player whose loss is `‖Q·x − M·x̂‖²`:
/// `V = MᵀM − MᵀQ − QᵀM`.
pub fn incentive_from_action_map(q: &Mat, m: &Mat) -> SymMatrix {
    let mtq = m.transpose() * q;
    SymMatrix::from_product(m.transpose() * m - &mtq - mtq.transpose())
}

/// `V_i = Λ_iᵀΛ_i − Λ_iᵀQ_i − Q_iᵀΛ_i` with `Λ_i = R_i(R_rᵀR_r)⁻¹R_rᵀQ_r`.
pub fn incentive_matrix(g: &GameSpec, i: usize) -> Result<IncentiveMatrix> {
    let c = g
        .senders
        .get(i)
        .ok_or_else(|| Error::InvalidGame(format!("sender index {i} out of range")))?;
    let k = receiver_gain(g)?;
    Ok(IncentiveMatrix {
        v: incentive_for(c, &k),
        owner: Player::Sender(i),
    })
}

/// Incentive matrix of the receiver, built with the same formula.
pub fn receiver_incentive(g: &GameSpec) -> Result<IncentiveMatrix> {
    let k = receiver_gain(g)?;
    Ok(IncentiveMatrix {
        v: incentive_for(&g.receiver, &k),
        owner: Player::Receiver(0),
    })
}

pub(crate) fn incentive_for(c: &PlayerCost, gain: &Mat) -> SymMatrix {
    let lambda = -(&c.r * gain);
    incentive_from_action_map(&c.q, &lambda)
}

/// `Tr(QᵀQ·Σx) + Tr(V·S)`.
pub fn trace_cost(q: &Mat, v: &SymMatrix, prior: &Mat, s: &Mat) -> f64 {
    trace_product(&(q.transpose() * q), prior) + trace_product(v.matrix(), s)
}

/// Fails unless `Σx ⪰ S ⪰ O` within `PSD_TOL`.
pub fn check_feasible(prior: &PsdMatrix, s: &PsdMatrix) -> Result<()> {
    let upper = loewner_margin(prior.sym(), s.sym())?;
    let lower = loewner_margin(s.sym(), &SymMatrix::zeros(s.dim()))?;
    let worst = upper.min(lower);
    if worst < -PSD_TOL {
        return Err(Error::InfeasiblePosterior { violation: worst });
    }
    Ok(())
}

/// Expected costs `J_j = Tr(Q_jᵀQ_j·Σx) + Tr(V_j·S)` of every player at
/// posterior covariance `S`.
pub fn expected_costs(g: &GameSpec, s: &PsdMatrix) -> Result<Costs> {
    check_feasible(&g.prior, s)?;
    costs_at(g, s.matrix())
}

/// The trace formula of [`expected_costs`] without the feasibility check,
/// for evaluating rounded or externally supplied posteriors.
pub fn costs_at(g: &GameSpec, s: &Mat) -> Result<Costs> {
    let k = receiver_gain(g)?;
    let cost = |c: &PlayerCost| {
        let v = incentive_for(c, &k);
        trace_cost(&c.q, &v, g.prior.matrix(), s)
    };
    Ok(Costs {
        senders: g.senders.iter().map(cost).collect(),
        receivers: vec![cost(&g.receiver)],
    })
}

/// Weighted sum of incentive matrices.
pub fn weighted_incentive(vs: &[IncentiveMatrix], weights: &[f64]) -> SymMatrix {
    let n = vs[0].v.dim();
    let mut acc = Mat::zeros(n, n);
    for (v, &w) in vs.iter().zip(weights) {
        acc += v.v.matrix() * w;
    }
    SymMatrix::from_product(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
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

    #[test]
    fn gain_tracks_first_coordinate() {
        let k = receiver_gain(&example1()).unwrap();
        assert_abs_diff_eq!(k, Mat::from_row_slice(1, 3, &[1.0, 0.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn gain_identity_tracking() {
        let g = GameSpec::new(
            Mat::identity(2, 2),
            vec![PlayerCost::new(Mat::identity(2, 2), -Mat::identity(2, 2)).unwrap()],
            PlayerCost::new(Mat::identity(2, 2), -Mat::identity(2, 2)).unwrap(),
        )
        .unwrap();
        assert_abs_diff_eq!(receiver_gain(&g).unwrap(), Mat::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn gain_by_calculus() {
        // Minimizing (x1 + 2u)² gives u = −x1/2.
        let g = GameSpec::new(
            Mat::identity(2, 2),
            vec![PlayerCost::scalar(&[1.0, 0.0], 1.0).unwrap()],
            PlayerCost::scalar(&[1.0, 0.0], 2.0).unwrap(),
        )
        .unwrap();
        assert_abs_diff_eq!(
            receiver_gain(&g).unwrap(),
            Mat::from_row_slice(1, 2, &[-0.5, 0.0]),
            epsilon = 1e-15
        );
    }

    #[test]
    fn singular_receiver_rejected() {
        let err = GameSpec::new(
            Mat::identity(2, 2),
            vec![PlayerCost::scalar(&[1.0, 0.0], 1.0).unwrap()],
            PlayerCost::scalar(&[1.0, 0.0], 0.0).unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::SingularReceiver { .. }));
    }

    #[test]
    fn example1_incentives() {
        let g = example1();
        let v1 = incentive_matrix(&g, 0).unwrap();
        let v2 = incentive_matrix(&g, 1).unwrap();
        assert_abs_diff_eq!(
            v1.v.matrix().clone(),
            Mat::from_row_slice(3, 3, &[-1.0, -1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            v2.v.matrix().clone(),
            Mat::from_row_slice(3, 3, &[-1.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0]),
            epsilon = 1e-15
        );
        assert_eq!(v1.owner, Player::Sender(0));
    }

    #[test]
    fn aligned_sender_incentive_is_minus_qtq() {
        let q = Mat::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, -1.0]);
        let r = Mat::from_row_slice(2, 2, &[2.0, 1.0, 0.5, -1.0]);
        let c = PlayerCost::new(q.clone(), r).unwrap();
        let g = GameSpec::new(Mat::identity(3, 3), vec![c.clone()], c).unwrap();
        assert_abs_diff_eq!(
            incentive_matrix(&g, 0).unwrap().v.into_inner(),
            -(q.transpose() * &q),
            epsilon = 1e-12
        );
    }

    #[test]
    fn example1_costs_at_printed_posterior() {
        let g = example1();
        // The printed entries are rounded, which leaves Σx − S slightly
        // indefinite, so the unchecked evaluator is used.
        let s = Mat::from_row_slice(
            3,
            3,
            &[0.9715, 0.5571, 0.7793, 0.5571, 1.3859, 0.0413, 0.7793, 0.0413, 0.7794],
        );
        let c = costs_at(&g, &s).unwrap();
        assert_abs_diff_eq!(c.senders[0], 1.4144, epsilon = 1e-3);
        assert_abs_diff_eq!(c.senders[1], 0.8699, epsilon = 1e-3);
        assert_abs_diff_eq!(c.receiver(), 0.0285, epsilon = 1e-3);
    }

    #[test]
    fn extreme_posteriors() {
        let g = example1();
        let full = expected_costs(&g, g.prior()).unwrap();
        assert_abs_diff_eq!(full.receiver(), 0.0, epsilon = 1e-14);
        let none = expected_costs(&g, &PsdMatrix::zeros(3)).unwrap();
        let prior = g.prior().matrix();
        for (c, j) in g.senders().iter().zip(&none.senders) {
            assert_abs_diff_eq!(*j, trace_product(&(c.q.transpose() * &c.q), prior), epsilon = 1e-14);
        }
    }

    #[test]
    fn infeasible_posterior_rejected() {
        let g = example1();
        let s = PsdMatrix::from_mat(Mat::identity(3, 3) * 3.0).unwrap();
        assert!(matches!(expected_costs(&g, &s), Err(Error::InfeasiblePosterior { .. })));
    }

    #[test]
    fn restrict_keeps_order() {
        let g = example1();
        let r = g.restrict(&[1]).unwrap();
        assert_eq!(r.senders()[0], g.senders()[1]);
        assert!(g.restrict(&[5]).is_err());
    }
}

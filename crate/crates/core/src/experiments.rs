//! The worked examples: game builders, ordering tables, parameter sweeps and
//! the scenario runners behind the command-line tool.

use rayon::prelude::*;

use crate::dynamic::{solve_dynamic, DynamicGameSpec, StageCosts};
use crate::equilibrium::{cooperative_optimum, enumerate_orderings, solve_ordering, stability_certificate, EquilibriumResult};
use crate::error::{Error, Result};
use crate::game::{expected_costs, GameSpec, PlayerCost};
use crate::linalg::{Mat, SymMatrix};
use crate::montecarlo::{simulate_dynamic, simulate_static, SimConfig, SimReport};
use crate::multireceiver::{solve_multireceiver, CoupledCost, MultiReceiverSpec};
use crate::report::{fmt_sig, ordering_label, rows_to_table, ResultRow, Table};
use crate::scenario::{Instance, Model, ScenarioFile};

/// Targets accepted by [`reproduce`].
pub const TARGETS: [&str; 10] = ["ex1", "ex2", "ex3", "ex4", "ex5", "ex6", "ex7", "ex8", "table1", "table2"];

/// Orderings in the row order of the ordering tables, 0-based:
/// (3,2,1), (3,1,2), (2,3,1), (2,1,3), (1,3,2), (1,2,3).
pub const TABLE_ORDERS: [[usize; 3]; 6] = [[2, 1, 0], [2, 0, 1], [1, 2, 0], [1, 0, 2], [0, 2, 1], [0, 1, 2]];

fn row(v: &[f64]) -> Mat {
    Mat::from_row_slice(1, v.len(), v)
}

fn tracker(q: &[f64]) -> PlayerCost {
    PlayerCost::new(row(q), Mat::from_element(1, 1, -1.0)).expect("scalar cost")
}

pub fn example1_prior() -> Mat {
    Mat::from_row_slice(3, 3, &[1.0, 0.5, 0.7, 0.5, 1.5, 0.2, 0.7, 0.2, 1.0])
}

/// State `[z, θ_A, θ_B]`; sender 1 wants `z + β·θ_A + α·θ_B` tracked, sender
/// 2 wants `z + α·θ_A + β·θ_B`, the receiver wants `z`.
pub fn three_variable_game(alpha: f64, beta: f64, prior: Mat) -> Result<GameSpec> {
    GameSpec::new(
        prior,
        vec![tracker(&[1.0, beta, alpha]), tracker(&[1.0, alpha, beta])],
        tracker(&[1.0, 0.0, 0.0]),
    )
}

pub fn example1_game() -> GameSpec {
    three_variable_game(0.0, 1.0, example1_prior()).expect("valid game")
}

/// Unit variances, `Cov(z, θ) = 0.5` and `Cov(θ_A, θ_B) = ρ_ab`.
pub fn correlated_prior(rho_ab: f64) -> Mat {
    Mat::from_row_slice(3, 3, &[1.0, 0.5, 0.5, 0.5, 1.0, rho_ab, 0.5, rho_ab, 1.0])
}

/// State `[z, θ_1, …, θ_m]` with unit variances, `Cov(z, θ_i) = ρ` and
/// independent `θ_i`.
pub fn independent_senders_prior(m: usize, rho: f64) -> Mat {
    let mut s = Mat::identity(m + 1, m + 1);
    for i in 1..=m {
        s[(0, i)] = rho;
        s[(i, 0)] = rho;
    }
    s
}

/// Sender `i` wants `z + θ_i` tracked; the receiver wants `z`.
pub fn independent_senders_game(m: usize, rho: f64) -> Result<GameSpec> {
    let target = |i: Option<usize>| {
        let mut q = vec![0.0; m + 1];
        q[0] = 1.0;
        if let Some(i) = i {
            q[i + 1] = 1.0;
        }
        tracker(&q)
    };
    GameSpec::new(independent_senders_prior(m, rho), (0..m).map(|i| target(Some(i))).collect(), target(None))
}

/// Three senders with `Var(z) = 100` and `θ_i` increasingly correlated with `z`.
pub fn heterogeneous_senders_game() -> GameSpec {
    let prior = Mat::from_row_slice(
        4,
        4,
        &[100.0, 2.5, 5.0, 7.5, 2.5, 1.0, 0.0, 0.0, 5.0, 0.0, 1.0, 0.0, 7.5, 0.0, 0.0, 1.0],
    );
    let mut g = independent_senders_game(3, 0.0).expect("valid game");
    g = GameSpec::new(prior, g.senders().to_vec(), g.receiver().clone()).expect("valid game");
    g
}

/// Random-walk state with sender 1 drifting from `z` to `z + θ_A` and sender
/// 2 from `z + θ_B` to `z` over `n` stages.
pub fn example7_spec(n: usize) -> Result<DynamicGameSpec> {
    let eye = Mat::identity(3, 3);
    let sigma0 = Mat::from_row_slice(3, 3, &[1.0, 0.5, 0.5, 0.5, 1.0, 0.0, 0.5, 0.0, 1.0]);
    let stages = (1..=n)
        .map(|k| {
            let w = k as f64 / n as f64;
            StageCosts {
                senders: vec![tracker(&[1.0, w, 0.0]), tracker(&[1.0, 0.0, 1.0 - w])],
                receiver: tracker(&[1.0, 0.0, 0.0]),
            }
        })
        .collect();
    DynamicGameSpec::new(eye.clone(), sigma0, eye, stages, vec![0, 1])
}

/// One sender tracking `z + θ_B` with the average action, and two receivers
/// coupled through `α`.
pub fn example8_spec(alpha: f64) -> Result<MultiReceiverSpec> {
    let s = 1.0 + alpha;
    MultiReceiverSpec::new(
        Mat::from_row_slice(3, 3, &[1.0, 0.5, 0.5, 0.5, 1.0, 0.25, 0.5, 0.25, 1.0]),
        vec![CoupledCost::scalar(&[1.0, 0.0, 1.0], -0.5, -0.5)?],
        [
            CoupledCost::scalar(&[s, 0.0, 0.0], -1.0, -alpha)?,
            CoupledCost::scalar(&[s, s, 0.0], -alpha, -1.0)?,
        ],
    )
}

pub fn result_row(scenario: &str, sweep: Option<(String, f64)>, r: &EquilibriumResult) -> ResultRow {
    ResultRow {
        scenario: scenario.into(),
        sweep,
        ordering: ordering_label(&r.ordering),
        stage: None,
        costs: r.costs.clone(),
        posterior: r.posterior.matrix().clone(),
        policy: r.policy.matrix().clone(),
        certificate: r.certificate,
    }
}

/// Full revelation: `S = Σx`, `L = I`.
pub fn full_revelation_row(g: &GameSpec, scenario: &str) -> Result<ResultRow> {
    let vs: Vec<SymMatrix> = g.incentives()?.into_iter().map(|v| v.v).collect();
    let p = g.dim_state();
    Ok(ResultRow {
        scenario: scenario.into(),
        sweep: None,
        ordering: "full".into(),
        stage: None,
        costs: expected_costs(g, g.prior())?,
        posterior: g.prior().matrix().clone(),
        policy: Mat::identity(p, p),
        certificate: stability_certificate(g.prior(), g.prior(), &vs)?,
    })
}

/// Costs for each of the six orderings plus full revelation.
pub fn ordering_table(g: &GameSpec, scenario: &str) -> Result<Table> {
    let m = g.num_senders();
    let mut header = vec!["ordering".to_string()];
    header.extend((1..=m).map(|i| format!("J_s{i}")));
    header.extend(["J_total".into(), "J_r".into(), "certificate".into()]);
    let mut t = Table::new(header);
    let orders: Vec<Vec<usize>> = TABLE_ORDERS.iter().map(|o| o.to_vec()).collect();
    let solved = crate::equilibrium::solve_orderings(g, &orders)?;
    let mut rows: Vec<ResultRow> = orders.iter().map(|o| result_row(scenario, None, &solved[o])).collect();
    rows.push(full_revelation_row(g, scenario)?);
    for r in rows {
        let mut cells = vec![r.ordering.clone()];
        cells.extend(r.costs.senders.iter().map(|v| fmt_sig(*v)));
        cells.push(fmt_sig(r.costs.sender_total()));
        cells.push(fmt_sig(r.costs.receiver()));
        cells.push(fmt_sig(r.certificate));
        t.push(cells)?;
    }
    Ok(t)
}

fn sweep<T: Sync, F>(points: &[T], f: F) -> Result<Vec<Vec<String>>>
where
    F: Fn(&T) -> Result<Vec<Vec<String>>> + Sync + Send,
{
    Ok(points.par_iter().map(f).collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

fn table_from(header: &[&str], rows: Vec<Vec<String>>) -> Result<Table> {
    let mut t = Table::new(header.iter().copied());
    for r in rows {
        t.push(r)?;
    }
    Ok(t)
}

fn grid(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|i| i as f64 / 10.0).collect()
}

fn two_sender_row(x: f64, r: &EquilibriumResult) -> Vec<String> {
    vec![
        fmt_sig(x),
        fmt_sig(r.costs.senders[0]),
        fmt_sig(r.costs.senders[1]),
        fmt_sig(r.costs.receiver()),
        fmt_sig(r.certificate),
    ]
}

/// Costs against `ρ_ab ∈ {−0.5, …, 0.9}`.
pub fn correlation_sweep() -> Result<Table> {
    let rows = sweep(&grid(-5, 9), |&rho| {
        let g = three_variable_game(0.0, 1.0, correlated_prior(rho))?;
        Ok(vec![two_sender_row(rho, &solve_ordering(&g, &[0, 1])?)])
    })?;
    table_from(&["rho_ab", "J_s1", "J_s2", "J_r", "certificate"], rows)
}

/// Costs against `α ∈ {−1, −0.9, …, 1}` with `β = 1`, `ρ_ab = 0.25`.
pub fn alignment_sweep() -> Result<Table> {
    let rows = sweep(&grid(-10, 10), |&alpha| {
        let g = three_variable_game(alpha, 1.0, correlated_prior(0.25))?;
        Ok(vec![two_sender_row(alpha, &solve_ordering(&g, &[0, 1])?)])
    })?;
    table_from(&["alpha", "J_s1", "J_s2", "J_r", "certificate"], rows)
}

pub const SENDER_COUNT_RHOS: [f64; 6] = [-0.25, -0.1, -0.01, 0.01, 0.1, 0.25];

/// Sender 1's and the receiver's costs for `m = 1..10` senders.
pub fn sender_count_sweep() -> Result<Table> {
    let points: Vec<(f64, usize)> = SENDER_COUNT_RHOS.iter().flat_map(|&r| (1..=10).map(move |m| (r, m))).collect();
    let rows = sweep(&points, |&(rho, m)| {
        let g = independent_senders_game(m, rho)?;
        let order: Vec<usize> = (0..m).collect();
        let r = solve_ordering(&g, &order)?;
        Ok(vec![vec![
            fmt_sig(rho),
            m.to_string(),
            fmt_sig(r.costs.senders[0]),
            fmt_sig(r.costs.receiver()),
            fmt_sig(r.certificate),
        ]])
    })?;
    table_from(&["rho", "m", "J_s1", "J_r", "certificate"], rows)
}

/// Nash versus cooperative (equal weights) totals for `m = 1..10`, `ρ = 0.01`.
pub fn cooperation_sweep() -> Result<Table> {
    let ms: Vec<usize> = (1..=10).collect();
    let rows = sweep(&ms, |&m| {
        let g = independent_senders_game(m, 0.01)?;
        let order: Vec<usize> = (0..m).collect();
        let nash = solve_ordering(&g, &order)?;
        let coop = expected_costs(&g, &cooperative_optimum(&g, &vec![1.0; m])?)?;
        Ok(vec![vec![
            m.to_string(),
            fmt_sig(nash.costs.sender_total()),
            fmt_sig(coop.sender_total()),
            fmt_sig(nash.costs.receiver()),
            fmt_sig(coop.receiver()),
            fmt_sig(nash.certificate),
        ]])
    })?;
    table_from(&["m", "nash_total", "coop_total", "nash_J_r", "coop_J_r", "certificate"], rows)
}

/// Stage costs of the ten-stage game.
pub fn dynamic_table() -> Result<Table> {
    let eq = solve_dynamic(&example7_spec(10)?)?;
    let rows = eq
        .stage_costs
        .iter()
        .zip(&eq.certificates)
        .enumerate()
        .map(|(k, (c, cert))| {
            vec![
                (k + 1).to_string(),
                fmt_sig(c.senders[0]),
                fmt_sig(c.senders[1]),
                fmt_sig(c.receiver()),
                fmt_sig(*cert),
            ]
        })
        .collect();
    table_from(&["stage", "J_s1", "J_s2", "J_r", "certificate"], rows)
}

/// Sender and receiver costs and the posterior for `α ∈ {0, …, 0.9}`.
pub fn receiver_coupling_sweep() -> Result<Table> {
    let rows = sweep(&grid(0, 9), |&alpha| {
        let r = solve_multireceiver(&example8_spec(alpha)?, &[0])?;
        let mut cells = vec![
            fmt_sig(alpha),
            fmt_sig(r.costs.senders[0]),
            fmt_sig(r.costs.receivers[0]),
            fmt_sig(r.costs.receivers[1]),
        ];
        let s = r.posterior.matrix();
        cells.extend((0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| fmt_sig(s[(i, j)])));
        cells.push(fmt_sig(r.certificate));
        Ok(vec![cells])
    })?;
    let mut header = vec!["alpha", "J_s1", "J_r1", "J_r2"];
    let names: Vec<String> = (1..=3).flat_map(|i| (1..=3).map(move |j| format!("S_{i}_{j}"))).collect();
    header.extend(names.iter().map(String::as_str));
    header.push("certificate");
    table_from(&header, rows)
}

/// Regenerates one worked example as a CSV table.
pub fn reproduce(target: &str) -> Result<Table> {
    match target {
        "ex1" => rows_to_table(&[result_row("ex1", None, &solve_ordering(&example1_game(), &[0, 1])?)]),
        "ex2" => correlation_sweep(),
        "ex3" => alignment_sweep(),
        "ex4" => sender_count_sweep(),
        "ex5" => {
            let mut t = Table::new(
                ["table", "ordering", "J_s1", "J_s2", "J_s3", "J_total", "J_r", "certificate"]
                    .into_iter()
                    .map(String::from),
            );
            for (name, sub) in [("1", reproduce("table1")?), ("2", reproduce("table2")?)] {
                for r in sub.rows {
                    let mut cells = vec![name.to_string()];
                    cells.extend(r);
                    t.push(cells)?;
                }
            }
            Ok(t)
        }
        "ex6" => cooperation_sweep(),
        "ex7" => dynamic_table(),
        "ex8" => receiver_coupling_sweep(),
        "table1" => ordering_table(&independent_senders_game(3, 0.1)?, "table1"),
        "table2" => ordering_table(&heterogeneous_senders_game(), "table2"),
        other => Err(Error::InvalidGame(format!(
            "unknown target `{other}`; expected one of {}",
            TARGETS.join(", ")
        ))),
    }
}

fn instance_rows(id: &str, inst: &Instance) -> Result<Vec<ResultRow>> {
    match &inst.model {
        Model::Static(g) => Ok(vec![result_row(id, inst.sweep.clone(), &solve_ordering(g, &inst.ordering)?)]),
        Model::MultiReceiver(spec) => Ok(vec![result_row(
            id,
            inst.sweep.clone(),
            &solve_multireceiver(spec, &inst.ordering)?,
        )]),
        Model::Dynamic(spec) => {
            let eq = solve_dynamic(spec)?;
            Ok((0..spec.horizon())
                .map(|k| ResultRow {
                    scenario: id.into(),
                    sweep: inst.sweep.clone(),
                    ordering: ordering_label(spec.ordering()),
                    stage: Some(k + 1),
                    costs: eq.stage_costs[k].clone(),
                    posterior: eq.posteriors[k].matrix().clone(),
                    policy: eq.policies[k].matrix().clone(),
                    certificate: eq.certificates[k],
                })
                .collect())
        }
    }
}

/// Solves every sweep point of a scenario (every stage for dynamic ones).
pub fn solve_scenario(s: &ScenarioFile) -> Result<Vec<ResultRow>> {
    let inst = s.instances()?;
    Ok(inst
        .par_iter()
        .map(|i| instance_rows(&s.id, i))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect())
}

/// One row per ordering for every sweep point of a static scenario.
pub fn scenario_orderings(s: &ScenarioFile) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for inst in s.instances()? {
        let Model::Static(g) = &inst.model else {
            return Err(Error::InvalidGame("ordering enumeration needs a static scenario".into()));
        };
        rows.extend(enumerate_orderings(g)?.values().map(|r| result_row(&s.id, inst.sweep.clone(), r)));
    }
    Ok(rows)
}

/// Monte-Carlo check of one solved sweep point (one report per stage for
/// dynamic games).
#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub sweep: Option<(String, f64)>,
    pub stage: Option<usize>,
    pub report: SimReport,
}

/// Solves the scenario and samples its equilibrium policies.
pub fn validate_scenario(s: &ScenarioFile, cfg: &SimConfig) -> Result<Vec<Validation>> {
    let mut out = Vec::new();
    for inst in s.instances()? {
        match &inst.model {
            Model::Static(g) => {
                let r = solve_ordering(g, &inst.ordering)?;
                out.push(Validation {
                    sweep: inst.sweep.clone(),
                    stage: None,
                    report: simulate_static(g, &r.policy, cfg)?,
                });
            }
            Model::Dynamic(spec) => {
                let eq = solve_dynamic(spec)?;
                for (k, report) in simulate_dynamic(spec, &eq.policies, cfg)?.into_iter().enumerate() {
                    out.push(Validation {
                        sweep: inst.sweep.clone(),
                        stage: Some(k + 1),
                        report,
                    });
                }
            }
            Model::MultiReceiver(_) => {
                return Err(Error::InvalidGame(
                    "sampling checks cover static and dynamic scenarios".into(),
                ))
            }
        }
    }
    Ok(out)
}

/// Long-format table of every compared quantity.
pub fn validation_table(v: &[Validation]) -> Result<Table> {
    let first = v.first().ok_or_else(|| Error::InvalidGame("nothing validated".into()))?;
    let mut header = Vec::new();
    if let Some((name, _)) = &first.sweep {
        header.push(name.clone());
    }
    if first.stage.is_some() {
        header.push("stage".into());
    }
    header.extend(["quantity", "empirical", "std_err", "theory", "z_score"].map(String::from));
    let mut t = Table::new(header);
    for item in v {
        let mut lead = Vec::new();
        if let Some((_, x)) = &item.sweep {
            lead.push(fmt_sig(*x));
        }
        if let Some(k) = item.stage {
            lead.push(k.to_string());
        }
        let r = &item.report;
        let mut push = |name: String, e: f64, se: f64, th: f64| {
            let mut cells = lead.clone();
            let z = if se > 0.0 { (e - th).abs() / se } else { 0.0 };
            cells.extend([name, fmt_sig(e), fmt_sig(se), fmt_sig(th), fmt_sig(z)]);
            t.push(cells)
        };
        for c in &r.costs {
            let name = match c.player {
                crate::game::Player::Sender(i) => format!("J_s{}", i + 1),
                crate::game::Player::Receiver(_) => "J_r".to_string(),
            };
            push(name, c.mean, c.std_err, c.theory)?;
        }
        let p = r.posterior.nrows();
        for i in 0..p {
            for j in 0..p {
                push(
                    format!("S_{}_{}", i + 1, j + 1),
                    r.posterior[(i, j)],
                    r.posterior_se[(i, j)],
                    r.theory_posterior[(i, j)],
                )?;
            }
        }
        for i in 0..p {
            for j in 0..p {
                push(format!("cross_{}_{}", i + 1, j + 1), r.cross[(i, j)], r.cross_se[(i, j)], 0.0)?;
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn example1_costs() {
        let r = solve_ordering(&example1_game(), &[0, 1]).unwrap();
        assert_abs_diff_eq!(r.costs.senders[0], 1.4144, epsilon = 1e-3);
        assert_abs_diff_eq!(r.costs.senders[1], 0.8699, epsilon = 1e-3);
        assert_abs_diff_eq!(r.costs.receiver(), 0.0285, epsilon = 1e-3);
    }

    #[test]
    fn table1_shape() {
        let t = reproduce("table1").unwrap();
        assert_eq!(t.rows.len(), 7);
        assert_eq!(t.rows[0][0], "3-2-1");
        assert_eq!(t.rows[6][0], "full");
        let total = t.numbers("J_total").unwrap();
        assert!(total[..6].iter().all(|v| (v - 2.5308).abs() < 1e-3));
        assert_eq!(total[6], 3.0);
    }

    #[test]
    fn example5_combines_both_tables() {
        let t = reproduce("ex5").unwrap();
        assert_eq!(t.rows.len(), 14);
        assert_eq!(t.rows[7][0], "2");
    }

    #[test]
    fn unknown_target() {
        assert!(reproduce("ex9").is_err());
    }

    #[test]
    fn reproduce_is_deterministic() {
        for target in ["ex2", "ex4", "ex8"] {
            assert_eq!(reproduce(target).unwrap().to_csv_string(), reproduce(target).unwrap().to_csv_string());
        }
    }

    #[test]
    fn heterogeneous_prior_entries() {
        let g = heterogeneous_senders_game();
        assert_eq!(g.prior().matrix()[(0, 0)], 100.0);
        assert_eq!(g.prior().matrix()[(3, 0)], 7.5);
        assert_eq!(g.num_senders(), 3);
    }
}

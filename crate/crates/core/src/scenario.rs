//! JSON scenario files.
//!
//! Matrices are dense row-major arrays. An entry is either a number or an
//! arithmetic expression (`+ - * /`, parentheses) over named parameters, for
//! example `"1+alpha"` or `"-1/(1-alpha)"`. Parameters take their values from
//! `parameters` and, per sweep point, from `sweep`. Player matrices of dynamic
//! scenarios may also use `k` (1-based stage) and `n` (horizon). Orderings
//! are 1-based.
//!
//! ```json
//! {
//!   "id": "example1",
//!   "kind": "static",
//!   "prior": [[1, 0.5, 0.7], [0.5, 1.5, 0.2], [0.7, 0.2, 1]],
//!   "senders": [{"q": [[1, 1, 0]], "r": [[-1]]}, {"q": [[1, 0, 1]], "r": [[-1]]}],
//!   "receiver": {"q": [[1, 0, 0]], "r": [[-1]]},
//!   "ordering": [1, 2]
//! }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamic::{DynamicGameSpec, StageCosts};
use crate::error::{Error, Result};
use crate::game::{GameSpec, PlayerCost};
use crate::linalg::{Mat, PsdMatrix};
use crate::multireceiver::{CoupledCost, MultiReceiverSpec};

/// A matrix entry: a literal or an expression over parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Num(f64),
    Expr(String),
}

pub type MatrixExpr = Vec<Vec<Entry>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Static,
    Dynamic,
    Multireceiver,
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScenarioKind::Static => "static",
            ScenarioKind::Dynamic => "dynamic",
            ScenarioKind::Multireceiver => "multireceiver",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub state: usize,
    pub action: usize,
}

/// `{q, r}` for single-receiver games, `{q, r1, r2}` for two receivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerEntry {
    pub q: MatrixExpr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<MatrixExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r1: Option<MatrixExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r2: Option<MatrixExpr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageEntry {
    pub senders: Vec<PlayerEntry>,
    pub receiver: PlayerEntry,
}

/// Dynamics and horizon. Stage costs come from the top-level players
/// (evaluated with `k` and `n`) unless `stages` lists them explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicBlock {
    pub a: MatrixExpr,
    pub sigma0: MatrixExpr,
    pub sigma_w: MatrixExpr,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<Vec<StageEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub id: String,
    pub kind: ScenarioKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Dims>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<MatrixExpr>,
    #[serde(default)]
    pub senders: Vec<PlayerEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receiver: Option<PlayerEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub receivers: Vec<PlayerEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic: Option<DynamicBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordering: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Static(GameSpec),
    Dynamic(DynamicGameSpec),
    MultiReceiver(MultiReceiverSpec),
}

/// The scenario evaluated at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub sweep: Option<(String, f64)>,
    pub model: Model,
    /// 0-based.
    pub ordering: Vec<usize>,
}

fn located(path: impl Into<String>, reason: impl ToString) -> Error {
    Error::Scenario {
        path: path.into(),
        reason: reason.to_string(),
    }
}

/// Reads, parses and validates a scenario at every sweep point.
pub fn parse_scenario(path: impl AsRef<Path>) -> Result<ScenarioFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| located(path.display().to_string(), e))?;
    let s = ScenarioFile::from_json_str(&text)?;
    s.instances()?;
    Ok(s)
}

impl ScenarioFile {
    /// Parses without building the models.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            located(path, e.into_inner())
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// One parameter environment per sweep point.
    fn points(&self) -> Result<Vec<(Option<(String, f64)>, BTreeMap<String, f64>)>> {
        for name in self.parameters.keys() {
            check_name(name, "parameters")?;
        }
        match &self.sweep {
            None => Ok(vec![(None, self.parameters.clone())]),
            Some(sw) => {
                check_name(&sw.parameter, "sweep.parameter")?;
                if sw.values.is_empty() {
                    return Err(located("sweep.values", "at least one value is required"));
                }
                if let Some(i) = sw.values.iter().position(|v| !v.is_finite()) {
                    return Err(located(format!("sweep.values[{i}]"), "value is not finite"));
                }
                Ok(sw
                    .values
                    .iter()
                    .map(|&v| {
                        let mut env = self.parameters.clone();
                        env.insert(sw.parameter.clone(), v);
                        (Some((sw.parameter.clone(), v)), env)
                    })
                    .collect())
            }
        }
    }

    /// Builds and validates the model at every sweep point.
    pub fn instances(&self) -> Result<Vec<Instance>> {
        self.points()?
            .into_iter()
            .map(|(sweep, env)| {
                let (model, m) = self.build(&env)?;
                let ordering = self.ordering(m)?;
                let model = match model {
                    Built::Dynamic(f) => Model::Dynamic(f(ordering.clone())?),
                    Built::Ready(m) => m,
                };
                Ok(Instance { sweep, model, ordering })
            })
            .collect()
    }

    /// The 0-based ordering, defaulting to `1, …, m`.
    fn ordering(&self, m: usize) -> Result<Vec<usize>> {
        let Some(order) = &self.ordering else {
            return Ok((0..m).collect());
        };
        let mut seen = vec![false; m];
        for (i, &s) in order.iter().enumerate() {
            if s == 0 || s > m || seen[s - 1] {
                return Err(located(
                    format!("ordering[{i}]"),
                    format!("expected a permutation of 1..={m}, found {order:?}"),
                ));
            }
            seen[s - 1] = true;
        }
        if order.len() != m {
            return Err(located("ordering", format!("expected {m} entries, found {}", order.len())));
        }
        Ok(order.iter().map(|s| s - 1).collect())
    }

    fn unused(&self, kind: &str) -> Result<()> {
        let extra = [
            ("prior", self.prior.is_some() && self.kind == ScenarioKind::Dynamic),
            ("receiver", self.receiver.is_some() && self.kind == ScenarioKind::Multireceiver),
            ("receivers", !self.receivers.is_empty() && self.kind != ScenarioKind::Multireceiver),
            ("dynamic", self.dynamic.is_some() && self.kind != ScenarioKind::Dynamic),
        ];
        match extra.iter().find(|(_, bad)| *bad) {
            Some((field, _)) => Err(located(*field, format!("not used by {kind} scenarios"))),
            None => Ok(()),
        }
    }

    fn build(&self, env: &BTreeMap<String, f64>) -> Result<(Built, usize)> {
        match self.kind {
            ScenarioKind::Static => {
                self.unused("static")?;
                let prior = self.prior_matrix(env)?;
                let receiver = self.receiver.as_ref().ok_or_else(|| located("receiver", "missing receiver block"))?;
                let receiver = single(receiver, "receiver", env)?;
                let senders = self.single_senders(env)?;
                if let Some(d) = self.dims {
                    check_dims(d, prior.dim(), receiver.r.ncols())?;
                }
                let m = senders.len();
                let g = GameSpec::from_parts(prior, senders, receiver).map_err(|e| match e {
                    Error::SingularReceiver { .. } => located("receiver.r", e),
                    _ => located("senders", e),
                })?;
                Ok((Built::Ready(Model::Static(g)), m))
            }
            ScenarioKind::Multireceiver => {
                self.unused("multireceiver")?;
                let prior = self.prior_matrix(env)?;
                if self.receivers.len() != 2 {
                    return Err(located("receivers", format!("exactly 2 receivers required, found {}", self.receivers.len())));
                }
                if self.senders.is_empty() {
                    return Err(located("senders", "at least one sender is required"));
                }
                let senders = self
                    .senders
                    .iter()
                    .enumerate()
                    .map(|(i, p)| coupled(p, &format!("senders[{i}]"), env))
                    .collect::<Result<Vec<_>>>()?;
                let r0 = coupled(&self.receivers[0], "receivers[0]", env)?;
                let r1 = coupled(&self.receivers[1], "receivers[1]", env)?;
                if let Some(d) = self.dims {
                    check_dims(d, prior.dim(), r0.r1.ncols())?;
                }
                let m = senders.len();
                let spec = MultiReceiverSpec::new(prior.matrix().clone(), senders, [r0, r1]).map_err(|e| located("receivers", e))?;
                Ok((Built::Ready(Model::MultiReceiver(spec)), m))
            }
            ScenarioKind::Dynamic => {
                self.unused("dynamic")?;
                let block = self.dynamic.as_ref().ok_or_else(|| located("dynamic", "missing dynamic block"))?;
                for name in ["k", "n"] {
                    if env.contains_key(name) {
                        return Err(located("parameters", format!("`{name}` is reserved in dynamic scenarios")));
                    }
                }
                let n = block.horizon;
                if n == 0 {
                    return Err(located("dynamic.horizon", "horizon must be at least 1"));
                }
                let a = matrix(&block.a, "dynamic.a", env)?;
                let sigma0 = matrix(&block.sigma0, "dynamic.sigma0", env)?;
                let sigma_w = matrix(&block.sigma_w, "dynamic.sigma_w", env)?;
                let mut stages = Vec::with_capacity(n);
                for k in 1..=n {
                    let mut env = env.clone();
                    env.insert("k".into(), k as f64);
                    env.insert("n".into(), n as f64);
                    let stage = match &block.stages {
                        Some(list) => {
                            if list.len() != n {
                                return Err(located(
                                    "dynamic.stages",
                                    format!("expected {n} stages, found {}", list.len()),
                                ));
                            }
                            let s = &list[k - 1];
                            let at = format!("dynamic.stages[{}]", k - 1);
                            StageCosts {
                                senders: s
                                    .senders
                                    .iter()
                                    .enumerate()
                                    .map(|(i, p)| single(p, &format!("{at}.senders[{i}]"), &env))
                                    .collect::<Result<_>>()?,
                                receiver: single(&s.receiver, &format!("{at}.receiver"), &env)?,
                            }
                        }
                        None => {
                            let receiver = self
                                .receiver
                                .as_ref()
                                .ok_or_else(|| located("receiver", "missing receiver block"))?;
                            StageCosts {
                                senders: self.single_senders(&env)?,
                                receiver: single(receiver, "receiver", &env)?,
                            }
                        }
                    };
                    stages.push(stage);
                }
                let m = stages[0].senders.len();
                if m == 0 {
                    return Err(located("senders", "at least one sender is required"));
                }
                if let Some(d) = self.dims {
                    check_dims(d, a.nrows(), stages[0].receiver.r.ncols())?;
                }
                let f: DynamicBuilder = Box::new(move |ordering| {
                    DynamicGameSpec::new(a, sigma0, sigma_w, stages, ordering).map_err(|e| located("dynamic", e))
                });
                Ok((Built::Dynamic(f), m))
            }
        }
    }

    fn prior_matrix(&self, env: &BTreeMap<String, f64>) -> Result<PsdMatrix> {
        let prior = self.prior.as_ref().ok_or_else(|| located("prior", "missing prior"))?;
        PsdMatrix::from_mat(matrix(prior, "prior", env)?).map_err(|e| located("prior", e))
    }

    fn single_senders(&self, env: &BTreeMap<String, f64>) -> Result<Vec<PlayerCost>> {
        if self.senders.is_empty() {
            return Err(located("senders", "at least one sender is required"));
        }
        self.senders
            .iter()
            .enumerate()
            .map(|(i, p)| single(p, &format!("senders[{i}]"), env))
            .collect()
    }
}

type DynamicBuilder = Box<dyn FnOnce(Vec<usize>) -> Result<DynamicGameSpec>>;

enum Built {
    Ready(Model),
    Dynamic(DynamicBuilder),
}

fn check_dims(d: Dims, state: usize, action: usize) -> Result<()> {
    if d.state != state || d.action != action {
        return Err(located(
            "dims",
            format!("declared state {} / action {}, matrices give {state} / {action}", d.state, d.action),
        ));
    }
    Ok(())
}

fn check_name(name: &str, path: &str) -> Result<()> {
    let mut chars = name.chars();
    let ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
    if ok {
        Ok(())
    } else {
        Err(located(path, format!("`{name}` is not a valid parameter name")))
    }
}

fn single(p: &PlayerEntry, at: &str, env: &BTreeMap<String, f64>) -> Result<PlayerCost> {
    if p.r1.is_some() || p.r2.is_some() {
        return Err(located(at, "r1/r2 are only used by multireceiver scenarios"));
    }
    let r = p.r.as_ref().ok_or_else(|| located(format!("{at}.r"), "missing"))?;
    let q = matrix(&p.q, &format!("{at}.q"), env)?;
    let r = matrix(r, &format!("{at}.r"), env)?;
    PlayerCost::new(q, r).map_err(|e| located(at, e))
}

fn coupled(p: &PlayerEntry, at: &str, env: &BTreeMap<String, f64>) -> Result<CoupledCost> {
    if p.r.is_some() {
        return Err(located(format!("{at}.r"), "multireceiver players use r1 and r2"));
    }
    let get = |m: &Option<MatrixExpr>, name: &str| {
        let m = m.as_ref().ok_or_else(|| located(format!("{at}.{name}"), "missing"))?;
        matrix(m, &format!("{at}.{name}"), env)
    };
    let q = matrix(&p.q, &format!("{at}.q"), env)?;
    CoupledCost::new(q, get(&p.r1, "r1")?, get(&p.r2, "r2")?).map_err(|e| located(at, e))
}

/// Evaluates a matrix of entries; rows must be nonempty and equally long.
pub fn matrix(m: &MatrixExpr, at: &str, env: &BTreeMap<String, f64>) -> Result<Mat> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(located(at, "matrix must be nonempty"));
    }
    let mut out = Mat::zeros(rows, cols);
    for (i, row) in m.iter().enumerate() {
        if row.len() != cols {
            return Err(located(format!("{at}[{i}]"), format!("expected {cols} entries, found {}", row.len())));
        }
        for (j, e) in row.iter().enumerate() {
            let v = match e {
                Entry::Num(v) => *v,
                Entry::Expr(s) => eval_expr(s, env).map_err(|r| located(format!("{at}[{i}][{j}]"), r))?,
            };
            if !v.is_finite() {
                return Err(located(format!("{at}[{i}][{j}]"), "entry is not finite"));
            }
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

/// Evaluates `+ - * /` expressions over numbers, parentheses and named
/// parameters, in floating point.
pub fn eval_expr(src: &str, env: &BTreeMap<String, f64>) -> std::result::Result<f64, String> {
    let mut p = Parser { s: src.as_bytes(), i: 0, env };
    let v = p.sum()?;
    p.ws();
    if p.i != p.s.len() {
        return Err(format!("unexpected `{}` in `{src}`", &src[p.i..]));
    }
    Ok(v)
}

struct Parser<'a> {
    s: &'a [u8],
    i: usize,
    env: &'a BTreeMap<String, f64>,
}

impl Parser<'_> {
    fn ws(&mut self) {
        while self.s.get(self.i).is_some_and(|c| c.is_ascii_whitespace()) {
            self.i += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.ws();
        if self.s.get(self.i) == Some(&c) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn sum(&mut self) -> std::result::Result<f64, String> {
        let mut v = self.product()?;
        loop {
            if self.eat(b'+') {
                v += self.product()?;
            } else if self.eat(b'-') {
                v -= self.product()?;
            } else {
                return Ok(v);
            }
        }
    }

    fn product(&mut self) -> std::result::Result<f64, String> {
        let mut v = self.unary()?;
        loop {
            if self.eat(b'*') {
                v *= self.unary()?;
            } else if self.eat(b'/') {
                v /= self.unary()?;
            } else {
                return Ok(v);
            }
        }
    }

    fn unary(&mut self) -> std::result::Result<f64, String> {
        if self.eat(b'-') {
            return Ok(-self.unary()?);
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.atom()
    }

    fn atom(&mut self) -> std::result::Result<f64, String> {
        if self.eat(b'(') {
            let v = self.sum()?;
            if !self.eat(b')') {
                return Err("missing `)`".into());
            }
            return Ok(v);
        }
        self.ws();
        let start = self.i;
        let Some(&c) = self.s.get(self.i) else {
            return Err("unexpected end of expression".into());
        };
        if c.is_ascii_digit() || c == b'.' {
            while let Some(&c) = self.s.get(self.i) {
                let exp_sign = (c == b'+' || c == b'-') && matches!(self.s[self.i - 1], b'e' | b'E');
                if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                    self.i += 1;
                } else {
                    break;
                }
            }
            let text = std::str::from_utf8(&self.s[start..self.i]).expect("ascii");
            return text.parse().map_err(|_| format!("bad number `{text}`"));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while self.s.get(self.i).is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_') {
                self.i += 1;
            }
            let name = std::str::from_utf8(&self.s[start..self.i]).expect("ascii");
            return self.env.get(name).copied().ok_or_else(|| format!("unknown parameter `{name}`"));
        }
        Err(format!("unexpected `{}`", c as char))
    }
}

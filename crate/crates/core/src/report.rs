//! CSV output.

use std::io::Write;

use crate::error::{Error, Result};
use crate::game::Costs;
use crate::linalg::Mat;

/// Formats `x` with 9 significant digits, like C's `%.9g`.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim(format!("{x:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim(mant.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// A header and string cells; numbers are formatted with [`fmt_sig`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::DimError {
                expected: format!("{} columns", self.header.len()),
                found: format!("{}", row.len()),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    /// Index of a column by name.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Parses the cells of column `name` as numbers.
    pub fn numbers(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column(name)?;
        self.rows.iter().map(|r| r[c].parse().ok()).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.to_string());
        out.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            out.write_record(r).map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 cells")
    }
}

/// One solved game (or one stage of a dynamic game).
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    /// Sweep parameter name and value.
    pub sweep: Option<(String, f64)>,
    /// 1-based ordering, or a label such as `full`.
    pub ordering: String,
    /// 1-based stage for dynamic games.
    pub stage: Option<usize>,
    pub costs: Costs,
    pub posterior: Mat,
    pub policy: Mat,
    /// Minimum eigenvalue over the senders' whitened incentives.
    pub certificate: f64,
}

/// Writes `order` (0-based) as `3-2-1`.
pub fn ordering_label(order: &[usize]) -> String {
    order.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join("-")
}

fn flat(m: &Mat) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| (i, j, m[(i, j)])))
}

/// Builds the fixed column layout from the first row:
/// `[sweep,] scenario, ordering, [stage,] J_s*, J_r*, S_ij, L_ij, certificate`.
pub fn rows_to_table(rows: &[ResultRow]) -> Result<Table> {
    let first = rows
        .first()
        .ok_or_else(|| Error::InvalidGame("no result rows".into()))?;
    let mut header = Vec::new();
    if let Some((name, _)) = &first.sweep {
        header.push(name.clone());
    }
    header.push("scenario".into());
    header.push("ordering".into());
    if first.stage.is_some() {
        header.push("stage".into());
    }
    header.extend((1..=first.costs.senders.len()).map(|i| format!("J_s{i}")));
    if first.costs.receivers.len() == 1 {
        header.push("J_r".into());
    } else {
        header.extend((1..=first.costs.receivers.len()).map(|i| format!("J_r{i}")));
    }
    header.extend(flat(&first.posterior).map(|(i, j, _)| format!("S_{}_{}", i + 1, j + 1)));
    header.extend(flat(&first.policy).map(|(i, j, _)| format!("L_{}_{}", i + 1, j + 1)));
    header.push("certificate".into());

    let mut table = Table::new(header);
    for r in rows {
        let mut cells = Vec::new();
        if let Some((_, v)) = &r.sweep {
            cells.push(fmt_sig(*v));
        }
        cells.push(r.scenario.clone());
        cells.push(r.ordering.clone());
        if let Some(k) = r.stage {
            cells.push(k.to_string());
        }
        cells.extend(r.costs.senders.iter().chain(&r.costs.receivers).map(|v| fmt_sig(*v)));
        cells.extend(flat(&r.posterior).map(|(_, _, v)| fmt_sig(v)));
        cells.extend(flat(&r.policy).map(|(_, _, v)| fmt_sig(v)));
        cells.push(fmt_sig(r.certificate));
        table.push(cells)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(-0.0), "0");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig(-2.0 / 3.0), "-0.666666667");
        assert_eq!(fmt_sig(123456789.4), "123456789");
        assert_eq!(fmt_sig(1234567894.0), "1.23456789e+09");
        assert_eq!(fmt_sig(1.5e-7), "1.5e-07");
        assert_eq!(fmt_sig(0.0001), "0.0001");
        assert_eq!(fmt_sig(9.9999999999), "10");
        assert_eq!(fmt_sig(0.02850000000001), "0.0285");
    }

    #[test]
    fn header_always_written() {
        let t = Table::new(["a", "b"]);
        assert_eq!(t.to_csv_string(), "a,b\n");
    }

    #[test]
    fn row_width_checked() {
        let mut t = Table::new(["a", "b"]);
        assert!(t.push(vec!["1".into()]).is_err());
        t.push(vec!["1".into(), "x".into()]).unwrap();
        assert_eq!(t.numbers("a"), Some(vec![1.0]));
        assert_eq!(t.numbers("b"), None);
    }

    #[test]
    fn result_row_layout() {
        let row = ResultRow {
            scenario: "demo".into(),
            sweep: Some(("alpha".into(), 0.5)),
            ordering: ordering_label(&[1, 0]),
            stage: None,
            costs: Costs {
                senders: vec![1.0, 2.0],
                receivers: vec![0.25],
            },
            posterior: Mat::identity(2, 2),
            policy: Mat::zeros(2, 2),
            certificate: 0.0,
        };
        let t = rows_to_table(&[row]).unwrap();
        assert_eq!(
            t.to_csv_string(),
            "alpha,scenario,ordering,J_s1,J_s2,J_r,S_1_1,S_1_2,S_2_1,S_2_2,L_1_1,L_1_2,L_2_1,L_2_2,certificate\n\
             0.5,demo,2-1,1,2,0.25,1,0,0,1,0,0,0,0,0\n"
        );
    }
}

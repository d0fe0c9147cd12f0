//! CSV import and export for tabulated rules, menus, strategies and analysis fields.
//! Floats are written in scientific notation with 17 significant digits so
//! that they read back bit-for-bit.

use std::io::{Read, Write};

use crate::builder::MenuItem;
use crate::characterizer::RhoSample;
use crate::error::{Error, Result};
use crate::model::{InterimRules, RuleTable, Strategy, TypeSpace};
use crate::surrogate::SurrogateField;

/// Grid coordinates in a rules file must match a node within this.
pub const NODE_MATCH_TOL: f64 = 1e-9;

pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_float(field: &str, line: u64, column: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Invalid(format!("line {line}, column {column}: cannot parse {field:?} as a number")))
}

/// Header positions of `prefix1, prefix2, ...` in order.
fn indexed_columns(headers: &csv::StringRecord, prefix: &str) -> Vec<usize> {
    let mut cols = Vec::new();
    for k in 1.. {
        match headers.iter().position(|h| h.trim() == format!("{prefix}{k}")) {
            Some(c) => cols.push(c),
            None => break,
        }
    }
    cols
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Invalid(format!("missing column {name:?}")))
}

/// Reads rules tabulated on `space` from columns `v_1..v_d, q_1..q_D, p`.
/// Every grid node must appear exactly once, in any order.
pub fn read_rules_csv<R: Read>(input: R, space: &TypeSpace) -> Result<InterimRules> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let vcols = indexed_columns(&headers, "v_");
    let qcols = indexed_columns(&headers, "q_");
    let pcol = column(&headers, "p")?;
    if vcols.len() != space.dim() {
        return Err(Error::DimensionMismatch {
            context: "rules file type columns",
            expected: space.dim(),
            found: vcols.len(),
        });
    }
    if qcols.is_empty() {
        return Err(Error::Invalid("rules file has no outcome columns q_1..".into()));
    }
    let n = space.len();
    let mut outcomes = vec![None; n];
    let mut payments = vec![0.0; n];
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |c: usize| parse_float(rec.get(c).unwrap_or(""), line, &headers[c]);
        let v = vcols.iter().map(|&c| get(c)).collect::<Result<Vec<_>>>()?;
        let node = space
            .find(&v, NODE_MATCH_TOL)
            .ok_or_else(|| Error::Invalid(format!("line {line}: {v:?} is not a grid node")))?;
        if outcomes[node].is_some() {
            return Err(Error::Invalid(format!("line {line}: node {v:?} listed twice")));
        }
        outcomes[node] = Some(qcols.iter().map(|&c| get(c)).collect::<Result<Vec<_>>>()?);
        payments[node] = get(pcol)?;
    }
    let outcomes = outcomes
        .into_iter()
        .enumerate()
        .map(|(i, q)| q.ok_or_else(|| Error::Invalid(format!("grid node {:?} missing from rules file", space.point(i)))))
        .collect::<Result<Vec<_>>>()?;
    InterimRules::tabulated(space.clone(), outcomes, payments)
}

pub fn write_rules_csv<W: Write>(table: &RuleTable, space: &TypeSpace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dq = table.outcomes.first().map_or(0, Vec::len);
    let mut header: Vec<String> = (1..=space.dim()).map(|k| format!("v_{k}")).collect();
    header.extend((1..=dq).map(|k| format!("q_{k}")));
    header.push("p".into());
    w.write_record(&header)?;
    for i in 0..table.len() {
        let mut rec: Vec<String> = space.point(i).iter().map(|x| fmt_float(*x)).collect();
        rec.extend(table.outcomes[i].iter().map(|x| fmt_float(*x)));
        rec.push(fmt_float(table.payments[i]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a menu from columns `q_1..q_D, price`.
pub fn read_menu_csv<R: Read>(input: R) -> Result<Vec<MenuItem>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let qcols = indexed_columns(&headers, "q_");
    let pcol = column(&headers, "price")?;
    if qcols.is_empty() {
        return Err(Error::Invalid("menu file has no outcome columns q_1..".into()));
    }
    let mut menu = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |c: usize| parse_float(rec.get(c).unwrap_or(""), line, &headers[c]);
        menu.push(MenuItem {
            outcome: qcols.iter().map(|&c| get(c)).collect::<Result<_>>()?,
            price: get(pcol)?,
        });
    }
    Ok(menu)
}

pub fn write_menu_csv<W: Write>(menu: &[MenuItem], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dq = menu.first().map_or(0, |m| m.outcome.len());
    let mut header: Vec<String> = (1..=dq).map(|k| format!("q_{k}")).collect();
    header.push("price".into());
    w.write_record(&header)?;
    for it in menu {
        let mut rec: Vec<String> = it.outcome.iter().map(|x| fmt_float(*x)).collect();
        rec.push(fmt_float(it.price));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Nonzero entries as `true_type,report,probability`.
pub fn write_strategy_csv<W: Write>(strategy: &Strategy, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["true_type", "report", "probability"])?;
    for (i, j, x) in strategy.triples() {
        w.write_record([i.to_string(), j.to_string(), fmt_float(x)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rho_csv<W: Write>(samples: &[RhoSample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["r", "rho_plus", "rho_minus"])?;
    for s in samples {
        w.write_record([fmt_float(s.r), fmt_float(s.rho_plus), fmt_float(s.rho_minus)])?;
    }
    w.flush()?;
    Ok(())
}

/// `node, v_1..v_d, U, u_tilde_1..u_tilde_d, gradient_residual`; the residual
/// is empty on boundary nodes.
pub fn write_field_csv<W: Write>(field: &SurrogateField, space: &TypeSpace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = space.dim();
    let mut header = vec!["node".to_string()];
    header.extend((1..=d).map(|k| format!("v_{k}")));
    header.push("U".into());
    header.extend((1..=d).map(|k| format!("u_tilde_{k}")));
    header.push("gradient_residual".into());
    w.write_record(&header)?;
    let mut residual = vec![None; space.len()];
    for (&i, &e) in field.interior.iter().zip(&field.gradient_residual) {
        residual[i] = Some(e);
    }
    for i in 0..space.len() {
        let mut rec = vec![i.to_string()];
        rec.extend(space.point(i).iter().map(|x| fmt_float(*x)));
        rec.push(fmt_float(field.utility[i]));
        rec.extend(field.u_tilde[i].iter().map(|x| fmt_float(*x)));
        rec.push(residual[i].map(fmt_float).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

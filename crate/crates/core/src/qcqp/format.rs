//! Plain-text instance format.
//!
//! ```text
//! qcqp 1
//! n <n>
//! m <m>
//! seed <seed>
//! lower
//! <n numbers>
//! upper
//! <n numbers>
//! Q0
//! <n rows of n numbers>
//! c0
//! <n numbers>
//! constraint <j>          (repeated m times)
//! Q
//! <n rows of n numbers>
//! c
//! <n numbers>
//! d <number>
//! end
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Numbers are written
//! in shortest round-trip form, so `parse(serialize(x)) == x` bit for bit.

use std::fmt::Write;

use nalgebra::{DMatrix, DVector};

use super::{QcqpInstance, QuadConstraint};
use crate::error::QcqpError;
use crate::problem::BoxSet;

const MAGIC: &str = "qcqp";
const VERSION: &str = "1";

fn write_row<'a>(out: &mut String, it: impl Iterator<Item = &'a f64>) {
    let row: Vec<String> = it.map(|v| v.to_string()).collect();
    out.push_str(&row.join(" "));
    out.push('\n');
}

fn write_matrix(out: &mut String, a: &DMatrix<f64>) {
    for i in 0..a.nrows() {
        write_row(out, a.row(i).iter());
    }
}

pub fn serialize(inst: &QcqpInstance) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "n {}", inst.n());
    let _ = writeln!(out, "m {}", inst.m());
    let _ = writeln!(out, "seed {}", inst.seed);
    out.push_str("lower\n");
    write_row(&mut out, inst.bounds.lower.iter());
    out.push_str("upper\n");
    write_row(&mut out, inst.bounds.upper.iter());
    out.push_str("Q0\n");
    write_matrix(&mut out, &inst.q0);
    out.push_str("c0\n");
    write_row(&mut out, inst.c0.iter());
    for (j, con) in inst.constraints.iter().enumerate() {
        let _ = writeln!(out, "constraint {}", j + 1);
        out.push_str("Q\n");
        write_matrix(&mut out, &con.q);
        out.push_str("c\n");
        write_row(&mut out, con.c.iter());
        let _ = writeln!(out, "d {}", con.d);
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last_line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Self { inner: it.peekable(), last_line: 0 }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str), QcqpError> {
        match self.inner.next() {
            Some((no, l)) => {
                self.last_line = no;
                Ok((no, l))
            }
            None => Err(QcqpError::Parse {
                line: self.last_line + 1,
                message: format!("unexpected end of input: missing {what}"),
            }),
        }
    }

    /// Expects `key` optionally followed by one value; returns the value.
    fn keyed(&mut self, key: &str) -> Result<(usize, Option<&'a str>), QcqpError> {
        let (no, line) = self.next(&format!("section `{key}`"))?;
        let mut toks = line.split_whitespace();
        let head = toks.next().unwrap_or("");
        if head != key {
            return Err(err(no, format!("expected section `{key}`, found `{head}`")));
        }
        let val = toks.next();
        if let Some(extra) = toks.next() {
            return Err(err(no, format!("unexpected token `{extra}` after `{key}`")));
        }
        Ok((no, val))
    }

    fn keyed_value<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, QcqpError> {
        let (no, val) = self.keyed(key)?;
        let val = val.ok_or_else(|| err(no, format!("`{key}` needs a value")))?;
        val.parse()
            .map_err(|_| err(no, format!("invalid value `{val}` for `{key}`")))
    }

    fn numbers(&mut self, n: usize, what: &str) -> Result<Vec<f64>, QcqpError> {
        let (no, line) = self.next(what)?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .enumerate()
            .map(|(k, t)| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(no, format!("{what}: field {} `{t}` is not a finite number", k + 1)))
            })
            .collect::<Result<_, _>>()?;
        if vals.len() != n {
            return Err(err(no, format!("{what}: expected {n} numbers, found {}", vals.len())));
        }
        Ok(vals)
    }

    fn vector(&mut self, n: usize, what: &str) -> Result<DVector<f64>, QcqpError> {
        Ok(DVector::from_vec(self.numbers(n, what)?))
    }

    fn matrix(&mut self, n: usize, what: &str) -> Result<DMatrix<f64>, QcqpError> {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            data.extend(self.numbers(n, &format!("{what} row {}", i + 1))?);
        }
        Ok(DMatrix::from_row_slice(n, n, &data))
    }
}

fn err(line: usize, message: String) -> QcqpError {
    QcqpError::Parse { line, message }
}

pub fn parse(text: &str) -> Result<QcqpInstance, QcqpError> {
    let mut lines = Lines::new(text);
    let (no, version) = lines.keyed(MAGIC)?;
    if version != Some(VERSION) {
        return Err(err(no, format!("unsupported format version {version:?}")));
    }
    let n: usize = lines.keyed_value("n")?;
    let m: usize = lines.keyed_value("m")?;
    let seed: u64 = lines.keyed_value("seed")?;
    lines.keyed("lower")?;
    let lower = lines.vector(n, "lower")?;
    lines.keyed("upper")?;
    let upper = lines.vector(n, "upper")?;
    lines.keyed("Q0")?;
    let q0 = lines.matrix(n, "Q0")?;
    lines.keyed("c0")?;
    let c0 = lines.vector(n, "c0")?;
    let mut constraints = Vec::with_capacity(m);
    for j in 1..=m {
        let (no, idx) = lines.keyed("constraint")?;
        if idx != Some(j.to_string().as_str()) {
            return Err(err(no, format!("expected `constraint {j}`")));
        }
        lines.keyed("Q")?;
        let q = lines.matrix(n, &format!("Q{j}"))?;
        lines.keyed("c")?;
        let c = lines.vector(n, &format!("c{j}"))?;
        let d: f64 = lines.keyed_value("d")?;
        constraints.push(QuadConstraint { q, c, d });
    }
    lines.keyed("end")?;
    let bounds = BoxSet::new(lower, upper).map_err(|e| err(lines.last_line, e.to_string()))?;
    let inst = QcqpInstance { q0, c0, constraints, bounds, seed };
    inst.validate()?;
    Ok(inst)
}

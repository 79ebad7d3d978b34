//! CSV tables for estimates, trajectories, error distributions and grid densities.
//!
//! Every table may start with `#` comment lines holding the run configuration;
//! readers skip them. Missing values are empty fields.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::bench::{BenchmarkResult, DroneTrajectory, ScalarWalk};
use crate::error::{Error, Result};
use crate::gaussian::{GaussianBelief, KfHistory};
use crate::grid::OracleRun;
use crate::student::{TBelief, TFilterRun};

/// Header plus rows of already formatted fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn push_vec(row: &mut Vec<String>, v: Option<&DVector<f64>>, len: usize) {
    match v {
        Some(v) => row.extend(v.iter().map(|x| num(*x))),
        None => row.extend(std::iter::repeat_n(String::new(), len)),
    }
}

/// Row-major entries.
fn push_mat(row: &mut Vec<String>, m: Option<&DMatrix<f64>>, rows: usize, cols: usize) {
    match m {
        Some(m) => {
            for i in 0..rows {
                for j in 0..cols {
                    row.push(num(m[(i, j)]));
                }
            }
        }
        None => row.extend(std::iter::repeat_n(String::new(), rows * cols)),
    }
}

fn names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}_{i}"))
}

fn mat_names(prefix: &str, r: usize, c: usize) -> Vec<String> {
    (0..r).flat_map(|i| (0..c).map(move |j| format!("{prefix}_{i}{j}"))).collect()
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { comments: Vec::new(), header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn with_comments(mut self, comments: &[String]) -> Self {
        self.comments = comments.to_vec();
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric column; empty fields read as NaN.
    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name).ok_or_else(|| Error::Parse(format!("no column {name}")))?;
        self.rows
            .iter()
            .map(|r| {
                let f = r[c].trim();
                if f.is_empty() {
                    Ok(f64::NAN)
                } else {
                    f.parse().map_err(|_| Error::Parse(format!("bad number {f:?} in column {name}")))
                }
            })
            .collect()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for c in &self.comments {
            writeln!(w, "# {c}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for r in &self.rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let header = rd.headers()?.iter().map(String::from).collect();
        let rows = rd
            .records()
            .map(|r| r.map(|r| r.iter().map(String::from).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { comments: Vec::new(), header, rows })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }
}

fn estimate_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["k".to_string()];
    h.extend(names("xhat", n));
    h.extend(mat_names("p", n, n));
    h.extend(names("yhat", m));
    h.extend(names("innovation", m));
    h.extend(mat_names("s", m, m));
    h
}

/// Filtered KF estimates; `k = 0` carries the prior with empty measurement columns.
pub fn kf_estimates(history: &KfHistory) -> Table {
    let n = history.prior.xhat.len();
    let m = history.steps.first().map_or(0, |s| s.diagnostics.yhat.len());
    let mut t = Table::new(estimate_header(n, m));
    let mut row = vec!["0".to_string()];
    push_vec(&mut row, Some(&history.prior.xhat), n);
    push_mat(&mut row, Some(&history.prior.p), n, n);
    push_vec(&mut row, None, 2 * m);
    push_mat(&mut row, None, m, m);
    t.push(row);
    for (i, s) in history.steps.iter().enumerate() {
        let mut row = vec![(i + 1).to_string()];
        push_vec(&mut row, Some(&s.filtered.xhat), n);
        push_mat(&mut row, Some(&s.filtered.p), n, n);
        push_vec(&mut row, Some(&s.diagnostics.yhat), m);
        push_vec(&mut row, Some(&s.diagnostics.innovation), m);
        push_mat(&mut row, Some(&s.diagnostics.s), m, m);
        t.push(row);
    }
    t
}

/// Filtered t estimates with `eta`, `d_factor` and `scale_factor` columns.
pub fn t_estimates(run: &TFilterRun) -> Table {
    let n = run.prior.xhat.len();
    let m = run.records.first().map_or(0, |r| r.diagnostics.yhat.len());
    let mut header = estimate_header(n, m);
    header.extend(["eta", "d_factor", "scale_factor"].map(String::from));
    let mut t = Table::new(header);
    let mut row = vec!["0".to_string()];
    push_vec(&mut row, Some(&run.prior.xhat), n);
    push_mat(&mut row, Some(&run.prior.p), n, n);
    push_vec(&mut row, None, 2 * m);
    push_mat(&mut row, None, m, m);
    row.extend([num(run.prior.eta), String::new(), String::new()]);
    t.push(row);
    for (i, r) in run.records.iter().enumerate() {
        let d = &r.diagnostics;
        let mut row = vec![(i + 1).to_string()];
        push_vec(&mut row, Some(&r.filtered.xhat), n);
        push_mat(&mut row, Some(&r.filtered.p), n, n);
        push_vec(&mut row, Some(&d.yhat), m);
        push_vec(&mut row, Some(&d.innovation), m);
        push_mat(&mut row, Some(&d.s), m, m);
        row.extend([num(r.filtered.eta), num(d.d_factor()), num(d.scale_factor)]);
        t.push(row);
    }
    t
}

/// Smoothed Gaussian estimates: `k`, `xhat_i`, `p_ij`.
pub fn smoothed_estimates(beliefs: &[GaussianBelief]) -> Table {
    let n = beliefs.first().map_or(0, |b| b.xhat.len());
    let mut header = vec!["k".to_string()];
    header.extend(names("xhat", n));
    header.extend(mat_names("p", n, n));
    let mut t = Table::new(header);
    for (k, b) in beliefs.iter().enumerate() {
        let mut row = vec![k.to_string()];
        push_vec(&mut row, Some(&b.xhat), n);
        push_mat(&mut row, Some(&b.p), n, n);
        t.push(row);
    }
    t
}

/// Smoothed or simplistic t estimates: `k`, `xhat_i`, `p_ij`, `eta`.
pub fn t_beliefs(beliefs: &[TBelief]) -> Table {
    let n = beliefs.first().map_or(0, |b| b.xhat.len());
    let mut header = vec!["k".to_string()];
    header.extend(names("xhat", n));
    header.extend(mat_names("p", n, n));
    header.push("eta".into());
    let mut t = Table::new(header);
    for (k, b) in beliefs.iter().enumerate() {
        let mut row = vec![k.to_string()];
        push_vec(&mut row, Some(&b.xhat), n);
        push_mat(&mut row, Some(&b.p), n, n);
        row.push(num(b.eta));
        t.push(row);
    }
    t
}

pub fn trajectory_table(tr: &DroneTrajectory) -> Table {
    let mut t = Table::new(["k", "px", "py", "vx", "vy", "yx", "yy", "maneuver_flag", "outlier_flag"]);
    for (k, (x, y)) in tr.states.iter().zip(&tr.measurements).enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(x.iter().chain(y.iter()).map(|v| num(*v)));
        row.push(u8::from(tr.maneuver[k]).to_string());
        row.push(u8::from(tr.outlier[k]).to_string());
        t.push(row);
    }
    t
}

/// Reads measurements `y[1..]` back from a trajectory table.
pub fn trajectory_measurements(t: &Table) -> Result<Vec<DVector<f64>>> {
    let (yx, yy) = (t.values("yx")?, t.values("yy")?);
    Ok(yx.iter().zip(&yy).skip(1).map(|(a, b)| DVector::from_vec(vec![*a, *b])).collect())
}

/// `k`, `x`, `y`; `k = 0` has no measurement.
pub fn scalar_walk_table(w: &ScalarWalk) -> Table {
    let mut t = Table::new(["k", "x", "y"]);
    for (k, x) in w.states.iter().enumerate() {
        let y = if k == 0 { f64::NAN } else { w.measurements[k - 1] };
        t.push(vec![k.to_string(), num(*x), num(y)]);
    }
    t
}

/// Scalar measurements `y[1..]` from a scalar walk table.
pub fn scalar_measurements(t: &Table) -> Result<Vec<f64>> {
    Ok(t.values("y")?.into_iter().filter(|v| !v.is_nan()).collect())
}

/// `run`, `filter`, `rmse`.
pub fn error_table(result: &BenchmarkResult) -> Table {
    let mut t = Table::new(["run", "filter", "rmse"]);
    for s in &result.summaries {
        for (run, e) in s.rmse.iter().enumerate() {
            t.push(vec![run.to_string(), s.label.clone(), num(*e)]);
        }
    }
    t
}

/// `filter`, `x`, `density`.
pub fn kde_table(result: &BenchmarkResult) -> Table {
    let mut t = Table::new(["filter", "x", "density"]);
    for s in &result.summaries {
        if let Some(k) = &s.kde {
            for (x, d) in k.grid.iter().zip(&k.density) {
                t.push(vec![s.label.clone(), num(*x), num(*d)]);
            }
        }
    }
    t
}

/// `k` then one position error column per filter.
pub fn per_step_table(result: &BenchmarkResult) -> Table {
    let errors = result.per_step_errors();
    let mut header = vec!["k".to_string()];
    header.extend(errors.iter().map(|(l, _)| l.clone()));
    let mut t = Table::new(header);
    let len = errors.first().map_or(0, |(_, e)| e.len());
    for k in 0..len {
        let mut row = vec![k.to_string()];
        row.extend(errors.iter().map(|(_, e)| num(e[k])));
        t.push(row);
    }
    t
}

/// `pass`, `k`, `x`, `pdf` for the predicted, filtered and smoothed grid densities.
pub fn density_table(run: &OracleRun) -> Table {
    let mut t = Table::new(["pass", "k", "x", "pdf"]);
    let xs = run.spec.points();
    let passes = [
        ("predicted", &run.predicted, 1usize),
        ("filtered", &run.filtered, 0),
        ("smoothed", &run.smoothed, 0),
    ];
    for (name, ds, k0) in passes {
        for (i, d) in ds.iter().enumerate() {
            for (x, p) in xs.iter().zip(d.pdf()) {
                t.push(vec![name.to_string(), (i + k0).to_string(), num(*x), num(*p)]);
            }
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_are_skipped_and_values_round_trip() {
        let mut t = Table::new(["a", "b"]).with_comments(&["seed=3".into()]);
        t.push(vec![num(0.1), num(f64::NAN)]);
        t.push(vec![num(-2.5e-300), num(7.0)]);
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# seed=3\na,b\n0.1,\n"));
        let back = Table::read(buf.as_slice()).unwrap();
        assert_eq!(back.header, t.header);
        assert_eq!(back.values("a").unwrap(), vec![0.1, -2.5e-300]);
        assert!(back.values("b").unwrap()[0].is_nan());
        assert!(back.values("c").is_err());
    }
}

//! Convergence and timing studies on the manufactured benchmark, with CSV
//! output.

use std::io::Write;
use std::path::Path;

use crate::error::{PnpError, Result};
use crate::mesh::Diagonal;
use crate::norms::{h1_error, l2_error, ErrorRecord, FieldErrors};
use crate::problem::{manufactured_benchmark_with_rate, ExactField, ProblemSpec};
use crate::solvers::{march_on, Method, PnpState, StepStats, TimeGrid, Tolerances};

pub const CSV_HEADER: &str = "method,h,H,tau,n_steps,err_phi_l2,err_p1_l2,err_p2_l2,\
err_phi_h1,err_p1_h1,err_p2_h1,order_phi_l2,order_p1_l2,order_p2_l2,\
order_phi_h1,order_p1_h1,order_p2_h1,gummel_iters_total,wall_seconds";

/// How coarse meshes are paired with fine ones for two-grid methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pairing {
    /// `m_coarse[i]` goes with `m_list[i]`.
    #[default]
    Explicit,
    /// `m_fine = m_coarse²`, i.e. `H = √h`.
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TauRule {
    /// `tau = T / round(T m²)`.
    #[default]
    MeshSquared,
    /// `tau = T / round(T / value)`.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub m_list: Vec<usize>,
    pub m_coarse: Vec<usize>,
    pub pairing: Pairing,
    pub final_time: f64,
    pub tau: TauRule,
    pub tols: Tolerances,
    pub diagonal: Diagonal,
    /// Time rate `w` of `p²` in the benchmark used by [`run_study`].
    pub p2_rate: f64,
}

impl RunConfig {
    pub fn new(method: Method) -> Self {
        RunConfig {
            method,
            m_list: Vec::new(),
            m_coarse: Vec::new(),
            pairing: Pairing::default(),
            final_time: 0.5,
            tau: TauRule::default(),
            tols: Tolerances::default(),
            diagonal: Diagonal::default(),
            p2_rate: 1.0,
        }
    }

    /// `(m_fine, m_coarse)` for every study row.
    pub fn mesh_pairs(&self) -> Result<Vec<(usize, Option<usize>)>> {
        if !self.method.is_two_grid() {
            return Ok(self.m_list.iter().map(|&m| (m, None)).collect());
        }
        let pairs: Vec<(usize, usize)> = match self.pairing {
            Pairing::Explicit => {
                if self.m_list.len() != self.m_coarse.len() {
                    return Err(PnpError::invalid(format!(
                        "{} fine meshes but {} coarse meshes",
                        self.m_list.len(),
                        self.m_coarse.len()
                    )));
                }
                self.m_list
                    .iter()
                    .copied()
                    .zip(self.m_coarse.iter().copied())
                    .collect()
            }
            Pairing::Sqrt if !self.m_coarse.is_empty() => {
                let pairs: Vec<_> = self.m_coarse.iter().map(|&c| (c * c, c)).collect();
                if !self.m_list.is_empty() && self.m_list.iter().ne(pairs.iter().map(|p| &p.0)) {
                    return Err(PnpError::invalid(
                        "fine meshes are not the squares of the coarse ones",
                    ));
                }
                pairs
            }
            Pairing::Sqrt => self
                .m_list
                .iter()
                .map(|&m| {
                    let c = (m as f64).sqrt().round() as usize;
                    if c * c == m {
                        Ok((m, c))
                    } else {
                        Err(PnpError::invalid(format!("m={m} is not a perfect square")))
                    }
                })
                .collect::<Result<_>>()?,
        };
        for &(f, c) in &pairs {
            if c == 0 || f % c != 0 {
                return Err(PnpError::invalid(format!(
                    "fine m={f} is not divisible by coarse m={c}"
                )));
            }
        }
        Ok(pairs.into_iter().map(|(f, c)| (f, Some(c))).collect())
    }

    pub fn time_grid(&self, m_fine: usize) -> Result<TimeGrid> {
        match self.tau {
            TauRule::MeshSquared => TimeGrid::squared_mesh_size(self.final_time, m_fine),
            TauRule::Fixed(tau) => TimeGrid::with_step(self.final_time, tau),
        }
    }
}

/// One mesh (pair) of a study.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub method: Method,
    pub m_fine: usize,
    pub m_coarse: Option<usize>,
    pub time: TimeGrid,
    pub outcome: std::result::Result<(ErrorRecord, StepStats), String>,
}

impl StudyRow {
    pub fn record(&self) -> Option<&ErrorRecord> {
        self.outcome.as_ref().ok().map(|(r, _)| r)
    }

    pub fn stats(&self) -> Option<&StepStats> {
        self.outcome.as_ref().ok().map(|(_, s)| s)
    }
}

#[derive(Debug, Clone, Default)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
}

impl StudyReport {
    pub fn has_failures(&self) -> bool {
        self.rows.iter().any(|r| r.outcome.is_err())
    }
}

fn field_errors(f: &PnpState, exact: [&ExactField; 3], t: f64) -> (FieldErrors, FieldErrors) {
    let fields = [&f.phi, &f.p1, &f.p2];
    let mut l2 = [0.0; 3];
    let mut h1 = [0.0; 3];
    for i in 0..3 {
        let ex = exact[i];
        l2[i] = l2_error(fields[i], |x, y, s| ex.eval(x, y, s), t);
        h1[i] = h1_error(
            fields[i],
            |x, y, s| ex.eval(x, y, s),
            |x, y, s| ex.grad(x, y, s),
            t,
        );
    }
    (FieldErrors::from_array(l2), FieldErrors::from_array(h1))
}

/// Errors of a final state against the problem's exact fields.
pub fn measure(problem: &ProblemSpec, state: &PnpState, coarse_h: Option<f64>) -> ErrorRecord {
    let (l2, h1) = field_errors(
        state,
        [&problem.exact_phi, &problem.exact_p1, &problem.exact_p2],
        state.t,
    );
    ErrorRecord {
        h: state.mesh().h(),
        coarse_h,
        l2,
        h1,
        order_l2: None,
        order_h1: None,
    }
}

/// Runs one simulation per mesh (pair) on the manufactured benchmark.
///
/// A failing row is recorded and the study carries on; orders are only
/// computed between consecutive successful rows.
pub fn run_study(config: &RunConfig) -> Result<StudyReport> {
    run_study_with(config, &manufactured_benchmark_with_rate(config.p2_rate))
}

pub fn run_study_with(config: &RunConfig, problem: &ProblemSpec) -> Result<StudyReport> {
    let pairs = config.mesh_pairs()?;
    let mut rows: Vec<StudyRow> = Vec::with_capacity(pairs.len());
    for (m_fine, m_coarse) in pairs {
        let time = config.time_grid(m_fine)?;
        let outcome = march_on(
            config.method,
            problem,
            m_fine,
            m_coarse,
            config.diagonal,
            &time,
            &config.tols,
        )
        .map_err(|e| e.to_string())
        .and_then(|result| {
            let mut record = measure(problem, &result.fine, m_coarse.map(|c| 1.0 / c as f64));
            if let Some(prev) = rows.last().and_then(StudyRow::record) {
                if prev.h > record.h {
                    record = record.with_orders_from(prev).map_err(|e| e.to_string())?;
                }
            }
            Ok((record, result.stats))
        });
        rows.push(StudyRow {
            method: config.method,
            m_fine,
            m_coarse,
            time,
            outcome,
        });
    }
    Ok(StudyReport { rows })
}

/// Scientific notation with six significant digits and a two-digit signed
/// exponent, e.g. `2.41240e-03`.
pub fn format_sci(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let s = format!("{v:.5e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

fn push_triple(fields: &mut Vec<String>, v: Option<&FieldErrors>) {
    match v {
        Some(f) => fields.extend(f.as_array().iter().map(|&x| format_sci(x))),
        None => fields.extend(std::iter::repeat_n(String::new(), 3)),
    }
}

/// One CSV line (without newline) for a study row. Failed rows keep their
/// mesh and time columns and leave every measured column empty.
pub fn csv_line(row: &StudyRow) -> String {
    let mut fields = vec![
        row.method.to_string(),
        format_sci(1.0 / row.m_fine as f64),
        row.m_coarse
            .map(|c| format_sci(1.0 / c as f64))
            .unwrap_or_default(),
        format_sci(row.time.tau),
        row.time.n_steps.to_string(),
    ];
    match &row.outcome {
        Ok((rec, stats)) => {
            push_triple(&mut fields, Some(&rec.l2));
            push_triple(&mut fields, Some(&rec.h1));
            push_triple(&mut fields, rec.order_l2.as_ref());
            push_triple(&mut fields, rec.order_h1.as_ref());
            fields.push(stats.gummel_iterations.to_string());
            fields.push(format_sci(stats.wall_seconds));
        }
        Err(_) => fields.extend(std::iter::repeat_n(String::new(), 14)),
    }
    fields.join(",")
}

pub fn write_csv_to(rows: &[StudyRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", csv_line(row))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_csv(rows: &[StudyRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(rows, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sci_format() {
        assert_eq!(format_sci(2.4124e-3), "2.41240e-03");
        assert_eq!(format_sci(1.0), "1.00000e+00");
        assert_eq!(format_sci(123456.7), "1.23457e+05");
        assert_eq!(format_sci(0.0), "0.00000e+00");
        assert_eq!(format_sci(-1.5e-12), "-1.50000e-12");
    }

    #[test]
    fn pairing_rules() {
        let mut cfg = RunConfig::new(Method::TwoGridSemi);
        cfg.pairing = Pairing::Sqrt;
        cfg.m_coarse = vec![3, 4];
        assert_eq!(cfg.mesh_pairs().unwrap(), vec![(9, Some(3)), (16, Some(4))]);
        cfg.m_coarse.clear();
        cfg.m_list = vec![25, 36];
        assert_eq!(
            cfg.mesh_pairs().unwrap(),
            vec![(25, Some(5)), (36, Some(6))]
        );
        cfg.m_list = vec![10];
        assert!(cfg.mesh_pairs().is_err());
        cfg.pairing = Pairing::Explicit;
        cfg.m_list = vec![8, 12];
        cfg.m_coarse = vec![4, 5];
        assert!(cfg.mesh_pairs().is_err());
        cfg.m_coarse = vec![4];
        assert!(cfg.mesh_pairs().is_err());
        let mut fem = RunConfig::new(Method::Fem);
        fem.m_list = vec![9, 16];
        fem.m_coarse = vec![7];
        assert_eq!(fem.mesh_pairs().unwrap(), vec![(9, None), (16, None)]);
    }

    #[test]
    fn empty_study_is_empty() {
        let report = run_study(&RunConfig::new(Method::Fem)).unwrap();
        assert!(report.rows.is_empty());
        assert!(!report.has_failures());
        let mut buf = Vec::new();
        write_csv_to(&report.rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{CSV_HEADER}\n"));
    }
}

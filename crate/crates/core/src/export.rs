//! File formats: JSON model files in, CSV tables and JSON documents out.
//!
//! Matrices are row-major nested arrays. In every CSV, modes and matrix
//! rows/columns are numbered from 1; stage `k` is the time index itself.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MjlsError, Result};
use crate::linalg::{from_rows, to_rows, Mat, Vector};
use crate::model::{MjlsModel, Mode, ModelData};
use crate::riccati::FiniteHorizonSolution;
use crate::sim::Trajectory;
use crate::stability::SecondMomentChain;

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeFile {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub modes: Vec<ModeFile>,
    pub transition: Rows,
    pub initial_distribution: Vec<f64>,
    pub x0: Vec<f64>,
}

fn matrix(rows: &Rows, what: &str) -> Result<Mat> {
    if rows.is_empty() {
        return Err(MjlsError::InvalidInput(format!("{what} is empty")));
    }
    from_rows(rows).ok_or_else(|| MjlsError::InvalidInput(format!("{what} has ragged rows")))
}

impl ModelFile {
    pub fn into_data(&self) -> Result<ModelData> {
        let modes = self
            .modes
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let label = |s: &str| format!("{s} of mode {}", i + 1);
                Ok(Mode {
                    a: matrix(&m.a, &label("A"))?,
                    b: matrix(&m.b, &label("B"))?,
                    q: matrix(&m.q, &label("Q"))?,
                    r: matrix(&m.r, &label("R"))?,
                    c: m.c.as_ref().map(|c| matrix(c, &label("C"))).transpose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelData {
            modes,
            transition: matrix(&self.transition, "transition")?,
            initial_distribution: Vector::from_vec(self.initial_distribution.clone()),
            x0: Vector::from_vec(self.x0.clone()),
        })
    }

    pub fn from_model(model: &MjlsModel) -> Self {
        let data = model.data();
        Self {
            modes: data
                .modes
                .iter()
                .map(|m| ModeFile {
                    a: to_rows(&m.a),
                    b: to_rows(&m.b),
                    q: to_rows(&m.q),
                    r: to_rows(&m.r),
                    c: m.c.as_ref().map(to_rows),
                })
                .collect(),
            transition: to_rows(&data.transition),
            initial_distribution: data.initial_distribution.iter().copied().collect(),
            x0: data.x0.iter().copied().collect(),
        }
    }
}

fn json_error(e: serde_json::Error) -> MjlsError {
    MjlsError::InvalidInput(format!("malformed JSON: {e}"))
}

fn io_error(path: &Path, e: std::io::Error) -> MjlsError {
    MjlsError::InvalidInput(format!("{}: {e}", path.display()))
}

pub fn parse_model(text: &str) -> Result<MjlsModel> {
    let file: ModelFile = serde_json::from_str(text).map_err(json_error)?;
    MjlsModel::new(file.into_data()?)
}

pub fn load_model(path: &Path) -> Result<MjlsModel> {
    parse_model(&std::fs::read_to_string(path).map_err(|e| io_error(path, e))?)
}

pub fn model_to_json(model: &MjlsModel) -> String {
    serde_json::to_string_pretty(&ModelFile::from_model(model)).expect("model serializes")
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MatrixList {
    Bare(Vec<Rows>),
    Gains { gains: Vec<Rows> },
}

/// A list of matrices: either a bare JSON array, or an object with a `gains`
/// field (as written by `solve-care`).
pub fn parse_matrix_list(text: &str) -> Result<Vec<Mat>> {
    let list: MatrixList = serde_json::from_str(text).map_err(json_error)?;
    let rows = match list {
        MatrixList::Bare(r) | MatrixList::Gains { gains: r } => r,
    };
    rows.iter()
        .enumerate()
        .map(|(i, r)| matrix(r, &format!("matrix {}", i + 1)))
        .collect()
}

pub fn load_matrix_list(path: &Path) -> Result<Vec<Mat>> {
    parse_matrix_list(&std::fs::read_to_string(path).map_err(|e| io_error(path, e))?)
}

fn csv_error(e: csv::Error) -> MjlsError {
    MjlsError::InvalidInput(format!("CSV output failed: {e}"))
}

/// Shortest round-trip form, switching to exponent notation at the extremes.
fn num(v: f64) -> String {
    format!("{v:?}")
}

/// `k, mode, row, col, P, gain_row, gain_col, K`: one row per matrix entry of
/// `P_i(k)` and `K_i(k)`; fields that do not apply are left empty. The
/// terminal stage `N+1` carries `P` only.
pub fn write_riccati_csv<W: Write>(sol: &FiniteHorizonSolution, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "mode", "row", "col", "P", "gain_row", "gain_col", "K"])
        .map_err(csv_error)?;
    for k in 0..=sol.horizon() + 1 {
        let Some(p) = sol.p(k) else { continue };
        let gains = sol.stage(k).map(|s| &s.gain);
        for (i, pi) in p.iter().enumerate() {
            let n = pi.nrows();
            let m = gains.map_or(0, |g| g[i].nrows());
            for row in 0..n.max(m) {
                for col in 0..n {
                    let p_field = if row < n { num(pi[(row, col)]) } else { String::new() };
                    let (gr, gc, kv) = match gains {
                        Some(g) if row < m => {
                            ((row + 1).to_string(), (col + 1).to_string(), num(g[i][(row, col)]))
                        }
                        _ => (String::new(), String::new(), String::new()),
                    };
                    let (r, c) = if row < n {
                        ((row + 1).to_string(), (col + 1).to_string())
                    } else {
                        (String::new(), String::new())
                    };
                    w.write_record([k.to_string(), (i + 1).to_string(), r, c, p_field, gr, gc, kv])
                        .map_err(csv_error)?;
                }
            }
        }
    }
    w.flush().map_err(|e| MjlsError::InvalidInput(e.to_string()))
}

/// `k, mode, trace, total` with `total = sum_i trace` repeated on each row.
pub fn write_moment_csv<W: Write>(chain: &SecondMomentChain, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "mode", "trace", "total"]).map_err(csv_error)?;
    for k in 0..=chain.steps() {
        let total = chain.total(k);
        for (i, tr) in chain.traces(k).into_iter().enumerate() {
            w.write_record([k.to_string(), (i + 1).to_string(), num(tr), num(total)])
                .map_err(csv_error)?;
        }
    }
    w.flush().map_err(|e| MjlsError::InvalidInput(e.to_string()))
}

/// `trial, k, mode, x_1..x_n, u_1..u_m, stage_cost`. The final row of each
/// trial is stage `N+1` with empty controls and the terminal cost.
pub fn write_trajectory_csv<W: Write>(trajectories: &[Trajectory], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (n, m) = match trajectories.first() {
        Some(t) => (t.states[0].len(), t.controls[0].len()),
        None => (0, 0),
    };
    let mut header = vec!["trial".to_string(), "k".into(), "mode".into()];
    header.extend((1..=n).map(|j| format!("x_{j}")));
    header.extend((1..=m).map(|j| format!("u_{j}")));
    header.push("stage_cost".into());
    w.write_record(&header).map_err(csv_error)?;
    for (trial, t) in trajectories.iter().enumerate() {
        for k in 0..t.states.len() {
            let mut rec = vec![trial.to_string(), k.to_string(), (t.modes[k] + 1).to_string()];
            rec.extend(t.states[k].iter().map(|v| num(*v)));
            match t.controls.get(k) {
                Some(u) => {
                    rec.extend(u.iter().map(|v| num(*v)));
                    rec.push(num(t.stage_costs[k]));
                }
                None => {
                    rec.extend(std::iter::repeat_n(String::new(), m));
                    rec.push(num(t.terminal_cost));
                }
            }
            w.write_record(&rec).map_err(csv_error)?;
        }
    }
    w.flush().map_err(|e| MjlsError::InvalidInput(e.to_string()))
}

use crate::numerics::{Graph, NumericsError, ParamStore, Tensor, Var};

use super::{Result, TrainError};

/// Pair labels: +1 for a matched (speech, phoneme) pair, −1 otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLabels {
    rows: usize,
    cols: usize,
    z: Vec<f64>,
}

impl PairLabels {
    /// Identity positives over the first `batch` columns followed by
    /// `extra` all-negative columns.
    pub fn with_hard_negatives(batch: usize, extra: usize) -> Self {
        let cols = batch + extra;
        let z = (0..batch * cols)
            .map(|k| if k / cols == k % cols { 1.0 } else { -1.0 })
            .collect();
        PairLabels { rows: batch, cols, z }
    }

    /// Validates a row-major ±1 matrix with exactly one +1 per row, located
    /// among the first `rows` columns.
    pub fn new(rows: usize, cols: usize, z: Vec<f64>) -> Result<Self> {
        if z.len() != rows * cols || cols < rows {
            return Err(TrainError::BadLabels(format!("{} entries for a {rows}x{cols} matrix", z.len())));
        }
        for i in 0..rows {
            let row = &z[i * cols..(i + 1) * cols];
            if row.iter().any(|&v| v != 1.0 && v != -1.0) {
                return Err(TrainError::BadLabels(format!("row {i} has an entry other than ±1")));
            }
            let pos: Vec<usize> = (0..cols).filter(|&j| row[j] == 1.0).collect();
            if pos.len() != 1 || pos[0] >= rows {
                return Err(TrainError::BadLabels(format!("row {i} needs exactly one positive among the paired columns")));
            }
        }
        Ok(PairLabels { rows, cols, z })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.z[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.z
    }
}

fn zero_norm(e: NumericsError) -> TrainError {
    match e {
        NumericsError::ZeroNorm { .. } => TrainError::ZeroNormRow,
        other => other.into(),
    }
}

/// Cosine similarities between the rows of `x` (B×d) and `y` (M×d), on `g`.
pub fn cosine_similarity(g: &mut Graph, x: Var, y: Var) -> Result<Var> {
    let xn = g.l2_normalize(x).map_err(zero_norm)?;
    let yn = g.l2_normalize(y).map_err(zero_norm)?;
    Ok(g.matmul_nt(xn, yn)?)
}

/// Cosine similarity matrix of two plain row sets.
pub fn cosine_similarity_matrix(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let (a, b) = (g.constant(x.clone())?, g.constant(y.clone())?);
    let s = cosine_similarity(&mut g, a, b)?;
    Ok(g.value(s).clone())
}

fn non_finite(e: NumericsError) -> TrainError {
    match e {
        NumericsError::NonFiniteValue { .. } => TrainError::NonFiniteLoss,
        other => other.into(),
    }
}

/// Per-pair terms `ln(1 + exp(−z·(e^{t_log}·S + b)))`, shaped like `s`.
pub fn siglip_terms(g: &mut Graph, s: Var, z: &PairLabels, t_log: Var, b: Var) -> Result<Var> {
    if g.shape(s) != (z.rows, z.cols) {
        return Err(TrainError::BadLabels(format!(
            "labels are {}x{}, similarities {:?}",
            z.rows,
            z.cols,
            g.shape(s)
        )));
    }
    let zt = g.constant(Tensor::matrix(z.rows, z.cols, z.z.clone())?)?;
    let t = g.exp(t_log).map_err(non_finite)?;
    let logits = g.mul_scalar(s, t).map_err(non_finite)?;
    let logits = g.add_scalar(logits, b).map_err(non_finite)?;
    let signed = g.mul(logits, zt)?;
    let ls = g.log_sigmoid(signed).map_err(non_finite)?;
    Ok(g.scale(ls, -1.0)?)
}

/// Sigmoid pair loss summed over every pair and averaged over the rows.
pub fn siglip_loss(g: &mut Graph, s: Var, z: &PairLabels, t_log: Var, b: Var) -> Result<Var> {
    let terms = siglip_terms(g, s, z, t_log, b)?;
    let total = g.sum_all(terms).map_err(non_finite)?;
    Ok(g.scale(total, 1.0 / z.rows as f64)?)
}

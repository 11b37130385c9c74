//! Linear readout: hidden feature table, least-squares output weights and
//! the residual they leave.

use nalgebra::DMatrix;
use thiserror::Error;

/// Singular values below this fraction of the largest are treated as zero.
pub const RCOND: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReadoutError {
    #[error("empty least-squares problem ({rows} x {cols})")]
    Empty { rows: usize, cols: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("singular value decomposition did not converge")]
    NoConvergence,
}

/// `N x n` hidden features, one column per recruited neuron in recruitment
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    h: DMatrix<f64>,
}

impl FeatureTable {
    pub fn empty(rows: usize) -> Self {
        Self {
            h: DMatrix::zeros(rows, 0),
        }
    }

    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Self {
        let mut table = Self::empty(rows);
        for c in columns {
            table.push_column(c);
        }
        table
    }

    pub fn push_column(&mut self, column: &[f64]) {
        assert_eq!(column.len(), self.h.nrows(), "feature column length");
        let n = self.h.ncols();
        let h = std::mem::replace(&mut self.h, DMatrix::zeros(0, 0));
        self.h = h.insert_column(n, 0.0);
        self.h.column_mut(n).copy_from_slice(column);
    }

    pub fn rows(&self) -> usize {
        self.h.nrows()
    }

    pub fn cols(&self) -> usize {
        self.h.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.h.row(i).iter().copied().collect()
    }
}

/// `n x m` output weights.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputWeights {
    beta: DMatrix<f64>,
}

impl OutputWeights {
    pub fn zeros(hidden: usize, outputs: usize) -> Self {
        Self {
            beta: DMatrix::zeros(hidden, outputs),
        }
    }

    pub fn from_matrix(beta: DMatrix<f64>) -> Self {
        Self { beta }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.beta
    }

    pub fn hidden(&self) -> usize {
        self.beta.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.beta.ncols()
    }

    /// Readout values `h_row . beta`.
    pub fn outputs_for(&self, h_row: &[f64]) -> Vec<f64> {
        assert_eq!(h_row.len(), self.beta.nrows(), "feature row length");
        (0..self.beta.ncols())
            .map(|q| {
                h_row
                    .iter()
                    .zip(self.beta.column(q).iter())
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualState {
    pub e: DMatrix<f64>,
    pub sq_norm: f64,
}

impl ResidualState {
    pub fn from_matrix(e: DMatrix<f64>) -> Self {
        let sq_norm = e.norm_squared();
        Self { e, sq_norm }
    }
}

/// Minimum-norm minimizer of `||F - H beta||_F^2`.
pub fn fit_output_weights(
    h: &DMatrix<f64>,
    f: &DMatrix<f64>,
) -> Result<OutputWeights, ReadoutError> {
    let (rows, cols) = h.shape();
    if rows == 0 || cols == 0 {
        return Err(ReadoutError::Empty { rows, cols });
    }
    if f.nrows() != rows {
        return Err(ReadoutError::Shape(format!(
            "features have {rows} rows, targets have {}",
            f.nrows()
        )));
    }
    // Tall problems are first reduced by a thin QR: H = QR, so the
    // minimum-norm solution of R beta = Q^T F solves the original.
    let beta = if rows > 2 * cols {
        let qr = h.clone().qr();
        let rhs = qr.q().transpose() * f;
        min_norm_solve(qr.r(), &rhs)?
    } else {
        min_norm_solve(h.clone(), f)?
    };
    Ok(OutputWeights { beta })
}

fn min_norm_solve(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, ReadoutError> {
    let svd = a
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or(ReadoutError::NoConvergence)?;
    let largest = svd.singular_values.max();
    if largest == 0.0 {
        return Ok(DMatrix::zeros(
            svd.v_t.as_ref().map_or(0, |v| v.ncols()),
            b.ncols(),
        ));
    }
    svd.solve(b, RCOND * largest)
        .map_err(|_| ReadoutError::NoConvergence)
}

/// `E = F - H beta` and its squared Frobenius norm.
pub fn residual(
    h: &DMatrix<f64>,
    beta: &OutputWeights,
    f: &DMatrix<f64>,
) -> Result<ResidualState, ReadoutError> {
    if h.ncols() != beta.hidden() || h.nrows() != f.nrows() || beta.outputs() != f.ncols() {
        return Err(ReadoutError::Shape(format!(
            "H {:?}, beta {:?}, F {:?}",
            h.shape(),
            beta.matrix().shape(),
            f.shape()
        )));
    }
    Ok(ResidualState::from_matrix(f - h * beta.matrix()))
}

/// Index of the largest readout value; ties go to the lowest index.
pub fn predict(h_row: &[f64], beta: &OutputWeights) -> usize {
    argmax(&beta.outputs_for(h_row))
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (q, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = q;
        }
    }
    best
}

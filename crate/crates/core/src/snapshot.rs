use faer::Mat;

use crate::error::{Error, Result};

/// States recorded on a uniform time grid, one column per time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    data: Mat<f64>,
    t0: f64,
    dt: f64,
}

impl SnapshotMatrix {
    pub fn new(data: Mat<f64>, t0: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() {
            return Err(Error::config(format!(
                "snapshot time grid needs finite t0 and dt > 0 (t0 = {t0}, dt = {dt})"
            )));
        }
        Ok(Self { data, t0, dt })
    }

    /// Builds a matrix from column vectors that all have the same length.
    pub fn from_columns(columns: &[Vec<f64>], t0: f64, dt: f64) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::Dimension {
                context: "snapshot column",
                expected: n,
                actual: bad.len(),
            });
        }
        let data = Mat::from_fn(n, columns.len(), |i, j| columns[j][i]);
        Self::new(data, t0, dt)
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.ncols()).map(|j| self.time(j)).collect()
    }

    pub fn t_final(&self) -> f64 {
        self.time(self.ncols().saturating_sub(1))
    }

    pub fn column(&self, j: usize) -> &[f64] {
        self.data.col_as_slice(j)
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        self.data.col_as_slice_mut(j)
    }

    pub fn data(&self) -> &Mat<f64> {
        &self.data
    }

    pub fn into_data(self) -> Mat<f64> {
        self.data
    }

    /// Copy of columns `start..end`, with the time origin moved accordingly.
    pub fn slice_columns(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.ncols() {
            return Err(Error::config(format!(
                "column range {start}..{end} outside 0..{}",
                self.ncols()
            )));
        }
        let data = self.data.subcols(start, end - start).to_owned();
        Self::new(data, self.time(start), self.dt)
    }

    /// Row-major flattening (state index outer, time inner).
    pub fn to_row_major(&self) -> Vec<f64> {
        let (n, k) = (self.nrows(), self.ncols());
        let mut out = Vec::with_capacity(n * k);
        for i in 0..n {
            out.extend((0..k).map(|j| self.data[(i, j)]));
        }
        out
    }

    pub fn from_row_major(values: &[f64], n: usize, k: usize, t0: f64, dt: f64) -> Result<Self> {
        if values.len() != n * k {
            return Err(Error::Dimension {
                context: "row-major payload",
                expected: n * k,
                actual: values.len(),
            });
        }
        Self::new(Mat::from_fn(n, k, |i, j| values[i * k + j]), t0, dt)
    }
}

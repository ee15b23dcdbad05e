use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

/// Which coagulation loss sum the truncated system keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    /// Loss over `j ≤ n - i`: coagulation events that would leave the tracked
    /// sizes are dropped from gain and loss alike, so mass is conserved.
    #[default]
    Conservative,
    /// Loss over `j ≤ n`: mass leaves through pairs with `i + j > n`.
    FullLoss,
}

/// Concentrations `c_1..c_n` on a grid, stored species-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedState {
    n: usize,
    grid: Grid,
    pub time: f64,
    data: Vec<f64>,
}

impl TruncatedState {
    pub fn zeros(grid: Grid, n: usize) -> Self {
        Self {
            n,
            grid,
            time: 0.0,
            data: vec![0.0; n * grid.len()],
        }
    }

    /// `data[(i - 1) * cells + cell] = c_i(cell)`.
    pub fn from_data(grid: Grid, n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * grid.len() {
            return Err(Error::Domain(format!(
                "state needs n * cells = {} values, got {}",
                n * grid.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state concentrations".into()));
        }
        Ok(Self {
            n,
            grid,
            time: 0.0,
            data,
        })
    }

    /// Spatially uniform state with `c_i = values[i - 1]` in every cell.
    pub fn uniform(grid: Grid, values: &[f64]) -> Result<Self> {
        let cells = grid.len();
        let data = values.iter().flat_map(|&v| std::iter::repeat_n(v, cells)).collect();
        Self::from_data(grid, values.len(), data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn cells(&self) -> usize {
        self.grid.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Values of `c_i` for `1 ≤ i ≤ n`.
    pub fn species(&self, i: usize) -> &[f64] {
        let cells = self.cells();
        &self.data[(i - 1) * cells..i * cells]
    }

    pub fn species_mut(&mut self, i: usize) -> &mut [f64] {
        let cells = self.cells();
        &mut self.data[(i - 1) * cells..i * cells]
    }

    pub fn field(&self, i: usize) -> Field {
        Field {
            grid: self.grid,
            values: self.species(i).to_vec(),
        }
    }

    /// Gathers `(c_1, ..., c_n)` at one cell.
    pub fn cell_vector(&self, cell: usize, out: &mut [f64]) {
        let cells = self.cells();
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            *o = self.data[i * cells + cell];
        }
    }

    pub fn cell_values(&self, cell: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n];
        self.cell_vector(cell, &mut v);
        v
    }

    pub fn set_cell_vector(&mut self, cell: usize, values: &[f64]) {
        let cells = self.cells();
        for (i, &v) in values.iter().enumerate().take(self.n) {
            self.data[i * cells + cell] = v;
        }
    }

    pub fn min_concentration(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

//! Uniform cell-centered grids on intervals and rectangles with homogeneous
//! Neumann boundaries.
//!
//! Cells are stored with the x index fastest: `index = iy * nx + ix`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    lengths: [f64; 2],
    cells: [usize; 2],
}

impl Grid {
    pub fn new(lengths: &[f64], cells: &[usize]) -> Result<Self> {
        let dim = lengths.len();
        if !(dim == 1 || dim == 2) || cells.len() != dim {
            return Err(Error::Config(format!(
                "domain must be 1D or 2D with one length and one cell count per axis, got {} lengths and {} cell counts",
                lengths.len(),
                cells.len()
            )));
        }
        if lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Config(format!(
                "domain lengths must be positive, got {lengths:?}"
            )));
        }
        if cells.contains(&0) {
            return Err(Error::Config(format!("cell counts must be positive, got {cells:?}")));
        }
        let mut g = Grid {
            dim,
            lengths: [1.0, 1.0],
            cells: [1, 1],
        };
        g.lengths[..dim].copy_from_slice(lengths);
        g.cells[..dim].copy_from_slice(cells);
        Ok(g)
    }

    pub fn interval(length: f64, cells: usize) -> Result<Self> {
        Self::new(&[length], &[cells])
    }

    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        Self::new(&[lx, ly], &[nx, ny])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn len(&self) -> usize {
        self.cells().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.cells[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    pub fn measure(&self) -> f64 {
        self.lengths().iter().product()
    }

    /// Cell-center coordinates; the second entry is 0 in 1D.
    pub fn center(&self, index: usize) -> [f64; 2] {
        let nx = self.cells[0];
        let (ix, iy) = (index % nx, index / nx);
        let x = (ix as f64 + 0.5) * self.spacing(0);
        let y = if self.dim == 2 {
            (iy as f64 + 0.5) * self.spacing(1)
        } else {
            0.0
        };
        [x, y]
    }

    pub fn field(&self, values: Vec<f64>) -> Result<Field> {
        Field::new(*self, values)
    }

    pub fn constant(&self, value: f64) -> Field {
        Field {
            grid: *self,
            values: vec![value; self.len()],
        }
    }

    pub fn sample(&self, f: impl Fn([f64; 2]) -> f64) -> Field {
        Field {
            grid: *self,
            values: (0..self.len()).map(|k| f(self.center(k))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Domain(format!(
                "field has {} values but the grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field values".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        grid.constant(0.0)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Midpoint rule: `cell_volume · Σ values`.
pub fn integrate(f: &Field) -> f64 {
    integrate_values(&f.grid, &f.values)
}

pub(crate) fn integrate_values(grid: &Grid, values: &[f64]) -> f64 {
    grid.cell_volume() * values.iter().sum::<f64>()
}

/// Second-order Neumann Laplacian (3-point in 1D, 5-point in 2D) with
/// reflective ghost cells.
pub fn laplacian(f: &Field) -> Field {
    let mut out = vec![0.0; f.values.len()];
    laplacian_into(&f.grid, &f.values, &mut out);
    Field {
        grid: f.grid,
        values: out,
    }
}

pub(crate) fn laplacian_into(grid: &Grid, values: &[f64], out: &mut [f64]) {
    let nx = grid.cells[0];
    let ny = if grid.dim == 2 { grid.cells[1] } else { 1 };
    let ihx2 = 1.0 / grid.spacing(0).powi(2);
    let ihy2 = if grid.dim == 2 {
        1.0 / grid.spacing(1).powi(2)
    } else {
        0.0
    };
    for iy in 0..ny {
        for ix in 0..nx {
            let k = iy * nx + ix;
            let c = values[k];
            let left = if ix > 0 { values[k - 1] } else { c };
            let right = if ix + 1 < nx { values[k + 1] } else { c };
            let mut lap = (left - 2.0 * c + right) * ihx2;
            if grid.dim == 2 {
                let down = if iy > 0 { values[k - nx] } else { c };
                let up = if iy + 1 < ny { values[k + nx] } else { c };
                lap += (down - 2.0 * c + up) * ihy2;
            }
            out[k] = lap;
        }
    }
}

/// Solves `(1 + 2r) g_k - r (g_{k-1} + g_{k+1}) = f_k` in place with the
/// Neumann end rows `(1 + r) g - r g_neighbour`. Thomas algorithm, stable
/// without pivoting because the matrix is strictly diagonally dominant.
fn neumann_implicit_line(rhs: &mut [f64], r: f64, scratch: &mut Vec<f64>) {
    let m = rhs.len();
    if m == 1 || r == 0.0 {
        return;
    }
    scratch.clear();
    scratch.resize(m, 0.0);
    let diag = |k: usize| if k == 0 || k + 1 == m { 1.0 + r } else { 1.0 + 2.0 * r };
    // forward sweep: scratch holds the modified super-diagonal
    let mut denom = diag(0);
    scratch[0] = -r / denom;
    rhs[0] /= denom;
    for k in 1..m {
        denom = diag(k) + r * scratch[k - 1];
        scratch[k] = -r / denom;
        rhs[k] = (rhs[k] + r * rhs[k - 1]) / denom;
    }
    for k in (0..m - 1).rev() {
        rhs[k] -= scratch[k] * rhs[k + 1];
    }
}

/// Backward-Euler diffusion step `(I - dt·d·Δ_h) g = f`. 2D grids use one
/// implicit solve along x followed by one along y.
pub fn diffuse(f: &Field, d: f64, dt: f64) -> Result<Field> {
    if !(d > 0.0 && d.is_finite()) || !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!(
            "diffusion needs d > 0 and dt > 0, got d = {d}, dt = {dt}"
        )));
    }
    if f.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("field passed to diffuse".into()));
    }
    let mut values = f.values.clone();
    diffuse_in_place(&f.grid, &mut values, d * dt, &mut Vec::new());
    Ok(Field { grid: f.grid, values })
}

/// In-place variant taking `d·dt` directly.
pub(crate) fn diffuse_in_place(grid: &Grid, values: &mut [f64], d_dt: f64, scratch: &mut Vec<f64>) {
    let nx = grid.cells[0];
    let rx = d_dt / grid.spacing(0).powi(2);
    for row in values.chunks_mut(nx) {
        neumann_implicit_line(row, rx, scratch);
    }
    if grid.dim == 2 {
        let ny = grid.cells[1];
        if ny == 1 {
            return;
        }
        let ry = d_dt / grid.spacing(1).powi(2);
        let mut column = vec![0.0; ny];
        for ix in 0..nx {
            for iy in 0..ny {
                column[iy] = values[iy * nx + ix];
            }
            neumann_implicit_line(&mut column, ry, scratch);
            for iy in 0..ny {
                values[iy * nx + ix] = column[iy];
            }
        }
    }
}

/// Eigenvalue of the 1D Neumann stencil for the mode `cos(k π x / L)`.
pub fn neumann_eigenvalue(length: f64, cells: usize, k: usize) -> f64 {
    let h = length / cells as f64;
    -(2.0 / (h * h)) * (1.0 - (k as f64 * std::f64::consts::PI * h / length).cos())
}

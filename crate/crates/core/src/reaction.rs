//! Truncated coagulation and fragmentation operators.
//!
//! ```text
//! Q_i^n = 1/2 Σ_{j<i} a_{i-j,j} c_{i-j} c_j  -  c_i Σ_{j≤J} a_{i,j} c_j      J = n-i or n
//! F_i^n = Σ_{j≤n-i} B_{i+j} β_{i+j,i} c_{i+j}  -  B_i c_i
//! ```
//!
//! The per-species functions ([`coag_gain`], [`coag_loss`], ...) evaluate the
//! sums literally and are meant for inspection and cross-checks. Time
//! integration goes through [`ReactionOperator`], which works one cell at a
//! time and uses prefix/suffix sums whenever the kernels are separable.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::kernels::{PowerLawCoagulation, TruncatedKernels};
use crate::state::{TruncatedState, TruncationMode};

/// How coagulation gains are summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConvolutionPath {
    /// Sequential O(n²) sums in a fixed order.
    #[default]
    Direct,
    /// Transform-based O(n log n) convolution; power-law kernels only.
    Fft,
}

fn check_sizes(s: &TruncatedState, k: &TruncatedKernels, i: usize) -> Result<()> {
    if s.n() != k.n() {
        return Err(Error::Domain(format!(
            "state has n = {} but kernels were built for n = {}",
            s.n(),
            k.n()
        )));
    }
    if i == 0 || i > s.n() {
        return Err(Error::Domain(format!("species index {i} outside 1..={}", s.n())));
    }
    Ok(())
}

fn per_cell(s: &TruncatedState, f: impl Fn(&dyn Fn(usize) -> f64) -> f64) -> Field {
    let cells = s.cells();
    let values = (0..cells)
        .map(|cell| {
            let c = |i: usize| s.species(i)[cell];
            f(&c)
        })
        .collect();
    Field {
        grid: *s.grid(),
        values,
    }
}

/// `1/2 Σ_{j=1}^{i-1} a_{i-j,j} c_{i-j} c_j` per cell.
pub fn coag_gain(s: &TruncatedState, k: &TruncatedKernels, i: usize) -> Result<Field> {
    check_sizes(s, k, i)?;
    Ok(per_cell(s, |c| {
        0.5 * (1..i).map(|j| k.coag(i - j, j) * c(i - j) * c(j)).sum::<f64>()
    }))
}

/// `c_i Σ_{j=1}^{J} a_{i,j} c_j` per cell.
pub fn coag_loss(s: &TruncatedState, k: &TruncatedKernels, i: usize, mode: TruncationMode) -> Result<Field> {
    check_sizes(s, k, i)?;
    let top = match mode {
        TruncationMode::Conservative => s.n() - i,
        TruncationMode::FullLoss => s.n(),
    };
    Ok(per_cell(s, |c| {
        c(i) * (1..=top).map(|j| k.coag(i, j) * c(j)).sum::<f64>()
    }))
}

/// `Σ_{j=1}^{n-i} B_{i+j} β_{i+j,i} c_{i+j}` per cell.
pub fn frag_gain(s: &TruncatedState, k: &TruncatedKernels, i: usize) -> Result<Field> {
    check_sizes(s, k, i)?;
    let n = s.n();
    Ok(per_cell(s, |c| {
        (1..=n - i)
            .map(|j| k.frag(i + j) * k.daughter(i + j, i) * c(i + j))
            .sum::<f64>()
    }))
}

/// `B_i c_i` per cell.
pub fn frag_loss(s: &TruncatedState, k: &TruncatedKernels, i: usize) -> Result<Field> {
    check_sizes(s, k, i)?;
    Ok(per_cell(s, |c| k.frag(i) * c(i)))
}

/// `Q_i^n + F_i^n` for every species.
pub fn rhs(s: &TruncatedState, k: &TruncatedKernels, mode: TruncationMode) -> Result<Vec<Field>> {
    check_sizes(s, k, 1)?;
    let op = ReactionOperator::new(k.clone(), mode, ConvolutionPath::Direct)?;
    let n = s.n();
    let cells = s.cells();
    let mut out = vec![vec![0.0; cells]; n];
    let mut scratch = op.scratch();
    let mut c = vec![0.0; n];
    let mut r = vec![0.0; n];
    for cell in 0..cells {
        s.cell_vector(cell, &mut c);
        op.evaluate(&c, &mut r, &mut scratch);
        for i in 0..n {
            out[i][cell] = r[i];
        }
    }
    Ok(out
        .into_iter()
        .map(|values| Field {
            grid: *s.grid(),
            values,
        })
        .collect())
}

/// `Σ_i φ_i (Q_i^n + F_i^n)` evaluated through the weak form, split into its
/// coagulation and fragmentation parts. Conservative truncation semantics.
pub fn weak_moment_rate_parts(s: &TruncatedState, k: &TruncatedKernels, phi: &[f64]) -> Result<(Field, Field)> {
    check_sizes(s, k, 1)?;
    let n = s.n();
    if phi.len() != n {
        return Err(Error::Domain(format!(
            "weight sequence has length {} but n = {n}",
            phi.len()
        )));
    }
    // Σ_{j<i} β_{i,j} φ_j for every parent i
    let daughter_avg: Vec<f64> = match k.separable_daughters() {
        Some((weight, pow_nu)) => {
            let mut acc = 0.0;
            let mut out = vec![0.0; n];
            for i in 2..=n {
                acc += pow_nu[i - 2] * phi[i - 2];
                out[i - 1] = weight[i - 1] * acc;
            }
            out
        }
        None => (1..=n)
            .map(|i| (1..i).map(|j| k.daughter(i, j) * phi[j - 1]).sum())
            .collect(),
    };
    let cells = s.cells();
    let mut coag = vec![0.0; cells];
    let mut frag = vec![0.0; cells];
    let mut c = vec![0.0; n];
    for cell in 0..cells {
        s.cell_vector(cell, &mut c);
        let mut q = 0.0;
        for i in 1..n {
            if c[i - 1] == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for j in 1..=n - i {
                inner += k.coag(i, j) * c[j - 1] * (phi[i + j - 1] - phi[i - 1] - phi[j - 1]);
            }
            q += c[i - 1] * inner;
        }
        coag[cell] = 0.5 * q;
        frag[cell] = -(2..=n)
            .map(|i| k.frag(i) * c[i - 1] * (phi[i - 1] - daughter_avg[i - 1]))
            .sum::<f64>();
    }
    let grid = *s.grid();
    Ok((Field { grid, values: coag }, Field { grid, values: frag }))
}

pub fn weak_moment_rate(s: &TruncatedState, k: &TruncatedKernels, phi: &[f64]) -> Result<Field> {
    let (mut q, f) = weak_moment_rate_parts(s, k, phi)?;
    for (a, b) in q.values.iter_mut().zip(&f.values) {
        *a += b;
    }
    Ok(q)
}

/// All coagulation gains through the transform-based convolution.
pub fn coag_fast(s: &TruncatedState, kernel: &PowerLawCoagulation) -> Result<Vec<Field>> {
    let n = s.n();
    let pa: Vec<f64> = (1..=n).map(|i| crate::kernels::size_power(i, kernel.alpha)).collect();
    let pb: Vec<f64> = (1..=n).map(|i| crate::kernels::size_power(i, kernel.beta)).collect();
    let conv = FftConvolver::new(n);
    let cells = s.cells();
    let mut out = vec![vec![0.0; cells]; n];
    let mut c = vec![0.0; n];
    let mut gain = vec![0.0; n];
    let mut bufs = conv.buffers();
    for cell in 0..cells {
        s.cell_vector(cell, &mut c);
        conv.gains(kernel.c_q, &pa, &pb, &c, &mut gain, &mut bufs);
        for i in 0..n {
            out[i][cell] = gain[i];
        }
    }
    Ok(out
        .into_iter()
        .map(|values| Field {
            grid: *s.grid(),
            values,
        })
        .collect())
}

/// Zero-padded FFT convolution of the weighted sequences `(i^α c_i)` and
/// `(i^β c_i)`.
#[derive(Clone)]
pub struct FftConvolver {
    n: usize,
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FftConvolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftConvolver")
            .field("n", &self.n)
            .field("len", &self.len)
            .finish()
    }
}

pub struct FftBuffers {
    a: Vec<Complex<f64>>,
    b: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl FftConvolver {
    pub fn new(n: usize) -> Self {
        let len = (2 * n + 2).next_power_of_two();
        let mut planner = FftPlanner::new();
        Self {
            n,
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    pub fn buffers(&self) -> FftBuffers {
        let scratch_len = self
            .forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len());
        FftBuffers {
            a: vec![Complex::new(0.0, 0.0); self.len],
            b: vec![Complex::new(0.0, 0.0); self.len],
            scratch: vec![Complex::new(0.0, 0.0); scratch_len],
        }
    }

    /// `gain[i-1] = C_Q Σ_{j} (i-j)^α c_{i-j} j^β c_j`.
    pub fn gains(&self, c_q: f64, pa: &[f64], pb: &[f64], c: &[f64], gain: &mut [f64], bufs: &mut FftBuffers) {
        let n = self.n;
        bufs.a.fill(Complex::new(0.0, 0.0));
        bufs.b.fill(Complex::new(0.0, 0.0));
        // position k holds size k; position 0 stays empty
        for i in 0..n {
            bufs.a[i + 1].re = pa[i] * c[i];
            bufs.b[i + 1].re = pb[i] * c[i];
        }
        self.forward.process_with_scratch(&mut bufs.a, &mut bufs.scratch);
        self.forward.process_with_scratch(&mut bufs.b, &mut bufs.scratch);
        for (x, y) in bufs.a.iter_mut().zip(&bufs.b) {
            *x *= y;
        }
        self.inverse.process_with_scratch(&mut bufs.a, &mut bufs.scratch);
        let scale = c_q / self.len as f64;
        gain[0] = 0.0;
        for i in 2..=n {
            gain[i - 1] = bufs.a[i].re * scale;
        }
    }
}

/// Per-cell scratch space for [`ReactionOperator`].
pub struct Scratch {
    u: Vec<f64>,
    w: Vec<f64>,
    prefix_u: Vec<f64>,
    prefix_w: Vec<f64>,
    suffix_u: Vec<f64>,
    suffix_w: Vec<f64>,
    fft: Option<FftBuffers>,
}

/// The reaction right-hand side of one cell, `c ↦ Q^n(c) + F^n(c)`.
#[derive(Debug, Clone)]
pub struct ReactionOperator {
    kernels: TruncatedKernels,
    mode: TruncationMode,
    path: ConvolutionPath,
    fft: Option<FftConvolver>,
}

impl ReactionOperator {
    pub fn new(kernels: TruncatedKernels, mode: TruncationMode, path: ConvolutionPath) -> Result<Self> {
        let fft = match path {
            ConvolutionPath::Direct => None,
            ConvolutionPath::Fft => {
                if kernels.separable_coag().is_none() {
                    return Err(Error::Config(
                        "the fft convolution path needs a power-law coagulation kernel".into(),
                    ));
                }
                Some(FftConvolver::new(kernels.n()))
            }
        };
        Ok(Self {
            kernels,
            mode,
            path,
            fft,
        })
    }

    pub fn n(&self) -> usize {
        self.kernels.n()
    }

    pub fn kernels(&self) -> &TruncatedKernels {
        &self.kernels
    }

    pub fn mode(&self) -> TruncationMode {
        self.mode
    }

    pub fn path(&self) -> ConvolutionPath {
        self.path
    }

    pub fn scratch(&self) -> Scratch {
        let n = self.n();
        Scratch {
            u: vec![0.0; n],
            w: vec![0.0; n],
            prefix_u: vec![0.0; n + 1],
            prefix_w: vec![0.0; n + 1],
            suffix_u: vec![0.0; n + 1],
            suffix_w: vec![0.0; n + 1],
            fft: self.fft.as_ref().map(|f| f.buffers()),
        }
    }

    /// Writes `Q^n(c)` into `out` and returns the mass leaving the tracked
    /// sizes per unit time (zero in conservative mode).
    pub fn coagulation(&self, c: &[f64], out: &mut [f64], scratch: &mut Scratch) -> f64 {
        let n = self.n();
        let top = match c.iter().rposition(|&v| v != 0.0) {
            Some(p) => p + 1,
            None => {
                out.fill(0.0);
                return 0.0;
            }
        };
        let k = &self.kernels;
        match k.separable_coag() {
            Some((c_q, pa, pb)) => {
                let Scratch {
                    u,
                    w,
                    prefix_u,
                    prefix_w,
                    suffix_u,
                    suffix_w,
                    fft,
                } = scratch;
                for i in 0..n {
                    u[i] = pa[i] * c[i];
                    w[i] = pb[i] * c[i];
                }
                match (&self.fft, fft) {
                    (Some(conv), Some(bufs)) => conv.gains(c_q, pa, pb, c, out, bufs),
                    _ => {
                        out[0] = 0.0;
                        let gmax = (2 * top).min(n);
                        for i in 2..=gmax {
                            let lo = if i > top { i - top } else { 1 };
                            let hi = (i - 1).min(top);
                            let mut s = 0.0;
                            for j in lo..=hi {
                                s += u[i - j - 1] * w[j - 1];
                            }
                            out[i - 1] = c_q * s;
                        }
                        out[gmax..].fill(0.0);
                    }
                }
                prefix_u[0] = 0.0;
                prefix_w[0] = 0.0;
                for j in 1..=n {
                    prefix_u[j] = prefix_u[j - 1] + u[j - 1];
                    prefix_w[j] = prefix_w[j - 1] + w[j - 1];
                }
                for i in 1..=top {
                    let reach = match self.mode {
                        TruncationMode::Conservative => n - i,
                        TruncationMode::FullLoss => n,
                    };
                    let rate = c_q * (pa[i - 1] * prefix_w[reach] + pb[i - 1] * prefix_u[reach]);
                    out[i - 1] -= c[i - 1] * rate;
                }
                if self.mode == TruncationMode::Conservative {
                    return 0.0;
                }
                // suffix sums accumulate from the small tail upwards
                suffix_u[n] = 0.0;
                suffix_w[n] = 0.0;
                for j in (0..n).rev() {
                    suffix_u[j] = suffix_u[j + 1] + u[j];
                    suffix_w[j] = suffix_w[j + 1] + w[j];
                }
                let mut leak = 0.0;
                for i in 1..=top {
                    let cut = n - i;
                    leak += i as f64 * c[i - 1] * c_q * (pa[i - 1] * suffix_w[cut] + pb[i - 1] * suffix_u[cut]);
                }
                leak
            }
            None => {
                out[0] = 0.0;
                for i in 2..=n {
                    let mut s = 0.0;
                    for j in 1..i {
                        s += k.coag(i - j, j) * c[i - j - 1] * c[j - 1];
                    }
                    out[i - 1] = 0.5 * s;
                }
                let mut leak = 0.0;
                for i in 1..=top {
                    if c[i - 1] == 0.0 {
                        continue;
                    }
                    let mut kept = 0.0;
                    for j in 1..=n - i {
                        kept += k.coag(i, j) * c[j - 1];
                    }
                    let mut lost = 0.0;
                    if self.mode == TruncationMode::FullLoss {
                        for j in (n - i + 1..=n).rev() {
                            lost += k.coag(i, j) * c[j - 1];
                        }
                        leak += i as f64 * c[i - 1] * lost;
                    }
                    out[i - 1] -= c[i - 1] * (kept + lost);
                }
                leak
            }
        }
    }

    /// Writes `F^n(c)` into `out`.
    pub fn fragmentation(&self, c: &[f64], out: &mut [f64]) {
        let n = self.n();
        let k = &self.kernels;
        match k.separable_daughters() {
            Some((weight, pow_nu)) => {
                let mut tail = 0.0;
                for i in (1..=n).rev() {
                    let b = k.frag(i);
                    out[i - 1] = pow_nu[i - 1] * tail - b * c[i - 1];
                    if i >= 2 {
                        tail += b * weight[i - 1] * c[i - 1];
                    }
                }
            }
            None => {
                for i in 1..=n {
                    let mut gain = 0.0;
                    for m in i + 1..=n {
                        gain += k.frag(m) * k.daughter(m, i) * c[m - 1];
                    }
                    out[i - 1] = gain - k.frag(i) * c[i - 1];
                }
            }
        }
    }

    /// Writes `Q^n(c) + F^n(c)` into `out`; returns the leak rate.
    pub fn evaluate(&self, c: &[f64], out: &mut [f64], scratch: &mut Scratch) -> f64 {
        let leak = self.coagulation(c, out, scratch);
        if self.kernels.frag_is_zero() {
            return leak;
        }
        let n = self.n();
        let mut f = std::mem::take(&mut scratch.u);
        f.resize(n, 0.0);
        self.fragmentation(c, &mut f);
        for (o, x) in out.iter_mut().zip(&f) {
            *o += x;
        }
        scratch.u = f;
        leak
    }

    /// Solves `(I - factor·F^n) x = rhs`. The fragmentation operator is upper
    /// triangular, so this is a back substitution from the largest size.
    pub fn solve_fragmentation(&self, factor: f64, rhs: &[f64], x: &mut [f64]) {
        let n = self.n();
        let k = &self.kernels;
        match k.separable_daughters() {
            Some((weight, pow_nu)) => {
                let mut tail = 0.0;
                for i in (1..=n).rev() {
                    let b = k.frag(i);
                    let xi = (rhs[i - 1] + factor * pow_nu[i - 1] * tail) / (1.0 + factor * b);
                    x[i - 1] = xi;
                    if i >= 2 {
                        tail += b * weight[i - 1] * xi;
                    }
                }
            }
            None => {
                for i in (1..=n).rev() {
                    let mut gain = 0.0;
                    for m in i + 1..=n {
                        gain += k.frag(m) * k.daughter(m, i) * x[m - 1];
                    }
                    x[i - 1] = (rhs[i - 1] + factor * gain) / (1.0 + factor * k.frag(i));
                }
            }
        }
    }
}

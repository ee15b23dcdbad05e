//! Declarative experiment description, read from JSON scenario files.
//!
//! All quantities are in dimensionless simulation units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernels::{Coagulation, Fragmentation, KernelSet};
use crate::reaction::ConvolutionPath;
use crate::solver::{DiffusionSpec, Scheme, StepperConfig};
use crate::state::{TruncatedState, TruncationMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub dim: usize,
    pub lengths: Vec<f64>,
    pub cells: Vec<usize>,
}

impl DomainSpec {
    pub fn interval(length: f64, cells: usize) -> Self {
        Self {
            dim: 1,
            lengths: vec![length],
            cells: vec![cells],
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        if self.dim != self.lengths.len() || self.dim != self.cells.len() {
            return Err(Error::Config(format!(
                "domain.dim = {} but {} lengths and {} cell counts were given",
                self.dim,
                self.lengths.len(),
                self.cells.len()
            )));
        }
        Grid::new(&self.lengths, &self.cells)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSpec {
    pub n: usize,
    #[serde(default)]
    pub mode: TruncationMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    /// `c_1 = ρ(x)`, all other sizes empty.
    Monodisperse,
    /// `c_i ∝ ρ(x) 2^{-i}`, normalized so that `Σ_{i≤n} i c_i = ρ(x)`.
    Geometric,
    /// `c_i = values[i-1] · ρ(x)`.
    PerSpecies,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DensityProfile {
    #[default]
    Uniform,
    GaussianBump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialParams {
    /// Uniform level of `ρ`, or the bump's peak height above `base`.
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub base: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    /// Bump center; defaults to the domain midpoint.
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    /// Per-species profile multipliers for `per_species`.
    #[serde(default)]
    pub values: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

fn default_width() -> f64 {
    0.1
}

impl Default for InitialParams {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            base: 0.0,
            width: default_width(),
            center: None,
            values: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(rename = "type")]
    pub kind: InitialKind,
    #[serde(default)]
    pub density: DensityProfile,
    #[serde(default)]
    pub params: InitialParams,
}

impl InitialSpec {
    pub fn monodisperse(amplitude: f64) -> Self {
        Self {
            kind: InitialKind::Monodisperse,
            density: DensityProfile::Uniform,
            params: InitialParams {
                amplitude,
                ..InitialParams::default()
            },
        }
    }

    fn density(&self, grid: &Grid) -> Vec<f64> {
        let p = &self.params;
        match self.density {
            DensityProfile::Uniform => vec![p.amplitude; grid.len()],
            DensityProfile::GaussianBump => {
                let center: Vec<f64> = p
                    .center
                    .clone()
                    .unwrap_or_else(|| grid.lengths().iter().map(|l| 0.5 * l).collect());
                (0..grid.len())
                    .map(|k| {
                        let x = grid.center(k);
                        let r2: f64 = (0..grid.dim()).map(|a| (x[a] - center[a]).powi(2)).sum();
                        p.base + p.amplitude * (-r2 / (2.0 * p.width * p.width)).exp()
                    })
                    .collect()
            }
        }
    }

    fn check(&self, grid: &Grid, n: usize) -> Result<()> {
        let p = &self.params;
        if !(p.amplitude >= 0.0 && p.amplitude.is_finite()) || !(p.base >= 0.0 && p.base.is_finite()) {
            return Err(Error::Config(
                "initial.params.amplitude and base must be finite and >= 0".into(),
            ));
        }
        if self.density == DensityProfile::GaussianBump {
            if !(p.width > 0.0) {
                return Err(Error::Config("initial.params.width must be > 0".into()));
            }
            if let Some(c) = &p.center {
                if c.len() != grid.dim() {
                    return Err(Error::Config(format!(
                        "initial.params.center needs {} coordinates",
                        grid.dim()
                    )));
                }
            }
        }
        if self.kind == InitialKind::PerSpecies {
            if p.values.is_empty() || p.values.len() > n {
                return Err(Error::Config(format!(
                    "initial.params.values must list between 1 and n = {n} species"
                )));
            }
            if p.values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::Config("initial.params.values must be finite and >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn build(&self, grid: &Grid, n: usize) -> Result<TruncatedState> {
        self.check(grid, n)?;
        let rho = self.density(grid);
        let weights: Vec<f64> = match self.kind {
            InitialKind::Monodisperse => {
                let mut w = vec![0.0; n];
                w[0] = 1.0;
                w
            }
            InitialKind::Geometric => {
                let raw: Vec<f64> = (1..=n).map(|i| 0.5 * 0.5f64.powi(i as i32)).collect();
                let mass: f64 = raw.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum();
                raw.iter().map(|v| v / mass).collect()
            }
            InitialKind::PerSpecies => {
                let mut w = self.params.values.clone();
                w.resize(n, 0.0);
                w
            }
        };
        let cells = grid.len();
        let mut data = vec![0.0; n * cells];
        for (i, w) in weights.iter().enumerate() {
            for (cell, r) in rho.iter().enumerate() {
                data[i * cells + cell] = w * r;
            }
        }
        TruncatedState::from_data(*grid, n, data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(default = "default_dt_init")]
    pub dt_init: f64,
    #[serde(default = "default_dt_max")]
    pub dt_max: f64,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub convolution: ConvolutionPath,
}

fn default_dt_init() -> f64 {
    1e-4
}
fn default_dt_max() -> f64 {
    0.05
}
fn default_rtol() -> f64 {
    1e-8
}
fn default_atol() -> f64 {
    1e-14
}

impl TimeSpec {
    pub fn new(t_final: f64) -> Self {
        Self {
            t_final,
            dt_init: default_dt_init(),
            dt_max: default_dt_max(),
            rtol: default_rtol(),
            atol: default_atol(),
            scheme: Scheme::default(),
            convolution: ConvolutionPath::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Moment orders recorded at every sample time. Order 1 is always added.
    #[serde(default)]
    pub moment_orders: Vec<f64>,
    /// Explicit sample times; `0` and `T` are always sampled.
    #[serde(default)]
    pub sample_times: Vec<f64>,
    /// Uniform sampling interval, used when `sample_times` is empty.
    #[serde(default)]
    pub sample_every: Option<f64>,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Orders `l` for which the moment-dissipation audit will be run; every
    /// moment it needs must be listed in `moment_orders`.
    #[serde(default)]
    pub dissipation_l: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub domain: DomainSpec,
    pub truncation: TruncationSpec,
    pub kernels: KernelSet,
    pub diffusion: DiffusionSpec,
    pub initial: InitialSpec,
    pub time: TimeSpec,
    #[serde(default)]
    pub outputs: OutputSpec,
    #[serde(default)]
    pub seed: u64,
}

/// Moment orders the dissipation audit reads for `l`.
pub fn dissipation_orders(l: f64, alpha: f64, beta: f64, gamma: f64) -> Vec<f64> {
    vec![
        l,
        gamma + l - 1.0,
        alpha + l - 1.0,
        beta + 1.0,
        alpha + 1.0,
        beta + l - 1.0,
    ]
}

/// Orders are compared after rounding to 1e-9.
pub fn same_order(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                Error::Config(inner.to_string())
            } else {
                Error::Config(format!("{path}: {inner}"))
            }
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn t_final(&self) -> f64 {
        self.time.t_final
    }

    pub fn n(&self) -> usize {
        self.truncation.n
    }

    pub fn with_n(&self, n: usize) -> Self {
        let mut s = self.clone();
        s.truncation.n = n;
        s
    }

    pub fn with_mode(&self, mode: TruncationMode) -> Self {
        let mut s = self.clone();
        s.truncation.mode = mode;
        s
    }

    /// Canonical text of the scenario with the truncation size blanked out,
    /// used to check that refinement runs share everything else.
    pub fn refinement_key(&self) -> String {
        let mut s = self.clone();
        s.truncation.n = 0;
        serde_json::to_string(&s).expect("scenario serializes")
    }

    /// Recorded moment orders: the requested ones plus order 1, deduplicated
    /// in first-seen order.
    pub fn moment_orders(&self) -> Vec<f64> {
        let mut orders = vec![1.0];
        for &k in &self.outputs.moment_orders {
            if !orders.iter().any(|&o| same_order(o, k)) {
                orders.push(k);
            }
        }
        orders
    }

    /// Sorted, deduplicated sample times including `0` and `T`.
    pub fn sample_times(&self) -> Vec<f64> {
        let t_final = self.t_final();
        let mut times = vec![0.0];
        if !self.outputs.sample_times.is_empty() {
            times.extend(self.outputs.sample_times.iter().cloned());
        } else if let Some(every) = self.outputs.sample_every {
            let count = (t_final / every + 1e-9).floor() as usize;
            times.extend((1..=count).map(|k| k as f64 * every));
        }
        times.push(t_final);
        normalize_times(times, t_final)
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        if self.outputs.snapshot_times.is_empty() {
            return Vec::new();
        }
        normalize_times(self.outputs.snapshot_times.clone(), self.t_final())
    }

    pub fn stepper(&self) -> StepperConfig {
        StepperConfig {
            rtol: self.time.rtol,
            atol: self.time.atol,
            dt_init: self.time.dt_init,
            dt_max: self.time.dt_max,
            scheme: self.time.scheme,
            convolution: self.time.convolution,
            dt_floor: Some(1e-14 * self.t_final().max(f64::MIN_POSITIVE)),
            ..StepperConfig::default()
        }
    }

    /// Power-law exponents `(α, β, γ)` when both families are power laws.
    pub fn power_law_exponents(&self) -> Option<(f64, f64, f64)> {
        match (&self.kernels.coagulation, &self.kernels.fragmentation) {
            (Coagulation::PowerLaw(q), Fragmentation::PowerLaw(f)) => Some((q.alpha, q.beta, f.gamma)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.domain.grid()?;
        let n = self.n();
        if n < 2 {
            return Err(Error::Config(format!("truncation.n must be >= 2, got {n}")));
        }
        if !(self.t_final() > 0.0 && self.t_final().is_finite()) {
            return Err(Error::Config(format!(
                "time.T must be finite and > 0, got {}",
                self.t_final()
            )));
        }
        self.stepper().check()?;
        self.kernels.check_shape(n)?;
        let report = crate::kernels::validate(&self.kernels, n)?;
        if let Some(bad) = report.failures().next() {
            return Err(Error::Config(format!(
                "kernels fail the {} check (margin {:e})",
                bad.check, bad.margin
            )));
        }
        crate::solver::diffusion_coefficients(&self.diffusion, n)?;
        self.initial.check(&grid, n)?;
        if let Some(every) = self.outputs.sample_every {
            if !(every > 0.0) {
                return Err(Error::Config("outputs.sample_every must be > 0".into()));
            }
        }
        for &t in self.outputs.sample_times.iter().chain(&self.outputs.snapshot_times) {
            if !(0.0..=self.t_final()).contains(&t) {
                return Err(Error::Config(format!("output time {t} lies outside [0, T]")));
            }
        }
        if self.outputs.moment_orders.iter().any(|k| !(*k >= 0.0 && k.is_finite())) {
            return Err(Error::Config("outputs.moment_orders must be finite and >= 0".into()));
        }
        if !self.outputs.dissipation_l.is_empty() {
            let (alpha, beta, gamma) = self.power_law_exponents().ok_or_else(|| {
                Error::Config("outputs.dissipation_l needs power-law coagulation and fragmentation".into())
            })?;
            let orders = self.moment_orders();
            for &l in &self.outputs.dissipation_l {
                if !(l > 1.0) {
                    return Err(Error::Config(format!("dissipation order l must be > 1, got {l}")));
                }
                for need in dissipation_orders(l, alpha, beta, gamma) {
                    if !orders.iter().any(|&o| same_order(o, need)) {
                        return Err(Error::Config(format!(
                            "outputs.moment_orders must include {need} for the dissipation audit with l = {l}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        self.domain.grid()
    }
}

fn normalize_times(mut times: Vec<f64>, t_final: f64) -> Vec<f64> {
    times.retain(|t| (0.0..=t_final).contains(t));
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let tol = 1e-12 * t_final.max(1.0);
    let mut out: Vec<f64> = Vec::with_capacity(times.len());
    for t in times {
        match out.last() {
            Some(&last) if (t - last).abs() <= tol => {}
            _ => out.push(t),
        }
    }
    out
}

//! Time integration of the truncated reaction-diffusion system.
//!
//! One outer step is Strang-split: half a backward-Euler diffusion step for
//! every species, a full adaptive reaction step in every cell, and another
//! half diffusion step. The reaction integrator is either an explicit
//! Dormand–Prince 5(4) pair or, for stiff fragmentation, the additive
//! ARK3(2)4L[2]SA pair with fragmentation treated implicitly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::MomentSeries;
use crate::error::{Error, Result};
use crate::grid::diffuse_in_place;
use crate::kernels::{KernelSet, TruncatedKernels};
use crate::reaction::{ConvolutionPath, ReactionOperator, Scratch};
use crate::scenario::ScenarioConfig;
use crate::state::{TruncatedState, TruncationMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Implicit fragmentation whenever `max B_i · dt_max` exceeds
    /// [`STIFF_FRAGMENTATION`], explicit otherwise.
    #[default]
    Auto,
    Explicit,
    Imex,
}

/// Threshold on `max B_i · dt_max` above which `Scheme::Auto` goes implicit.
pub const STIFF_FRAGMENTATION: f64 = 10.0;

/// Concentrations below this multiple of the local mass density are flushed
/// to zero after each accepted step (and logged as clamped mass), which keeps
/// the arithmetic out of the subnormal range.
pub const FLUSH_RELATIVE: f64 = 1e-250;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub rtol: f64,
    pub atol: f64,
    pub dt_init: f64,
    pub dt_max: f64,
    /// Negativity tolerance relative to the local `ρ_1`.
    pub atol_neg: f64,
    pub safety: f64,
    pub scheme: Scheme,
    pub convolution: ConvolutionPath,
    /// Smallest admissible reaction substep; defaults to `1e-14` times the
    /// end time of the current step.
    pub dt_floor: Option<f64>,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-14,
            dt_init: 1e-4,
            dt_max: 0.05,
            atol_neg: 1e-13,
            safety: 0.9,
            scheme: Scheme::Auto,
            convolution: ConvolutionPath::Direct,
            dt_floor: None,
        }
    }
}

impl StepperConfig {
    pub fn check(&self) -> Result<()> {
        let positive = [
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("dt_init", self.dt_init),
            ("dt_max", self.dt_max),
            ("atol_neg", self.atol_neg),
            ("safety", self.safety),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "time.{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.safety >= 1.0 {
            return Err(Error::Config(format!("safety factor must be < 1, got {}", self.safety)));
        }
        if let Some(f) = self.dt_floor {
            if !(f > 0.0) {
                return Err(Error::Config(format!("dt floor must be positive, got {f}")));
            }
        }
        Ok(())
    }
}

/// Counters accumulated over reaction steps. Masses are spatial integrals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
    pub negativity_rejections: u64,
    pub clamped_mass: f64,
    pub leaked_mass: f64,
}

impl StepStats {
    fn absorb(&mut self, other: &StepStats) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.negativity_rejections += other.negativity_rejections;
        self.clamped_mass += other.clamped_mass;
        self.leaked_mass += other.leaked_mass;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "snake_case")]
pub enum DiffusionSpec {
    Constant {
        d: f64,
    },
    /// `d_i = d_inf + (d1 - d_inf) / i`.
    Convergent {
        d1: f64,
        d_inf: f64,
    },
    /// `d_i = values[i-1]`, then `tail` (default: the last listed value).
    Explicit {
        values: Vec<f64>,
        #[serde(default)]
        tail: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionCoefficients {
    pub values: Vec<f64>,
    /// `min d_i`.
    pub a: f64,
    /// `max d_i`.
    pub b: f64,
}

pub fn diffusion_coefficients(spec: &DiffusionSpec, n: usize) -> Result<DiffusionCoefficients> {
    let values: Vec<f64> = match spec {
        DiffusionSpec::Constant { d } => vec![*d; n],
        DiffusionSpec::Convergent { d1, d_inf } => (1..=n).map(|i| d_inf + (d1 - d_inf) / i as f64).collect(),
        DiffusionSpec::Explicit { values, tail } => {
            if values.is_empty() {
                return Err(Error::Config("diffusion.params.values must not be empty".into()));
            }
            if let Some(bad) = values.iter().chain(tail.iter()).find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!(
                    "diffusion coefficients must be positive, got {bad}"
                )));
            }
            let tail = tail.unwrap_or(*values.last().expect("nonempty"));
            (0..n).map(|i| values.get(i).copied().unwrap_or(tail)).collect()
        }
    };
    if let Some(bad) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Config(format!(
            "diffusion coefficients must be positive, got {bad}"
        )));
    }
    let a = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let b = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(DiffusionCoefficients { values, a, b })
}

// Dormand–Prince 5(4).
#[cfg(test)]
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

// ARK3(2)4L[2]SA (Kennedy & Carpenter).
const ARK_G: f64 = 1767732205903.0 / 4055673282236.0;
const ARK_AE: [[f64; 3]; 4] = [
    [0.0; 3],
    [1767732205903.0 / 2027836641118.0, 0.0, 0.0],
    [
        5535828885825.0 / 10492691773637.0,
        788022342437.0 / 10882634858940.0,
        0.0,
    ],
    [
        6485989280629.0 / 16251701735622.0,
        -4246266847089.0 / 9704473918619.0,
        10755448449292.0 / 10357097424841.0,
    ],
];
const ARK_AI: [[f64; 3]; 4] = [
    [0.0; 3],
    [ARK_G, 0.0, 0.0],
    [
        2746238789719.0 / 10658868560708.0,
        -640167445237.0 / 6845629431997.0,
        0.0,
    ],
    [ARK_B[0], ARK_B[1], ARK_B[2]],
];
const ARK_B: [f64; 4] = [
    1471266399579.0 / 7840856788654.0,
    -4482444167858.0 / 7529755066697.0,
    11266239266428.0 / 11593286722821.0,
    ARK_G,
];
const ARK_BHAT: [f64; 4] = [
    2756255671327.0 / 12835298489170.0,
    -10771552573575.0 / 22201958757719.0,
    9247589265047.0 / 10645013368117.0,
    2193209047091.0 / 5459859503100.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Method {
    Explicit,
    Imex,
}

impl Method {
    fn order(self) -> f64 {
        match self {
            Method::Explicit => 5.0,
            Method::Imex => 3.0,
        }
    }
}

/// Buffers for one cell's integration; reused across cells by a worker.
struct Workspace {
    stages: Vec<Vec<f64>>,
    implicit: Vec<Vec<f64>>,
    leak: [f64; 7],
    y: Vec<f64>,
    rhs: Vec<f64>,
    ynew: Vec<f64>,
    err: Vec<f64>,
    scratch: Scratch,
    fsal: bool,
}

impl Workspace {
    fn new(op: &ReactionOperator) -> Self {
        let n = op.n();
        Self {
            stages: vec![vec![0.0; n]; 7],
            implicit: vec![vec![0.0; n]; 4],
            leak: [0.0; 7],
            y: vec![0.0; n],
            rhs: vec![0.0; n],
            ynew: vec![0.0; n],
            err: vec![0.0; n],
            scratch: op.scratch(),
            fsal: false,
        }
    }
}

struct CellFailure {
    time: f64,
    step: f64,
    floor: f64,
}

#[derive(Clone, Copy)]
struct Control<'a> {
    cfg: &'a StepperConfig,
    method: Method,
    floor: f64,
}

/// One attempted step from `ws.y`; fills `ws.ynew`, `ws.err` and returns the
/// leak increment.
fn attempt(op: &ReactionOperator, method: Method, h: f64, ws: &mut Workspace) -> f64 {
    let n = op.n();
    match method {
        Method::Explicit => {
            if !ws.fsal {
                ws.leak[0] = op.evaluate(&ws.y, &mut ws.stages[0], &mut ws.scratch);
            }
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, a) in DP_A[s][..s].iter().enumerate() {
                        if *a != 0.0 {
                            acc += a * ws.stages[j][i];
                        }
                    }
                    ws.ynew[i] = ws.y[i] + h * acc;
                }
                let (head, tail) = ws.stages.split_at_mut(s);
                let _ = head;
                ws.leak[s] = op.evaluate(&ws.ynew, &mut tail[0], &mut ws.scratch);
            }
            // stage 7 was evaluated at the 5th-order solution held in ynew
            for i in 0..n {
                let mut e = 0.0;
                for (j, c) in DP_E.iter().enumerate() {
                    if *c != 0.0 {
                        e += c * ws.stages[j][i];
                    }
                }
                ws.err[i] = h * e;
            }
            let mut leak = 0.0;
            for (j, a) in DP_A[6].iter().enumerate() {
                leak += a * ws.leak[j];
            }
            h * leak
        }
        Method::Imex => {
            let hg = h * ARK_G;
            ws.leak[0] = op.coagulation(&ws.y, &mut ws.stages[0], &mut ws.scratch);
            op.fragmentation(&ws.y, &mut ws.implicit[0]);
            for s in 1..4 {
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..s {
                        acc += ARK_AE[s][j] * ws.stages[j][i] + ARK_AI[s][j] * ws.implicit[j][i];
                    }
                    ws.rhs[i] = ws.y[i] + h * acc;
                }
                op.solve_fragmentation(hg, &ws.rhs, &mut ws.ynew);
                for i in 0..n {
                    ws.implicit[s][i] = (ws.ynew[i] - ws.rhs[i]) / hg;
                }
                let (_, tail) = ws.stages.split_at_mut(s);
                ws.leak[s] = op.coagulation(&ws.ynew, &mut tail[0], &mut ws.scratch);
            }
            let mut leak = 0.0;
            for s in 0..4 {
                leak += ARK_B[s] * ws.leak[s];
            }
            for i in 0..n {
                let mut acc = 0.0;
                let mut e = 0.0;
                for s in 0..4 {
                    let f = ws.stages[s][i] + ws.implicit[s][i];
                    acc += ARK_B[s] * f;
                    e += (ARK_B[s] - ARK_BHAT[s]) * f;
                }
                ws.ynew[i] = ws.y[i] + h * acc;
                ws.err[i] = h * e;
            }
            h * leak
        }
    }
}

#[derive(Default)]
struct CellOutcome {
    stats: StepStats,
}

/// Advances one cell's concentrations over `[t0, t0 + dt]`.
fn integrate_cell(
    op: &ReactionOperator,
    ctl: Control<'_>,
    c: &mut [f64],
    t0: f64,
    dt: f64,
    hint: &mut f64,
    ws: &mut Workspace,
) -> std::result::Result<CellOutcome, CellFailure> {
    let mut out = CellOutcome::default();
    let cfg = ctl.cfg;
    let n = op.n();
    let rho1: f64 = c.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum();
    if rho1 <= 0.0 {
        return Ok(out);
    }
    let neg_tol = cfg.atol_neg * rho1;
    let flush = FLUSH_RELATIVE * rho1;
    ws.y.copy_from_slice(c);
    ws.fsal = false;
    let t_end = t0 + dt;
    let mut t = t0;
    let mut h = hint.min(dt).max(ctl.floor);
    let mut rejected_last = false;
    loop {
        let remaining = t_end - t;
        if remaining <= 1e-15 * t_end.abs().max(dt) {
            break;
        }
        let last = h >= remaining * (1.0 - 1e-12);
        let h_try = if last { remaining } else { h };
        let leak = attempt(op, ctl.method, h_try, ws);

        let mut err: f64 = 0.0;
        let mut finite = true;
        for i in 0..n {
            let yn = ws.ynew[i];
            finite &= yn.is_finite();
            let scale = cfg.atol + cfg.rtol * ws.y[i].abs().max(yn.abs());
            err = err.max(ws.err[i].abs() / scale);
        }
        if !finite || !err.is_finite() {
            err = f64::INFINITY;
        }
        let p = ctl.method.order();
        if err > 1.0 {
            out.stats.rejected += 1;
            ws.fsal = false;
            let factor = if err.is_finite() {
                (cfg.safety * err.powf(-1.0 / p)).clamp(0.2, 1.0)
            } else {
                0.2
            };
            h = h_try * factor;
            rejected_last = true;
        } else if ws.ynew.iter().any(|&v| v < -neg_tol) {
            out.stats.rejected += 1;
            out.stats.negativity_rejections += 1;
            ws.fsal = false;
            h = 0.5 * h_try;
            rejected_last = true;
        } else {
            out.stats.accepted += 1;
            out.stats.leaked_mass += leak;
            let mut clamped = 0.0;
            let mut touched = false;
            for (i, v) in ws.ynew.iter_mut().enumerate() {
                if *v < 0.0 || (*v != 0.0 && *v < flush) {
                    clamped += (i + 1) as f64 * v.abs();
                    *v = 0.0;
                    touched = true;
                }
            }
            out.stats.clamped_mass += clamped;
            std::mem::swap(&mut ws.y, &mut ws.ynew);
            t = if last { t_end } else { t + h_try };
            // the last explicit stage sits at the new point unless it was altered
            ws.fsal = ctl.method == Method::Explicit && !touched;
            if ws.fsal {
                let (first, rest) = ws.stages.split_at_mut(6);
                first[0].copy_from_slice(&rest[0]);
                ws.leak[0] = ws.leak[6];
            }
            let grow = if err > 0.0 {
                (cfg.safety * err.powf(-1.0 / p)).clamp(0.2, 5.0)
            } else {
                5.0
            };
            let grow = if rejected_last { grow.min(1.0) } else { grow };
            rejected_last = false;
            if !last || h_try >= h {
                h = h_try * grow;
            }
            if last {
                break;
            }
        }
        if h < ctl.floor {
            return Err(CellFailure {
                time: t,
                step: h,
                floor: ctl.floor,
            });
        }
    }
    *hint = h;
    c.copy_from_slice(&ws.y);
    Ok(out)
}

/// Owns the reaction operator, diffusion coefficients and per-cell step
/// hints of one simulation.
#[derive(Debug, Clone)]
pub struct Solver {
    op: ReactionOperator,
    diffusion: DiffusionCoefficients,
    config: StepperConfig,
    method: Method,
    hints: Vec<f64>,
    stats: StepStats,
}

impl Solver {
    pub fn new(
        kernels: &KernelSet,
        n: usize,
        mode: TruncationMode,
        diffusion: DiffusionCoefficients,
        config: StepperConfig,
    ) -> Result<Self> {
        config.check()?;
        if diffusion.values.len() != n {
            return Err(Error::Config(format!(
                "{} diffusion coefficients for n = {n}",
                diffusion.values.len()
            )));
        }
        let truncated = TruncatedKernels::new(kernels, n)?;
        let stiff = truncated.max_frag_rate() * config.dt_max > STIFF_FRAGMENTATION;
        let method = match config.scheme {
            Scheme::Explicit => Method::Explicit,
            Scheme::Imex => Method::Imex,
            Scheme::Auto if stiff => Method::Imex,
            Scheme::Auto => Method::Explicit,
        };
        let op = ReactionOperator::new(truncated, mode, config.convolution)?;
        Ok(Self {
            op,
            diffusion,
            config,
            method,
            hints: Vec::new(),
            stats: StepStats::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.op.n()
    }

    pub fn operator(&self) -> &ReactionOperator {
        &self.op
    }

    pub fn diffusion(&self) -> &DiffusionCoefficients {
        &self.diffusion
    }

    pub fn config(&self) -> &StepperConfig {
        &self.config
    }

    /// Whether fragmentation is treated implicitly.
    pub fn is_imex(&self) -> bool {
        self.method == Method::Imex
    }

    pub fn stats(&self) -> &StepStats {
        &self.stats
    }

    fn check_state(&self, s: &TruncatedState) -> Result<()> {
        if s.n() != self.n() {
            return Err(Error::Config(format!(
                "state has n = {}, solver has n = {}",
                s.n(),
                self.n()
            )));
        }
        Ok(())
    }

    /// Advances the pure reaction ODE in every cell by `dt`.
    pub fn reaction_step(&mut self, s: &mut TruncatedState, dt: f64) -> Result<()> {
        self.check_state(s)?;
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("reaction step needs dt > 0, got {dt}")));
        }
        let cells = s.cells();
        if self.hints.len() != cells {
            self.hints = vec![self.config.dt_init; cells];
        }
        let ctl = Control {
            cfg: &self.config,
            method: self.method,
            floor: self.config.dt_floor.unwrap_or(1e-14 * (s.time + dt)),
        };
        let t0 = s.time;
        let op = &self.op;
        let state: &TruncatedState = s;
        let results: Vec<_> = self
            .hints
            .par_iter_mut()
            .enumerate()
            .map_init(
                || Workspace::new(op),
                |ws, (cell, hint)| {
                    let mut c = state.cell_values(cell);
                    integrate_cell(op, ctl, &mut c, t0, dt, hint, ws).map(|o| (c, o.stats))
                },
            )
            .collect();
        let volume = s.grid().cell_volume();
        for (cell, r) in results.into_iter().enumerate() {
            match r {
                Ok((c, stats)) => {
                    s.set_cell_vector(cell, &c);
                    let mut scaled = stats;
                    scaled.clamped_mass *= volume;
                    scaled.leaked_mass *= volume;
                    self.stats.absorb(&scaled);
                }
                Err(f) => {
                    return Err(Error::Stiffness {
                        time: f.time,
                        step: f.step,
                        floor: f.floor,
                        cell,
                    })
                }
            }
        }
        s.time = t0 + dt;
        Ok(())
    }

    /// Backward-Euler diffusion of every species over `dt`; time is unchanged.
    pub fn diffusion_step(&self, s: &mut TruncatedState, dt: f64) -> Result<()> {
        self.check_state(s)?;
        diffuse_species(s, &self.diffusion.values, dt);
        Ok(())
    }

    /// One Strang-split step of length `dt`.
    pub fn step(&mut self, s: &mut TruncatedState, dt: f64) -> Result<()> {
        self.diffusion_step(s, 0.5 * dt)?;
        self.reaction_step(s, dt)?;
        self.diffusion_step(s, 0.5 * dt)
    }
}

fn diffuse_species(s: &mut TruncatedState, d: &[f64], dt: f64) {
    let grid = *s.grid();
    let cells = grid.len();
    if cells <= 1 || dt <= 0.0 {
        return;
    }
    s.data_mut()
        .par_chunks_mut(cells)
        .zip(d.par_iter())
        .for_each_init(Vec::new, |scratch, (values, di)| {
            diffuse_in_place(&grid, values, di * dt, scratch);
        });
}

/// Pure reaction step returning the advanced state.
pub fn reaction_step(
    s: &TruncatedState,
    kernels: &KernelSet,
    mode: TruncationMode,
    dt: f64,
    config: &StepperConfig,
) -> Result<TruncatedState> {
    let n = s.n();
    let d = diffusion_coefficients(&DiffusionSpec::Constant { d: 1.0 }, n)?;
    let mut solver = Solver::new(kernels, n, mode, d, *config)?;
    let mut out = s.clone();
    solver.reaction_step(&mut out, dt)?;
    Ok(out)
}

/// One Strang-split step returning the advanced state.
pub fn step(
    s: &TruncatedState,
    kernels: &KernelSet,
    d: &DiffusionCoefficients,
    mode: TruncationMode,
    dt: f64,
    config: &StepperConfig,
) -> Result<TruncatedState> {
    let mut solver = Solver::new(kernels, s.n(), mode, d.clone(), *config)?;
    let mut out = s.clone();
    solver.step(&mut out, dt)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: ScenarioConfig,
    pub diffusion: DiffusionCoefficients,
    pub series: MomentSeries,
    pub snapshots: Vec<TruncatedState>,
    pub stats: StepStats,
    pub final_state: TruncatedState,
    pub imex: bool,
}

impl RunResult {
    pub fn mode(&self) -> TruncationMode {
        self.config.truncation.mode
    }

    pub fn n(&self) -> usize {
        self.config.n()
    }
}

/// Integrates a scenario to its final time. Outer steps are uniform within
/// each interval between consecutive output times and never exceed
/// `time.dt_max`, so every sample and snapshot falls on a step boundary.
pub fn run(cfg: &ScenarioConfig) -> Result<RunResult> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let n = cfg.n();
    let diffusion = diffusion_coefficients(&cfg.diffusion, n)?;
    let mut solver = Solver::new(&cfg.kernels, n, cfg.truncation.mode, diffusion.clone(), cfg.stepper())?;
    let mut state = cfg.initial.build(&grid, n)?;

    let samples = cfg.sample_times();
    let snapshots_at = cfg.snapshot_times();
    let mut events: Vec<f64> = samples.iter().chain(&snapshots_at).cloned().collect();
    events.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    events.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * cfg.t_final().max(1.0));

    let is_at = |list: &[f64], t: f64| list.iter().any(|&x| (x - t).abs() <= 1e-12 * cfg.t_final().max(1.0));
    let mut series = MomentSeries::new(cfg.moment_orders(), grid, n);
    let mut snapshots = Vec::new();
    let mut last_dt = 0.0;
    for &event in &events {
        let gap = event - state.time;
        if gap > 0.0 {
            let count = (gap / cfg.time.dt_max * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            let t_start = state.time;
            let h = gap / count as f64;
            for k in 1..=count {
                solver.step(&mut state, h)?;
                // pin the clock to the schedule instead of accumulating sums
                state.time = if k == count { event } else { t_start + k as f64 * h };
            }
            last_dt = h;
        }
        state.time = event;
        if is_at(&samples, event) {
            series.record(&state, &diffusion.values, last_dt, solver.stats());
        }
        if is_at(&snapshots_at, event) {
            snapshots.push(state.clone());
        }
    }
    Ok(RunResult {
        config: cfg.clone(),
        diffusion,
        series,
        snapshots,
        stats: *solver.stats(),
        final_state: state,
        imex: solver.is_imex(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::kernels::{FragmentationRates, PowerLawCoagulation, PowerLawDaughterDistribution};
    use approx::assert_relative_eq;

    #[test]
    fn diffusion_coefficient_examples() {
        let d = diffusion_coefficients(&DiffusionSpec::Constant { d: 1.0 }, 5).unwrap();
        assert_eq!(d.values, vec![1.0; 5]);
        assert_eq!((d.a, d.b), (1.0, 1.0));
        let d = diffusion_coefficients(&DiffusionSpec::Convergent { d1: 2.0, d_inf: 1.0 }, 4).unwrap();
        assert_eq!(d.values, vec![2.0, 1.5, 1.0 + 1.0 / 3.0, 1.25]);
        assert_eq!((d.a, d.b), (1.25, 2.0));
        let bad = DiffusionSpec::Explicit {
            values: vec![0.0, 1.0],
            tail: None,
        };
        assert!(diffusion_coefficients(&bad, 4).is_err());
        let ok = DiffusionSpec::Explicit {
            values: vec![3.0, 1.0],
            tail: Some(2.0),
        };
        assert_eq!(diffusion_coefficients(&ok, 4).unwrap().values, vec![3.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn ark_order_conditions() {
        let ce: Vec<f64> = ARK_AE.iter().map(|r| r.iter().sum()).collect();
        let ci: Vec<f64> = (0..4)
            .map(|s| ARK_AI[s].iter().sum::<f64>() + if s > 0 { ARK_G } else { 0.0 })
            .collect();
        for s in 0..4 {
            assert!((ce[s] - ci[s]).abs() < 1e-12, "stage {s} abscissae differ");
        }
        for w in [&ARK_B, &ARK_BHAT] {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let b_c: f64 = (0..4).map(|s| ARK_B[s] * ce[s]).sum();
        assert!((b_c - 0.5).abs() < 1e-12);
        let b_c2: f64 = (0..4).map(|s| ARK_B[s] * ce[s] * ce[s]).sum();
        assert!((b_c2 - 1.0 / 3.0).abs() < 1e-12);
        // b·A·c = 1/6 for every pairing of the two tableaux
        let full_i = |s: usize, j: usize| {
            if s == j && s > 0 {
                ARK_G
            } else if j < s {
                ARK_AI[s][j]
            } else {
                0.0
            }
        };
        let full_e = |s: usize, j: usize| if j < s { ARK_AE[s][j] } else { 0.0 };
        for a in [&full_e as &dyn Fn(usize, usize) -> f64, &full_i] {
            let v: f64 = (0..4)
                .map(|s| ARK_B[s] * (0..4).map(|j| a(s, j) * ce[j]).sum::<f64>())
                .sum();
            assert!((v - 1.0 / 6.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn dormand_prince_order_conditions() {
        for s in 0..7 {
            let row: f64 = DP_A[s].iter().sum();
            assert!((row - DP_C[s]).abs() < 1e-14);
        }
        assert!(DP_E.iter().sum::<f64>().abs() < 1e-15);
        let b = DP_A[6];
        let bc4: f64 = (0..6).map(|s| b[s] * DP_C[s].powi(4)).sum();
        assert!((bc4 - 0.2).abs() < 1e-14);
    }

    fn one_cell() -> Grid {
        Grid::interval(1.0, 1).unwrap()
    }

    #[test]
    fn zero_kernels_are_identity() {
        let s = TruncatedState::uniform(one_cell(), &[0.3, 0.2, 0.1]).unwrap();
        let out = reaction_step(
            &s,
            &KernelSet::zero(),
            TruncationMode::Conservative,
            0.7,
            &StepperConfig::default(),
        )
        .unwrap();
        assert_eq!(out.data(), s.data());
        assert_eq!(out.time, 0.7);
    }

    #[test]
    fn fragmentation_loss_is_exponential() {
        for scheme in [Scheme::Explicit, Scheme::Imex] {
            let ks = KernelSet {
                coagulation: crate::kernels::Coagulation::PowerLaw(PowerLawCoagulation::new(0.0, 0.0, 0.0).unwrap()),
                fragmentation: crate::kernels::Fragmentation::PowerLaw(FragmentationRates { c_f: 1.5, gamma: 1.0 }),
                daughters: crate::kernels::Daughters::PowerLaw(PowerLawDaughterDistribution::new(0.0).unwrap()),
            };
            let s = TruncatedState::uniform(one_cell(), &[0.0, 1.0]).unwrap();
            let cfg = StepperConfig {
                scheme,
                rtol: 1e-10,
                atol: 1e-14,
                ..StepperConfig::default()
            };
            let out = reaction_step(&s, &ks, TruncationMode::Conservative, 0.8, &cfg).unwrap();
            let b2 = 3.0;
            assert_relative_eq!(out.species(2)[0], (-b2 * 0.8f64).exp(), max_relative = 1e-8);
            assert_relative_eq!(out.species(1)[0] + 2.0 * out.species(2)[0], 2.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn stiff_explicit_hits_floor() {
        let ks = KernelSet::power_law(
            PowerLawCoagulation::new(0.5, 1.0, 1.0).unwrap(),
            FragmentationRates { c_f: 100.0, gamma: 6.0 },
            PowerLawDaughterDistribution::new(0.0).unwrap(),
        );
        let n = 128;
        let c: Vec<f64> = (1..=n).map(|i| 0.5f64.powi(i)).collect();
        let s = TruncatedState::uniform(one_cell(), &c).unwrap();
        let cfg = StepperConfig {
            scheme: Scheme::Explicit,
            dt_floor: Some(1e-12),
            ..StepperConfig::default()
        };
        let err = reaction_step(&s, &ks, TruncationMode::Conservative, 1.0, &cfg).unwrap_err();
        assert!(matches!(err, Error::Stiffness { cell: 0, .. }), "{err}");
    }
}

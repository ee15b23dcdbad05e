//! Empirical probes of the parabolic maximal-regularity constant `K_{m,q}`
//! for the Neumann heat equation, and the checks built on it.
//!
//! Probes solve `∂_t v − mΔ_h v = f`, `v(0) = 0` by backward Euler in the
//! discrete cosine eigenbasis of the Neumann stencil, so the discrete
//! identity holds exactly at every step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::check_refinement;
use crate::error::{Error, Result};
use crate::grid::{integrate_values, neumann_eigenvalue, Grid};
use crate::solver::RunResult;
use crate::state::TruncationMode;

/// Spatial modes per axis used by random forcings.
pub const FORCING_MODES: usize = 8;
/// Piecewise-constant time intervals used by random forcings.
pub const FORCING_INTERVALS: usize = 16;
/// Default number of backward-Euler steps per probe.
pub const DEFAULT_STEPS: usize = 256;

/// `f(t, x) = Σ_k coefficients[interval(t)][k] · φ_k(x)` over the listed
/// modes, with `φ_k` a product of `cos(k_a π x_a / L_a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forcing {
    pub modes: Vec<[usize; 2]>,
    pub coefficients: Vec<Vec<f64>>,
}

impl Forcing {
    pub fn constant(value: f64) -> Self {
        Self {
            modes: vec![[0, 0]],
            coefficients: vec![vec![value]],
        }
    }

    /// A single eigenmode, constant in time.
    pub fn mode(kx: usize, ky: usize, amplitude: f64) -> Self {
        Self {
            modes: vec![[kx, ky]],
            coefficients: vec![vec![amplitude]],
        }
    }

    /// Band-limited random forcing: standard normal coefficients on the lowest
    /// [`FORCING_MODES`] modes per axis and [`FORCING_INTERVALS`] time pieces.
    pub fn random(grid: &Grid, rng: &mut ChaCha8Rng) -> Self {
        let ky_max = if grid.dim() == 2 { FORCING_MODES } else { 1 };
        let kx_max = FORCING_MODES.min(grid.cells()[0]);
        let ky_max = ky_max.min(if grid.dim() == 2 { grid.cells()[1] } else { 1 });
        let modes: Vec<[usize; 2]> = (0..ky_max).flat_map(|ky| (0..kx_max).map(move |kx| [kx, ky])).collect();
        let coefficients = (0..FORCING_INTERVALS)
            .map(|_| modes.iter().map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        Self { modes, coefficients }
    }

    fn is_zero(&self) -> bool {
        self.coefficients.iter().flatten().all(|&c| c == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MRProbe {
    pub m: f64,
    pub q: f64,
    pub grid: Grid,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub steps: usize,
    pub forcing: Forcing,
}

impl MRProbe {
    pub fn new(m: f64, q: f64, grid: Grid, t_final: f64, forcing: Forcing) -> Self {
        Self {
            m,
            q,
            grid,
            t_final,
            steps: DEFAULT_STEPS,
            forcing,
        }
    }

    /// Conjugate exponent `q / (q − 1)`.
    pub fn conjugate(&self) -> f64 {
        conjugate(self.q)
    }

    fn check(&self) -> Result<()> {
        if !(self.m > 0.0 && self.m.is_finite()) || !(self.q > 1.0 && self.q.is_finite()) {
            return Err(Error::Domain(format!(
                "probe needs m > 0 and q > 1, got m = {}, q = {}",
                self.m, self.q
            )));
        }
        if !(self.t_final > 0.0) || self.steps == 0 {
            return Err(Error::Domain("probe needs T > 0 and at least one step".into()));
        }
        let pieces = self.forcing.coefficients.len();
        if pieces == 0
            || self
                .forcing
                .coefficients
                .iter()
                .any(|c| c.len() != self.forcing.modes.len())
        {
            return Err(Error::Domain("forcing coefficients do not match its modes".into()));
        }
        let cells = self.grid.cells();
        for k in &self.forcing.modes {
            if k[0] >= cells[0] || (k[1] > 0 && (self.grid.dim() < 2 || k[1] >= cells[1])) {
                return Err(Error::Domain(format!("forcing mode {k:?} is not resolved by the grid")));
            }
        }
        if self.forcing.is_zero() {
            return Err(Error::Domain("forcing is identically zero".into()));
        }
        Ok(())
    }
}

pub fn conjugate(p: f64) -> f64 {
    p / (p - 1.0)
}

fn mode_shape(grid: &Grid, k: [usize; 2]) -> Vec<f64> {
    let lengths = grid.lengths();
    (0..grid.len())
        .map(|c| {
            let x = grid.center(c);
            let mut v = (k[0] as f64 * std::f64::consts::PI * x[0] / lengths[0]).cos();
            if grid.dim() == 2 {
                v *= (k[1] as f64 * std::f64::consts::PI * x[1] / lengths[1]).cos();
            }
            v
        })
        .collect()
}

fn mode_eigenvalue(grid: &Grid, k: [usize; 2]) -> f64 {
    let mut lambda = neumann_eigenvalue(grid.lengths()[0], grid.cells()[0], k[0]);
    if grid.dim() == 2 {
        lambda += neumann_eigenvalue(grid.lengths()[1], grid.cells()[1], k[1]);
    }
    lambda
}

/// `(∫|∂_t v|^q + m^q ∫|Δv|^q)^{1/q} / (∫|f|^q)^{1/q}` over `Ω × (0, T)`.
pub fn heat_mr_ratio(probe: &MRProbe) -> Result<f64> {
    probe.check()?;
    let grid = &probe.grid;
    let modes = &probe.forcing.modes;
    let shapes: Vec<Vec<f64>> = modes.iter().map(|&k| mode_shape(grid, k)).collect();
    let lambdas: Vec<f64> = modes.iter().map(|&k| mode_eigenvalue(grid, k)).collect();
    let pieces = probe.forcing.coefficients.len();
    let dt = probe.t_final / probe.steps as f64;
    let q = probe.q;
    let cells = grid.len();

    let mut v = vec![0.0; modes.len()];
    let mut dv = vec![0.0; cells];
    let mut lap = vec![0.0; cells];
    let mut f = vec![0.0; cells];
    let powered = |field: &[f64]| -> f64 {
        let p: Vec<f64> = field.iter().map(|x| x.abs().powf(q)).collect();
        integrate_values(grid, &p)
    };
    let (mut num, mut den) = (0.0, 0.0);
    for step in 0..probe.steps {
        let t_mid = (step as f64 + 0.5) * dt;
        let piece = ((t_mid / probe.t_final * pieces as f64) as usize).min(pieces - 1);
        let coef = &probe.forcing.coefficients[piece];
        dv.fill(0.0);
        lap.fill(0.0);
        f.fill(0.0);
        for k in 0..modes.len() {
            let next = (v[k] + dt * coef[k]) / (1.0 - dt * probe.m * lambdas[k]);
            let rate = (next - v[k]) / dt;
            v[k] = next;
            for c in 0..cells {
                let s = shapes[k][c];
                dv[c] += rate * s;
                lap[c] += lambdas[k] * next * s;
                f[c] += coef[k] * s;
            }
        }
        num += dt * (powered(&dv) + probe.m.powf(q) * powered(&lap));
        den += dt * powered(&f);
    }
    if !(den > 0.0) {
        return Err(Error::Domain("forcing has zero norm on this grid".into()));
    }
    Ok((num / den).powf(1.0 / q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmqEstimate {
    pub m: f64,
    pub q: f64,
    pub trials: usize,
    pub seed: u64,
    /// Largest observed ratio: a lower bound on `K_{m,q}`.
    pub estimate: f64,
    /// Ratio of each trial, in trial order.
    pub probes: Vec<f64>,
}

impl KmqEstimate {
    /// Running maximum after each trial.
    pub fn running_max(&self) -> Vec<f64> {
        self.probes
            .iter()
            .scan(f64::NEG_INFINITY, |m, &r| {
                *m = m.max(r);
                Some(*m)
            })
            .collect()
    }
}

/// Random forcings of trials `0..trials` drawn from one seeded stream, so a
/// longer run extends a shorter one.
pub fn random_forcings(grid: &Grid, trials: usize, seed: u64) -> Vec<Forcing> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials).map(|_| Forcing::random(grid, &mut rng)).collect()
}

pub fn estimate_kmq(m: f64, q: f64, trials: usize, seed: u64, grid: &Grid, t_final: f64) -> Result<KmqEstimate> {
    if trials == 0 {
        return Err(Error::Domain("estimate needs at least one trial".into()));
    }
    let forcings = random_forcings(grid, trials, seed);
    let probes: Vec<f64> = forcings
        .into_par_iter()
        .map(|f| heat_mr_ratio(&MRProbe::new(m, q, *grid, t_final, f)))
        .collect::<Result<_>>()?;
    let estimate = probes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(KmqEstimate {
        m,
        q,
        trials,
        seed,
        estimate,
        probes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosenessReport {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub k_estimate: f64,
    /// `(b − a)/(b + a)`.
    pub factor: f64,
    pub product: f64,
    /// `1 − product`.
    pub margin: f64,
    pub pass: bool,
    /// The estimate only bounds `K` from below, so a pass is not a proof.
    pub advisory: bool,
}

/// Evaluates `((b − a)/(b + a)) · K̂_{(a+b)/2, p'} < 1`.
pub fn closeness_check(a: f64, b: f64, p: f64, k_estimate: f64) -> Result<ClosenessReport> {
    if !(a > 0.0 && a <= b && b.is_finite()) || !(p > 1.0) || !(k_estimate >= 0.0) {
        return Err(Error::Domain(format!(
            "closeness check needs 0 < a <= b, p > 1 and K >= 0; got a = {a}, b = {b}, p = {p}, K = {k_estimate}"
        )));
    }
    let factor = (b - a) / (b + a);
    let product = factor * k_estimate;
    Ok(ClosenessReport {
        a,
        b,
        p,
        k_estimate,
        factor,
        product,
        margin: 1.0 - product,
        pass: product < 1.0,
        advisory: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassStability {
    pub p: f64,
    pub levels: Vec<usize>,
    /// `‖ρ_1^n‖_{L^p(Ω_T)}` per level.
    pub norms: Vec<f64>,
    /// `‖ρ_1^{in}‖_{L^p(Ω)}` of the finest level.
    pub initial_norm: f64,
    /// Relative change between the last two levels.
    pub relative_change: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub const MASS_STABILITY_TOLERANCE: f64 = 0.05;

pub fn mass_lp_stability(runs: &[&RunResult], p: f64) -> Result<MassStability> {
    check_refinement(runs)?;
    if runs.iter().any(|r| r.mode() != TruncationMode::Conservative) {
        return Err(Error::Mismatch(
            "mass stability is defined for conservative-mode runs".into(),
        ));
    }
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("norm exponent must be >= 1, got {p}")));
    }
    let norms: Vec<f64> = runs.iter().map(|r| r.series.lp_norm(1.0, p)).collect::<Result<_>>()?;
    let finest = runs.last().expect("at least two runs");
    let rho_in = finest.series.field(1.0, 0)?;
    let powered: Vec<f64> = rho_in.iter().map(|v| v.abs().powf(p)).collect();
    let initial_norm = integrate_values(&finest.series.grid, &powered).powf(1.0 / p);
    let (prev, last) = (norms[norms.len() - 2], norms[norms.len() - 1]);
    let relative_change = (last - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
    Ok(MassStability {
        p,
        levels: runs.iter().map(|r| r.n()).collect(),
        norms,
        initial_norm,
        relative_change,
        tolerance: MASS_STABILITY_TOLERANCE,
        pass: relative_change < MASS_STABILITY_TOLERANCE,
    })
}

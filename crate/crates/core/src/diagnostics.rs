//! Moments, space-time norms, gelation detection and audits of the moment
//! inequalities behind the no-gelation argument.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::audit::AuditReport;
use crate::error::{Error, Result};
use crate::grid::{integrate_values, Field, Grid};
use crate::kernels::{frag_lower_constant, size_power, superadditivity_constant};
use crate::scenario::same_order;
use crate::solver::{RunResult, StepStats};
use crate::state::{TruncatedState, TruncationMode};

/// Densities below this are treated as empty cells by ratio diagnostics.
pub const EMPTY_DENSITY: f64 = 1e-300;

/// Per-cell `ρ_k = Σ i^k c_i`.
pub fn moment(s: &TruncatedState, k: f64) -> Field {
    let n = s.n();
    let weights: Vec<f64> = (1..=n).map(|i| size_power(i, k)).collect();
    let mut values = vec![0.0; s.cells()];
    for (i, w) in weights.iter().enumerate() {
        for (acc, c) in values.iter_mut().zip(s.species(i + 1)) {
            *acc += w * c;
        }
    }
    Field {
        grid: *s.grid(),
        values,
    }
}

/// `(∫_0^T ∫_Ω |f|^p)^{1/p}`: midpoint rule in space, trapezoid in time.
pub fn lp_spacetime_norm(times: &[f64], fields: &[Field], p: f64) -> Result<f64> {
    if times.len() != fields.len() || times.len() < 2 {
        return Err(Error::Domain(format!(
            "space-time norm needs at least two samples with matching times, got {} times and {} fields",
            times.len(),
            fields.len()
        )));
    }
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("norm exponent must be >= 1, got {p}")));
    }
    let slices: Vec<&[f64]> = fields.iter().map(|f| f.values.as_slice()).collect();
    Ok(lp_spacetime_values(&fields[0].grid, times, &slices, p))
}

fn lp_spacetime_values(grid: &Grid, times: &[f64], fields: &[&[f64]], p: f64) -> f64 {
    let spatial: Vec<f64> = fields
        .iter()
        .map(|f| {
            let powered: Vec<f64> = f.iter().map(|v| v.abs().powf(p)).collect();
            integrate_values(grid, &powered)
        })
        .collect();
    trapezoid(times, &spatial).powf(1.0 / p)
}

pub(crate) fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2)
        .zip(y.windows(2))
        .map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1]))
        .sum()
}

/// Per-cell `M_k = Σ i^k d_i c_i / Σ i^k c_i`; empty cells report `d_1`.
pub fn m_ratio(s: &TruncatedState, k: f64, d: &[f64]) -> Result<Field> {
    if d.len() != s.n() {
        return Err(Error::Domain(format!(
            "{} diffusion coefficients for n = {}",
            d.len(),
            s.n()
        )));
    }
    let mut num = vec![0.0; s.cells()];
    let mut den = vec![0.0; s.cells()];
    for (i, di) in d.iter().enumerate() {
        let w = size_power(i + 1, k);
        for ((nu, de), c) in num.iter_mut().zip(den.iter_mut()).zip(s.species(i + 1)) {
            *nu += w * di * c;
            *de += w * c;
        }
    }
    let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let values = num
        .iter()
        .zip(&den)
        .map(|(nu, de)| {
            if *de < EMPTY_DENSITY {
                d[0]
            } else {
                (nu / de).clamp(lo, hi)
            }
        })
        .collect();
    Ok(Field {
        grid: *s.grid(),
        values,
    })
}

/// Diagnostics recorded at one sample time. Integrals are over `Ω`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    /// Outer step size used to reach this sample (0 at the start).
    pub dt: f64,
    pub total_mass: f64,
    /// `∫ρ_k` for each recorded order.
    pub moments: Vec<f64>,
    pub int_c1: f64,
    pub gel_fraction: f64,
    pub tail_fraction: f64,
    pub m1_min: f64,
    pub m1_max: f64,
    pub min_concentration: f64,
    pub clamped_mass: f64,
    pub leaked_mass: f64,
    /// Per-cell `ρ_k` for each recorded order.
    #[serde(skip)]
    pub fields: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSeries {
    pub orders: Vec<f64>,
    pub grid: Grid,
    pub n: usize,
    pub samples: Vec<Sample>,
}

impl MomentSeries {
    pub fn new(orders: Vec<f64>, grid: Grid, n: usize) -> Self {
        Self {
            orders,
            grid,
            n,
            samples: Vec::new(),
        }
    }

    pub fn record(&mut self, s: &TruncatedState, d: &[f64], dt: f64, stats: &StepStats) {
        let fields: Vec<Vec<f64>> = self.orders.iter().map(|&k| moment(s, k).values).collect();
        let grid = *s.grid();
        let moments: Vec<f64> = fields.iter().map(|f| integrate_values(&grid, f)).collect();
        let rho1 = moment(s, 1.0);
        let total_mass = integrate_values(&grid, &rho1.values);
        let initial_mass = self
            .samples
            .first()
            .map_or(total_mass + stats.leaked_mass, |s0| s0.total_mass);
        let gel_fraction = if initial_mass > 0.0 {
            (stats.leaked_mass / initial_mass).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let mut tail = vec![0.0; s.cells()];
        for i in s.n() / 2 + 1..=s.n() {
            for (acc, c) in tail.iter_mut().zip(s.species(i)) {
                *acc += i as f64 * c;
            }
        }
        let tail_mass = integrate_values(&grid, &tail);
        let tail_fraction = if total_mass > 0.0 { tail_mass / total_mass } else { 0.0 };
        let (mut m1_min, mut m1_max) = (f64::INFINITY, f64::NEG_INFINITY);
        if let Ok(m1) = m_ratio(s, 1.0, d) {
            for (m, r) in m1.values.iter().zip(&rho1.values) {
                if *r >= EMPTY_DENSITY {
                    m1_min = m1_min.min(*m);
                    m1_max = m1_max.max(*m);
                }
            }
        }
        if m1_min > m1_max {
            m1_min = d[0];
            m1_max = d[0];
        }
        self.samples.push(Sample {
            t: s.time,
            dt,
            total_mass,
            moments,
            int_c1: integrate_values(&grid, s.species(1)),
            gel_fraction,
            tail_fraction,
            m1_min,
            m1_max,
            min_concentration: s.min_concentration(),
            clamped_mass: stats.clamped_mass,
            leaked_mass: stats.leaked_mass,
            fields,
        });
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn initial_mass(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.total_mass)
    }

    pub fn order_index(&self, k: f64) -> Result<usize> {
        self.orders
            .iter()
            .position(|&o| same_order(o, k))
            .ok_or(Error::MissingMoment(k))
    }

    /// `∫ρ_k` at every sample time.
    pub fn integrals(&self, k: f64) -> Result<Vec<f64>> {
        let idx = self.order_index(k)?;
        Ok(self.samples.iter().map(|s| s.moments[idx]).collect())
    }

    /// Per-cell `ρ_k` at sample `index`.
    pub fn field(&self, k: f64, index: usize) -> Result<&[f64]> {
        let idx = self.order_index(k)?;
        Ok(&self.samples[index].fields[idx])
    }

    pub fn masses(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.total_mass).collect()
    }

    pub fn gel_fractions(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.gel_fraction).collect()
    }

    /// `‖ρ_k‖_{L^p(Ω_T)}` from the recorded fields.
    pub fn lp_norm(&self, k: f64, p: f64) -> Result<f64> {
        let idx = self.order_index(k)?;
        if self.samples.len() < 2 {
            return Err(Error::Domain("space-time norm needs at least two samples".into()));
        }
        let fields: Vec<&[f64]> = self.samples.iter().map(|s| s.fields[idx].as_slice()).collect();
        Ok(lp_spacetime_values(&self.grid, &self.times(), &fields, p))
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["t".to_string(), "dt".into(), "total_mass".into()];
        cols.extend(self.orders.iter().map(|k| format!("int_rho_{k}")));
        cols.extend(
            [
                "gel_fraction",
                "tail_fraction",
                "M1_min",
                "M1_max",
                "min_concentration",
                "clamped_mass_cum",
            ]
            .map(String::from),
        );
        cols.join(",")
    }

    /// Header plus one row per sample, LF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for s in &self.samples {
            let mut row = vec![s.t, s.dt, s.total_mass];
            row.extend(&s.moments);
            row.extend([
                s.gel_fraction,
                s.tail_fraction,
                s.m1_min,
                s.m1_max,
                s.min_concentration,
                s.clamped_mass,
            ]);
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// `∫_0^T t^{m-1} ∫_Ω ρ_{k+m(γ-1)}` by the time trapezoid rule.
pub fn weighted_moment_integral(run: &RunResult, k: f64, gamma: f64, m: u32) -> Result<f64> {
    if m == 0 {
        return Err(Error::Domain("weighted moment integral needs m >= 1".into()));
    }
    let order = k + m as f64 * (gamma - 1.0);
    let values = run.series.integrals(order)?;
    let times = run.series.times();
    let weighted: Vec<f64> = times
        .iter()
        .zip(&values)
        .map(|(t, v)| t.powi(m as i32 - 1) * v)
        .collect();
    Ok(trapezoid(&times, &weighted))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GelVerdict {
    Gelling,
    NonGelling,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GelReport {
    pub levels: Vec<usize>,
    pub mode: TruncationMode,
    pub delta: f64,
    pub times: Vec<f64>,
    pub masses: Vec<Vec<f64>>,
    pub gel_fractions: Vec<Vec<f64>>,
    pub tail_fractions: Vec<Vec<f64>>,
    /// Refinement-extrapolated gel fraction from the last three levels.
    pub extrapolated_gel_fraction: Vec<f64>,
    pub final_gel_fractions: Vec<f64>,
    pub extrapolated_final_mass: f64,
    pub gel_time: Option<f64>,
    /// Gap between the extrapolated and finest-level threshold crossings.
    pub gel_time_uncertainty: Option<f64>,
    pub verdict: GelVerdict,
}

/// Aitken extrapolation of `g_n, g_2n, g_4n`; falls back to the finest value
/// when the differences do not contract monotonically.
pub fn aitken(g1: f64, g2: f64, g3: f64) -> f64 {
    let d1 = g2 - g1;
    let d2 = g3 - g2;
    if d1 * d2 > 0.0 && d2.abs() < d1.abs() {
        let r = d2 / d1;
        g3 + d2 * r / (1.0 - r)
    } else {
        g3
    }
}

/// First time at which the linearly interpolated series exceeds `delta`.
fn crossing(times: &[f64], g: &[f64], delta: f64) -> Option<f64> {
    if g.first().is_some_and(|&v| v > delta) {
        return times.first().copied();
    }
    for w in 0..times.len().saturating_sub(1) {
        let (g0, g1) = (g[w], g[w + 1]);
        if g0 <= delta && g1 > delta {
            let s = (delta - g0) / (g1 - g0);
            return Some(times[w] + s * (times[w + 1] - times[w]));
        }
    }
    None
}

pub(crate) fn check_refinement(runs: &[&RunResult]) -> Result<()> {
    if runs.len() < 2 {
        return Err(Error::Mismatch("a refinement study needs at least two runs".into()));
    }
    let key = runs[0].config.refinement_key();
    for pair in runs.windows(2) {
        if pair[1].n() <= pair[0].n() {
            return Err(Error::Mismatch("runs must be ordered by increasing n".into()));
        }
    }
    for r in runs {
        if r.config.refinement_key() != key {
            return Err(Error::Mismatch(format!(
                "run with n = {} differs from the n = {} run in more than the truncation size",
                r.n(),
                runs[0].n()
            )));
        }
        if r.series.times() != runs[0].series.times() {
            return Err(Error::Mismatch("runs were sampled at different times".into()));
        }
    }
    Ok(())
}

/// Gelation verdict from runs at increasing truncation sizes.
pub fn gel_report(runs: &[&RunResult], delta: f64) -> Result<GelReport> {
    check_refinement(runs)?;
    if runs.len() < 3 {
        return Err(Error::Mismatch("the gel report needs at least three levels".into()));
    }
    let times = runs[0].series.times();
    let gel: Vec<Vec<f64>> = runs.iter().map(|r| r.series.gel_fractions()).collect();
    let masses: Vec<Vec<f64>> = runs.iter().map(|r| r.series.masses()).collect();
    let tails: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| r.series.samples.iter().map(|s| s.tail_fraction).collect())
        .collect();
    let m = gel.len();
    let (a, b, c) = (&gel[m - 3], &gel[m - 2], &gel[m - 1]);
    let extrapolated: Vec<f64> = (0..times.len())
        .map(|t| aitken(a[t], b[t], c[t]).clamp(0.0, 1.0))
        .collect();
    let finals: Vec<f64> = gel.iter().map(|g| *g.last().expect("samples")).collect();
    let (g1, g2, g3) = (finals[m - 3], finals[m - 2], finals[m - 1]);
    let verdict = if g3 > delta && (g3 - g2).abs() < (g2 - g1).abs() {
        GelVerdict::Gelling
    } else if g3 < delta && finals.windows(2).all(|w| w[1] <= w[0]) {
        GelVerdict::NonGelling
    } else {
        GelVerdict::Inconclusive
    };
    let gel_time = crossing(&times, &extrapolated, delta);
    let finest = crossing(&times, c, delta);
    let gel_time_uncertainty = match (gel_time, finest) {
        (Some(a), Some(b)) => Some((a - b).abs()),
        _ => None,
    };
    let initial_mass = runs[m - 1].series.initial_mass();
    Ok(GelReport {
        levels: runs.iter().map(|r| r.n()).collect(),
        mode: runs[0].mode(),
        delta,
        extrapolated_final_mass: initial_mass * (1.0 - *extrapolated.last().expect("samples")),
        times,
        masses,
        gel_fractions: gel,
        tail_fractions: tails,
        extrapolated_gel_fraction: extrapolated,
        final_gel_fractions: finals,
        gel_time,
        gel_time_uncertainty,
        verdict,
    })
}

/// Derivative of `y(t)` at every sample: centered differences inside,
/// second-order one-sided differences at the ends. Also returns a local
/// estimate of `|y'''|` from third differences.
fn derivative_with_curvature(t: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = t.len();
    let mut d = vec![0.0; m];
    for k in 0..m {
        d[k] = if m == 2 {
            (y[1] - y[0]) / (t[1] - t[0])
        } else if k == 0 {
            let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
            -(2.0 * h1 + h2) / (h1 * (h1 + h2)) * y[0] + (h1 + h2) / (h1 * h2) * y[1] - h1 / (h2 * (h1 + h2)) * y[2]
        } else if k == m - 1 {
            let (h1, h2) = (t[m - 2] - t[m - 3], t[m - 1] - t[m - 2]);
            h2 / (h1 * (h1 + h2)) * y[m - 3] - (h1 + h2) / (h1 * h2) * y[m - 2]
                + (2.0 * h2 + h1) / (h2 * (h1 + h2)) * y[m - 1]
        } else {
            let (h1, h2) = (t[k] - t[k - 1], t[k + 1] - t[k]);
            -h2 / (h1 * (h1 + h2)) * y[k - 1] + (h2 - h1) / (h1 * h2) * y[k] + h1 / (h2 * (h1 + h2)) * y[k + 1]
        };
    }
    // third divided differences on each window of four samples
    let mut third = Vec::new();
    for w in 0..m.saturating_sub(3) {
        let dd = |a: usize, b: usize| (y[b] - y[a]) / (t[b] - t[a]);
        let d2 = |a: usize| (dd(a + 1, a + 2) - dd(a, a + 1)) / (t[a + 2] - t[a]);
        third.push(6.0 * (d2(w + 1) - d2(w)) / (t[w + 3] - t[w]));
    }
    let centre = |w: usize| 0.25 * (t[w] + t[w + 1] + t[w + 2] + t[w + 3]);
    let curvature = (0..m)
        .map(|k| {
            if third.is_empty() {
                return 0.0;
            }
            let lo = k.saturating_sub(3);
            let hi = k.min(third.len() - 1);
            let mut est = third[lo.min(hi)..=hi].iter().fold(0.0f64, |a, v| a.max(v.abs()));
            // outside the window centres, extrapolate the two nearest windows linearly
            let last = third.len() - 1;
            if last >= 1 {
                let pair = if t[k] < centre(0) {
                    Some((0, 1))
                } else if t[k] > centre(last) {
                    Some((last - 1, last))
                } else {
                    None
                };
                if let Some((a, b)) = pair {
                    let slope = (third[b] - third[a]) / (centre(b) - centre(a));
                    est = est.max((third[a] + slope * (t[k] - centre(a))).abs());
                }
            }
            est
        })
        .collect();
    (d, curvature)
}

/// Relative slack granted to the dissipation inequality on top of the
/// finite-difference allowance; covers the integrator's own tolerance.
pub const DISSIPATION_RELATIVE_SLACK: f64 = 1e-6;

/// Checks, at every sample time,
/// `d/dt ∫ρ_l + C_F C_{F,l} ∫ρ_{γ+l-1} ≤ C_Q C_{Q,l} ∫(ρ_{α+l-1}ρ_{β+1} + ρ_{α+1}ρ_{β+l-1}) + C_F C_{F,l} ∫c_1`.
pub fn dissipation_audit(
    run: &RunResult,
    l: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    c_q: f64,
    c_f: f64,
) -> Result<AuditReport> {
    if !(l > 1.0) {
        return Err(Error::Domain(format!("dissipation audit needs l > 1, got {l}")));
    }
    let series = &run.series;
    if series.samples.len() < 3 {
        return Err(Error::Domain("dissipation audit needs at least three samples".into()));
    }
    let times = series.times();
    let rho_l = series.integrals(l)?;
    let rho_frag = series.integrals(gamma + l - 1.0)?;
    let c_ql = superadditivity_constant(l, 2000)?;
    let c_fl = frag_lower_constant(l);
    let (da, db) = (alpha + l - 1.0, beta + 1.0);
    let (dc, dd) = (alpha + 1.0, beta + l - 1.0);
    for k in [da, db, dc, dd] {
        series.order_index(k)?;
    }
    let (deriv, curvature) = derivative_with_curvature(&times, &rho_l);
    let grid = series.grid;
    let mut report = AuditReport::new();
    for (idx, s) in series.samples.iter().enumerate() {
        let (fa, fb) = (series.field(da, idx)?, series.field(db, idx)?);
        let (fc, fd) = (series.field(dc, idx)?, series.field(dd, idx)?);
        let products: Vec<f64> = (0..fa.len()).map(|x| fa[x] * fb[x] + fc[x] * fd[x]).collect();
        let coag = c_q * c_ql * integrate_values(&grid, &products);
        let frag = c_f * c_fl * rho_frag[idx];
        let source = c_f * c_fl * s.int_c1;
        let lhs = deriv[idx] + frag;
        let rhs = coag + source;
        let h = if idx == 0 {
            times[1] - times[0]
        } else if idx == times.len() - 1 {
            times[idx] - times[idx - 1]
        } else {
            (times[idx + 1] - times[idx]).max(times[idx] - times[idx - 1])
        };
        let scale = deriv[idx].abs() + frag.abs() + coag.abs() + source.abs();
        let tolerance = 2.0 * h * h * curvature[idx] + DISSIPATION_RELATIVE_SLACK * scale;
        let margin = rhs - lhs;
        report.push(
            "moment_dissipation",
            json!({
                "t": s.t, "l": l, "n": series.n,
                "lhs": lhs, "rhs": rhs, "tolerance": tolerance,
                "C_Ql": c_ql, "C_Fl": c_fl,
            }),
            margin,
            margin >= -tolerance,
        );
    }
    Ok(report)
}

/// The moments the interpolation estimates read, at one point.
#[derive(Debug, Clone, Copy)]
pub struct InterpolationMoments {
    pub rho1: f64,
    pub rho_top: f64,
    pub rho_a1: f64,
    pub rho_b1: f64,
    pub rho_al: f64,
    pub rho_bl: f64,
}

fn check_interpolation_params(alpha: f64, beta: f64, gamma: f64, l: f64) -> Result<()> {
    if !(l > 2.0 - (gamma - alpha) && l > 2.0 - (gamma - beta)) || !(l > 1.0) {
        return Err(Error::Domain(format!(
            "interpolation estimates need l > 1, l > 2 - (γ - α) and l > 2 - (γ - β); got l = {l}, α = {alpha}, β = {beta}, γ = {gamma}"
        )));
    }
    Ok(())
}

/// The four Hölder interpolation bounds for one set of moments, as
/// `(name, lhs, rhs)`. Orders below one fall back to `ρ_k ≤ ρ_1`.
pub fn interpolation_bounds(
    m: &InterpolationMoments,
    alpha: f64,
    beta: f64,
    gamma: f64,
    l: f64,
) -> [(&'static str, f64, f64); 4] {
    let s = gamma + l - 2.0;
    let holder = |lower: f64, top: f64| m.rho1.powf(lower / s) * m.rho_top.powf(top / s);
    let high = |order: f64, value: f64, other: f64| {
        if order < 1.0 {
            (value, m.rho1)
        } else {
            (value, holder(gamma - other, other + l - 2.0))
        }
    };
    let (al_lhs, al_rhs) = high(alpha + l - 1.0, m.rho_al, alpha);
    let (bl_lhs, bl_rhs) = high(beta + l - 1.0, m.rho_bl, beta);
    [
        ("interpolation_alpha_plus_1", m.rho_a1, holder(s - alpha, alpha)),
        ("interpolation_beta_plus_1", m.rho_b1, holder(s - beta, beta)),
        ("interpolation_alpha_plus_l_minus_1", al_lhs, al_rhs),
        ("interpolation_beta_plus_l_minus_1", bl_lhs, bl_rhs),
    ]
}

fn push_interpolation(report: &mut AuditReport, worst: &[(f64, f64); 4], names: [&str; 4], params: serde_json::Value) {
    for (k, name) in names.iter().enumerate() {
        let (slack, ok) = worst[k];
        report.push(*name, params.clone(), slack, ok != 0.0);
    }
}

const INTERPOLATION_NAMES: [&str; 4] = [
    "interpolation_alpha_plus_1",
    "interpolation_beta_plus_1",
    "interpolation_alpha_plus_l_minus_1",
    "interpolation_beta_plus_l_minus_1",
];

/// Tracks, per inequality, the smallest relative slack and whether every
/// point passed (stored as 1.0 / 0.0).
fn scan_points(
    points: impl Iterator<Item = InterpolationMoments>,
    alpha: f64,
    beta: f64,
    gamma: f64,
    l: f64,
) -> [(f64, f64); 4] {
    let mut worst = [(f64::INFINITY, 1.0); 4];
    for m in points {
        if m.rho1 < EMPTY_DENSITY {
            continue;
        }
        for (k, (_, lhs, rhs)) in interpolation_bounds(&m, alpha, beta, gamma, l).iter().enumerate() {
            let slack = (rhs - lhs) / rhs.abs().max(EMPTY_DENSITY);
            worst[k].0 = worst[k].0.min(slack);
            if !(*lhs <= rhs * (1.0 + 1e-12)) {
                worst[k].1 = 0.0;
            }
        }
    }
    for w in worst.iter_mut() {
        if w.0 == f64::INFINITY {
            w.0 = 0.0;
        }
    }
    worst
}

/// Per-cell check of the interpolation estimates on one state. Margins are
/// the smallest relative slack `(rhs - lhs)/rhs` over cells.
pub fn interpolation_audit(s: &TruncatedState, alpha: f64, beta: f64, gamma: f64, l: f64) -> Result<AuditReport> {
    check_interpolation_params(alpha, beta, gamma, l)?;
    let f = |k: f64| moment(s, k).values;
    let (r1, top) = (f(1.0), f(gamma + l - 1.0));
    let (a1, b1) = (f(alpha + 1.0), f(beta + 1.0));
    let (al, bl) = (f(alpha + l - 1.0), f(beta + l - 1.0));
    let points = (0..s.cells()).map(|x| InterpolationMoments {
        rho1: r1[x],
        rho_top: top[x],
        rho_a1: a1[x],
        rho_b1: b1[x],
        rho_al: al[x],
        rho_bl: bl[x],
    });
    let worst = scan_points(points, alpha, beta, gamma, l);
    let mut report = AuditReport::new();
    push_interpolation(
        &mut report,
        &worst,
        INTERPOLATION_NAMES,
        json!({"t": s.time, "alpha": alpha, "beta": beta, "gamma": gamma, "l": l}),
    );
    Ok(report)
}

/// Interpolation audit at every recorded sample of a run.
pub fn interpolation_audit_series(
    series: &MomentSeries,
    alpha: f64,
    beta: f64,
    gamma: f64,
    l: f64,
) -> Result<AuditReport> {
    check_interpolation_params(alpha, beta, gamma, l)?;
    let mut report = AuditReport::new();
    for idx in 0..series.samples.len() {
        let f = |k: f64| series.field(k, idx);
        let (r1, top) = (f(1.0)?, f(gamma + l - 1.0)?);
        let (a1, b1) = (f(alpha + 1.0)?, f(beta + 1.0)?);
        let (al, bl) = (f(alpha + l - 1.0)?, f(beta + l - 1.0)?);
        let points = (0..r1.len()).map(|x| InterpolationMoments {
            rho1: r1[x],
            rho_top: top[x],
            rho_a1: a1[x],
            rho_b1: b1[x],
            rho_al: al[x],
            rho_bl: bl[x],
        });
        let worst = scan_points(points, alpha, beta, gamma, l);
        push_interpolation(
            &mut report,
            &worst,
            INTERPOLATION_NAMES,
            json!({"t": series.samples[idx].t, "n": series.n, "alpha": alpha, "beta": beta, "gamma": gamma, "l": l}),
        );
    }
    Ok(report)
}

/// `ξ ≤ C + ξ^{1-θ}` implies `ξ ≤ max(1, (1+C)^{1/θ})`.
pub fn bound_elem1(c: f64, theta: f64) -> Result<f64> {
    if !(c > 0.0) || !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Domain(format!(
            "need C > 0 and 0 < θ < 1, got C = {c}, θ = {theta}"
        )));
    }
    Ok((1.0 + c).powf(1.0 / theta).max(1.0))
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// `2 (C_2 + (2 C_1)^{1/θ} T^{m+1} / (m+1)!)`.
pub fn bound_elem2(c1: f64, c2: f64, theta: f64, m: u32, t_final: f64) -> Result<f64> {
    if !(c1 >= 0.0) || !(c2 >= 0.0) || !(theta > 0.0 && theta <= 1.0) || m == 0 || !(t_final > 0.0) {
        return Err(Error::Domain(format!(
            "need C1, C2 >= 0, 0 < θ <= 1, m >= 1, T > 0; got C1 = {c1}, C2 = {c2}, θ = {theta}, m = {m}, T = {t_final}"
        )));
    }
    Ok(2.0 * (c2 + (2.0 * c1).powf(1.0 / theta) * t_final.powi(m as i32 + 1) / factorial(m + 1)))
}

/// Nonnegative step function on `[0, T]` with equal-width pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    pub t_final: f64,
    pub values: Vec<f64>,
}

impl StepFunction {
    /// `∫_0^T t^m/m! · g(f(t)) dt`, exact per piece.
    pub fn weighted_integral(&self, m: u32, g: impl Fn(f64) -> f64) -> f64 {
        let k = self.values.len();
        let h = self.t_final / k as f64;
        let norm = factorial(m + 1);
        self.values
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                let (a, b) = (j as f64 * h, (j + 1) as f64 * h);
                g(v) * (b.powi(m as i32 + 1) - a.powi(m as i32 + 1)) / norm
            })
            .sum()
    }

    /// Whether `∫ t^m/m! f ≤ C_1 ∫ t^m/m! f^{1-θ} + C_2`.
    pub fn satisfies_elem2_hypothesis(&self, c1: f64, c2: f64, theta: f64, m: u32) -> bool {
        let lhs = self.weighted_integral(m, |v| v);
        let rhs = c1 * self.weighted_integral(m, |v| v.powf(1.0 - theta)) + c2;
        lhs <= rhs
    }
}

/// Outcome of a randomized search for counterexamples to a bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyScan {
    pub samples: usize,
    /// Samples that satisfied the hypothesis and were therefore checked.
    pub checked: usize,
    pub counterexamples: usize,
    /// Smallest relative slack `(bound − value)/bound` over checked samples.
    pub min_slack: f64,
}

impl PropertyScan {
    pub fn passed(&self) -> bool {
        self.counterexamples == 0 && self.checked > 0
    }
}

/// Draws `(ξ, C, θ)` and checks every draw with `ξ ≤ C + ξ^{1-θ}` against
/// [`bound_elem1`]. `ξ` is drawn up to twice the bound so that both sides of
/// the implication are exercised.
pub fn elem1_scan(samples: usize, seed: u64) -> PropertyScan {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut scan = PropertyScan {
        samples,
        checked: 0,
        counterexamples: 0,
        min_slack: f64::INFINITY,
    };
    for _ in 0..samples {
        let c = 10f64.powf(rng.random_range(-3.0..2.0));
        let theta = rng.random_range(0.02..0.98);
        let bound = bound_elem1(c, theta).expect("valid parameters");
        let xi = rng.random_range(0.0..2.0) * bound;
        if xi <= c + xi.powf(1.0 - theta) {
            scan.checked += 1;
            let slack = (bound - xi) / bound;
            scan.min_slack = scan.min_slack.min(slack);
            if xi > bound * (1.0 + 1e-12) {
                scan.counterexamples += 1;
            }
        }
    }
    scan
}

/// Draws random nonnegative step functions with parameters `(C_1, θ, m, T)`,
/// takes the smallest `C_2 > 0` for which the hypothesis holds, and
/// checks the conclusion against [`bound_elem2`].
pub fn elem2_scan(samples: usize, seed: u64) -> PropertyScan {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut scan = PropertyScan {
        samples,
        checked: 0,
        counterexamples: 0,
        min_slack: f64::INFINITY,
    };
    for _ in 0..samples {
        let pieces = rng.random_range(1..=32);
        let scale = 10f64.powf(rng.random_range(-2.0..3.0));
        let f = StepFunction {
            t_final: rng.random_range(0.1..5.0),
            values: (0..pieces)
                .map(|_| {
                    if rng.random_bool(0.2) {
                        0.0
                    } else {
                        scale * rng.random_range(0.0..1.0f64).powi(2)
                    }
                })
                .collect(),
        };
        let m = rng.random_range(1..=4u32);
        let theta = rng.random_range(0.02..0.98);
        let c1 = 10f64.powf(rng.random_range(-2.0..1.5));
        let lhs = f.weighted_integral(m, |v| v);
        let sub = c1 * f.weighted_integral(m, |v| v.powf(1.0 - theta));
        let c2 = (lhs - sub).max(0.0) * (1.0 + 1e-12) + 1e-12;
        if !f.satisfies_elem2_hypothesis(c1, c2, theta, m) {
            continue;
        }
        scan.checked += 1;
        let bound = bound_elem2(c1, c2, theta, m, f.t_final).expect("valid parameters");
        scan.min_slack = scan.min_slack.min((bound - lhs) / bound);
        if lhs > bound * (1.0 + 1e-12) {
            scan.counterexamples += 1;
        }
    }
    scan
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub n: usize,
    /// `sup_t |∫ρ_1^n − ∫ρ_1^{2n}|`.
    pub mass_difference: f64,
    /// `(‖ρ_k^n‖ + ‖ρ_k^{2n}‖) / i_0^{k-1}` in `L^1(Ω_T)` with `i_0 = n/2`.
    pub tail_bound: f64,
}

pub fn refinement_convergence(coarse: &RunResult, fine: &RunResult, k: f64) -> Result<RefinementReport> {
    check_refinement(&[coarse, fine])?;
    if !(k > 1.0) {
        return Err(Error::Domain(format!("tail bound needs k > 1, got {k}")));
    }
    let a = coarse.series.masses();
    let b = fine.series.masses();
    let mass_difference = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let i0 = (coarse.n() / 2).max(1) as f64;
    let norm = |r: &RunResult| -> Result<f64> { r.series.lp_norm(k, 1.0) };
    let tail_bound = (norm(coarse)? + norm(fine)?) / i0.powf(k - 1.0);
    Ok(RefinementReport {
        n: coarse.n(),
        mass_difference,
        tail_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(cells: usize) -> Grid {
        Grid::interval(1.0, cells).unwrap()
    }

    #[test]
    fn moment_examples() {
        let s = TruncatedState::uniform(grid(2), &[2.0, 0.0, 1.0]).unwrap();
        assert_eq!(moment(&s, 2.0).values, vec![11.0, 11.0]);
        assert_eq!(moment(&s, 0.0).values, vec![3.0, 3.0]);
        let mono = TruncatedState::uniform(grid(1), &[0.7, 0.0, 0.0]).unwrap();
        for k in [0.0, 0.5, 1.0, 2.5] {
            assert_eq!(moment(&mono, k).values, vec![0.7]);
        }
    }

    #[test]
    fn lp_norm_examples() {
        let g = grid(4);
        let times = [0.0, 0.5, 1.0];
        let two: Vec<Field> = times.iter().map(|_| g.constant(2.0)).collect();
        assert_relative_eq!(lp_spacetime_norm(&times, &two, 2.0).unwrap(), 2.0, max_relative = 1e-15);
        let lin: Vec<Field> = times.iter().map(|&t| g.constant(t)).collect();
        assert_relative_eq!(lp_spacetime_norm(&times, &lin, 1.0).unwrap(), 0.5, max_relative = 1e-15);
        assert!(lp_spacetime_norm(&times[..1], &lin[..1], 1.0).is_err());
    }

    #[test]
    fn m_ratio_examples() {
        let s = TruncatedState::uniform(grid(1), &[1.0, 1.0]).unwrap();
        assert_relative_eq!(m_ratio(&s, 1.0, &[1.0, 2.0]).unwrap().values[0], 5.0 / 3.0);
        assert_eq!(m_ratio(&s, 1.0, &[0.3, 0.3]).unwrap().values[0], 0.3);
        let empty = TruncatedState::uniform(grid(1), &[0.0, 0.0]).unwrap();
        assert_eq!(m_ratio(&empty, 1.0, &[1.5, 2.0]).unwrap().values[0], 1.5);
    }

    #[test]
    fn elementary_bounds() {
        assert_eq!(bound_elem1(3.0, 0.5).unwrap(), 16.0);
        assert_eq!(bound_elem1(1.0, 0.5).unwrap(), 4.0);
        assert_relative_eq!(bound_elem2(0.5, 1.0, 1.0, 1, 2.0).unwrap(), 6.0, max_relative = 1e-15);
        assert_relative_eq!(
            bound_elem2(0.5, 1.0, 1.0, 2, 2.0).unwrap(),
            14.0 / 3.0,
            max_relative = 1e-15
        );
        assert!(bound_elem2(1e-300, 0.0, 0.5, 1, 1.0).unwrap() < 1e-299);
    }

    #[test]
    fn elementary_scans_find_no_counterexample() {
        let a = elem1_scan(20_000, 1);
        assert!(a.passed(), "{a:?}");
        assert!(a.checked > 1000);
        let b = elem2_scan(2_000, 2);
        assert!(b.passed(), "{b:?}");
        assert_eq!(b.checked, 2_000);
    }

    #[test]
    fn interpolation_hand_example() {
        // c_1 = c_2 = 1, α = 1, γ = 3, l = 2: ρ_2 = 5 ≤ 3^{2/3} 17^{1/3}
        let m = InterpolationMoments {
            rho1: 3.0,
            rho_top: 17.0,
            rho_a1: 5.0,
            rho_b1: 5.0,
            rho_al: 5.0,
            rho_bl: 5.0,
        };
        let b = interpolation_bounds(&m, 1.0, 1.0, 3.0, 2.0);
        assert_relative_eq!(
            b[0].2,
            3f64.powf(2.0 / 3.0) * 17f64.powf(1.0 / 3.0),
            max_relative = 1e-14
        );
        assert!(b.iter().all(|(_, l, r)| l <= r));
    }

    #[test]
    fn interpolation_equality_for_monodisperse() {
        let s = TruncatedState::uniform(grid(3), &[0.4, 0.0, 0.0, 0.0]).unwrap();
        let r = interpolation_audit(&s, 0.5, 0.25, 2.0, 1.5).unwrap();
        assert!(r.all_pass());
        for c in &r.checks {
            assert!(c.margin.abs() < 1e-14, "{c:?}");
        }
        assert!(interpolation_audit(&s, 1.0, 1.0, 0.0, 1.5).is_err());
    }

    #[test]
    fn derivative_is_exact_for_quadratics() {
        let t: Vec<f64> = (0..6).map(|k| 0.1 * k as f64 + 0.01 * (k * k) as f64).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * t * t - t + 2.0).collect();
        let (d, curv) = derivative_with_curvature(&t, &y);
        for (t, d) in t.iter().zip(&d) {
            assert_relative_eq!(*d, 6.0 * t - 1.0, epsilon = 1e-10);
        }
        assert!(curv.iter().all(|c| c.abs() < 1e-6));
    }

    #[test]
    fn aitken_recovers_geometric_limit() {
        let g = |n: f64| 0.5 - 1.0 / n;
        assert_relative_eq!(aitken(g(1.0), g(2.0), g(4.0)), 0.5, max_relative = 1e-14);
        assert_eq!(aitken(0.1, 0.2, 0.4), 0.4);
    }

    #[test]
    fn crossing_interpolates() {
        let t = [0.0, 1.0, 2.0];
        assert_eq!(crossing(&t, &[0.0, 0.0, 0.1], 0.05), Some(1.5));
        assert_eq!(crossing(&t, &[0.0, 0.0, 0.0], 0.05), None);
    }
}

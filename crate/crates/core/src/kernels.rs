//! Coagulation, fragmentation and daughter-distribution coefficient families.
//!
//! Power-law families are taken with equality:
//!
//! ```text
//! a_{i,j}   = C_Q (i^α j^β + i^β j^α)
//! B_i       = C_F i^γ            (B_1 = 0)
//! β_{i,j}   = i j^ν / Σ_{k<i} k^{1+ν}
//! ```
//!
//! [`TruncatedKernels`] materializes a [`KernelSet`] for a truncation size `n`
//! and keeps the separable structure of the power-law families so the
//! reaction operators can use prefix/suffix sums instead of dense tables.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::audit::AuditReport;
use crate::error::{Error, Result};

/// Largest truncation size accepted for explicit tables.
pub const MAX_TABLE_SIZE: usize = 4096;

/// Relative tolerance of the daughter normalization `Σ_j j β_{i,j} = i`.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// `i^k` for a size index `i ≥ 1`. Integral exponents use repeated
/// multiplication so that integer moments stay exact.
#[inline]
pub fn size_power(i: usize, k: f64) -> f64 {
    let x = i as f64;
    if k == k.trunc() && k.abs() <= 64.0 {
        x.powi(k as i32)
    } else {
        (k * x.ln()).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawCoagulation {
    #[serde(rename = "C_Q")]
    pub c_q: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl PowerLawCoagulation {
    pub fn new(c_q: f64, alpha: f64, beta: f64) -> Result<Self> {
        let k = Self { c_q, alpha, beta };
        k.check()?;
        Ok(k)
    }

    /// Constant kernel `a_{i,j} = 1`.
    pub fn constant() -> Self {
        Self {
            c_q: 0.5,
            alpha: 0.0,
            beta: 0.0,
        }
    }

    /// Multiplicative kernel `a_{i,j} = i j`.
    pub fn multiplicative() -> Self {
        Self {
            c_q: 0.5,
            alpha: 1.0,
            beta: 1.0,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.c_q >= 0.0 && self.c_q.is_finite()) {
            return Err(Error::Config(format!("C_Q must be finite and >= 0, got {}", self.c_q)));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        coag_rate(self, i, j)
    }
}

/// `C_Q (i^α j^β + i^β j^α)`.
#[inline]
pub fn coag_rate(kernel: &PowerLawCoagulation, i: usize, j: usize) -> f64 {
    debug_assert!(i >= 1 && j >= 1);
    let ia = size_power(i, kernel.alpha);
    let ib = size_power(i, kernel.beta);
    let ja = size_power(j, kernel.alpha);
    let jb = size_power(j, kernel.beta);
    kernel.c_q * (ia * jb + ib * ja)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FragmentationRates {
    #[serde(rename = "C_F")]
    pub c_f: f64,
    pub gamma: f64,
}

impl FragmentationRates {
    pub fn none() -> Self {
        Self { c_f: 0.0, gamma: 0.0 }
    }

    #[inline]
    pub fn rate(&self, i: usize) -> f64 {
        frag_rate(self, i)
    }
}

/// `B_1 = 0`, `B_i = C_F i^γ` otherwise.
#[inline]
pub fn frag_rate(rates: &FragmentationRates, i: usize) -> f64 {
    if i <= 1 {
        0.0
    } else {
        rates.c_f * size_power(i, rates.gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawDaughterDistribution {
    pub nu: f64,
}

impl PowerLawDaughterDistribution {
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu > -2.0 && nu.is_finite()) {
            return Err(Error::Config(format!("daughter exponent nu must be > -2, got {nu}")));
        }
        Ok(Self { nu })
    }
}

/// `β_{i,j} = i j^ν / Σ_{k<i} k^{1+ν}` for `i ≥ 2`, `1 ≤ j < i`.
pub fn daughter_fraction(dist: &PowerLawDaughterDistribution, i: usize, j: usize) -> Result<f64> {
    if i < 2 || j == 0 || j >= i {
        return Err(Error::Domain(format!(
            "daughter fraction needs i >= 2 and 1 <= j < i, got (i, j) = ({i}, {j})"
        )));
    }
    let norm: f64 = (1..i).map(|k| size_power(k, 1.0 + dist.nu)).sum();
    Ok(i as f64 * size_power(j, dist.nu) / norm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Coagulation {
    PowerLaw(PowerLawCoagulation),
    /// `values[i-1][j-1] = a_{i,j}`.
    Table {
        values: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Fragmentation {
    PowerLaw(FragmentationRates),
    /// `values[i-1] = B_i`.
    Table {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Daughters {
    PowerLaw(PowerLawDaughterDistribution),
    /// `values[i-2][j-1] = β_{i,j}`; row `i-2` has `i-1` entries.
    Table {
        values: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSet {
    pub coagulation: Coagulation,
    #[serde(default = "no_fragmentation")]
    pub fragmentation: Fragmentation,
    #[serde(default = "uniform_daughters")]
    pub daughters: Daughters,
}

fn no_fragmentation() -> Fragmentation {
    Fragmentation::PowerLaw(FragmentationRates::none())
}

fn uniform_daughters() -> Daughters {
    Daughters::PowerLaw(PowerLawDaughterDistribution { nu: 0.0 })
}

impl KernelSet {
    pub fn power_law(
        coag: PowerLawCoagulation,
        frag: FragmentationRates,
        daughters: PowerLawDaughterDistribution,
    ) -> Self {
        Self {
            coagulation: Coagulation::PowerLaw(coag),
            fragmentation: Fragmentation::PowerLaw(frag),
            daughters: Daughters::PowerLaw(daughters),
        }
    }

    /// Pure coagulation with the given power-law kernel.
    pub fn coagulation_only(coag: PowerLawCoagulation) -> Self {
        Self::power_law(
            coag,
            FragmentationRates::none(),
            PowerLawDaughterDistribution { nu: 0.0 },
        )
    }

    /// All rates identically zero.
    pub fn zero() -> Self {
        Self::coagulation_only(PowerLawCoagulation {
            c_q: 0.0,
            alpha: 0.0,
            beta: 0.0,
        })
    }

    /// Checks parameter ranges and table shapes for truncation `n`. Structural
    /// properties (symmetry, normalization) are left to [`validate`].
    pub fn check_shape(&self, n: usize) -> Result<()> {
        if n < 2 {
            return Err(Error::Config(format!("truncation size must be >= 2, got {n}")));
        }
        let uses_table = !matches!(self.coagulation, Coagulation::PowerLaw(_))
            || !matches!(self.fragmentation, Fragmentation::PowerLaw(_))
            || !matches!(self.daughters, Daughters::PowerLaw(_));
        if uses_table && n > MAX_TABLE_SIZE {
            return Err(Error::Config(format!(
                "explicit kernel tables are limited to n <= {MAX_TABLE_SIZE}, got {n}"
            )));
        }
        match &self.coagulation {
            Coagulation::PowerLaw(k) => k.check()?,
            Coagulation::Table { values } => {
                if values.len() < n || values.iter().take(n).any(|row| row.len() < n) {
                    return Err(Error::Config(format!("coagulation table must be at least {n} x {n}")));
                }
                if values.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("coagulation table".into()));
                }
            }
        }
        match &self.fragmentation {
            Fragmentation::PowerLaw(f) => {
                if !(f.c_f >= 0.0 && f.c_f.is_finite() && f.gamma.is_finite()) {
                    return Err(Error::Config(format!(
                        "fragmentation needs finite C_F >= 0 and finite gamma, got C_F = {}, gamma = {}",
                        f.c_f, f.gamma
                    )));
                }
            }
            Fragmentation::Table { values } => {
                if values.len() < n {
                    return Err(Error::Config(format!(
                        "fragmentation table needs {n} entries, got {}",
                        values.len()
                    )));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("fragmentation table".into()));
                }
            }
        }
        match &self.daughters {
            Daughters::PowerLaw(d) => {
                PowerLawDaughterDistribution::new(d.nu)?;
            }
            Daughters::Table { values } => {
                if values.len() < n - 1 {
                    return Err(Error::Config(format!(
                        "daughter table needs rows for i = 2..={n}, got {} rows",
                        values.len()
                    )));
                }
                for (r, row) in values.iter().take(n - 1).enumerate() {
                    if row.len() != r + 1 {
                        return Err(Error::Config(format!(
                            "daughter table row for i = {} must have {} entries, got {}",
                            r + 2,
                            r + 1,
                            row.len()
                        )));
                    }
                }
                if values.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("daughter table".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum CoagTable {
    Separable {
        c_q: f64,
        pow_alpha: Vec<f64>,
        pow_beta: Vec<f64>,
    },
    Dense(Vec<f64>),
}

#[derive(Debug, Clone)]
enum DaughterTable {
    /// `β_{i,j} = parent_weight[i-1] * pow_nu[j-1]`.
    Separable { parent_weight: Vec<f64>, pow_nu: Vec<f64> },
    /// Row-packed lower triangle, row `i` starting at `(i-1)(i-2)/2`.
    Dense(Vec<f64>),
}

/// A [`KernelSet`] evaluated on sizes `1..=n`.
#[derive(Debug, Clone)]
pub struct TruncatedKernels {
    n: usize,
    coag: CoagTable,
    frag: Vec<f64>,
    daughters: DaughterTable,
}

#[inline]
fn tri_offset(i: usize) -> usize {
    (i - 1) * (i - 2) / 2
}

impl TruncatedKernels {
    pub fn new(ks: &KernelSet, n: usize) -> Result<Self> {
        ks.check_shape(n)?;
        let coag = match &ks.coagulation {
            Coagulation::PowerLaw(k) => CoagTable::Separable {
                c_q: k.c_q,
                pow_alpha: (1..=n).map(|i| size_power(i, k.alpha)).collect(),
                pow_beta: (1..=n).map(|i| size_power(i, k.beta)).collect(),
            },
            Coagulation::Table { values } => {
                let mut dense = Vec::with_capacity(n * n);
                for row in values.iter().take(n) {
                    dense.extend_from_slice(&row[..n]);
                }
                CoagTable::Dense(dense)
            }
        };
        let frag = match &ks.fragmentation {
            Fragmentation::PowerLaw(f) => (1..=n).map(|i| frag_rate(f, i)).collect(),
            Fragmentation::Table { values } => values[..n].to_vec(),
        };
        let daughters = match &ks.daughters {
            Daughters::PowerLaw(d) => {
                let pow_nu: Vec<f64> = (1..=n).map(|j| size_power(j, d.nu)).collect();
                // parent_weight[i-1] = i / Σ_{k<i} k^{1+ν}, renormalized so that the
                // left-to-right sum Σ_{j<i} j β_{i,j} reproduces i.
                let mut parent_weight = vec![0.0; n];
                let mut prefix = 0.0;
                for i in 2..=n {
                    prefix += (i - 1) as f64 * pow_nu[i - 2];
                    let mut w = i as f64 / prefix;
                    let mut s = 0.0;
                    for j in 1..i {
                        s += j as f64 * (pow_nu[j - 1] * w);
                    }
                    w *= i as f64 / s;
                    parent_weight[i - 1] = w;
                }
                DaughterTable::Separable { parent_weight, pow_nu }
            }
            Daughters::Table { values } => {
                let mut packed = Vec::with_capacity(n * (n - 1) / 2);
                for row in values.iter().take(n - 1) {
                    packed.extend_from_slice(row);
                }
                DaughterTable::Dense(packed)
            }
        };
        Ok(Self {
            n,
            coag,
            frag,
            daughters,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn coag(&self, i: usize, j: usize) -> f64 {
        match &self.coag {
            CoagTable::Separable {
                c_q,
                pow_alpha,
                pow_beta,
            } => c_q * (pow_alpha[i - 1] * pow_beta[j - 1] + pow_beta[i - 1] * pow_alpha[j - 1]),
            CoagTable::Dense(v) => v[(i - 1) * self.n + (j - 1)],
        }
    }

    #[inline]
    pub fn frag(&self, i: usize) -> f64 {
        self.frag[i - 1]
    }

    pub fn frag_rates(&self) -> &[f64] {
        &self.frag
    }

    pub fn max_frag_rate(&self) -> f64 {
        self.frag.iter().cloned().fold(0.0, f64::max)
    }

    #[inline]
    pub fn daughter(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i >= 2 && j >= 1 && j < i);
        match &self.daughters {
            DaughterTable::Separable { parent_weight, pow_nu } => parent_weight[i - 1] * pow_nu[j - 1],
            DaughterTable::Dense(v) => v[tri_offset(i) + j - 1],
        }
    }

    /// `(C_Q, i^α, i^β)` when the coagulation kernel is a power law.
    pub fn separable_coag(&self) -> Option<(f64, &[f64], &[f64])> {
        match &self.coag {
            CoagTable::Separable {
                c_q,
                pow_alpha,
                pow_beta,
            } => Some((*c_q, pow_alpha, pow_beta)),
            CoagTable::Dense(_) => None,
        }
    }

    /// `(parent weight, j^ν)` when the daughter distribution is a power law.
    pub fn separable_daughters(&self) -> Option<(&[f64], &[f64])> {
        match &self.daughters {
            DaughterTable::Separable { parent_weight, pow_nu } => Some((parent_weight, pow_nu)),
            DaughterTable::Dense(_) => None,
        }
    }

    pub fn coag_is_zero(&self) -> bool {
        match &self.coag {
            CoagTable::Separable { c_q, .. } => *c_q == 0.0,
            CoagTable::Dense(v) => v.iter().all(|&a| a == 0.0),
        }
    }

    pub fn frag_is_zero(&self) -> bool {
        self.frag.iter().all(|&b| b == 0.0)
    }
}

/// Structural audit of a kernel set on sizes `1..=n`: symmetry and
/// nonnegativity of `a`, `B_1 = 0`, nonnegativity of `B` and `β`, and the
/// daughter normalization.
pub fn validate(ks: &KernelSet, n: usize) -> Result<AuditReport> {
    let kt = TruncatedKernels::new(ks, n)?;
    let mut report = AuditReport::new();

    let (sym, neg_a) = (1..=n)
        .into_par_iter()
        .map(|i| {
            let mut sym = 0.0_f64;
            let mut neg = 0.0_f64;
            for j in 1..=n {
                let a = kt.coag(i, j);
                sym = sym.max((a - kt.coag(j, i)).abs());
                neg = neg.min(a);
            }
            (sym, neg)
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0.max(y.0), x.1.min(y.1)));
    report.push("coagulation_symmetry", json!({ "n": n }), sym, sym == 0.0);
    report.push("coagulation_nonnegative", json!({ "n": n }), neg_a, neg_a >= 0.0);

    let b1 = kt.frag(1);
    report.push("fragmentation_b1_zero", json!({}), b1.abs(), b1 == 0.0);
    let neg_b = kt.frag_rates().iter().cloned().fold(0.0, f64::min);
    report.push("fragmentation_nonnegative", json!({ "n": n }), neg_b, neg_b >= 0.0);

    // worst relative normalization defect and most negative daughter fraction
    let (defect, worst_i, neg_beta) = (2..=n)
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            let mut neg = 0.0_f64;
            for j in 1..i {
                let b = kt.daughter(i, j);
                neg = neg.min(b);
                s += j as f64 * b;
            }
            ((s - i as f64).abs() / i as f64, i, neg)
        })
        .reduce(
            || (0.0, 0, 0.0),
            |x, y| {
                let (d, i) = if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1 && y.0 > 0.0) {
                    (y.0, y.1)
                } else {
                    (x.0, x.1)
                };
                (d, i, x.2.min(y.2))
            },
        );
    report.push(
        "daughter_normalization",
        json!({ "n": n, "worst_i": worst_i, "tolerance": NORMALIZATION_TOL }),
        defect,
        defect <= NORMALIZATION_TOL,
    );
    report.push("daughter_nonnegative", json!({ "n": n }), neg_beta, neg_beta >= 0.0);
    Ok(report)
}

/// Finite-range lower estimates of `K_i^Q = sup_j a_{i,j}/j` and
/// `K_i^F = sup_j B_{i+j} β_{i+j,i}/(i+j)`.
pub fn sup_ratios(ks: &KernelSet, i: usize, n: usize) -> Result<(f64, f64)> {
    if i == 0 || i > n {
        return Err(Error::Domain(format!(
            "sup_ratios needs 1 <= i <= n, got i = {i}, n = {n}"
        )));
    }
    let kt = TruncatedKernels::new(ks, n)?;
    let kq = (1..=n).map(|j| kt.coag(i, j) / j as f64).fold(0.0, f64::max);
    let kf = (1..=n - i)
        .map(|j| kt.frag(i + j) * kt.daughter(i + j, i) / (i + j) as f64)
        .fold(0.0, f64::max);
    Ok((kq, kf))
}

/// Brute-force `C_{Q,l} = max_{i,j ≤ i_max} ((i+j)^l - i^l - j^l) / (i^{l-1} j + i j^{l-1})`.
pub fn superadditivity_constant(l: f64, i_max: usize) -> Result<f64> {
    if !(l > 1.0) || i_max < 2 {
        return Err(Error::Domain(format!(
            "superadditivity constant needs l > 1 and i_max >= 2, got l = {l}, i_max = {i_max}"
        )));
    }
    let pow_l: Vec<f64> = (0..=2 * i_max).map(|k| size_power(k.max(1), l)).collect();
    let pow_lm1: Vec<f64> = (0..=i_max).map(|k| size_power(k.max(1), l - 1.0)).collect();
    let best = (1..=i_max)
        .into_par_iter()
        .map(|i| {
            let mut m = f64::NEG_INFINITY;
            for j in i..=i_max {
                let num = pow_l[i + j] - pow_l[i] - pow_l[j];
                let den = pow_lm1[i] * j as f64 + i as f64 * pow_lm1[j];
                m = m.max(num / den);
            }
            m
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    Ok(best)
}

/// `i^l - Σ_{j<i} j^l β_{i,j}` for the power-law daughter distribution.
pub fn frag_moment_deficit(dist: &PowerLawDaughterDistribution, i: usize, l: f64) -> Result<f64> {
    if i < 2 || !(l > 1.0) {
        return Err(Error::Domain(format!(
            "fragmentation deficit needs i >= 2 and l > 1, got i = {i}, l = {l}"
        )));
    }
    let norm: f64 = (1..i).map(|k| size_power(k, 1.0 + dist.nu)).sum();
    let scale = i as f64 / norm;
    let daughters: f64 = (1..i).map(|j| size_power(j, l) * size_power(j, dist.nu) * scale).sum();
    Ok(size_power(i, l) - daughters)
}

/// `C_{F,l} = min(l - 1, 1)`.
pub fn frag_lower_constant(l: f64) -> f64 {
    (l - 1.0).min(1.0)
}

/// Kernel-level audits: superadditivity over `i_max`, the fragmentation
/// deficit lower bound, and the recorded family constant `min_i deficit / i^l`.
pub fn audit_proof_constants(dist: &PowerLawDaughterDistribution, orders: &[f64], i_max: usize) -> Result<AuditReport> {
    let mut report = AuditReport::new();
    for &l in orders {
        let c_ql = superadditivity_constant(l, i_max)?;
        let pow_l: Vec<f64> = (0..=2 * i_max).map(|k| size_power(k.max(1), l)).collect();
        let pow_lm1: Vec<f64> = (0..=i_max).map(|k| size_power(k.max(1), l - 1.0)).collect();
        let worst = (1..=i_max)
            .into_par_iter()
            .map(|i| {
                let mut m = f64::INFINITY;
                for j in 1..=i_max {
                    let lhs = pow_l[i + j] - pow_l[i] - pow_l[j];
                    let rhs = c_ql * (pow_lm1[i] * j as f64 + i as f64 * pow_lm1[j]) + 1e-12;
                    m = m.min(rhs - lhs);
                }
                m
            })
            .reduce(|| f64::INFINITY, f64::min);
        report.push(
            "superadditivity",
            json!({ "l": l, "i_max": i_max, "C_Ql": c_ql }),
            worst,
            c_ql.is_finite() && worst >= 0.0,
        );

        let c_fl = frag_lower_constant(l);
        let (slack, family) = fragmentation_deficit_scan(dist, l, i_max)?;
        report.push(
            "fragmentation_lower_bound",
            json!({ "l": l, "nu": dist.nu, "i_max": i_max, "C_Fl": c_fl }),
            slack,
            slack >= 0.0,
        );
        report.push(
            "fragmentation_family_constant",
            json!({ "l": l, "nu": dist.nu, "i_max": i_max }),
            family,
            family > 0.0,
        );
    }
    Ok(report)
}

/// Returns `(min_i (deficit_i - C_{F,l} i^{l-1}) / i^{l-1}, min_i deficit_i / i^l)`
/// over `2 ≤ i ≤ i_max`.
pub fn fragmentation_deficit_scan(dist: &PowerLawDaughterDistribution, l: f64, i_max: usize) -> Result<(f64, f64)> {
    let c_fl = frag_lower_constant(l);
    let results: Vec<(f64, f64)> = (2..=i_max)
        .into_par_iter()
        .map(|i| {
            let d = frag_moment_deficit(dist, i, l)?;
            let bound = size_power(i, l - 1.0);
            Ok(((d - c_fl * bound) / bound, d / size_power(i, l)))
        })
        .collect::<Result<_>>()?;
    Ok(results.iter().fold((f64::INFINITY, f64::INFINITY), |acc, r| {
        (acc.0.min(r.0), acc.1.min(r.1))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table_set(coag: Vec<Vec<f64>>, daughters: Vec<Vec<f64>>) -> KernelSet {
        let n = coag.len();
        KernelSet {
            coagulation: Coagulation::Table { values: coag },
            fragmentation: Fragmentation::Table {
                values: (1..=n).map(|i| if i == 1 { 0.0 } else { 1.0 }).collect(),
            },
            daughters: Daughters::Table { values: daughters },
        }
    }

    #[test]
    fn coag_rate_examples() {
        let k = PowerLawCoagulation::constant();
        assert_eq!(coag_rate(&k, 7, 11), 1.0);
        let k = PowerLawCoagulation::multiplicative();
        assert_eq!(coag_rate(&k, 3, 4), 12.0);
        let k = PowerLawCoagulation::new(1.0, 0.5, 0.5).unwrap();
        assert_relative_eq!(coag_rate(&k, 2, 3), 2.0 * 6f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn frag_rate_examples() {
        let r = FragmentationRates { c_f: 1.0, gamma: 2.0 };
        assert_eq!(frag_rate(&r, 1), 0.0);
        assert_eq!(frag_rate(&r, 2), 4.0);
        let r = FragmentationRates { c_f: 0.5, gamma: 3.0 };
        assert_eq!(frag_rate(&r, 4), 32.0);
    }

    #[test]
    fn daughter_fraction_examples() {
        let d0 = PowerLawDaughterDistribution { nu: 0.0 };
        for j in 1..4 {
            assert_relative_eq!(daughter_fraction(&d0, 4, j).unwrap(), 2.0 / 3.0, max_relative = 1e-15);
        }
        let d1 = PowerLawDaughterDistribution { nu: 1.0 };
        assert_relative_eq!(daughter_fraction(&d1, 3, 2).unwrap(), 1.2, max_relative = 1e-15);
        assert_eq!(daughter_fraction(&d0, 2, 1).unwrap(), 2.0);
    }

    #[test]
    fn daughter_fraction_rejects_out_of_range() {
        let d = PowerLawDaughterDistribution { nu: 0.0 };
        assert!(matches!(daughter_fraction(&d, 1, 1), Err(Error::Domain(_))));
        assert!(matches!(daughter_fraction(&d, 4, 4), Err(Error::Domain(_))));
        assert!(matches!(daughter_fraction(&d, 4, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn nu_must_exceed_minus_two() {
        assert!(PowerLawDaughterDistribution::new(-2.0).is_err());
        assert!(PowerLawDaughterDistribution::new(-1.5).is_ok());
    }

    #[test]
    fn validate_power_law_families() {
        let ks = KernelSet::power_law(
            PowerLawCoagulation::new(0.7, 0.3, 0.9).unwrap(),
            FragmentationRates { c_f: 1.0, gamma: 2.0 },
            PowerLawDaughterDistribution { nu: 0.0 },
        );
        let report = validate(&ks, 64).unwrap();
        assert!(report.all_pass(), "{report:?}");
    }

    #[test]
    fn validate_flags_bad_normalization() {
        let coag = vec![vec![1.0; 3]; 3];
        let ks = table_set(coag, vec![vec![2.0], vec![1.0, 0.5]]);
        let report = validate(&ks, 3).unwrap();
        let check = report.find("daughter_normalization").unwrap();
        assert!(!check.pass);
        // |2 - 3| / 3
        assert_relative_eq!(check.margin, 1.0 / 3.0, max_relative = 1e-15);
        assert!(report.find("coagulation_symmetry").unwrap().pass);
    }

    #[test]
    fn validate_flags_asymmetry() {
        let mut coag = vec![vec![1.0; 3]; 3];
        coag[1][2] = 1.0;
        coag[2][1] = 2.0;
        let ks = table_set(coag, vec![vec![2.0], vec![1.5, 0.75]]);
        let report = validate(&ks, 3).unwrap();
        let check = report.find("coagulation_symmetry").unwrap();
        assert!(!check.pass);
        assert_eq!(check.margin, 1.0);
        assert!(report.find("daughter_normalization").unwrap().pass);
    }

    #[test]
    fn validate_flags_fragmenting_monomers() {
        let ks = KernelSet {
            coagulation: Coagulation::PowerLaw(PowerLawCoagulation::constant()),
            fragmentation: Fragmentation::Table {
                values: vec![0.5, 1.0, 1.0],
            },
            daughters: Daughters::PowerLaw(PowerLawDaughterDistribution { nu: 0.0 }),
        };
        let report = validate(&ks, 3).unwrap();
        assert!(!report.find("fragmentation_b1_zero").unwrap().pass);
    }

    #[test]
    fn table_shape_errors() {
        let ks = table_set(vec![vec![1.0; 2]; 2], vec![vec![2.0]]);
        assert!(matches!(TruncatedKernels::new(&ks, 3), Err(Error::Config(_))));
        let big = KernelSet {
            coagulation: Coagulation::PowerLaw(PowerLawCoagulation::constant()),
            fragmentation: Fragmentation::Table {
                values: vec![0.0; MAX_TABLE_SIZE + 1],
            },
            daughters: Daughters::PowerLaw(PowerLawDaughterDistribution { nu: 0.0 }),
        };
        assert!(big.check_shape(MAX_TABLE_SIZE + 1).is_err());
    }

    #[test]
    fn sup_ratio_examples() {
        let ks = KernelSet::coagulation_only(PowerLawCoagulation::constant());
        assert_eq!(sup_ratios(&ks, 1, 100).unwrap().0, 1.0);
        let ks = KernelSet::coagulation_only(PowerLawCoagulation::multiplicative());
        assert_eq!(sup_ratios(&ks, 2, 37).unwrap().0, 2.0);
    }

    #[test]
    fn sup_ratio_fragmentation_enumeration() {
        // B_i = i^2, ν = 0, i = 1, n = 4: terms j = 1, 2, 3 are
        // B_2 β_{2,1} / 2 = 4 * 2 / 2 = 4,
        // B_3 β_{3,1} / 3 = 9 * 1 / 3 = 3,
        // B_4 β_{4,1} / 4 = 16 * (2/3) / 4 = 8/3.
        let ks = KernelSet::power_law(
            PowerLawCoagulation::constant(),
            FragmentationRates { c_f: 1.0, gamma: 2.0 },
            PowerLawDaughterDistribution { nu: 0.0 },
        );
        let (_, kf) = sup_ratios(&ks, 1, 4).unwrap();
        assert_relative_eq!(kf, 4.0, max_relative = 1e-14);
        // empty range
        assert_eq!(sup_ratios(&ks, 4, 4).unwrap().1, 0.0);
    }

    #[test]
    fn superadditivity_integer_orders_are_exact() {
        for i_max in [2, 17, 300] {
            assert_eq!(superadditivity_constant(2.0, i_max).unwrap(), 1.0);
            assert_eq!(superadditivity_constant(3.0, i_max).unwrap(), 3.0);
        }
        assert!(superadditivity_constant(1.0, 10).is_err());
        assert!(superadditivity_constant(2.0, 1).is_err());
    }

    #[test]
    fn superadditivity_fractional_order_matches_scan() {
        // independent scan over the full square, without tables
        let l = 1.5;
        let i_max = 200;
        let mut best = 0.0_f64;
        for i in 1..=i_max {
            for j in 1..=i_max {
                let (x, y) = (i as f64, j as f64);
                let r = ((x + y).powf(l) - x.powf(l) - y.powf(l)) / (x.powf(l - 1.0) * y + x * y.powf(l - 1.0));
                best = best.max(r);
            }
        }
        let c = superadditivity_constant(l, i_max).unwrap();
        assert_relative_eq!(c, best, max_relative = 1e-13);
        assert!(c > 0.0 && c <= 1.0);
    }

    #[test]
    fn deficit_examples() {
        let d0 = PowerLawDaughterDistribution { nu: 0.0 };
        assert_relative_eq!(frag_moment_deficit(&d0, 2, 2.0).unwrap(), 2.0, max_relative = 1e-15);
        assert_relative_eq!(
            frag_moment_deficit(&d0, 4, 2.0).unwrap(),
            20.0 / 3.0,
            max_relative = 1e-14
        );
        let d1 = PowerLawDaughterDistribution { nu: 1.0 };
        assert_relative_eq!(frag_moment_deficit(&d1, 3, 2.0).unwrap(), 3.6, max_relative = 1e-14);
    }

    #[test]
    fn truncated_daughters_are_normalized() {
        for nu in [-1.0, 0.0, 1.0, 2.0] {
            let ks = KernelSet::power_law(
                PowerLawCoagulation::constant(),
                FragmentationRates::none(),
                PowerLawDaughterDistribution { nu },
            );
            let kt = TruncatedKernels::new(&ks, 300).unwrap();
            for i in 2..=300 {
                let s: f64 = (1..i).map(|j| j as f64 * kt.daughter(i, j)).sum();
                assert!((s - i as f64).abs() <= 1e-12 * i as f64, "nu = {nu}, i = {i}");
            }
        }
    }

    #[test]
    fn kernel_set_json_round_trip() {
        let text = r#"{
            "coagulation": {"type": "power_law", "C_Q": 0.5, "alpha": 1, "beta": 1},
            "fragmentation": {"type": "power_law", "C_F": 1, "gamma": 3},
            "daughters": {"type": "table", "values": [[2.0], [1.5, 0.75]]}
        }"#;
        let ks: KernelSet = serde_json::from_str(text).unwrap();
        assert_eq!(
            ks.coagulation,
            Coagulation::PowerLaw(PowerLawCoagulation::multiplicative())
        );
        let back: KernelSet = serde_json::from_str(&serde_json::to_string(&ks).unwrap()).unwrap();
        assert_eq!(back, ks);
    }
}

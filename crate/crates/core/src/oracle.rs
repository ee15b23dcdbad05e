//! Reference solutions that share no code with the solver: a Cash–Karp
//! 5(4) integrator over a brute-force right-hand side assembled straight
//! from the kernel formulas, and the constant-kernel closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Coagulation, Daughters, Fragmentation, KernelSet};
use crate::state::TruncationMode;

/// Concentrations of a spatially homogeneous system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousState {
    pub time: f64,
    pub c: Vec<f64>,
}

impl HomogeneousState {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.is_empty() || c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain(
                "homogeneous state needs finite nonnegative concentrations".into(),
            ));
        }
        Ok(Self { time: 0.0, c })
    }

    pub fn monodisperse(n: usize, mass: f64) -> Self {
        let mut c = vec![0.0; n];
        c[0] = mass;
        Self { time: 0.0, c }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn mass(&self) -> f64 {
        self.c.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum()
    }
}

/// Dense coefficient tables evaluated from the raw formulas.
struct Tables {
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    beta: Vec<f64>,
}

fn pow(i: usize, k: f64) -> f64 {
    (i as f64).powf(k)
}

impl Tables {
    fn new(ks: &KernelSet, n: usize) -> Result<Self> {
        ks.check_shape(n)?;
        let mut a = vec![0.0; n * n];
        for i in 1..=n {
            for j in 1..=n {
                a[(i - 1) * n + j - 1] = match &ks.coagulation {
                    Coagulation::PowerLaw(p) => {
                        p.c_q * (pow(i, p.alpha) * pow(j, p.beta) + pow(i, p.beta) * pow(j, p.alpha))
                    }
                    Coagulation::Table { values } => values[i - 1][j - 1],
                };
            }
        }
        let b = (1..=n)
            .map(|i| match &ks.fragmentation {
                Fragmentation::PowerLaw(f) if i >= 2 => f.c_f * pow(i, f.gamma),
                Fragmentation::PowerLaw(_) => 0.0,
                Fragmentation::Table { values } => values[i - 1],
            })
            .collect();
        let mut beta = vec![0.0; n * n];
        for i in 2..=n {
            let norm = match &ks.daughters {
                Daughters::PowerLaw(d) => (1..i).map(|k| pow(k, 1.0 + d.nu)).sum::<f64>(),
                Daughters::Table { .. } => 1.0,
            };
            for j in 1..i {
                beta[(i - 1) * n + j - 1] = match &ks.daughters {
                    Daughters::PowerLaw(d) => i as f64 * pow(j, d.nu) / norm,
                    Daughters::Table { values } => values[i - 2][j - 1],
                };
            }
        }
        Ok(Self { n, a, b, beta })
    }

    fn a(&self, i: usize, j: usize) -> f64 {
        self.a[(i - 1) * self.n + j - 1]
    }

    fn beta(&self, i: usize, j: usize) -> f64 {
        self.beta[(i - 1) * self.n + j - 1]
    }

    fn rhs(&self, mode: TruncationMode, c: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 1..=n {
            let mut gain = 0.0;
            for j in 1..i {
                gain += self.a(i - j, j) * c[i - j - 1] * c[j - 1];
            }
            let reach = match mode {
                TruncationMode::Conservative => n - i,
                TruncationMode::FullLoss => n,
            };
            let mut loss = 0.0;
            for j in 1..=reach {
                loss += self.a(i, j) * c[j - 1];
            }
            let mut frag = 0.0;
            for j in 1..=n - i {
                frag += self.b[i + j - 1] * self.beta(i + j, i) * c[i + j - 1];
            }
            out[i - 1] = 0.5 * gain - c[i - 1] * loss + frag - self.b[i - 1] * c[i - 1];
        }
    }
}

/// States at the requested output times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub steps: usize,
}

// Cash–Karp 5(4).
const CK_A: [[f64; 5]; 6] = [
    [0.0; 5],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0],
    [3.0 / 10.0, -9.0 / 10.0, 6.0 / 5.0, 0.0, 0.0],
    [-11.0 / 54.0, 5.0 / 2.0, -70.0 / 27.0, 35.0 / 27.0, 0.0],
    [
        1631.0 / 55296.0,
        175.0 / 512.0,
        575.0 / 13824.0,
        44275.0 / 110592.0,
        253.0 / 4096.0,
    ],
];
const CK_B5: [f64; 6] = [37.0 / 378.0, 0.0, 250.0 / 621.0, 125.0 / 594.0, 0.0, 512.0 / 1771.0];
const CK_B4: [f64; 6] = [
    2825.0 / 27648.0,
    0.0,
    18575.0 / 48384.0,
    13525.0 / 55296.0,
    277.0 / 14336.0,
    1.0 / 4.0,
];

/// Integrates the homogeneous truncated system and reports the state at each
/// of `times` (sorted, `≥ initial.time`). Relative tolerance `tol`, absolute
/// tolerance `1e-3·tol`.
pub fn ode_reference(
    ks: &KernelSet,
    mode: TruncationMode,
    initial: &HomogeneousState,
    times: &[f64],
    tol: f64,
) -> Result<Trajectory> {
    if !(tol >= 1e-12) {
        return Err(Error::Domain(format!("oracle tolerance must be >= 1e-12, got {tol}")));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < initial.time) {
        return Err(Error::Domain(
            "output times must be sorted and not precede the initial time".into(),
        ));
    }
    let n = initial.n();
    let tables = Tables::new(ks, n)?;
    let t_end = times.last().copied().unwrap_or(initial.time);
    let floor = 1e-14 * t_end.abs().max(1e-300);
    let atol = 1e-3 * tol;

    let mut y = initial.c.clone();
    let mut t = initial.time;
    let mut h = 1e-3f64.min((t_end - t).max(f64::MIN_POSITIVE));
    let mut k = vec![vec![0.0; n]; 6];
    let mut tmp = vec![0.0; n];
    let mut y5 = vec![0.0; n];
    let mut out = Trajectory {
        times: times.to_vec(),
        states: Vec::with_capacity(times.len()),
        steps: 0,
    };
    for &target in times {
        while target - t > 1e-14 * target.abs().max(1.0) {
            let last = t + h >= target;
            let step = if last { target - t } else { h };
            tables.rhs(mode, &y, &mut k[0]);
            for s in 1..6 {
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..s {
                        acc += CK_A[s][j] * k[j][i];
                    }
                    tmp[i] = y[i] + step * acc;
                }
                let (_, rest) = k.split_at_mut(s);
                tables.rhs(mode, &tmp, &mut rest[0]);
            }
            let mut err = 0.0f64;
            for i in 0..n {
                let mut hi = 0.0;
                let mut lo = 0.0;
                for s in 0..6 {
                    hi += CK_B5[s] * k[s][i];
                    lo += CK_B4[s] * k[s][i];
                }
                y5[i] = y[i] + step * hi;
                let scale = atol + tol * y[i].abs().max(y5[i].abs());
                err = err.max((step * (hi - lo)).abs() / scale);
            }
            if !err.is_finite() {
                err = 1e10;
            }
            if err <= 1.0 {
                std::mem::swap(&mut y, &mut y5);
                t = if last { target } else { t + step };
                out.steps += 1;
                let grow = if err == 0.0 {
                    4.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.25, 4.0)
                };
                if !last {
                    h = step * grow;
                }
            } else {
                h = step * (0.9 * err.powf(-0.25)).clamp(0.1, 0.9);
                if h < floor {
                    return Err(Error::Stiffness {
                        time: t,
                        step: h,
                        floor,
                        cell: 0,
                    });
                }
            }
        }
        out.states.push(y.clone());
    }
    Ok(out)
}

/// `c_i(t) = (t/2)^{i-1} / (1 + t/2)^{i+1}`: monodisperse unit data under
/// `a_{i,j} ≡ 1`.
pub fn constant_kernel_exact(i: usize, t: f64) -> Result<f64> {
    if i == 0 || !(t >= 0.0) {
        return Err(Error::Domain(format!(
            "closed form needs i >= 1 and t >= 0, got i = {i}, t = {t}"
        )));
    }
    let s = 0.5 * t;
    Ok((s / (1.0 + s)).powi(i as i32 - 1) / ((1.0 + s) * (1.0 + s)))
}

/// Naive double-loop evaluation of the truncated weak form
/// `½ Σ_{i+j≤n} a c_i c_j (φ_{i+j} − φ_i − φ_j) − Σ_{i≥2} B_i c_i (φ_i − Σ_{j<i} β_{i,j} φ_j)`.
pub fn brute_force_weak_rate(state: &HomogeneousState, ks: &KernelSet, phi: &[f64]) -> Result<f64> {
    let n = state.n();
    if phi.len() != n {
        return Err(Error::Domain(format!("phi has length {}, expected {n}", phi.len())));
    }
    let tables = Tables::new(ks, n)?;
    let c = &state.c;
    let mut coag = 0.0;
    for i in 1..=n {
        for j in 1..=n {
            if i + j <= n {
                coag += tables.a(i, j) * c[i - 1] * c[j - 1] * (phi[i + j - 1] - phi[i - 1] - phi[j - 1]);
            }
        }
    }
    let mut frag = 0.0;
    for i in 2..=n {
        let mut daughters = 0.0;
        for j in 1..i {
            daughters += tables.beta(i, j) * phi[j - 1];
        }
        frag += tables.b[i - 1] * c[i - 1] * (phi[i - 1] - daughters);
    }
    Ok(0.5 * coag - frag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{FragmentationRates, PowerLawCoagulation, PowerLawDaughterDistribution};

    #[test]
    fn closed_form_examples() {
        assert_eq!(constant_kernel_exact(1, 0.0).unwrap(), 1.0);
        assert_eq!(constant_kernel_exact(1, 2.0).unwrap(), 0.25);
        assert_eq!(constant_kernel_exact(2, 2.0).unwrap(), 0.125);
        for t in [0.5, 1.0, 3.0] {
            let mass: f64 = (1..4000).map(|i| i as f64 * constant_kernel_exact(i, t).unwrap()).sum();
            assert!((mass - 1.0).abs() < 1e-13, "t = {t}: {mass}");
        }
        assert!(constant_kernel_exact(0, 1.0).is_err());
    }

    #[test]
    fn zero_kernels_keep_state() {
        let s = HomogeneousState::new(vec![0.2, 0.1, 0.3]).unwrap();
        let tr = ode_reference(&KernelSet::zero(), TruncationMode::Conservative, &s, &[0.5, 1.0], 1e-10).unwrap();
        for st in &tr.states {
            assert_eq!(st, &s.c);
        }
    }

    #[test]
    fn conservative_mass_is_invariant() {
        let ks = KernelSet::power_law(
            PowerLawCoagulation::new(0.5, 0.5, 0.5).unwrap(),
            FragmentationRates { c_f: 0.3, gamma: 1.5 },
            PowerLawDaughterDistribution::new(1.0).unwrap(),
        );
        let s = HomogeneousState::monodisperse(40, 1.0);
        let tr = ode_reference(&ks, TruncationMode::Conservative, &s, &[1.0, 2.0], 1e-10).unwrap();
        for st in &tr.states {
            let m: f64 = st.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum();
            assert!((m - 1.0).abs() < 1e-12, "{m}");
        }
    }

    #[test]
    fn matches_closed_form() {
        let ks = KernelSet::coagulation_only(PowerLawCoagulation::constant());
        let s = HomogeneousState::monodisperse(128, 1.0);
        let tr = ode_reference(&ks, TruncationMode::Conservative, &s, &[0.5, 1.0, 2.0], 1e-10).unwrap();
        for (t, st) in tr.times.iter().zip(&tr.states) {
            for i in 1..=20 {
                assert!((st[i - 1] - constant_kernel_exact(i, *t).unwrap()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn weak_rate_examples() {
        let ks = KernelSet::coagulation_only(PowerLawCoagulation::constant());
        let s = HomogeneousState::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(brute_force_weak_rate(&s, &ks, &[1.0, 4.0]).unwrap(), 1.0);
        assert_eq!(brute_force_weak_rate(&s, &ks, &[0.0, 0.0]).unwrap(), 0.0);
        assert!(brute_force_weak_rate(&s, &ks, &[1.0]).is_err());
    }
}

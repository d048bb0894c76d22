//! Hybrid analog/digital factorization `w* ≈ V_A v_D` of a full-digital precoder.
//!
//! `V_A` is `M x M_RF` with discrete unit-modulus entries, `v_D` a complex
//! vector of length `M_RF`, and the product obeys the BS power budget.

use crate::codebook::HybridCodeword;
use crate::projections::{cmdpp_index, DiscretePhaseVector};
use crate::solvers::{ipdd_quadratic_discrete, IpddConfig, QuadraticForm};
use crate::{CMatrix, CVector, Complex64, Error, Result};

/// Singular values below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

/// Result of the digital step.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalFit {
    pub v_d: CVector,
    /// Power multiplier; zero when the unconstrained fit is feasible.
    pub lambda_v: f64,
    /// `V_A` lacked full column rank and the minimum-norm fit was used.
    pub rank_deficient: bool,
}

/// `v_D = (V_A^H V_A)^{-1} V_A^H w* / (1 + lambda_v)` with
/// `lambda_v = max(0, sqrt(||P_A w*||^2 / P) - 1)`.
pub fn solve_digital(v_a: &CMatrix, w_star: &CVector, p_max: f64) -> Result<DigitalFit> {
    if v_a.nrows() != w_star.len() {
        return Err(Error::DimensionMismatch {
            what: "analog precoder rows",
            expected: w_star.len(),
            actual: v_a.nrows(),
        });
    }
    if !(p_max > 0.0) {
        return Err(Error::invalid("p_max must be positive"));
    }
    let svd = v_a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = RANK_TOL * smax;
    let rank_deficient = svd.singular_values.iter().any(|&s| s <= tol);
    let ls = svd.solve(w_star, tol).map_err(|e| Error::invalid(format!("digital least squares: {e}")))?;
    // w*^H V (V^H V)^{-1} V^H w* is the power of the projection V v_ls.
    let proj_power = (v_a * &ls).norm_squared();
    let lambda_v = ((proj_power / p_max).sqrt() - 1.0).max(0.0);
    Ok(DigitalFit { v_d: ls.unscale(1.0 + lambda_v), lambda_v, rank_deficient })
}

/// Discrete `V_A` minimizing `||V_A v_D - w*||^2` by IPDD on `vec(V_A)`,
/// started from `init` (column-major phases of an `M x M_RF` matrix).
pub fn solve_analog(
    v_d: &CVector,
    w_star: &CVector,
    ipdd_cfg: &IpddConfig,
    init: &DiscretePhaseVector,
) -> Result<DiscretePhaseVector> {
    let (m, m_rf) = (w_star.len(), v_d.len());
    if init.len() != m * m_rf {
        return Err(Error::DimensionMismatch { what: "analog phase count", expected: m * m_rf, actual: init.len() });
    }
    if v_d.iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::invalid("analog step needs a nonzero digital precoder"));
    }
    // (v_D^T ⊗ I) vec(V_A) = V_A v_D, so Z = conj(v_D) ⊗ I in the ||Z^H x - t||^2 form.
    let z = CMatrix::from_fn(m * m_rf, m, |r, c| if r % m == c { v_d[r / m].conj() } else { Complex64::new(0.0, 0.0) });
    let q = QuadraticForm::least_squares(z, w_star)?;
    Ok(ipdd_quadratic_discrete(&q, ipdd_cfg, init)?.phases)
}

/// Analog matrix from column-major phases.
pub fn analog_matrix(phases: &DiscretePhaseVector, m: usize) -> Result<CMatrix> {
    if m == 0 || !phases.len().is_multiple_of(m) {
        return Err(Error::invalid("analog phase count is not a multiple of the antenna count"));
    }
    Ok(CMatrix::from_column_slice(m, phases.len() / m, phases.values().as_slice()))
}

/// Column `j` is the discrete projection of `w*` modulated by the `j`-th DFT
/// sequence. The replicated matrix `[w*, ..., w*]` has a single nonzero
/// singular direction; the modulation supplies the remaining ones.
pub fn initial_analog(w_star: &CVector, m_rf: usize, bits: u32) -> Result<DiscretePhaseVector> {
    let m = w_star.len();
    let mut idx = Vec::with_capacity(m * m_rf);
    for j in 0..m_rf {
        for n in 0..m {
            let t = 2.0 * std::f64::consts::PI * (j * n) as f64 / m as f64;
            let z = if w_star[n].norm_sqr() > 0.0 { w_star[n] } else { Complex64::new(1.0, 0.0) };
            idx.push(cmdpp_index(z * Complex64::from_polar(1.0, t), bits));
        }
    }
    DiscretePhaseVector::new(bits, idx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridPrecoder {
    /// `V_A`, `M x M_RF`.
    pub analog: CMatrix,
    /// Column-major phases of `V_A`.
    pub analog_phases: DiscretePhaseVector,
    /// `v_D`.
    pub digital: CVector,
    /// `||V_A v_D - w*||^2`.
    pub residual: f64,
    /// Residual after initialization and after every round.
    pub residual_trace: Vec<f64>,
    pub rejected_analog_steps: usize,
}

impl HybridPrecoder {
    pub fn precoder(&self) -> CVector {
        &self.analog * &self.digital
    }

    pub fn to_codeword(&self) -> HybridCodeword {
        HybridCodeword {
            rf_chains: self.analog.ncols(),
            analog: self.analog_phases.clone(),
            digital: self.digital.iter().copied().collect(),
        }
    }
}

fn residual(v_a: &CMatrix, v_d: &CVector, w_star: &CVector) -> f64 {
    (v_a * v_d - w_star).norm_squared()
}

/// Scales `v_d` down so `||V_A v_D||^2 <= P`.
fn clamp_power(v_a: &CMatrix, v_d: CVector, p_max: f64) -> CVector {
    let p = (v_a * &v_d).norm_squared();
    if p > p_max {
        v_d * Complex64::new((p_max / p).sqrt(), 0.0)
    } else {
        v_d
    }
}

/// Alternates analog and digital steps from [`initial_analog`].
///
/// An analog update is kept only if, with `v_D` rescaled to the power budget,
/// it does not raise the residual; the digital step is exact, so the residual
/// trace never increases.
pub fn hybrid_factorize(
    w_star: &CVector,
    m_rf: usize,
    bits: u32,
    ipdd_cfg: &IpddConfig,
    p_max: f64,
    rounds: usize,
) -> Result<HybridPrecoder> {
    let m = w_star.len();
    if m_rf == 0 || m_rf > m {
        return Err(Error::invalid(format!("hybrid.rf_chains must lie in 1..={m}")));
    }
    let cfg = IpddConfig { bits, ..*ipdd_cfg };
    cfg.validate()?;
    let mut phases = initial_analog(w_star, m_rf, bits)?;
    let mut v_a = analog_matrix(&phases, m)?;
    let mut v_d = solve_digital(&v_a, w_star, p_max)?.v_d;
    let mut res = residual(&v_a, &v_d, w_star);
    let mut trace = vec![res];
    let mut rejected = 0;

    for _ in 0..rounds {
        if v_d.iter().all(|z| z.norm_sqr() == 0.0) {
            break;
        }
        let cand_phases = solve_analog(&v_d, w_star, &cfg, &phases)?;
        let cand_a = analog_matrix(&cand_phases, m)?;
        let cand_d = clamp_power(&cand_a, v_d.clone(), p_max);
        let cand_res = residual(&cand_a, &cand_d, w_star);
        let moved = cand_phases != phases;
        if cand_res <= res {
            (phases, v_a, v_d, res) = (cand_phases, cand_a, cand_d, cand_res);
        } else {
            rejected += 1;
        }
        let fit = clamp_power(&v_a, solve_digital(&v_a, w_star, p_max)?.v_d, p_max);
        let fit_res = residual(&v_a, &fit, w_star);
        if fit_res <= res {
            (v_d, res) = (fit, fit_res);
        }
        trace.push(res);
        if !moved {
            break;
        }
    }
    Ok(HybridPrecoder {
        analog: v_a,
        analog_phases: phases,
        digital: v_d,
        residual: res,
        residual_trace: trace,
        rejected_analog_steps: rejected,
    })
}

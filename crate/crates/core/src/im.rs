//! Interference management by desired-gain-matrix approximation.
//!
//! The target `Q ⊙ Q^nu` is a `K x K` matrix whose entry `(i, k)` is the
//! amplitude user `i` should receive from stream `k`: large on the diagonal,
//! small off it. Precoders `W` and RIS phases `phi` are fitted to it by
//! alternating least squares, and the parameters that shape `Q` are adapted by
//! numerical gradient ascent on Jain's fairness index.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{achievable_rates, matched_filter_start, received_amplitudes, StartPoint};
use crate::projections::{cmdpp_project, phase_align, DiscretePhaseVector};
use crate::solvers::{ipdd_quadratic_discrete, ridge_with_power, IpddConfig, QuadraticForm};
use crate::{CMatrix, CVector, Complex64, Error, Result};

/// `|vec(H_i)^H vec(H_k)| / (||H_i||_F ||H_k||_F)`.
pub fn channel_correlation(h_i: &CMatrix, h_k: &CMatrix) -> Result<f64> {
    if h_i.shape() != h_k.shape() {
        return Err(Error::invalid("channel correlation needs equal shapes"));
    }
    let (ni, nk) = (h_i.norm(), h_k.norm());
    if ni == 0.0 || nk == 0.0 {
        return Err(Error::invalid("channel correlation of a zero channel"));
    }
    let inner: Complex64 = h_i.iter().zip(h_k.iter()).map(|(a, b)| a.conj() * b).sum();
    Ok((inner.norm() / (ni * nk)).min(1.0))
}

/// Parameters `chi = (alpha, beta, gamma1, gamma2, gamma3)` plus the
/// adaptation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub eps_h: f64,
    /// Gradient ascent step `eta_chi`.
    pub step: f64,
    /// Forward-difference perturbation, relative for alpha and beta,
    /// absolute for the exponents.
    pub perturb: f64,
}

impl FairnessParams {
    /// `chi = (sqrt(P)/K, 0.01, 0.5, 1, 1)`, step 0.1, perturbation 1e-2.
    pub fn initial(p_max: f64, k_users: usize) -> Self {
        Self {
            alpha: p_max.sqrt() / k_users as f64,
            beta: 0.01,
            gamma1: 0.5,
            gamma2: 1.0,
            gamma3: 1.0,
            eps_h: 1e-12,
            step: 0.1,
            perturb: 1e-2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let chi = self.chi();
        if chi.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("im.params must be finite"));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::invalid("im.params.alpha and im.params.beta must be non-negative"));
        }
        if !(self.eps_h > 0.0) {
            return Err(Error::invalid("im.params.eps_h must be positive"));
        }
        if !(self.step >= 0.0) || !self.step.is_finite() {
            return Err(Error::invalid("im.params.step must be non-negative"));
        }
        if !(self.perturb > 0.0) {
            return Err(Error::invalid("im.params.perturb must be positive"));
        }
        Ok(())
    }

    pub fn chi(&self) -> [f64; 5] {
        [self.alpha, self.beta, self.gamma1, self.gamma2, self.gamma3]
    }

    fn with_chi(mut self, chi: [f64; 5]) -> Self {
        [self.alpha, self.beta, self.gamma1, self.gamma2, self.gamma3] = chi;
        self.alpha = self.alpha.max(0.0);
        self.beta = self.beta.max(0.0);
        self
    }

    fn delta(&self, p: usize) -> f64 {
        match p {
            0 | 1 if self.chi()[p] > 0.0 => self.perturb * self.chi()[p],
            _ => self.perturb,
        }
    }
}

/// Desired gain amplitudes `Q` and phases `Q^nu`; row = receiving user, column = stream.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    pub q_amp: DMatrix<f64>,
    pub q_phase: CMatrix,
}

impl GainMatrix {
    pub fn k(&self) -> usize {
        self.q_amp.nrows()
    }

    /// `Q ⊙ Q^nu`.
    pub fn target(&self) -> CMatrix {
        CMatrix::from_fn(self.k(), self.k(), |i, k| self.q_phase[(i, k)] * self.q_amp[(i, k)])
    }

    /// `q~ = vec(Q ⊙ Q^nu)`, column-major.
    pub fn q_tilde(&self) -> CVector {
        CVector::from_column_slice(self.target().as_slice())
    }
}

/// Channel-quality-compensated diagonal and correlation-aware off-diagonal targets.
pub fn build_gain_matrix(channels: &[CMatrix], params: &FairnessParams) -> Result<GainMatrix> {
    if channels.is_empty() {
        return Err(Error::invalid("at least one user channel is required"));
    }
    params.validate()?;
    let k = channels.len();
    let norms: Vec<f64> = channels.iter().map(|h| h.norm()).collect();
    if norms.contains(&0.0) {
        return Err(Error::invalid("user channel with zero norm"));
    }
    let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let mut q = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            q[(i, j)] = if i == j {
                params.alpha * (min / norms[i]).powf(params.gamma1)
            } else {
                let rho = channel_correlation(&channels[i], &channels[j])?;
                params.beta
                    * (norms[j] / (norms[i] + params.eps_h)).powf(params.gamma2)
                    * (1.0 + rho).powf(-params.gamma3)
            };
        }
    }
    Ok(GainMatrix { q_amp: q, q_phase: CMatrix::from_element(k, k, Complex64::new(1.0, 0.0)) })
}

/// `Xi` (`N x K^2`) with column `k K + i` equal to `H_i w_k`.
pub fn stack_xi(channels: &[CMatrix], w: &CMatrix) -> Result<CMatrix> {
    let k = channels.len();
    let n = channels.first().map_or(0, |h| h.nrows());
    if w.ncols() != k {
        return Err(Error::DimensionMismatch { what: "precoder columns", expected: k, actual: w.ncols() });
    }
    let mut xi = CMatrix::zeros(n, k * k);
    for (i, h) in channels.iter().enumerate() {
        if h.ncols() != w.nrows() {
            return Err(Error::DimensionMismatch { what: "precoder rows", expected: h.ncols(), actual: w.nrows() });
        }
        let hw = h * w;
        for s in 0..k {
            xi.set_column(s * k + i, &hw.column(s));
        }
    }
    Ok(xi)
}

/// `F` (`K x M`) with row `i` equal to `phi^H H_i`.
pub fn stream_matrix(channels: &[CMatrix], phi: &CVector) -> CMatrix {
    crate::benchmarks::effective_channels(channels, phi).adjoint()
}

/// `min ||(I_K ⊗ F) vec(W) - q~||^2` s.t. `||W||_F^2 <= P`: `K` ridge systems
/// sharing one multiplier.
pub fn solve_precoders(f: &CMatrix, gain: &GainMatrix, p_max: f64) -> Result<CMatrix> {
    if f.nrows() != gain.k() {
        return Err(Error::DimensionMismatch { what: "stream matrix rows", expected: gain.k(), actual: f.nrows() });
    }
    let fh = f.adjoint();
    Ok(ridge_with_power(&(&fh * f), &(&fh * gain.target()), p_max)?.w)
}

/// Closed-form phases: element `n` is the discrete point nearest to
/// `sum_i Xi[n, i] conj(q~_i)`.
pub fn solve_phase_cfm(xi: &CMatrix, q_tilde: &CVector, bits: u32) -> Result<DiscretePhaseVector> {
    if xi.ncols() != q_tilde.len() {
        return Err(Error::DimensionMismatch {
            what: "CFM target length",
            expected: xi.ncols(),
            actual: q_tilde.len(),
        });
    }
    let sums = xi * q_tilde.conjugate();
    DiscretePhaseVector::new(bits, sums.iter().map(|&s| cmdpp_project(s, bits).0).collect())
}

/// `(sum R)^2 / (K sum R^2)`.
pub fn jain_index(rates: &[f64]) -> Result<f64> {
    if rates.is_empty() {
        return Err(Error::invalid("Jain index of an empty rate vector"));
    }
    if rates.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
        return Err(Error::invalid("rates must be finite and non-negative"));
    }
    let sum: f64 = rates.iter().sum();
    let sq: f64 = rates.iter().map(|r| r * r).sum();
    if sq == 0.0 {
        return Err(Error::AllZeroRates);
    }
    let k = rates.len() as f64;
    Ok((sum * sum / (k * sq)).clamp(1.0 / k, 1.0))
}

/// How the IM phase subproblem is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseMethod {
    Ipdd,
    Cfm,
}

impl std::str::FromStr for PhaseMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ipdd" => Ok(Self::Ipdd),
            "cfm" => Ok(Self::Cfm),
            other => Err(Error::invalid(format!("unknown phase method {other:?} (expected ipdd or cfm)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImConfig {
    pub phase_method: PhaseMethod,
    /// Gradient ascent rounds.
    pub iters: usize,
    /// Alternating rounds per gain matrix.
    pub ao_rounds: usize,
    /// Alternating rounds for each gradient probe.
    pub probe_rounds: usize,
}

impl Default for ImConfig {
    fn default() -> Self {
        Self { phase_method: PhaseMethod::Ipdd, iters: 10, ao_rounds: 20, probe_rounds: 5 }
    }
}

/// Precoders, phases and the rates they give.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    pub w_matrix: CMatrix,
    pub ris_phases: DiscretePhaseVector,
    pub rates: Vec<f64>,
    pub sum_rate: f64,
    pub jain: f64,
}

impl PrecoderSet {
    pub fn evaluate(channels: &[CMatrix], w: CMatrix, phi: DiscretePhaseVector, sigma2: &[f64]) -> Result<Self> {
        let rates = achievable_rates(channels, &w, &phi.values(), sigma2)?;
        let jain = jain_index(&rates)?;
        Ok(Self { sum_rate: rates.iter().sum(), w_matrix: w, ris_phases: phi, rates, jain })
    }
}

/// One gradient-ascent round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImTraceRow {
    pub iteration: usize,
    pub chi: [f64; 5],
    /// `None` when every rate is zero and the index is undefined.
    pub jain: Option<f64>,
    pub sum_rate: f64,
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImOutcome {
    /// Iterate with the highest Jain index (earliest on ties). Rounds whose
    /// rates are all zero are skipped; if every round is, the run fails.
    pub best: PrecoderSet,
    pub best_params: FairnessParams,
    pub trace: Vec<ImTraceRow>,
    /// Approximation objective after each alternating round of the first gain matrix.
    pub first_ao_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
struct ImState {
    w: CMatrix,
    phi: DiscretePhaseVector,
    q_phase: CMatrix,
}

/// `||phi^H Xi - q~^T||^2`.
pub fn approximation_objective(channels: &[CMatrix], w: &CMatrix, phi: &CVector, gain: &GainMatrix) -> f64 {
    let a = received_amplitudes(channels, w, phi);
    let t = gain.target();
    a.iter().zip(t.iter()).map(|(x, y)| (x - y).norm_sqr()).sum()
}

struct Problem<'a> {
    channels: &'a [CMatrix],
    p_max: f64,
    ipdd: &'a IpddConfig,
    method: PhaseMethod,
}

impl Problem<'_> {
    /// Alternates precoder, phase and `Q^nu` steps; each step is kept only if
    /// it does not raise the objective.
    fn alternate(&self, q_amp: &DMatrix<f64>, st: &mut ImState, rounds: usize) -> Result<Vec<f64>> {
        let mut gain = GainMatrix { q_amp: q_amp.clone(), q_phase: st.q_phase.clone() };
        let mut obj = approximation_objective(self.channels, &st.w, &st.phi.values(), &gain);
        let mut trace = vec![obj];
        for round in 0..rounds {
            let before = obj;
            let f = stream_matrix(self.channels, &st.phi.values());
            let w = solve_precoders(&f, &gain, self.p_max)?;
            let cand = approximation_objective(self.channels, &w, &st.phi.values(), &gain);
            if cand <= obj {
                st.w = w;
                obj = cand;
            }

            let xi = stack_xi(self.channels, &st.w)?;
            let q_tilde = gain.q_tilde();
            let phi = match self.method {
                PhaseMethod::Cfm => solve_phase_cfm(&xi, &q_tilde, self.ipdd.bits)?,
                PhaseMethod::Ipdd => {
                    let q = QuadraticForm::least_squares(xi, &q_tilde.conjugate())?;
                    ipdd_quadratic_discrete(&q, self.ipdd, &st.phi)
                        .map_err(|e| Error::invalid(format!("IM phase step, round {}: {e}", round + 1)))?
                        .phases
                }
            };
            let cand = approximation_objective(self.channels, &st.w, &phi.values(), &gain);
            if cand <= obj {
                st.phi = phi;
                obj = cand;
            }

            let a = received_amplitudes(self.channels, &st.w, &st.phi.values());
            gain.q_phase = a.map(phase_align);
            obj = obj.min(approximation_objective(self.channels, &st.w, &st.phi.values(), &gain));
            trace.push(obj);
            if before - obj <= 1e-6 * before {
                break;
            }
        }
        st.q_phase = gain.q_phase;
        Ok(trace)
    }
}

/// Probe score: Jain index, or 0 when every rate vanishes.
fn probe_jain(rates: &[f64]) -> f64 {
    jain_index(rates).unwrap_or(0.0)
}

/// Desired-gain-matrix interference management with fairness adaptation.
///
/// Each round builds `Q` from the current parameters, runs the alternating fit
/// from the incumbent solution, evaluates rates and Jain's index, then moves
/// the parameters along a forward-difference gradient of the index.
pub fn run_im(
    channels: &[CMatrix],
    params: &FairnessParams,
    ipdd: &IpddConfig,
    p_max: f64,
    sigma2: &[f64],
    cfg: &ImConfig,
) -> Result<ImOutcome> {
    params.validate()?;
    ipdd.validate()?;
    if cfg.iters == 0 {
        return Err(Error::invalid("im.iters must be at least 1"));
    }
    if sigma2.len() != channels.len() {
        return Err(Error::DimensionMismatch {
            what: "per-user noise powers",
            expected: channels.len(),
            actual: sigma2.len(),
        });
    }
    let k = channels.len();
    let StartPoint { w_matrix, ris_phases } = matched_filter_start(channels, p_max, ipdd.bits)?;
    let mut st =
        ImState { w: w_matrix, phi: ris_phases, q_phase: CMatrix::from_element(k, k, Complex64::new(1.0, 0.0)) };
    let problem = Problem { channels, p_max, ipdd, method: cfg.phase_method };
    let mut params = *params;
    let mut trace = Vec::with_capacity(cfg.iters);
    let mut best: Option<(PrecoderSet, FairnessParams)> = None;
    let mut first_ao_trace = Vec::new();

    let mut last: Option<(FairnessParams, Vec<f64>)> = None;

    for it in 0..cfg.iters {
        // Unchanged parameters would only repeat the fit from its own fixed point.
        let rates = match &last {
            Some((p, rates)) if *p == params => rates.clone(),
            _ => {
                let gain = build_gain_matrix(channels, &params)?;
                let ao = problem.alternate(&gain.q_amp, &mut st, cfg.ao_rounds)?;
                if it == 0 {
                    first_ao_trace = ao;
                }
                achievable_rates(channels, &st.w, &st.phi.values(), sigma2)
                    .map_err(|e| Error::invalid(format!("IM round {}: {e}", it + 1)))?
            }
        };
        last = Some((params, rates.clone()));
        let jain = jain_index(&rates).ok();
        trace.push(ImTraceRow {
            iteration: it,
            chi: params.chi(),
            jain,
            sum_rate: rates.iter().sum(),
            rates: rates.clone(),
        });
        if let Some(j) = jain {
            if best.as_ref().is_none_or(|(b, _)| j > b.jain) {
                best = Some((PrecoderSet::evaluate(channels, st.w.clone(), st.phi.clone(), sigma2)?, params));
            }
        }
        if it + 1 == cfg.iters || params.step == 0.0 {
            continue;
        }
        let base = jain.unwrap_or(0.0);
        let probe = |p: usize| -> Result<f64> {
            let mut chi = params.chi();
            let delta = params.delta(p);
            chi[p] += delta;
            let probe_params = params.with_chi(chi);
            let gain = build_gain_matrix(channels, &probe_params)?;
            let mut trial = st.clone();
            problem.alternate(&gain.q_amp, &mut trial, cfg.probe_rounds)?;
            let rates = achievable_rates(channels, &trial.w, &trial.phi.values(), sigma2)?;
            Ok((probe_jain(&rates) - base) / delta)
        };
        #[cfg(feature = "parallel")]
        let grad: Vec<f64> = {
            use rayon::prelude::*;
            (0..5).into_par_iter().map(probe).collect::<Result<_>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let grad: Vec<f64> = (0..5).map(probe).collect::<Result<_>>()?;
        let mut chi = params.chi();
        for (c, g) in chi.iter_mut().zip(&grad) {
            *c += params.step * g;
        }
        params = params.with_chi(chi);
    }
    let (best, best_params) = best.ok_or(Error::AllZeroRates)?;
    Ok(ImOutcome { best, best_params, trace, first_ao_trace })
}

//! Rate evaluation and the WMMSE sum-rate baseline.

use serde::{Deserialize, Serialize};

use crate::im::{solve_phase_cfm, stack_xi};
use crate::projections::DiscretePhaseVector;
use crate::solvers::{ipdd_quadratic_discrete, ridge_with_power, IpddConfig, QuadraticForm};
use crate::{CMatrix, CVector, Complex64, Error, Result};

fn check_shapes(channels: &[CMatrix], w: &CMatrix, phi: &CVector) -> Result<()> {
    let first = channels.first().ok_or_else(|| Error::invalid("at least one user channel is required"))?;
    let (n, m) = first.shape();
    if channels.iter().any(|h| h.shape() != (n, m)) {
        return Err(Error::invalid("user channels must share one shape"));
    }
    if phi.len() != n {
        return Err(Error::DimensionMismatch { what: "RIS phase vector", expected: n, actual: phi.len() });
    }
    if w.nrows() != m || w.ncols() != channels.len() {
        return Err(Error::DimensionMismatch {
            what: "precoder matrix columns",
            expected: channels.len(),
            actual: w.ncols(),
        });
    }
    Ok(())
}

/// Effective channels `g_k = H_k^H phi`, one column per user (`M x K`).
pub fn effective_channels(channels: &[CMatrix], phi: &CVector) -> CMatrix {
    let m = channels.first().map_or(0, |h| h.ncols());
    let mut out = CMatrix::zeros(m, channels.len());
    for (k, h) in channels.iter().enumerate() {
        out.set_column(k, &(h.adjoint() * phi));
    }
    out
}

/// `A[k, i] = phi^H H_k w_i`: row `k` is the receiving user, column `i` the stream.
pub fn received_amplitudes(channels: &[CMatrix], w: &CMatrix, phi: &CVector) -> CMatrix {
    effective_channels(channels, phi).adjoint() * w
}

fn sinr_from(a: &CMatrix, k: usize, sigma2: f64) -> f64 {
    let signal = a[(k, k)].norm_sqr();
    let interference: f64 = (0..a.ncols()).filter(|&i| i != k).map(|i| a[(k, i)].norm_sqr()).sum();
    signal / (interference + sigma2)
}

/// `|phi^H H_k w_k|^2 / (sum_{i != k} |phi^H H_k w_i|^2 + sigma^2)`.
pub fn user_sinr(channels: &[CMatrix], w: &CMatrix, phi: &CVector, k: usize, sigma2: f64) -> Result<f64> {
    check_shapes(channels, w, phi)?;
    if k >= channels.len() {
        return Err(Error::invalid(format!("user index {k} out of range for {} users", channels.len())));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::invalid("noise power must be positive"));
    }
    Ok(sinr_from(&received_amplitudes(channels, w, phi), k, sigma2))
}

/// `R_k = log2(1 + SINR_k)` for every user.
pub fn achievable_rates(channels: &[CMatrix], w: &CMatrix, phi: &CVector, sigma2: &[f64]) -> Result<Vec<f64>> {
    check_shapes(channels, w, phi)?;
    if sigma2.len() != channels.len() {
        return Err(Error::DimensionMismatch {
            what: "per-user noise powers",
            expected: channels.len(),
            actual: sigma2.len(),
        });
    }
    if sigma2.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("noise powers must be positive"));
    }
    let a = received_amplitudes(channels, w, phi);
    Ok((0..channels.len()).map(|k| (1.0 + sinr_from(&a, k, sigma2[k])).log2()).collect())
}

/// Precoders and phases an iterative method starts from.
#[derive(Debug, Clone, PartialEq)]
pub struct StartPoint {
    pub w_matrix: CMatrix,
    pub ris_phases: DiscretePhaseVector,
}

/// Equal-power matched filters `w_k ∝ H_k^H phi`.
pub fn matched_filters(channels: &[CMatrix], phi: &CVector, p_max: f64) -> CMatrix {
    let mut g = effective_channels(channels, phi);
    let per_user = (p_max / channels.len().max(1) as f64).sqrt();
    for mut col in g.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col *= Complex64::new(per_user / norm, 0.0);
        }
    }
    g
}

/// Matched filters for all-zero phases, then phases by the closed-form method
/// against an identity gain target, then matched filters for those phases.
pub fn matched_filter_start(channels: &[CMatrix], p_max: f64, bits: u32) -> Result<StartPoint> {
    let first = channels.first().ok_or_else(|| Error::invalid("at least one user channel is required"))?;
    let k = channels.len();
    let phi0 = DiscretePhaseVector::zeros(bits, first.nrows())?;
    let w0 = matched_filters(channels, &phi0.values(), p_max);
    let identity = CMatrix::identity(k, k);
    let q = CVector::from_column_slice(identity.as_slice());
    let phi = solve_phase_cfm(&stack_xi(channels, &w0)?, &q, bits)?;
    let w = matched_filters(channels, &phi.values(), p_max);
    Ok(StartPoint { w_matrix: w, ris_phases: phi })
}

/// Receiver and weight variables of one WMMSE iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct WmmseIterate {
    /// MMSE receivers `v_k`.
    pub v: Vec<Complex64>,
    /// MSE weights `rho_k = 1 / (1 - conj(v_k) phi^H H_k w_k)`.
    pub rho: Vec<f64>,
    pub w_matrix: CMatrix,
    pub ris_phases: DiscretePhaseVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseState {
    pub v_aux: Vec<Complex64>,
    pub rho_aux: Vec<f64>,
    pub w_matrix: CMatrix,
    pub ris_phases: DiscretePhaseVector,
    /// Sum rate at the start and after every outer iteration.
    pub sum_rate_trace: Vec<f64>,
    /// Receivers and weights computed at the start of each outer iteration.
    pub iterates: Vec<WmmseIterate>,
    pub rejected_phase_steps: usize,
    pub rejected_precoder_steps: usize,
}

impl WmmseState {
    pub fn sum_rate(&self) -> f64 {
        self.sum_rate_trace.last().copied().unwrap_or(0.0)
    }
}

/// WMMSE options beyond the phase solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WmmseConfig {
    pub iters: usize,
}

impl Default for WmmseConfig {
    fn default() -> Self {
        Self { iters: 20 }
    }
}

fn receivers(a: &CMatrix, sigma2: &[f64]) -> (Vec<Complex64>, Vec<f64>) {
    let k = a.nrows();
    let mut v = Vec::with_capacity(k);
    let mut rho = Vec::with_capacity(k);
    for u in 0..k {
        let rest: f64 = (0..a.ncols()).filter(|&i| i != u).map(|i| a[(u, i)].norm_sqr()).sum::<f64>() + sigma2[u];
        let total = rest + a[(u, u)].norm_sqr();
        v.push(a[(u, u)] / total);
        // 1 / (1 - conj(v) a_uu) without the cancellation at high SINR.
        rho.push(total / rest);
    }
    (v, rho)
}

fn sum_rate(channels: &[CMatrix], w: &CMatrix, phi: &CVector, sigma2: &[f64]) -> Result<f64> {
    Ok(achievable_rates(channels, w, phi, sigma2)?.iter().sum())
}

/// Sum-rate maximization by WMMSE block updates of receivers, weights,
/// precoders and (via IPDD) discrete RIS phases.
///
/// Precoder or phase updates that would lower the sum rate are rejected, so
/// the trace never decreases.
pub fn wmmse_sum_rate(
    channels: &[CMatrix],
    ipdd_cfg: &IpddConfig,
    p_max: f64,
    sigma2: &[f64],
    init: &StartPoint,
    iters: usize,
) -> Result<WmmseState> {
    ipdd_cfg.validate()?;
    if !(p_max > 0.0) {
        return Err(Error::invalid("p_max must be positive"));
    }
    let mut w = init.w_matrix.clone();
    let mut phi = DiscretePhaseVector::project(&init.ris_phases.values(), ipdd_cfg.bits)?;
    check_shapes(channels, &w, &phi.values())?;
    if w.norm_squared() > p_max * (1.0 + 1e-9) {
        return Err(Error::invalid("initial precoders exceed the power budget"));
    }
    let mut rate = sum_rate(channels, &w, &phi.values(), sigma2)?;
    let mut trace = vec![rate];
    let mut iterates = Vec::with_capacity(iters);
    let (mut rej_phi, mut rej_w) = (0, 0);
    let (mut v, mut rho) = receivers(&received_amplitudes(channels, &w, &phi.values()), sigma2);

    for _ in 0..iters {
        let pv = phi.values();
        (v, rho) = receivers(&received_amplitudes(channels, &w, &pv), sigma2);
        iterates.push(WmmseIterate { v: v.clone(), rho: rho.clone(), w_matrix: w.clone(), ris_phases: phi.clone() });

        // Precoders: w_k = (D + lambda I)^{-1} d_k with one lambda for the sum power.
        let g = effective_channels(channels, &pv);
        let m = g.nrows();
        let mut d_mat = CMatrix::zeros(m, m);
        let mut d = CMatrix::zeros(m, channels.len());
        for (k, gk) in g.column_iter().enumerate() {
            let wgt = Complex64::new(rho[k] * v[k].norm_sqr(), 0.0);
            d_mat.ger(wgt, &gk, &gk, Complex64::new(1.0, 0.0));
            d.set_column(k, &(gk * (v[k] * rho[k])));
        }
        let w_new = ridge_with_power(&d_mat, &d, p_max)?.w;
        let cand = sum_rate(channels, &w_new, &pv, sigma2)?;
        if cand >= rate {
            w = w_new;
            rate = cand;
        } else {
            rej_w += 1;
        }

        // Phases: phi^H Dhat phi - 2 Re{dhat^H phi}, Dhat = Z Z^H.
        let (v2, rho2) = receivers(&received_amplitudes(channels, &w, &pv), sigma2);
        let k_users = channels.len();
        let mut z = CMatrix::zeros(pv.len(), k_users * k_users);
        let mut lin = CVector::zeros(pv.len());
        for (k, h) in channels.iter().enumerate() {
            let hw = h * &w;
            let scale = (rho2[k]).sqrt() * v2[k].norm();
            for i in 0..k_users {
                z.set_column(k * k_users + i, &(hw.column(i) * Complex64::new(scale, 0.0)));
            }
            lin += hw.column(k) * (v2[k].conj() * rho2[k]);
        }
        let q = QuadraticForm::factored(z, lin, 0.0)?;
        let res = ipdd_quadratic_discrete(&q, ipdd_cfg, &phi)?;
        let cand = sum_rate(channels, &w, &res.phases.values(), sigma2)?;
        if cand >= rate {
            phi = res.phases;
            rate = cand;
        } else {
            rej_phi += 1;
        }
        trace.push(rate);
    }
    let (v_fin, rho_fin) =
        if iters == 0 { (v, rho) } else { receivers(&received_amplitudes(channels, &w, &phi.values()), sigma2) };
    Ok(WmmseState {
        v_aux: v_fin,
        rho_aux: rho_fin,
        w_matrix: w,
        ris_phases: phi,
        sum_rate_trace: trace,
        iterates,
        rejected_phase_steps: rej_phi,
        rejected_precoder_steps: rej_w,
    })
}

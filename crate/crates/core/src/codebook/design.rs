use serde::{Deserialize, Serialize};

use super::grid::{DesiredPattern, SamplingGrid};
use crate::geometry::{bs_ris_channel, cascaded_channel, ris_user_channel, SystemGeometry};
use crate::linalg::principal_eigenvector;
use crate::projections::{phase_align_vec, DiscretePhaseVector};
use crate::solvers::{ipdd_prepared, power_constrained_ls, Hessian, IpddConfig, PreparedHessian};
use crate::{CMatrix, CVector, Complex64, Error, Result};

/// Gain floor reported by [`evaluate_beam_pattern`] for zero received amplitude.
pub const GAIN_FLOOR_DB: f64 = -200.0;
const EIGEN_TOL: f64 = 1e-10;
const EIGEN_MAX_ITER: usize = 100_000;
/// Outer alternation limit for both construction methods.
pub const MAX_OUTER_ITERS: usize = 50;
/// Relative objective decrease below which the alternation stops.
pub const OUTER_REL_TOL: f64 = 1e-6;

/// Cascaded channels `C(x, y_u, z)` at every point of a design grid.
#[derive(Debug, Clone)]
pub struct DesignChannels {
    pub cascaded: Vec<CMatrix>,
    pub g_bs_ris: CMatrix,
}

impl DesignChannels {
    pub fn new(geom: &SystemGeometry, grid: &SamplingGrid) -> Result<Self> {
        let g = bs_ris_channel(geom)?;
        Self::with_bs_channel(geom, grid, g)
    }

    pub fn with_bs_channel(geom: &SystemGeometry, grid: &SamplingGrid, g: CMatrix) -> Result<Self> {
        let build = |&(x, z): &(f64, f64)| -> Result<CMatrix> {
            let h = ris_user_channel(geom, [x, geom.user_plane_y_m, z])?;
            cascaded_channel(&g, &h)
        };
        #[cfg(feature = "parallel")]
        let cascaded = {
            use rayon::prelude::*;
            grid.points.par_iter().map(build).collect::<Result<Vec<_>>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let cascaded = grid.points.iter().map(build).collect::<Result<Vec<_>>>()?;
        Ok(Self { cascaded, g_bs_ris: g })
    }

    pub fn len(&self) -> usize {
        self.cascaded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cascaded.is_empty()
    }

    pub fn n_elements(&self) -> usize {
        self.g_bs_ris.nrows()
    }

    pub fn n_antennas(&self) -> usize {
        self.g_bs_ris.ncols()
    }

    /// `Atilde_1(w) = unvec_{N,S}(B1 w)`: column `i` is `C_i w`.
    pub fn a1(&self, w: &CVector) -> CMatrix {
        let mut out = CMatrix::zeros(self.n_elements(), self.len());
        for (i, c) in self.cascaded.iter().enumerate() {
            out.set_column(i, &(c * w));
        }
        out
    }

    /// `Atilde_2(phi)`: row `i` is `phi^H C_i`, so `Atilde_2 w = (phi^H Atilde_1(w))^T`.
    pub fn a2(&self, phi: &CVector) -> CMatrix {
        let mut out = CMatrix::zeros(self.len(), self.n_antennas());
        for (i, c) in self.cascaded.iter().enumerate() {
            out.set_row(i, &(phi.adjoint() * c));
        }
        out
    }
}

/// The stacked training matrices for a design grid.
#[derive(Debug, Clone)]
pub struct TrainingMatrices {
    /// `(N S) x M`, cascaded channels stacked vertically.
    pub b1: CMatrix,
    /// `N x (M S)`, cascaded channels side by side.
    pub b2: CMatrix,
    /// `N x S`, columns `C_i w_t`; present when a precoder is supplied.
    pub b: Option<CMatrix>,
}

pub fn assemble_training_matrices(channels: &DesignChannels, w_t: Option<&CVector>) -> Result<TrainingMatrices> {
    let (n, m, s) = (channels.n_elements(), channels.n_antennas(), channels.len());
    if let Some(w) = w_t {
        if w.len() != m {
            return Err(Error::DimensionMismatch { what: "training precoder length", expected: m, actual: w.len() });
        }
    }
    let mut b1 = CMatrix::zeros(n * s, m);
    let mut b2 = CMatrix::zeros(n, m * s);
    for (i, c) in channels.cascaded.iter().enumerate() {
        b1.view_mut((i * n, 0), (n, m)).copy_from(c);
        b2.view_mut((0, i * m), (n, m)).copy_from(c);
    }
    let b = w_t.map(|w| channels.a1(w));
    Ok(TrainingMatrices { b1, b2, b })
}

/// `||phi^H A - (p ⊙ p^nu)^T||^2` for a fixed `A = Atilde_1(w)`.
pub fn pattern_residual(a1: &CMatrix, phi: &CVector, target: &CVector) -> f64 {
    let row = a1.adjoint() * phi;
    row.iter().zip(target.iter()).map(|(r, t)| (r.conj() - t).norm_sqr()).sum()
}

/// Best unit-modulus `p^nu` for fixed `phi^H A`: element-wise phase alignment of `A^T phi*`.
pub fn update_pnu(a1_t_phi: &CVector) -> CVector {
    phase_align_vec(a1_t_phi)
}

/// `sqrt(P) v_max(G^H G)`, the single-stream precoder that maximizes `||G w||`.
pub fn socc_precoder(g: &CMatrix, p_max: f64) -> Result<CVector> {
    let (_, v) = principal_eigenvector(&(g.adjoint() * g), EIGEN_TOL, EIGEN_MAX_ITER)?;
    Ok(v * Complex64::new(p_max.sqrt(), 0.0))
}

/// A designed codeword together with its convergence history.
#[derive(Debug, Clone)]
pub struct DesignOutcome {
    pub bs_precoder: CVector,
    pub ris_phases: DiscretePhaseVector,
    pub pnu: CVector,
    pub objective: f64,
    /// Objective after every outer iteration, starting with the initial point.
    pub objective_trace: Vec<f64>,
    /// Objective after each of the w, phi and p^nu steps, in order.
    pub step_trace: Vec<f64>,
    /// IPDD consensus gap at exit of each phi-step.
    pub consensus_gaps: Vec<f64>,
    /// Per phi-step IPDD gap traces.
    pub ipdd_gap_traces: Vec<Vec<f64>>,
    pub rejected_phi_steps: usize,
}

/// Phases and `p^nu` for a fixed precoder, alternating IPDD and phase alignment.
fn phase_design(
    a1: &CMatrix,
    prepared: &PreparedHessian,
    pattern: &DesiredPattern,
    cfg: &IpddConfig,
    phi0: DiscretePhaseVector,
    pnu0: CVector,
    out: &mut PhaseState,
) -> Result<()> {
    let amps = &pattern.amplitudes;
    out.phi = phi0;
    out.pnu = pnu0;
    let target = |pnu: &CVector| CVector::from_iterator(amps.len(), amps.iter().zip(pnu.iter()).map(|(&a, &p)| p * a));
    let mut obj = pattern_residual(a1, &out.phi.values(), &target(&out.pnu));
    out.trace.push(obj);
    for _ in 0..MAX_OUTER_ITERS {
        let before = obj;
        let linear = a1 * target(&out.pnu).conjugate();
        let res = ipdd_prepared(prepared, &linear, cfg, &out.phi)?;
        out.gaps.push(res.consensus_gap);
        out.gap_traces.push(res.gap_trace);
        let cand = pattern_residual(a1, &res.phases.values(), &target(&out.pnu));
        if cand <= obj {
            out.phi = res.phases;
            obj = cand;
        } else {
            out.rejected += 1;
        }
        out.steps.push(obj);
        out.pnu = update_pnu(&(a1.transpose() * out.phi.values().conjugate()));
        obj = pattern_residual(a1, &out.phi.values(), &target(&out.pnu));
        out.steps.push(obj);
        out.trace.push(obj);
        if before - obj <= OUTER_REL_TOL * before {
            break;
        }
    }
    out.objective = obj;
    Ok(())
}

struct PhaseState {
    phi: DiscretePhaseVector,
    pnu: CVector,
    objective: f64,
    trace: Vec<f64>,
    steps: Vec<f64>,
    gaps: Vec<f64>,
    gap_traces: Vec<Vec<f64>>,
    rejected: usize,
}

impl PhaseState {
    fn new(bits: u32, n: usize, s: usize) -> Result<Self> {
        Ok(Self {
            phi: DiscretePhaseVector::zeros(bits, n)?,
            pnu: CVector::from_element(s, Complex64::new(1.0, 0.0)),
            objective: f64::INFINITY,
            trace: Vec::new(),
            steps: Vec::new(),
            gaps: Vec::new(),
            gap_traces: Vec::new(),
            rejected: 0,
        })
    }
}

fn check_pattern(channels: &DesignChannels, pattern: &DesiredPattern) -> Result<()> {
    if pattern.amplitudes.len() != channels.len() {
        return Err(Error::DimensionMismatch {
            what: "desired pattern length",
            expected: channels.len(),
            actual: pattern.amplitudes.len(),
        });
    }
    Ok(())
}

/// Separately optimized codeword: eigen-precoder, then phases for the fixed precoder.
pub fn solve_socc(
    geom: &SystemGeometry,
    channels: &DesignChannels,
    pattern: &DesiredPattern,
    cfg: &IpddConfig,
) -> Result<DesignOutcome> {
    let w = socc_precoder(&channels.g_bs_ris, geom.max_power_w)?;
    let a1 = channels.a1(&w);
    let prepared = PreparedHessian::new(&Hessian::Factored(a1.clone()))?;
    socc_with_prepared(&w, &a1, &prepared, pattern, cfg)
}

/// [`solve_socc`] with the precoder, `Atilde_1` and its Gram matrix precomputed.
///
/// All codewords designed on one grid share these, only the pattern changes.
pub fn socc_with_prepared(
    w: &CVector,
    a1: &CMatrix,
    prepared: &PreparedHessian,
    pattern: &DesiredPattern,
    cfg: &IpddConfig,
) -> Result<DesignOutcome> {
    if pattern.amplitudes.len() != a1.ncols() {
        return Err(Error::DimensionMismatch {
            what: "desired pattern length",
            expected: a1.ncols(),
            actual: pattern.amplitudes.len(),
        });
    }
    let mut st = PhaseState::new(cfg.bits, a1.nrows(), a1.ncols())?;
    let phi0 = st.phi.clone();
    let pnu0 = pattern.phases.clone();
    phase_design(a1, prepared, pattern, cfg, phi0, pnu0, &mut st)?;
    Ok(DesignOutcome {
        bs_precoder: w.clone(),
        ris_phases: st.phi,
        pnu: st.pnu,
        objective: st.objective,
        objective_trace: st.trace,
        step_trace: st.steps,
        consensus_gaps: st.gaps,
        ipdd_gap_traces: st.gap_traces,
        rejected_phi_steps: st.rejected,
    })
}

/// Jointly optimized codeword by alternating the precoder, phase and `p^nu` steps.
///
/// Starts from `init` (normally a SOCC codeword). Steps that would raise the
/// objective are rejected, so the trace never increases.
pub fn solve_jocc(
    geom: &SystemGeometry,
    channels: &DesignChannels,
    pattern: &DesiredPattern,
    cfg: &IpddConfig,
    init: &DesignOutcome,
) -> Result<DesignOutcome> {
    check_pattern(channels, pattern)?;
    let p_max = geom.max_power_w;
    if init.bs_precoder.len() != channels.n_antennas() || init.ris_phases.len() != channels.n_elements() {
        return Err(Error::invalid("JOCC initial codeword does not match the design channels"));
    }
    if init.bs_precoder.norm_squared() > p_max * (1.0 + 1e-9) {
        return Err(Error::invalid("JOCC initial precoder violates the power budget"));
    }
    let amps = &pattern.amplitudes;
    let target = |pnu: &CVector| CVector::from_iterator(amps.len(), amps.iter().zip(pnu.iter()).map(|(&a, &p)| p * a));

    let mut w = init.bs_precoder.clone();
    let mut phi = DiscretePhaseVector::project(&init.ris_phases.values(), cfg.bits)?;
    let mut pnu = init.pnu.clone();
    let mut a1 = channels.a1(&w);
    let mut obj = pattern_residual(&a1, &phi.values(), &target(&pnu));
    let mut trace = vec![obj];
    let mut steps = Vec::new();
    let mut gaps = Vec::new();
    let mut gap_traces = Vec::new();
    let mut rejected = 0;

    for _ in 0..MAX_OUTER_ITERS {
        let before = obj;

        // (a) precoder: min ||Atilde_2 w - p ⊙ p^nu||^2, ||w||^2 <= P.
        let a2 = channels.a2(&phi.values());
        let (w_new, _) = power_constrained_ls(&a2, &target(&pnu), p_max)?;
        let a1_new = channels.a1(&w_new);
        let cand = pattern_residual(&a1_new, &phi.values(), &target(&pnu));
        if cand <= obj {
            w = w_new;
            a1 = a1_new;
            obj = cand;
        }
        steps.push(obj);

        // (b) phases by IPDD on the quadratic in phi.
        let prepared = PreparedHessian::new(&Hessian::Factored(a1.clone()))?;
        let linear = &a1 * target(&pnu).conjugate();
        let res = ipdd_prepared(&prepared, &linear, cfg, &phi)?;
        gaps.push(res.consensus_gap);
        gap_traces.push(res.gap_trace);
        let cand = pattern_residual(&a1, &res.phases.values(), &target(&pnu));
        if cand <= obj {
            phi = res.phases;
            obj = cand;
        } else {
            rejected += 1;
        }
        steps.push(obj);

        // (c) desired phases.
        pnu = update_pnu(&(a1.transpose() * phi.values().conjugate()));
        obj = obj.min(pattern_residual(&a1, &phi.values(), &target(&pnu)));
        steps.push(obj);
        trace.push(obj);
        if before - obj <= OUTER_REL_TOL * before {
            break;
        }
    }
    Ok(DesignOutcome {
        bs_precoder: w,
        ris_phases: phi,
        pnu,
        objective: obj,
        objective_trace: trace,
        step_trace: steps,
        consensus_gaps: gaps,
        ipdd_gap_traces: gap_traces,
        rejected_phi_steps: rejected,
    })
}

/// Received amplitude `|phi^H C(x, y_u, z) w|` in dB at each grid point, floored at -200 dB.
pub fn evaluate_beam_pattern(
    geom: &SystemGeometry,
    bs_precoder: &CVector,
    ris_phases: &DiscretePhaseVector,
    grid: &SamplingGrid,
) -> Result<Vec<f64>> {
    let g = bs_ris_channel(geom)?;
    if bs_precoder.len() != g.ncols() || ris_phases.len() != g.nrows() {
        return Err(Error::invalid("codeword dimensions do not match the geometry"));
    }
    let gw = &g * bs_precoder;
    let phi = ris_phases.values();
    grid.points
        .iter()
        .map(|&(x, z)| {
            let h = ris_user_channel(geom, [x, geom.user_plane_y_m, z])?;
            // phi^H diag(h^*) G w = sum conj(phi_n h_n) (G w)_n
            let y: Complex64 = phi.iter().zip(h.iter()).zip(gw.iter()).map(|((p, h), g)| (p * h).conj() * g).sum();
            Ok(amplitude_db(y.norm()))
        })
        .collect()
}

pub fn amplitude_db(a: f64) -> f64 {
    if a > 0.0 {
        (20.0 * a.log10()).max(GAIN_FLOOR_DB)
    } else {
        GAIN_FLOOR_DB
    }
}

/// Construction method for codewords.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Socc,
    Jocc,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "socc" => Ok(Self::Socc),
            "jocc" => Ok(Self::Jocc),
            other => Err(Error::invalid(format!("unknown codebook method `{other}` (expected socc or jocc)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::grid::{desired_pattern, make_sampling_grid, Region};
    use crate::linalg::unvec;

    fn small_geom(m: usize) -> SystemGeometry {
        let mut g = SystemGeometry::new(0.03, 16, 2, m, [-4.0, 0.0, -2.5], 0.0, 1.0, 1e-9).unwrap();
        g.max_power_w = 2.0;
        g
    }

    fn small_grid() -> SamplingGrid {
        make_sampling_grid([-3.0, 3.0], [10.0, 30.0], 8, 4, 1).unwrap()
    }

    #[test]
    fn single_point_training_matrices_equal_the_channel() {
        let geom = small_geom(3);
        let grid = make_sampling_grid([0.0, 1.0], [10.0, 11.0], 1, 1, 1).unwrap();
        let ch = DesignChannels::new(&geom, &grid).unwrap();
        let tm = assemble_training_matrices(&ch, None).unwrap();
        assert_eq!(tm.b1, ch.cascaded[0]);
        assert_eq!(tm.b2, ch.cascaded[0]);
    }

    #[test]
    fn explicit_precoder_identity() {
        let geom = small_geom(3);
        let ch = DesignChannels::new(&geom, &small_grid()).unwrap();
        let tm = assemble_training_matrices(&ch, None).unwrap();
        let (n, s, m) = (ch.n_elements(), ch.len(), ch.n_antennas());
        let phi = CVector::from_fn(n, |i, _| Complex64::from_polar(1.0, 0.37 * i as f64));
        let w = CVector::from_fn(m, |i, _| Complex64::new(0.3 * i as f64 - 0.2, 0.1 + i as f64));
        let lhs = phi.adjoint() * unvec(&(&tm.b1 * &w), n, s).unwrap();
        let a2 = unvec(&(tm.b2.transpose() * phi.conjugate()), m, s).unwrap().transpose();
        let rhs = (&a2 * &w).transpose();
        assert!((lhs - rhs).camax() < 1e-10);
        assert!((ch.a2(&phi) - a2).camax() < 1e-12);
    }

    #[test]
    fn socc_matrix_columns_are_precoded_channels() {
        let geom = small_geom(2);
        let ch = DesignChannels::new(&geom, &small_grid()).unwrap();
        let w = socc_precoder(&ch.g_bs_ris, geom.max_power_w).unwrap();
        let b = assemble_training_matrices(&ch, Some(&w)).unwrap().b.unwrap();
        for i in [0, 5, 31] {
            assert!((b.column(i) - &ch.cascaded[i] * &w).camax() < 1e-14);
        }
    }

    #[test]
    fn socc_precoder_of_rank_one_channel() {
        let a = CVector::from_vec(vec![Complex64::new(1.0, 0.5), Complex64::new(-0.3, 2.0), Complex64::new(0.0, 1.0)]);
        let b = CVector::from_vec(vec![Complex64::new(0.5, 0.0), Complex64::new(0.2, -0.7)]);
        let g = &a * b.adjoint();
        let w = socc_precoder(&g, 4.0).unwrap();
        assert!((w.norm_squared() - 4.0).abs() < 1e-9);
        let cos = w.dotc(&b).norm() / (w.norm() * b.norm());
        assert!((cos - 1.0).abs() < 1e-9);
        let single = socc_precoder(&CMatrix::from_element(3, 1, Complex64::new(0.0, 2.0)), 4.0).unwrap();
        assert!((single[0] - Complex64::new(2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn pnu_update_examples() {
        let v = CVector::from_vec(vec![Complex64::new(2.0, 0.0), Complex64::new(0.5, 0.0)]);
        assert!(update_pnu(&v).iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        let prev = CVector::from_vec(vec![Complex64::from_polar(1.0, 0.4), Complex64::from_polar(1.0, -2.0)]);
        let scaled = CVector::from_vec(vec![prev[0] * 3.0, prev[1] * 0.1]);
        assert!((update_pnu(&scaled) - &prev).camax() < 1e-15);
    }

    #[test]
    fn zero_precoder_floors_the_pattern() {
        let geom = small_geom(2);
        let grid = small_grid();
        let g = evaluate_beam_pattern(&geom, &CVector::zeros(2), &DiscretePhaseVector::zeros(2, 32).unwrap(), &grid)
            .unwrap();
        assert!(g.iter().all(|&v| v == GAIN_FLOOR_DB));
    }

    #[test]
    fn socc_and_jocc_on_a_small_instance() {
        let geom = small_geom(2);
        let grid = small_grid();
        let ch = DesignChannels::new(&geom, &grid).unwrap();
        let target = grid.region.cell(4, 2, 1, 1);
        let pat = desired_pattern(&grid, target, 3.0, None).unwrap();
        let cfg = IpddConfig::with_bits(2);
        let s = solve_socc(&geom, &ch, &pat, &cfg).unwrap();
        assert!(s.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let j = solve_jocc(&geom, &ch, &pat, &cfg, &s).unwrap();
        assert!(j.objective <= s.objective + 1e-9);
        assert!((j.objective_trace[0] - s.objective).abs() <= 1e-12 * s.objective.max(1.0));
        assert!(j.step_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        assert!(j.bs_precoder.norm_squared() <= geom.max_power_w + 1e-9);
        assert!(j.consensus_gaps.iter().all(|&g| g <= 1e-4));
    }

    #[test]
    fn all_zero_pattern_gives_zero_precoder_step() {
        let geom = small_geom(2);
        let grid = small_grid();
        let ch = DesignChannels::new(&geom, &grid).unwrap();
        let mut pat = desired_pattern(&grid, grid.region, 1.0, None).unwrap();
        pat.amplitudes.iter_mut().for_each(|a| *a = 0.0);
        let cfg = IpddConfig::with_bits(1);
        let s = solve_socc(&geom, &ch, &pat, &cfg).unwrap();
        let j = solve_jocc(&geom, &ch, &pat, &cfg, &s).unwrap();
        assert!(j.objective <= 1e-20);
        assert!(j.bs_precoder.norm() < 1e-12);
        let _ = Region::new([0.0, 1.0], [0.0, 1.0]).unwrap();
    }
}

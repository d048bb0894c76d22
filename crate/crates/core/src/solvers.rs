//! Constrained-optimization kernels.
//!
//! - [`ridge_with_power`] / [`power_constrained_ls`]: least squares under a
//!   total-power budget, solved through the Lagrangian `(H + lambda I)^-1 y`
//!   with `lambda` found by bisection.
//! - [`ipdd_quadratic_discrete`]: increasing penalty dual decomposition for
//!   `min phi^H R phi - 2 Re{b^H phi} + c` over discrete unit-modulus `phi`.

use serde::{Deserialize, Serialize};

use crate::linalg::HermitianEigen;
use crate::projections::DiscretePhaseVector;
use crate::{CMatrix, CVector, Complex64, Error, Result};

/// Relative tolerance on `||w||^2 - p_max` when the power constraint is active.
pub const POWER_TOL: f64 = 1e-8;
const MAX_BISECTION_STEPS: usize = 400;

/// Result of a power-constrained ridge solve.
#[derive(Debug, Clone)]
pub struct RidgeSolution {
    /// One solution column per right-hand side.
    pub w: CMatrix,
    /// Lagrange multiplier of the power constraint (0 when inactive).
    pub lambda: f64,
}

/// Solves `W = (H + lambda I)^-1 Y` for Hermitian PSD `H` with the smallest
/// `lambda >= 0` such that `||W||_F^2 <= p_max`.
///
/// The upper bracket starts at 1 and doubles until feasible; bisection then
/// stops once `p_max - ||W||^2 <= 1e-8 p_max`. The returned `W` is always
/// feasible. When `H` is singular and the constraint is inactive the
/// minimum-norm solution is returned.
pub fn ridge_with_power(h: &CMatrix, y: &CMatrix, p_max: f64) -> Result<RidgeSolution> {
    if !(p_max > 0.0) {
        return Err(Error::invalid("p_max must be positive"));
    }
    if h.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch {
            what: "ridge right-hand side rows",
            expected: h.nrows(),
            actual: y.nrows(),
        });
    }
    let eig = HermitianEigen::new(h)?;
    let coeffs = eig.vectors.adjoint() * y;
    let weights: Vec<f64> = coeffs.row_iter().map(|r| r.iter().map(|z| z.norm_sqr()).sum()).collect();
    let floor = eig.singular_floor();
    let power = |lambda: f64| -> f64 {
        eig.values
            .iter()
            .zip(&weights)
            .map(|(&l, &wt)| {
                let d = l + lambda;
                if (lambda > 0.0 && d > 0.0) || d > floor {
                    wt / (d * d)
                } else {
                    0.0
                }
            })
            .sum()
    };

    let lambda = if power(0.0) <= p_max {
        0.0
    } else {
        let mut lo = 0.0;
        let mut hi = 1.0;
        while power(hi) > p_max {
            lo = hi;
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(Error::invalid("power bracket diverged"));
            }
        }
        for _ in 0..MAX_BISECTION_STEPS {
            if p_max - power(hi) <= POWER_TOL * p_max || hi - lo <= 1e-15 * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if power(mid) > p_max {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    let w = eig.solve_shifted(y, lambda);
    Ok(RidgeSolution { w, lambda })
}

/// `argmin ||A w - t||^2` subject to `||w||^2 <= p_max`.
pub fn power_constrained_ls(a: &CMatrix, target: &CVector, p_max: f64) -> Result<(CVector, f64)> {
    if a.nrows() != target.len() {
        return Err(Error::DimensionMismatch {
            what: "least-squares target length",
            expected: a.nrows(),
            actual: target.len(),
        });
    }
    let rhs = a.adjoint() * target;
    let rhs = CMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
    let sol = ridge_with_power(&(a.adjoint() * a), &rhs, p_max)?;
    Ok((sol.w.column(0).into_owned(), sol.lambda))
}

/// `argmin ||A W - T||_F^2` subject to `||W||_F^2 <= p_max`, all columns sharing one multiplier.
pub fn power_constrained_ls_multi(a: &CMatrix, targets: &CMatrix, p_max: f64) -> Result<RidgeSolution> {
    if a.nrows() != targets.nrows() {
        return Err(Error::DimensionMismatch {
            what: "least-squares target rows",
            expected: a.nrows(),
            actual: targets.nrows(),
        });
    }
    ridge_with_power(&(a.adjoint() * a), &(a.adjoint() * targets), p_max)
}

/// Hessian of a quadratic form, either explicit or as `Z Z^H`.
#[derive(Debug, Clone)]
pub enum Hessian {
    Dense(CMatrix),
    /// `R = Z Z^H`; cheap when `Z` has few columns.
    Factored(CMatrix),
}

/// `f(phi) = phi^H R phi - 2 Re{b^H phi} + c` with Hermitian PSD `R`.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub hessian: Hessian,
    pub linear: CVector,
    pub constant: f64,
}

impl QuadraticForm {
    pub fn dense(hessian: CMatrix, linear: CVector, constant: f64) -> Result<Self> {
        if !hessian.is_square() || hessian.nrows() != linear.len() {
            return Err(Error::DimensionMismatch {
                what: "quadratic form hessian",
                expected: linear.len(),
                actual: hessian.nrows(),
            });
        }
        let scale = hessian.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let asym = (&hessian - hessian.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if asym > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::invalid("quadratic form hessian is not Hermitian"));
        }
        Ok(Self { hessian: Hessian::Dense(hessian), linear, constant })
    }

    /// Least-squares form `||Z^H phi - t||^2`, i.e. `R = Z Z^H`, `b = Z t`, `c = ||t||^2`.
    pub fn least_squares(z: CMatrix, target: &CVector) -> Result<Self> {
        if z.ncols() != target.len() {
            return Err(Error::DimensionMismatch {
                what: "least-squares target length",
                expected: z.ncols(),
                actual: target.len(),
            });
        }
        let linear = &z * target;
        Ok(Self { hessian: Hessian::Factored(z), linear, constant: target.norm_squared() })
    }

    pub fn factored(z: CMatrix, linear: CVector, constant: f64) -> Result<Self> {
        if z.nrows() != linear.len() {
            return Err(Error::DimensionMismatch {
                what: "quadratic form factor rows",
                expected: linear.len(),
                actual: z.nrows(),
            });
        }
        Ok(Self { hessian: Hessian::Factored(z), linear, constant })
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn hessian_matrix(&self) -> CMatrix {
        match &self.hessian {
            Hessian::Dense(r) => r.clone(),
            Hessian::Factored(z) => z * z.adjoint(),
        }
    }

    pub fn evaluate(&self, phi: &CVector) -> f64 {
        let quad = match &self.hessian {
            Hessian::Dense(r) => phi.dotc(&(r * phi)).re,
            Hessian::Factored(z) => (z.adjoint() * phi).norm_squared(),
        };
        quad - 2.0 * self.linear.dotc(phi).re + self.constant
    }

    /// Unconstrained minimizer `R^+ b` (minimum norm when `R` is singular).
    pub fn unconstrained_minimizer(&self) -> Result<CVector> {
        let solver = ShiftedSolver::new(&self.hessian)?;
        Ok(solver.solve(&self.linear, 0.0))
    }
}

/// Repeated solves of `(R + c I) x = y` for varying `c > 0`.
pub(crate) enum ShiftedSolver {
    Eigen(HermitianEigen),
    /// Orthonormal range basis `U` and eigenvalues of `R = U diag(s) U^H`.
    LowRank {
        basis: CMatrix,
        values: Vec<f64>,
    },
}

impl ShiftedSolver {
    pub(crate) fn new(h: &Hessian) -> Result<Self> {
        match h {
            Hessian::Dense(r) => Ok(Self::Eigen(HermitianEigen::new(r)?)),
            Hessian::Factored(z) if z.ncols() >= z.nrows() => Ok(Self::Eigen(HermitianEigen::new(&(z * z.adjoint()))?)),
            Hessian::Factored(z) => {
                let small = HermitianEigen::new(&(z.adjoint() * z))?;
                let floor = small.singular_floor();
                let keep: Vec<usize> = (0..small.dim()).filter(|&i| small.values[i] > floor).collect();
                let mut basis = CMatrix::zeros(z.nrows(), keep.len());
                let mut values = Vec::with_capacity(keep.len());
                for (col, &i) in keep.iter().enumerate() {
                    let s = small.values[i];
                    let u = z * small.vectors.column(i) / Complex64::new(s.sqrt(), 0.0);
                    basis.set_column(col, &u);
                    values.push(s);
                }
                Ok(Self::LowRank { basis, values })
            }
        }
    }

    pub(crate) fn max_eigenvalue(&self) -> f64 {
        match self {
            Self::Eigen(e) => e.max_value(),
            Self::LowRank { values, .. } => values.iter().cloned().fold(0.0, f64::max),
        }
    }

    pub(crate) fn solve(&self, y: &CVector, shift: f64) -> CVector {
        match self {
            Self::Eigen(e) => {
                let ym = CMatrix::from_column_slice(y.len(), 1, y.as_slice());
                e.solve_shifted(&ym, shift).column(0).into_owned()
            }
            Self::LowRank { basis, values } => {
                let coeffs = basis.adjoint() * y;
                let range = basis * &coeffs;
                let mut out = if shift > 0.0 { (y - &range).unscale(shift) } else { CVector::zeros(y.len()) };
                let scaled =
                    CVector::from_iterator(coeffs.len(), coeffs.iter().zip(values).map(|(c, &s)| c / (s + shift)));
                out += basis * scaled;
                out
            }
        }
    }
}

/// Penalty schedule and stopping rule of the IPDD loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IpddConfig {
    /// Initial penalty `eta`, relative to the largest eigenvalue of `R`.
    pub penalty_init: f64,
    /// `eta <- penalty_decay * eta` after every outer iteration.
    pub penalty_decay: f64,
    /// Stop once `||phi - zeta||_2 <= consensus_tol`.
    pub consensus_tol: f64,
    pub max_outer_iters: usize,
    pub bits: u32,
    /// Maximum sweeps of single-element discrete descent applied to the IPDD
    /// output and to the rounded ridge solution; the better of the two is
    /// returned. 0 returns the raw IPDD iterate.
    pub refine_sweeps: usize,
}

impl Default for IpddConfig {
    fn default() -> Self {
        Self {
            penalty_init: 10.0,
            penalty_decay: 0.8,
            consensus_tol: 1e-4,
            max_outer_iters: 200,
            bits: 2,
            refine_sweeps: 50,
        }
    }
}

impl IpddConfig {
    pub fn with_bits(bits: u32) -> Self {
        Self { bits, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_init > 0.0) {
            return Err(Error::invalid("ipdd.penalty_init must be positive"));
        }
        if !(self.penalty_decay > 0.0 && self.penalty_decay < 1.0) {
            return Err(Error::invalid("ipdd.penalty_decay must lie in (0, 1)"));
        }
        if !(self.consensus_tol > 0.0) {
            return Err(Error::invalid("ipdd.consensus_tol must be positive"));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::invalid("ipdd.max_outer_iters must be positive"));
        }
        if self.bits == 0 || self.bits > crate::projections::MAX_BITS {
            return Err(Error::invalid("ipdd.bits out of range"));
        }
        Ok(())
    }
}

/// Final state of an IPDD run.
#[derive(Debug, Clone)]
pub struct IpddOutcome {
    /// Returned configuration (after refinement, if enabled).
    pub phases: DiscretePhaseVector,
    /// The discrete copy `zeta` when the penalty loop stopped.
    pub consensus_phases: DiscretePhaseVector,
    /// The relaxed iterate `phi` when the penalty loop stopped.
    pub continuous: CVector,
    pub consensus_gap: f64,
    pub iterations: usize,
    /// `||phi - zeta||_2` after each outer iteration.
    pub gap_trace: Vec<f64>,
    /// Elements changed by the refinement sweeps that produced `phases`.
    pub refined_elements: usize,
}

/// A Hessian factorized once for repeated IPDD solves with different linear terms.
pub struct PreparedHessian {
    solver: ShiftedSolver,
    dense: CMatrix,
}

impl PreparedHessian {
    pub fn new(h: &Hessian) -> Result<Self> {
        let (dense, solver) = match h {
            Hessian::Factored(z) if z.ncols() >= z.nrows() => {
                let dense = z * z.adjoint();
                let solver = ShiftedSolver::Eigen(HermitianEigen::new(&dense)?);
                (dense, solver)
            }
            Hessian::Dense(r) => (r.clone(), ShiftedSolver::new(h)?),
            Hessian::Factored(z) => (z * z.adjoint(), ShiftedSolver::new(h)?),
        };
        Ok(Self { solver, dense })
    }

    pub fn dim(&self) -> usize {
        self.dense.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.dense
    }
}

/// Minimizes `q` over `cfg.bits`-bit unit-modulus vectors.
///
/// Each outer iteration solves the penalized quadratic for the relaxed copy
/// `phi`, projects `phi - eta u` element-wise onto the discrete set to get
/// `zeta`, updates the dual `u += (zeta - phi) / eta` and shrinks `eta`. The
/// dual starts at zero and `zeta` at `init`. The objective is normalized by the
/// largest eigenvalue of `R` so `penalty_init` is scale free.
pub fn ipdd_quadratic_discrete(q: &QuadraticForm, cfg: &IpddConfig, init: &DiscretePhaseVector) -> Result<IpddOutcome> {
    cfg.validate()?;
    let prepared = PreparedHessian::new(&q.hessian)?;
    ipdd_prepared(&prepared, &q.linear, cfg, init)
}

/// [`ipdd_quadratic_discrete`] for `phi^H R phi - 2 Re{b^H phi}` with a prepared `R`.
pub fn ipdd_prepared(
    prepared: &PreparedHessian,
    linear: &CVector,
    cfg: &IpddConfig,
    init: &DiscretePhaseVector,
) -> Result<IpddOutcome> {
    cfg.validate()?;
    let n = prepared.dim();
    if linear.len() != n {
        return Err(Error::DimensionMismatch { what: "IPDD linear term", expected: n, actual: linear.len() });
    }
    if init.len() != n {
        return Err(Error::DimensionMismatch { what: "IPDD initial phases", expected: n, actual: init.len() });
    }
    let bits = cfg.bits;
    let lmax = prepared.solver.max_eigenvalue();
    let scale = if lmax > 0.0 { lmax } else { 1.0 };
    let scaled_linear = linear.unscale(scale);

    let mut zeta = DiscretePhaseVector::project(&init.values(), bits)?;
    let mut zeta_vals = zeta.values();
    let mut dual = CVector::zeros(n);
    let mut eta = cfg.penalty_init;
    let mut gap_trace = Vec::new();

    for iter in 1..=cfg.max_outer_iters {
        let rho = 1.0 / (2.0 * eta);
        // Scaled system: (R/scale + rho I) phi = b/scale + rho zeta + u/2.
        let rhs = &scaled_linear + &zeta_vals * Complex64::new(rho, 0.0) + &dual * Complex64::new(0.5, 0.0);
        let phi = prepared.solver.solve(&rhs, rho * scale) * Complex64::new(scale, 0.0);

        let shifted = &phi - &dual * Complex64::new(eta, 0.0);
        zeta = DiscretePhaseVector::project(&shifted, bits)?;
        zeta_vals = zeta.values();
        dual += (&zeta_vals - &phi).unscale(eta);
        eta *= cfg.penalty_decay;

        let gap = (&phi - &zeta_vals).norm();
        gap_trace.push(gap);
        if gap <= cfg.consensus_tol {
            let (mut phases, mut refined_elements) =
                refine_discrete(&prepared.dense, linear, zeta.clone(), cfg.refine_sweeps);
            if cfg.refine_sweeps > 0 {
                // Second descent from the rounded ridge solution; keep the lower objective.
                let ridge = prepared.solver.solve(&scaled_linear, RIDGE_SHIFT * scale) * Complex64::new(scale, 0.0);
                let start = DiscretePhaseVector::project(&ridge, bits)?;
                let (alt, moved) = refine_discrete(&prepared.dense, linear, start, cfg.refine_sweeps);
                let f = |p: &DiscretePhaseVector| quadratic_value(&prepared.dense, linear, &p.values());
                if f(&alt) < f(&phases) {
                    phases = alt;
                    refined_elements = moved;
                }
            }
            return Ok(IpddOutcome {
                phases,
                consensus_phases: zeta,
                continuous: phi,
                consensus_gap: gap,
                iterations: iter,
                gap_trace,
                refined_elements,
            });
        }
    }
    Err(Error::IpddNotConverged {
        iterations: cfg.max_outer_iters,
        gap: gap_trace.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// Ridge shift, relative to the largest eigenvalue, of the second refinement start.
const RIDGE_SHIFT: f64 = 1e-6;

fn quadratic_value(r: &CMatrix, linear: &CVector, phi: &CVector) -> f64 {
    (phi.dotc(&(r * phi)) - linear.dotc(phi) * 2.0).re
}

/// Single-element discrete descent on `phi^H R phi - 2 Re{b^H phi}`.
///
/// With all other entries fixed, the best level for entry `n` is the discrete
/// projection of `b_n - sum_{m != n} R_nm phi_m`. Sweeps run in index order
/// and stop when a sweep changes nothing; every accepted change strictly
/// lowers the objective.
pub fn refine_discrete(
    r: &CMatrix,
    linear: &CVector,
    start: DiscretePhaseVector,
    max_sweeps: usize,
) -> (DiscretePhaseVector, usize) {
    if max_sweeps == 0 {
        return (start, 0);
    }
    let bits = start.bits();
    let mut indices = start.indices().to_vec();
    let mut values = start.values();
    let mut grad = r * &values;
    let tol = 1e-12 * r.diagonal().iter().map(|z| z.re.abs()).fold(1e-300, f64::max);
    let mut changed_total = 0;
    for _ in 0..max_sweeps {
        let mut changed = false;
        for n in 0..indices.len() {
            let rnn = r[(n, n)].re;
            let field = linear[n] - (grad[n] - values[n] * rnn);
            let z = crate::projections::cmdpp_index(field, bits);
            if z == indices[n] {
                continue;
            }
            let new = crate::projections::grid_value(z, bits);
            let delta = new - values[n];
            let change =
                rnn * delta.norm_sqr() + 2.0 * (delta.conj() * grad[n]).re - 2.0 * (linear[n].conj() * delta).re;
            if change < -tol {
                indices[n] = z;
                values[n] = new;
                grad += r.column(n) * delta;
                changed = true;
                changed_total += 1;
            }
        }
        if !changed {
            break;
        }
    }
    let out = DiscretePhaseVector::new(bits, indices).expect("indices come from the projection");
    (out, changed_total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projections::cmdpp_index;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn randn(rng: &mut ChaCha8Rng) -> Complex64 {
        let d = rand_distr::StandardNormal;
        c(rng.sample(d), rng.sample(d)) * std::f64::consts::FRAC_1_SQRT_2
    }

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, k: usize) -> CMatrix {
        CMatrix::from_fn(r, k, |_, _| randn(rng))
    }

    fn rand_vec(rng: &mut ChaCha8Rng, r: usize) -> CVector {
        CVector::from_fn(r, |_, _| randn(rng))
    }

    #[test]
    fn ls_identity_example_activates_constraint() {
        let a = CMatrix::identity(2, 2);
        let t = CVector::from_vec(vec![c(2.0, 0.0), c(0.0, 0.0)]);
        let (w, lambda) = power_constrained_ls(&a, &t, 1.0).unwrap();
        assert!((w[0] - c(1.0, 0.0)).norm() < 1e-7);
        assert!(w[1].norm() < 1e-12);
        assert!((lambda - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ls_inactive_constraint_is_plain_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_mat(&mut rng, 8, 3);
        let t = rand_vec(&mut rng, 8);
        let exact = (a.adjoint() * &a).try_inverse().unwrap() * a.adjoint() * &t;
        let (w, lambda) = power_constrained_ls(&a, &t, exact.norm_squared() * 2.0).unwrap();
        assert_eq!(lambda, 0.0);
        assert!((w - exact).norm() < 1e-10);
    }

    #[test]
    fn ls_beats_random_feasible_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = rand_mat(&mut rng, 8, 4);
        let t = rand_vec(&mut rng, 8) * c(5.0, 0.0);
        let p = 0.5;
        let (w, lambda) = power_constrained_ls(&a, &t, p).unwrap();
        assert!(w.norm_squared() <= p + 1e-9);
        assert!(lambda > 0.0);
        assert!((w.norm_squared() - p).abs() <= 1e-6 * p);
        let obj = (&a * &w - &t).norm_squared();
        for _ in 0..1000 {
            let mut cand = rand_vec(&mut rng, 4);
            let r: f64 = rng.random::<f64>().sqrt();
            cand *= c(p.sqrt() * r / cand.norm(), 0.0);
            assert!(obj <= (&a * &cand - &t).norm_squared() + 1e-9);
        }
    }

    #[test]
    fn ridge_handles_singular_hessian() {
        // Rank-1 H; the constraint is inactive so the minimum-norm solution comes back.
        let u = CVector::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        let h = &u * u.adjoint();
        let y = CMatrix::from_column_slice(2, 1, &[c(2.0, 0.0), c(2.0, 0.0)]);
        let sol = ridge_with_power(&h, &y, 100.0).unwrap();
        assert_eq!(sol.lambda, 0.0);
        assert!((sol.w[(0, 0)] - c(1.0, 0.0)).norm() < 1e-10);
        assert!((sol.w[(1, 0)] - c(1.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn low_rank_solver_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = rand_mat(&mut rng, 10, 3);
        let y = rand_vec(&mut rng, 10);
        let dense = ShiftedSolver::new(&Hessian::Dense(&z * z.adjoint())).unwrap();
        let low = ShiftedSolver::new(&Hessian::Factored(z.clone())).unwrap();
        assert!(matches!(low, ShiftedSolver::LowRank { .. }));
        for shift in [1e-3, 0.5, 10.0, 1e9] {
            let a = dense.solve(&y, shift);
            let b = low.solve(&y, shift);
            assert!((&a - &b).norm() <= 1e-9 * a.norm(), "shift {shift}");
        }
        assert!((dense.max_eigenvalue() - low.max_eigenvalue()).abs() < 1e-9);
    }

    #[test]
    fn quadratic_form_rejects_non_hermitian() {
        let h = CMatrix::from_row_slice(2, 2, &[c(1., 0.), c(1., 0.), c(0., 0.), c(1., 0.)]);
        assert!(QuadraticForm::dense(h, CVector::zeros(2), 0.0).is_err());
    }

    fn brute_force(q: &QuadraticForm, bits: u32) -> f64 {
        let n = q.dim();
        let levels = 1usize << bits;
        let mut best = f64::INFINITY;
        let mut idx = vec![0u32; n];
        for code in 0..levels.pow(n as u32) {
            let mut rem = code;
            for slot in idx.iter_mut() {
                *slot = (rem % levels) as u32;
                rem /= levels;
            }
            let phi = DiscretePhaseVector::new(bits, idx.clone()).unwrap().values();
            best = best.min(q.evaluate(&phi));
        }
        best
    }

    #[test]
    fn identity_hessian_recovers_elementwise_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for bits in [1, 2] {
            for _ in 0..5 {
                let b = rand_vec(&mut rng, 6);
                let q = QuadraticForm::dense(CMatrix::identity(6, 6), b.clone(), 0.0).unwrap();
                let out = ipdd_quadratic_discrete(
                    &q,
                    &IpddConfig::with_bits(bits),
                    &DiscretePhaseVector::zeros(bits, 6).unwrap(),
                )
                .unwrap();
                let expect: Vec<u32> = b.iter().map(|&x| cmdpp_index(x, bits)).collect();
                assert_eq!(out.phases.indices(), &expect[..]);
                let best = brute_force(&q, bits);
                assert!((q.evaluate(&out.phases.values()) - best).abs() < 1e-9);
                assert!(out.consensus_gap <= 1e-4);
            }
        }
    }

    #[test]
    fn single_variable_is_projection_of_scalar_optimum() {
        let q =
            QuadraticForm::dense(CMatrix::from_element(1, 1, c(2.5, 0.0)), CVector::from_element(1, c(-1.0, 0.4)), 0.0)
                .unwrap();
        let out =
            ipdd_quadratic_discrete(&q, &IpddConfig::with_bits(3), &DiscretePhaseVector::zeros(3, 1).unwrap()).unwrap();
        let opt = c(-1.0, 0.4) / 2.5;
        assert_eq!(out.phases.indices()[0], cmdpp_index(opt, 3));
    }

    #[test]
    fn ipdd_rejects_dimension_mismatch() {
        let q = QuadraticForm::dense(CMatrix::identity(3, 3), CVector::zeros(3), 0.0).unwrap();
        let init = DiscretePhaseVector::zeros(1, 2).unwrap();
        assert!(ipdd_quadratic_discrete(&q, &IpddConfig::with_bits(1), &init).is_err());
    }

    #[test]
    fn consensus_gap_settles_at_the_end() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let z = rand_mat(&mut rng, 12, 20);
            let t = rand_vec(&mut rng, 20);
            let q = QuadraticForm::least_squares(z, &t).unwrap();
            let out =
                ipdd_quadratic_discrete(&q, &IpddConfig::with_bits(2), &DiscretePhaseVector::zeros(2, 12).unwrap())
                    .unwrap();
            let tail = &out.gap_trace[out.gap_trace.len().saturating_sub(10)..];
            assert!(tail.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{tail:?}");
        }
    }

    #[test]
    fn phi_step_decreases_augmented_objective() {
        // For fixed zeta and u the relaxed step is the exact minimizer of the convex subproblem.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = rand_mat(&mut rng, 6, 9);
        let t = rand_vec(&mut rng, 9);
        let q = QuadraticForm::least_squares(z, &t).unwrap();
        let zeta = DiscretePhaseVector::project(&rand_vec(&mut rng, 6), 2).unwrap().values();
        let u = rand_vec(&mut rng, 6);
        let eta = 0.3;
        let aug = |phi: &CVector| q.evaluate(phi) + (&zeta - phi + &u * c(eta, 0.0)).norm_squared() / (2.0 * eta);
        let solver = ShiftedSolver::new(&q.hessian).unwrap();
        let rhs = &q.linear + &zeta * c(1.0 / (2.0 * eta), 0.0) + &u * c(0.5, 0.0);
        let phi = solver.solve(&rhs, 1.0 / (2.0 * eta));
        let best = aug(&phi);
        for _ in 0..200 {
            let pert = &phi + rand_vec(&mut rng, 6) * c(0.05, 0.0);
            assert!(best <= aug(&pert) + 1e-12);
        }
    }

    #[test]
    fn refinement_reaches_single_flip_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for bits in [1, 2, 3] {
            let z = rand_mat(&mut rng, 7, 10);
            let t = rand_vec(&mut rng, 10);
            let q = QuadraticForm::least_squares(z, &t).unwrap();
            let r = q.hessian_matrix();
            let start = DiscretePhaseVector::zeros(bits, 7).unwrap();
            let (out, _) = refine_discrete(&r, &q.linear, start.clone(), 1000);
            let f = q.evaluate(&out.values());
            assert!(f <= q.evaluate(&start.values()) + 1e-12);
            for n in 0..7 {
                for level in 0..1u32 << bits {
                    let mut idx = out.indices().to_vec();
                    idx[n] = level;
                    let cand = DiscretePhaseVector::new(bits, idx).unwrap();
                    assert!(f <= q.evaluate(&cand.values()) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn refinement_disabled_returns_consensus_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let q = QuadraticForm::least_squares(rand_mat(&mut rng, 6, 12), &rand_vec(&mut rng, 12)).unwrap();
        let cfg = IpddConfig { refine_sweeps: 0, ..IpddConfig::with_bits(2) };
        let out = ipdd_quadratic_discrete(&q, &cfg, &DiscretePhaseVector::zeros(2, 6).unwrap()).unwrap();
        assert_eq!(out.phases, out.consensus_phases);
        assert_eq!(out.refined_elements, 0);
    }
}

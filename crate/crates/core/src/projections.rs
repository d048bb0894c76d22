//! Nearest-point maps onto the unit circle and its `v`-bit discrete subset.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::{CVector, Complex64, Error, Result};

/// Largest supported phase resolution. Keeps `2^bits` comfortably inside `u32`.
pub const MAX_BITS: u32 = 24;

/// A RIS (or analog beamformer) configuration with `bits`-bit phases.
///
/// Stored as integer angle indices `z` so every value `exp(j 2 pi z / 2^bits)`
/// is exactly on the grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscretePhaseVector {
    bits: u32,
    indices: Vec<u32>,
}

impl DiscretePhaseVector {
    pub fn new(bits: u32, indices: Vec<u32>) -> Result<Self> {
        check_bits(bits)?;
        let levels = 1u32 << bits;
        if let Some(&bad) = indices.iter().find(|&&z| z >= levels) {
            return Err(Error::invalid(format!("phase index {bad} out of range for {bits}-bit phases")));
        }
        Ok(Self { bits, indices })
    }

    /// All phases zero (`phi_n = 1`).
    pub fn zeros(bits: u32, len: usize) -> Result<Self> {
        Self::new(bits, vec![0; len])
    }

    /// Element-wise discrete projection of arbitrary complex values.
    pub fn project(values: &CVector, bits: u32) -> Result<Self> {
        check_bits(bits)?;
        let indices = values.iter().map(|&k| cmdpp_index(k, bits)).collect();
        Ok(Self { bits, indices })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn levels(&self) -> u32 {
        1 << self.bits
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    /// Phase angles in `[0, 2 pi)`.
    pub fn angles(&self) -> Vec<f64> {
        self.indices.iter().map(|&z| grid_angle(z, self.bits)).collect()
    }

    /// Unit-modulus complex values.
    pub fn values(&self) -> CVector {
        CVector::from_iterator(self.indices.len(), self.indices.iter().map(|&z| grid_value(z, self.bits)))
    }
}

fn check_bits(bits: u32) -> Result<()> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::invalid(format!("phase resolution must be 1..={MAX_BITS} bits, got {bits}")));
    }
    Ok(())
}

/// Angle of grid point `z`, `2 pi z / 2^bits`.
pub fn grid_angle(z: u32, bits: u32) -> f64 {
    TAU * z as f64 / (1u64 << bits) as f64
}

/// `exp(j 2 pi z / 2^bits)`.
pub fn grid_value(z: u32, bits: u32) -> Complex64 {
    Complex64::from_polar(1.0, grid_angle(z, bits))
}

/// Angle of `x` normalized to `[0, 2 pi)`.
pub fn angle_0_2pi(x: Complex64) -> f64 {
    let a = x.im.atan2(x.re);
    if a < 0.0 {
        let wrapped = a + TAU;
        // -tiny + 2 pi rounds to 2 pi
        if wrapped >= TAU {
            0.0
        } else {
            wrapped
        }
    } else {
        a
    }
}

/// Grid index of the nearest `bits`-bit unit-modulus point to `kappa`.
///
/// With `a` the angle of `kappa` in `[0, 2 pi)`, the bracketing grid points
/// are `z - 1` and `z` where `z = floor((2^(v-1) a + pi) / pi)`; the upper one
/// is taken when `a >= (2z - 1) pi / 2^v`, so exact midpoints round up.
/// `kappa = 0` maps to index 0.
pub fn cmdpp_index(kappa: Complex64, bits: u32) -> u32 {
    if kappa.re == 0.0 && kappa.im == 0.0 {
        return 0;
    }
    let a = angle_0_2pi(kappa);
    let half = (1u64 << (bits - 1)) as f64;
    let levels = 1u64 << bits;
    let z = ((half * a + PI) / PI).floor();
    let boundary = (2.0 * z - 1.0) * PI / levels as f64;
    let idx = if a < boundary { z - 1.0 } else { z } as u64;
    (idx % levels) as u32
}

/// Nearest `bits`-bit unit-modulus point to `kappa`, as `(index, value)`.
pub fn cmdpp_project(kappa: Complex64, bits: u32) -> (u32, Complex64) {
    let z = cmdpp_index(kappa, bits);
    (z, grid_value(z, bits))
}

/// Nearest point on the continuous unit circle: `exp(j angle(e))`, or 1 for `e = 0`.
pub fn phase_align(e: Complex64) -> Complex64 {
    if e.re == 0.0 && e.im == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    Complex64::from_polar(1.0, angle_0_2pi(e))
}

/// Element-wise [`phase_align`].
pub fn phase_align_vec(v: &CVector) -> CVector {
    v.map(phase_align)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(kappa: Complex64, bits: u32) -> u32 {
        (0..1u32 << bits)
            .min_by(|&a, &b| {
                let da = (kappa - grid_value(a, bits)).norm();
                let db = (kappa - grid_value(b, bits)).norm();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap()
    }

    #[test]
    fn grid_point_maps_to_itself() {
        assert_eq!(cmdpp_index(Complex64::new(1.0, 0.0), 2), 0);
        for bits in 1..=4 {
            for z in 0..1u32 << bits {
                assert_eq!(cmdpp_index(grid_value(z, bits), bits), z);
            }
        }
    }

    #[test]
    fn magnitude_is_irrelevant() {
        assert_eq!(cmdpp_index(Complex64::from_polar(2.0, 0.3), 2), 0);
        assert_eq!(brute_force(Complex64::from_polar(2.0, 0.3), 2), 0);
    }

    #[test]
    fn midpoint_rounds_up() {
        // atan2(1, 1) is exactly the f64 nearest pi/4.
        let (z, val) = cmdpp_project(Complex64::new(1.0, 1.0), 2);
        assert_eq!(z, 1);
        assert!((val - Complex64::i()).norm() < 1e-15);
    }

    #[test]
    fn just_below_two_pi_wraps_to_zero() {
        let k = Complex64::from_polar(1.0, -1e-9);
        assert_eq!(cmdpp_index(k, 3), 0);
        assert_eq!(cmdpp_index(Complex64::new(1.0, -0.0), 1), 0);
    }

    #[test]
    fn zero_input_conventions() {
        assert_eq!(cmdpp_index(Complex64::new(0.0, 0.0), 3), 0);
        assert_eq!(phase_align(Complex64::new(0.0, 0.0)), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn phase_align_examples() {
        let a = phase_align(Complex64::from_polar(3.0, 1.2));
        assert!((a - Complex64::from_polar(1.0, 1.2)).norm() < 1e-15);
        let b = phase_align(Complex64::new(-2.0, 0.0));
        assert!((b - Complex64::from_polar(1.0, PI)).norm() < 1e-15);
    }

    #[test]
    fn discrete_vector_validation() {
        assert!(DiscretePhaseVector::new(2, vec![0, 3]).is_ok());
        assert!(DiscretePhaseVector::new(2, vec![4]).is_err());
        assert!(DiscretePhaseVector::new(0, vec![]).is_err());
        let v = DiscretePhaseVector::new(2, vec![0, 1, 2, 3]).unwrap();
        assert!(v.values().iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
        assert_eq!(v.angles()[2], PI);
    }

    proptest! {
        #[test]
        fn matches_brute_force(re in -10.0f64..10.0, im in -10.0f64..10.0, bits in 1u32..=5) {
            let k = Complex64::new(re, im);
            prop_assume!(k.norm() > 1e-9);
            prop_assert_eq!(cmdpp_index(k, bits), brute_force(k, bits));
        }

        #[test]
        fn scale_invariant(re in -5.0f64..5.0, im in -5.0f64..5.0, c in 1e-3f64..1e3, bits in 1u32..=4) {
            let k = Complex64::new(re, im);
            prop_assume!(k.norm() > 1e-9);
            prop_assert_eq!(cmdpp_index(k * c, bits), cmdpp_index(k, bits));
        }

        #[test]
        fn idempotent(re in -5.0f64..5.0, im in -5.0f64..5.0, bits in 1u32..=6) {
            let k = Complex64::new(re, im);
            let (z, val) = cmdpp_project(k, bits);
            prop_assert_eq!(cmdpp_index(val, bits), z);
            let p = phase_align(k);
            prop_assert!((phase_align(p) - p).norm() < 1e-15);
        }

        #[test]
        fn fine_grid_approaches_phase_align(re in -5.0f64..5.0, im in -5.0f64..5.0) {
            let k = Complex64::new(re, im);
            prop_assume!(k.norm() > 1e-9);
            let a = grid_angle(cmdpp_index(k, 12), 12);
            let b = angle_0_2pi(phase_align(k));
            let mut diff = (a - b).abs();
            diff = diff.min(TAU - diff);
            prop_assert!(diff <= TAU / 4096.0);
        }
    }
}

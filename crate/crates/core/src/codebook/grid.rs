use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Closed rectangle in the user plane, `[x0, x1] x [z0, z1]` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x: [f64; 2],
    pub z: [f64; 2],
}

impl Region {
    pub fn new(x: [f64; 2], z: [f64; 2]) -> Result<Self> {
        if !(x[0].is_finite() && x[1].is_finite() && z[0].is_finite() && z[1].is_finite()) {
            return Err(Error::invalid("region bounds must be finite"));
        }
        if !(x[1] > x[0]) || !(z[1] > z[0]) {
            return Err(Error::invalid(format!("empty region x {x:?} z {z:?}")));
        }
        Ok(Self { x, z })
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        x >= self.x[0] && x <= self.x[1] && z >= self.z[0] && z <= self.z[1]
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x[0] + self.x[1]), 0.5 * (self.z[0] + self.z[1]))
    }

    pub fn width(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    pub fn depth(&self) -> f64 {
        self.z[1] - self.z[0]
    }

    /// Cell `(ix, iz)` of an `nx x nz` equal subdivision.
    pub fn cell(&self, nx: usize, nz: usize, ix: usize, iz: usize) -> Region {
        let dx = self.width() / nx as f64;
        let dz = self.depth() / nz as f64;
        let x0 = self.x[0] + ix as f64 * dx;
        let z0 = self.z[0] + iz as f64 * dz;
        // Pin the outer edges so neighbouring cells share exact boundaries.
        let x1 = if ix + 1 == nx { self.x[1] } else { self.x[0] + (ix + 1) as f64 * dx };
        let z1 = if iz + 1 == nz { self.z[1] } else { self.z[0] + (iz + 1) as f64 * dz };
        Region { x: [x0, x1], z: [z0, z1] }
    }

    pub fn contains_region(&self, other: &Region) -> bool {
        other.x[0] >= self.x[0] && other.x[1] <= self.x[1] && other.z[0] >= self.z[0] && other.z[1] <= self.z[1]
    }
}

/// Midpoint-rule sample points over a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    pub level: usize,
    pub region: Region,
    pub s_x: usize,
    pub s_z: usize,
    pub step_x: f64,
    pub step_z: f64,
    /// `(x, z)` pairs, x varying fastest.
    pub points: Vec<(f64, f64)>,
}

impl SamplingGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn x_values(&self) -> Vec<f64> {
        (1..=self.s_x).map(|s| midpoint(self.region.x[0], self.step_x, s)).collect()
    }

    pub fn z_values(&self) -> Vec<f64> {
        (1..=self.s_z).map(|s| midpoint(self.region.z[0], self.step_z, s)).collect()
    }
}

fn midpoint(min: f64, step: f64, s: usize) -> f64 {
    min + (s as f64 - 0.5) * step
}

/// Samples `s_x x s_z` points at `min + (s - 1/2)(max - min)/S` along each axis.
pub fn make_sampling_grid(
    x_range: [f64; 2],
    z_range: [f64; 2],
    s_x: usize,
    s_z: usize,
    level: usize,
) -> Result<SamplingGrid> {
    if s_x == 0 || s_z == 0 {
        return Err(Error::invalid("sampling counts must be at least 1"));
    }
    let region = Region::new(x_range, z_range)?;
    let step_x = region.width() / s_x as f64;
    let step_z = region.depth() / s_z as f64;
    let mut points = Vec::with_capacity(s_x * s_z);
    for iz in 1..=s_z {
        let z = midpoint(z_range[0], step_z, iz);
        for ix in 1..=s_x {
            points.push((midpoint(x_range[0], step_x, ix), z));
        }
    }
    Ok(SamplingGrid { level, region, s_x, s_z, step_x, step_z, points })
}

/// Target amplitudes and phases over a sampling grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredPattern {
    pub amplitudes: Vec<f64>,
    pub phases: crate::CVector,
    pub gain: f64,
    pub target_region: Region,
}

impl DesiredPattern {
    /// `p ⊙ p^nu`.
    pub fn target(&self) -> crate::CVector {
        crate::CVector::from_iterator(
            self.amplitudes.len(),
            self.amplitudes.iter().zip(self.phases.iter()).map(|(&a, &p)| p * a),
        )
    }

    pub fn in_region(&self) -> impl Iterator<Item = bool> + '_ {
        self.amplitudes.iter().map(|&a| a > 0.0)
    }
}

/// Linear amplitude of a gain given in dB (`10^(dB/20)`).
pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Amplitude `gain` on grid points inside the closed `target`, zero elsewhere.
/// `phases = None` starts from all-ones.
pub fn desired_pattern(
    grid: &SamplingGrid,
    target: Region,
    gain: f64,
    phases: Option<crate::CVector>,
) -> Result<DesiredPattern> {
    if !(gain > 0.0) {
        return Err(Error::invalid("desired gain must be positive"));
    }
    let overlaps = target.x[0] <= grid.region.x[1]
        && target.x[1] >= grid.region.x[0]
        && target.z[0] <= grid.region.z[1]
        && target.z[1] >= grid.region.z[0];
    if !overlaps {
        return Err(Error::invalid("target region lies outside the sampling grid"));
    }
    let phases = match phases {
        Some(p) if p.len() != grid.len() => {
            return Err(Error::DimensionMismatch {
                what: "desired pattern phases",
                expected: grid.len(),
                actual: p.len(),
            })
        }
        Some(p) => p,
        None => crate::CVector::from_element(grid.len(), crate::Complex64::new(1.0, 0.0)),
    };
    let amplitudes = grid.points.iter().map(|&(x, z)| if target.contains(x, z) { gain } else { 0.0 }).collect();
    Ok(DesiredPattern { amplitudes, phases, gain, target_region: target })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoints_along_x() {
        let g = make_sampling_grid([0.0, 8.0], [1.0, 2.0], 4, 1, 1).unwrap();
        let xs: Vec<f64> = g.points.iter().map(|p| p.0).collect();
        assert_eq!(xs, vec![1.0, 3.0, 5.0, 7.0]);
        assert_eq!(g.points[0].1, 1.5);
    }

    #[test]
    fn single_point_is_rectangle_center() {
        let g = make_sampling_grid([-2.0, 4.0], [10.0, 20.0], 1, 1, 1).unwrap();
        assert_eq!(g.points, vec![(1.0, 15.0)]);
    }

    #[test]
    fn x_varies_fastest() {
        let g = make_sampling_grid([0.0, 2.0], [0.0, 2.0], 2, 2, 1).unwrap();
        assert_eq!(g.points, vec![(0.5, 0.5), (1.5, 0.5), (0.5, 1.5), (1.5, 1.5)]);
    }

    #[test]
    fn default_level_one_grid_has_32_points() {
        let lam = 0.03;
        let g = make_sampling_grid([-1000.0 * lam, 1000.0 * lam], [500.0 * lam, 2500.0 * lam], 8, 4, 1).unwrap();
        assert_eq!(g.len(), 32);
        assert!((g.step_x - 250.0 * lam).abs() < 1e-12);
        assert!((g.step_z - 500.0 * lam).abs() < 1e-12);
    }

    #[test]
    fn rejects_empty_ranges() {
        assert!(make_sampling_grid([1.0, 1.0], [0.0, 1.0], 2, 2, 1).is_err());
        assert!(make_sampling_grid([0.0, 1.0], [0.0, 1.0], 0, 2, 1).is_err());
    }

    #[test]
    fn pattern_amplitudes() {
        let g = make_sampling_grid([0.0, 4.0], [0.0, 4.0], 4, 4, 1).unwrap();
        let all = desired_pattern(&g, g.region, 2.0, None).unwrap();
        assert!(all.amplitudes.iter().all(|&a| a == 2.0));
        let none = desired_pattern(&g, Region::new([0.0, 0.2], [0.0, 0.2]).unwrap(), 2.0, None).unwrap();
        assert!(none.amplitudes.iter().all(|&a| a == 0.0));
        let cell = desired_pattern(&g, g.region.cell(2, 2, 1, 0), 2.0, None).unwrap();
        assert_eq!(cell.amplitudes.iter().filter(|&&a| a > 0.0).count(), 4);
        assert!(desired_pattern(&g, Region::new([10.0, 11.0], [0.0, 1.0]).unwrap(), 2.0, None).is_err());
    }

    #[test]
    fn thirty_db_is_amplitude_31_62() {
        assert!((db_to_amplitude(30.0) - 31.6227766).abs() < 1e-6);
    }

    #[test]
    fn cells_tile_the_region() {
        let r = Region::new([-3.0, 5.0], [1.0, 2.0]).unwrap();
        let c = r.cell(8, 4, 7, 3);
        assert_eq!(c.x[1], 5.0);
        assert_eq!(c.z[1], 2.0);
        assert_eq!(r.cell(8, 4, 2, 0).x[1], r.cell(8, 4, 3, 0).x[0]);
        assert!(r.contains_region(&r.cell(8, 4, 3, 2)));
    }
}

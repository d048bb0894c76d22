//! Deterministic near-field main-path channels.
//!
//! The RIS lies in the x-o-y plane centred at the origin. Element `(n1, n2)`
//! sits at `((n1 - (N1+1)/2) d, (n2 - (N2+1)/2) d, 0)` with 1-based indices;
//! flattened element index is `(n2 - 1) * N1 + (n1 - 1)`, so `n1` runs fastest.
//! BS antenna `m` sits at `(x_b + (m-1) d, y_b, z_b)`.
//!
//! Every entry is `(D0 / D) * exp(-j 2 pi D / lambda)` with `D` the exact
//! Euclidean distance and `D0` the distance of the source to the RIS plane.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CMatrix, CVector, Complex64, Error, Result};

/// Array dimensions, wavelength, node positions and link budget. SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemGeometry {
    pub wavelength_m: f64,
    pub element_spacing_m: f64,
    /// RIS columns (x direction).
    pub n1: usize,
    /// RIS rows (y direction).
    pub n2: usize,
    pub m_antennas: usize,
    pub bs_position_m: [f64; 3],
    pub user_plane_y_m: f64,
    pub max_power_w: f64,
    pub noise_power_w: f64,
}

impl SystemGeometry {
    /// Builds a geometry with half-wavelength element spacing.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        wavelength_m: f64,
        n1: usize,
        n2: usize,
        m_antennas: usize,
        bs_position_m: [f64; 3],
        user_plane_y_m: f64,
        max_power_w: f64,
        noise_power_w: f64,
    ) -> Result<Self> {
        let geom = Self {
            wavelength_m,
            element_spacing_m: wavelength_m / 2.0,
            n1,
            n2,
            m_antennas,
            bs_position_m,
            user_plane_y_m,
            max_power_w,
            noise_power_w,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// The full-scale simulation setup: 10 GHz (lambda = 3 cm), a 128 x 4
    /// RIS, BS at (-40, 0, -25) m, 40 dBm transmit power and -110 dBm noise.
    pub fn full_scale(m_antennas: usize) -> Self {
        Self::new(0.03, 128, 4, m_antennas, [-40.0, 0.0, -25.0], 0.0, dbm_to_watts(40.0), dbm_to_watts(-110.0))
            .expect("preset geometry is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.wavelength_m, self.element_spacing_m, self.user_plane_y_m]
            .iter()
            .chain(self.bs_position_m.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("geometry contains non-finite values"));
        }
        if self.wavelength_m <= 0.0 {
            return Err(Error::invalid("wavelength_m must be positive"));
        }
        if (self.element_spacing_m - self.wavelength_m / 2.0).abs() > 1e-12 * self.wavelength_m {
            return Err(Error::invalid("element_spacing_m must equal wavelength_m / 2"));
        }
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::invalid("n1 and n2 must be positive"));
        }
        if self.m_antennas == 0 {
            return Err(Error::invalid("m_antennas must be at least 1"));
        }
        if !(self.max_power_w > 0.0) || !(self.noise_power_w > 0.0) {
            return Err(Error::invalid("max_power_w and noise_power_w must be positive"));
        }
        Ok(())
    }

    /// Number of RIS elements `N = N1 * N2`.
    pub fn n_elements(&self) -> usize {
        self.n1 * self.n2
    }

    /// Coordinates of flattened element `n` (0-based, `n1` fastest).
    pub fn element_position(&self, n: usize) -> [f64; 3] {
        let d = self.element_spacing_m;
        let i1 = (n % self.n1) as f64 + 1.0;
        let i2 = (n / self.n1) as f64 + 1.0;
        [(i1 - (self.n1 as f64 + 1.0) / 2.0) * d, (i2 - (self.n2 as f64 + 1.0) / 2.0) * d, 0.0]
    }

    /// Coordinates of BS antenna `m` (0-based).
    pub fn antenna_position(&self, m: usize) -> [f64; 3] {
        let [xb, yb, zb] = self.bs_position_m;
        [xb + m as f64 * self.element_spacing_m, yb, zb]
    }

    /// Diagonal aperture of the RIS, `sqrt(((N1-1) d)^2 + ((N2-1) d)^2)`.
    pub fn aperture_m(&self) -> f64 {
        let d = self.element_spacing_m;
        let ax = (self.n1 as f64 - 1.0) * d;
        let ay = (self.n2 as f64 - 1.0) * d;
        ax.hypot(ay)
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("geometry serializes");
        hex_digest(json.as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn spherical_entry(d0: f64, dist: f64, wavelength: f64) -> Complex64 {
    Complex64::from_polar(d0 / dist, -2.0 * PI * dist / wavelength)
}

/// BS-to-RIS channel `G`, an `N x M` matrix whose column `m` is antenna `m`'s response.
pub fn bs_ris_channel(geom: &SystemGeometry) -> Result<CMatrix> {
    geom.validate()?;
    let zb = geom.bs_position_m[2];
    if zb == 0.0 {
        return Err(Error::invalid("BS lies in the RIS plane (z_b = 0)"));
    }
    let d0 = zb.abs();
    let n = geom.n_elements();
    Ok(CMatrix::from_fn(n, geom.m_antennas, |row, m| {
        let dist = distance(geom.element_position(row), geom.antenna_position(m));
        spherical_entry(d0, dist, geom.wavelength_m)
    }))
}

/// RIS-to-user channel `h_k` for a user at `user_xyz`.
pub fn ris_user_channel(geom: &SystemGeometry, user_xyz: [f64; 3]) -> Result<CVector> {
    let zk = user_xyz[2];
    if zk == 0.0 || !zk.is_finite() {
        return Err(Error::invalid("user lies in the RIS plane (z = 0)"));
    }
    let d0 = zk.abs();
    Ok(CVector::from_fn(geom.n_elements(), |row, _| {
        let dist = distance(geom.element_position(row), user_xyz);
        spherical_entry(d0, dist, geom.wavelength_m)
    }))
}

/// Cascaded channel `diag(conj(h)) * G`.
pub fn cascaded_channel(g: &CMatrix, h: &CVector) -> Result<CMatrix> {
    if g.nrows() != h.len() {
        return Err(Error::DimensionMismatch { what: "cascaded channel rows", expected: g.nrows(), actual: h.len() });
    }
    let mut out = g.clone();
    for (mut row, hn) in out.row_iter_mut().zip(h.iter()) {
        row *= hn.conj();
    }
    Ok(out)
}

/// Near-field boundary `2 D^2 / lambda`.
pub fn rayleigh_distance(aperture_m: f64, wavelength_m: f64) -> Result<f64> {
    if !(aperture_m > 0.0) || !(wavelength_m > 0.0) {
        return Err(Error::invalid("aperture and wavelength must be positive"));
    }
    Ok(2.0 * aperture_m * aperture_m / wavelength_m)
}

/// Channels of one BS, the RIS and `K` users.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    pub g_bs_ris: CMatrix,
    pub h_users: Vec<CVector>,
    /// `H_k = diag(conj(h_k)) G`, one `N x M` matrix per user.
    pub cascaded: Vec<CMatrix>,
}

impl ChannelSet {
    pub fn new(geom: &SystemGeometry, users: &[[f64; 3]]) -> Result<Self> {
        let g = bs_ris_channel(geom)?;
        let h_users = users.iter().map(|&u| ris_user_channel(geom, u)).collect::<Result<Vec<_>>>()?;
        Self::from_parts(g, h_users)
    }

    pub fn from_parts(g_bs_ris: CMatrix, h_users: Vec<CVector>) -> Result<Self> {
        let cascaded = h_users.iter().map(|h| cascaded_channel(&g_bs_ris, h)).collect::<Result<Vec<_>>>()?;
        Ok(Self { g_bs_ris, h_users, cascaded })
    }

    /// Builds a set directly from cascaded matrices (no separate `G`, `h`).
    pub fn from_cascaded(cascaded: Vec<CMatrix>) -> Result<Self> {
        let first = cascaded.first().ok_or_else(|| Error::invalid("at least one user channel is required"))?;
        let (n, m) = first.shape();
        if let Some(bad) = cascaded.iter().find(|h| h.shape() != (n, m)) {
            return Err(Error::DimensionMismatch {
                what: "cascaded channel columns",
                expected: m,
                actual: bad.ncols(),
            });
        }
        Ok(Self { g_bs_ris: CMatrix::zeros(n, m), h_users: Vec::new(), cascaded })
    }

    pub fn n_users(&self) -> usize {
        self.cascaded.len()
    }

    pub fn n_elements(&self) -> usize {
        self.cascaded.first().map_or(0, |h| h.nrows())
    }

    pub fn n_antennas(&self) -> usize {
        self.cascaded.first().map_or(0, |h| h.ncols())
    }
}

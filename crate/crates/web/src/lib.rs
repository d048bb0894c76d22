//! WebAssembly bindings for the static demo page in `www/`.

use wasm_bindgen::prelude::*;
use xlris::codebook::{
    db_to_amplitude, desired_pattern, evaluate_beam_pattern, make_sampling_grid, solve_jocc, solve_socc,
    DesignChannels, Region,
};
use xlris::geometry::{self, SystemGeometry};
use xlris::solvers::IpddConfig;
use xlris::training::{self, Scheme};

/// Search window shown by the demo, in meters.
const WINDOW_X: [f64; 2] = [-0.45, 0.45];
const WINDOW_Z: [f64; 2] = [0.15, 0.45];

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Near-field boundary `2 D^2 / lambda` in meters.
#[wasm_bindgen(js_name = rayleighDistance)]
pub fn rayleigh_distance(aperture_m: f64, wavelength_m: f64) -> Result<f64, JsError> {
    geometry::rayleigh_distance(aperture_m, wavelength_m).map_err(js)
}

/// Aperture of an `n1 x n2` half-wavelength array, in meters.
#[wasm_bindgen(js_name = apertureM)]
pub fn aperture_m(n1: usize, n2: usize, wavelength_m: f64) -> f64 {
    let d = wavelength_m / 2.0;
    ((n1 as f64 * d).powi(2) + (n2 as f64 * d).powi(2)).sqrt()
}

/// `[hierarchical, exhaustive]` probe counts; `-1` marks overflow.
#[wasm_bindgen(js_name = trainingOverhead)]
pub fn training_overhead(s: u32, levels: u32) -> Result<Vec<f64>, JsError> {
    let count = |scheme| -> Result<f64, JsError> {
        Ok(training::training_overhead(s as u64, levels, scheme).map_err(js)?.map_or(-1.0, |v| v as f64))
    };
    Ok(vec![count(Scheme::Hierarchical)?, count(Scheme::Exhaustive)?])
}

/// A designed codeword's beam pattern over the demo window.
#[wasm_bindgen]
pub struct Beam {
    nx: usize,
    nz: usize,
    gains: Vec<f64>,
    in_db: f64,
    out_db: f64,
    objective: f64,
}

#[wasm_bindgen]
impl Beam {
    #[wasm_bindgen(getter)]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[wasm_bindgen(getter)]
    pub fn nz(&self) -> usize {
        self.nz
    }

    /// Gains in dB, row-major with z outermost and increasing.
    pub fn gains(&self) -> Vec<f64> {
        self.gains.clone()
    }

    /// Mean gain in dB inside the target region.
    #[wasm_bindgen(getter, js_name = inRegionDb)]
    pub fn in_region_db(&self) -> f64 {
        self.in_db
    }

    #[wasm_bindgen(getter, js_name = outRegionDb)]
    pub fn out_region_db(&self) -> f64 {
        self.out_db
    }

    /// Final pattern residual of the design problem.
    #[wasm_bindgen(getter)]
    pub fn objective(&self) -> f64 {
        self.objective
    }
}

/// Parameters of [`design_beam`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamRequest {
    pub n1: usize,
    pub m_antennas: usize,
    pub bits: u32,
    pub target_x: [f64; 2],
    pub target_z: [f64; 2],
    pub gain_db: f64,
    pub joint: bool,
    pub nx: usize,
    pub nz: usize,
}

/// Designs one codeword for the target rectangle and evaluates its pattern.
pub fn design(req: &BeamRequest) -> xlris::Result<Beam> {
    let mut geom = SystemGeometry::full_scale(req.m_antennas);
    geom.n1 = req.n1;
    geom.n2 = 1;
    geom.validate()?;
    let target = Region::new(req.target_x, req.target_z)?;
    let design_grid = make_sampling_grid(WINDOW_X, WINDOW_Z, 32, 8, 1)?;
    let channels = DesignChannels::new(&geom, &design_grid)?;
    let pattern = desired_pattern(&design_grid, target, db_to_amplitude(req.gain_db), None)?;
    let cfg = IpddConfig::with_bits(req.bits);
    let mut out = solve_socc(&geom, &channels, &pattern, &cfg)?;
    if req.joint {
        out = solve_jocc(&geom, &channels, &pattern, &cfg, &out)?;
    }
    let view = make_sampling_grid(WINDOW_X, WINDOW_Z, req.nx, req.nz, 1)?;
    let gains = evaluate_beam_pattern(&geom, &out.bs_precoder, &out.ris_phases, &view)?;
    let (mut sin, mut nin, mut sout, mut nout) = (0.0, 0usize, 0.0, 0usize);
    for (&(x, z), g) in view.points.iter().zip(&gains) {
        if target.contains(x, z) {
            sin += g;
            nin += 1;
        } else {
            sout += g;
            nout += 1;
        }
    }
    let mean = |s: f64, n: usize| if n > 0 { s / n as f64 } else { f64::NAN };
    Ok(Beam {
        nx: req.nx,
        nz: req.nz,
        gains,
        in_db: mean(sin, nin),
        out_db: mean(sout, nout),
        objective: out.objective,
    })
}

/// Designs a beam toward `[x_min, x_max] x [z_min, z_max]` (meters) for a
/// `n1 x 1` surface and an `m`-antenna BS, and samples it on an `nx x nz` grid.
#[wasm_bindgen(js_name = designBeam)]
#[allow(clippy::too_many_arguments)]
pub fn design_beam(
    n1: usize,
    m: usize,
    bits: u32,
    x_min: f64,
    x_max: f64,
    z_min: f64,
    z_max: f64,
    gain_db: f64,
    joint: bool,
    nx: usize,
    nz: usize,
) -> Result<Beam, JsError> {
    if n1 == 0 || n1 > 512 || nx * nz == 0 || nx * nz > 20_000 {
        return Err(JsError::new("n1 must lie in 1..=512 and the view grid hold at most 20000 points"));
    }
    design(&BeamRequest {
        n1,
        m_antennas: m,
        bits,
        target_x: [x_min, x_max],
        target_z: [z_min, z_max],
        gain_db,
        joint,
        nx,
        nz,
    })
    .map_err(js)
}

/// The demo's search window as `[x_min, x_max, z_min, z_max]`.
#[wasm_bindgen(js_name = searchWindow)]
pub fn search_window() -> Vec<f64> {
    vec![WINDOW_X[0], WINDOW_X[1], WINDOW_Z[0], WINDOW_Z[1]]
}

//! Multi-resolution codebooks for hierarchical beam training.
//!
//! Level `l` splits the search rectangle into `s_x x s_z` regions. Each region
//! gets one codeword (BS precoder plus RIS phases) whose beam pattern
//! approximates gain `C_g` inside the region and zero elsewhere, on a design
//! grid spanning the parent region.

mod design;
mod grid;

use serde::{Deserialize, Serialize};

pub use design::{
    amplitude_db, assemble_training_matrices, evaluate_beam_pattern, pattern_residual, socc_precoder,
    socc_with_prepared, solve_jocc, solve_socc, update_pnu, DesignChannels, DesignOutcome, Method, TrainingMatrices,
    GAIN_FLOOR_DB, MAX_OUTER_ITERS, OUTER_REL_TOL,
};
pub use grid::{db_to_amplitude, desired_pattern, make_sampling_grid, DesiredPattern, Region, SamplingGrid};

use crate::geometry::{bs_ris_channel, SystemGeometry};
use crate::projections::DiscretePhaseVector;
use crate::solvers::{Hessian, IpddConfig, PreparedHessian};
use crate::{CVector, Complex64, Error, Result};

/// Region counts of one level and the design-grid density inside each region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSpec {
    /// Regions along x over the whole search range.
    pub s_x: usize,
    /// Regions along z over the whole search range.
    pub s_z: usize,
    /// Design points per region along x.
    pub design_x: usize,
    /// Design points per region along z.
    pub design_z: usize,
}

/// Everything needed to build a codebook for a geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookSpec {
    pub x_range_m: [f64; 2],
    pub z_range_m: [f64; 2],
    pub levels: Vec<LevelSpec>,
    pub gain_db: f64,
    pub method: Method,
    pub ipdd: IpddConfig,
}

impl CodebookSpec {
    /// Two levels, 8 x 4 then 64 x 16 regions, over x in [-1000, 1000] and
    /// z in [500, 2500] wavelengths with a 30 dB target gain.
    pub fn two_level(wavelength_m: f64, bits: u32, method: Method) -> Self {
        Self {
            x_range_m: [-1000.0 * wavelength_m, 1000.0 * wavelength_m],
            z_range_m: [500.0 * wavelength_m, 2500.0 * wavelength_m],
            levels: vec![
                LevelSpec { s_x: 8, s_z: 4, design_x: 32, design_z: 8 },
                LevelSpec { s_x: 64, s_z: 16, design_x: 4, design_z: 2 },
            ],
            gain_db: 30.0,
            method,
            ipdd: IpddConfig::with_bits(bits),
        }
    }

    pub fn validate(&self) -> Result<()> {
        Region::new(self.x_range_m, self.z_range_m)?;
        if self.levels.is_empty() {
            return Err(Error::invalid("codebook.levels must not be empty"));
        }
        let (mut px, mut pz) = (1, 1);
        for (i, l) in self.levels.iter().enumerate() {
            if l.s_x == 0 || l.s_z == 0 || l.design_x == 0 || l.design_z == 0 {
                return Err(Error::invalid(format!("codebook.levels[{i}] counts must be positive")));
            }
            if l.s_x % px != 0 || l.s_z % pz != 0 || l.s_x * l.s_z <= px * pz {
                return Err(Error::invalid(format!(
                    "codebook.levels[{i}] ({} x {}) must refine the previous level ({px} x {pz})",
                    l.s_x, l.s_z
                )));
            }
            px = l.s_x;
            pz = l.s_z;
        }
        if !self.gain_db.is_finite() {
            return Err(Error::invalid("codebook.gain_db must be finite"));
        }
        self.ipdd.validate()
    }

    pub fn search_region(&self) -> Region {
        Region { x: self.x_range_m, z: self.z_range_m }
    }

    /// Region `(ix, iz)` of level `level` (0-based level index).
    pub fn region(&self, level: usize, ix: usize, iz: usize) -> Region {
        let l = &self.levels[level];
        self.search_region().cell(l.s_x, l.s_z, ix, iz)
    }

    /// Design grid shared by the children of `parent` (a region index of
    /// level `level - 1`; `None` for the top level). `level` is 0-based.
    pub fn design_grid(&self, level: usize, parent: Option<usize>) -> Result<SamplingGrid> {
        let l = self.levels.get(level).ok_or_else(|| Error::invalid(format!("codebook has no level {}", level + 1)))?;
        let (region, psx, psz) = match (level, parent) {
            (0, None) => (self.search_region(), 1, 1),
            (0, Some(_)) | (_, None) => return Err(Error::invalid("only top-level codewords lack a parent")),
            (_, Some(p)) => {
                let up = &self.levels[level - 1];
                if p >= up.s_x * up.s_z {
                    return Err(Error::invalid(format!("parent index {p} out of range")));
                }
                (self.region(level - 1, p % up.s_x, p / up.s_x), up.s_x, up.s_z)
            }
        };
        let (rx, rz) = (l.s_x / psx, l.s_z / psz);
        make_sampling_grid(region.x, region.z, rx * l.design_x, rz * l.design_z, level + 1)
    }
}

/// Analog/digital split of a codeword's precoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridCodeword {
    pub rf_chains: usize,
    /// Column-major `M x M_RF` analog matrix phases.
    pub analog: DiscretePhaseVector,
    pub digital: Vec<Complex64>,
}

/// One beam: precoder and RIS configuration for a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codeword {
    /// 1-based level.
    pub level: usize,
    /// `ix + iz * s_x` within the level.
    pub region_index: usize,
    pub region: Region,
    /// Region index of the enclosing codeword one level up.
    pub parent: Option<usize>,
    pub bs_precoder: Vec<Complex64>,
    pub ris_phases: DiscretePhaseVector,
    /// Final pattern residual of the design problem.
    pub objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hybrid: Option<HybridCodeword>,
}

impl Codeword {
    pub fn precoder(&self) -> CVector {
        CVector::from_column_slice(&self.bs_precoder)
    }
}

/// Per-level codeword store tied to one geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub geometry_fingerprint: String,
    pub spec: CodebookSpec,
    pub levels: Vec<Vec<Codeword>>,
}

/// Convergence data collected while building.
#[derive(Debug, Clone, Default)]
pub struct BuildReport {
    /// `(level, region_index, outcome)` for every codeword.
    pub outcomes: Vec<(usize, usize, DesignOutcome)>,
}

impl Codebook {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Codewords of 0-based level `level` whose parent is `parent`.
    pub fn children(&self, level: usize, parent: Option<usize>) -> Vec<&Codeword> {
        self.levels.get(level).map(|l| l.iter().filter(|c| c.parent == parent).collect()).unwrap_or_default()
    }

    pub fn leaves(&self) -> &[Codeword] {
        self.levels.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn check_geometry(&self, geom: &SystemGeometry) -> Result<()> {
        let fp = geom.fingerprint();
        if fp != self.geometry_fingerprint {
            return Err(Error::Codebook(format!(
                "codebook was built for geometry {} but the supplied geometry is {fp}",
                self.geometry_fingerprint
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cb: Self = serde_json::from_str(s)?;
        cb.validate()?;
        Ok(cb)
    }

    /// Structural checks: nesting, counts and phase resolution.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.levels.len() != self.spec.levels.len() {
            return Err(Error::Codebook("level count does not match the CodebookSpec".into()));
        }
        for (li, (cws, l)) in self.levels.iter().zip(&self.spec.levels).enumerate() {
            if cws.len() != l.s_x * l.s_z {
                return Err(Error::Codebook(format!(
                    "level {} has {} codewords, expected {}",
                    li + 1,
                    cws.len(),
                    l.s_x * l.s_z
                )));
            }
            for (i, cw) in cws.iter().enumerate() {
                if cw.region_index != i || cw.level != li + 1 {
                    return Err(Error::Codebook(format!("level {} codeword {i} is out of order", li + 1)));
                }
                if cw.ris_phases.bits() != self.spec.ipdd.bits {
                    return Err(Error::Codebook("phase resolution differs from the CodebookSpec".into()));
                }
                match (li, cw.parent) {
                    (0, None) => {}
                    (0, Some(_)) | (_, None) => return Err(Error::Codebook("broken parent links".into())),
                    (_, Some(p)) => {
                        let parent = self.levels[li - 1]
                            .get(p)
                            .ok_or_else(|| Error::Codebook("parent index out of range".into()))?;
                        if !parent.region.contains_region(&cw.region) {
                            return Err(Error::Codebook(format!(
                                "level {} region {i} is not inside its parent",
                                li + 1
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Builds every level of the codebook described by `spec`.
pub fn build_codebook(geom: &SystemGeometry, spec: &CodebookSpec) -> Result<(Codebook, BuildReport)> {
    geom.validate()?;
    spec.validate()?;
    let g = bs_ris_channel(geom)?;
    let gain = db_to_amplitude(spec.gain_db);
    let w_socc = socc_precoder(&g, geom.max_power_w)?;
    let mut levels: Vec<Vec<Codeword>> = Vec::new();
    let mut report = BuildReport::default();

    for (li, l) in spec.levels.iter().enumerate() {
        let (psx, psz) = if li == 0 { (1, 1) } else { (spec.levels[li - 1].s_x, spec.levels[li - 1].s_z) };
        let (rx, rz) = (l.s_x / psx, l.s_z / psz);
        let mut slots: Vec<Option<(Codeword, DesignOutcome)>> = vec![None; l.s_x * l.s_z];
        for pz in 0..psz {
            for px in 0..psx {
                let parent = (li > 0).then_some(px + pz * psx);
                let grid = spec.design_grid(li, parent)?;
                let channels = DesignChannels::with_bs_channel(geom, &grid, g.clone())?;
                let a1 = channels.a1(&w_socc);
                let prepared = PreparedHessian::new(&Hessian::Factored(a1.clone()))?;
                let children: Vec<(usize, usize)> = (0..rz).flat_map(|cz| (0..rx).map(move |cx| (cx, cz))).collect();
                let design_one = |&(cx, cz): &(usize, usize)| -> Result<(usize, Codeword, DesignOutcome)> {
                    let (ix, iz) = (px * rx + cx, pz * rz + cz);
                    let region = spec.region(li, ix, iz);
                    let pattern = desired_pattern(&grid, region, gain, None)?;
                    let mut out = socc_with_prepared(&w_socc, &a1, &prepared, &pattern, &spec.ipdd)?;
                    if spec.method == Method::Jocc {
                        out = solve_jocc(geom, &channels, &pattern, &spec.ipdd, &out)?;
                    }
                    let idx = ix + iz * l.s_x;
                    let cw = Codeword {
                        level: li + 1,
                        region_index: idx,
                        region,
                        parent,
                        bs_precoder: out.bs_precoder.iter().copied().collect(),
                        ris_phases: out.ris_phases.clone(),
                        objective: out.objective,
                        hybrid: None,
                    };
                    Ok((idx, cw, out))
                };
                #[cfg(feature = "parallel")]
                let built: Vec<_> = {
                    use rayon::prelude::*;
                    children.par_iter().map(design_one).collect::<Result<_>>()?
                };
                #[cfg(not(feature = "parallel"))]
                let built: Vec<_> = children.iter().map(design_one).collect::<Result<_>>()?;
                for (idx, cw, out) in built {
                    slots[idx] = Some((cw, out));
                }
            }
        }
        let mut level = Vec::with_capacity(slots.len());
        for slot in slots {
            let (cw, out) = slot.expect("every region is designed exactly once");
            report.outcomes.push((cw.level, cw.region_index, out));
            level.push(cw);
        }
        levels.push(level);
    }
    let cb = Codebook { geometry_fingerprint: geom.fingerprint(), spec: spec.clone(), levels };
    cb.validate()?;
    Ok((cb, report))
}

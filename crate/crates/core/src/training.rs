//! Hierarchical and exhaustive beam training against a codebook.
//!
//! The user reports which probe of a level gave the highest SNR (lowest index
//! on ties); training then descends into that region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, Codeword};
use crate::geometry::{bs_ris_channel, ris_user_channel, SystemGeometry};
use crate::{CMatrix, Complex64, Error, Result};

/// Receiver noise model used while probing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ProbeNoise {
    Noiseless,
    /// One complex Gaussian noise draw per probe from a seeded stream.
    Awgn {
        seed: u64,
    },
}

/// Search scheme whose probe count [`training_overhead`] reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Hierarchical,
    Exhaustive,
}

/// Probe count for a regular tree with `s` children per node and `l` levels:
/// `s * l` hierarchical, `s^l` exhaustive. `None` on overflow.
pub fn training_overhead(s: u64, l: u32, scheme: Scheme) -> Result<Option<u64>> {
    if s == 0 || l == 0 {
        return Err(Error::invalid("training overhead needs S >= 1 and L >= 1"));
    }
    Ok(match scheme {
        Scheme::Hierarchical => s.checked_mul(l as u64),
        Scheme::Exhaustive => s.checked_pow(l),
    })
}

/// One probe of one codeword.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    /// 1-based level of the probed codeword.
    pub level: usize,
    pub region_index: usize,
    /// Linear SNR reported for the probe.
    pub snr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingResult {
    /// Selected region index per level.
    pub selected_path: Vec<usize>,
    /// Center of the selected leaf region.
    pub estimated_user_xz: (f64, f64),
    pub probes_used: usize,
    pub probes: Vec<ProbeRecord>,
    /// Noiseless SNR of the selected leaf codeword at the true user position.
    pub leaf_snr: f64,
    /// `log2(1 + leaf_snr)`.
    pub achieved_rate: f64,
}

impl TrainingResult {
    pub fn snr_trace(&self) -> Vec<f64> {
        self.probes.iter().map(|p| p.snr).collect()
    }
}

/// Evaluates received SNRs of codewords at one user position.
pub struct Prober<'a> {
    geom: &'a SystemGeometry,
    g: CMatrix,
    noise_power: f64,
    rng: Option<ChaCha8Rng>,
}

impl<'a> Prober<'a> {
    pub fn new(geom: &'a SystemGeometry, noise_power: f64, noise: ProbeNoise) -> Result<Self> {
        if !(noise_power > 0.0) {
            return Err(Error::invalid("noise power must be positive"));
        }
        let rng = match noise {
            ProbeNoise::Noiseless => None,
            ProbeNoise::Awgn { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        Ok(Self { geom, g: bs_ris_channel(geom)?, noise_power, rng })
    }

    /// Noiseless received amplitude `phi^H C(user) w`.
    pub fn received(&self, cw: &Codeword, user_xyz: [f64; 3]) -> Result<Complex64> {
        let h = ris_user_channel(self.geom, user_xyz)?;
        let w = cw.precoder();
        if w.len() != self.g.ncols() || cw.ris_phases.len() != self.g.nrows() {
            return Err(Error::Codebook("codeword dimensions do not match the geometry".into()));
        }
        let gw = &self.g * w;
        let phi = cw.ris_phases.values();
        Ok(phi.iter().zip(h.iter()).zip(gw.iter()).map(|((p, h), g)| (p * h).conj() * g).sum())
    }

    /// `|phi^H C w + n|^2 / sigma^2`, with `n = 0` when noiseless.
    pub fn probe(&mut self, cw: &Codeword, user_xyz: [f64; 3]) -> Result<f64> {
        let mut y = self.received(cw, user_xyz)?;
        if let Some(rng) = self.rng.as_mut() {
            let s = (self.noise_power / 2.0).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            y += Complex64::new(re * s, im * s);
        }
        Ok(y.norm_sqr() / self.noise_power)
    }
}

/// Single SNR probe of `cw` at `user_xyz`.
pub fn probe_snr(
    geom: &SystemGeometry,
    cw: &Codeword,
    user_xyz: [f64; 3],
    noise_power: f64,
    noise: ProbeNoise,
) -> Result<f64> {
    Prober::new(geom, noise_power, noise)?.probe(cw, user_xyz)
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn finish(
    prober: &Prober,
    cw: &Codeword,
    user_xyz: [f64; 3],
    path: Vec<usize>,
    probes: Vec<ProbeRecord>,
) -> Result<TrainingResult> {
    let leaf_snr = prober.received(cw, user_xyz)?.norm_sqr() / prober.noise_power;
    Ok(TrainingResult {
        selected_path: path,
        estimated_user_xz: cw.region.center(),
        probes_used: probes.len(),
        probes,
        leaf_snr,
        achieved_rate: (1.0 + leaf_snr).log2(),
    })
}

/// Level-by-level search: probe the children of the current region, descend into the best.
pub fn hierarchical_train(
    codebook: &Codebook,
    geom: &SystemGeometry,
    user_xyz: [f64; 3],
    noise_power: f64,
    noise: ProbeNoise,
) -> Result<TrainingResult> {
    if codebook.levels.is_empty() || codebook.levels[0].is_empty() {
        return Err(Error::Codebook("empty codebook".into()));
    }
    let mut prober = Prober::new(geom, noise_power, noise)?;
    let mut parent = None;
    let mut path = Vec::new();
    let mut probes = Vec::new();
    let mut chosen: Option<&Codeword> = None;
    for level in 0..codebook.n_levels() {
        let children = codebook.children(level, parent);
        if children.is_empty() {
            return Err(Error::Codebook(format!("level {} has no children under {parent:?}", level + 1)));
        }
        let mut snrs = Vec::with_capacity(children.len());
        for cw in &children {
            let snr = prober.probe(cw, user_xyz)?;
            probes.push(ProbeRecord { level: level + 1, region_index: cw.region_index, snr });
            snrs.push(snr);
        }
        let best = children[argmax_first(&snrs)];
        path.push(best.region_index);
        parent = Some(best.region_index);
        chosen = Some(best);
    }
    let leaf = chosen.expect("at least one level");
    finish(&prober, leaf, user_xyz, path, probes)
}

/// Probes every leaf codeword once and keeps the best.
pub fn exhaustive_train(
    codebook: &Codebook,
    geom: &SystemGeometry,
    user_xyz: [f64; 3],
    noise_power: f64,
    noise: ProbeNoise,
) -> Result<TrainingResult> {
    let leaves = codebook.leaves();
    if leaves.is_empty() {
        return Err(Error::Codebook("empty codebook".into()));
    }
    let mut prober = Prober::new(geom, noise_power, noise)?;
    let mut probes = Vec::with_capacity(leaves.len());
    for cw in leaves {
        let snr = prober.probe(cw, user_xyz)?;
        probes.push(ProbeRecord { level: cw.level, region_index: cw.region_index, snr });
    }
    let snrs: Vec<f64> = probes.iter().map(|p| p.snr).collect();
    let leaf = &leaves[argmax_first(&snrs)];
    let mut path = vec![leaf.region_index];
    let mut up = leaf.parent;
    for level in (0..codebook.n_levels().saturating_sub(1)).rev() {
        let Some(p) = up else { break };
        path.insert(0, p);
        up = codebook.levels[level][p].parent;
    }
    finish(&prober, leaf, user_xyz, path, probes)
}

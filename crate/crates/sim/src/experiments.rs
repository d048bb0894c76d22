//! Experiment runners. Each returns its artifacts in memory; writing them and
//! the manifest is left to [`crate::run`].

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use xlris::benchmarks::{achievable_rates, matched_filter_start, wmmse_sum_rate, WmmseState};
use xlris::codebook::{build_codebook, evaluate_beam_pattern, Codebook, CodebookSpec};
use xlris::geometry::{dbm_to_watts, ChannelSet, SystemGeometry};
use xlris::hybrid::hybrid_factorize;
use xlris::im::{jain_index, run_im, ImOutcome};
use xlris::solvers::IpddConfig;
use xlris::training::{exhaustive_train, hierarchical_train, training_overhead, ProbeNoise, Scheme, TrainingResult};

use crate::config::{Experiment, ExperimentConfig, ImBlock, NoiseMode, SweepParam};
use crate::error::{SimError, SimResult, Stage};
use crate::export::{Cell, Table};

/// Named artifact bytes, ordered by name.
pub type Artifacts = BTreeMap<String, Vec<u8>>;

/// Inputs that are not part of the config document.
#[derive(Debug, Clone, Default)]
pub struct RunInputs {
    /// Prebuilt codebook for `train` and `hybrid`; built from the config otherwise.
    pub codebook: Option<Codebook>,
}

/// Independent random stream `stream` of the run seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn add_table(out: &mut Artifacts, t: &Table) -> SimResult<()> {
    out.insert(format!("{}.csv", t.name), t.to_csv()?);
    Ok(())
}

fn db10(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn run_experiment(exp: Experiment, cfg: &ExperimentConfig, inputs: &RunInputs) -> SimResult<Artifacts> {
    cfg.validate_for(exp)?;
    match exp {
        Experiment::CodebookBuild => codebook_build(cfg),
        Experiment::Train => train(cfg, inputs),
        Experiment::Im => im(cfg),
        Experiment::Wmmse => wmmse(cfg),
        Experiment::Hybrid => hybrid(cfg, inputs),
        Experiment::Sweep => sweep(cfg),
    }
}

fn codebook_spec(cfg: &ExperimentConfig) -> SimResult<CodebookSpec> {
    cfg.codebook.as_ref().expect("validated").spec()
}

fn summary_table(cb: &Codebook) -> Table {
    let mut t = Table::new(
        "codebook_summary",
        &["level", "region_index", "parent", "x_min_m", "x_max_m", "z_min_m", "z_max_m", "objective"],
    );
    for cw in cb.levels.iter().flatten() {
        t.push(vec![
            cw.level.into(),
            cw.region_index.into(),
            cw.parent.map_or(Cell::Empty, |p| p.into()),
            cw.region.x[0].into(),
            cw.region.x[1].into(),
            cw.region.z[0].into(),
            cw.region.z[1].into(),
            cw.objective.into(),
        ]);
    }
    t
}

/// Beam pattern `x_m, z_m, gain_db` of one codeword on its design grid.
pub fn pattern_table(geom: &SystemGeometry, cb: &Codebook, level: usize, index: usize) -> SimResult<Table> {
    let cw = cb.levels.get(level.wrapping_sub(1)).and_then(|l| l.get(index)).ok_or_else(|| SimError::Config {
        field: "codebook.export_patterns".into(),
        message: format!("no codeword at level {level}, index {index}"),
    })?;
    let grid = cb.spec.design_grid(level - 1, cw.parent).stage("pattern grid")?;
    let gains = evaluate_beam_pattern(geom, &cw.precoder(), &cw.ris_phases, &grid).stage("beam pattern")?;
    let mut t = Table::new(format!("pattern_l{level}_r{index}"), &["x_m", "z_m", "gain_db"]);
    for (&(x, z), g) in grid.points.iter().zip(gains) {
        t.push(vec![x.into(), z.into(), g.into()]);
    }
    Ok(t)
}

fn codebook_build(cfg: &ExperimentConfig) -> SimResult<Artifacts> {
    let geom = cfg.geometry()?;
    let spec = codebook_spec(cfg)?;
    let (cb, _) = build_codebook(&geom, &spec).stage("codebook build")?;
    let mut out = Artifacts::new();
    out.insert("codebook.json".into(), cb.to_json().stage("codebook json")?.into_bytes());
    add_table(&mut out, &summary_table(&cb))?;
    for &[level, index] in &cfg.codebook.as_ref().expect("validated").export_patterns {
        add_table(&mut out, &pattern_table(&geom, &cb, level, index)?)?;
    }
    Ok(out)
}

fn obtain_codebook(geom: &SystemGeometry, spec: &CodebookSpec, inputs: &RunInputs) -> SimResult<Codebook> {
    match &inputs.codebook {
        Some(cb) => {
            cb.check_geometry(geom).stage("codebook")?;
            Ok(cb.clone())
        }
        None => Ok(build_codebook(geom, spec).stage("codebook build")?.0),
    }
}

fn train(cfg: &ExperimentConfig, inputs: &RunInputs) -> SimResult<Artifacts> {
    let geom = cfg.geometry()?;
    let spec = codebook_spec(cfg)?;
    let tb = cfg.training.as_ref().expect("validated");
    let seed = cfg.seed()?;
    let cb = obtain_codebook(&geom, &spec, inputs)?;
    let noise_power = tb.snr_db.map_or(geom.noise_power_w, |s| 10f64.powf(-s / 10.0));
    let mut rng = stream_rng(seed, 0);
    let users: Vec<[f64; 3]> = (0..tb.placements)
        .map(|_| {
            let x = rng.random_range(spec.x_range_m[0]..spec.x_range_m[1]);
            let z = rng.random_range(spec.z_range_m[0]..spec.z_range_m[1]);
            [x, geom.user_plane_y_m, z]
        })
        .collect();
    let noise = |p: usize, salt: u64| match tb.noise {
        NoiseMode::Noiseless => ProbeNoise::Noiseless,
        NoiseMode::Awgn => ProbeNoise::Awgn { seed: stream_rng(seed, 1 + 2 * p as u64 + salt).random() },
    };
    let results: Vec<(TrainingResult, Option<TrainingResult>)> = users
        .par_iter()
        .enumerate()
        .map(|(p, &u)| {
            let h =
                hierarchical_train(&cb, &geom, u, noise_power, noise(p, 0)).stage(format!("training placement {p}"))?;
            let e = tb
                .exhaustive
                .then(|| exhaustive_train(&cb, &geom, u, noise_power, noise(p, 1)))
                .transpose()
                .stage(format!("exhaustive placement {p}"))?;
            Ok((h, e))
        })
        .collect::<SimResult<_>>()?;

    let mut t = Table::new(
        "train",
        &[
            "placement",
            "x_m",
            "z_m",
            "path",
            "leaf_index",
            "leaf_contains_user",
            "probes",
            "leaf_snr_db",
            "rate",
            "exhaustive_leaf_index",
            "exhaustive_probes",
            "exhaustive_leaf_snr_db",
            "exhaustive_rate",
        ],
    );
    let mut hits = 0;
    let (mut rate_h, mut rate_e) = (0.0, 0.0);
    for (p, ((h, e), u)) in results.iter().zip(&users).enumerate() {
        let leaf = *h.selected_path.last().expect("non-empty path");
        let contains = cb.leaves()[leaf].region.contains(u[0], u[2]);
        hits += contains as usize;
        rate_h += h.achieved_rate;
        let path: Vec<String> = h.selected_path.iter().map(|i| i.to_string()).collect();
        let mut row: Vec<Cell> = vec![
            p.into(),
            u[0].into(),
            u[2].into(),
            path.join("/").into(),
            leaf.into(),
            contains.into(),
            h.probes_used.into(),
            db10(h.leaf_snr).into(),
            h.achieved_rate.into(),
        ];
        match e {
            Some(e) => {
                rate_e += e.achieved_rate;
                row.extend([
                    (*e.selected_path.last().expect("non-empty path")).into(),
                    e.probes_used.into(),
                    db10(e.leaf_snr).into(),
                    e.achieved_rate.into(),
                ]);
            }
            None => row.extend([Cell::Empty, Cell::Empty, Cell::Empty, Cell::Empty]),
        }
        t.push(row);
    }
    let n = users.len() as f64;
    let mut s = Table::new(
        "train_summary",
        &["placements", "leaf_hits", "mean_rate", "mean_exhaustive_rate", "hierarchical_probes", "exhaustive_probes"],
    );
    let per_level: Vec<usize> =
        (0..cb.n_levels()).map(|l| cb.levels[l].len() / if l == 0 { 1 } else { cb.levels[l - 1].len() }).collect();
    s.push(vec![
        users.len().into(),
        hits.into(),
        (rate_h / n).into(),
        if tb.exhaustive { (rate_e / n).into() } else { Cell::Empty },
        per_level.iter().sum::<usize>().into(),
        cb.leaves().len().into(),
    ]);
    let mut out = Artifacts::new();
    add_table(&mut out, &t)?;
    add_table(&mut out, &s)?;
    // Overhead of a regular tree with as many children per level as the top level.
    let mut o = Table::new("overhead", &["levels", "s", "hierarchical", "exhaustive"]);
    let s0 = per_level[0] as u64;
    for l in 1..=cb.n_levels() as u32 {
        let hier = training_overhead(s0, l, Scheme::Hierarchical).stage("overhead")?;
        let exh = training_overhead(s0, l, Scheme::Exhaustive).stage("overhead")?;
        o.push(vec![(l as usize).into(), s0.into(), opt_u64(hier), opt_u64(exh)]);
    }
    add_table(&mut out, &o)?;
    Ok(out)
}

fn opt_u64(x: Option<u64>) -> Cell {
    x.map_or(Cell::Empty, Cell::from)
}

/// One multiuser instance: users and their cascaded channels.
pub struct Instance {
    pub users: Vec<[f64; 3]>,
    pub channels: ChannelSet,
    pub geom: SystemGeometry,
}

/// Geometry used by multiuser runs (antenna override applied).
pub fn multiuser_geometry(cfg: &ExperimentConfig) -> SimResult<SystemGeometry> {
    let mut geom = cfg.geometry()?;
    if let Some(m) = cfg.im.as_ref().and_then(|im| im.m_antennas) {
        geom.m_antennas = m;
    }
    Ok(geom)
}

/// Instance `i`: fixed positions, or seeded uniform placement from stream `i`.
pub fn make_instance(geom: &SystemGeometry, im: &ImBlock, seed: u64, i: usize) -> SimResult<Instance> {
    let users = match &im.positions_m {
        Some(p) => p.clone(),
        None => {
            let mut rng = stream_rng(seed, i as u64);
            (0..im.users)
                .map(|_| {
                    let x = rng.random_range(im.x_range_m[0]..im.x_range_m[1]);
                    let z = rng.random_range(im.z_range_m[0]..im.z_range_m[1]);
                    [x, geom.user_plane_y_m, z]
                })
                .collect()
        }
    };
    let channels = ChannelSet::new(geom, &users).stage(format!("instance {i} channels"))?;
    Ok(Instance { users, channels, geom: geom.clone() })
}

fn im_ipdd(im: &ImBlock) -> IpddConfig {
    IpddConfig { bits: im.bits, ..im.ipdd }
}

/// IM on one instance.
pub fn run_im_instance(inst: &Instance, im: &ImBlock) -> SimResult<ImOutcome> {
    let k = inst.users.len();
    let params = im.params.resolve(inst.geom.max_power_w, k)?;
    let sigma2 = vec![inst.geom.noise_power_w; k];
    run_im(&inst.channels.cascaded, &params, &im_ipdd(im), inst.geom.max_power_w, &sigma2, &im.solver).stage("im")
}

/// WMMSE on one instance from the matched-filter start.
pub fn run_wmmse_instance(inst: &Instance, im: &ImBlock, iters: usize) -> SimResult<WmmseState> {
    let k = inst.users.len();
    let sigma2 = vec![inst.geom.noise_power_w; k];
    let cascaded = &inst.channels.cascaded;
    let start = matched_filter_start(cascaded, inst.geom.max_power_w, im.bits).stage("wmmse start")?;
    wmmse_sum_rate(cascaded, &im_ipdd(im), inst.geom.max_power_w, &sigma2, &start, iters).stage("wmmse")
}

/// Rates of the WMMSE iterate that produced `sum_rate_trace[t]`.
pub fn wmmse_rates(inst: &Instance, st: &WmmseState, t: usize) -> SimResult<Vec<f64>> {
    let sigma2 = vec![inst.geom.noise_power_w; inst.users.len()];
    let (w, phi) = match st.iterates.get(t) {
        Some(it) => (&it.w_matrix, &it.ris_phases),
        None => (&st.w_matrix, &st.ris_phases),
    };
    achievable_rates(&inst.channels.cascaded, w, &phi.values(), &sigma2).stage("rates")
}

fn rate_header(base: &[&str], k: usize, tail: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = base.iter().map(|s| s.to_string()).collect();
    h.extend((1..=k).map(|i| format!("rate_{i}")));
    h.extend(tail.iter().map(|s| s.to_string()));
    h
}

fn instances(cfg: &ExperimentConfig) -> SimResult<Vec<Instance>> {
    let im = cfg.im.as_ref().expect("validated");
    let geom = multiuser_geometry(cfg)?;
    let seed = cfg.seed()?;
    (0..im.instances).map(|i| make_instance(&geom, im, seed, i)).collect()
}

fn positions_table(insts: &[Instance]) -> Table {
    let mut t = Table::new("users", &["instance", "user", "x_m", "y_m", "z_m"]);
    for (i, inst) in insts.iter().enumerate() {
        for (u, p) in inst.users.iter().enumerate() {
            t.push(vec![i.into(), (u + 1).into(), p[0].into(), p[1].into(), p[2].into()]);
        }
    }
    t
}

fn im(cfg: &ExperimentConfig) -> SimResult<Artifacts> {
    let im = cfg.im.as_ref().expect("validated");
    let insts = instances(cfg)?;
    let outcomes: Vec<ImOutcome> = insts
        .par_iter()
        .enumerate()
        .map(|(i, inst)| run_im_instance(inst, im).map_err(|e| with_instance(e, i)))
        .collect::<SimResult<_>>()?;
    let k = im.users;
    let mut trace = Table::with_header(
        "im_trace",
        rate_header(&["instance", "iter", "alpha", "beta", "gamma1", "gamma2", "gamma3", "J", "sum_rate"], k, &[]),
    );
    let mut summary = Table::with_header(
        "im_summary",
        rate_header(&["instance", "J", "sum_rate"], k, &["alpha", "beta", "gamma1", "gamma2", "gamma3"]),
    );
    for (i, o) in outcomes.iter().enumerate() {
        for row in &o.trace {
            let mut r: Vec<Cell> = vec![i.into(), row.iteration.into()];
            r.extend(row.chi.iter().map(|&c| c.into()));
            r.push(row.jain.into());
            r.push(row.sum_rate.into());
            r.extend(row.rates.iter().map(|&x| x.into()));
            trace.push(r);
        }
        let mut r: Vec<Cell> = vec![i.into(), o.best.jain.into(), o.best.sum_rate.into()];
        r.extend(o.best.rates.iter().map(|&x| x.into()));
        r.extend(o.best_params.chi().iter().map(|&c| c.into()));
        summary.push(r);
    }
    let mut out = Artifacts::new();
    add_table(&mut out, &positions_table(&insts))?;
    add_table(&mut out, &trace)?;
    add_table(&mut out, &summary)?;
    Ok(out)
}

fn with_instance(e: SimError, i: usize) -> SimError {
    match e {
        SimError::Core { stage, source } => SimError::Core { stage: format!("instance {i}: {stage}"), source },
        other => other,
    }
}

fn jain_cell(rates: &[f64]) -> Cell {
    jain_index(rates).ok().into()
}

fn wmmse(cfg: &ExperimentConfig) -> SimResult<Artifacts> {
    let im = cfg.im.as_ref().expect("validated");
    let iters = cfg.benchmark.as_ref().expect("validated").wmmse_iters;
    let insts = instances(cfg)?;
    let states: Vec<WmmseState> = insts
        .par_iter()
        .enumerate()
        .map(|(i, inst)| run_wmmse_instance(inst, im, iters).map_err(|e| with_instance(e, i)))
        .collect::<SimResult<_>>()?;
    let k = im.users;
    let mut trace = Table::with_header("wmmse_trace", rate_header(&["instance", "iteration", "sum_rate"], k, &["J"]));
    let mut summary = Table::with_header(
        "wmmse_summary",
        rate_header(&["instance", "sum_rate"], k, &["J", "rejected_precoder_steps", "rejected_phase_steps"]),
    );
    for (i, (inst, st)) in insts.iter().zip(&states).enumerate() {
        for (t, &sr) in st.sum_rate_trace.iter().enumerate() {
            let rates = wmmse_rates(inst, st, t)?;
            let mut r: Vec<Cell> = vec![i.into(), t.into(), sr.into()];
            r.extend(rates.iter().map(|&x| x.into()));
            r.push(jain_cell(&rates));
            trace.push(r);
        }
        let rates = wmmse_rates(inst, st, st.sum_rate_trace.len())?;
        let mut r: Vec<Cell> = vec![i.into(), st.sum_rate().into()];
        r.extend(rates.iter().map(|&x| x.into()));
        r.push(jain_cell(&rates));
        r.push(st.rejected_precoder_steps.into());
        r.push(st.rejected_phase_steps.into());
        summary.push(r);
    }
    let mut out = Artifacts::new();
    add_table(&mut out, &positions_table(&insts))?;
    add_table(&mut out, &trace)?;
    add_table(&mut out, &summary)?;
    Ok(out)
}

fn hybrid(cfg: &ExperimentConfig, inputs: &RunInputs) -> SimResult<Artifacts> {
    let hb = cfg.hybrid.as_ref().expect("validated");
    let mut geom = cfg.geometry()?;
    if let Some(m) = hb.m_antennas {
        geom.m_antennas = m;
    }
    let mut spec = codebook_spec(cfg)?;
    if let Some(l) = hb.levels {
        spec.levels.truncate(l);
    }
    let mut cb = obtain_codebook(&geom, &spec, inputs)?;
    let ipdd = cb.spec.ipdd;
    let jobs: Vec<(usize, usize)> =
        cb.levels.iter().enumerate().flat_map(|(l, cws)| (0..cws.len()).map(move |i| (l, i))).collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(l, i)| {
            let w = cb.levels[l][i].precoder();
            hybrid_factorize(&w, hb.rf_chains, hb.bits, &ipdd, geom.max_power_w, hb.rounds)
                .stage(format!("hybrid level {} codeword {i}", l + 1))
        })
        .collect::<SimResult<_>>()?;
    let mut trace = Table::new("hybrid_trace", &["level", "region_index", "round", "residual"]);
    let mut summary = Table::new(
        "hybrid_summary",
        &["level", "region_index", "residual", "relative_residual", "power", "rejected_analog_steps"],
    );
    for (&(l, i), h) in jobs.iter().zip(&results) {
        let w = cb.levels[l][i].precoder();
        for (r, &res) in h.residual_trace.iter().enumerate() {
            trace.push(vec![(l + 1).into(), i.into(), r.into(), res.into()]);
        }
        let norm = w.norm_squared();
        summary.push(vec![
            (l + 1).into(),
            i.into(),
            h.residual.into(),
            (if norm > 0.0 { h.residual / norm } else { 0.0 }).into(),
            h.precoder().norm_squared().into(),
            h.rejected_analog_steps.into(),
        ]);
        cb.levels[l][i].hybrid = Some(h.to_codeword());
    }
    let mut out = Artifacts::new();
    out.insert("codebook_hybrid.json".into(), cb.to_json().stage("codebook json")?.into_bytes());
    add_table(&mut out, &trace)?;
    add_table(&mut out, &summary)?;
    Ok(out)
}

fn sweep(cfg: &ExperimentConfig) -> SimResult<Artifacts> {
    let sw = cfg.sweep.as_ref().expect("validated");
    let base_im = cfg.im.as_ref().expect("validated");
    let iters = cfg.benchmark.as_ref().expect("validated").wmmse_iters;
    let base_geom = multiuser_geometry(cfg)?;
    let seed = cfg.seed()?;
    let points: Vec<(f64, usize)> =
        sw.values.iter().flat_map(|&v| (0..base_im.instances).map(move |i| (v, i))).collect();
    let rows: Vec<Vec<Cell>> = points
        .par_iter()
        .map(|&(v, i)| -> SimResult<Vec<Cell>> {
            let mut geom = base_geom.clone();
            let mut im = base_im.clone();
            match sw.parameter {
                SweepParam::N1 => geom.n1 = v as usize,
                SweepParam::MAntennas => geom.m_antennas = v as usize,
                SweepParam::Bits => im.bits = v as u32,
                SweepParam::MaxPowerDbm => geom.max_power_w = dbm_to_watts(v),
            }
            geom.validate().stage("sweep geometry")?;
            let inst = make_instance(&geom, &im, seed, i)?;
            let o = run_im_instance(&inst, &im).map_err(|e| with_instance(e, i))?;
            let st = run_wmmse_instance(&inst, &im, iters).map_err(|e| with_instance(e, i))?;
            let wr = wmmse_rates(&inst, &st, st.sum_rate_trace.len())?;
            Ok(vec![
                v.into(),
                i.into(),
                o.best.jain.into(),
                o.best.sum_rate.into(),
                jain_cell(&wr),
                st.sum_rate().into(),
            ])
        })
        .collect::<SimResult<_>>()?;
    let name = serde_json::to_value(sw.parameter).expect("serializes");
    let mut t = Table::new("sweep", &["value", "instance", "im_J", "im_sum_rate", "wmmse_J", "wmmse_sum_rate"]);
    t.header[0] = name.as_str().expect("string variant").to_string();
    for r in rows {
        t.push(r);
    }
    let mut out = Artifacts::new();
    add_table(&mut out, &t)?;
    Ok(out)
}

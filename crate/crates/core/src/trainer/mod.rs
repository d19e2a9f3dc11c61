//! Staged rate-distortion training of the grid, context model, masks and,
//! in joint mode, the attributes themselves.

pub mod adam;
pub mod baseline;
pub mod gradcheck;
pub mod objective;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hashgrid::{Binarization, Footprint, GridConfig, HashGrid};
use crate::masking::{mask_loss, mask_loss_grad, MaskSet, DEFAULT_THRESHOLD};
use crate::math::round_half_away;
use crate::ratemodel::{bits_of, interval_probability, ContextModel, FamilyBits, ForwardCache, DEFAULT_HIDDEN, DEFAULT_Q0};
use crate::scene::{scene_bounds, Aabb, AnchorScene, AttributeLayout, Family, DEFAULT_BOUNDS_PAD};

pub use adam::Adam;
pub use baseline::{baseline_bits, BaselineBits};
pub use gradcheck::{grad_check, GradCheckReport, GradComponent};
pub use objective::{anchor_objective, AnchorInput, AnchorTerms, Coefficients, GradSink, Relaxation, Stage, Workspace};

/// Distortion weights per family: `0.02 / Q0^2`.
pub const DEFAULT_DISTORTION_WEIGHTS: [f64; 3] = [0.02, 2.0e4, 0.5];

#[cfg(feature = "parallel")]
const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Attributes stay fixed; only the entropy model and masks learn.
    RateOnly,
    /// Attributes are optimized as well.
    Joint,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::RateOnly => "rate-only",
            TrainMode::Joint => "joint",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rate-only" => Ok(TrainMode::RateOnly),
            "joint" => Ok(TrainMode::Joint),
            other => Err(Error::InvalidConfig(alloc::format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda_e: f64,
    pub lambda_m: f64,
    pub iterations: usize,
    /// Ends of the warmup and noise phases as fractions of `iterations`.
    pub phases: [f64; 2],
    pub sample_frac: f64,
    pub lr_grid: f64,
    pub lr_masks: f64,
    pub lr_mlp: f64,
    /// Attribute step in units of each family's base step.
    pub lr_attributes: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub grid: GridConfig,
    pub hidden: usize,
    pub q0: [f64; 3],
    pub distortion_weights: [f64; 3],
    pub mask_threshold: f64,
    pub initial_mask_logit: f64,
    pub log_every: usize,
    /// Serial, fixed-order accumulation.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_e: 2e-3,
            lambda_m: 5e-4,
            iterations: 1000,
            phases: [0.15, 0.33],
            sample_frac: 0.05,
            lr_grid: 1e-2,
            lr_masks: 1e-2,
            lr_mlp: 5e-3,
            lr_attributes: 1e-3,
            seed: 0,
            mode: TrainMode::RateOnly,
            grid: GridConfig::paper(),
            hidden: DEFAULT_HIDDEN,
            q0: DEFAULT_Q0,
            distortion_weights: DEFAULT_DISTORTION_WEIGHTS,
            mask_threshold: DEFAULT_THRESHOLD,
            initial_mask_logit: 0.0,
            log_every: 10,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.sample_frac > 0.0 && self.sample_frac <= 1.0) {
            return bad("sample_frac must lie in (0, 1]");
        }
        let [a, b] = self.phases;
        if !(0.0 <= a && a <= b && b <= 1.0) {
            return bad("phase boundaries must satisfy 0 <= p1 <= p2 <= 1");
        }
        if !(self.lambda_e >= 0.0 && self.lambda_m >= 0.0) {
            return bad("rate weights must be non-negative");
        }
        if self.q0.iter().any(|&q| !(q > 0.0 && q.is_finite())) {
            return bad("base steps must be positive");
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive");
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return bad("mask threshold must lie in (0, 1)");
        }
        self.grid.validate()
    }

    /// Iteration indices at which the noise and full phases begin.
    pub fn phase_starts(&self) -> (usize, usize) {
        let at = |f: f64| round_half_away(f * self.iterations as f64) as usize;
        (at(self.phases[0]), at(self.phases[1]))
    }

    pub fn batch_size(&self, n: usize) -> usize {
        (libm::ceil(self.sample_frac * n as f64) as usize).clamp(1, n.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub distortion: f64,
    pub entropy_bits: f64,
    pub hash_bits: f64,
    pub mask_loss: f64,
    pub total: f64,
}

impl HistoryRow {
    pub const CSV_HEADER: &'static str = "iteration,distortion,entropy_bits,hash_bits,mask_loss,total";

    pub fn csv(&self) -> String {
        alloc::format!(
            "{},{:e},{:e},{:e},{:e},{:e}",
            self.iteration,
            self.distortion,
            self.entropy_bits,
            self.hash_bits,
            self.mask_loss,
            self.total
        )
    }
}

/// Deterministic full-scene evaluation with hard quantization.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Evaluation {
    /// Mean weighted squared error per value.
    pub distortion: f64,
    pub entropy: FamilyBits,
    pub hash_bits: f64,
    pub mask_loss: f64,
    pub total: f64,
    /// Coded values per family, pruned anchors and masked offsets excluded.
    pub coded: [usize; 3],
    pub masked_fraction: f64,
    pub kept_anchors: usize,
}

impl Evaluation {
    pub fn bits_per_param(&self, family: Family) -> f64 {
        let c = self.coded[family.index()];
        if c == 0 {
            0.0
        } else {
            self.entropy.get(family) / c as f64
        }
    }

    /// Entropy bits over all coded values.
    pub fn pooled_bits_per_param(&self) -> f64 {
        let c: usize = self.coded.iter().sum();
        if c == 0 {
            0.0
        } else {
            self.entropy.total() / c as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub grid: HashGrid,
    pub model: ContextModel,
    pub masks: MaskSet,
    pub scene: AnchorScene,
    pub bounds: Aabb,
    pub initial: Evaluation,
    pub last: Evaluation,
    pub history: Vec<HistoryRow>,
}

/// Normalized anchor positions inside `bounds`.
pub fn normalized_positions(scene: &AnchorScene, bounds: &Aabb) -> Vec<[f64; 3]> {
    (0..scene.n)
        .map(|i| {
            let p = scene.location(i);
            bounds.normalize([p[0] as f64, p[1] as f64, p[2] as f64])
        })
        .collect()
}

/// Per-value mean and standard deviation over anchors of an `N x nv` matrix.
pub fn value_statistics(values: &[f64], nv: usize) -> (Vec<f64>, Vec<f64>) {
    let n = values.len() / nv.max(1);
    let mut mean = vec![0.0; nv];
    let mut var = vec![0.0; nv];
    if n == 0 {
        return (mean, vec![1.0; nv]);
    }
    for row in values.chunks_exact(nv) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for row in values.chunks_exact(nv) {
        for j in 0..nv {
            let d = row[j] - mean[j];
            var[j] += d * d;
        }
    }
    let std = var.iter().map(|v| libm::sqrt(v / n as f64)).collect();
    (mean, std)
}

/// Evaluates a coded scene against its reference.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    reference: &AnchorScene,
    coded: &AnchorScene,
    bounds: &Aabb,
    grid: &HashGrid,
    model: &ContextModel,
    masks: &MaskSet,
    lambda_e: f64,
    lambda_m: f64,
    weights: [f64; 3],
) -> Result<Evaluation> {
    if reference.n != coded.n || reference.layout() != coded.layout() || masks.n != coded.n {
        return Err(Error::Shape("reference, coded scene and masks disagree".into()));
    }
    let positions = normalized_positions(coded, bounds);
    let refm = reference.attribute_matrix();
    let attrs = coded.attribute_matrix();
    evaluate_matrix(&refm, &attrs, &positions, grid, model, masks, lambda_e, lambda_m, weights)
}

#[allow(clippy::too_many_arguments)]
fn evaluate_matrix(
    reference: &[f64],
    attrs: &[f64],
    positions: &[[f64; 3]],
    grid: &HashGrid,
    model: &ContextModel,
    masks: &MaskSet,
    lambda_e: f64,
    lambda_m: f64,
    weights: [f64; 3],
) -> Result<Evaluation> {
    let layout = model.layout;
    let nv = layout.values_per_anchor();
    let n = positions.len();
    let mut ev = Evaluation::default();
    let mut fp = Footprint::default();
    let mut fh = Vec::new();
    let mut cache = ForwardCache::default();
    let hard = masks.hard();
    let mut sq = 0.0;
    for (i, &x) in positions.iter().enumerate() {
        grid.footprint(x, &mut fp);
        grid.features_from(&fp, Binarization::Ste, &mut fh);
        model.forward(&fh, &mut cache);
        let rp = model.rate_params(&cache.out);
        let mrow = &hard[i * layout.k_offsets..(i + 1) * layout.k_offsets];
        let pruned = !mrow.iter().any(|&b| b);
        if !pruned {
            ev.kept_anchors += 1;
        }
        for j in 0..nv {
            let fam = layout.family_of(j);
            let c = fam.index();
            let kept = layout.offset_slot(j).is_none_or(|k| mrow[k]);
            let q = rp.q[c];
            let a = attrs[i * nv + j];
            let v = round_half_away(a / q) * q;
            let recon = if kept { v } else { 0.0 };
            let err = recon - reference[i * nv + j];
            sq += weights[c] * err * err;
            if kept && !pruned {
                ev.entropy.bits[c] += bits_of(interval_probability(v, rp.mu[j], rp.sigma[j], q));
                ev.coded[c] += 1;
            }
        }
    }
    let norm = (n * nv).max(1) as f64;
    ev.distortion = sq / norm;
    ev.hash_bits = grid.entropy_loss();
    ev.mask_loss = if masks.logits.is_empty() { 0.0 } else { mask_loss(masks)? };
    ev.masked_fraction = masks.masked_fraction();
    ev.total = ev.distortion + lambda_e * (ev.entropy.total() + ev.hash_bits) / norm + lambda_m * ev.mask_loss;
    if !ev.total.is_finite() {
        return Err(Error::NonFiniteValue);
    }
    Ok(ev)
}

#[derive(Debug, Clone, Copy)]
struct Wants {
    mlp: bool,
    grid: bool,
    attrs: bool,
    logits: bool,
}

#[derive(Debug, Default)]
struct ChunkResult {
    count: usize,
    bits: f64,
    distortion: f64,
    mlp: Vec<f64>,
    grid: Vec<(u32, f64)>,
    attrs: Vec<f64>,
    logits: Vec<f64>,
}

struct Problem<'a> {
    reference: &'a [f64],
    positions: &'a [[f64; 3]],
    layout: AttributeLayout,
}

#[allow(clippy::too_many_arguments)]
fn run_chunk(
    problem: &Problem<'_>,
    grid: &HashGrid,
    model: &ContextModel,
    attrs: &[f64],
    masks: &MaskSet,
    idx: &[usize],
    noise: &[f64],
    stage: Stage,
    coef: &Coefficients,
    wants: Wants,
) -> ChunkResult {
    let nv = problem.layout.values_per_anchor();
    let k = problem.layout.k_offsets;
    let mut out = ChunkResult {
        mlp: if wants.mlp { vec![0.0; model.params.len()] } else { Vec::new() },
        attrs: if wants.attrs { vec![0.0; idx.len() * nv] } else { Vec::new() },
        logits: if wants.logits { vec![0.0; idx.len() * k] } else { Vec::new() },
        count: idx.len(),
        ..Default::default()
    };
    let mut ws = Workspace::default();
    for (b, &i) in idx.iter().enumerate() {
        let input = AnchorInput {
            x: problem.positions[i],
            attrs: &attrs[i * nv..(i + 1) * nv],
            reference: &problem.reference[i * nv..(i + 1) * nv],
            noise: &noise[b * nv..(b + 1) * nv],
            logits: masks.row(i),
        };
        let mut sink = GradSink {
            mlp: if wants.mlp { Some(&mut out.mlp[..]) } else { None },
            grid: if wants.grid { Some(&mut out.grid) } else { None },
            attrs: if wants.attrs { Some(&mut out.attrs[b * nv..(b + 1) * nv]) } else { None },
            logits: if wants.logits { Some(&mut out.logits[b * k..(b + 1) * k]) } else { None },
        };
        let t = anchor_objective(grid, model, &input, stage, Relaxation::STE, coef, &mut ws, &mut sink);
        out.bits += t.bits;
        out.distortion += t.distortion;
    }
    out
}

/// Trains on `scene` following the staged schedule of `cfg`.
/// `batch` distinct anchor indices out of `n`, ascending.
pub fn sample_batch<R: Rng + ?Sized>(rng: &mut R, n: usize, batch: usize) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(rng, n, batch).into_vec();
    idx.sort_unstable();
    idx
}

pub fn fit(scene: &AnchorScene, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    scene.validate()?;
    if scene.n == 0 {
        return Err(Error::EmptyScene);
    }
    let layout = scene.layout();
    let (n, nv, k) = (scene.n, layout.values_per_anchor(), layout.k_offsets);
    let bounds = scene_bounds(scene, DEFAULT_BOUNDS_PAD)?;
    let positions = normalized_positions(scene, &bounds);
    let reference = scene.attribute_matrix();
    let mut attrs = reference.clone();

    let mut grid = HashGrid::new(cfg.grid.clone(), cfg.seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let mut model = ContextModel::new(grid.feature_dim(), cfg.hidden, layout, cfg.q0, cfg.seed.wrapping_add(1));
    let (mean, std) = value_statistics(&reference, nv);
    model.warm_start(&mean, &std);
    let mut masks = MaskSet::new(n, k, cfg.initial_mask_logit);
    masks.threshold = cfg.mask_threshold;

    let mut opt_grid = Adam::new(grid.theta.len(), cfg.lr_grid);
    let mut opt_mlp = Adam::new(model.params.len(), cfg.lr_mlp);
    let mut opt_masks = Adam::new(masks.logits.len(), cfg.lr_masks);
    let mut opt_attrs = Adam::new(if cfg.mode == TrainMode::Joint { attrs.len() } else { 0 }, cfg.lr_attributes);

    let problem = Problem { reference: &reference, positions: &positions, layout };
    let weights = cfg.distortion_weights;
    let norm_all = (n * nv) as f64;
    let initial = evaluate_matrix(&reference, &attrs, &positions, &grid, &model, &masks, cfg.lambda_e, cfg.lambda_m, weights)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch = cfg.batch_size(n);
    let (p2, p3) = cfg.phase_starts();
    let mut history = Vec::new();
    let mut g_grid = vec![0.0; grid.theta.len()];
    let mut g_mlp = vec![0.0; model.params.len()];
    let mut g_masks = vec![0.0; masks.logits.len()];
    let mut g_attrs = vec![0.0; opt_attrs.m.len()];
    let mut noise = vec![0.0; batch * nv];
    let attr_lr_scale: Vec<f64> = (0..nv).map(|j| cfg.q0[layout.family_of(j).index()]).collect();

    for it in 0..cfg.iterations {
        let stage = if it < p2 {
            Stage::Warmup
        } else if it < p3 {
            Stage::Noise
        } else {
            Stage::Full
        };
        if stage == Stage::Warmup && cfg.mode == TrainMode::RateOnly {
            continue;
        }
        let idx = sample_batch(&mut rng, n, batch);
        if stage != Stage::Warmup {
            noise.iter_mut().for_each(|u| *u = rng.random::<f64>() - 0.5);
        }
        let full = stage == Stage::Full;
        let wants = Wants { mlp: full, grid: full, attrs: cfg.mode == TrainMode::Joint, logits: stage != Stage::Warmup };
        let denom = (batch * nv) as f64;
        let coef = Coefficients {
            rate: if full { cfg.lambda_e / denom } else { 0.0 },
            distortion: 1.0 / denom,
            family: weights,
            mask_threshold: cfg.mask_threshold,
        };

        let chunks = batch_chunks(&problem, &grid, &model, &attrs, &masks, &idx, &noise, stage, &coef, wants, cfg.deterministic);

        if wants.grid {
            g_grid.iter_mut().for_each(|g| *g = 0.0);
        }
        if wants.mlp {
            g_mlp.iter_mut().for_each(|g| *g = 0.0);
        }
        if wants.logits {
            g_masks.iter_mut().for_each(|g| *g = 0.0);
        }
        if wants.attrs {
            g_attrs.iter_mut().for_each(|g| *g = 0.0);
        }
        let (mut bits, mut dist) = (0.0, 0.0);
        let mut offset = 0;
        for c in &chunks {
            bits += c.bits;
            dist += c.distortion;
            if wants.mlp {
                g_mlp.iter_mut().zip(&c.mlp).for_each(|(g, d)| *g += d);
            }
            for &(p, g) in &c.grid {
                g_grid[p as usize] += g;
            }
            for b in 0..c.count {
                let i = idx[offset + b];
                if wants.attrs {
                    g_attrs[i * nv..(i + 1) * nv].iter_mut().zip(&c.attrs[b * nv..(b + 1) * nv]).for_each(|(g, d)| *g += d);
                }
                if wants.logits {
                    g_masks[i * k..(i + 1) * k].iter_mut().zip(&c.logits[b * k..(b + 1) * k]).for_each(|(g, d)| *g += d);
                }
            }
            offset += c.count;
        }

        let hash = if full {
            grid.entropy_loss_with_grad(Binarization::Ste, cfg.lambda_e / norm_all, Some(&mut g_grid))
        } else {
            0.0
        };
        let lm = if stage != Stage::Warmup && !masks.logits.is_empty() {
            mask_loss_grad(&masks, cfg.lambda_m, &mut g_masks);
            mask_loss(&masks)?
        } else {
            0.0
        };
        let total = coef.distortion * dist + coef.rate * bits + if full { cfg.lambda_e * hash / norm_all } else { 0.0 } + cfg.lambda_m * lm;
        if !total.is_finite() {
            return Err(Error::Diverged { iteration: it });
        }

        if wants.grid {
            opt_grid.step(&mut grid.theta, &g_grid);
        }
        if wants.mlp {
            opt_mlp.step(&mut model.params, &g_mlp);
        }
        if wants.logits && !g_masks.is_empty() {
            opt_masks.step(&mut masks.logits, &g_masks);
        }
        if wants.attrs {
            opt_attrs.step_scaled(&mut attrs, &g_attrs, &attr_lr_scale);
        }

        if (cfg.log_every > 0 && it % cfg.log_every == 0) || it + 1 == cfg.iterations {
            history.push(HistoryRow {
                iteration: it,
                distortion: dist / denom,
                entropy_bits: bits,
                hash_bits: hash,
                mask_loss: lm,
                total,
            });
        }
    }

    if model.params.iter().chain(&grid.theta).chain(&attrs).any(|v| !v.is_finite()) {
        return Err(Error::Diverged { iteration: cfg.iterations });
    }
    let last = evaluate_matrix(&reference, &attrs, &positions, &grid, &model, &masks, cfg.lambda_e, cfg.lambda_m, weights)?;
    let mut refined = scene.clone();
    if cfg.mode == TrainMode::Joint {
        refined.set_attribute_matrix(&attrs)?;
    }
    Ok(Trained { grid, model, masks, scene: refined, bounds, initial, last, history })
}

#[allow(clippy::too_many_arguments)]
fn batch_chunks(
    problem: &Problem<'_>,
    grid: &HashGrid,
    model: &ContextModel,
    attrs: &[f64],
    masks: &MaskSet,
    idx: &[usize],
    noise: &[f64],
    stage: Stage,
    coef: &Coefficients,
    wants: Wants,
    deterministic: bool,
) -> Vec<ChunkResult> {
    #[cfg(feature = "parallel")]
    if !deterministic {
        use rayon::prelude::*;
        let nv = problem.layout.values_per_anchor();
        return idx
            .par_chunks(CHUNK)
            .zip(noise.par_chunks(CHUNK * nv))
            .map(|(ids, u)| run_chunk(problem, grid, model, attrs, masks, ids, u, stage, coef, wants))
            .collect();
    }
    let _ = deterministic;
    vec![run_chunk(problem, grid, model, attrs, masks, idx, noise, stage, coef, wants)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::synth_scene;

    fn small_cfg() -> TrainConfig {
        TrainConfig { iterations: 60, grid: GridConfig::small(), hidden: 16, sample_frac: 0.25, ..Default::default() }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("joint".parse::<TrainMode>().unwrap(), TrainMode::Joint);
        assert_eq!("rate-only".parse::<TrainMode>().unwrap(), TrainMode::RateOnly);
        assert!("both".parse::<TrainMode>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.sample_frac = 0.0;
        assert!(c.validate().is_err());
        c.sample_frac = 1.5;
        assert!(c.validate().is_err());
        c.sample_frac = 0.05;
        c.phases = [0.5, 0.2];
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        assert_eq!(TrainConfig::default().batch_size(8192), 410);
        assert_eq!(TrainConfig::default().batch_size(1), 1);
    }

    #[test]
    fn empty_scene_is_rejected() {
        let s = AnchorScene::empty(4, 2);
        assert!(matches!(fit(&s, &small_cfg()), Err(Error::EmptyScene)));
    }

    #[test]
    fn deterministic_runs_match() {
        let s = synth_scene(3, 64, 4, 2, 0.8);
        let a = fit(&s, &small_cfg()).unwrap();
        let b = fit(&s, &small_cfg()).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.grid.theta, b.grid.theta);
        assert_eq!(a.masks.logits, b.masks.logits);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn joint_mode_refines_attributes() {
        let s = synth_scene(4, 48, 4, 2, 0.8);
        let cfg = TrainConfig { mode: TrainMode::Joint, ..small_cfg() };
        let t = fit(&s, &cfg).unwrap();
        assert_ne!(t.scene.features, s.features);
        t.scene.validate().unwrap();
        assert!(!t.history.is_empty());
    }
}

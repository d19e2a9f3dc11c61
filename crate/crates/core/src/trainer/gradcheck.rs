//! Central-difference verification of the analytic training gradients.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::hashgrid::{GridConfig, HashGrid};
use crate::masking::{mask_loss, mask_loss_grad, MaskSet};
use crate::ratemodel::ContextModel;
use crate::scene::{synth_scene, Aabb, AttributeLayout};

use super::objective::{anchor_objective, AnchorInput, Coefficients, GradSink, Relaxation, Stage, Workspace};
use super::{normalized_positions, value_statistics};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradComponent {
    Mlp,
    GridRelaxed,
    MasksRelaxed,
    Attributes,
}

impl GradComponent {
    pub const ALL: [GradComponent; 4] =
        [GradComponent::Mlp, GradComponent::GridRelaxed, GradComponent::MasksRelaxed, GradComponent::Attributes];

    pub fn name(self) -> &'static str {
        match self {
            GradComponent::Mlp => "mlp",
            GradComponent::GridRelaxed => "grid-relaxed",
            GradComponent::MasksRelaxed => "masks-relaxed",
            GradComponent::Attributes => "attributes",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Full-stage objective on a small seeded instance.
#[derive(Debug, Clone)]
pub struct GradProbe {
    pub grid: HashGrid,
    pub model: ContextModel,
    pub masks: MaskSet,
    pub attrs: Vec<f64>,
    pub reference: Vec<f64>,
    pub noise: Vec<f64>,
    pub positions: Vec<[f64; 3]>,
    pub lambda_e: f64,
    pub lambda_m: f64,
    pub weights: [f64; 3],
}

#[derive(Debug, Clone, Default)]
pub struct ProbeGrads {
    pub mlp: Vec<f64>,
    pub grid: Vec<f64>,
    pub masks: Vec<f64>,
    pub attrs: Vec<f64>,
}

pub const PROBE_ANCHORS: usize = 10;
const PROBE_Q0: [f64; 3] = [0.5, 0.05, 0.2];
const MLP_COORDINATES: usize = 200;

impl GradProbe {
    pub fn new(seed: u64, noisy: bool) -> Result<Self> {
        let scene = synth_scene(seed, PROBE_ANCHORS, 4, 2, 0.7);
        let layout = scene.layout();
        let nv = layout.values_per_anchor();
        let config = GridConfig { res_3d: vec![3, 5], res_2d: vec![4], table_3d_max: 1 << 5, table_2d_max: 1 << 4, dim_embed: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let theta = (0..config.param_count()).map(|_| rng.random_range(-0.8..0.8)).collect();
        let grid = HashGrid::from_params(config, theta)?;
        let mut model = ContextModel::random(grid.feature_dim(), 8, layout, PROBE_Q0, seed.wrapping_add(7), 0.3);
        let reference = scene.attribute_matrix();
        let (mean, std) = value_statistics(&reference, nv);
        model.warm_start(&mean, &std);
        let mut masks = MaskSet::new(scene.n, layout.k_offsets, 0.0);
        masks.logits.iter_mut().for_each(|l| *l = rng.random_range(-2.0..2.0));
        let attrs: Vec<f64> = reference.iter().map(|&a| a + rng.random_range(-0.05..0.05)).collect();
        let noise = (0..reference.len()).map(|_| if noisy { rng.random::<f64>() - 0.5 } else { 0.0 }).collect();
        let positions = normalized_positions(&scene, &Aabb::UNIT);
        let weights = [0.02 / (PROBE_Q0[0] * PROBE_Q0[0]), 0.02 / (PROBE_Q0[1] * PROBE_Q0[1]), 0.02 / (PROBE_Q0[2] * PROBE_Q0[2])];
        Ok(Self { grid, model, masks, attrs, reference, noise, positions, lambda_e: 0.5, lambda_m: 0.1, weights })
    }

    pub fn layout(&self) -> AttributeLayout {
        self.model.layout
    }

    /// Objective value and, if asked, its analytic gradient.
    pub fn objective(&self, relax: Relaxation, with_grad: bool) -> (f64, ProbeGrads) {
        let layout = self.layout();
        let (nv, k) = (layout.values_per_anchor(), layout.k_offsets);
        let n = self.positions.len();
        let denom = (n * nv) as f64;
        let coef = Coefficients {
            rate: self.lambda_e / denom,
            distortion: 1.0 / denom,
            family: self.weights,
            mask_threshold: self.masks.threshold,
        };
        let mut g = ProbeGrads::default();
        let mut sparse = Vec::new();
        if with_grad {
            g.mlp = vec![0.0; self.model.params.len()];
            g.grid = vec![0.0; self.grid.theta.len()];
            g.masks = vec![0.0; self.masks.logits.len()];
            g.attrs = vec![0.0; self.attrs.len()];
        }
        let mut ws = Workspace::default();
        let (mut bits, mut dist) = (0.0, 0.0);
        for i in 0..n {
            let input = AnchorInput {
                x: self.positions[i],
                attrs: &self.attrs[i * nv..(i + 1) * nv],
                reference: &self.reference[i * nv..(i + 1) * nv],
                noise: &self.noise[i * nv..(i + 1) * nv],
                logits: self.masks.row(i),
            };
            let mut sink = if with_grad {
                GradSink {
                    mlp: Some(&mut g.mlp[..]),
                    grid: Some(&mut sparse),
                    attrs: Some(&mut g.attrs[i * nv..(i + 1) * nv]),
                    logits: Some(&mut g.masks[i * k..(i + 1) * k]),
                }
            } else {
                GradSink::none()
            };
            let t = anchor_objective(&self.grid, &self.model, &input, Stage::Full, relax, &coef, &mut ws, &mut sink);
            bits += t.bits;
            dist += t.distortion;
        }
        for (p, v) in sparse {
            g.grid[p as usize] += v;
        }
        let hash_scale = self.lambda_e / denom;
        let hash = self.grid.entropy_loss_with_grad(relax.grid, hash_scale, if with_grad { Some(&mut g.grid[..]) } else { None });
        let lm = mask_loss(&self.masks).unwrap_or(0.0);
        if with_grad {
            mask_loss_grad(&self.masks, self.lambda_m, &mut g.masks);
        }
        let total = coef.distortion * dist + coef.rate * bits + hash_scale * hash + self.lambda_m * lm;
        (total, g)
    }

    fn params_mut(&mut self, c: GradComponent) -> &mut Vec<f64> {
        match c {
            GradComponent::Mlp => &mut self.model.params,
            GradComponent::GridRelaxed => &mut self.grid.theta,
            GradComponent::MasksRelaxed => &mut self.masks.logits,
            GradComponent::Attributes => &mut self.attrs,
        }
    }
}

/// Max relative gap `|analytic - numeric| / max(|analytic|, 1e-8)` over the
/// checked coordinates of `component`, on the probe seeded by `seed`.
pub fn grad_check(component: GradComponent, seed: u64, eps: f64) -> Result<GradCheckReport> {
    let mut probe = GradProbe::new(seed, component != GradComponent::Attributes)?;
    let relax = Relaxation::SMOOTH;
    let (_, g) = probe.objective(relax, true);
    let analytic = match component {
        GradComponent::Mlp => g.mlp,
        GradComponent::GridRelaxed => g.grid,
        GradComponent::MasksRelaxed => g.masks,
        GradComponent::Attributes => g.attrs,
    };
    let coords: Vec<usize> = if component == GradComponent::Mlp && analytic.len() > MLP_COORDINATES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ffee);
        let mut c = rand::seq::index::sample(&mut rng, analytic.len(), MLP_COORDINATES).into_vec();
        c.sort_unstable();
        c
    } else {
        (0..analytic.len()).collect()
    };
    let mut report =
        GradCheckReport { max_rel_error: 0.0, coordinates: coords.len(), worst_index: 0, worst_analytic: 0.0, worst_numeric: 0.0 };
    for &i in &coords {
        let orig = probe.params_mut(component)[i];
        probe.params_mut(component)[i] = orig + eps;
        let (up, _) = probe.objective(relax, false);
        probe.params_mut(component)[i] = orig - eps;
        let (down, _) = probe.objective(relax, false);
        probe.params_mut(component)[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = libm::fabs(a - numeric) / libm::fabs(a).max(1e-8);
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_component_passes_on_one_probe() {
        for c in GradComponent::ALL {
            let r = grad_check(c, 11, 1e-5).unwrap();
            assert!(r.max_rel_error < 1e-4, "{}: {r:?}", c.name());
            assert!(r.coordinates > 0);
        }
    }

    #[test]
    fn zero_rate_weight_leaves_gaussian_head_untouched() {
        let mut probe = GradProbe::new(5, true).unwrap();
        probe.lambda_e = 0.0;
        let (_, g) = probe.objective(Relaxation::SMOOTH, true);
        let nv = probe.layout().values_per_anchor();
        let bias = probe.model.output_bias_range();
        let hidden = probe.model.hidden;
        let w3_start = bias.start - probe.model.out_dim() * hidden;
        for row in 3..3 + 2 * nv {
            assert_eq!(g.mlp[bias.start + row], 0.0);
            for h in 0..hidden {
                assert_eq!(g.mlp[w3_start + row * hidden + h], 0.0);
            }
        }
    }
}

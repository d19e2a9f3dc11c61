//! Per-anchor training objective with its analytic gradient.

use alloc::vec::Vec;

use crate::hashgrid::{Binarization, Footprint, HashGrid};
use crate::masking::MaskMode;
use crate::ratemodel::{
    adaptive_step, adaptive_step_derivative, bits_derivative, bits_of, interval_probability_grad, sigma_derivative,
    sigma_from_logit, ContextModel, ForwardCache,
};
use crate::scene::Family;

/// Which surrogate replaces each hard nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Relaxation {
    pub grid: Binarization,
    pub masks: MaskMode,
}

impl Relaxation {
    /// Straight-through estimators, as used for training.
    pub const STE: Relaxation = Relaxation { grid: Binarization::Ste, masks: MaskMode::Ste };
    /// Smooth stand-ins, for finite-difference checks.
    pub const SMOOTH: Relaxation = Relaxation { grid: Binarization::Tanh, masks: MaskMode::Sigmoid };
}

/// What the objective includes at a given training stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Distortion of the raw attributes only.
    Warmup,
    /// Uniform noise at the base step, masks on, no rate model.
    Noise,
    /// Hash grid, context model, adaptive steps and rate.
    Full,
}

/// Scalar coefficients applied to the per-anchor sums.
#[derive(Debug, Clone, Copy)]
pub struct Coefficients {
    /// Multiplies the summed bits of the batch.
    pub rate: f64,
    /// Multiplies the summed weighted squared errors of the batch.
    pub distortion: f64,
    /// Per-family distortion weights.
    pub family: [f64; 3],
    pub mask_threshold: f64,
}

pub struct AnchorInput<'a> {
    pub x: [f64; 3],
    pub attrs: &'a [f64],
    pub reference: &'a [f64],
    pub noise: &'a [f64],
    pub logits: &'a [f64],
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AnchorTerms {
    /// Mask-weighted bits of the anchor's values.
    pub bits: f64,
    /// Family-weighted squared reconstruction error.
    pub distortion: f64,
}

/// Gradient destinations; `None` skips that group.
pub struct GradSink<'a> {
    pub mlp: Option<&'a mut [f64]>,
    /// `(parameter index, gradient)` pairs for the hash grid.
    pub grid: Option<&'a mut Vec<(u32, f64)>>,
    pub attrs: Option<&'a mut [f64]>,
    pub logits: Option<&'a mut [f64]>,
}

impl GradSink<'_> {
    pub fn none() -> Self {
        Self { mlp: None, grid: None, attrs: None, logits: None }
    }

    fn any(&self) -> bool {
        self.mlp.is_some() || self.grid.is_some() || self.attrs.is_some() || self.logits.is_some()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Workspace {
    fp: Footprint,
    fh: Vec<f64>,
    cache: ForwardCache,
    grad_out: Vec<f64>,
    grad_in: Vec<f64>,
    grad_mask: Vec<f64>,
    mask: Vec<(f64, f64)>,
    scratch_mlp: Vec<f64>,
}

/// Evaluates one anchor's contribution and accumulates gradients.
#[allow(clippy::too_many_arguments)]
pub fn anchor_objective(
    grid: &HashGrid,
    model: &ContextModel,
    input: &AnchorInput<'_>,
    stage: Stage,
    relax: Relaxation,
    coef: &Coefficients,
    ws: &mut Workspace,
    sink: &mut GradSink<'_>,
) -> AnchorTerms {
    let layout = model.layout;
    let nv = layout.values_per_anchor();
    let want_grad = sink.any();

    ws.mask.clear();
    for &l in input.logits {
        ws.mask.push(match stage {
            Stage::Warmup => (1.0, 0.0),
            _ => relax.masks.eval(l, coef.mask_threshold),
        });
    }
    ws.grad_mask.clear();
    ws.grad_mask.resize(layout.k_offsets, 0.0);

    let mut terms = AnchorTerms::default();

    if stage != Stage::Full {
        for j in 0..nv {
            let c = layout.family_of(j).index();
            let q = model.q0[c];
            let u = if stage == Stage::Noise { input.noise[j] } else { 0.0 };
            let v = input.attrs[j] + u * q;
            let slot = layout.offset_slot(j);
            let mult = slot.map_or(1.0, |k| ws.mask[k].0);
            let err = mult * v - input.reference[j];
            let w = coef.family[c];
            terms.distortion += w * err * err;
            if want_grad {
                let g_err = coef.distortion * 2.0 * w * err;
                if let Some(ga) = sink.attrs.as_deref_mut() {
                    ga[j] += g_err * mult;
                }
                if let Some(k) = slot {
                    ws.grad_mask[k] += g_err * v;
                }
            }
        }
        flush_mask_grads(ws, sink);
        return terms;
    }

    grid.footprint(input.x, &mut ws.fp);
    grid.features_from(&ws.fp, relax.grid, &mut ws.fh);
    model.forward(&ws.fh, &mut ws.cache);
    let out = &ws.cache.out;

    let mut q = [0.0; 3];
    for f in Family::ALL {
        q[f.index()] = adaptive_step(model.q0[f.index()], out[f.index()]);
    }
    ws.grad_out.clear();
    ws.grad_out.resize(out.len(), 0.0);
    let mut g_q = [0.0; 3];

    for j in 0..nv {
        let fam = layout.family_of(j);
        let c = fam.index();
        let slot = layout.offset_slot(j);
        let mult = slot.map_or(1.0, |k| ws.mask[k].0);
        let u = input.noise[j];
        let v = input.attrs[j] + u * q[c];
        let s = out[3 + nv + j];
        let bounds = model.sigma_bounds(fam);
        let sigma = sigma_from_logit(s, bounds);
        let mg = interval_probability_grad(v, out[3 + j], sigma, q[c]);
        let bits = bits_of(mg.p);
        terms.bits += mult * bits;
        let err = mult * v - input.reference[j];
        let w = coef.family[c];
        terms.distortion += w * err * err;

        if want_grad {
            let g_p = coef.rate * mult * bits_derivative(mg.p);
            let g_err = coef.distortion * 2.0 * w * err;
            let g_v = g_p * mg.d_v + g_err * mult;
            if let Some(ga) = sink.attrs.as_deref_mut() {
                ga[j] += g_v;
            }
            g_q[c] += g_p * mg.d_q + g_v * u;
            ws.grad_out[3 + j] = g_p * mg.d_mu;
            ws.grad_out[3 + nv + j] = g_p * mg.d_sigma * sigma_derivative(s, bounds);
            if let Some(k) = slot {
                ws.grad_mask[k] += coef.rate * bits + g_err * v;
            }
        }
    }

    if want_grad {
        for f in Family::ALL {
            let c = f.index();
            ws.grad_out[c] = g_q[c] * adaptive_step_derivative(model.q0[c], out[c]);
        }
        if sink.mlp.is_some() || sink.grid.is_some() {
            let mlp_grad: &mut [f64] = match sink.mlp.as_deref_mut() {
                Some(g) => g,
                None => {
                    ws.scratch_mlp.clear();
                    ws.scratch_mlp.resize(model.params.len(), 0.0);
                    &mut ws.scratch_mlp
                }
            };
            model.backward(&ws.fh, &ws.cache, &ws.grad_out, mlp_grad, Some(&mut ws.grad_in));
            if let Some(gg) = sink.grid.as_deref_mut() {
                grid.backward_sparse(&ws.fp, relax.grid, &ws.grad_in, gg);
            }
        }
        flush_mask_grads(ws, sink);
    }
    terms
}

fn flush_mask_grads(ws: &Workspace, sink: &mut GradSink<'_>) {
    if let Some(gl) = sink.logits.as_deref_mut() {
        for (k, g) in gl.iter_mut().enumerate() {
            *g += ws.grad_mask[k] * ws.mask[k].1;
        }
    }
}

//! Anchor scenes: locations plus the attribute triple (feature, scaling, offsets).

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::sigmoid;

/// Default relative padding applied by [`scene_bounds`] when training.
pub const DEFAULT_BOUNDS_PAD: f64 = 0.01;
/// Absolute expansion used for zero-extent axes.
pub const BOUNDS_EPSILON: f64 = 1e-6;

/// Scaling components per anchor.
pub const SCALING_DIM: usize = 6;

/// Attribute family of a coded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Feature,
    Scaling,
    Offset,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Feature, Family::Scaling, Family::Offset];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Family::Feature => 0,
            Family::Scaling => 1,
            Family::Offset => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Feature => "feature",
            Family::Scaling => "scaling",
            Family::Offset => "offset",
        }
    }
}

/// Per-anchor attribute layout `[f^a (D) | l (6) | o (3K)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttributeLayout {
    pub dim_feat: usize,
    pub k_offsets: usize,
}

impl AttributeLayout {
    pub fn new(dim_feat: usize, k_offsets: usize) -> Self {
        Self { dim_feat, k_offsets }
    }

    /// `D + 6 + 3K`, the per-anchor value count used as the rate normalizer.
    #[inline]
    pub fn values_per_anchor(&self) -> usize {
        self.dim_feat + SCALING_DIM + 3 * self.k_offsets
    }

    #[inline]
    pub fn family_len(&self, family: Family) -> usize {
        match family {
            Family::Feature => self.dim_feat,
            Family::Scaling => SCALING_DIM,
            Family::Offset => 3 * self.k_offsets,
        }
    }

    #[inline]
    pub fn family_start(&self, family: Family) -> usize {
        match family {
            Family::Feature => 0,
            Family::Scaling => self.dim_feat,
            Family::Offset => self.dim_feat + SCALING_DIM,
        }
    }

    #[inline]
    pub fn family_of(&self, j: usize) -> Family {
        if j < self.dim_feat {
            Family::Feature
        } else if j < self.dim_feat + SCALING_DIM {
            Family::Scaling
        } else {
            Family::Offset
        }
    }

    /// Offset slot owning value `j`, if `j` is an offset component.
    #[inline]
    pub fn offset_slot(&self, j: usize) -> Option<usize> {
        let start = self.dim_feat + SCALING_DIM;
        (j >= start).then(|| (j - start) / 3)
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

impl Aabb {
    pub const UNIT: Aabb = Aabb { min: [0.0; 3], max: [1.0; 3] };

    pub fn contains(&self, p: [f32; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Maps `p` into `[0,1]^3`, clamping points outside the box.
    #[inline]
    pub fn normalize(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            let lo = self.min[a] as f64;
            let ext = self.max[a] as f64 - lo;
            let t = if ext > 0.0 { (p[a] - lo) / ext } else { 0.5 };
            out[a] = t.clamp(0.0, 1.0);
        }
        out
    }

    /// Smallest box holding both `self` and `p`.
    pub fn include(&mut self, p: [f32; 3]) {
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }
}

/// N anchors with location, feature, scaling and offsets, stored row-major in `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorScene {
    pub n: usize,
    pub dim_feat: usize,
    pub k_offsets: usize,
    pub locations: Vec<f32>,
    pub features: Vec<f32>,
    pub scalings: Vec<f32>,
    pub offsets: Vec<f32>,
    pub bounds: Aabb,
}

impl AnchorScene {
    pub fn empty(dim_feat: usize, k_offsets: usize) -> Self {
        Self {
            n: 0,
            dim_feat,
            k_offsets,
            locations: Vec::new(),
            features: Vec::new(),
            scalings: Vec::new(),
            offsets: Vec::new(),
            bounds: Aabb::UNIT,
        }
    }

    #[inline]
    pub fn layout(&self) -> AttributeLayout {
        AttributeLayout::new(self.dim_feat, self.k_offsets)
    }

    #[inline]
    pub fn location(&self, i: usize) -> [f32; 3] {
        [self.locations[3 * i], self.locations[3 * i + 1], self.locations[3 * i + 2]]
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim_feat..(i + 1) * self.dim_feat]
    }

    pub fn scaling(&self, i: usize) -> &[f32] {
        &self.scalings[i * SCALING_DIM..(i + 1) * SCALING_DIM]
    }

    pub fn offset(&self, i: usize) -> &[f32] {
        let w = 3 * self.k_offsets;
        &self.offsets[i * w..(i + 1) * w]
    }

    /// Concatenated `[f | l | o]` row of anchor `i`, widened to `f64`.
    pub fn attribute_row(&self, i: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.feature(i).iter().map(|&v| v as f64));
        out.extend(self.scaling(i).iter().map(|&v| v as f64));
        out.extend(self.offset(i).iter().map(|&v| v as f64));
    }

    /// All attribute rows as one `N x (D+6+3K)` matrix.
    pub fn attribute_matrix(&self) -> Vec<f64> {
        let nv = self.layout().values_per_anchor();
        let mut all = Vec::with_capacity(self.n * nv);
        let mut row = Vec::with_capacity(nv);
        for i in 0..self.n {
            self.attribute_row(i, &mut row);
            all.extend_from_slice(&row);
        }
        all
    }

    /// Overwrites the attributes from an `N x (D+6+3K)` matrix. Scalings are
    /// clamped into the open unit interval.
    pub fn set_attribute_matrix(&mut self, values: &[f64]) -> Result<()> {
        let layout = self.layout();
        let nv = layout.values_per_anchor();
        if values.len() != self.n * nv {
            return Err(Error::Shape(alloc::format!(
                "attribute matrix has {} values, expected {}",
                values.len(),
                self.n * nv
            )));
        }
        let (d, k3) = (self.dim_feat, 3 * self.k_offsets);
        for (i, row) in values.chunks_exact(nv).enumerate() {
            for (dst, &v) in self.features[i * d..(i + 1) * d].iter_mut().zip(&row[..d]) {
                *dst = v as f32;
            }
            let l = &row[d..d + SCALING_DIM];
            for (dst, &v) in self.scalings[i * SCALING_DIM..(i + 1) * SCALING_DIM].iter_mut().zip(l) {
                *dst = clamp_open_unit(v as f32);
            }
            for (dst, &v) in self.offsets[i * k3..(i + 1) * k3].iter_mut().zip(&row[d + SCALING_DIM..]) {
                *dst = v as f32;
            }
        }
        Ok(())
    }

    /// Checks array lengths, finiteness, the scaling interval and bounds.
    pub fn validate(&self) -> Result<()> {
        let expect = [
            ("locations", self.locations.len(), 3 * self.n),
            ("features", self.features.len(), self.dim_feat * self.n),
            ("scalings", self.scalings.len(), SCALING_DIM * self.n),
            ("offsets", self.offsets.len(), 3 * self.k_offsets * self.n),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Shape(alloc::format!("{name}: {got} values, expected {want}")));
            }
        }
        if self.dim_feat == 0 || self.k_offsets == 0 {
            return Err(Error::InvalidScene("dim_feat and k_offsets must be at least 1".into()));
        }
        for (name, arr) in [
            ("locations", &self.locations),
            ("features", &self.features),
            ("scalings", &self.scalings),
            ("offsets", &self.offsets),
        ] {
            if let Some(index) = arr.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { array: name, index });
            }
        }
        for a in 0..3 {
            let (lo, hi) = (self.bounds.min[a], self.bounds.max[a]);
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::NonFinite { array: "bounds", index: a });
            }
            if lo > hi {
                return Err(Error::InvalidScene(alloc::format!("bounds min > max on axis {a}")));
            }
        }
        if let Some(index) = self.scalings.iter().position(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::InvalidScene(alloc::format!(
                "scaling {index} = {} outside (0,1)",
                self.scalings[index]
            )));
        }
        if let Some(i) = (0..self.n).find(|&i| !self.bounds.contains(self.location(i))) {
            return Err(Error::InvalidScene(alloc::format!("anchor {i} lies outside the scene bounds")));
        }
        Ok(())
    }
}

/// Clamps into the largest `f32` interval strictly inside `(0,1)`.
#[inline]
pub fn clamp_open_unit(v: f32) -> f32 {
    const HI: f32 = 1.0 - f32::EPSILON / 2.0;
    const LO: f32 = 1e-7;
    if v.is_nan() {
        return 0.5;
    }
    v.clamp(LO, HI)
}

/// Componentwise min/max of the anchor locations, padded by `pad * extent`
/// per axis (by [`BOUNDS_EPSILON`] where the extent is zero). The result is
/// rounded outward to `f32`.
pub fn scene_bounds(scene: &AnchorScene, pad: f64) -> Result<Aabb> {
    if scene.n == 0 {
        return Err(Error::EmptyScene);
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for i in 0..scene.n {
        let p = scene.location(i);
        for a in 0..3 {
            lo[a] = lo[a].min(p[a] as f64);
            hi[a] = hi[a].max(p[a] as f64);
        }
    }
    let mut out = Aabb { min: [0.0; 3], max: [0.0; 3] };
    for a in 0..3 {
        let ext = hi[a] - lo[a];
        let grow = if ext > 0.0 { pad * ext } else { BOUNDS_EPSILON };
        out.min[a] = round_down_f32(lo[a] - grow);
        out.max[a] = round_up_f32(hi[a] + grow);
        if out.max[a] <= out.min[a] {
            out.max[a] = next_up_f32(out.min[a]);
        }
    }
    Ok(out)
}

fn next_up_f32(x: f32) -> f32 {
    if x == 0.0 {
        return f32::from_bits(1);
    }
    let b = x.to_bits();
    if x > 0.0 { f32::from_bits(b + 1) } else { f32::from_bits(b - 1) }
}

fn next_down_f32(x: f32) -> f32 {
    -next_up_f32(-x)
}

fn round_down_f32(x: f64) -> f32 {
    let r = x as f32;
    if (r as f64) > x { next_down_f32(r) } else { r }
}

fn round_up_f32(x: f64) -> f32 {
    let r = x as f32;
    if (r as f64) < x { next_up_f32(r) } else { r }
}

const SMOOTH_TERMS: usize = 4;
const MAX_FREQUENCY: f64 = 1.5;

/// A sum of a few random low-frequency plane waves, scaled to unit variance
/// over the unit cube.
struct SmoothField {
    terms: [([f64; 3], f64, f64); SMOOTH_TERMS],
}

impl SmoothField {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let mut terms = [([0.0; 3], 0.0, 0.0); SMOOTH_TERMS];
        let mut power = 0.0;
        for t in terms.iter_mut() {
            let k = [
                rng.random_range(-MAX_FREQUENCY..MAX_FREQUENCY),
                rng.random_range(-MAX_FREQUENCY..MAX_FREQUENCY),
                rng.random_range(-MAX_FREQUENCY..MAX_FREQUENCY),
            ];
            let amp: f64 = rng.sample(StandardNormal);
            let phase = rng.random_range(0.0..2.0 * PI);
            power += 0.5 * amp * amp;
            *t = (k, amp, phase);
        }
        let norm = if power > 0.0 { 1.0 / libm::sqrt(power) } else { 0.0 };
        for t in terms.iter_mut() {
            t.1 *= norm;
        }
        Self { terms }
    }

    fn eval(&self, p: [f64; 3]) -> f64 {
        self.terms
            .iter()
            .map(|(k, amp, phase)| {
                let arg = 2.0 * PI * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2]) + phase;
                amp * libm::sin(arg)
            })
            .sum()
    }
}

/// Deterministic synthetic scene: locations uniform in the unit cube and each
/// attribute channel a blend `smoothness * field(x) + (1 - smoothness) * noise`
/// of a unit-variance smooth field and i.i.d. standard normal noise.
///
/// Features use the blend directly, scalings are `sigmoid(-2.5 + 0.5 * blend)`
/// and offsets are `0.25 * blend`.
pub fn synth_scene(seed: u64, n: usize, dim_feat: usize, k_offsets: usize, smoothness: f64) -> AnchorScene {
    assert!(dim_feat >= 1 && k_offsets >= 1, "dim_feat and k_offsets must be at least 1");
    let s = smoothness.clamp(0.0, 1.0);
    let mut scene = AnchorScene::empty(dim_feat, k_offsets);
    if n == 0 {
        return scene;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = scene.layout();
    let nv = layout.values_per_anchor();
    let fields: Vec<SmoothField> = (0..nv).map(|_| SmoothField::sample(&mut rng)).collect();

    scene.n = n;
    scene.locations = (0..3 * n).map(|_| rng.random::<f32>()).collect();
    scene.features.reserve(n * dim_feat);
    scene.scalings.reserve(n * SCALING_DIM);
    scene.offsets.reserve(n * 3 * k_offsets);
    for i in 0..n {
        let l = scene.location(i);
        let p = [l[0] as f64, l[1] as f64, l[2] as f64];
        for (j, field) in fields.iter().enumerate() {
            let noise: f64 = rng.sample(StandardNormal);
            let blend = s * field.eval(p) + (1.0 - s) * noise;
            match layout.family_of(j) {
                Family::Feature => scene.features.push(blend as f32),
                Family::Scaling => scene.scalings.push(clamp_open_unit(sigmoid(-2.5 + 0.5 * blend) as f32)),
                Family::Offset => scene.offsets.push((0.25 * blend) as f32),
            }
        }
    }
    scene
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_is_deterministic() {
        let a = synth_scene(7, 100, 50, 10, 0.8);
        let b = synth_scene(7, 100, 50, 10, 0.8);
        assert_eq!(a, b);
        assert_ne!(a, synth_scene(8, 100, 50, 10, 0.8));
        a.validate().unwrap();
    }

    #[test]
    fn empty_scene() {
        let s = synth_scene(1, 0, 4, 2, 0.5);
        assert_eq!(s.n, 0);
        assert!(s.locations.is_empty() && s.features.is_empty());
        assert!(s.scalings.is_empty() && s.offsets.is_empty());
        assert_eq!(s.bounds, Aabb::UNIT);
        s.validate().unwrap();
        assert_eq!(scene_bounds(&s, 0.0), Err(Error::EmptyScene));
    }

    fn with_locations(points: &[[f32; 3]]) -> AnchorScene {
        let mut s = synth_scene(3, points.len(), 1, 1, 0.5);
        s.locations = points.iter().flatten().copied().collect();
        s
    }

    #[test]
    fn bounds_without_padding() {
        let s = with_locations(&[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]);
        let b = scene_bounds(&s, 0.0).unwrap();
        assert_eq!(b.min, [0.0, 0.0, 0.0]);
        assert_eq!(b.max, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn bounds_padding() {
        let s = with_locations(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        let b = scene_bounds(&s, 0.05).unwrap();
        for a in 0..3 {
            assert!((b.min[a] as f64 + 0.05).abs() < 1e-7);
            assert!((b.max[a] as f64 - 1.05).abs() < 1e-7);
            assert!(b.min[a] as f64 <= -0.05 && b.max[a] as f64 >= 1.05);
        }
    }

    #[test]
    fn degenerate_bounds_get_positive_extent() {
        for p in [[0.25f32, 0.5, 0.75], [1000.3, -7.0, 0.0]] {
            let s = with_locations(&[p]);
            let b = scene_bounds(&s, 0.01).unwrap();
            for a in 0..3 {
                assert!(b.max[a] > b.min[a]);
                assert!(b.min[a] <= p[a] && p[a] <= b.max[a]);
            }
        }
    }

    #[test]
    fn normalize_clamps() {
        let b = Aabb { min: [0.0; 3], max: [2.0; 3] };
        assert_eq!(b.normalize([1.0, -1.0, 3.0]), [0.5, 0.0, 1.0]);
    }

    #[test]
    fn validation_names_the_array() {
        let mut s = synth_scene(1, 5, 3, 2, 0.5);
        s.features[4] = f32::NAN;
        assert_eq!(s.validate(), Err(Error::NonFinite { array: "features", index: 4 }));
        let mut s = synth_scene(1, 5, 3, 2, 0.5);
        s.scalings[0] = 1.0;
        assert!(matches!(s.validate(), Err(Error::InvalidScene(_))));
    }

    #[test]
    fn attribute_matrix_round_trip() {
        let s = synth_scene(2, 9, 4, 3, 0.7);
        let m = s.attribute_matrix();
        let mut t = s.clone();
        t.set_attribute_matrix(&m).unwrap();
        assert_eq!(s, t);
    }

    #[test]
    fn layout_partitions_values() {
        let l = AttributeLayout::new(50, 10);
        assert_eq!(l.values_per_anchor(), 86);
        assert_eq!(l.family_of(49), Family::Feature);
        assert_eq!(l.family_of(50), Family::Scaling);
        assert_eq!(l.family_of(56), Family::Offset);
        assert_eq!(l.offset_slot(56), Some(0));
        assert_eq!(l.offset_slot(85), Some(9));
        assert_eq!(l.offset_slot(10), None);
    }
}

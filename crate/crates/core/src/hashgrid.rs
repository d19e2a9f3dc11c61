//! Binarized mixed 3D / tri-plane multi-resolution hash grid.
//!
//! Levels are stored as flat tables of `dim_embed`-wide entries. Each 3D
//! level owns one table; each 2D level owns three (planes xy, xz, yz, in that
//! order). Forward values are `sign(theta)` with `sign(0) = +1`.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{log2, LN_2};

/// Spatial hash multipliers for the x, y and z lattice coordinates.
pub const HASH_PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

/// Clamp applied to the +1 frequency before taking logarithms.
pub const FREQUENCY_EPSILON: f64 = 1e-6;

const INIT_RANGE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridConfig {
    pub res_3d: Vec<u32>,
    pub res_2d: Vec<u32>,
    pub table_3d_max: u32,
    pub table_2d_max: u32,
    pub dim_embed: u32,
}

impl GridConfig {
    /// 12 volume levels over resolutions 16..512 (tables of 2^13) and 4
    /// tri-plane levels over 128..1024 (tables of 2^15), 4 channels each.
    pub fn paper() -> Self {
        Self {
            res_3d: geometric_resolutions(12, 16, 512),
            res_2d: geometric_resolutions(4, 128, 1024),
            table_3d_max: 1 << 13,
            table_2d_max: 1 << 15,
            dim_embed: 4,
        }
    }

    /// A reduced grid for quick experiments and tests.
    pub fn small() -> Self {
        Self {
            res_3d: geometric_resolutions(6, 8, 64),
            res_2d: geometric_resolutions(2, 64, 128),
            table_3d_max: 1 << 11,
            table_2d_max: 1 << 12,
            dim_embed: 4,
        }
    }

    #[inline]
    pub fn levels_3d(&self) -> usize {
        self.res_3d.len()
    }

    #[inline]
    pub fn levels_2d(&self) -> usize {
        self.res_2d.len()
    }

    /// Length of the interpolated feature `D^h * (L_3d + 3 L_2d)`.
    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.dim_embed as usize * (self.levels_3d() + 3 * self.levels_2d())
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels_3d() + self.levels_2d() == 0 {
            return Err(Error::InvalidGrid("grid needs at least one level".into()));
        }
        if self.dim_embed == 0 {
            return Err(Error::InvalidGrid("embedding dimension must be at least 1".into()));
        }
        for (name, t) in [("3d", self.table_3d_max), ("2d", self.table_2d_max)] {
            if !t.is_power_of_two() {
                return Err(Error::InvalidGrid(alloc::format!("{name} table size {t} is not a power of two")));
            }
        }
        for (name, res) in [("3d", &self.res_3d), ("2d", &self.res_2d)] {
            if res.iter().any(|&r| r < 2) {
                return Err(Error::InvalidGrid(alloc::format!("{name} resolutions must be at least 2")));
            }
            if res.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidGrid(alloc::format!("{name} resolutions must strictly increase")));
            }
        }
        Ok(())
    }

    pub(crate) fn tables(&self) -> Vec<TableLayout> {
        let mut out = Vec::new();
        let mut offset = 0usize;
        for &res in &self.res_3d {
            let entries = table_entries(res, 3, self.table_3d_max);
            out.push(TableLayout { res, axes: Axes::Volume, entries, offset });
            offset += entries;
        }
        for &res in &self.res_2d {
            let entries = table_entries(res, 2, self.table_2d_max);
            for plane in [[0, 1], [0, 2], [1, 2]] {
                out.push(TableLayout { res, axes: Axes::Plane(plane), entries, offset });
                offset += entries;
            }
        }
        out
    }

    /// Number of binarized parameters `M`.
    pub fn param_count(&self) -> usize {
        self.tables().iter().map(|t| t.entries).sum::<usize>() * self.dim_embed as usize
    }
}

/// `levels` resolutions spaced geometrically from `lo` to `hi`, rounded to the
/// nearest integer and forced strictly increasing.
pub fn geometric_resolutions(levels: usize, lo: u32, hi: u32) -> Vec<u32> {
    if levels == 0 {
        return Vec::new();
    }
    if levels == 1 {
        return alloc::vec![lo];
    }
    let ratio = hi as f64 / lo as f64;
    let mut out: Vec<u32> = Vec::with_capacity(levels);
    for l in 0..levels {
        let r = libm::round(lo as f64 * libm::pow(ratio, l as f64 / (levels - 1) as f64)) as u32;
        let r = match out.last() {
            Some(&prev) if r <= prev => prev + 1,
            _ => r,
        };
        out.push(r);
    }
    out
}

fn table_entries(res: u32, dims: u32, table_max: u32) -> usize {
    let dense = (res as u64).pow(dims);
    dense.min(table_max as u64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Axes {
    Volume,
    Plane([usize; 2]),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TableLayout {
    pub res: u32,
    pub axes: Axes,
    pub entries: usize,
    pub offset: usize,
}

/// Table slot for lattice vertex `cell` of a level with `level_res` vertices
/// per axis. Dense row-major addressing when the level fits, XOR-folded
/// spatial hashing otherwise. `cell` has 3 (volume) or 2 (plane) components.
pub fn hash_index(level_res: u32, table_size: u32, cell: &[u32]) -> Result<u32> {
    let dims = cell.len();
    debug_assert!(dims == 2 || dims == 3);
    if cell.iter().any(|&c| c >= level_res) {
        let mut padded = [0u32; 3];
        padded[..dims].copy_from_slice(cell);
        return Err(Error::CellOutOfRange { cell: padded, res: level_res });
    }
    Ok(hash_index_unchecked(level_res, table_size as u64, cell))
}

#[inline]
fn hash_index_unchecked(level_res: u32, table_size: u64, cell: &[u32]) -> u32 {
    let res = level_res as u64;
    let dense = res.pow(cell.len() as u32);
    if dense <= table_size {
        let mut idx = 0u64;
        let mut stride = 1u64;
        for &c in cell {
            idx += c as u64 * stride;
            stride *= res;
        }
        idx as u32
    } else {
        let mut h = 0u64;
        for (c, p) in cell.iter().zip(HASH_PRIMES) {
            h ^= (*c as u64).wrapping_mul(p);
        }
        (h & (table_size - 1)) as u32
    }
}

/// Forward map applied to the continuous table parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binarization {
    /// `sign(theta)` forward, clipped straight-through backward.
    Ste,
    /// `tanh(theta)` both ways; a smooth stand-in for gradient checks.
    Tanh,
}

impl Binarization {
    #[inline]
    pub fn forward(self, theta: f64) -> f64 {
        match self {
            Binarization::Ste => sign(theta),
            Binarization::Tanh => libm::tanh(theta),
        }
    }

    #[inline]
    pub fn derivative(self, theta: f64) -> f64 {
        match self {
            Binarization::Ste => {
                if theta.abs() <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Binarization::Tanh => {
                let t = libm::tanh(theta);
                1.0 - t * t
            }
        }
    }
}

/// `+1` for `theta >= 0` (including `-0.0`), else `-1`.
#[inline]
pub fn sign(theta: f64) -> f64 {
    if theta >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Corner entries and weights touched by one query point, grouped per table.
#[derive(Debug, Clone, Default)]
pub struct Footprint {
    /// `(entry index, weight)`; 8 per volume table, 4 per plane table.
    pub corners: Vec<(u32, f64)>,
    /// Start of each table's corners in `corners`; one extra trailing entry.
    pub groups: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct HashGrid {
    config: GridConfig,
    tables: Vec<TableLayout>,
    /// Continuous parameters, `entries * dim_embed`, entry-major.
    pub theta: Vec<f64>,
}

impl HashGrid {
    /// Parameters uniform in `[-1e-2, 1e-2]`.
    pub fn new(config: GridConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let tables = config.tables();
        let m = config.param_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = (0..m).map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE)).collect();
        Ok(Self { config, tables, theta })
    }

    pub fn from_params(config: GridConfig, theta: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if theta.len() != config.param_count() {
            return Err(Error::Shape(alloc::format!(
                "grid has {} parameters, config needs {}",
                theta.len(),
                config.param_count()
            )));
        }
        let tables = config.tables();
        Ok(Self { config, tables, theta })
    }

    #[inline]
    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    #[inline]
    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    /// Binarized forward values.
    pub fn forward_values(&self) -> Vec<f64> {
        self.theta.iter().map(|&t| sign(t)).collect()
    }

    /// `(M+, M-)` counts of the binarized table.
    pub fn sign_counts(&self) -> (usize, usize) {
        let plus = self.theta.iter().filter(|&&t| t >= 0.0).count();
        (plus, self.theta.len() - plus)
    }

    /// Collects the interpolation corners for a normalized point in `[0,1]^3`.
    pub fn footprint(&self, x: [f64; 3], fp: &mut Footprint) {
        fp.corners.clear();
        fp.groups.clear();
        for t in &self.tables {
            fp.groups.push(fp.corners.len());
            let scale = (t.res - 1) as f64;
            let table = t.entries as u64;
            match t.axes {
                Axes::Volume => {
                    let (base, frac) = lattice(x, [0, 1, 2], scale, t.res);
                    for corner in 0..8u32 {
                        let mut cell = [0u32; 3];
                        let mut w = 1.0;
                        for a in 0..3 {
                            let hi = (corner >> a) & 1 == 1;
                            cell[a] = base[a] + hi as u32;
                            w *= if hi { frac[a] } else { 1.0 - frac[a] };
                        }
                        let idx = hash_index_unchecked(t.res, table, &cell);
                        fp.corners.push(((t.offset as u32) + idx, w));
                    }
                }
                Axes::Plane(axes) => {
                    let (base, frac) = lattice(x, [axes[0], axes[1], 0], scale, t.res);
                    for corner in 0..4u32 {
                        let mut cell = [0u32; 2];
                        let mut w = 1.0;
                        for a in 0..2 {
                            let hi = (corner >> a) & 1 == 1;
                            cell[a] = base[a] + hi as u32;
                            w *= if hi { frac[a] } else { 1.0 - frac[a] };
                        }
                        let idx = hash_index_unchecked(t.res, table, &cell);
                        fp.corners.push(((t.offset as u32) + idx, w));
                    }
                }
            }
        }
        fp.groups.push(fp.corners.len());
    }

    /// Interpolated feature for an already computed footprint.
    pub fn features_from(&self, fp: &Footprint, binarization: Binarization, out: &mut Vec<f64>) {
        let dim = self.config.dim_embed as usize;
        out.clear();
        out.resize(self.feature_dim(), 0.0);
        for (g, w) in fp.groups.windows(2).enumerate() {
            let slot = &mut out[g * dim..(g + 1) * dim];
            for &(entry, weight) in &fp.corners[w[0]..w[1]] {
                let base = entry as usize * dim;
                for (d, s) in slot.iter_mut().enumerate() {
                    *s += weight * binarization.forward(self.theta[base + d]);
                }
            }
        }
    }

    /// Accumulates `d loss / d theta` given `d loss / d feature`.
    pub fn backward(&self, fp: &Footprint, binarization: Binarization, grad_feature: &[f64], grad_theta: &mut [f64]) {
        let dim = self.config.dim_embed as usize;
        for (g, w) in fp.groups.windows(2).enumerate() {
            let gslot = &grad_feature[g * dim..(g + 1) * dim];
            for &(entry, weight) in &fp.corners[w[0]..w[1]] {
                let base = entry as usize * dim;
                for d in 0..dim {
                    let k = base + d;
                    grad_theta[k] += weight * gslot[d] * binarization.derivative(self.theta[k]);
                }
            }
        }
    }

    /// Like [`HashGrid::backward`], emitting `(parameter index, gradient)` pairs.
    pub fn backward_sparse(&self, fp: &Footprint, binarization: Binarization, grad_feature: &[f64], out: &mut Vec<(u32, f64)>) {
        let dim = self.config.dim_embed as usize;
        for (g, w) in fp.groups.windows(2).enumerate() {
            let gslot = &grad_feature[g * dim..(g + 1) * dim];
            for &(entry, weight) in &fp.corners[w[0]..w[1]] {
                let base = entry as usize * dim;
                for (d, &gf) in gslot.iter().enumerate() {
                    let k = base + d;
                    out.push((k as u32, weight * gf * binarization.derivative(self.theta[k])));
                }
            }
        }
    }

    /// Binarized interpolated feature at `x` in `[0,1]^3`. Every component
    /// lies in `[-1, 1]`.
    pub fn interpolate(&self, x: [f64; 3]) -> Vec<f64> {
        let mut fp = Footprint::default();
        let mut out = Vec::new();
        self.footprint(x, &mut fp);
        self.features_from(&fp, Binarization::Ste, &mut out);
        out
    }

    /// Bits needed for the binarized table under its own +1 frequency.
    pub fn entropy_loss(&self) -> f64 {
        let (plus, minus) = self.sign_counts();
        hash_bits(plus as f64, minus as f64)
    }

    /// Hash-table rate with a differentiable +1 count `M+ = sum (b + 1) / 2`;
    /// accumulates `scale * d/dtheta` into `grad`.
    pub fn entropy_loss_with_grad(&self, binarization: Binarization, scale: f64, grad: Option<&mut [f64]>) -> f64 {
        let m = self.theta.len() as f64;
        let plus: f64 = self.theta.iter().map(|&t| 0.5 * (binarization.forward(t) + 1.0)).sum();
        let loss = hash_bits(plus, m - plus);
        if let Some(grad) = grad {
            let h = plus / m;
            if h > FREQUENCY_EPSILON && h < 1.0 - FREQUENCY_EPSILON {
                let d_plus = log2((1.0 - h) / h);
                for (g, &t) in grad.iter_mut().zip(&self.theta) {
                    *g += scale * d_plus * 0.5 * binarization.derivative(t);
                }
            }
        }
        loss
    }

    /// Canonical bit order: tables in level order, entries ascending,
    /// channels ascending; `+1` maps to `true`.
    pub fn pack(&self) -> Vec<bool> {
        self.theta.iter().map(|&t| t >= 0.0).collect()
    }

    /// Grid whose parameters are the unpacked `±1` forward values.
    pub fn unpack(bits: &[bool], config: GridConfig) -> Result<Self> {
        config.validate()?;
        let m = config.param_count();
        if bits.len() != m {
            return Err(Error::Shape(alloc::format!("grid needs {m} bits, got {}", bits.len())));
        }
        let theta = bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
        Self::from_params(config, theta)
    }
}

#[inline]
fn lattice(x: [f64; 3], axes: [usize; 3], scale: f64, res: u32) -> ([u32; 3], [f64; 3]) {
    let mut base = [0u32; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let p = x[axes[a]].clamp(0.0, 1.0) * scale;
        let b = (libm::floor(p) as u32).min(res - 2);
        base[a] = b;
        frac[a] = p - b as f64;
    }
    (base, frac)
}

/// `M+ (-log2 h) + M- (-log2 (1 - h))` with `h = M+ / M` clamped to
/// `[eps, 1 - eps]`.
pub fn hash_bits(plus: f64, minus: f64) -> f64 {
    let m = plus + minus;
    if m <= 0.0 {
        return 0.0;
    }
    let h = (plus / m).clamp(FREQUENCY_EPSILON, 1.0 - FREQUENCY_EPSILON);
    hash_bits_with_frequency(plus, minus, h)
}

/// Cross-entropy of the binarized table under an arbitrary +1 frequency.
pub fn hash_bits_with_frequency(plus: f64, minus: f64, h: f64) -> f64 {
    -(plus * libm::log(h) + minus * libm::log(1.0 - h)) / LN_2
}

//! `.hacz` container.
//!
//! ```text
//! "HACZ" u32 version
//! header   grid config, layout, hidden width, Q0 (f32 x 3), sigma factors,
//!          snapping constants, bounds (f32 x 6), lambda_e, lambda_m,
//!          mask threshold (f32), N total, N kept (u64), grid and mask
//!          binary-model frequencies (u32)
//! table    5 x (offset u64, length u64)
//! S1 MLP weights, f32
//! S2 kept anchor locations, f16
//! S3 offset mask bits of kept anchors
//! S4 hash grid bits
//! S5 u64 x 3 stream lengths, then the feature, scaling and offset streams
//! ```
//!
//! Every per-anchor probability is computed by encoder and decoder from the
//! same inputs: `f32`-rounded weights, the `±1` grid, half-precision
//! locations and the stored bounds.

use half::f16;
use hac_core::coder::cdf::{build_cdf, MU_SUBDIVISIONS, SIGMA_LEVELS};
use hac_core::coder::range::{RangeDecoder, RangeEncoder};
use hac_core::coder::{decode_bits, encode_bits, BinaryModel};
use hac_core::hashgrid::{Binarization, Footprint};
use hac_core::masking::prune_bits;
use hac_core::ratemodel::{quantize_test, ForwardCache, SigmaBounds};
use hac_core::scene::{clamp_open_unit, SCALING_DIM};
use hac_core::{Aabb, AnchorScene, AttributeLayout, ContextModel, Family, GridConfig, HashGrid, MaskSet, RateParams};
use serde::Serialize;

use crate::bytes::{Reader, Writer};
use crate::checkpoint::{read_grid_config, write_grid_config, Checkpoint};
use crate::error::{HacError, Result};
use crate::sceneio::{read_bounds, write_bounds};

pub const MAGIC: &[u8; 4] = b"HACZ";
pub const VERSION: u32 = 1;
pub const SECTION_NAMES: [&str; 5] = ["mlp", "locations", "masks", "hash_grid", "attributes"];

const WHAT: &str = "container";

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub grid: GridConfig,
    pub dim_feat: u32,
    pub k_offsets: u32,
    pub hidden: u32,
    pub q0: [f32; 3],
    pub sigma_factors: [f32; 2],
    pub mu_subdivisions: u32,
    pub sigma_levels: u32,
    pub bounds: Aabb,
    pub lambda_e: f32,
    pub lambda_m: f32,
    pub threshold: f32,
    pub n_kept: u64,
    pub grid_f1: u32,
    pub mask_f1: u32,
}

impl Header {
    pub fn layout(&self) -> AttributeLayout {
        AttributeLayout::new(self.dim_feat as usize, self.k_offsets as usize)
    }

    fn write(&self, w: &mut Writer) {
        write_grid_config(w, &self.grid);
        w.u32(self.dim_feat);
        w.u32(self.k_offsets);
        w.u32(self.hidden);
        self.q0.iter().for_each(|&q| w.f32(q));
        self.sigma_factors.iter().for_each(|&s| w.f32(s));
        w.u32(self.mu_subdivisions);
        w.u32(self.sigma_levels);
        write_bounds(w, &self.bounds);
        w.f32(self.lambda_e);
        w.f32(self.lambda_m);
        w.f32(self.threshold);
        w.u64(self.n_kept);
        w.u32(self.grid_f1);
        w.u32(self.mask_f1);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let h = Header {
            grid: read_grid_config(r)?,
            dim_feat: r.u32()?,
            k_offsets: r.u32()?,
            hidden: r.u32()?,
            q0: [r.f32()?, r.f32()?, r.f32()?],
            sigma_factors: [r.f32()?, r.f32()?],
            mu_subdivisions: r.u32()?,
            sigma_levels: r.u32()?,
            bounds: read_bounds(r)?,
            lambda_e: r.f32()?,
            lambda_m: r.f32()?,
            threshold: r.f32()?,
            n_kept: r.u64()?,
            grid_f1: r.u32()?,
            mask_f1: r.u32()?,
        };
        if h.dim_feat == 0 || h.k_offsets == 0 || h.hidden == 0 || h.hidden > 1 << 16 || h.dim_feat > 1 << 16 || h.k_offsets > 1 << 16 {
            return Err(HacError::format(WHAT, "bad layout or hidden width"));
        }
        if h.q0.iter().any(|&q| !(q > 0.0 && q.is_finite())) {
            return Err(HacError::format(WHAT, "base steps must be positive"));
        }
        if h.sigma_factors != default_sigma_factors()
            || h.mu_subdivisions != MU_SUBDIVISIONS as u32
            || h.sigma_levels != SIGMA_LEVELS as u32
        {
            return Err(HacError::format(WHAT, "unsupported probability-table parameters"));
        }
        if h.bounds.min.iter().chain(&h.bounds.max).any(|v| !v.is_finite()) || (0..3).any(|a| h.bounds.min[a] > h.bounds.max[a]) {
            return Err(HacError::format(WHAT, "bad bounds"));
        }
        Ok(h)
    }
}

fn default_sigma_factors() -> [f32; 2] {
    [SigmaBounds::LOW_FACTOR as f32, SigmaBounds::HIGH_FACTOR as f32]
}

/// Everything the decoder must reproduce exactly.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    /// Half-precision location bits of kept anchors.
    pub locations: Vec<u16>,
    /// `K` mask bits per kept anchor.
    pub masks: Vec<bool>,
    pub grid: Vec<bool>,
    /// `f32` bits of the MLP weights.
    pub mlp: Vec<u32>,
    pub symbols: [Vec<i32>; 3],
    /// `f32` bits of the dequantized values, before any clamping.
    pub values: [Vec<u32>; 3],
}

impl Trace {
    /// First field in which two traces differ.
    pub fn first_difference(&self, other: &Trace) -> Option<&'static str> {
        if self.locations != other.locations {
            return Some("locations");
        }
        if self.masks != other.masks {
            return Some("masks");
        }
        if self.grid != other.grid {
            return Some("hash grid");
        }
        if self.mlp != other.mlp {
            return Some("mlp weights");
        }
        for f in Family::ALL {
            if self.symbols[f.index()] != other.symbols[f.index()] {
                return Some(f.name());
            }
            if self.values[f.index()] != other.values[f.index()] {
                return Some(f.name());
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Section {
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub header: Header,
    pub sections: [Section; 5],
    pub streams: [u64; 3],
    pub trace: Trace,
    pub kept_offsets: usize,
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub header: Header,
    pub scene: AnchorScene,
    /// `K` mask bits per decoded anchor.
    pub masks: Vec<bool>,
    pub sections: [Section; 5],
    pub streams: [u64; 3],
    pub trace: Trace,
}

/// Per-anchor rate parameters at codec precision.
pub struct CodecContext {
    pub grid: HashGrid,
    pub model: ContextModel,
    pub bounds: Aabb,
    fp: Footprint,
    fh: Vec<f64>,
    cache: ForwardCache,
}

impl CodecContext {
    pub fn new(grid: HashGrid, model: ContextModel, bounds: Aabb) -> Self {
        Self { grid, model, bounds, fp: Footprint::default(), fh: Vec::new(), cache: ForwardCache::default() }
    }

    /// The context the container would use for `ck`.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let grid = HashGrid::unpack(&ck.grid.pack(), ck.grid.config().clone())?;
        Ok(Self::new(grid, ck.model.rounded_to_f32(), ck.bounds))
    }

    pub fn rate(&mut self, location: [f32; 3]) -> RateParams {
        let x = self.bounds.normalize([location[0] as f64, location[1] as f64, location[2] as f64]);
        self.grid.footprint(x, &mut self.fp);
        self.grid.features_from(&self.fp, Binarization::Ste, &mut self.fh);
        self.model.forward(&self.fh, &mut self.cache);
        self.model.rate_params(&self.cache.out)
    }

    pub fn sigma_bounds(&self, family: Family) -> SigmaBounds {
        self.model.sigma_bounds(family)
    }
}

/// Half-precision round trip of a location.
pub fn half_location(p: [f32; 3]) -> Result<([u16; 3], [f32; 3])> {
    let mut bits = [0u16; 3];
    let mut out = [0f32; 3];
    for a in 0..3 {
        let h = f16::from_f32(p[a]);
        if !h.is_finite() {
            return Err(HacError::Core(hac_core::Error::InvalidScene(format!("location {} overflows half precision", p[a]))));
        }
        bits[a] = h.to_bits();
        out[a] = h.to_f32();
    }
    Ok((bits, out))
}

fn value_of(scene: &AnchorScene, i: usize, j: usize) -> f64 {
    let layout = scene.layout();
    let d = layout.dim_feat;
    (if j < d {
        scene.feature(i)[j]
    } else if j < d + SCALING_DIM {
        scene.scaling(i)[j - d]
    } else {
        scene.offset(i)[j - d - SCALING_DIM]
    }) as f64
}

pub fn encode(scene: &AnchorScene, ck: &Checkpoint) -> Result<Encoded> {
    scene.validate()?;
    let layout = scene.layout();
    if layout != ck.layout() {
        return Err(HacError::Usage(format!(
            "scene has D={} K={}, model expects D={} K={}",
            layout.dim_feat, layout.k_offsets, ck.layout().dim_feat, ck.layout().k_offsets
        )));
    }
    if ck.masks.n != scene.n {
        return Err(HacError::Usage(format!("model has masks for {} anchors, scene has {}", ck.masks.n, scene.n)));
    }
    let (nv, k) = (layout.values_per_anchor(), layout.k_offsets);
    let mut ctx = CodecContext::from_checkpoint(ck)?;
    let hard = ck.masks.hard();
    let pruned = prune_bits(scene.n, k, &hard)?;
    let mut trace = Trace { grid: ck.grid.pack(), ..Default::default() };
    trace.mlp = ctx.model.params.iter().map(|&p| (p as f32).to_bits()).collect();

    let mut encoders: [RangeEncoder; 3] = Default::default();
    for &i in &pruned.kept_anchors {
        let (bits, loc) = half_location(scene.location(i))?;
        trace.locations.extend_from_slice(&bits);
        let mrow = &hard[i * k..(i + 1) * k];
        trace.masks.extend_from_slice(mrow);
        let rp = ctx.rate(loc);
        for j in 0..nv {
            if layout.offset_slot(j).is_some_and(|s| !mrow[s]) {
                continue;
            }
            let fam = layout.family_of(j);
            let c = fam.index();
            let q = rp.q[c];
            let (sym, v) = quantize_test(value_of(scene, i, j), q)?;
            let table = build_cdf(rp.mu[j], rp.sigma[j], q, ctx.sigma_bounds(fam))?;
            table.encode(&mut encoders[c], sym)?;
            trace.symbols[c].push(sym);
            trace.values[c].push((v as f32).to_bits());
        }
    }
    let n_kept = pruned.kept_anchors.len();
    let streams: Vec<Vec<u8>> = encoders
        .into_iter()
        .enumerate()
        .map(|(c, e)| if trace.symbols[c].is_empty() { Vec::new() } else { e.finish() })
        .collect();

    let grid_model = BinaryModel::fit(&trace.grid);
    let mask_model = BinaryModel::fit(&trace.masks);
    let header = Header {
        grid: ck.grid.config().clone(),
        dim_feat: layout.dim_feat as u32,
        k_offsets: k as u32,
        hidden: ctx.model.hidden as u32,
        q0: ck.model.q0.map(|q| q as f32),
        sigma_factors: default_sigma_factors(),
        mu_subdivisions: MU_SUBDIVISIONS as u32,
        sigma_levels: SIGMA_LEVELS as u32,
        bounds: ck.bounds,
        lambda_e: ck.lambda_e as f32,
        lambda_m: ck.lambda_m as f32,
        threshold: ck.masks.threshold as f32,
        n_kept: n_kept as u64,
        grid_f1: grid_model.frequency_one(),
        mask_f1: mask_model.frequency_one(),
    };

    let mut s1 = Writer::new();
    trace.mlp.iter().for_each(|&b| s1.u32(b));
    let mut s2 = Writer::new();
    trace.locations.iter().for_each(|&b| s2.u16(b));
    let s3 = if trace.masks.is_empty() { Vec::new() } else { encode_bits(&trace.masks, mask_model) };
    let s4 = encode_bits(&trace.grid, grid_model);
    let mut s5 = Writer::new();
    streams.iter().for_each(|s| s5.u64(s.len() as u64));
    streams.iter().for_each(|s| s5.bytes(s));

    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    header.write(&mut w);
    let bodies = [s1.buf, s2.buf, s3, s4, s5.buf];
    let mut offset = (w.len() + 16 * bodies.len()) as u64;
    let mut sections = [Section { offset: 0, len: 0 }; 5];
    for (s, b) in sections.iter_mut().zip(&bodies) {
        *s = Section { offset, len: b.len() as u64 };
        w.u64(offset);
        w.u64(s.len);
        offset += s.len;
    }
    bodies.iter().for_each(|b| w.bytes(b));

    Ok(Encoded {
        bytes: w.buf,
        header,
        sections,
        streams: [0, 1, 2].map(|c| streams[c].len() as u64),
        trace,
        kept_offsets: pruned.kept_offset_count(),
    })
}

/// Header and section table of a container, without decoding any payload.
pub fn parse_layout(bytes: &[u8]) -> Result<(Header, [Section; 5])> {
    let mut r = Reader::new(bytes, WHAT);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let header = Header::read(&mut r)?;
    let mut sections = [Section { offset: 0, len: 0 }; 5];
    for s in &mut sections {
        *s = Section { offset: r.u64()?, len: r.u64()? };
    }
    let mut expect = r.pos() as u64;
    for (s, name) in sections.iter().zip(SECTION_NAMES) {
        if s.offset != expect {
            return Err(HacError::format(WHAT, format!("section {name} starts at {} instead of {expect}", s.offset)));
        }
        expect = s.offset.checked_add(s.len).ok_or_else(|| HacError::format(WHAT, "section length overflow"))?;
    }
    if expect != bytes.len() as u64 {
        return Err(HacError::format(WHAT, format!("sections end at {expect}, file has {} bytes", bytes.len())));
    }
    Ok((header, sections))
}

fn section<'a>(bytes: &'a [u8], s: Section) -> &'a [u8] {
    &bytes[s.offset as usize..(s.offset + s.len) as usize]
}

fn expect_len(name: &str, got: u64, want: u64) -> Result<()> {
    if got != want {
        return Err(HacError::format(WHAT, format!("section {name} has {got} bytes, expected {want}")));
    }
    Ok(())
}

/// Lengths of the three attribute streams in S5.
pub fn stream_lengths(bytes: &[u8], s5: Section) -> Result<[u64; 3]> {
    let body = section(bytes, s5);
    let mut r = Reader::new(body, WHAT);
    let lens = [r.u64()?, r.u64()?, r.u64()?];
    let total = lens.iter().try_fold(24u64, |a, &l| a.checked_add(l));
    if total != Some(body.len() as u64) {
        return Err(HacError::format(WHAT, "attribute stream lengths disagree with the section"));
    }
    Ok(lens)
}

fn binary_model(f1: u32, what: &str) -> Result<BinaryModel> {
    BinaryModel::from_frequency(f1).ok_or_else(|| HacError::format(WHAT, format!("bad {what} model frequency {f1}")))
}

/// Decodes only the mask bits of kept anchors.
pub fn decode_masks(bytes: &[u8], header: &Header, sections: &[Section; 5]) -> Result<Vec<bool>> {
    let count = (header.n_kept as usize)
        .checked_mul(header.k_offsets as usize)
        .ok_or_else(|| HacError::format(WHAT, "mask count overflow"))?;
    let body = section(bytes, sections[2]);
    if count == 0 {
        expect_len("masks", body.len() as u64, 0)?;
        return Ok(Vec::new());
    }
    let masks = decode_bits(body, count, binary_model(header.mask_f1, "mask")?)?;
    let k = header.k_offsets as usize;
    if masks.chunks_exact(k).any(|row| !row.iter().any(|&b| b)) {
        return Err(HacError::format(WHAT, "a kept anchor has no surviving offset"));
    }
    Ok(masks)
}

pub fn decode(bytes: &[u8]) -> Result<Decoded> {
    let (header, sections) = parse_layout(bytes)?;
    let layout = header.layout();
    let (nv, k) = (layout.values_per_anchor(), layout.k_offsets);
    let n_kept = usize::try_from(header.n_kept).map_err(|_| HacError::format(WHAT, "anchor count too large"))?;
    if (n_kept as u64).checked_mul(6) != Some(sections[1].len) {
        return Err(HacError::format(WHAT, format!("{} location bytes for {n_kept} anchors", sections[1].len)));
    }

    let feature_dim = header.grid.feature_dim();
    let hidden = header.hidden as usize;
    let count = ContextModel::param_count(feature_dim, hidden, layout);
    expect_len("mlp", sections[0].len, count as u64 * 4)?;
    let mut r = Reader::new(section(bytes, sections[0]), WHAT);
    let mlp: Vec<u32> = (0..count).map(|_| r.u32()).collect::<Result<_>>()?;
    let params = mlp.iter().map(|&b| f32::from_bits(b) as f64).collect();
    let q0 = header.q0.map(|q| q as f64);
    let model = ContextModel::from_params(feature_dim, hidden, layout, q0, params)?;

    let mut r = Reader::new(section(bytes, sections[1]), WHAT);
    let locations: Vec<u16> = (0..n_kept * 3).map(|_| r.u16()).collect::<Result<_>>()?;

    let masks = decode_masks(bytes, &header, &sections)?;
    let m = header.grid.param_count();
    let grid_bits = decode_bits(section(bytes, sections[3]), m, binary_model(header.grid_f1, "grid")?)?;
    let grid = HashGrid::unpack(&grid_bits, header.grid.clone())?;
    let streams = stream_lengths(bytes, sections[4])?;
    let s5 = section(bytes, sections[4]);
    let mut at = 24usize;
    let mut bodies: Vec<&[u8]> = Vec::new();
    for &l in &streams {
        bodies.push(&s5[at..at + l as usize]);
        at += l as usize;
    }

    let mut ctx = CodecContext::new(grid, model, header.bounds);
    let mut trace = Trace { locations, masks: masks.clone(), grid: grid_bits, mlp, ..Default::default() };
    let mut decoders: Vec<Option<RangeDecoder<'_>>> = vec![None, None, None];
    let mut scene = AnchorScene::empty(layout.dim_feat, k);
    scene.n = n_kept;
    let mut bounds = header.bounds;
    for i in 0..n_kept {
        let mut loc = [0f32; 3];
        for a in 0..3 {
            let h = f16::from_bits(trace.locations[3 * i + a]);
            if !h.is_finite() {
                return Err(HacError::format(WHAT, "non-finite location"));
            }
            loc[a] = h.to_f32();
        }
        scene.locations.extend_from_slice(&loc);
        bounds.include(loc);
        let mrow = &masks[i * k..(i + 1) * k];
        let rp = ctx.rate(loc);
        for j in 0..nv {
            let fam = layout.family_of(j);
            let c = fam.index();
            let slot = layout.offset_slot(j);
            let value = if slot.is_some_and(|s| !mrow[s]) {
                0.0
            } else {
                let q = rp.q[c];
                let table = build_cdf(rp.mu[j], rp.sigma[j], q, ctx.sigma_bounds(fam))?;
                if decoders[c].is_none() {
                    decoders[c] = Some(RangeDecoder::new(bodies[c])?);
                }
                let sym = table.decode(decoders[c].as_mut().unwrap())?;
                let v = (sym as f64 * q) as f32;
                trace.symbols[c].push(sym);
                trace.values[c].push(v.to_bits());
                v
            };
            match fam {
                Family::Feature => scene.features.push(value),
                Family::Scaling => scene.scalings.push(clamp_open_unit(value)),
                Family::Offset => scene.offsets.push(value),
            }
        }
    }
    for (c, d) in decoders.iter().enumerate() {
        let used = d.as_ref().map_or(0, |d| d.consumed());
        if used != bodies[c].len() {
            return Err(HacError::format(WHAT, format!("{} stream has {} bytes, decoder used {used}", Family::ALL[c].name(), bodies[c].len())));
        }
    }
    scene.bounds = bounds;
    scene.validate()?;
    Ok(Decoded { header, scene, masks, sections, streams, trace })
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSummary {
    pub res_3d: Vec<u32>,
    pub res_2d: Vec<u32>,
    pub table_3d_max: u32,
    pub table_2d_max: u32,
    pub dim_embed: u32,
    pub params: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedSection {
    pub name: &'static str,
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Inspection {
    pub version: u32,
    pub total_bytes: usize,
    pub kept_anchors: u64,
    pub dim_feat: u32,
    pub k_offsets: u32,
    pub hidden: u32,
    pub grid: GridSummary,
    pub q0: [f32; 3],
    pub bounds_min: [f32; 3],
    pub bounds_max: [f32; 3],
    pub lambda_e: f32,
    pub lambda_m: f32,
    pub mask_threshold: f32,
    pub header_bytes: u64,
    pub sections: Vec<NamedSection>,
    pub families: Vec<FamilyRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyRate {
    pub family: &'static str,
    pub bytes: u64,
    pub values: u64,
    pub bits_per_param: f64,
}

/// Coded value counts per family: every kept anchor's features and
/// scalings, and the three components of each surviving offset.
pub fn coded_counts(header: &Header, kept_offsets: usize) -> [u64; 3] {
    let n = header.n_kept;
    [n * header.dim_feat as u64, n * SCALING_DIM as u64, 3 * kept_offsets as u64]
}

pub fn family_rates(streams: [u64; 3], counts: [u64; 3]) -> Vec<FamilyRate> {
    Family::ALL
        .iter()
        .map(|f| {
            let c = f.index();
            FamilyRate {
                family: f.name(),
                bytes: streams[c],
                values: counts[c],
                bits_per_param: if counts[c] == 0 { 0.0 } else { 8.0 * streams[c] as f64 / counts[c] as f64 },
            }
        })
        .collect()
}

pub fn inspect(bytes: &[u8]) -> Result<Inspection> {
    let (h, sections) = parse_layout(bytes)?;
    let streams = stream_lengths(bytes, sections[4])?;
    let kept_offsets = decode_masks(bytes, &h, &sections)?.iter().filter(|&&b| b).count();
    Ok(Inspection {
        version: VERSION,
        total_bytes: bytes.len(),
        kept_anchors: h.n_kept,
        dim_feat: h.dim_feat,
        k_offsets: h.k_offsets,
        hidden: h.hidden,
        grid: GridSummary {
            params: h.grid.param_count(),
            res_3d: h.grid.res_3d.clone(),
            res_2d: h.grid.res_2d.clone(),
            table_3d_max: h.grid.table_3d_max,
            table_2d_max: h.grid.table_2d_max,
            dim_embed: h.grid.dim_embed,
        },
        q0: h.q0,
        bounds_min: h.bounds.min,
        bounds_max: h.bounds.max,
        lambda_e: h.lambda_e,
        lambda_m: h.lambda_m,
        mask_threshold: h.threshold,
        header_bytes: sections[0].offset,
        sections: sections
            .iter()
            .zip(SECTION_NAMES)
            .map(|(s, name)| NamedSection { name, offset: s.offset, bytes: s.len })
            .collect(),
        families: family_rates(streams, coded_counts(&h, kept_offsets)),
    })
}

impl Decoded {
    /// Checkpoint that re-encodes the decoded scene: `±1` grid, the stored
    /// weights and hard masks of the kept anchors.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let h = &self.header;
        let layout = h.layout();
        let grid = HashGrid::unpack(&self.trace.grid, h.grid.clone())?;
        let params = self.trace.mlp.iter().map(|&b| f32::from_bits(b) as f64).collect();
        let model = ContextModel::from_params(grid.feature_dim(), h.hidden as usize, layout, h.q0.map(|q| q as f64), params)?;
        let mut masks = MaskSet::from_bits(self.scene.n, layout.k_offsets, &self.masks)?;
        masks.threshold = h.threshold as f64;
        Ok(Checkpoint { grid, model, masks, bounds: h.bounds, lambda_e: h.lambda_e as f64, lambda_m: h.lambda_m as f64 })
    }
}

/// Encodes, decodes and compares against the encoder's own trace.
pub fn verify(scene: &AnchorScene, ck: &Checkpoint) -> Result<(Encoded, Decoded)> {
    let enc = encode(scene, ck)?;
    let dec = decode(&enc.bytes)?;
    if let Some(field) = enc.trace.first_difference(&dec.trace) {
        return Err(HacError::Verify(format!("decoded {field} differ from the encoder's")));
    }
    if dec.header != enc.header {
        return Err(HacError::Verify("decoded header differs".into()));
    }
    if dec.scene.n != enc.header.n_kept as usize {
        return Err(HacError::Verify("decoded anchor count differs".into()));
    }
    Ok((enc, dec))
}

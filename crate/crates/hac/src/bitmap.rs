//! Bit-allocation maps: estimated bits of each anchor binned on a voxel grid.

use std::collections::BTreeMap;

use hac_core::masking::prune_bits;
use hac_core::ratemodel::{anchor_bits, entropy_bits, quantize_test, FamilyBits};
use hac_core::{AnchorScene, RateParams};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::container::{half_location, CodecContext};
use crate::error::{HacError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoxelRecord {
    pub ix: u32,
    pub iy: u32,
    pub iz: u32,
    pub anchor_count: usize,
    pub total_bits: f64,
    pub mean_bits_per_anchor: f64,
}

impl VoxelRecord {
    pub const CSV_HEADER: &'static str = "ix,iy,iz,anchor_count,total_bits,mean_bits_per_anchor";

    pub fn csv(&self) -> String {
        format!("{},{},{},{},{},{}", self.ix, self.iy, self.iz, self.anchor_count, self.total_bits, self.mean_bits_per_anchor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BitMap {
    pub resolution: u32,
    pub records: Vec<VoxelRecord>,
    /// Bits per anchor, zero for pruned anchors.
    pub anchor_bits: Vec<f64>,
    /// `entropy_bits` of the whole scene under the same rate parameters.
    pub scene_bits: FamilyBits,
}

/// Voxel of a normalized position on a `g^3` lattice.
pub fn voxel_of(x: [f64; 3], g: u32) -> [u32; 3] {
    x.map(|v| ((v * g as f64) as u32).min(g - 1))
}

pub fn bit_allocation_map(scene: &AnchorScene, ck: &Checkpoint, g: u32) -> Result<BitMap> {
    if g == 0 {
        return Err(HacError::Usage("voxel resolution must be at least 1".into()));
    }
    scene.validate()?;
    let layout = scene.layout();
    if layout != ck.layout() || ck.masks.n != scene.n {
        return Err(HacError::Usage("scene and model disagree in shape".into()));
    }
    let (nv, k) = (layout.values_per_anchor(), layout.k_offsets);
    let mut ctx = CodecContext::from_checkpoint(ck)?;
    let hard = ck.masks.hard();
    let kept = prune_bits(scene.n, k, &hard)?;
    let mut rates: Vec<RateParams> = Vec::with_capacity(scene.n);
    let mut symbols = Vec::with_capacity(scene.n * nv);
    let mut row = Vec::with_capacity(nv);
    for i in 0..scene.n {
        let (_, loc) = half_location(scene.location(i))?;
        let rp = ctx.rate(loc);
        scene.attribute_row(i, &mut row);
        let mrow = &hard[i * k..(i + 1) * k];
        let live = mrow.iter().any(|&b| b);
        for j in 0..nv {
            if !live || layout.offset_slot(j).is_some_and(|s| !mrow[s]) {
                symbols.push(0);
                continue;
            }
            let q = rp.q[layout.family_of(j).index()];
            symbols.push(quantize_test(row[j], q)?.0);
        }
        rates.push(rp);
    }
    let mut per_anchor = vec![0.0; scene.n];
    for &i in &kept.kept_anchors {
        let b = anchor_bits(layout, &rates[i], &symbols[i * nv..(i + 1) * nv], &hard[i * k..(i + 1) * k])?;
        per_anchor[i] = b.total();
    }
    let scene_bits = entropy_bits(layout, &rates, &symbols, &hard)?;

    let mut bins: BTreeMap<[u32; 3], (usize, f64)> = BTreeMap::new();
    for (i, &bits) in per_anchor.iter().enumerate() {
        let p = scene.location(i);
        let x = ck.bounds.normalize([p[0] as f64, p[1] as f64, p[2] as f64]);
        let e = bins.entry(voxel_of(x, g)).or_default();
        e.0 += 1;
        e.1 += bits;
    }
    let records = bins
        .into_iter()
        .map(|([ix, iy, iz], (count, total))| VoxelRecord {
            ix,
            iy,
            iz,
            anchor_count: count,
            total_bits: total,
            mean_bits_per_anchor: total / count as f64,
        })
        .collect();
    Ok(BitMap { resolution: g, records, anchor_bits: per_anchor, scene_bits })
}

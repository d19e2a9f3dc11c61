//! Per-component size table: sizes in MB and bits per surviving parameter.

use std::fmt;

use serde::Serialize;

use crate::container::{coded_counts, decode_masks, family_rates, parse_layout, stream_lengths, Encoded, FamilyRate, Header, Section};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub kept_anchors: u64,
    pub kept_offsets: u64,
    pub total_bytes: u64,
    pub families: Vec<FamilyRate>,
    pub mlp_bytes: u64,
    pub location_bytes: u64,
    pub mask_bytes: u64,
    pub grid_bytes: u64,
    pub header_bytes: u64,
}

impl Report {
    pub fn from_parts(header: &Header, sections: &[Section; 5], streams: [u64; 3], kept_offsets: usize, total: u64) -> Self {
        Report {
            kept_anchors: header.n_kept,
            kept_offsets: kept_offsets as u64,
            total_bytes: total,
            families: family_rates(streams, coded_counts(header, kept_offsets)),
            mlp_bytes: sections[0].len,
            location_bytes: sections[1].len,
            mask_bytes: sections[2].len,
            grid_bytes: sections[3].len,
            header_bytes: sections[0].offset,
        }
    }

    pub fn from_encoded(e: &Encoded) -> Self {
        Self::from_parts(&e.header, &e.sections, e.streams, e.kept_offsets, e.bytes.len() as u64)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, sections) = parse_layout(bytes)?;
        let streams = stream_lengths(bytes, sections[4])?;
        let kept = decode_masks(bytes, &header, &sections)?.iter().filter(|&&b| b).count();
        Ok(Self::from_parts(&header, &sections, streams, kept, bytes.len() as u64))
    }
}

fn mb(bytes: u64) -> f64 {
    bytes as f64 / 1_000_000.0
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kept anchors {}, surviving offsets {}", self.kept_anchors, self.kept_offsets)?;
        writeln!(f, "{:<12} {:>12} {:>12} {:>22}", "component", "size (MB)", "values", "Per-param size (bit)")?;
        for r in &self.families {
            writeln!(f, "{:<12} {:>12.6} {:>12} {:>22.4}", r.family, mb(r.bytes), r.values, r.bits_per_param)?;
        }
        for (name, b) in [
            ("mlp", self.mlp_bytes),
            ("locations", self.location_bytes),
            ("masks", self.mask_bytes),
            ("hash_grid", self.grid_bytes),
            ("header", self.header_bytes),
        ] {
            writeln!(f, "{:<12} {:>12.6}", name, mb(b))?;
        }
        write!(f, "{:<12} {:>12.6}", "total", mb(self.total_bytes))
    }
}

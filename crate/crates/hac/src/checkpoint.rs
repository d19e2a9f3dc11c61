//! `.hacmodel`: trained grid, context model and mask logits at full precision.

use std::path::Path;

use hac_core::trainer::Trained;
use hac_core::{Aabb, AttributeLayout, ContextModel, GridConfig, HashGrid, MaskSet};

use crate::bytes::{read_file, write_file, Reader, Writer};
use crate::error::{HacError, Result};
use crate::sceneio::{read_bounds, write_bounds};

pub const MAGIC: &[u8; 4] = b"HACM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub grid: HashGrid,
    pub model: ContextModel,
    pub masks: MaskSet,
    pub bounds: Aabb,
    pub lambda_e: f64,
    pub lambda_m: f64,
}

impl Checkpoint {
    pub fn from_trained(t: &Trained, lambda_e: f64, lambda_m: f64) -> Self {
        Self {
            grid: t.grid.clone(),
            model: t.model.clone(),
            masks: t.masks.clone(),
            bounds: t.bounds,
            lambda_e,
            lambda_m,
        }
    }

    pub fn layout(&self) -> AttributeLayout {
        self.model.layout
    }
}

pub fn write_grid_config(w: &mut Writer, c: &GridConfig) {
    for res in [&c.res_3d, &c.res_2d] {
        w.u32(res.len() as u32);
        res.iter().for_each(|&r| w.u32(r));
    }
    w.u32(c.table_3d_max);
    w.u32(c.table_2d_max);
    w.u32(c.dim_embed);
}

pub fn read_grid_config(r: &mut Reader<'_>) -> Result<GridConfig> {
    let mut levels = Vec::new();
    for _ in 0..2 {
        let n = r.u32()? as usize;
        if n > 64 {
            return Err(HacError::format("grid config", format!("{n} levels")));
        }
        levels.push((0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
    }
    let res_2d = levels.pop().unwrap();
    let res_3d = levels.pop().unwrap();
    let c = GridConfig { res_3d, res_2d, table_3d_max: r.u32()?, table_2d_max: r.u32()?, dim_embed: r.u32()? };
    if c.table_3d_max > 1 << 24 || c.table_2d_max > 1 << 24 || c.dim_embed > 64 {
        return Err(HacError::format("grid config", "table size or embedding width out of range"));
    }
    c.validate()?;
    Ok(c)
}

pub fn to_bytes(c: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    write_grid_config(&mut w, c.grid.config());
    let layout = c.layout();
    w.u32(layout.dim_feat as u32);
    w.u32(layout.k_offsets as u32);
    w.u32(c.model.hidden as u32);
    c.model.q0.iter().for_each(|&q| w.f64(q));
    w.f64(c.masks.threshold);
    write_bounds(&mut w, &c.bounds);
    w.f64(c.lambda_e);
    w.f64(c.lambda_m);
    w.u64(c.masks.n as u64);
    c.grid.theta.iter().for_each(|&v| w.f64(v));
    c.model.params.iter().for_each(|&v| w.f64(v));
    c.masks.logits.iter().for_each(|&v| w.f64(v));
    w.buf
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, "model file");
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let config = read_grid_config(&mut r)?;
    let layout = AttributeLayout::new(r.u32()? as usize, r.u32()? as usize);
    let hidden = r.u32()? as usize;
    if layout.dim_feat == 0 || layout.k_offsets == 0 || hidden == 0 || hidden > 1 << 16 {
        return Err(HacError::format("model file", "bad layout or hidden width"));
    }
    let q0 = [r.f64()?, r.f64()?, r.f64()?];
    let threshold = r.f64()?;
    let bounds = read_bounds(&mut r)?;
    let lambda_e = r.f64()?;
    let lambda_m = r.f64()?;
    let n = r.count(8 * layout.k_offsets)?;
    let theta = r.f64_vec(config.param_count())?;
    let grid = HashGrid::from_params(config, theta)?;
    let count = ContextModel::param_count(grid.feature_dim(), hidden, layout);
    let model = ContextModel::from_params(grid.feature_dim(), hidden, layout, q0, r.f64_vec(count)?)?;
    let logits = r.f64_vec(n * layout.k_offsets)?;
    r.finish()?;
    let masks = MaskSet { n, k: layout.k_offsets, logits, threshold };
    Ok(Checkpoint { grid, model, masks, bounds, lambda_e, lambda_m })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_bytes(&read_file(path)?)
}

pub fn save(path: &Path, c: &Checkpoint) -> Result<()> {
    write_file(path, &to_bytes(c))
}

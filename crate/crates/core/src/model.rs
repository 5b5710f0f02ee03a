//! The dual-stream network: a grid encoder over sampled normals, an EdgeConv
//! encoder over spatial rows, additive fusion, a transformer encoder stack,
//! and normal/offset heads.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sf_diffcore::{
    Conv3x3, DiffError, EdgeConv, LayerNorm, Linear, MultiHeadAttention, ParamStore, ResidualBlock, Tape, Tensor, Var,
};

use crate::descriptor::{LocalSurfaceDescriptor, SPATIAL_WIDTH};
use crate::error::{Error, Result};
use crate::mesh::Vec3;

pub const EDGE_WIDTHS: [usize; 4] = [64, 64, 128, 256];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizePreset {
    Small,
    Middle,
    Large,
}

impl SizePreset {
    /// `(D, L, N_h)`.
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            Self::Small => (256, 8, 8),
            Self::Middle => (512, 12, 12),
            Self::Large => (1024, 16, 16),
        }
    }
}

impl FromStr for SizePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "small" => Ok(Self::Small),
            "middle" => Ok(Self::Middle),
            "large" => Ok(Self::Large),
            _ => Err(Error::InvalidArgument(format!("unknown preset `{s}`"))),
        }
    }
}

impl fmt::Display for SizePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Small => "small",
            Self::Middle => "middle",
            Self::Large => "large",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_width: usize,
    pub t_s: usize,
    pub p_s: usize,
    pub t_f: usize,
    pub conv_channels: usize,
    pub res_blocks: usize,
    pub knn_k: usize,
    pub size_preset: Option<SizePreset>,
}

impl ModelConfig {
    pub fn preset(p: SizePreset) -> Self {
        let (d, l, h) = p.dims();
        Self {
            size_preset: Some(p),
            ..Self::custom(d, l, h)
        }
    }

    /// Paper-default descriptor and encoder settings with the given widths.
    pub fn custom(d_model: usize, layers: usize, heads: usize) -> Self {
        Self {
            d_model,
            layers,
            heads,
            mlp_width: 4 * d_model,
            t_s: 10,
            p_s: 8,
            t_f: 240,
            conv_channels: 32,
            res_blocks: 6,
            knn_k: 20,
            size_preset: None,
        }
    }

    /// Reduced configuration that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            t_s: 5,
            p_s: 4,
            t_f: 24,
            conv_channels: 8,
            res_blocks: 2,
            ..Self::custom(64, 2, 2)
        }
    }

    pub fn grid_side(&self) -> usize {
        2 * self.t_s
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(DiffError::HeadDivisibility {
                width: self.d_model,
                heads: self.heads,
            }
            .into());
        }
        if self.mlp_width != 4 * self.d_model {
            return Err(Error::InvalidArgument(format!(
                "mlp width {} must be 4 x {}",
                self.mlp_width, self.d_model
            )));
        }
        for (name, v) in [
            ("t_s", self.t_s),
            ("p_s", self.p_s),
            ("t_f", self.t_f),
            ("conv_channels", self.conv_channels),
            ("knn_k", self.knn_k),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// One patch's normalized descriptor laid out for the network.
#[derive(Clone, Debug)]
pub struct ModelInput {
    /// `[n, side*side*3]`, the grid flattened row-major with channels last.
    pub grid: Tensor,
    /// `[n, 3, side, side]`, the same samples channel-first.
    pub planes: Tensor,
    /// `[n, 15]`.
    pub spatial: Tensor,
    pub mask: Vec<bool>,
}

impl ModelInput {
    pub fn from_descriptor(lsd: &LocalSurfaceDescriptor) -> Result<Self> {
        Self::with_mask(lsd, vec![true; lsd.faces])
    }

    pub fn with_mask(lsd: &LocalSurfaceDescriptor, mask: Vec<bool>) -> Result<Self> {
        let (n, side) = (lsd.faces, lsd.side);
        if mask.len() != n {
            return Err(Error::InvalidArgument(format!("{} mask flags for {n} faces", mask.len())));
        }
        let hw = side * side;
        let mut planes = vec![0.0; n * 3 * hw];
        for f in 0..n {
            let grid = lsd.grid(f);
            for p in 0..hw {
                for c in 0..3 {
                    planes[(f * 3 + c) * hw + p] = grid[p * 3 + c];
                }
            }
        }
        Ok(Self {
            grid: Tensor::new(&[n, hw * 3], lsd.g.clone())?,
            planes: Tensor::new(&[n, 3, side, side], planes)?,
            spatial: Tensor::new(&[n, SPATIAL_WIDTH], lsd.s.clone())?,
            mask,
        })
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    /// Token ranks under a content-derived total order (spatial row, then
    /// grid row), and the valid tokens listed in that order. Reducing over
    /// tokens in this order makes the network exactly equivariant to
    /// permutations of the face axis.
    pub fn canonical_order(&self) -> (Vec<usize>, Vec<usize>) {
        canonical_order(&self.spatial, &self.grid, &self.mask)
    }
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn canonical_order(spatial: &Tensor, grid: &Tensor, mask: &[bool]) -> (Vec<usize>, Vec<usize>) {
    let n = mask.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lex(spatial.row(a), spatial.row(b)).then_with(|| lex(grid.row(a), grid.row(b))));
    let mut rank = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let keys = order.into_iter().filter(|&i| mask[i]).collect();
    (rank, keys)
}

/// Per-face outputs in the normalized frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPrediction {
    pub normals: Vec<Vec3>,
    pub vertex_offsets: Vec<[Vec3; 3]>,
}

impl PatchPrediction {
    pub fn from_tensors(normals: &Tensor, offsets: &Tensor) -> Self {
        Self {
            normals: normals.data().chunks(3).map(Vec3::from_column_slice).collect(),
            vertex_offsets: offsets
                .data()
                .chunks(9)
                .map(|r| std::array::from_fn(|k| Vec3::from_column_slice(&r[3 * k..3 * k + 3])))
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    ln_attn: LayerNorm,
    attn: MultiHeadAttention,
    ln_mlp: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl EncoderBlock {
    fn forward(&self, tape: &mut Tape, x: Var, keys: &[usize]) -> Result<Var, DiffError> {
        let h = self.ln_attn.forward(tape, x)?;
        let h = self.attn.forward(tape, h, keys.to_vec())?;
        let x = tape.add(x, h)?;
        let h = self.ln_mlp.forward(tape, x)?;
        let h = self.fc1.forward(tape, h)?;
        let h = tape.gelu(h);
        let h = self.fc2.forward(tape, h)?;
        tape.add(x, h)
    }
}

#[derive(Clone, Debug)]
pub struct SurfaceFormer {
    config: ModelConfig,
    store: ParamStore,
    embed: Linear,
    stem: Conv3x3,
    blocks: Vec<ResidualBlock>,
    fuse_grid: Linear,
    edges: Vec<EdgeConv>,
    fuse_spatial: Linear,
    encoders: Vec<EncoderBlock>,
    ln_normal: LayerNorm,
    head_normal: Linear,
    ln_vertex: LayerNorm,
    head_vertex: Linear,
}

impl SurfaceFormer {
    /// Builds a freshly initialized model. Parameter names and creation order
    /// depend only on the configuration.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (d, c) = (config.d_model, config.conv_channels);
        let grid_len = config.grid_side() * config.grid_side() * 3;

        let embed = Linear::new(&mut store, "geometric.embed", grid_len, d, &mut rng);
        let stem = Conv3x3::new(&mut store, "geometric.stem", 3, c, &mut rng);
        let blocks = (0..config.res_blocks)
            .map(|i| ResidualBlock::new(&mut store, &format!("geometric.res{i}"), c, &mut rng))
            .collect();
        let fuse_grid = Linear::new(&mut store, "geometric.fuse", d + c, d, &mut rng);

        let mut d_in = SPATIAL_WIDTH;
        let mut edges = Vec::new();
        for (i, &w) in EDGE_WIDTHS.iter().enumerate() {
            edges.push(EdgeConv::new(&mut store, &format!("spatial.edge{i}"), d_in, w, config.knn_k, &mut rng));
            d_in = w;
        }
        let fuse_spatial = Linear::new(&mut store, "spatial.fuse", EDGE_WIDTHS.iter().sum(), d, &mut rng);

        let mut encoders = Vec::new();
        for i in 0..config.layers {
            let p = format!("encoder{i}");
            encoders.push(EncoderBlock {
                ln_attn: LayerNorm::new(&mut store, &format!("{p}.ln_attn"), d),
                attn: MultiHeadAttention::new(&mut store, &format!("{p}.attn"), d, config.heads, &mut rng)?,
                ln_mlp: LayerNorm::new(&mut store, &format!("{p}.ln_mlp"), d),
                fc1: Linear::new(&mut store, &format!("{p}.fc1"), d, config.mlp_width, &mut rng),
                fc2: Linear::new(&mut store, &format!("{p}.fc2"), config.mlp_width, d, &mut rng),
            });
        }
        let ln_normal = LayerNorm::new(&mut store, "head.normal.ln", d);
        let head_normal = Linear::new(&mut store, "head.normal", d, 3, &mut rng);
        let ln_vertex = LayerNorm::new(&mut store, "head.vertex.ln", d);
        let head_vertex = Linear::new(&mut store, "head.vertex", d, 9, &mut rng);

        Ok(Self {
            config,
            store,
            embed,
            stem,
            blocks,
            fuse_grid,
            edges,
            fuse_spatial,
            encoders,
            ln_normal,
            head_normal,
            ln_vertex,
            head_vertex,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn check_input(&self, grid: &Tensor, planes: &Tensor, spatial: &Tensor, mask: &[bool]) -> Result<(), DiffError> {
        let n = mask.len();
        let side = self.config.grid_side();
        let ok = grid.shape() == [n, side * side * 3]
            && planes.shape() == [n, 3, side, side]
            && spatial.shape() == [n, SPATIAL_WIDTH];
        if ok {
            Ok(())
        } else {
            Err(DiffError::ShapeMismatch {
                op: "surfaceformer",
                detail: format!(
                    "grid {:?}, planes {:?}, spatial {:?} for {n} tokens with grid side {side}",
                    grid.shape(),
                    planes.shape(),
                    spatial.shape()
                ),
            })
        }
    }

    /// Records the network on `tape` given the three input layouts. Returns
    /// `(normals [n,3], offsets [n,9])`; masked rows are zero.
    pub fn record_vars(
        &self,
        tape: &mut Tape,
        grid: Var,
        planes: Var,
        spatial: Var,
        mask: &[bool],
    ) -> Result<(Var, Var), DiffError> {
        self.check_input(tape.value(grid), tape.value(planes), tape.value(spatial), mask)?;
        let (rank, keys) = canonical_order(tape.value(spatial), tape.value(grid), mask);

        let e_l = self.embed.forward(tape, grid)?;
        let mut h = self.stem.forward(tape, planes)?;
        h = tape.relu(h);
        for b in &self.blocks {
            h = b.forward(tape, h)?;
        }
        let e_c = tape.avg_pool(h)?;
        let cat = tape.concat(&[e_l, e_c])?;
        let f_g = self.fuse_grid.forward(tape, cat)?;

        let mut x = spatial;
        let mut stages = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            x = e.forward(tape, x, mask, &rank)?;
            stages.push(x);
        }
        let cat = tape.concat(&stages)?;
        let f_s = self.fuse_spatial.forward(tape, cat)?;

        let mut f = tape.add(f_g, f_s)?;
        for block in &self.encoders {
            f = block.forward(tape, f, &keys)?;
        }

        let h = self.ln_normal.forward(tape, f)?;
        let h = self.head_normal.forward(tape, h)?;
        let h = tape.normalize_rows(h);
        let normals = tape.mask_rows(h, mask)?;
        let h = self.ln_vertex.forward(tape, f)?;
        let h = self.head_vertex.forward(tape, h)?;
        let offsets = tape.mask_rows(h, mask)?;
        Ok((normals, offsets))
    }

    pub fn record(&self, tape: &mut Tape, input: &ModelInput) -> Result<(Var, Var), DiffError> {
        let grid = tape.input(input.grid.clone());
        let planes = tape.input(input.planes.clone());
        let spatial = tape.input(input.spatial.clone());
        self.record_vars(tape, grid, planes, spatial, &input.mask)
    }

    pub fn forward(&self, input: &ModelInput) -> Result<PatchPrediction> {
        let mut tape = Tape::new(&self.store);
        let (n, v) = self.record(&mut tape, input)?;
        Ok(PatchPrediction::from_tensors(tape.value(n), tape.value(v)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        assert_eq!(ModelConfig::preset(SizePreset::Middle).d_model, 512);
        let c = ModelConfig::preset(SizePreset::Large);
        assert_eq!((c.d_model, c.layers, c.heads, c.mlp_width), (1024, 16, 16, 4096));
        assert_eq!("Small".parse::<SizePreset>().unwrap(), SizePreset::Small);
        assert!("tiny".parse::<SizePreset>().is_err());
    }

    #[test]
    fn rejects_indivisible_heads() {
        let c = ModelConfig::custom(30, 1, 4);
        assert!(matches!(
            SurfaceFormer::new(c, 0),
            Err(Error::Diff(DiffError::HeadDivisibility { width: 30, heads: 4 }))
        ));
    }
}

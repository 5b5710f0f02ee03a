//! Noise synthesis, supervised sample construction, augmentation, the L1
//! objective and the Adam training loop.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sf_diffcore::{Adam, Tape, Tensor};

use crate::descriptor::{normalize_patch_with, DescriptorParams, FaceGrids, LocalSurfaceDescriptor, NormalizeOptions};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec3};
use crate::model::{ModelConfig, ModelInput, PatchPrediction, SurfaceFormer};
use crate::patching::grow_patch;

/// Displaces every vertex by an isotropic Gaussian with per-axis standard
/// deviation `level` times the mean edge length.
pub fn add_gaussian_noise(mesh: &Mesh, level: f64, seed: u64) -> Result<Mesh> {
    if level == 0.0 {
        return Ok(mesh.clone());
    }
    let sigma = level * mesh.average_edge_length()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let verts = mesh
        .vertices()
        .iter()
        .map(|v| {
            let d: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
            v + Vec3::from(d) * sigma
        })
        .collect();
    mesh.with_vertices(verts)
}

/// A normalized noisy patch with targets in the same frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub lsd: LocalSurfaceDescriptor,
    pub mask: Vec<bool>,
    pub gt_normals: Vec<Vec3>,
    /// Normalized clean vertices minus normalized noisy vertices.
    pub gt_offsets: Vec<[Vec3; 3]>,
}

impl TrainingSample {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn model_input(&self) -> Result<ModelInput> {
        ModelInput::with_mask(&self.lsd, self.mask.clone())
    }

    fn targets(&self) -> Result<(Tensor, Tensor)> {
        let n = self.len();
        let normals = self.gt_normals.iter().flat_map(|v| v.iter().copied()).collect();
        let offsets = self
            .gt_offsets
            .iter()
            .flat_map(|t| t.iter().flat_map(|v| v.iter().copied()).collect::<Vec<_>>())
            .collect();
        Ok((Tensor::new(&[n, 3], normals)?, Tensor::new(&[n, 9], offsets)?))
    }
}

/// One training patch around every face of `noisy`, with ground truth from
/// `clean` mapped through the noisy patch's normalization.
pub fn build_samples(noisy: &Mesh, clean: &Mesh, config: &ModelConfig) -> Result<Vec<TrainingSample>> {
    if noisy.faces() != clean.faces() || noisy.vertex_count() != clean.vertex_count() {
        return Err(Error::TopologyMismatch(
            "noisy and clean meshes must share vertex and face indexing".into(),
        ));
    }
    let d_a = noisy.average_adjacent_center_distance()?;
    let params = DescriptorParams {
        d_a,
        p_s: config.p_s,
        t_s: config.t_s,
    };
    let grids = FaceGrids::compute_all(noisy, params)?;
    let opts = NormalizeOptions::default();
    (0..noisy.face_count())
        .into_par_iter()
        .map(|f| {
            let patch = grow_patch(noisy, f, config.t_f)?;
            let raw = grids.assemble(noisy, &patch)?;
            let (lsd, ctx) = normalize_patch_with(&raw, &patch, noisy, &opts)?;
            let mut gt_normals = Vec::with_capacity(patch.len());
            let mut gt_offsets = Vec::with_capacity(patch.len());
            for (i, &g) in patch.faces.iter().enumerate() {
                gt_normals.push(ctx.local_dir(&clean.face_normal(g)?));
                let row = lsd.spatial(i);
                let clean_v = clean.face_vertices(g);
                gt_offsets.push(std::array::from_fn(|k| {
                    ctx.local_point(&clean_v[k]) - Vec3::from_column_slice(&row[6 + 3 * k..9 + 3 * k])
                }));
            }
            Ok(TrainingSample {
                mask: vec![true; lsd.faces],
                lsd,
                gt_normals,
                gt_offsets,
            })
        })
        .collect()
}

/// Uniformly distributed rotation from a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
        .to_rotation_matrix()
        .into_inner()
}

/// Rotates every direction and position of the sample by `q`, then adds
/// Gaussian jitter of `jitter_std` to the spatial positions (poles and
/// vertices). Targets are rotated but never jittered.
pub fn augment_with(sample: &TrainingSample, q: &Matrix3<f64>, jitter_std: f64, rng: &mut impl Rng) -> TrainingSample {
    let rot = |x: &[f64]| q * Vec3::new(x[0], x[1], x[2]);
    let mut out = sample.clone();
    for (dst, src) in out.lsd.g.chunks_mut(3).zip(sample.lsd.g.chunks(3)) {
        dst.copy_from_slice(rot(src).as_slice());
    }
    for (dst, src) in out.lsd.s.chunks_mut(3).zip(sample.lsd.s.chunks(3)) {
        dst.copy_from_slice(rot(src).as_slice());
    }
    if jitter_std > 0.0 {
        for row in out.lsd.s.chunks_mut(15) {
            for (k, p) in row.chunks_mut(3).enumerate() {
                if k != 1 {
                    for x in p {
                        *x += jitter_std * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
        }
    }
    for n in &mut out.gt_normals {
        *n = q * *n;
    }
    for t in &mut out.gt_offsets {
        for v in t.iter_mut() {
            *v = q * *v;
        }
    }
    out
}

/// Random rotation plus jitter, fully determined by `seed`.
pub fn augment(sample: &TrainingSample, seed: u64, jitter_std: f64) -> TrainingSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_rotation(&mut rng);
    augment_with(sample, &q, jitter_std, &mut rng)
}

/// `Σ |ñ* − ñ|₁ + α Σ |(ṽ* − ṽ) − Δṽ|₁` over unmasked faces.
pub fn loss(pred: &PatchPrediction, sample: &TrainingSample, alpha: f64) -> Result<f64> {
    let n = sample.len();
    if pred.normals.len() != n || pred.vertex_offsets.len() != n {
        return Err(sf_diffcore::DiffError::ShapeMismatch {
            op: "loss",
            detail: format!("{} predictions for {n} faces", pred.normals.len()),
        }
        .into());
    }
    let mut normal_term = 0.0;
    let mut offset_term = 0.0;
    for i in (0..n).filter(|&i| sample.mask[i]) {
        normal_term += (sample.gt_normals[i] - pred.normals[i]).abs().sum();
        for k in 0..3 {
            offset_term += (sample.gt_offsets[i][k] - pred.vertex_offsets[i][k]).abs().sum();
        }
    }
    Ok(normal_term + alpha * offset_term)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub alpha: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub jitter_std: f64,
    pub rotate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 80,
            iterations: 100_000,
            alpha: 1.0,
            seed: 0,
            checkpoint_every: 500,
            jitter_std: 0.01,
            rotate: true,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> Adam {
        Adam {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..Adam::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample loss of each iteration's batch.
    pub loss_history: Vec<f64>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draw order: a fresh permutation of the samples per epoch.
struct Sampler {
    seed: u64,
    n: usize,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(seed: u64, n: usize) -> Self {
        let mut s = Self {
            seed,
            n,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, u64::MAX, self.epoch));
        self.order.shuffle(&mut rng);
        self.pos = 0;
    }

    fn next(&mut self) -> (usize, u64) {
        if self.pos == self.n {
            self.epoch += 1;
            self.reshuffle();
        }
        let i = self.order[self.pos];
        self.pos += 1;
        (i, self.epoch)
    }
}

/// Loss of one sample recorded on a tape, and its gradients after backward.
pub fn sample_gradients(
    model: &SurfaceFormer,
    sample: &TrainingSample,
    alpha: f64,
) -> Result<(f64, sf_diffcore::Gradients)> {
    let input = sample.model_input()?;
    let (target_n, target_v) = sample.targets()?;
    let mut tape = Tape::new(model.store());
    let (n, v) = model.record(&mut tape, &input)?;
    let a = tape.l1_loss(n, &target_n, &input.mask, 1.0)?;
    let b = tape.l1_loss(v, &target_v, &input.mask, alpha)?;
    let l = tape.add(a, b)?;
    let value = tape.value(l).data()[0];
    Ok((value, tape.backward(l)))
}

/// Mini-batch Adam over augmented draws. `on_checkpoint` runs every
/// `checkpoint_every` iterations and after the last one.
pub fn train(
    samples: &[TrainingSample],
    config: &TrainConfig,
    model: &mut SurfaceFormer,
    on_checkpoint: &mut dyn FnMut(u64, &SurfaceFormer, &Adam) -> Result<()>,
) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.batch_size == 0 || config.alpha <= 0.0 {
        return Err(Error::InvalidArgument("batch size and alpha must be positive".into()));
    }
    let adam = config.adam();
    let mut sampler = Sampler::new(config.seed, samples.len());
    let mut report = TrainReport::default();
    let weight = 1.0 / config.batch_size as f64;
    for it in 1..=config.iterations {
        let draws: Vec<(usize, u64)> = (0..config.batch_size).map(|_| sampler.next()).collect();
        let shared: &SurfaceFormer = model;
        let results = draws
            .par_iter()
            .map(|&(idx, epoch)| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, idx as u64, epoch));
                let q = if config.rotate {
                    random_rotation(&mut rng)
                } else {
                    Matrix3::identity()
                };
                let drawn = augment_with(&samples[idx], &q, config.jitter_std, &mut rng);
                sample_gradients(shared, &drawn, config.alpha)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut batch_loss = 0.0;
        for (l, grads) in &results {
            model.store_mut().accumulate(grads, weight);
            batch_loss += l * weight;
        }
        adam.step(model.store_mut())?;
        report.loss_history.push(batch_loss);
        if it % 100 == 0 {
            log::info!("iteration {it}: loss {batch_loss:.5}");
        }
        if (config.checkpoint_every > 0 && it % config.checkpoint_every == 0) || it == config.iterations {
            on_checkpoint(it as u64, model, &adam)?;
        }
    }
    Ok(report)
}

/// Reads `noisy clean` path pairs, one per line. Blank lines and `#`
/// comments are skipped; relative paths resolve against the manifest's
/// directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<(PathBuf, PathBuf)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        if parts.len() != 2 {
            return Err(Error::Parse {
                line: n + 1,
                msg: "expected `<noisy> <clean>`".into(),
            });
        }
        pairs.push((base.join(parts[0]), base.join(parts[1])));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(pairs)
}

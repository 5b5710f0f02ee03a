//! Parameterized building blocks recorded onto a [`Tape`].

use rand::Rng;

use crate::error::{mismatch, DiffError};
use crate::params::{kaiming_normal, truncated_normal};
use crate::{ParamId, ParamStore, Tape, Tensor, Var};

const AFFINE_INIT_STD: f64 = 0.02;

/// Affine map `y = x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            truncated_normal(rng, &[d_in, d_out], AFFINE_INIT_STD),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, DiffError> {
        let (w, b) = (tape.param(self.weight), tape.param(self.bias));
        tape.affine(x, w, Some(b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::full(&[d], 1.0));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[d]));
        Self { gain, bias }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, DiffError> {
        let (g, b) = (tape.param(self.gain), tape.param(self.bias));
        tape.layer_norm(x, g, b)
    }
}

/// 3x3 convolution, stride 1, zero padding 1.
#[derive(Clone, Debug)]
pub struct Conv3x3 {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv3x3 {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_normal(rng, &[c_out, c_in, 3, 3], c_in * 9),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, DiffError> {
        let (w, b) = (tape.param(self.weight), tape.param(self.bias));
        tape.conv3x3(x, w, b)
    }
}

/// Two 3x3 convolutions with a ReLU between them and an identity shortcut:
/// `y = x + conv2(relu(conv1(x)))`.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv3x3,
    pub conv2: Conv3x3,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            conv1: Conv3x3::new(store, &format!("{name}.conv1"), channels, channels, rng),
            conv2: Conv3x3::new(store, &format!("{name}.conv2"), channels, channels, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, DiffError> {
        let h = self.conv1.forward(tape, x)?;
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, h)?;
        if tape.shape(h) != tape.shape(x) {
            return Err(mismatch(
                "residual_conv_block",
                format!("{:?} vs {:?}", tape.shape(h), tape.shape(x)),
            ));
        }
        tape.add(x, h)
    }
}

/// Multi-head self-attention without positional encoding or causal mask.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        if heads == 0 || width % heads != 0 {
            return Err(DiffError::HeadDivisibility { width, heads });
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), width, width, rng),
            key: Linear::new(store, &format!("{name}.key"), width, width, rng),
            value: Linear::new(store, &format!("{name}.value"), width, width, rng),
            output: Linear::new(store, &format!("{name}.output"), width, width, rng),
            heads,
        })
    }

    /// `keys` are the tokens that may be attended to, in accumulation order;
    /// see [`Tape::attention`].
    pub fn forward(&self, tape: &mut Tape, x: Var, keys: Vec<usize>) -> Result<Var, DiffError> {
        let q = self.query.forward(tape, x)?;
        let k = self.key.forward(tape, x)?;
        let v = self.value.forward(tape, x)?;
        let a = tape.attention(q, k, v, self.heads, keys)?;
        self.output.forward(tape, a)
    }
}

/// EdgeConv: shared affine + ReLU over `[x_i, x_j - x_i]` for the `k` nearest
/// neighbors of each point in its current feature space, max-aggregated.
#[derive(Clone, Debug)]
pub struct EdgeConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub k: usize,
    pub d_in: usize,
    pub d_out: usize,
}

impl EdgeConv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        k: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            truncated_normal(rng, &[2 * d_in, d_out], AFFINE_INIT_STD),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]));
        Self {
            weight,
            bias,
            k,
            d_in,
            d_out,
        }
    }

    /// Runs with `k` clamped to one less than the number of valid points.
    /// `valid` excludes points from every neighborhood and zeroes their rows;
    /// `rank` breaks distance ties (see [`knn`]).
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        valid: &[bool],
        rank: &[usize],
    ) -> Result<Var, DiffError> {
        let n_valid = valid.iter().filter(|&&v| v).count();
        if n_valid < 2 {
            return Err(DiffError::TooFewPoints { n: n_valid, k: 1 });
        }
        let k = self.k.min(n_valid - 1);
        let neighbors = knn(tape.value(x), k, valid, rank)?;
        let (w, b) = (tape.param(self.weight), tape.param(self.bias));
        tape.edge_conv(x, w, b, &neighbors)
    }
}

/// Euclidean `k` nearest neighbors of every valid row among the other valid
/// rows, nearest first. Equal distances are ordered by `rank` (smaller first),
/// so a content-derived rank keeps the result permutation-equivariant.
/// Invalid rows get an empty list.
pub fn knn(
    x: &Tensor,
    k: usize,
    valid: &[bool],
    rank: &[usize],
) -> Result<Vec<Vec<usize>>, DiffError> {
    let n = x.rows();
    if valid.len() != n || rank.len() != n {
        return Err(mismatch("knn", "mask/rank length differs from point count"));
    }
    let n_valid = valid.iter().filter(|&&v| v).count();
    if k >= n_valid {
        return Err(DiffError::TooFewPoints { n: n_valid, k });
    }
    let mut out = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        if !valid[i] {
            out.push(Vec::new());
            continue;
        }
        let xi = x.row(i);
        cand.clear();
        for j in (0..n).filter(|&j| j != i && valid[j]) {
            let d: f64 = xi
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            cand.push((d, j));
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.total_cmp(&b.0).then(rank[a.1].cmp(&rank[b.1]))
        };
        if k < cand.len() {
            cand.select_nth_unstable_by(k, cmp);
            cand.truncate(k);
        }
        cand.sort_by(cmp);
        out.push(cand.iter().map(|&(_, j)| j).collect());
    }
    Ok(out)
}

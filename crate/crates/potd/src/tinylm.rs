//! A minimal deterministic next-token language model.
//!
//! The architecture is a context-window MLP: the embeddings of the previous
//! `context` tokens are concatenated and pushed through two tanh hidden
//! layers and a linear vocabulary projection. Small enough that a full
//! desk-scale training run takes seconds, but expressive enough to overfit
//! to the specific token windows it was trained on, which is the signal the
//! audit statistics look for.
//!
//! Determinism contract: weights are stored as `f32`, every intermediate
//! computation runs in `f64`, and all reductions happen in a fixed order.
//! Training is therefore a pure function of (seed, data order, config) and
//! two runs agree bitwise on any platform.

use serde::{Deserialize, Serialize};

use crate::error::{PotdError, Result};
use crate::rng::{Key, Stream};

/// Weight initialization scheme, selected per architecture config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitScheme {
    /// All zeros. Degenerate; used for tests.
    Zero,
    /// Every entry `N(0, scale^2)`.
    Gaussian { scale: f64 },
    /// Matrices `N(0, 1/fan_in)`, biases zero.
    ScaledGaussian,
}

/// Model architecture. `context` is the number of preceding tokens used to
/// predict the next one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub vocab: usize,
    pub seq_len: usize,
    pub context: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub init: InitScheme,
}

impl Default for ArchConfig {
    fn default() -> Self {
        // ~100K parameters at vocab 96 / sequence length 64.
        ArchConfig {
            vocab: 96,
            seq_len: 64,
            context: 2,
            embed_dim: 32,
            hidden_dim: 240,
            init: InitScheme::ScaledGaussian,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return Err(PotdError::Config("vocab must be >= 2".into()));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(PotdError::Config("embed/hidden dims must be positive".into()));
        }
        if self.context == 0 || self.seq_len <= self.context {
            return Err(PotdError::Config(format!(
                "need seq_len > context, got seq_len {} context {}",
                self.seq_len, self.context
            )));
        }
        Ok(())
    }

    /// Tensor names and dims, in flat-vector order.
    pub fn shape_table(&self) -> Vec<TensorShape> {
        let (v, e, c, h) = (self.vocab, self.embed_dim, self.context, self.hidden_dim);
        vec![
            TensorShape::new("embed", vec![v, e]),
            TensorShape::new("w1", vec![h, c * e]),
            TensorShape::new("b1", vec![h]),
            TensorShape::new("w2", vec![h, h]),
            TensorShape::new("b2", vec![h]),
            TensorShape::new("w_out", vec![v, h]),
            TensorShape::new("b_out", vec![v]),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.shape_table().iter().map(|t| t.len()).sum()
    }

    /// Number of next-token predictions per sequence.
    pub fn predictions_per_seq(&self) -> usize {
        self.seq_len - self.context
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub dims: Vec<usize>,
}

impl TensorShape {
    fn new(name: &str, dims: Vec<usize>) -> Self {
        TensorShape { name: name.into(), dims }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat model weights plus the shape table describing how the flat vector
/// maps onto named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub flat: Vec<f32>,
    pub shapes: Vec<TensorShape>,
}

impl WeightVector {
    pub fn zeros(arch: &ArchConfig) -> Self {
        let shapes = arch.shape_table();
        let d = shapes.iter().map(|t| t.len()).sum();
        WeightVector { flat: vec![0.0; d], shapes }
    }

    pub fn dim(&self) -> usize {
        self.flat.len()
    }

    /// Byte offset table in flat order.
    pub fn offsets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.shapes.len());
        let mut at = 0;
        for t in &self.shapes {
            out.push((at, t.len()));
            at += t.len();
        }
        out
    }

    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        let mut at = 0;
        for t in &self.shapes {
            if t.name == name {
                return Some(&self.flat[at..at + t.len()]);
            }
            at += t.len();
        }
        None
    }

    pub fn assert_finite(&self) -> Result<()> {
        let mut at = 0;
        for t in &self.shapes {
            if self.flat[at..at + t.len()].iter().any(|x| !x.is_finite()) {
                return Err(PotdError::Training { segment: 0, tensor: t.name.clone() });
            }
            at += t.len();
        }
        Ok(())
    }
}

/// One batch of token sequences (row-major `rows x cols`).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub tokens: Vec<u32>,
    pub rows: usize,
    pub cols: usize,
}

impl Batch {
    pub fn new(tokens: Vec<u32>, rows: usize, cols: usize) -> Result<Self> {
        if tokens.len() != rows * cols {
            return Err(PotdError::Contract(format!(
                "batch of {} tokens does not fill {rows}x{cols}",
                tokens.len()
            )));
        }
        Ok(Batch { tokens, rows, cols })
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.tokens[r * self.cols..(r + 1) * self.cols]
    }

    fn check_against(&self, arch: &ArchConfig) -> Result<()> {
        if self.cols != arch.seq_len {
            return Err(PotdError::Contract(format!(
                "batch sequence length {} != model sequence length {}",
                self.cols, arch.seq_len
            )));
        }
        if let Some(&t) = self.tokens.iter().find(|&&t| t as usize >= arch.vocab) {
            return Err(PotdError::Contract(format!(
                "token id {t} out of vocabulary (size {})",
                arch.vocab
            )));
        }
        Ok(())
    }
}

/// Adam optimizer configuration with linear warmup and cosine decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    /// Final learning rate as a fraction of the peak (cosine floor).
    pub final_lr_frac: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            peak_lr: 3e-3,
            warmup_steps: 8,
            total_steps: 130,
            final_lr_frac: 0.5,
            // Short first-moment memory: with ~13 steps per segment, a long
            // momentum tail keeps pushing the previous segment's loss down
            // after its checkpoint, which smears per-segment attribution.
            beta1: 0.5,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    /// Learning rate at 1-based step `t`.
    pub fn lr_at(&self, t: u64) -> f64 {
        if self.warmup_steps > 0 && t <= self.warmup_steps {
            return self.peak_lr * t as f64 / self.warmup_steps as f64;
        }
        let total = self.total_steps.max(self.warmup_steps + 1);
        let span = (total - self.warmup_steps) as f64;
        let progress = ((t - self.warmup_steps) as f64 / span).min(1.0);
        let floor = self.peak_lr * self.final_lr_frac;
        floor + (self.peak_lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Adam moment buffers plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl OptimizerState {
    pub fn new(d: usize) -> Self {
        OptimizerState { step: 0, m: vec![0.0; d], v: vec![0.0; d] }
    }
}

/// Deterministic weight initialization. Each tensor draws from an
/// independent substream keyed by `H(seed || tensor-name)`, so a tensor's
/// values do not depend on the sizes of the tensors before it.
pub fn init_weights(seed: Key, arch: &ArchConfig) -> Result<WeightVector> {
    arch.validate()?;
    let mut w = WeightVector::zeros(arch);
    let mut at = 0;
    for t in arch.shape_table() {
        let slice = &mut w.flat[at..at + t.len()];
        match arch.init {
            InitScheme::Zero => {}
            InitScheme::Gaussian { scale } => {
                let mut s = Stream::labeled(seed, t.name.as_bytes());
                for x in slice.iter_mut() {
                    *x = (scale * s.gaussian()) as f32;
                }
            }
            InitScheme::ScaledGaussian => {
                if t.dims.len() == 2 {
                    let scale = 1.0 / (t.dims[1] as f64).sqrt();
                    let mut s = Stream::labeled(seed, t.name.as_bytes());
                    for x in slice.iter_mut() {
                        *x = (scale * s.gaussian()) as f32;
                    }
                }
                // biases stay zero
            }
        }
        at += t.len();
    }
    Ok(w)
}

/// Borrowed views of the named tensors inside a flat weight vector.
struct View<'a> {
    embed: &'a [f32],
    w1: &'a [f32],
    b1: &'a [f32],
    w2: &'a [f32],
    b2: &'a [f32],
    w_out: &'a [f32],
    b_out: &'a [f32],
}

fn view<'a>(w: &'a WeightVector, arch: &ArchConfig) -> Result<View<'a>> {
    if w.shapes != arch.shape_table() {
        return Err(PotdError::Contract("weight shape table does not match architecture".into()));
    }
    let offs = w.offsets();
    let s = |i: usize| &w.flat[offs[i].0..offs[i].0 + offs[i].1];
    Ok(View {
        embed: s(0),
        w1: s(1),
        b1: s(2),
        w2: s(3),
        b2: s(4),
        w_out: s(5),
        b_out: s(6),
    })
}

#[inline]
fn matvec(out: &mut [f64], mat: &[f32], bias: &[f32], x: &[f64]) {
    let n = x.len();
    for (o, (row, b)) in out.iter_mut().zip(mat.chunks_exact(n).zip(bias)) {
        let mut acc = 0.0f64;
        for (w, v) in row.iter().zip(x) {
            acc += *w as f64 * v;
        }
        *o = acc + *b as f64;
    }
}

/// `out[j] += sum_i mat[i][j] * dy[i]` (transposed matvec, accumulating).
#[inline]
fn matvec_t_acc(out: &mut [f64], mat: &[f32], dy: &[f64]) {
    let n = out.len();
    for (row, d) in mat.chunks_exact(n).zip(dy) {
        let d = *d;
        for (o, w) in out.iter_mut().zip(row) {
            *o += *w as f64 * d;
        }
    }
}

/// Scratch buffers for one forward/backward position.
struct Scratch {
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    logits: Vec<f64>,
    dlogits: Vec<f64>,
    dh2: Vec<f64>,
    dh1: Vec<f64>,
    dx: Vec<f64>,
}

impl Scratch {
    fn new(arch: &ArchConfig) -> Self {
        Scratch {
            x: vec![0.0; arch.context * arch.embed_dim],
            h1: vec![0.0; arch.hidden_dim],
            h2: vec![0.0; arch.hidden_dim],
            logits: vec![0.0; arch.vocab],
            dlogits: vec![0.0; arch.vocab],
            dh2: vec![0.0; arch.hidden_dim],
            dh1: vec![0.0; arch.hidden_dim],
            dx: vec![0.0; arch.context * arch.embed_dim],
        }
    }
}

fn gather_context(sc: &mut Scratch, v: &View, arch: &ArchConfig, seq: &[u32], t: usize) {
    let e = arch.embed_dim;
    for (c, slot) in sc.x.chunks_exact_mut(e).enumerate() {
        let tok = seq[t - arch.context + c] as usize;
        for (dst, src) in slot.iter_mut().zip(&v.embed[tok * e..(tok + 1) * e]) {
            *dst = *src as f64;
        }
    }
}

/// Forward at one position; returns the cross-entropy loss in nats and
/// leaves activations in the scratch for a possible backward pass.
fn forward_position(sc: &mut Scratch, v: &View, arch: &ArchConfig, seq: &[u32], t: usize) -> f64 {
    gather_context(sc, v, arch, seq, t);
    matvec(&mut sc.h1, v.w1, v.b1, &sc.x);
    for h in sc.h1.iter_mut() {
        *h = h.tanh();
    }
    matvec(&mut sc.h2, v.w2, v.b2, &sc.h1);
    for h in sc.h2.iter_mut() {
        *h = h.tanh();
    }
    matvec(&mut sc.logits, v.w_out, v.b_out, &sc.h2);
    let max = sc.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = sc.logits.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    lse - sc.logits[seq[t] as usize]
}

/// Mean cross-entropy per sequence, one entry per batch row, in nats/token.
pub fn forward_losses(w: &WeightVector, arch: &ArchConfig, batch: &Batch) -> Result<Vec<f64>> {
    batch.check_against(arch)?;
    let v = view(w, arch)?;
    let mut sc = Scratch::new(arch);
    let preds = arch.predictions_per_seq() as f64;
    let mut out = Vec::with_capacity(batch.rows);
    for r in 0..batch.rows {
        let seq = batch.row(r);
        let mut acc = 0.0f64;
        for t in arch.context..arch.seq_len {
            acc += forward_position(&mut sc, &v, arch, seq, t);
        }
        out.push(acc / preds);
    }
    Ok(out)
}

/// Mean-over-batch gradient of the mean per-token cross-entropy.
/// Returns the flat `f64` gradient and the per-point losses.
pub fn batch_gradient(
    w: &WeightVector,
    arch: &ArchConfig,
    batch: &Batch,
) -> Result<(Vec<f64>, Vec<f64>)> {
    batch.check_against(arch)?;
    let v = view(w, arch)?;
    let mut sc = Scratch::new(arch);
    let mut grad = vec![0.0f64; w.dim()];
    let offs = w.offsets();
    let preds = arch.predictions_per_seq() as f64;
    let scale = 1.0 / (preds * batch.rows as f64);
    let (e, h, cx) = (arch.embed_dim, arch.hidden_dim, arch.context * arch.embed_dim);
    let mut losses = Vec::with_capacity(batch.rows);

    for r in 0..batch.rows {
        let seq = batch.row(r);
        let mut acc = 0.0f64;
        for t in arch.context..arch.seq_len {
            acc += forward_position(&mut sc, &v, arch, seq, t);

            // dlogits = softmax - onehot(target), scaled
            let max = sc.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = sc.logits.iter().map(|l| (l - max).exp()).sum();
            for (d, l) in sc.dlogits.iter_mut().zip(&sc.logits) {
                *d = (l - max).exp() / sum * scale;
            }
            sc.dlogits[seq[t] as usize] -= scale;

            let (g_embed, rest) = grad.split_at_mut(offs[1].0);
            let (g_w1, rest) = rest.split_at_mut(offs[1].1);
            let (g_b1, rest) = rest.split_at_mut(offs[2].1);
            let (g_w2, rest) = rest.split_at_mut(offs[3].1);
            let (g_b2, rest) = rest.split_at_mut(offs[4].1);
            let (g_w_out, g_b_out) = rest.split_at_mut(offs[5].1);

            // output layer
            for z in sc.dh2.iter_mut() {
                *z = 0.0;
            }
            for ((row, gb), d) in
                g_w_out.chunks_exact_mut(h).zip(g_b_out.iter_mut()).zip(&sc.dlogits)
            {
                let d = *d;
                *gb += d;
                for (g, h2) in row.iter_mut().zip(&sc.h2) {
                    *g += d * h2;
                }
            }
            matvec_t_acc(&mut sc.dh2, v.w_out, &sc.dlogits);

            // second hidden layer (tanh)
            for (z, h2) in sc.dh2.iter_mut().zip(&sc.h2) {
                *z *= 1.0 - h2 * h2;
            }
            for z in sc.dh1.iter_mut() {
                *z = 0.0;
            }
            for ((row, gb), d) in g_w2.chunks_exact_mut(h).zip(g_b2.iter_mut()).zip(&sc.dh2) {
                let d = *d;
                *gb += d;
                for (g, h1) in row.iter_mut().zip(&sc.h1) {
                    *g += d * h1;
                }
            }
            matvec_t_acc(&mut sc.dh1, v.w2, &sc.dh2);

            // first hidden layer (tanh)
            for (z, h1) in sc.dh1.iter_mut().zip(&sc.h1) {
                *z *= 1.0 - h1 * h1;
            }
            for z in sc.dx.iter_mut() {
                *z = 0.0;
            }
            for ((row, gb), d) in g_w1.chunks_exact_mut(cx).zip(g_b1.iter_mut()).zip(&sc.dh1) {
                let d = *d;
                *gb += d;
                for (g, x) in row.iter_mut().zip(&sc.x) {
                    *g += d * x;
                }
            }
            matvec_t_acc(&mut sc.dx, v.w1, &sc.dh1);

            // scatter into embedding rows
            for (c, slot) in sc.dx.chunks_exact(e).enumerate() {
                let tok = seq[t - arch.context + c] as usize;
                for (g, dx) in g_embed[tok * e..(tok + 1) * e].iter_mut().zip(slot) {
                    *g += dx;
                }
            }
        }
        losses.push(acc / preds);
    }
    Ok((grad, losses))
}

/// One Adam update in place. Optionally perturbs the updated weights with
/// seeded Gaussian noise (the simulated hardware-noise channel).
pub fn train_step(
    w: &mut WeightVector,
    state: &mut OptimizerState,
    batch: &Batch,
    arch: &ArchConfig,
    opt: &OptimizerConfig,
    noise: Option<(&mut Stream, f64)>,
) -> Result<()> {
    if state.m.len() != w.dim() {
        return Err(PotdError::Contract("optimizer state dimension mismatch".into()));
    }
    let (grad, _) = batch_gradient(w, arch, batch)?;
    if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
        let mut at = 0;
        for t in &w.shapes {
            if bad < at + t.len() {
                return Err(PotdError::Training { segment: 0, tensor: t.name.clone() });
            }
            at += t.len();
        }
    }
    state.step += 1;
    let t = state.step;
    let lr = opt.lr_at(t);
    let bc1 = 1.0 - opt.beta1.powi(t as i32);
    let bc2 = 1.0 - opt.beta2.powi(t as i32);
    for ((w, g), (m, v)) in
        w.flat.iter_mut().zip(&grad).zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let m64 = opt.beta1 * *m as f64 + (1.0 - opt.beta1) * g;
        let v64 = opt.beta2 * *v as f64 + (1.0 - opt.beta2) * g * g;
        *m = m64 as f32;
        *v = v64 as f32;
        let update = lr * (m64 / bc1) / ((v64 / bc2).sqrt() + opt.eps);
        *w = (*w as f64 - update) as f32;
    }
    if let Some((stream, scale)) = noise {
        if scale != 0.0 {
            for w in w.flat.iter_mut() {
                *w = (*w as f64 + scale * stream.gaussian()) as f32;
            }
        }
    }
    w.assert_finite()
}

/// Reindex the hidden units of both hidden layers. `perms[l][q]` is the old
/// index of the unit that lands at position `q` in layer `l`. The permuted
/// model is functionally identical to the original.
pub fn permute_hidden_units(
    w: &WeightVector,
    arch: &ArchConfig,
    perms: &[Vec<usize>],
) -> Result<WeightVector> {
    if perms.len() != 2 {
        return Err(PotdError::Contract(format!(
            "expected one permutation per hidden layer (2), got {}",
            perms.len()
        )));
    }
    let h = arch.hidden_dim;
    for p in perms {
        if p.len() != h {
            return Err(PotdError::Contract(format!(
                "permutation length {} != hidden width {h}",
                p.len()
            )));
        }
        let mut seen = vec![false; h];
        for &i in p {
            if i >= h || seen[i] {
                return Err(PotdError::Contract("not a permutation of the hidden units".into()));
            }
            seen[i] = true;
        }
    }
    let src = view(w, arch)?;
    let mut out = w.clone();
    {
        let offs = out.offsets();
        let (p1, p2) = (&perms[0], &perms[1]);
        let cx = arch.context * arch.embed_dim;

        let w1 = &mut out.flat[offs[1].0..offs[1].0 + offs[1].1];
        for (q, row) in w1.chunks_exact_mut(cx).enumerate() {
            row.copy_from_slice(&src.w1[p1[q] * cx..(p1[q] + 1) * cx]);
        }
        let b1 = &mut out.flat[offs[2].0..offs[2].0 + offs[2].1];
        for (q, b) in b1.iter_mut().enumerate() {
            *b = src.b1[p1[q]];
        }
        let w2 = &mut out.flat[offs[3].0..offs[3].0 + offs[3].1];
        for (q2, row) in w2.chunks_exact_mut(h).enumerate() {
            for (q1, x) in row.iter_mut().enumerate() {
                *x = src.w2[p2[q2] * h + p1[q1]];
            }
        }
        let b2 = &mut out.flat[offs[4].0..offs[4].0 + offs[4].1];
        for (q, b) in b2.iter_mut().enumerate() {
            *b = src.b2[p2[q]];
        }
        let w_out = &mut out.flat[offs[5].0..offs[5].0 + offs[5].1];
        for (vrow, src_row) in w_out.chunks_exact_mut(h).zip(src.w_out.chunks_exact(h)) {
            for (q, x) in vrow.iter_mut().enumerate() {
                *x = src_row[p2[q]];
            }
        }
    }
    Ok(out)
}

/// L2 distance between two weight vectors (f64 accumulation).
pub fn weight_distance(a: &WeightVector, b: &WeightVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(PotdError::Contract(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let mut acc = 0.0f64;
    for (x, y) in a.flat.iter().zip(&b.flat) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    Ok(acc.sqrt())
}

pub fn l2_norm(w: &WeightVector) -> f64 {
    w.flat.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt()
}

/// Draw a random hidden-unit permutation pair from a stream.
pub fn random_permutations(arch: &ArchConfig, stream: &mut Stream) -> Vec<Vec<usize>> {
    (0..2)
        .map(|_| {
            let mut p: Vec<usize> = (0..arch.hidden_dim).collect();
            stream.shuffle(&mut p);
            p
        })
        .collect()
}

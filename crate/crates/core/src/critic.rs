//! Fully-connected critic `Q_θ(x, a)` with explicit reverse-mode gradients
//! with respect to the action input and to the parameters.

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::scalar::Real;

/// Anything that can be queried for `Q(x, a)` and `∇ₐQ(x, a)`.
pub trait ActionValue<S> {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn value(&self, x: &[S], a: &[S]) -> S;
    fn action_gradient(&self, x: &[S], a: &[S]) -> Vec<S>;
}

impl<S, T: ActionValue<S> + ?Sized> ActionValue<S> for &T {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn value(&self, x: &[S], a: &[S]) -> S {
        (**self).value(x, a)
    }
    fn action_gradient(&self, x: &[S], a: &[S]) -> Vec<S> {
        (**self).action_gradient(x, a)
    }
}

/// Hidden widths used when nothing else is configured.
pub const DEFAULT_HIDDEN: [usize; 2] = [256, 256];

/// Feed-forward network `[n+m] → hidden… → 1` with rectifiers on hidden
/// layers and an identity output.
///
/// All parameters live in one flat vector: for every layer the `out × in`
/// row-major weight matrix followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCritic<S> {
    state_dim: usize,
    action_dim: usize,
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    params: Vec<S>,
}

/// Scratch buffers for batched evaluation; reuse across calls to avoid
/// reallocating.
#[derive(Debug, Clone, Default)]
pub struct BatchTape<S> {
    batch: usize,
    /// `acts[l]` is the `batch × sizes[l]` input of layer `l`; the last entry
    /// holds the network outputs.
    acts: Vec<Vec<S>>,
    /// `deltas[l]` is `∂Q/∂z_l` for unit output seeds (`batch × sizes[l+1]`).
    deltas: Vec<Vec<S>>,
    input_grad: Vec<S>,
    scaled: Vec<S>,
}

impl<S: Real> BatchTape<S> {
    pub fn new() -> Self {
        Self {
            batch: 0,
            acts: Vec::new(),
            deltas: Vec::new(),
            input_grad: Vec::new(),
            scaled: Vec::new(),
        }
    }

    pub fn outputs(&self) -> &[S] {
        self.acts.last().map_or(&[], |v| &v[..self.batch])
    }

    /// `batch × (n + m)` gradient of each output with respect to its input.
    pub fn input_grads(&self) -> &[S] {
        &self.input_grad
    }
}

fn layer_len(inp: usize, out: usize) -> usize {
    inp * out + out
}

impl<S: Real> MlpCritic<S> {
    /// Random critic with weights and biases drawn from `U(±1/√fan_in)`.
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        let mut critic = Self::zeros(state_dim, action_dim, hidden);
        for l in 0..critic.num_layers() {
            let bound = S::one() / S::from_usize(critic.sizes[l]).unwrap().sqrt();
            let range = critic.offsets[l]..critic.offsets[l + 1];
            for p in &mut critic.params[range] {
                *p = rng.uniform_real(-bound, bound);
            }
        }
        critic
    }

    pub fn zeros(state_dim: usize, action_dim: usize, hidden: &[usize]) -> Self {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self::with_sizes(state_dim, action_dim, sizes)
    }

    fn with_sizes(state_dim: usize, action_dim: usize, sizes: Vec<usize>) -> Self {
        let mut offsets = vec![0];
        for w in sizes.windows(2) {
            offsets.push(offsets.last().unwrap() + layer_len(w[0], w[1]));
        }
        let total = *offsets.last().unwrap();
        Self {
            state_dim,
            action_dim,
            sizes,
            offsets,
            params: vec![S::zero(); total],
        }
    }

    /// Critic with explicit layer sizes `[n+m, …, 1]` and flat parameters.
    pub fn from_params(state_dim: usize, action_dim: usize, sizes: Vec<usize>, params: Vec<S>) -> Result<Self> {
        if sizes.len() < 2 || sizes[0] != state_dim + action_dim || *sizes.last().unwrap() != 1 {
            return Err(Error::Shape(format!("layer sizes {sizes:?} for input {}", state_dim + action_dim)));
        }
        if sizes.contains(&0) {
            return Err(Error::Shape("empty layer".into()));
        }
        let mut c = Self::with_sizes(state_dim, action_dim, sizes);
        if params.len() != c.params.len() {
            return Err(Error::Shape(format!("{} parameters, expected {}", params.len(), c.params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("critic parameters".into()));
        }
        c.params = params;
        Ok(c)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    /// `(weights out×in row-major, biases)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[S], &[S]) {
        let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
        let start = self.offsets[l];
        let w = &self.params[start..start + inp * out];
        let b = &self.params[start + inp * out..self.offsets[l + 1]];
        (w, b)
    }

    /// Offset of the output bias inside the flat parameter vector.
    pub fn output_bias_index(&self) -> usize {
        self.params.len() - 1
    }

    fn check_dims(&self, x: &[S], a: &[S]) -> Result<()> {
        if x.len() != self.state_dim || a.len() != self.action_dim {
            return Err(Error::Shape(format!(
                "critic expects ({}, {}) inputs, got ({}, {})",
                self.state_dim,
                self.action_dim,
                x.len(),
                a.len()
            )));
        }
        Ok(())
    }

    /// Pre-activations of every layer for one input.
    pub fn pre_activations(&self, x: &[S], a: &[S]) -> Result<Vec<Vec<S>>> {
        self.check_dims(x, a)?;
        let mut input: Vec<S> = x.iter().chain(a).copied().collect();
        let mut pres = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let inp = self.sizes[l];
            let z: Vec<S> = b
                .iter()
                .enumerate()
                .map(|(o, &bo)| bo + w[o * inp..(o + 1) * inp].iter().zip(&input).map(|(&wi, &xi)| wi * xi).sum::<S>())
                .collect();
            input = if l + 1 < self.num_layers() {
                z.iter().map(|&v| v.max(S::zero())).collect()
            } else {
                z.clone()
            };
            pres.push(z);
        }
        Ok(pres)
    }

    /// `Q(x, a)`; bitwise identical to the corresponding row of
    /// [`MlpCritic::forward_batch`].
    pub fn forward(&self, x: &[S], a: &[S]) -> Result<S> {
        self.check_dims(x, a)?;
        let input: Vec<S> = x.iter().chain(a).copied().collect();
        let mut tape = BatchTape::new();
        self.forward_batch(&input, 1, &mut tape)?;
        Ok(tape.outputs()[0])
    }

    /// `∇_(x,a) Q` for one input; rectifier derivative is `1[z > 0]`.
    fn input_gradient(&self, x: &[S], a: &[S]) -> Result<Vec<S>> {
        let pres = self.pre_activations(x, a)?;
        let mut delta = vec![S::one()];
        for l in (0..self.num_layers()).rev() {
            let (w, _) = self.layer(l);
            let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
            let mut g = vec![S::zero(); inp];
            for o in 0..out {
                let d = delta[o];
                if d == S::zero() {
                    continue;
                }
                for (gi, &wi) in g.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
                    *gi += d * wi;
                }
            }
            if l > 0 {
                for (gi, &z) in g.iter_mut().zip(&pres[l - 1]) {
                    if !(z > S::zero()) {
                        *gi = S::zero();
                    }
                }
            }
            delta = g;
        }
        Ok(delta)
    }

    pub fn grad_action(&self, x: &[S], a: &[S]) -> Result<Vec<S>> {
        Ok(self.input_gradient(x, a)?.split_off(self.state_dim))
    }

    /// Runs the batch (rows of `[x, a]`, `batch × (n+m)`) through the network.
    pub fn forward_batch(&self, inputs: &[S], batch: usize, tape: &mut BatchTape<S>) -> Result<()> {
        let width = self.sizes[0];
        if inputs.len() != batch * width {
            return Err(Error::Shape(format!("batch input of length {} for {batch}×{width}", inputs.len())));
        }
        let layers = self.num_layers();
        tape.batch = batch;
        tape.acts.resize_with(layers + 1, Vec::new);
        tape.acts[0].clear();
        tape.acts[0].extend_from_slice(inputs);
        for l in 0..layers {
            let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer(l);
            let (head, tail) = tape.acts.split_at_mut(l + 1);
            let src = &head[l];
            let dst = &mut tail[0];
            dst.clear();
            dst.reserve(batch * out);
            for _ in 0..batch {
                dst.extend_from_slice(b);
            }
            // Z = A · Wᵀ + 1 bᵀ
            S::gemm(batch, inp, out, S::one(), src, inp, 1, w, 1, inp, S::one(), dst, out, 1);
            if l + 1 < layers {
                for v in dst.iter_mut() {
                    if !(*v > S::zero()) {
                        *v = S::zero();
                    }
                }
            }
        }
        Ok(())
    }

    /// Backpropagates unit output seeds through the last forward batch,
    /// filling per-layer deltas and the input gradients.
    pub fn backward_batch(&self, tape: &mut BatchTape<S>) {
        let layers = self.num_layers();
        let batch = tape.batch;
        tape.deltas.resize_with(layers, Vec::new);
        let last = &mut tape.deltas[layers - 1];
        last.clear();
        last.resize(batch, S::one());
        for l in (0..layers).rev() {
            let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, _) = self.layer(l);
            let mut g = std::mem::take(if l > 0 { &mut tape.deltas[l - 1] } else { &mut tape.input_grad });
            g.clear();
            g.resize(batch * inp, S::zero());
            // G = Δ · W
            S::gemm(batch, out, inp, S::one(), &tape.deltas[l], out, 1, w, inp, 1, S::zero(), &mut g, inp, 1);
            if l > 0 {
                for (gv, &act) in g.iter_mut().zip(&tape.acts[l]) {
                    if !(act > S::zero()) {
                        *gv = S::zero();
                    }
                }
                tape.deltas[l - 1] = g;
            } else {
                tape.input_grad = g;
            }
        }
    }

    /// Accumulates `Σ_j scales[j]·∇_θ Q(input_j)` into `grads` using the
    /// deltas from [`MlpCritic::backward_batch`].
    pub fn accumulate_param_grads(&self, tape: &mut BatchTape<S>, scales: &[S], grads: &mut [S]) {
        let batch = tape.batch;
        assert_eq!(scales.len(), batch);
        assert_eq!(grads.len(), self.params.len());
        for l in 0..self.num_layers() {
            let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
            let scaled = &mut tape.scaled;
            scaled.clear();
            scaled.extend(
                tape.deltas[l]
                    .chunks(out)
                    .zip(scales)
                    .flat_map(|(row, &s)| row.iter().map(move |&d| d * s)),
            );
            let start = self.offsets[l];
            let (gw, gb) = grads[start..self.offsets[l + 1]].split_at_mut(inp * out);
            // dW = Δ_sᵀ · A
            S::gemm(out, batch, inp, S::one(), scaled, 1, out, &tape.acts[l], inp, 1, S::one(), gw, inp, 1);
            for row in scaled.chunks(out) {
                for (g, &d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
    }

    /// Mean squared error `(1/B) Σ (y − Q(x, a))²` and its parameter gradient.
    pub fn grad_params(&self, batch: &[(Vec<S>, Vec<S>, S)]) -> Result<(S, Vec<S>)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut inputs = Vec::with_capacity(batch.len() * self.sizes[0]);
        for (x, a, _) in batch {
            self.check_dims(x, a)?;
            inputs.extend(x.iter().chain(a.iter()).copied());
        }
        let mut tape = BatchTape::new();
        self.forward_batch(&inputs, batch.len(), &mut tape)?;
        let nb = S::from_usize(batch.len()).unwrap();
        let two = S::lit(2.0);
        let mut loss = S::zero();
        let scales: Vec<S> = tape
            .outputs()
            .iter()
            .zip(batch)
            .map(|(&q, (_, _, y))| {
                let r = q - *y;
                loss += r * r;
                two * r / nb
            })
            .collect();
        self.backward_batch(&mut tape);
        let mut grads = vec![S::zero(); self.params.len()];
        self.accumulate_param_grads(&mut tape, &scales, &mut grads);
        Ok((loss / nb, grads))
    }

    pub const CHECKPOINT_MAGIC: &'static [u8; 10] = b"HJQCRITIC\0";
    pub const CHECKPOINT_VERSION: u8 = 1;

    /// Binary checkpoint: 16-byte header (magic, version byte, zero padding),
    /// then little-endian `u64` state dim, action dim, layer-size count and
    /// sizes, then every parameter as a little-endian `f64` in flat order.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * (3 + self.sizes.len() + self.params.len()));
        out.extend_from_slice(Self::CHECKPOINT_MAGIC);
        out.push(Self::CHECKPOINT_VERSION);
        out.resize(16, 0);
        for v in [self.state_dim, self.action_dim, self.sizes.len()] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for &s in &self.sizes {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.as_f64().to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidArgument(format!("checkpoint: {msg}"));
        if bytes.len() < 16 || &bytes[..10] != Self::CHECKPOINT_MAGIC {
            return Err(bad("missing magic header"));
        }
        if bytes[10] != Self::CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {}", bytes[10])));
        }
        let mut pos = 16;
        let read_u64 = |pos: &mut usize| -> Result<u64> {
            let chunk = bytes.get(*pos..*pos + 8).ok_or_else(|| bad("truncated"))?;
            *pos += 8;
            Ok(u64::from_le_bytes(chunk.try_into().unwrap()))
        };
        let state_dim = read_u64(&mut pos)? as usize;
        let action_dim = read_u64(&mut pos)? as usize;
        let count = read_u64(&mut pos)? as usize;
        if count > 1024 {
            return Err(bad("implausible layer count"));
        }
        let sizes = (0..count).map(|_| read_u64(&mut pos).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let rest = &bytes[pos..];
        if !rest.len().is_multiple_of(8) {
            return Err(bad("trailing bytes"));
        }
        let params = rest
            .chunks_exact(8)
            .map(|c| S::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Self::from_params(state_dim, action_dim, sizes, params)
    }
}

impl<S: Real> ActionValue<S> for MlpCritic<S> {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn action_dim(&self) -> usize {
        self.action_dim
    }
    fn value(&self, x: &[S], a: &[S]) -> S {
        self.forward(x, a).expect("critic input dimensions")
    }
    fn action_gradient(&self, x: &[S], a: &[S]) -> Vec<S> {
        self.grad_action(x, a).expect("critic input dimensions")
    }
}

/// Online critic `θ` and its slowly-tracking target `θ⁻`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyakPair<S> {
    pub online: MlpCritic<S>,
    pub target: MlpCritic<S>,
}

impl<S: Real> PolyakPair<S> {
    /// Target starts as an exact copy of the online critic.
    pub fn new(online: MlpCritic<S>) -> Self {
        Self {
            target: online.clone(),
            online,
        }
    }

    /// `θ⁻ ← (1 − α)θ⁻ + αθ`
    pub fn polyak_update(&mut self, alpha: S) -> Result<()> {
        if !(S::zero() <= alpha && alpha <= S::one()) {
            return Err(Error::InvalidArgument(format!("Polyak coefficient {alpha} outside [0, 1]")));
        }
        if alpha == S::zero() {
            return Ok(());
        }
        if alpha == S::one() {
            self.target.params.copy_from_slice(&self.online.params);
            return Ok(());
        }
        let keep = S::one() - alpha;
        for (t, &o) in self.target.params.iter_mut().zip(&self.online.params) {
            *t = keep * *t + alpha * o;
        }
        Ok(())
    }
}

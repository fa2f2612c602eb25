//! Multilayer perceptron over state vectors with one output per action,
//! trained by regressing the taken action's value onto a Bellman target.
//!
//! Layer `l` maps `dims[l]` inputs to `dims[l + 1]` outputs. Weights are
//! stored input-major (`weights[i * outputs + j]`), hidden layers use ReLU and
//! the output layer is linear. All numerics are `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::NUM_ACTIONS;
use crate::replay::Transition;

pub const CHECKPOINT_MAGIC: &str = "QNET v1";
const OPTIM_TAG: &str = "OPTIM";

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    dims: Vec<usize>,
    layers: Vec<Dense>,
}

/// Per-layer `(d_weights, d_bias)` with the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    /// Flattened in checkpoint order.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

impl QNetwork {
    /// All-zero network. `dims` must end in the action count.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        validate_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                actual: values.len(),
            });
        }
        let mut it = values.iter().copied();
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Q-values for one state.
    pub fn forward(&self, input: &[f64]) -> Result<[f64; NUM_ACTIONS]> {
        let out = self.forward_batch(input, 1)?;
        let mut q = [0.0; NUM_ACTIONS];
        q.copy_from_slice(&out);
        Ok(q)
    }

    /// Q-values for `batch` row-major states; returns `batch x 9` row-major.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_input(inputs, batch)?;
        let mut acts = self.forward_activations(inputs, batch);
        Ok(acts.pop().expect("at least one layer"))
    }

    fn check_input(&self, inputs: &[f64], batch: usize) -> Result<()> {
        let expected = batch * self.input_dim();
        if inputs.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: inputs.len(),
            });
        }
        Ok(())
    }

    /// Post-activation outputs of every layer (ReLU on hidden layers).
    fn forward_activations(&self, inputs: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let x = if l == 0 { inputs } else { &acts[l - 1] };
            let mut z = Vec::with_capacity(batch * layer.outputs);
            for _ in 0..batch {
                z.extend_from_slice(&layer.bias);
            }
            if batch == 1 {
                sparse_vecmat(x, &layer.weights, &mut z);
            } else {
                gemm(
                    Mat::rows(x, batch, layer.inputs),
                    Mat::rows(&layer.weights, layer.inputs, layer.outputs),
                    &mut z,
                    1.0,
                );
            }
            if l != last {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            acts.push(z);
        }
        acts
    }

    /// Mean squared error between each row's taken-action value and its
    /// target, and its gradient. Targets are constants.
    pub fn loss_and_gradients(
        &self,
        inputs: &[f64],
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Gradients)> {
        let batch = actions.len();
        if batch == 0 {
            return Err(Error::InvalidParameter("empty training batch".into()));
        }
        if targets.len() != batch {
            return Err(Error::DimensionMismatch {
                expected: batch,
                actual: targets.len(),
            });
        }
        if let Some(&bad) = actions.iter().find(|&&a| a >= NUM_ACTIONS) {
            return Err(Error::InvalidParameter(format!("action index {bad} out of range")));
        }
        self.check_input(inputs, batch)?;

        let acts = self.forward_activations(inputs, batch);
        let q = acts.last().expect("at least one layer");
        let scale = 2.0 / batch as f64;
        let mut loss = 0.0;
        let mut delta = vec![0.0; batch * NUM_ACTIONS];
        for (i, (&a, &t)) in actions.iter().zip(targets).enumerate() {
            let err = q[i * NUM_ACTIONS + a] - t;
            loss += err * err;
            delta[i * NUM_ACTIONS + a] = scale * err;
        }
        loss /= batch as f64;

        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x = if l == 0 { inputs } else { &acts[l - 1] };
            let mut dw = vec![0.0; layer.inputs * layer.outputs];
            gemm(
                Mat::rows(x, batch, layer.inputs).t(),
                Mat::rows(&delta, batch, layer.outputs),
                &mut dw,
                0.0,
            );
            let mut db = vec![0.0; layer.outputs];
            for row in delta.chunks_exact(layer.outputs) {
                for (g, d) in db.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; batch * layer.inputs];
                gemm(
                    Mat::rows(&delta, batch, layer.outputs),
                    Mat::rows(&layer.weights, layer.inputs, layer.outputs).t(),
                    &mut prev,
                    0.0,
                );
                for (d, &a) in prev.iter_mut().zip(&acts[l - 1]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
                delta = prev;
            }
            grads.push((dw, db));
        }
        grads.reverse();
        Ok((loss, Gradients { layers: grads }))
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidParameter(format!(
            "network needs at least two positive layer sizes, got {dims:?}"
        )));
    }
    if *dims.last().expect("len checked") != NUM_ACTIONS {
        return Err(Error::InvalidParameter(format!(
            "network output must have {NUM_ACTIONS} units, got {dims:?}"
        )));
    }
    Ok(())
}

/// A row-major matrix view, optionally transposed.
#[derive(Clone, Copy)]
struct Mat<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    row_stride: isize,
    col_stride: isize,
}

impl<'a> Mat<'a> {
    fn rows(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            data,
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

/// `y += x * w` for a row vector `x` and row-major `w`, skipping the zero
/// entries of `x` (one-hot segments and inactive ReLU units).
fn sparse_vecmat(x: &[f64], w: &[f64], y: &mut [f64]) {
    let n = y.len();
    for (&xi, row) in x.iter().zip(w.chunks_exact(n)) {
        if xi != 0.0 {
            for (yj, &wj) in y.iter_mut().zip(row) {
                *yj += xi * wj;
            }
        }
    }
}

/// `c = a * b + beta * c`, `c` row-major.
fn gemm(a: Mat<'_>, b: Mat<'_>, c: &mut [f64], beta: f64) {
    assert_eq!(a.cols, b.rows);
    assert_eq!(c.len(), a.rows * b.cols);
    // SAFETY: the views and `c` were checked to cover exactly the extents
    // implied by their dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

/// Stochastic gradient descent with heavy-ball momentum:
/// `v = momentum * v + g; p -= learning_rate * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
    updates: u64,
}

impl OptimState {
    pub fn new(net: &QNetwork, learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: vec![0.0; net.num_params()],
            updates: 0,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}

/// Per-transition regression targets: `r` for terminal transitions, else
/// `r + gamma * max_a' Q(s', a')` under `net`.
pub fn bellman_targets(batch: &[&Transition], net: &QNetwork, gamma: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].done).collect();
    let mut next = Vec::with_capacity(live.len() * net.input_dim());
    for &i in &live {
        next.extend_from_slice(batch[i].next_state.as_slice());
    }
    let mut targets: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    if live.is_empty() {
        return Ok(targets);
    }
    let q_next = net.forward_batch(&next, live.len())?;
    for (row, &i) in live.iter().enumerate() {
        let best = q_next[row * NUM_ACTIONS..(row + 1) * NUM_ACTIONS]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        targets[i] += gamma * best;
    }
    Ok(targets)
}

/// One optimizer step on `batch` toward `targets`; returns the pre-step loss.
pub fn update(
    net: &mut QNetwork,
    opt: &mut OptimState,
    batch: &[&Transition],
    targets: &[f64],
) -> Result<f64> {
    let mut inputs = Vec::with_capacity(batch.len() * net.input_dim());
    for t in batch {
        inputs.extend_from_slice(t.state.as_slice());
    }
    let actions: Vec<usize> = batch.iter().map(|t| t.action.index()).collect();
    update_raw(net, opt, &inputs, &actions, targets)
}

/// [`update`] on already packed inputs.
pub fn update_raw(
    net: &mut QNetwork,
    opt: &mut OptimState,
    inputs: &[f64],
    actions: &[usize],
    targets: &[f64],
) -> Result<f64> {
    if opt.velocity.len() != net.num_params() {
        return Err(Error::DimensionMismatch {
            expected: net.num_params(),
            actual: opt.velocity.len(),
        });
    }
    let (loss, grads) = net.loss_and_gradients(inputs, actions, targets)?;
    let grads_finite = grads
        .layers
        .iter()
        .all(|(w, b)| w.iter().chain(b).all(|v| v.is_finite()));
    if !loss.is_finite() || !grads_finite {
        return Err(Error::NonFiniteLoss {
            loss,
            update: opt.updates,
            max_target: targets.iter().fold(0.0, |m, t| m.max(t.abs())),
        });
    }

    let (lr, mu) = (opt.learning_rate, opt.momentum);
    let mut offset = 0;
    for (layer, (dw, db)) in net.layers.iter_mut().zip(&grads.layers) {
        for (params, g) in [(&mut layer.weights, dw), (&mut layer.bias, db)] {
            let v = &mut opt.velocity[offset..offset + params.len()];
            for ((p, v), g) in params.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = mu * *v + g;
                *p -= lr * *v;
            }
            offset += params.len();
        }
    }
    opt.updates += 1;
    Ok(loss)
}

/// Text checkpoint: magic line, layer sizes, then one parameter per line
/// with 17 significant digits. An `OPTIM lr momentum updates` trailer with
/// the velocity buffer follows.
pub fn checkpoint_text(net: &QNetwork, opt: &OptimState) -> String {
    let mut out = String::with_capacity(26 * 2 * net.num_params() + 64);
    out.push_str(CHECKPOINT_MAGIC);
    out.push('\n');
    let dims: Vec<String> = net.dims.iter().map(usize::to_string).collect();
    out.push_str(&dims.join(" "));
    out.push('\n');
    for p in net.params() {
        writeln!(out, "{p:.16e}").expect("write to string");
    }
    writeln!(
        out,
        "{OPTIM_TAG} {:.16e} {:.16e} {}",
        opt.learning_rate, opt.momentum, opt.updates
    )
    .expect("write to string");
    for v in &opt.velocity {
        writeln!(out, "{v:.16e}").expect("write to string");
    }
    out
}

pub fn save_checkpoint(net: &QNetwork, opt: &OptimState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_text(net, opt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(QNetwork, OptimState)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, path)
}

pub fn parse_checkpoint(text: &str, origin: &Path) -> Result<(QNetwork, OptimState)> {
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, msg: String| Error::parse(origin, line, msg);

    match lines.next() {
        Some((_, l)) if l.trim() == CHECKPOINT_MAGIC => {}
        _ => return Err(bad(1, format!("expected `{CHECKPOINT_MAGIC}` header"))),
    }
    let dims: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad(2, "missing layer dimensions".into()))?
        .1
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| bad(2, "layer dimensions must be integers".into()))?;
    let mut net = QNetwork::zeros(&dims).map_err(|e| bad(2, e.to_string()))?;
    let n = net.num_params();

    let params = read_block(&mut lines, n, "parameters", &dims, origin)?;
    net.set_params(&params)?;

    let mut opt = OptimState::new(&net, 1e-3, 0.9);
    match lines.next() {
        None => {}
        Some((i, l)) => {
            let toks: Vec<&str> = l.split_whitespace().collect();
            let parsed = match toks[..] {
                [OPTIM_TAG, lr, mu, updates] => {
                    match (lr.parse::<f64>(), mu.parse::<f64>(), updates.parse::<u64>()) {
                        (Ok(lr), Ok(mu), Ok(updates)) => Some((lr, mu, updates)),
                        _ => None,
                    }
                }
                _ => None,
            };
            let (lr, mu, updates) = parsed.ok_or_else(|| {
                bad(
                    i + 1,
                    format!("trailing data after {n} parameters for dims {dims:?}: `{l}`"),
                )
            })?;
            opt.learning_rate = lr;
            opt.momentum = mu;
            opt.updates = updates;
            opt.velocity = read_block(&mut lines, n, "velocity entries", &dims, origin)?;
            if let Some((i, l)) = lines.find(|(_, l)| !l.trim().is_empty()) {
                return Err(bad(i + 1, format!("unexpected trailing line `{l}`")));
            }
        }
    }
    Ok((net, opt))
}

fn read_block<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    count: usize,
    what: &str,
    dims: &[usize],
    origin: &Path,
) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(count);
    for k in 0..count {
        let (i, l) = lines.next().ok_or_else(|| {
            Error::parse(
                origin,
                3 + k,
                format!("expected {count} {what} for dims {dims:?}, found {k}"),
            )
        })?;
        let v: f64 = l
            .trim()
            .parse()
            .map_err(|_| Error::parse(origin, i + 1, format!("`{l}` is not a number")))?;
        values.push(v);
    }
    Ok(values)
}

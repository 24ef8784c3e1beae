//! Single-layer LSTM with a forget gate and no peephole term, trained by
//! full-batch gradient descent with exact backpropagation through time.
//!
//! Gates are stored in the order input `i`, candidate `c`, forget `f`,
//! output `o`:
//!
//! ```text
//! i_t  = sigmoid(W_i x_t + U_i h_{t-1} + b_i)
//! c~_t = tanh(W_c x_t + U_c h_{t-1} + b_c)
//! f_t  = sigmoid(W_f x_t + U_f h_{t-1} + b_f)
//! C_t  = i_t * c~_t + f_t * C_{t-1}
//! o_t  = sigmoid(W_o x_t + U_o h_{t-1} + b_o)
//! h_t  = o_t * tanh(C_t)
//! y_t  = W_y h_t + b_y
//! ```

use ndarray::{Array1, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub type Vector = Array1<f64>;

/// Index of each gate in the parameter arrays.
pub const GATE_I: usize = 0;
pub const GATE_C: usize = 1;
pub const GATE_F: usize = 2;
pub const GATE_O: usize = 3;
pub const GATE_NAMES: [&str; 4] = ["i", "c", "f", "o"];

/// Weights of the cell and its linear read-out.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// `hidden x input` per gate.
    pub w: [Matrix; 4],
    /// `hidden x hidden` per gate.
    pub u: [Matrix; 4],
    /// `hidden` per gate.
    pub b: [Vector; 4],
    /// `output x hidden`.
    pub wy: Matrix,
    pub by: Vector,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        let w = || Matrix::zeros((hidden_dim, input_dim));
        let u = || Matrix::zeros((hidden_dim, hidden_dim));
        let b = || Vector::zeros(hidden_dim);
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            w: [w(), w(), w(), w()],
            u: [u(), u(), u(), u()],
            b: [b(), b(), b(), b()],
            wy: Matrix::zeros((output_dim, hidden_dim)),
            by: Vector::zeros(output_dim),
        }
    }

    /// Weights uniform in `(-1/sqrt(hidden), 1/sqrt(hidden))`, biases zero
    /// except the forget gate bias, which starts at one.
    pub fn random(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidConfig(
                "LSTM dimensions must be positive".into(),
            ));
        }
        let mut p = Self::zeros(input_dim, hidden_dim, output_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (hidden_dim as f64).sqrt();
        let mut draw =
            |m: &mut Matrix| m.mapv_inplace(|_| scale * (2.0 * rng.random::<f64>() - 1.0));
        for g in 0..4 {
            draw(&mut p.w[g]);
            draw(&mut p.u[g]);
        }
        draw(&mut p.wy);
        p.b[GATE_F].fill(1.0);
        Ok(p)
    }

    /// Every parameter block in declared order: `W_g, U_g, b_g` for
    /// `g = i, c, f, o`, then `W_y, b_y`.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(14);
        for g in 0..4 {
            out.push(self.w[g].as_slice().expect("standard layout"));
            out.push(self.u[g].as_slice().expect("standard layout"));
            out.push(self.b[g].as_slice().expect("standard layout"));
        }
        out.push(self.wy.as_slice().expect("standard layout"));
        out.push(self.by.as_slice().expect("standard layout"));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(14);
        let Self {
            w, u, b, wy, by, ..
        } = self;
        for ((wg, ug), bg) in w.iter_mut().zip(u.iter_mut()).zip(b.iter_mut()) {
            out.push(wg.as_slice_mut().expect("standard layout"));
            out.push(ug.as_slice_mut().expect("standard layout"));
            out.push(bg.as_slice_mut().expect("standard layout"));
        }
        out.push(wy.as_slice_mut().expect("standard layout"));
        out.push(by.as_slice_mut().expect("standard layout"));
        out
    }

    /// All parameters flattened in [`blocks`](Self::blocks) order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Overwrites all parameters from a flat vector in [`blocks`](Self::blocks) order.
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut rest = values;
        for block in self.blocks_mut() {
            let (head, tail) = rest.split_at(block.len());
            block.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Euclidean norm over all parameters.
    pub fn global_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so that the global norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let n = self.global_norm();
        if n > max_norm {
            let s = max_norm / n;
            for block in self.blocks_mut() {
                block.iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Self) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += alpha * s);
        }
    }

    fn check_input(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }
}

/// Hidden and memory cell state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vector,
    pub c: Vector,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: Vector::zeros(hidden_dim),
            c: Vector::zeros(hidden_dim),
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Activations of one time step, kept for the backward pass.
#[derive(Debug, Clone)]
struct StepCache {
    x: Vector,
    h_prev: Vector,
    c_prev: Vector,
    /// Post-activation gate values in gate order.
    gates: [Vector; 4],
    c: Vector,
    tanh_c: Vector,
    h: Vector,
}

fn step_cached(p: &LstmParams, s: &LstmState, x: ArrayView1<f64>) -> Result<(StepCache, Vector)> {
    p.check_input(x)?;
    if s.h.len() != p.hidden_dim || s.c.len() != p.hidden_dim {
        return Err(Error::DimensionMismatch(format!(
            "state has length {}/{}, network expects {}",
            s.h.len(),
            s.c.len(),
            p.hidden_dim
        )));
    }
    let x = x.to_owned();
    let xs = x.as_slice().expect("contiguous");
    let hs = s.h.as_slice().expect("contiguous");
    let pre = |g: usize| -> Vector {
        let (w, u) = (&p.w[g], &p.u[g]);
        Vector::from_shape_fn(p.hidden_dim, |r| {
            let wr = w.row(r);
            let ur = u.row(r);
            let wr = wr.as_slice().expect("standard layout");
            let ur = ur.as_slice().expect("standard layout");
            p.b[g][r] + dot(wr, xs) + dot(ur, hs)
        })
    };
    let i = pre(GATE_I).mapv(sigmoid);
    let cand = pre(GATE_C).mapv(f64::tanh);
    let f = pre(GATE_F).mapv(sigmoid);
    let o = pre(GATE_O).mapv(sigmoid);
    let c = Vector::from_shape_fn(p.hidden_dim, |r| i[r] * cand[r] + f[r] * s.c[r]);
    let tanh_c = c.mapv(f64::tanh);
    let h = &o * &tanh_c;
    let y = p.wy.dot(&h) + &p.by;
    Ok((
        StepCache {
            x,
            h_prev: s.h.clone(),
            c_prev: s.c.clone(),
            gates: [i, cand, f, o],
            c,
            tanh_c,
            h,
        },
        y,
    ))
}

/// One cell update followed by the read-out.
pub fn step(p: &LstmParams, s: &LstmState, x: ArrayView1<f64>) -> Result<(LstmState, Vector)> {
    let (cache, y) = step_cached(p, s, x)?;
    Ok((
        LstmState {
            h: cache.h,
            c: cache.c,
        },
        y,
    ))
}

/// Everything the backward pass needs from a forward run.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    steps: Vec<StepCache>,
    outputs: Vec<Vector>,
}

impl ForwardCache {
    pub fn outputs(&self) -> &[Vector] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn check_sequence(xs: &[Vector]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::DimensionMismatch("input sequence is empty".into()));
    }
    Ok(())
}

/// Runs the sequence from the zero state and caches all activations.
pub fn forward_sequence(p: &LstmParams, xs: &[Vector]) -> Result<(Vec<Vector>, ForwardCache)> {
    check_sequence(xs)?;
    let mut state = LstmState::zeros(p.hidden_dim);
    let mut steps = Vec::with_capacity(xs.len());
    let mut outputs = Vec::with_capacity(xs.len());
    for x in xs {
        let (cache, y) = step_cached(p, &state, x.view())?;
        state = LstmState {
            h: cache.h.clone(),
            c: cache.c.clone(),
        };
        steps.push(cache);
        outputs.push(y);
    }
    let cache = ForwardCache {
        input_dim: p.input_dim,
        hidden_dim: p.hidden_dim,
        output_dim: p.output_dim,
        steps,
        outputs: outputs.clone(),
    };
    Ok((outputs, cache))
}

/// Runs the sequence from `state` without caching; returns outputs and the
/// final state.
pub fn run_sequence(
    p: &LstmParams,
    state: &LstmState,
    xs: &[Vector],
) -> Result<(Vec<Vector>, LstmState)> {
    let mut state = state.clone();
    let mut outputs = Vec::with_capacity(xs.len());
    for x in xs {
        let (next, y) = step(p, &state, x.view())?;
        state = next;
        outputs.push(y);
    }
    Ok((outputs, state))
}

/// Mean over time steps and components of the squared error.
pub fn loss_mse(ys: &[Vector], targets: &[Vector]) -> Result<f64> {
    if ys.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: ys.len(),
            right: targets.len(),
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (y, t) in ys.iter().zip(targets) {
        if y.len() != t.len() {
            return Err(Error::DimensionMismatch(format!(
                "output has length {}, target has length {}",
                y.len(),
                t.len()
            )));
        }
        total += y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += y.len();
    }
    if count == 0 {
        return Err(Error::EmptySeries);
    }
    Ok(total / count as f64)
}

/// Exact gradient of [`loss_mse`] over the cached run with respect to every
/// parameter. No clipping is applied here.
pub fn backward(p: &LstmParams, cache: &ForwardCache, targets: &[Vector]) -> Result<LstmParams> {
    if cache.input_dim != p.input_dim
        || cache.hidden_dim != p.hidden_dim
        || cache.output_dim != p.output_dim
    {
        return Err(Error::StaleCache(format!(
            "cache built for {}-{}-{}, parameters are {}-{}-{}",
            cache.input_dim,
            cache.hidden_dim,
            cache.output_dim,
            p.input_dim,
            p.hidden_dim,
            p.output_dim
        )));
    }
    if targets.len() != cache.steps.len() {
        return Err(Error::StaleCache(format!(
            "cache holds {} steps, {} targets given",
            cache.steps.len(),
            targets.len()
        )));
    }
    if let Some(t) = targets.iter().find(|t| t.len() != p.output_dim) {
        return Err(Error::DimensionMismatch(format!(
            "target has length {}, network outputs {}",
            t.len(),
            p.output_dim
        )));
    }
    let (n_in, n_hid, n_out) = (p.input_dim, p.hidden_dim, p.output_dim);
    let mut g = LstmParams::zeros(n_in, n_hid, n_out);
    let scale = 2.0 / (targets.len() * n_out) as f64;
    let mut dh_next = vec![0.0; n_hid];
    let mut dc_next = vec![0.0; n_hid];
    let mut dh = vec![0.0; n_hid];
    let mut da = [
        vec![0.0; n_hid],
        vec![0.0; n_hid],
        vec![0.0; n_hid],
        vec![0.0; n_hid],
    ];
    let mut dy = vec![0.0; n_out];
    for ((st, y), target) in cache.steps.iter().zip(&cache.outputs).zip(targets).rev() {
        for o in 0..n_out {
            dy[o] = (y[o] - target[o]) * scale;
        }
        rank_one_update(&mut g.wy, &dy, st.h.as_slice().expect("contiguous"));
        for o in 0..n_out {
            g.by[o] += dy[o];
        }
        dh.copy_from_slice(&dh_next);
        for o in 0..n_out {
            let row = p.wy.row(o);
            for (r, w) in row.iter().enumerate() {
                dh[r] += w * dy[o];
            }
        }

        let [i, cand, f, o] = &st.gates;
        for r in 0..n_hid {
            let t = st.tanh_c[r];
            let d_o = dh[r] * t;
            let dc = dh[r] * o[r] * (1.0 - t * t) + dc_next[r];
            da[GATE_I][r] = dc * cand[r] * i[r] * (1.0 - i[r]);
            da[GATE_C][r] = dc * i[r] * (1.0 - cand[r] * cand[r]);
            da[GATE_F][r] = dc * st.c_prev[r] * f[r] * (1.0 - f[r]);
            da[GATE_O][r] = d_o * o[r] * (1.0 - o[r]);
            dc_next[r] = dc * f[r];
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        let xs = st.x.as_slice().expect("contiguous");
        let hp = st.h_prev.as_slice().expect("contiguous");
        for (gate, d) in da.iter().enumerate() {
            rank_one_update(&mut g.w[gate], d, xs);
            rank_one_update(&mut g.u[gate], d, hp);
            for r in 0..n_hid {
                g.b[gate][r] += d[r];
                let row = p.u[gate].row(r);
                let row = row.as_slice().expect("standard layout");
                for (c, w) in row.iter().enumerate() {
                    dh_next[c] += w * d[r];
                }
            }
        }
    }
    Ok(g)
}

/// `m += a b^T`.
fn rank_one_update(m: &mut Matrix, a: &[f64], b: &[f64]) {
    for (mut row, &ar) in m.outer_iter_mut().zip(a) {
        if ar == 0.0 {
            continue;
        }
        for (v, &bc) in row.iter_mut().zip(b) {
            *v += ar * bc;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Input sequence length of each training sample.
    pub window_length: usize,
    /// Maximum global norm of the gradient applied in one step.
    pub grad_clip: f64,
    /// Seeds parameter initialization in [`train_new`].
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 500,
            window_length: 8,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.window_length == 0 {
            return Err(Error::InvalidConfig(
                "window_length must be positive".into(),
            ));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "grad_clip must be positive, got {}",
                self.grad_clip
            )));
        }
        Ok(())
    }
}

/// One training example: an input window and the target at every position,
/// which is the window shifted forward by one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub inputs: Vec<Vector>,
    pub targets: Vec<Vector>,
}

/// All sliding windows of `window` consecutive points whose successor is
/// also in the series.
pub fn windows_from_series(series: &[Vector], window: usize) -> Vec<Sample> {
    if window == 0 || series.len() <= window {
        return Vec::new();
    }
    (0..series.len() - window)
        .map(|s| Sample {
            inputs: series[s..s + window].to_vec(),
            targets: series[s + 1..s + window + 1].to_vec(),
        })
        .collect()
}

/// Mean loss over the dataset.
pub fn dataset_loss(p: &LstmParams, data: &[Sample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptySeries);
    }
    let losses: Vec<f64> = data
        .par_iter()
        .map(|s| {
            let (ys, _) = run_sequence(p, &LstmState::zeros(p.hidden_dim), &s.inputs)?;
            loss_mse(&ys, &s.targets)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}

/// Loss and gradient of the mean loss over the dataset.
pub fn dataset_gradient(p: &LstmParams, data: &[Sample]) -> Result<(f64, LstmParams)> {
    if data.is_empty() {
        return Err(Error::EmptySeries);
    }
    let parts: Vec<(f64, LstmParams)> = data
        .par_iter()
        .map(|s| {
            let (ys, cache) = forward_sequence(p, &s.inputs)?;
            Ok((loss_mse(&ys, &s.targets)?, backward(p, &cache, &s.targets)?))
        })
        .collect::<Result<_>>()?;
    let inv = 1.0 / data.len() as f64;
    let mut grad = LstmParams::zeros(p.input_dim, p.hidden_dim, p.output_dim);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grad.add_scaled(inv, g);
    }
    Ok((loss * inv, grad))
}

/// Full-batch gradient descent with global-norm clipping. Returns the
/// trained parameters and the loss at the start of each epoch.
pub fn train(
    p: &LstmParams,
    data: &[Sample],
    config: &TrainConfig,
) -> Result<(LstmParams, Vec<f64>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptySeries);
    }
    if let Some(s) = data
        .iter()
        .find(|s| s.inputs.is_empty() || s.inputs.len() != s.targets.len())
    {
        return Err(Error::LengthMismatch {
            left: s.inputs.len(),
            right: s.targets.len(),
        });
    }
    let mut params = p.clone();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, mut grad) = dataset_gradient(&params, data)?;
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(loss);
        grad.clip_global_norm(config.grad_clip);
        params.add_scaled(-config.learning_rate, &grad);
    }
    Ok((params, history))
}

/// Initializes parameters from `config.seed` and trains them.
pub fn train_new(
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    data: &[Sample],
    config: &TrainConfig,
) -> Result<(LstmParams, Vec<f64>)> {
    let p = LstmParams::random(input_dim, hidden_dim, output_dim, config.seed)?;
    train(&p, data, config)
}

/// Forecasts `steps` points by sliding the window forward: each prediction
/// is the last output of a fresh run over the current window, and is then
/// appended to the window while its oldest point is dropped.
pub fn predict_free_running(
    p: &LstmParams,
    seed_window: &[Vector],
    steps: usize,
) -> Result<Vec<Vector>> {
    check_sequence(seed_window)?;
    if p.input_dim != p.output_dim {
        return Err(Error::DimensionMismatch(format!(
            "free-running prediction needs equal input and output sizes, got {} and {}",
            p.input_dim, p.output_dim
        )));
    }
    let mut window = seed_window.to_vec();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (ys, _) = run_sequence(p, &LstmState::zeros(p.hidden_dim), &window)?;
        let next = ys.last().expect("window is nonempty").clone();
        window.remove(0);
        window.push(next.clone());
        out.push(next);
    }
    Ok(out)
}

//! Masked per-feature Gaussian world model.
//!
//! Every state feature `k` owns a one-hidden-layer network that reads the
//! concatenated `[prev_state, action]` vector through column `k` of a sampled
//! adjacency matrix. Masking happens before the hidden-layer product, so a
//! non-parent input cannot reach feature `k` by any path.

use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::matrix::Matrix;

pub const DEFAULT_HIDDEN: usize = 16;
/// Half of the smallest non-zero step any grid feature takes.
pub const DEFAULT_SIGMA_MIN: f64 = 0.05;
/// Half the largest possible one-step change of a `[0, 1]` feature. Without a
/// cap the network can explain a hard binary target with a huge sigma and stop
/// moving its mean.
pub const DEFAULT_SIGMA_MAX: f64 = 0.25;

#[inline]
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dimensions of the world model: state features, action features, hidden width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub d_s: usize,
    pub d_a: usize,
    pub d_h: usize,
}

impl ModelDims {
    pub fn new(d_s: usize, d_a: usize, d_h: usize) -> Self {
        ModelDims { d_s, d_a, d_h }
    }

    pub fn n_inputs(&self) -> usize {
        self.d_s + self.d_a
    }
}

/// Binary adjacency over `(d_s + d_a)` inputs × `d_s` state outputs.
///
/// State self-edges `A[k][k]` are always present.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Graph {
    d_s: usize,
    d_a: usize,
    edges: Vec<bool>,
}

impl Graph {
    /// Builds a graph from a predicate over `(input, output)`; self-edges are forced on.
    pub fn from_fn(d_s: usize, d_a: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let n_in = d_s + d_a;
        let mut edges = Vec::with_capacity(n_in * d_s);
        for i in 0..n_in {
            for k in 0..d_s {
                edges.push(i == k || f(i, k));
            }
        }
        Graph { d_s, d_a, edges }
    }

    /// Only the forced self-edges.
    pub fn self_only(d_s: usize, d_a: usize) -> Self {
        Self::from_fn(d_s, d_a, |_, _| false)
    }

    pub fn complete(d_s: usize, d_a: usize) -> Self {
        Self::from_fn(d_s, d_a, |_, _| true)
    }

    /// Parses rows of `0`/`1`; rejects graphs that drop a self-edge.
    pub fn from_rows(d_s: usize, d_a: usize, rows: &[&[u8]]) -> Result<Self> {
        check_len("graph rows", d_s + d_a, rows.len())?;
        let mut edges = Vec::with_capacity((d_s + d_a) * d_s);
        for (i, row) in rows.iter().enumerate() {
            check_len("graph row", d_s, row.len())?;
            for (k, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(Error::Contract(format!("graph entry ({i},{k}) = {v}")));
                }
                if i == k && v == 0 {
                    return Err(Error::Contract(format!("self-edge ({i},{k}) missing")));
                }
                edges.push(v == 1);
            }
        }
        Ok(Graph { d_s, d_a, edges })
    }

    pub fn d_s(&self) -> usize {
        self.d_s
    }

    pub fn d_a(&self) -> usize {
        self.d_a
    }

    pub fn n_inputs(&self) -> usize {
        self.d_s + self.d_a
    }

    #[inline]
    pub fn has_edge(&self, input: usize, output: usize) -> bool {
        self.edges[input * self.d_s + output]
    }

    /// Sets a learnable edge. Self-edges cannot be removed.
    pub fn set_edge(&mut self, input: usize, output: usize, present: bool) {
        if input == output {
            return;
        }
        self.edges[input * self.d_s + output] = present;
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }

    /// Removes state feature `index`, dropping its input row and output column.
    pub fn remove_state(&self, index: usize) -> Graph {
        assert!(index < self.d_s);
        let d_s = self.d_s - 1;
        Graph::from_fn(d_s, self.d_a, |i, k| {
            let src_i = if i >= index { i + 1 } else { i };
            let src_k = if k >= index { k + 1 } else { k };
            self.has_edge(src_i, src_k)
        })
    }
}

impl std::fmt::Debug for Graph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Graph {}x{} [", self.n_inputs(), self.d_s)?;
        for i in 0..self.n_inputs() {
            write!(f, "  ")?;
            for k in 0..self.d_s {
                write!(f, "{}", u8::from(self.has_edge(i, k)))?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Weights of the sub-network predicting one state feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    /// Hidden weights, `d_h × (d_s + d_a)`.
    pub w: Matrix,
    pub b_h: Vec<f64>,
    pub w_mu: Vec<f64>,
    pub b_mu: f64,
    pub w_sigma: Vec<f64>,
    pub b_sigma: f64,
}

impl FeatureBlock {
    fn zeros(d_h: usize, n_in: usize) -> Self {
        FeatureBlock {
            w: Matrix::zeros(d_h, n_in),
            b_h: vec![0.0; d_h],
            w_mu: vec![0.0; d_h],
            b_mu: 0.0,
            w_sigma: vec![0.0; d_h],
            b_sigma: 0.0,
        }
    }

    fn init<R: Rng + ?Sized>(d_h: usize, n_in: usize, rng: &mut R) -> Self {
        let hidden_scale = 0.5 / (n_in as f64).sqrt();
        let head_scale = 0.5 / (d_h as f64).sqrt();
        let mut block = Self::zeros(d_h, n_in);
        for v in block.w.as_mut_slice() {
            *v = rng.gen_range(-hidden_scale..=hidden_scale);
        }
        for v in &mut block.w_mu {
            *v = rng.gen_range(-head_scale..=head_scale);
        }
        for v in &mut block.w_sigma {
            *v = rng.gen_range(-head_scale..=head_scale);
        }
        block
    }

    fn slices(&self) -> [&[f64]; 6] {
        [
            self.w.as_slice(),
            &self.b_h,
            &self.w_mu,
            std::slice::from_ref(&self.b_mu),
            &self.w_sigma,
            std::slice::from_ref(&self.b_sigma),
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w.as_mut_slice(),
            &mut self.b_h,
            &mut self.w_mu,
            std::slice::from_mut(&mut self.b_mu),
            &mut self.w_sigma,
            std::slice::from_mut(&mut self.b_sigma),
        ]
    }
}

/// Functional parameters shared by every sampled graph.
///
/// Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalParams {
    dims: ModelDims,
    sigma_min: f64,
    sigma_max: f64,
    blocks: Vec<FeatureBlock>,
}

impl FunctionalParams {
    pub fn zeros(dims: ModelDims, sigma_min: f64) -> Self {
        FunctionalParams {
            dims,
            sigma_min,
            sigma_max: f64::INFINITY,
            blocks: (0..dims.d_s)
                .map(|_| FeatureBlock::zeros(dims.d_h, dims.n_inputs()))
                .collect(),
        }
    }

    /// Hidden and head weights uniform in `±0.5/sqrt(fan_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, sigma_min: f64, rng: &mut R) -> Self {
        FunctionalParams {
            dims,
            sigma_min,
            sigma_max: f64::INFINITY,
            blocks: (0..dims.d_s)
                .map(|_| FeatureBlock::init(dims.d_h, dims.n_inputs(), rng))
                .collect(),
        }
    }

    /// Softly caps the predicted standard deviation below `sigma_max`;
    /// unbounded by default.
    ///
    /// Panics unless `sigma_max >= sigma_min`.
    pub fn with_sigma_max(mut self, sigma_max: f64) -> Self {
        assert!(sigma_max >= self.sigma_min, "sigma_max below sigma_min");
        self.sigma_max = sigma_max;
        self
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims, self.sigma_min).with_sigma_max(self.sigma_max)
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn blocks(&self) -> &[FeatureBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [FeatureBlock] {
        &mut self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len() * {
            let d_h = self.dims.d_h;
            d_h * self.dims.n_inputs() + 3 * d_h + 2
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All parameters in a fixed order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.blocks
            .iter()
            .flat_map(|b| b.slices().into_iter().flat_map(|s| s.iter().copied()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.slices_mut().into_iter().flat_map(|s| s.iter_mut()))
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.values().position(|v| !v.is_finite())
    }

    fn check_finite(&self, what: &'static str) -> Result<()> {
        match self.first_non_finite() {
            Some(index) => Err(Error::NonFinite { what, index }),
            None => Ok(()),
        }
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Contract(format!(
                "parameter shapes differ: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        assert_eq!(self.dims, other.dims);
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
    }

    /// Inserts a new state feature at position `index`: a fresh output block
    /// and a fresh input column (at the same input index) in every existing block.
    pub fn insert_state_feature<R: Rng + ?Sized>(&self, index: usize, rng: &mut R) -> Self {
        assert!(index <= self.dims.d_s);
        let dims = ModelDims::new(self.dims.d_s + 1, self.dims.d_a, self.dims.d_h);
        let scale = 0.5 / (dims.n_inputs() as f64).sqrt();
        let mut blocks: Vec<FeatureBlock> = self
            .blocks
            .iter()
            .map(|b| FeatureBlock {
                w: b.w.insert_col(index, |_| rng.gen_range(-scale..=scale)),
                ..b.clone()
            })
            .collect();
        blocks.insert(index, FeatureBlock::init(dims.d_h, dims.n_inputs(), rng));
        FunctionalParams {
            dims,
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            blocks,
        }
    }
}

/// Diagonal Gaussian over the next state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrediction {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// One observed `(s_{t-1}, a_t, s_t)` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub prev_state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
}

impl Transition {
    pub fn new(prev_state: Vec<f64>, action: Vec<f64>, next_state: Vec<f64>) -> Result<Self> {
        check_len("transition next_state", prev_state.len(), next_state.len())?;
        let ones = action.iter().filter(|&&a| a == 1.0).count();
        let zeros = action.iter().filter(|&&a| a == 0.0).count();
        if ones != 1 || ones + zeros != action.len() {
            return Err(Error::Contract(format!("action {action:?} is not one-hot")));
        }
        if let Some(v) = prev_state.iter().chain(&next_state).find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("state entry {v} outside [0,1]")));
        }
        Ok(Transition {
            prev_state,
            action,
            next_state,
        })
    }
}

/// Intermediate values for one feature, reused by the backward pass.
struct FeatureTrace {
    masked: Vec<f64>,
    hidden: Vec<f64>,
    mu: f64,
    sigma: f64,
    /// d(log sigma)/d(pre-activation of the sigma head); zero on the floor.
    log_sigma_slope: f64,
}

fn check_graph(params: &FunctionalParams, graph: &Graph) -> Result<()> {
    check_len("graph state features", params.dims.d_s, graph.d_s())?;
    check_len("graph action features", params.dims.d_a, graph.d_a())
}

fn feature_trace(
    block: &FeatureBlock,
    graph: &Graph,
    k: usize,
    input: &[f64],
    params: &FunctionalParams,
) -> FeatureTrace {
    let masked: Vec<f64> = input
        .iter()
        .enumerate()
        .map(|(i, &x)| if graph.has_edge(i, k) { x } else { 0.0 })
        .collect();
    let hidden: Vec<f64> = (0..block.w.rows())
        .map(|j| {
            let z: f64 = block.w.row(j).iter().zip(&masked).map(|(w, x)| w * x).sum::<f64>() + block.b_h[j];
            logistic(z)
        })
        .collect();
    let mu = dot(&block.w_mu, &hidden) + block.b_mu;
    let s = dot(&block.w_sigma, &hidden) + block.b_sigma;
    // soft cap: 1 / (e^-s + 1/sigma_max), which is exactly e^s without a cap
    let (raw, slope) = if params.sigma_max.is_finite() {
        let v = 1.0 / ((-s).exp() + 1.0 / params.sigma_max);
        (v, 1.0 - v / params.sigma_max)
    } else {
        (s.exp(), 1.0)
    };
    let floored = raw < params.sigma_min;
    FeatureTrace {
        masked,
        hidden,
        mu,
        sigma: if floored { params.sigma_min } else { raw },
        log_sigma_slope: if floored { 0.0 } else { slope },
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn concat_input(params: &FunctionalParams, prev_state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
    check_len("prev_state", params.dims.d_s, prev_state.len())?;
    check_len("action", params.dims.d_a, action.len())?;
    Ok(prev_state.iter().chain(action).copied().collect())
}

pub fn forward(
    params: &FunctionalParams,
    graph: &Graph,
    prev_state: &[f64],
    action: &[f64],
) -> Result<GaussianPrediction> {
    check_graph(params, graph)?;
    let input = concat_input(params, prev_state, action)?;
    let (mu, sigma) = params
        .blocks
        .iter()
        .enumerate()
        .map(|(k, block)| {
            let t = feature_trace(block, graph, k, &input, params);
            (t.mu, t.sigma)
        })
        .unzip();
    Ok(GaussianPrediction { mu, sigma })
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
fn gaussian_log_density(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - HALF_LN_2PI
}

/// Per-feature log-densities of `target`.
pub fn feature_log_likelihoods(pred: &GaussianPrediction, target: &[f64]) -> Result<Vec<f64>> {
    check_len("prediction sigma", pred.mu.len(), pred.sigma.len())?;
    check_len("target", pred.mu.len(), target.len())?;
    Ok(target
        .iter()
        .zip(pred.mu.iter().zip(&pred.sigma))
        .map(|(&x, (&mu, &sigma))| gaussian_log_density(x, mu, sigma))
        .collect())
}

/// Diagonal Gaussian log-density of `target` under `pred`.
pub fn log_likelihood(pred: &GaussianPrediction, target: &[f64]) -> Result<f64> {
    Ok(feature_log_likelihoods(pred, target)?.iter().sum())
}

/// Gradient, mean log-likelihood and per-feature mean log-likelihoods of a batch.
#[derive(Debug, Clone)]
pub struct BatchEvaluation {
    pub gradient: FunctionalParams,
    pub mean_log_likelihood: f64,
    pub feature_log_likelihood: Vec<f64>,
}

/// Mean log-likelihood of a batch under one graph, without gradients.
pub fn batch_log_likelihood(params: &FunctionalParams, graph: &Graph, batch: &[Transition]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut per_feature = vec![0.0; params.dims.d_s];
    for tr in batch {
        let pred = forward(params, graph, &tr.prev_state, &tr.action)?;
        for (acc, ll) in per_feature
            .iter_mut()
            .zip(feature_log_likelihoods(&pred, &tr.next_state)?)
        {
            *acc += ll;
        }
    }
    let n = batch.len() as f64;
    per_feature.iter_mut().for_each(|v| *v /= n);
    Ok((per_feature.iter().sum(), per_feature))
}

/// Backpropagates the mean per-transition log-likelihood through the masked network.
pub fn evaluate_batch(params: &FunctionalParams, graph: &Graph, batch: &[Transition]) -> Result<BatchEvaluation> {
    check_graph(params, graph)?;
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut grad = params.zeros_like();
    let mut per_feature = vec![0.0; params.dims.d_s];
    for tr in batch {
        let input = concat_input(params, &tr.prev_state, &tr.action)?;
        check_len("next_state", params.dims.d_s, tr.next_state.len())?;
        for (k, (block, g)) in params.blocks.iter().zip(&mut grad.blocks).enumerate() {
            let t = feature_trace(block, graph, k, &input, params);
            let target = tr.next_state[k];
            per_feature[k] += gaussian_log_density(target, t.mu, t.sigma);

            let resid = target - t.mu;
            let inv_var = 1.0 / (t.sigma * t.sigma);
            let d_mu = resid * inv_var;
            // gradient at the sigma head's pre-activation
            let d_log_sigma = (resid * resid * inv_var - 1.0) * t.log_sigma_slope;

            g.b_mu += d_mu;
            g.b_sigma += d_log_sigma;
            for j in 0..t.hidden.len() {
                let h = t.hidden[j];
                g.w_mu[j] += d_mu * h;
                g.w_sigma[j] += d_log_sigma * h;
                let d_z = (block.w_mu[j] * d_mu + block.w_sigma[j] * d_log_sigma) * h * (1.0 - h);
                g.b_h[j] += d_z;
                for (gw, x) in g.w.row_mut(j).iter_mut().zip(&t.masked) {
                    *gw += d_z * x;
                }
            }
        }
    }
    let n = batch.len() as f64;
    for v in grad.values_mut() {
        *v /= n;
    }
    per_feature.iter_mut().for_each(|v| *v /= n);
    Ok(BatchEvaluation {
        gradient: grad,
        mean_log_likelihood: per_feature.iter().sum(),
        feature_log_likelihood: per_feature,
    })
}

/// Gradient of the mean per-transition log-likelihood with respect to every functional parameter.
pub fn functional_gradient(params: &FunctionalParams, graph: &Graph, batch: &[Transition]) -> Result<FunctionalParams> {
    Ok(evaluate_batch(params, graph, batch)?.gradient)
}

/// Gradient ascent step: `params + lr * mean(gradients)`.
pub fn apply_functional_update(
    params: &FunctionalParams,
    gradients: &[FunctionalParams],
    lr: f64,
) -> Result<FunctionalParams> {
    let step = mean_gradient(gradients)?;
    params.check_shape(&step)?;
    let mut next = params.clone();
    next.add_scaled(&step, lr);
    next.check_finite("functional parameters after update")?;
    Ok(next)
}

/// Mean of per-graph gradients; fails on non-finite input.
pub fn mean_gradient(gradients: &[FunctionalParams]) -> Result<FunctionalParams> {
    let first = gradients
        .first()
        .ok_or_else(|| Error::Contract("no gradients to apply".into()))?;
    let mut mean = first.zeros_like();
    for g in gradients {
        mean.check_shape(g)?;
        g.check_finite("functional gradient")?;
        mean.add_scaled(g, 1.0 / gradients.len() as f64);
    }
    Ok(mean)
}

/// Adam moment estimates, applied on top of the mean log-likelihood gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: FunctionalParams,
    v: FunctionalParams,
    t: i32,
}

impl Adam {
    pub fn new(like: &FunctionalParams) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    /// Turns the mean gradient into a bias-corrected Adam direction and applies it
    /// through [`apply_functional_update`].
    pub fn step(
        &mut self,
        params: &FunctionalParams,
        gradients: &[FunctionalParams],
        lr: f64,
    ) -> Result<FunctionalParams> {
        let g = mean_gradient(gradients)?;
        params.check_shape(&g)?;
        if self.m.dims != g.dims {
            *self = Adam {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                ..Adam::new(&g)
            };
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut direction = g.zeros_like();
        for (((d, m), v), gi) in direction
            .values_mut()
            .zip(self.m.values_mut())
            .zip(self.v.values_mut())
            .zip(g.values())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
            *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
            *d = (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        apply_functional_update(params, std::slice::from_ref(&direction), lr)
    }
}

/// Feeds predicted means back as inputs; each returned state is clamped to `[0, 1]`.
pub fn rollout(
    params: &FunctionalParams,
    graph: &Graph,
    start_state: &[f64],
    actions: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    if actions.is_empty() {
        return Err(Error::Contract("rollout needs at least one action".into()));
    }
    let mut state = start_state.to_vec();
    let mut out = Vec::with_capacity(actions.len());
    for action in actions {
        let pred = forward(params, graph, &state, action)?;
        state = pred.mu.iter().map(|m| m.clamp(0.0, 1.0)).collect();
        out.push(state.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_params(dims: ModelDims, seed: u64) -> FunctionalParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = FunctionalParams::init(dims, DEFAULT_SIGMA_MIN, &mut rng);
        for v in p.values_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
        p
    }

    #[test]
    fn zero_params_give_unit_sigma_and_zero_mean() {
        let dims = ModelDims::new(3, 2, 4);
        let p = FunctionalParams::zeros(dims, DEFAULT_SIGMA_MIN);
        let g = Graph::complete(3, 2);
        let pred = forward(&p, &g, &[0.2, 0.7, 1.0], &[0.0, 1.0]).unwrap();
        assert_eq!(pred.mu, vec![0.0; 3]);
        assert_eq!(pred.sigma, vec![1.0; 3]);
    }

    #[test]
    fn forward_rejects_bad_lengths() {
        let dims = ModelDims::new(3, 2, 4);
        let p = FunctionalParams::zeros(dims, DEFAULT_SIGMA_MIN);
        let g = Graph::complete(3, 2);
        assert!(matches!(
            forward(&p, &g, &[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Dimension { .. })
        ));
        assert!(forward(&p, &Graph::complete(2, 2), &[0.0; 3], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn sigma_floor_applies() {
        let dims = ModelDims::new(2, 1, 3);
        let mut p = FunctionalParams::zeros(dims, DEFAULT_SIGMA_MIN);
        p.blocks_mut()[0].b_sigma = -50.0;
        let pred = forward(&p, &Graph::complete(2, 1), &[0.5, 0.5], &[1.0]).unwrap();
        assert_eq!(pred.sigma[0], DEFAULT_SIGMA_MIN);
        assert_eq!(pred.sigma[1], 1.0);
    }

    #[test]
    fn log_likelihood_closed_forms() {
        let pred = GaussianPrediction {
            mu: vec![0.3, 0.1, 0.9],
            sigma: vec![1.0; 3],
        };
        let ll = log_likelihood(&pred, &[0.3, 0.1, 0.9]).unwrap();
        assert!((ll + 1.5 * (2.0 * PI).ln()).abs() < 1e-12);

        let one = GaussianPrediction {
            mu: vec![0.0],
            sigma: vec![1.0],
        };
        let ll = log_likelihood(&one, &[2.0]).unwrap();
        assert!((ll - (-2.0 - 0.5 * (2.0 * PI).ln())).abs() < 1e-12);
    }

    #[test]
    fn masked_input_weights_get_zero_gradient() {
        let dims = ModelDims::new(3, 2, 4);
        let p = random_params(dims, 3);
        let g = Graph::self_only(3, 2);
        let batch = vec![Transition::new(vec![0.2, 0.4, 0.6], vec![1.0, 0.0], vec![0.3, 0.4, 0.5]).unwrap()];
        let grad = functional_gradient(&p, &g, &batch).unwrap();
        for (k, block) in grad.blocks().iter().enumerate() {
            for j in 0..dims.d_h {
                for i in 0..dims.n_inputs() {
                    if i != k {
                        assert_eq!(block.w[(j, i)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn duplicate_batch_matches_single() {
        let dims = ModelDims::new(3, 2, 4);
        let p = random_params(dims, 5);
        let g = Graph::complete(3, 2);
        let tr = Transition::new(vec![0.1, 0.5, 0.9], vec![0.0, 1.0], vec![0.2, 0.5, 0.8]).unwrap();
        let single = functional_gradient(&p, &g, std::slice::from_ref(&tr)).unwrap();
        let double = functional_gradient(&p, &g, &[tr.clone(), tr]).unwrap();
        for (a, b) in single.values().zip(double.values()) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn update_contracts() {
        let dims = ModelDims::new(2, 2, 3);
        let p = random_params(dims, 7);
        let g = random_params(dims, 8);
        assert_eq!(apply_functional_update(&p, std::slice::from_ref(&g), 0.0).unwrap(), p);

        let mut expected = p.clone();
        expected.add_scaled(&g, 1.0);
        assert_eq!(
            apply_functional_update(&p, std::slice::from_ref(&g), 1.0).unwrap(),
            expected
        );

        let mut neg = g.clone();
        neg.values_mut().for_each(|v| *v = -*v);
        assert_eq!(apply_functional_update(&p, &[g.clone(), neg], 0.5).unwrap(), p);

        let mut bad = g;
        bad.blocks_mut()[1].b_mu = f64::NAN;
        assert!(matches!(
            apply_functional_update(&p, &[bad], 0.1),
            Err(Error::NonFinite { .. })
        ));
        assert!(apply_functional_update(&p, &[], 0.1).is_err());
    }

    #[test]
    fn rollout_single_step_is_clamped_forward() {
        let dims = ModelDims::new(3, 2, 4);
        let mut p = random_params(dims, 11);
        p.blocks_mut()[0].b_mu = 3.0;
        p.blocks_mut()[1].b_mu = -3.0;
        let g = Graph::complete(3, 2);
        let start = [0.2, 0.4, 0.6];
        let a = vec![vec![1.0, 0.0]];
        let pred = forward(&p, &g, &start, &a[0]).unwrap();
        let traj = rollout(&p, &g, &start, &a).unwrap();
        assert_eq!(traj.len(), 1);
        let clamped: Vec<f64> = pred.mu.iter().map(|m| m.clamp(0.0, 1.0)).collect();
        assert_eq!(traj[0], clamped);
        assert_eq!(traj[0][0], 1.0);
        assert_eq!(traj[0][1], 0.0);
        assert!(rollout(&p, &g, &start, &[]).is_err());
    }

    #[test]
    fn transition_validation() {
        assert!(Transition::new(vec![0.5], vec![1.0, 1.0], vec![0.5]).is_err());
        assert!(Transition::new(vec![0.5], vec![0.0, 1.0], vec![1.5]).is_err());
        assert!(Transition::new(vec![0.5], vec![0.0, 1.0], vec![0.5, 0.1]).is_err());
        assert!(Transition::new(vec![0.5], vec![0.0, 1.0], vec![0.5]).is_ok());
    }

    #[test]
    fn graph_from_rows_rejects_missing_self_edge() {
        assert!(Graph::from_rows(2, 1, &[&[1, 0], &[0, 0], &[1, 1]]).is_err());
        let g = Graph::from_rows(2, 1, &[&[1, 0], &[0, 1], &[1, 0]]).unwrap();
        assert!(g.has_edge(2, 0) && !g.has_edge(2, 1));
        assert_eq!(g.edge_count(), 3);
    }

    #[test]
    fn insert_state_feature_preserves_existing_weights() {
        let dims = ModelDims::new(2, 2, 3);
        let p = random_params(dims, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = p.insert_state_feature(2, &mut rng);
        assert_eq!(q.dims(), ModelDims::new(3, 2, 3));
        for k in 0..2 {
            let (old, new) = (&p.blocks()[k], &q.blocks()[k]);
            assert_eq!(old.w_mu, new.w_mu);
            for j in 0..3 {
                assert_eq!(new.w[(j, 0)], old.w[(j, 0)]);
                assert_eq!(new.w[(j, 1)], old.w[(j, 1)]);
                assert_eq!(new.w[(j, 3)], old.w[(j, 2)]);
                assert_eq!(new.w[(j, 4)], old.w[(j, 3)]);
            }
        }
        assert_eq!(q.len(), 3 * (3 * 5 + 3 * 3 + 2));
    }
}

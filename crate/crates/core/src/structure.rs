//! Structural parameters: one logit per candidate `input → state feature` edge.
//!
//! State self-edges are frozen at `+clamp_bound` and never learned. All other
//! entries are updated by a score-function (REINFORCE) estimate of the
//! log-likelihood gradient minus a parsimony term that pulls probabilities down.

use log::warn;
use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::matrix::Matrix;
use crate::model::{logistic, Graph};

pub const DEFAULT_CLAMP_BOUND: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralParams {
    d_s: usize,
    d_a: usize,
    gamma: Matrix,
    clamp_bound: f64,
}

/// `logistic(gamma)` for every entry, frozen ones included.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeProbabilities {
    pub p: Matrix,
}

impl EdgeProbabilities {
    pub fn get(&self, input: usize, output: usize) -> f64 {
        self.p[(input, output)]
    }
}

/// How REINFORCE turns sampled-graph scores into a gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReinforceOptions {
    /// Subtract the mean score across samples.
    pub baseline: bool,
    /// Credit column `k` with feature `k`'s own log-likelihood instead of the total.
    pub per_feature_credit: bool,
}

impl Default for ReinforceOptions {
    fn default() -> Self {
        ReinforceOptions {
            baseline: true,
            per_feature_credit: true,
        }
    }
}

/// Score of one sampled graph: total log-likelihood and its per-feature split.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphScore {
    pub total: f64,
    pub per_feature: Vec<f64>,
}

impl StructuralParams {
    /// All learnable logits at zero (probability 0.5), self-edges at `+clamp_bound`.
    pub fn new(d_s: usize, d_a: usize, clamp_bound: f64) -> Self {
        assert!(clamp_bound > 0.0, "clamp bound must be positive");
        let gamma = Matrix::from_fn(d_s + d_a, d_s, |i, k| if i == k { clamp_bound } else { 0.0 });
        StructuralParams {
            d_s,
            d_a,
            gamma,
            clamp_bound,
        }
    }

    /// Builds from a full logit matrix. Learnable entries are clamped; the diagonal is reset to frozen.
    pub fn from_logits(d_s: usize, d_a: usize, clamp_bound: f64, logits: &Matrix) -> Result<Self> {
        if logits.shape() != (d_s + d_a, d_s) {
            return Err(Error::Contract(format!(
                "logit matrix shape {:?}, expected {:?}",
                logits.shape(),
                (d_s + d_a, d_s)
            )));
        }
        if let Some(index) = logits.first_non_finite() {
            return Err(Error::NonFinite {
                what: "structural logits",
                index,
            });
        }
        let mut sp = Self::new(d_s, d_a, clamp_bound);
        let cells: Vec<_> = sp.learnable().collect();
        for (i, k) in cells {
            sp.gamma[(i, k)] = logits[(i, k)].clamp(-clamp_bound, clamp_bound);
        }
        Ok(sp)
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

    pub fn clamp_bound(&self) -> f64 {
        self.clamp_bound
    }

    pub fn gamma(&self) -> &Matrix {
        &self.gamma
    }

    pub fn logit(&self, input: usize, output: usize) -> f64 {
        self.gamma[(input, output)]
    }

    #[inline]
    pub fn is_frozen(&self, input: usize, output: usize) -> bool {
        input == output
    }

    /// Learnable `(input, output)` pairs in row-major order.
    pub fn learnable(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let d_s = self.d_s;
        (0..self.n_inputs())
            .flat_map(move |i| (0..d_s).map(move |k| (i, k)))
            .filter(|&(i, k)| i != k)
    }

    pub fn n_learnable(&self) -> usize {
        self.n_inputs() * self.d_s - self.d_s
    }

    /// Sets one learnable logit (clamped). Frozen entries are ignored.
    pub fn set_logit(&mut self, input: usize, output: usize, value: f64) {
        if !self.is_frozen(input, output) {
            self.gamma[(input, output)] = value.clamp(-self.clamp_bound, self.clamp_bound);
        }
    }

    /// Inserts a new state feature at `index`: a new input row at `index` and a new
    /// output column at `index`, all new learnable logits zero.
    pub fn insert_state_feature(&self, index: usize) -> Self {
        assert!(index <= self.d_s);
        let gamma = self.gamma.insert_row(index, 0.0).insert_col(index, |_| 0.0);
        let mut sp = StructuralParams {
            d_s: self.d_s + 1,
            d_a: self.d_a,
            gamma,
            clamp_bound: self.clamp_bound,
        };
        sp.gamma[(index, index)] = self.clamp_bound;
        sp
    }

    fn check_same_shape(&self, m: &Matrix, what: &'static str) -> Result<()> {
        check_len(what, self.n_inputs(), m.rows())?;
        check_len(what, self.d_s, m.cols())
    }
}

pub fn edge_probabilities(sp: &StructuralParams) -> EdgeProbabilities {
    EdgeProbabilities {
        p: sp.gamma.map(logistic),
    }
}

/// Draws each learnable edge independently from `Bernoulli(logistic(gamma))`.
pub fn sample_graph<R: Rng + ?Sized>(sp: &StructuralParams, rng: &mut R) -> Graph {
    let probs = edge_probabilities(sp);
    Graph::from_fn(sp.d_s, sp.d_a, |i, k| rng.gen::<f64>() < probs.p[(i, k)])
}

/// `ln p(A = 1)` and `ln p(A = 0)` computed stably from the logit.
#[inline]
fn log_probs(logit: f64) -> (f64, f64) {
    // ln σ(x) = -softplus(-x), ln(1 - σ(x)) = -softplus(x)
    (-softplus(-logit), -softplus(logit))
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log-probability of the learnable part of `g`; frozen entries contribute nothing.
pub fn log_prob_graph(sp: &StructuralParams, g: &Graph) -> Result<f64> {
    check_len("graph state features", sp.d_s, g.d_s())?;
    check_len("graph action features", sp.d_a, g.d_a())?;
    Ok(sp
        .learnable()
        .map(|(i, k)| {
            let (lp1, lp0) = log_probs(sp.gamma[(i, k)]);
            if g.has_edge(i, k) {
                lp1
            } else {
                lp0
            }
        })
        .sum())
}

/// Mean over samples of `(A - p) * (score - baseline)` with the total score per graph.
///
/// Samples with a non-finite score are dropped with a warning.
pub fn reinforce_gradient(sp: &StructuralParams, samples: &[(Graph, f64)], baseline: bool) -> Result<Matrix> {
    let scored: Vec<(&Graph, GraphScore)> = samples
        .iter()
        .map(|(g, s)| {
            (
                g,
                GraphScore {
                    total: *s,
                    per_feature: Vec::new(),
                },
            )
        })
        .collect();
    estimate(sp, &scored, baseline, |s, _| s.total)
}

/// REINFORCE gradient with configurable baseline and credit assignment.
///
/// With per-feature credit, column `k` uses only feature `k`'s log-likelihood.
/// Other features do not depend on column `k` of the graph, so the expectation
/// is the same as with the total score.
pub fn reinforce_gradient_scored(
    sp: &StructuralParams,
    samples: &[(Graph, GraphScore)],
    options: ReinforceOptions,
) -> Result<Matrix> {
    let refs: Vec<(&Graph, GraphScore)> = samples.iter().map(|(g, s)| (g, s.clone())).collect();
    if options.per_feature_credit {
        for (_, s) in &refs {
            check_len("per-feature score", sp.d_s, s.per_feature.len())?;
        }
        estimate(sp, &refs, options.baseline, |s, k| s.per_feature[k])
    } else {
        estimate(sp, &refs, options.baseline, |s, _| s.total)
    }
}

fn estimate(
    sp: &StructuralParams,
    samples: &[(&Graph, GraphScore)],
    baseline: bool,
    score: impl Fn(&GraphScore, usize) -> f64,
) -> Result<Matrix> {
    if samples.is_empty() {
        return Err(Error::Contract("REINFORCE needs at least one sample".into()));
    }
    for (g, _) in samples {
        check_len("graph state features", sp.d_s, g.d_s())?;
        check_len("graph action features", sp.d_a, g.d_a())?;
    }
    let kept: Vec<&(&Graph, GraphScore)> = samples
        .iter()
        .filter(|(_, s)| (0..sp.d_s).all(|k| score(s, k).is_finite()))
        .collect();
    if kept.len() < samples.len() {
        warn!(
            "dropped {} of {} REINFORCE samples with non-finite scores",
            samples.len() - kept.len(),
            samples.len()
        );
    }
    let mut grad = Matrix::zeros(sp.n_inputs(), sp.d_s);
    if kept.is_empty() {
        warn!("all REINFORCE samples dropped; returning zero gradient");
        return Ok(grad);
    }
    let n = kept.len() as f64;
    let baselines: Vec<f64> = (0..sp.d_s)
        .map(|k| {
            if baseline {
                kept.iter().map(|(_, s)| score(s, k)).sum::<f64>() / n
            } else {
                0.0
            }
        })
        .collect();
    let probs = edge_probabilities(sp);
    for (g, s) in &kept {
        for (i, k) in sp.learnable() {
            let a = if g.has_edge(i, k) { 1.0 } else { 0.0 };
            grad[(i, k)] += (a - probs.p[(i, k)]) * (score(s, k) - baselines[k]);
        }
    }
    for v in grad.as_mut_slice() {
        *v /= n;
    }
    Ok(grad)
}

/// Elementwise derivative of `logistic(gamma)`: `p (1 - p)`, zero on frozen entries.
pub fn sparsity_gradient(sp: &StructuralParams) -> Matrix {
    Matrix::from_fn(sp.n_inputs(), sp.d_s, |i, k| {
        if sp.is_frozen(i, k) {
            0.0
        } else {
            let p = logistic(sp.gamma[(i, k)]);
            p * (1.0 - p)
        }
    })
}

/// `gamma += lr * (reinforce - alpha * sparsity)` on learnable entries, then clamp.
pub fn apply_structural_update(
    sp: &StructuralParams,
    reinforce_grad: &Matrix,
    sparsity_grad: &Matrix,
    lr: f64,
    alpha: f64,
) -> Result<StructuralParams> {
    sp.check_same_shape(reinforce_grad, "reinforce gradient")?;
    sp.check_same_shape(sparsity_grad, "sparsity gradient")?;
    for (what, m) in [
        ("reinforce gradient", reinforce_grad),
        ("sparsity gradient", sparsity_grad),
    ] {
        if let Some(index) = m.first_non_finite() {
            return Err(Error::NonFinite { what, index });
        }
    }
    if !lr.is_finite() || !alpha.is_finite() {
        return Err(Error::Contract(format!("non-finite rates lr={lr}, alpha={alpha}")));
    }
    let mut next = sp.clone();
    let bound = sp.clamp_bound;
    for (i, k) in sp.learnable() {
        let step = lr * (reinforce_grad[(i, k)] - alpha * sparsity_grad[(i, k)]);
        next.gamma[(i, k)] = (sp.gamma[(i, k)] + step).clamp(-bound, bound);
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn saturated(d_s: usize, d_a: usize, value: f64) -> StructuralParams {
        let mut sp = StructuralParams::new(d_s, d_a, DEFAULT_CLAMP_BOUND);
        let cells: Vec<_> = sp.learnable().collect();
        for (i, k) in cells {
            sp.set_logit(i, k, value);
        }
        sp
    }

    #[test]
    fn initial_probabilities_are_half() {
        let sp = StructuralParams::new(5, 4, DEFAULT_CLAMP_BOUND);
        let p = edge_probabilities(&sp);
        for (i, k) in sp.learnable() {
            assert_eq!(p.get(i, k), 0.5);
        }
        for k in 0..5 {
            assert!((p.get(k, k) - 0.993_307).abs() < 1e-6);
        }
    }

    #[test]
    fn clamp_bound_probabilities() {
        let hi = saturated(2, 1, 5.0);
        let lo = saturated(2, 1, -5.0);
        assert!((edge_probabilities(&hi).get(2, 0) - 0.993_307_149).abs() < 1e-8);
        assert!((edge_probabilities(&lo).get(2, 0) - 0.006_692_851).abs() < 1e-8);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let sp = StructuralParams::new(4, 4, DEFAULT_CLAMP_BOUND);
        let a = sample_graph(&sp, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_graph(&sp, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn negative_saturation_samples_mostly_self_edges() {
        let sp = saturated(3, 2, -5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let mut off = 0usize;
        for _ in 0..n {
            let g = sample_graph(&sp, &mut rng);
            off += g.edge_count() - 3;
        }
        let freq = off as f64 / (n * sp.n_learnable()) as f64;
        assert!(freq < 0.01, "off-diagonal frequency {freq}");
    }

    #[test]
    fn log_prob_at_zero_is_e_ln_half() {
        let sp = StructuralParams::new(3, 2, DEFAULT_CLAMP_BOUND);
        let g = Graph::complete(3, 2);
        let lp = log_prob_graph(&sp, &g).unwrap();
        assert!((lp + 12.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn log_prob_of_most_likely_graph_at_bounds() {
        let mut sp = StructuralParams::new(2, 1, DEFAULT_CLAMP_BOUND);
        sp.set_logit(1, 0, 5.0);
        sp.set_logit(0, 1, -5.0);
        sp.set_logit(2, 0, 5.0);
        sp.set_logit(2, 1, -5.0);
        let g = Graph::from_rows(2, 1, &[&[1, 0], &[1, 1], &[1, 0]]).unwrap();
        let lp = log_prob_graph(&sp, &g).unwrap();
        assert!((lp - 4.0 * logistic(5.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn single_sample_with_baseline_is_zero() {
        let sp = StructuralParams::new(2, 2, DEFAULT_CLAMP_BOUND);
        let g = sample_graph(&sp, &mut ChaCha8Rng::seed_from_u64(3));
        let grad = reinforce_gradient(&sp, &[(g, -17.5)], true).unwrap();
        assert!(grad.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_scores_are_dropped() {
        let sp = StructuralParams::new(2, 1, DEFAULT_CLAMP_BOUND);
        let g = Graph::complete(2, 1);
        let all_bad = reinforce_gradient(&sp, &[(g.clone(), f64::NAN)], false).unwrap();
        assert!(all_bad.as_slice().iter().all(|&v| v == 0.0));

        let mixed = reinforce_gradient(&sp, &[(g.clone(), 2.0), (g.clone(), f64::INFINITY)], false).unwrap();
        let clean = reinforce_gradient(&sp, &[(g, 2.0)], false).unwrap();
        assert_eq!(mixed, clean);
        assert!(reinforce_gradient(&sp, &[], false).is_err());
    }

    #[test]
    fn frozen_entries_get_zero_gradient() {
        let sp = StructuralParams::new(3, 1, DEFAULT_CLAMP_BOUND);
        let g = Graph::self_only(3, 1);
        let grad = reinforce_gradient(&sp, &[(g, 4.0)], false).unwrap();
        for k in 0..3 {
            assert_eq!(grad[(k, k)], 0.0);
        }
        let sg = sparsity_gradient(&sp);
        for k in 0..3 {
            assert_eq!(sg[(k, k)], 0.0);
        }
    }

    #[test]
    fn sparsity_gradient_values() {
        let sp = StructuralParams::new(2, 1, DEFAULT_CLAMP_BOUND);
        let sg = sparsity_gradient(&sp);
        for (i, k) in sp.learnable() {
            assert_eq!(sg[(i, k)], 0.25);
        }
        let sat = saturated(2, 1, -5.0);
        let sg = sparsity_gradient(&sat);
        assert!((sg[(2, 1)] - 0.006_648_057).abs() < 1e-8);
    }

    #[test]
    fn sparsity_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut sp = StructuralParams::new(3, 2, DEFAULT_CLAMP_BOUND);
        let cells: Vec<_> = sp.learnable().collect();
        for &(i, k) in &cells {
            sp.set_logit(i, k, rng.gen_range(-4.0..4.0));
        }
        let sg = sparsity_gradient(&sp);
        let h = 1e-5;
        for (i, k) in cells {
            let x = sp.logit(i, k);
            let fd = (logistic(x + h) - logistic(x - h)) / (2.0 * h);
            assert!((fd - sg[(i, k)]).abs() < 1e-6);
        }
    }

    #[test]
    fn update_contracts() {
        let sp = StructuralParams::new(2, 2, DEFAULT_CLAMP_BOUND);
        let zero = Matrix::zeros(4, 2);
        let sg = sparsity_gradient(&sp);
        assert_eq!(apply_structural_update(&sp, &zero, &sg, 0.0, 0.05).unwrap(), sp);

        let down = apply_structural_update(&sp, &zero, &sg, 0.1, 0.05).unwrap();
        for (i, k) in sp.learnable() {
            assert!(down.logit(i, k) < sp.logit(i, k));
        }

        let mut push = Matrix::zeros(4, 2);
        push[(2, 0)] = 1000.0;
        let up = apply_structural_update(&sp, &push, &sg, 1.0, 0.0).unwrap();
        assert_eq!(up.logit(2, 0), DEFAULT_CLAMP_BOUND);

        let mut bad = Matrix::zeros(4, 2);
        bad[(1, 0)] = f64::NAN;
        assert!(apply_structural_update(&sp, &bad, &sg, 0.1, 0.05).is_err());
        assert!(apply_structural_update(&sp, &Matrix::zeros(3, 2), &sg, 0.1, 0.05).is_err());
    }

    #[test]
    fn insert_state_feature_layout() {
        let mut sp = StructuralParams::new(2, 2, DEFAULT_CLAMP_BOUND);
        sp.set_logit(2, 0, 1.5);
        sp.set_logit(1, 0, -2.0);
        let big = sp.insert_state_feature(2);
        assert_eq!(big.gamma().shape(), (5, 3));
        assert_eq!(big.logit(1, 0), -2.0);
        assert_eq!(big.logit(3, 0), 1.5);
        assert_eq!(big.logit(2, 2), DEFAULT_CLAMP_BOUND);
        for i in 0..5 {
            if i != 2 {
                assert_eq!(big.logit(i, 2), 0.0);
            }
        }
        for k in 0..3 {
            if k != 2 {
                assert_eq!(big.logit(2, k), 0.0);
            }
        }
    }
}

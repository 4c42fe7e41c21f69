//! Gradient-boosted regression trees with second-order split gain.
//!
//! Squared loss (`g = pred - y`, `h = 1`), exact greedy split search,
//! shrinkage, row subsampling without replacement and validation-based early
//! stopping. Trees are stored as pre-order node lists; the left child of a
//! split is always the next node.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::WindowedSample;
use crate::error::{Error, Result};
use crate::time;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostingConfig {
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub eta: f64,
    pub subsample: f64,
    pub num_rounds: usize,
    pub early_stop_rounds: usize,
    pub lambda: f64,
}

impl Default for BoostingConfig {
    fn default() -> Self {
        Self {
            max_depth: 5,
            min_child_weight: 4.0,
            eta: 0.05,
            subsample: 0.7,
            num_rounds: 500,
            early_stop_rounds: 15,
            lambda: 1.0,
        }
    }
}

impl BoostingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::InvalidArgument(format!("subsample must be in (0, 1], got {}", self.subsample)));
        }
        if self.num_rounds == 0 {
            return Err(Error::InvalidArgument("num_rounds must be at least 1".into()));
        }
        if !(self.eta > 0.0) || !(self.lambda >= 0.0) || !(self.min_child_weight >= 0.0) {
            return Err(Error::InvalidArgument("eta must be positive; lambda and min_child_weight non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        weight: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(weight: f64) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf { weight }],
        }
    }

    /// Routes left when `x[feature] < threshold`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { weight } => return weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    /// Structural check for trees read from disk.
    pub fn validate(&self, n_features: usize) -> Result<()> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(Error::MalformedArtifact("empty tree".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match *node {
                TreeNode::Leaf { weight } if !weight.is_finite() => {
                    return Err(Error::MalformedArtifact(format!("non-finite leaf weight at node {i}")));
                }
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= n_features || !threshold.is_finite() || left <= i || right <= i || left >= n || right >= n {
                        return Err(Error::MalformedArtifact(format!("invalid split at node {i}")));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Row-major feature matrix with one regression target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularData {
    n_features: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
}

impl TabularData {
    pub fn new(n_features: usize, features: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if n_features == 0 || features.len() != n_features * targets.len() {
            return Err(Error::Shape(format!(
                "{} feature values for {} rows of {n_features}",
                features.len(),
                targets.len()
            )));
        }
        Ok(Self {
            n_features,
            features,
            targets,
        })
    }

    pub fn from_samples(samples: &[WindowedSample]) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("tabular samples"))?;
        let n_features = first.inputs.len() + 2;
        let mut features = Vec::with_capacity(samples.len() * n_features);
        for s in samples {
            let row = tabular_features(s);
            if row.len() != n_features {
                return Err(Error::Shape("samples differ in window shape".into()));
            }
            features.extend(row);
        }
        Self::new(n_features, features, samples.iter().map(|s| s.target).collect())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    fn value(&self, row: usize, feature: usize) -> f64 {
        self.features[row * self.n_features + feature]
    }
}

/// Flattened window (row-major, W x F) followed by the hour of day and the
/// day of week (Monday = 0) of the predicted hour.
pub fn tabular_features(sample: &WindowedSample) -> Vec<f64> {
    let mut row = sample.inputs.data().to_vec();
    row.push(time::hour_of_day(sample.target_timestamp) as f64);
    row.push(time::day_of_week(sample.target_timestamp) as f64);
    row
}

/// Midpoint between two consecutive distinct values that still separates
/// them under the `x < threshold` rule.
pub fn split_threshold(lo: f64, hi: f64) -> f64 {
    let mid = (lo + hi) / 2.0;
    if mid > lo {
        mid
    } else {
        hi
    }
}

/// Relative margin by which a candidate must beat the best gain so far.
/// Splits that produce the same partition can differ in gain by a few ulps
/// depending on summation order; inside the margin the earlier candidate
/// (lower feature, then lower threshold) wins.
pub const GAIN_TIE_TOLERANCE: f64 = 1e-12;

/// `true` when `gain` beats `best` by more than the tie margin.
pub fn improves_gain(gain: f64, best: f64) -> bool {
    gain > best + GAIN_TIE_TOLERANCE * (1.0 + best.abs())
}

struct Grower<'a> {
    data: &'a TabularData,
    g: &'a [f64],
    h: &'a [f64],
    cfg: &'a BoostingConfig,
    nodes: Vec<TreeNode>,
    buf: Vec<(f64, usize)>,
}

impl Grower<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let (mut gs, mut hs) = (0.0, 0.0);
        for &r in &rows {
            gs += self.g[r];
            hs += self.h[r];
        }
        let idx = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            weight: -gs / (hs + self.cfg.lambda),
        });
        if depth >= self.cfg.max_depth {
            return idx;
        }
        if let Some((feature, threshold)) = self.best_split(&rows, gs, hs) {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| self.data.value(i, feature) < threshold);
            let left = self.grow(l, depth + 1);
            let right = self.grow(r, depth + 1);
            self.nodes[idx] = TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            };
        }
        idx
    }

    fn best_split(&mut self, rows: &[usize], gs: f64, hs: f64) -> Option<(usize, f64)> {
        let (lambda, mcw) = (self.cfg.lambda, self.cfg.min_child_weight);
        let parent = gs * gs / (hs + lambda);
        let mut best_gain = 0.0;
        let mut best = None;
        for f in 0..self.data.n_features {
            self.buf.clear();
            self.buf.extend(rows.iter().map(|&r| (self.data.value(r, f), r)));
            self.buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let (mut gl, mut hl) = (0.0, 0.0);
            for w in self.buf.windows(2) {
                let (v, r) = w[0];
                gl += self.g[r];
                hl += self.h[r];
                let next = w[1].0;
                if v == next || hl < mcw || hs - hl < mcw {
                    continue;
                }
                let (gr, hr) = (gs - gl, hs - hl);
                let gain = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent);
                if improves_gain(gain, best_gain) {
                    best_gain = gain;
                    best = Some((f, split_threshold(v, next)));
                }
            }
        }
        best
    }
}

/// Grow one tree on `rows` (indices into `data`) for gradients `g` and
/// hessians `h`, which are indexed like `data`.
pub fn build_tree(data: &TabularData, rows: &[usize], g: &[f64], h: &[f64], cfg: &BoostingConfig) -> Result<Tree> {
    if rows.is_empty() {
        return Err(Error::Empty("tree training rows"));
    }
    if g.len() != data.len() || h.len() != data.len() || rows.iter().any(|&r| r >= data.len()) {
        return Err(Error::Shape("gradients, hessians and rows must index the data".into()));
    }
    let mut sorted = rows.to_vec();
    sorted.sort_unstable();
    let mut grower = Grower {
        data,
        g,
        h,
        cfg,
        nodes: Vec::new(),
        buf: Vec::with_capacity(rows.len()),
    };
    grower.grow(sorted, 0);
    Ok(Tree { nodes: grower.nodes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtEnsemble {
    pub n_features: usize,
    pub base_score: f64,
    pub eta: f64,
    pub trees: Vec<Tree>,
}

impl GbdtEnsemble {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::FeatureMismatch(format!(
                "ensemble expects {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.base_score + self.eta * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict_all(&self, data: &TabularData) -> Result<Vec<f64>> {
        if data.n_features() != self.n_features {
            return Err(Error::FeatureMismatch(format!(
                "ensemble expects {} features, data has {}",
                self.n_features,
                data.n_features()
            )));
        }
        Ok((0..data.len()).map(|i| self.predict_unchecked(data.row(i))).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostingOutcome {
    pub ensemble: GbdtEnsemble,
    /// Validation RMSE after each round that was run.
    pub validation_rmse: Vec<f64>,
    pub best_round: usize,
}

fn rmse(pred: &[f64], target: &[f64]) -> f64 {
    (pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64).sqrt()
}

/// Number of rows drawn per round.
pub fn subsample_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

pub fn train_boosting(train: &TabularData, validation: &TabularData, cfg: &BoostingConfig, seed: u64) -> Result<BoostingOutcome> {
    cfg.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Empty("boosting split"));
    }
    if train.n_features() != validation.n_features() {
        return Err(Error::FeatureMismatch("train and validation feature counts differ".into()));
    }
    let n = train.len();
    let base_score = train.targets().iter().sum::<f64>() / n as f64;
    let mut ensemble = GbdtEnsemble {
        n_features: train.n_features(),
        base_score,
        eta: cfg.eta,
        trees: Vec::new(),
    };
    let mut pred_train = vec![base_score; n];
    let mut pred_val = vec![base_score; validation.len()];
    let hess = vec![1.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = subsample_size(n, cfg.subsample);
    let mut trace = Vec::new();
    let (mut best, mut best_round) = (f64::INFINITY, 0);

    for round in 0..cfg.num_rounds {
        let grad: Vec<f64> = pred_train.iter().zip(train.targets()).map(|(p, y)| p - y).collect();
        let rows: Vec<usize> = if take == n {
            (0..n).collect()
        } else {
            sample(&mut rng, n, take).into_vec()
        };
        let tree = build_tree(train, &rows, &grad, &hess, cfg)?;
        for (i, p) in pred_train.iter_mut().enumerate() {
            *p += cfg.eta * tree.predict(train.row(i));
        }
        for (i, p) in pred_val.iter_mut().enumerate() {
            *p += cfg.eta * tree.predict(validation.row(i));
        }
        ensemble.trees.push(tree);
        let score = rmse(&pred_val, validation.targets());
        trace.push(score);
        if score < best {
            best = score;
            best_round = round;
        } else if round - best_round >= cfg.early_stop_rounds {
            break;
        }
    }
    ensemble.trees.truncate(best_round + 1);
    Ok(BoostingOutcome {
        ensemble,
        validation_rmse: trace,
        best_round,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn data(rows: &[&[f64]], y: &[f64]) -> TabularData {
        TabularData::new(rows[0].len(), rows.concat(), y.to_vec()).unwrap()
    }

    fn stump(feature: usize, threshold: f64, l: f64, r: f64) -> Tree {
        Tree {
            nodes: vec![
                TreeNode::Split {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                },
                TreeNode::Leaf { weight: l },
                TreeNode::Leaf { weight: r },
            ],
        }
    }

    #[test]
    fn empty_and_single_leaf_ensembles() {
        let mut e = GbdtEnsemble {
            n_features: 2,
            base_score: 0.3,
            eta: 0.05,
            trees: vec![],
        };
        assert_eq!(e.predict(&[1.0, 2.0]).unwrap(), 0.3);
        e.trees.push(Tree::leaf(2.0));
        assert!((e.predict(&[1.0, 2.0]).unwrap() - 0.4).abs() < 1e-15);
        assert!(e.predict(&[1.0]).is_err());
    }

    #[test]
    fn hand_built_stumps() {
        let e = GbdtEnsemble {
            n_features: 2,
            base_score: 1.0,
            eta: 0.5,
            trees: vec![stump(0, 0.5, -1.0, 2.0), stump(1, 3.0, 4.0, -3.0), stump(0, 2.0, 0.5, 7.0)],
        };
        // x = (1, 3): right (2), right (-3), left (0.5) => 1 + 0.5 * (-0.5)
        assert!((e.predict(&[1.0, 3.0]).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn constant_residuals_give_single_leaf() {
        let d = data(&[&[1.0], &[2.0], &[3.0], &[4.0]], &[0.0; 4]);
        let g = vec![-2.0; 4];
        let t = build_tree(&d, &[0, 1, 2, 3], &g, &[1.0; 4], &BoostingConfig::default()).unwrap();
        assert_eq!(t.nodes, vec![TreeNode::Leaf { weight: 1.6 }]);
    }

    #[test]
    fn step_function_splits_at_midpoint() {
        let xs: Vec<[f64; 1]> = (0..10).map(|i| [i as f64]).collect();
        let rows: Vec<&[f64]> = xs.iter().map(|r| r.as_slice()).collect();
        let y: Vec<f64> = (0..10).map(|i| if i < 5 { 0.0 } else { 1.0 }).collect();
        let d = data(&rows, &y);
        let g: Vec<f64> = y.iter().map(|v| -v).collect();
        let cfg = BoostingConfig {
            max_depth: 1,
            ..Default::default()
        };
        let t = build_tree(&d, &(0..10).collect::<Vec<_>>(), &g, &[1.0; 10], &cfg).unwrap();
        assert!(matches!(t.nodes[0], TreeNode::Split { feature: 0, threshold, .. } if threshold == 4.5));
    }

    #[test]
    fn depth_zero_is_a_leaf() {
        let d = data(&[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0], &[5.0], &[6.0], &[7.0]], &[0.0; 8]);
        let g = [5.0, 5.0, 5.0, 5.0, -5.0, -5.0, -5.0, -5.0];
        let cfg = BoostingConfig {
            max_depth: 0,
            ..Default::default()
        };
        let t = build_tree(&d, &(0..8).collect::<Vec<_>>(), &g, &[1.0; 8], &cfg).unwrap();
        assert_eq!(t.leaf_count(), 1);
        assert!(build_tree(&d, &[], &g, &[1.0; 8], &cfg).is_err());
    }

    #[test]
    fn threshold_separates_adjacent_floats() {
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let t = split_threshold(lo, hi);
        assert!(lo < t && !(hi < t));
    }

    fn random_data(rng: &mut impl Rng, n: usize, f: usize) -> TabularData {
        let features = (0..n * f).map(|_| rng.random::<f64>()).collect();
        let targets = (0..n).map(|_| rng.random::<f64>()).collect();
        TabularData::new(f, features, targets).unwrap()
    }

    #[test]
    fn min_child_weight_and_depth_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_data(&mut rng, 300, 4);
        let g: Vec<f64> = d.targets().iter().map(|y| -y).collect();
        let cfg = BoostingConfig::default();
        let t = build_tree(&d, &(0..300).collect::<Vec<_>>(), &g, &vec![1.0; 300], &cfg).unwrap();
        assert!(t.depth() <= 5);
        fn count(t: &Tree, d: &TabularData, node: usize) -> usize {
            (0..d.len())
                .filter(|&i| {
                    let mut k = 0;
                    loop {
                        if k == node {
                            return true;
                        }
                        match t.nodes[k] {
                            TreeNode::Leaf { .. } => return false,
                            TreeNode::Split {
                                feature,
                                threshold,
                                left,
                                right,
                            } => {
                                let next = if d.row(i)[feature] < threshold { left } else { right };
                                if next > node {
                                    return false;
                                }
                                k = next;
                            }
                        }
                    }
                })
                .count()
        }
        for i in 0..t.nodes.len() {
            assert!(count(&t, &d, i) >= 4);
        }
    }

    #[test]
    fn full_sample_boosting_never_increases_training_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let train = random_data(&mut rng, 120, 5);
        let val = random_data(&mut rng, 30, 5);
        let cfg = BoostingConfig {
            subsample: 1.0,
            lambda: 0.0,
            num_rounds: 50,
            early_stop_rounds: 1000,
            ..Default::default()
        };
        let out = train_boosting(&train, &val, &cfg, 1).unwrap();
        let e = &out.ensemble;
        let mut prev = f64::INFINITY;
        for k in 0..=e.trees.len() {
            let mut partial = e.clone();
            partial.trees.truncate(k);
            let r = rmse(&partial.predict_all(&train).unwrap(), train.targets());
            assert!(r <= prev + 1e-15, "round {k}: {r} > {prev}");
            prev = r;
        }
    }

    #[test]
    fn early_stopping_keeps_best_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let train = random_data(&mut rng, 80, 3);
        // validation targets unrelated to training: RMSE stops improving fast
        let val = random_data(&mut rng, 20, 3);
        let cfg = BoostingConfig {
            num_rounds: 400,
            eta: 0.3,
            ..Default::default()
        };
        let out = train_boosting(&train, &val, &cfg, 2).unwrap();
        assert!(out.validation_rmse.len() < 400);
        assert_eq!(out.validation_rmse.len(), out.best_round + 1 + cfg.early_stop_rounds);
        assert_eq!(out.ensemble.trees.len(), out.best_round + 1);
        let best = out.validation_rmse.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(out.validation_rmse[out.best_round], best);
    }

    #[test]
    fn same_seed_same_ensemble() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let train = random_data(&mut rng, 60, 3);
        let val = random_data(&mut rng, 20, 3);
        let cfg = BoostingConfig {
            num_rounds: 30,
            ..Default::default()
        };
        let a = train_boosting(&train, &val, &cfg, 5).unwrap();
        let b = train_boosting(&train, &val, &cfg, 5).unwrap();
        assert_eq!(a.ensemble, b.ensemble);
        let c = train_boosting(&train, &val, &cfg, 6).unwrap();
        assert_ne!(a.ensemble.trees, c.ensemble.trees);
    }

    #[test]
    fn subsample_counts() {
        assert_eq!(subsample_size(10, 0.7), 7);
        assert_eq!(subsample_size(11, 0.7), 8);
        assert_eq!(subsample_size(3, 1.0), 3);
        assert_eq!(subsample_size(1, 0.01), 1);
    }

    #[test]
    fn config_validation() {
        assert!(BoostingConfig::default().validate().is_ok());
        for bad in [
            BoostingConfig { subsample: 0.0, ..Default::default() },
            BoostingConfig { subsample: 1.5, ..Default::default() },
            BoostingConfig { num_rounds: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn tree_validation_rejects_bad_links() {
        assert!(stump(0, 1.0, 0.0, 0.0).validate(1).is_ok());
        assert!(stump(3, 1.0, 0.0, 0.0).validate(2).is_err());
        let mut t = stump(0, 1.0, 0.0, 0.0);
        if let TreeNode::Split { left, .. } = &mut t.nodes[0] {
            *left = 0;
        }
        assert!(t.validate(1).is_err());
    }
}

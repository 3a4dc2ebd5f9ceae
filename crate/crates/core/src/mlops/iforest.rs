use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelError, PointBlock, Verdict};

pub const EULER_GAMMA: f64 = 0.5772156649;

/// Harmonic number approximation `ln(i) + γ`.
pub fn harmonic(i: f64) -> f64 {
    i.ln() + EULER_GAMMA
}

/// Average path length of an unsuccessful binary-search-tree lookup over
/// `n` keys: `2H(n−1) − 2(n−1)/n`, with `c(n) = 0` for `n ≤ 1`.
pub fn average_path_length(n: f64) -> f64 {
    if n <= 1.0 {
        0.0
    } else {
        2.0 * harmonic(n - 1.0) - 2.0 * (n - 1.0) / n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IForestConfig {
    pub tree_count: usize,
    pub subsample: usize,
    /// Outlier when `score > 0.5 + margin`.
    pub margin: f64,
    pub seed: u64,
}

impl Default for IForestConfig {
    fn default() -> Self {
        Self {
            tree_count: 100,
            subsample: 256,
            margin: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: u32,
        value: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        size: u64,
    },
}

/// Arena-allocated isolation tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct ITree {
    pub nodes: Vec<Node>,
}

impl ITree {
    /// Leaf depth plus the `c(size)` correction for the leaf `x` lands in.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        let mut depth = 0u32;
        loop {
            match self.nodes[i] {
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    i = if x[feature as usize] < value {
                        left as usize
                    } else {
                        right as usize
                    };
                    depth += 1;
                }
                Node::Leaf { size } => return depth as f64 + average_path_length(size as f64),
            }
        }
    }

    /// Depth of the deepest leaf.
    pub fn depth(&self) -> usize {
        fn walk(t: &ITree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Split { left, right, .. } => {
                    1 + walk(t, left as usize).max(walk(t, right as usize))
                }
                Node::Leaf { .. } => 0,
            }
        }
        walk(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IForestState {
    pub dim: usize,
    /// Effective subsample size, `min(configured, n)`.
    pub subsample: usize,
    pub height_limit: usize,
    pub margin: f64,
    pub seed: u64,
    pub trees: Vec<ITree>,
}

struct Builder<'a> {
    block: &'a PointBlock,
    height_limit: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn build(&mut self, idx: &mut [usize], depth: usize) -> u32 {
        let at = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf {
            size: idx.len() as u64,
        });
        if depth >= self.height_limit || idx.len() <= 1 {
            return at;
        }
        let d = self.block.dim();
        let mut ranges = Vec::with_capacity(d);
        for f in 0..d {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in idx.iter() {
                let v = self.block.row(i)[f];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi > lo {
                ranges.push((f, lo, hi));
            }
        }
        if ranges.is_empty() {
            return at;
        }
        let (feature, lo, hi) = ranges[self.rng.random_range(0..ranges.len())];
        let value = self.rng.random_range(lo..hi);
        // partition in place: values below the split go left
        let mut mid = 0;
        for j in 0..idx.len() {
            if self.block.row(idx[j])[feature] < value {
                idx.swap(mid, j);
                mid += 1;
            }
        }
        let (l, r) = idx.split_at_mut(mid);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[at as usize] = Node::Split {
            feature: feature as u32,
            value,
            left,
            right,
        };
        at
    }
}

/// Fits `tree_count` isolation trees, each on its own uniform subsample
/// drawn without replacement.
pub fn iforest_fit(block: &PointBlock, config: &IForestConfig) -> Result<IForestState, ModelError> {
    let n = block.len();
    if n < 2 {
        return Err(ModelError::TooFewPoints(n));
    }
    if config.tree_count == 0 || config.subsample < 2 {
        return Err(ModelError::InvalidArgument(
            "need at least one tree and a subsample of 2".into(),
        ));
    }
    let psi = config.subsample.min(n);
    let height_limit = (psi as f64).log2().ceil() as usize;
    let trees = (0..config.tree_count)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(t as u64);
            let mut idx = index::sample(&mut rng, n, psi).into_vec();
            let mut b = Builder {
                block,
                height_limit,
                rng,
                nodes: Vec::with_capacity(2 * psi),
            };
            b.build(&mut idx, 0);
            ITree { nodes: b.nodes }
        })
        .collect();
    Ok(IForestState {
        dim: block.dim(),
        subsample: psi,
        height_limit,
        margin: config.margin,
        seed: config.seed,
        trees,
    })
}

impl IForestState {
    /// Score from a mean path length: `2^(−E(h)/c(ψ))`.
    pub fn score_from_path(&self, mean_path: f64) -> f64 {
        (2.0f64).powf(-mean_path / average_path_length(self.subsample as f64))
    }

    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn score(&self, block: &PointBlock) -> Result<Vec<Verdict>, ModelError> {
        if self.trees.is_empty() {
            return Err(ModelError::Unfitted);
        }
        block.check_dim(self.dim)?;
        let cutoff = 0.5 + self.margin;
        Ok(block
            .rows()
            .map(|r| {
                let score = self.score_from_path(self.mean_path_length(r));
                Verdict {
                    score,
                    is_outlier: score > cutoff,
                }
            })
            .collect())
    }
}

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mean_std, ModelError, PointBlock, Verdict, FEATURES};

/// Streaming mini-batch k-means with a distance-to-nearest-centroid outlier
/// rule.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansState {
    pub k: usize,
    pub dim: usize,
    pub seed: u64,
    /// `k × dim`, row-major. Empty until the first batch.
    pub centroids: Vec<f64>,
    /// Points assimilated per centroid, starting at 1 after seeding.
    pub counts: Vec<u64>,
    /// Distances above this are outliers.
    pub threshold: f64,
}

impl KMeansState {
    pub fn new(k: usize, seed: u64) -> Self {
        Self::with_dim(k, FEATURES, seed)
    }

    pub fn with_dim(k: usize, dim: usize, seed: u64) -> Self {
        assert!(k >= 1 && dim >= 1);
        Self {
            k,
            dim,
            seed,
            centroids: Vec::new(),
            counts: Vec::new(),
            threshold: f64::INFINITY,
        }
    }

    pub fn is_initialized(&self) -> bool {
        !self.centroids.is_empty()
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// Total of all per-centroid counts.
    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Index of and squared distance to the nearest centroid.
    fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centroids.chunks_exact(self.dim).enumerate() {
            let d2: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best
    }

    /// k-means++ seeding from the distinct points of `block`.
    fn seed_centroids(&mut self, block: &PointBlock) -> Result<(), ModelError> {
        let distinct: HashSet<Vec<u64>> = block
            .rows()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        if distinct.len() < self.k {
            return Err(ModelError::DegenerateBatch {
                distinct: distinct.len(),
                k: self.k,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = block.len();
        let first = rng.random_range(0..n);
        self.centroids = block.row(first).to_vec();
        let mut d2: Vec<f64> = block
            .rows()
            .map(|r| sq_dist(r, block.row(first)))
            .collect();
        for _ in 1..self.k {
            let total: f64 = d2.iter().sum();
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // rounding at the tail may land on an already chosen point
            if d2[pick] == 0.0 {
                pick = d2
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap();
            }
            let chosen = block.row(pick).to_vec();
            for (i, r) in block.rows().enumerate() {
                d2[i] = d2[i].min(sq_dist(r, &chosen));
            }
            self.centroids.extend_from_slice(&chosen);
        }
        self.counts = vec![1; self.k];
        Ok(())
    }

    /// Assimilates one batch: every point is assigned to its nearest
    /// centroid (as of the start of the batch), then centroids move toward
    /// their points with per-centroid rate `1 / count`. The outlier
    /// threshold becomes mean + 3σ of the batch's assignment distances.
    pub fn update(&mut self, block: &PointBlock) -> Result<(), ModelError> {
        block.check_dim(self.dim)?;
        if block.is_empty() {
            return Ok(());
        }
        if !self.is_initialized() {
            self.seed_centroids(block)?;
        }
        let assignments: Vec<(usize, f64)> = block.rows().map(|r| self.nearest(r)).collect();
        let distances: Vec<f64> = assignments.iter().map(|(_, d2)| d2.sqrt()).collect();
        for (row, (c, _)) in block.rows().zip(&assignments) {
            self.counts[*c] += 1;
            let eta = 1.0 / self.counts[*c] as f64;
            let centroid = &mut self.centroids[c * self.dim..(c + 1) * self.dim];
            for (m, x) in centroid.iter_mut().zip(row) {
                *m += eta * (x - *m);
            }
        }
        let (mean, std) = mean_std(&distances);
        self.threshold = mean + 3.0 * std;
        Ok(())
    }

    pub fn score(&self, block: &PointBlock) -> Result<Vec<Verdict>, ModelError> {
        if !self.is_initialized() {
            return Err(ModelError::Uninitialized);
        }
        block.check_dim(self.dim)?;
        Ok(block
            .rows()
            .map(|r| {
                let score = self.nearest(r).1.sqrt();
                Verdict {
                    score,
                    is_outlier: score > self.threshold,
                }
            })
            .collect())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Functional form of [`KMeansState::update`].
pub fn kmeans_update(state: &KMeansState, block: &PointBlock) -> Result<KMeansState, ModelError> {
    let mut next = state.clone();
    next.update(block)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlops::{generate_block, GeneratorSpec};

    fn one_d(values: &[f64]) -> PointBlock {
        PointBlock::new(1, values.to_vec()).unwrap()
    }

    #[test]
    fn one_dimensional_fixed_point() {
        let mut s = KMeansState::with_dim(2, 1, 11);
        let batch = one_d(&[0.0, 0.0, 10.0, 10.0]);
        for _ in 0..50 {
            s.update(&batch).unwrap();
        }
        let mut c = s.centroids.clone();
        c.sort_by(f64::total_cmp);
        assert!((c[0] - 0.0).abs() < 1e-6);
        assert!((c[1] - 10.0).abs() < 1e-6);
    }

    #[test]
    fn one_dimensional_converges_from_offset_start() {
        // seeded on a perturbed batch, then fed the clean one
        let mut s = KMeansState::with_dim(2, 1, 5);
        s.update(&one_d(&[1.0, 9.0])).unwrap();
        let batch = one_d(&[0.0, 0.0, 10.0, 10.0].repeat(1000));
        for _ in 0..500 {
            s.update(&batch).unwrap();
        }
        let mut c = s.centroids.clone();
        c.sort_by(f64::total_cmp);
        // 1/count decay: the initial offset shrinks like 1/n
        assert!((c[0] - 0.0).abs() < 1e-5, "{c:?}");
        assert!((c[1] - 10.0).abs() < 1e-5, "{c:?}");
    }

    #[test]
    fn points_on_a_centroid_do_not_move_it() {
        let mut s = KMeansState::with_dim(2, 2, 1);
        s.update(&PointBlock::new(2, vec![0.0, 0.0, 5.0, 5.0]).unwrap())
            .unwrap();
        let before = s.clone();
        let c0 = before.centroid(0).to_vec();
        let same = PointBlock::new(2, [c0.clone(), c0.clone(), c0].concat()).unwrap();
        s.update(&same).unwrap();
        assert_eq!(s.centroids, before.centroids);
    }

    #[test]
    fn degenerate_batch() {
        let mut s = KMeansState::with_dim(3, 1, 0);
        assert_eq!(
            s.update(&one_d(&[1.0, 1.0, 2.0, 2.0])),
            Err(ModelError::DegenerateBatch { distinct: 2, k: 3 })
        );
        assert!(!s.is_initialized());
    }

    #[test]
    fn uninitialized_score() {
        let s = KMeansState::new(25, 0);
        assert_eq!(
            s.score(&PointBlock::zeros(1, 32)),
            Err(ModelError::Uninitialized)
        );
    }

    #[test]
    fn counts_are_conserved() {
        let mut s = KMeansState::new(25, 3);
        let spec = GeneratorSpec::with_seed(4);
        let g = crate::mlops::Generator::new(spec);
        let mut total = 0;
        for seq in 0..5 {
            let (b, _) = g.block(seq, 300);
            total += b.len() as u64;
            s.update(&b).unwrap();
        }
        assert_eq!(s.total_count(), total + 25);
        assert!(s.counts.iter().all(|&c| c >= 1));
        assert!(s.centroids.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn centroid_point_scores_zero() {
        let mut s = KMeansState::new(25, 3);
        let (b, _) = generate_block(&GeneratorSpec::with_seed(9), 500);
        s.update(&b).unwrap();
        let c = PointBlock::new(32, s.centroid(4).to_vec()).unwrap();
        let v = s.score(&c).unwrap();
        assert_eq!(v[0].score, 0.0);
        assert!(!v[0].is_outlier);
        assert_eq!(s.score(&b).unwrap().len(), 500);
    }

    #[test]
    fn functional_update_leaves_input_untouched() {
        let s = KMeansState::with_dim(2, 1, 0);
        let next = kmeans_update(&s, &one_d(&[0.0, 4.0])).unwrap();
        assert!(!s.is_initialized());
        assert!(next.is_initialized());
    }
}

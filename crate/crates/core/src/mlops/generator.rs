use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{PointBlock, FEATURES};

/// Labeled synthetic stream: Gaussian clusters plus uniformly scattered
/// outliers.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub cluster_count: usize,
    pub cluster_std: f64,
    pub outlier_fraction: f64,
    pub seed: u64,
    pub feature_dim: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            cluster_count: 25,
            cluster_std: 1.0,
            outlier_fraction: 0.05,
            seed: 0,
            feature_dim: FEATURES,
        }
    }
}

impl GeneratorSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

const CENTER_RANGE: f64 = 10.0;
const BOX_INFLATION: f64 = 1.5;

#[derive(Debug, Clone)]
pub struct Generator {
    spec: GeneratorSpec,
    centers: Vec<f64>,
    box_lo: Vec<f64>,
    box_hi: Vec<f64>,
}

impl Generator {
    /// Samples cluster centers in `[-10, 10]^d` from the seed; the outlier
    /// box is the clusters' ±3σ bounding box inflated 1.5× about its middle.
    pub fn new(spec: GeneratorSpec) -> Self {
        assert!(spec.cluster_count >= 1, "need at least one cluster");
        assert!(
            (0.0..1.0).contains(&spec.outlier_fraction),
            "outlier fraction must lie in [0, 1)"
        );
        let d = spec.feature_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let centers: Vec<f64> = (0..spec.cluster_count * d)
            .map(|_| rng.random_range(-CENTER_RANGE..=CENTER_RANGE))
            .collect();
        let mut box_lo = vec![f64::INFINITY; d];
        let mut box_hi = vec![f64::NEG_INFINITY; d];
        for c in centers.chunks_exact(d) {
            for j in 0..d {
                box_lo[j] = box_lo[j].min(c[j] - 3.0 * spec.cluster_std);
                box_hi[j] = box_hi[j].max(c[j] + 3.0 * spec.cluster_std);
            }
        }
        for j in 0..d {
            let mid = 0.5 * (box_lo[j] + box_hi[j]);
            let half = 0.5 * (box_hi[j] - box_lo[j]) * BOX_INFLATION;
            box_lo[j] = mid - half;
            box_hi[j] = mid + half;
        }
        Self {
            spec,
            centers,
            box_lo,
            box_hi,
        }
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Number of outliers injected into an `n`-point block.
    pub fn outlier_count(&self, n: usize) -> usize {
        (self.spec.outlier_fraction * n as f64).round() as usize
    }

    /// Block number `seq` of the stream; identical for identical
    /// `(seed, seq, n)`.
    pub fn block(&self, seq: u64, n: usize) -> (PointBlock, Vec<bool>) {
        assert!(n >= 1, "a block holds at least one point");
        let d = self.spec.feature_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        // stream 0 produced the centers
        rng.set_stream(seq.wrapping_add(1));

        let mut labels = vec![false; n];
        for i in index::sample(&mut rng, n, self.outlier_count(n)) {
            labels[i] = true;
        }
        let mut values = Vec::with_capacity(n * d);
        for &outlier in &labels {
            if outlier {
                for j in 0..d {
                    values.push(rng.random_range(self.box_lo[j]..self.box_hi[j]));
                }
            } else {
                let c = rng.random_range(0..self.spec.cluster_count);
                let center = &self.centers[c * d..(c + 1) * d];
                for &cj in center {
                    let z: f64 = rng.sample(StandardNormal);
                    values.push(cj + self.spec.cluster_std * z);
                }
            }
        }
        let block = PointBlock::new(d, values).expect("generated values are finite");
        (block, labels)
    }
}

/// First block of the stream described by `spec`.
pub fn generate_block(spec: &GeneratorSpec, n: usize) -> (PointBlock, Vec<bool>) {
    Generator::new(spec.clone()).block(0, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = GeneratorSpec::with_seed(7);
        let (a, la) = generate_block(&spec, 25);
        let (b, lb) = generate_block(&spec, 25);
        assert_eq!(la, lb);
        assert!(a
            .values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.len(), 25);
        assert_eq!(a.dim(), 32);
    }

    #[test]
    fn different_sequence_numbers_differ() {
        let g = Generator::new(GeneratorSpec::with_seed(7));
        assert_ne!(g.block(0, 25).0, g.block(1, 25).0);
        assert_ne!(
            g.block(0, 25).0,
            Generator::new(GeneratorSpec::with_seed(8)).block(0, 25).0
        );
    }

    #[test]
    fn outlier_count_is_exact() {
        let spec = GeneratorSpec::with_seed(3);
        let (block, labels) = generate_block(&spec, 10_000);
        assert_eq!(labels.iter().filter(|&&l| l).count(), 500);
        assert_eq!(block.to_payload().len(), 2_560_000);
        let g = Generator::new(spec);
        for n in [1, 7, 10, 19, 25, 99] {
            let (_, l) = g.block(5, n);
            let expected = (0.05 * n as f64).round() as usize;
            assert_eq!(l.iter().filter(|&&x| x).count(), expected, "n={n}");
        }
    }

    #[test]
    fn outliers_lie_in_inflated_box() {
        let g = Generator::new(GeneratorSpec::with_seed(1));
        let (b, labels) = g.block(0, 2000);
        for (row, &out) in b.rows().zip(&labels) {
            if out {
                for (j, v) in row.iter().enumerate() {
                    assert!(*v >= g.box_lo[j] && *v < g.box_hi[j]);
                }
            }
        }
        assert!(g.centers().iter().all(|c| c.abs() <= 10.0));
    }
}

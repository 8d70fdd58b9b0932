use rand::Rng;
use rand_distr::{Distribution, WeightedAliasIndex};

use crate::corpus::{EncodedTree, WordId, ROOT_ID};
use crate::error::{Error, Result};

/// Smoothed unigram noise distribution `P_n(w) ∝ count(w)^0.75`, ROOT
/// excluded, with an alias table for O(1) draws.
#[derive(Clone, Debug)]
pub struct NoiseDistribution {
    probs: Vec<f64>,
    alias: WeightedAliasIndex<f64>,
}

pub const NOISE_EXPONENT: f64 = 0.75;

impl NoiseDistribution {
    /// `counts[w]` is the training frequency of word id `w`.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let mut weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(NOISE_EXPONENT)).collect();
        if let Some(w) = weights.get_mut(ROOT_ID as usize) {
            *w = 0.0;
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Data("noise distribution needs at least one counted word".into()));
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let alias = WeightedAliasIndex::new(weights).map_err(|e| Error::Data(format!("noise table: {e}")))?;
        Ok(NoiseDistribution { probs, alias })
    }

    /// Counts taken from the non-ROOT positions of `trees`.
    pub fn from_trees(trees: &[EncodedTree], vocab_size: usize) -> Result<Self> {
        let mut counts = vec![0u64; vocab_size];
        for t in trees {
            for &w in &t.ids[1..] {
                counts[w as usize] += 1;
            }
        }
        NoiseDistribution::from_counts(&counts)
    }

    pub fn prob(&self, w: WordId) -> f64 {
        self.probs[w as usize]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WordId {
        self.alias.sample(rng) as WordId
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smoothed_and_root_free() {
        let n = NoiseDistribution::from_counts(&[100, 16, 1, 0]).unwrap();
        assert_eq!(n.prob(ROOT_ID), 0.0);
        assert_eq!(n.prob(3), 0.0);
        assert!((n.prob(1) / n.prob(2) - 8.0).abs() < 1e-12);
        assert!((n.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| matches!(n.sample(&mut rng), 1 | 2)));
    }

    #[test]
    fn empty_counts_rejected() {
        assert!(NoiseDistribution::from_counts(&[5, 0]).is_err());
    }
}

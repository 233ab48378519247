use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LabeledSample;
use crate::error::{Error, Result};

/// `P` identities with `K` images each per batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PkBatchSpec {
    pub p: usize,
    pub k: usize,
}

impl PkBatchSpec {
    pub fn new(p: usize, k: usize) -> Result<Self> {
        let spec = Self { p, k };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::InvalidConfig(format!(
                "P={} identities per batch leaves no negatives; need P >= 2",
                self.p
            )));
        }
        if self.k < 2 {
            return Err(Error::InvalidConfig(format!(
                "K={} images per identity leaves no positives; need K >= 2",
                self.k
            )));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }
}

/// Sample indices grouped by identity, identities in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityIndex {
    pub identities: Vec<u32>,
    pub members: Vec<Vec<usize>>,
}

impl IdentityIndex {
    pub fn new(samples: &[LabeledSample]) -> Self {
        let mut map = std::collections::BTreeMap::<u32, Vec<usize>>::new();
        for (i, s) in samples.iter().enumerate() {
            map.entry(s.identity).or_default().push(i);
        }
        let (identities, members) = map.into_iter().unzip();
        Self {
            identities,
            members,
        }
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }
}

/// Draws `P` distinct identities uniformly, then `K` of each identity's
/// samples: without replacement when it has at least `K`, with replacement
/// otherwise. Returns sample indices grouped by identity.
pub fn sample_pk<R: Rng + ?Sized>(
    index: &IdentityIndex,
    spec: &PkBatchSpec,
    rng: &mut R,
) -> Result<Vec<usize>> {
    spec.validate()?;
    if index.len() < spec.p {
        return Err(Error::Dataset(format!(
            "P={} identities per batch but the dataset has {}",
            spec.p,
            index.len()
        )));
    }
    let mut batch = Vec::with_capacity(spec.batch_size());
    for id in index::sample(rng, index.len(), spec.p) {
        let members = &index.members[id];
        if members.len() >= spec.k {
            batch.extend(index::sample(rng, members.len(), spec.k).into_iter().map(|j| members[j]));
        } else {
            batch.extend((0..spec.k).map(|_| members[rng.random_range(0..members.len())]));
        }
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset(per_identity: &[usize]) -> Vec<LabeledSample> {
        per_identity
            .iter()
            .enumerate()
            .flat_map(|(id, &n)| (0..n).map(move |_| LabeledSample::new(RgbImage::new(1, 1), id as u32 + 1, 1)))
            .collect()
    }

    #[test]
    fn paper_batch_shape() {
        let samples = dataset(&[6; 20]);
        let index = IdentityIndex::new(&samples);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = PkBatchSpec::new(16, 4).unwrap();
        let batch = sample_pk(&index, &spec, &mut rng).unwrap();
        assert_eq!(batch.len(), 64);
        let mut ids: Vec<u32> = batch.iter().map(|&i| samples[i].identity).collect();
        for chunk in ids.chunks(4) {
            assert!(chunk.iter().all(|&x| x == chunk[0]));
        }
        ids.dedup();
        assert_eq!(ids.len(), 16);
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 16);
    }

    #[test]
    fn small_identity_sampled_with_replacement() {
        let samples = dataset(&[2, 2]);
        let index = IdentityIndex::new(&samples);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = sample_pk(&index, &PkBatchSpec::new(2, 4).unwrap(), &mut rng).unwrap();
        assert_eq!(batch.len(), 8);
        for chunk in batch.chunks(4) {
            let id = samples[chunk[0]].identity;
            assert!(chunk.iter().all(|&i| samples[i].identity == id));
        }
    }

    #[test]
    fn too_few_identities() {
        let samples = dataset(&[4, 4, 4]);
        let index = IdentityIndex::new(&samples);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_pk(&index, &PkBatchSpec { p: 4, k: 2 }, &mut rng).is_err());
        assert!(PkBatchSpec::new(4, 1).is_err());
    }

    #[test]
    fn identity_draws_are_uniform() {
        // 10 identities, 3 per batch, 10k batches; chi-square with 9 dof.
        let samples = dataset(&[5, 3, 8, 2, 4, 6, 7, 2, 9, 4]);
        let index = IdentityIndex::new(&samples);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let spec = PkBatchSpec::new(3, 2).unwrap();
        let mut counts = [0usize; 10];
        for _ in 0..10_000 {
            let batch = sample_pk(&index, &spec, &mut rng).unwrap();
            for chunk in batch.chunks(2) {
                counts[(samples[chunk[0]].identity - 1) as usize] += 1;
            }
        }
        let expected = 3.0 * 10_000.0 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 99.9th percentile of chi-square(9) is 27.88.
        assert!(chi2 < 27.88, "chi2 = {chi2}, counts {counts:?}");
    }
}

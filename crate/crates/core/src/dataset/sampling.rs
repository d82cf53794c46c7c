use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::UserSequence;
use crate::error::{GrapeError, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairKind {
    /// Interacted item versus a never-interacted one.
    Normal { pos: usize, neg: usize },
    /// Two distinct interacted items.
    GreenPositive { a: usize, b: usize },
    /// Two distinct never-interacted items.
    GreenNegative { a: usize, b: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainingPair {
    pub user: usize,
    pub kind: PairKind,
}

/// Draws training pairs. "Interacted" means the user's training prefix, so
/// validation and test targets can show up as negatives, exactly as they
/// would for any unseen item.
pub struct PairSampler {
    rng: ChaCha8Rng,
    items: usize,
    positives: Vec<Vec<usize>>,
    seen: Vec<HashSet<usize>>,
    green_pairs: usize,
}

impl PairSampler {
    /// `green_pairs` same-side pairs are drawn per user and batch, alternating
    /// positive side then negative side.
    pub fn new(sequences: &[UserSequence], items: usize, green_pairs: usize, seed: u64) -> Self {
        let mut positives = Vec::with_capacity(sequences.len());
        let mut seen = Vec::with_capacity(sequences.len());
        for s in sequences {
            let set: HashSet<usize> = s.train_items().iter().copied().collect();
            let mut uniq: Vec<usize> = set.iter().copied().collect();
            uniq.sort_unstable();
            positives.push(uniq);
            seen.push(set);
        }
        PairSampler {
            rng: stream_rng(seed, Stream::Sampling),
            items,
            positives,
            seen,
            green_pairs,
        }
    }

    pub fn users(&self) -> usize {
        self.positives.len()
    }

    fn negative(&mut self, user: usize) -> Option<usize> {
        if self.seen[user].len() >= self.items {
            return None;
        }
        loop {
            let c = self.rng.random_range(1..=self.items);
            if !self.seen[user].contains(&c) {
                return Some(c);
            }
        }
    }

    fn distinct_negatives(&mut self, user: usize) -> Option<(usize, usize)> {
        if self.seen[user].len() + 2 > self.items {
            return None;
        }
        let a = self.negative(user)?;
        loop {
            let b = self.negative(user)?;
            if b != a {
                return Some((a, b));
            }
        }
    }

    fn distinct_positives(&mut self, user: usize) -> Option<(usize, usize)> {
        let pos = &self.positives[user];
        if pos.len() < 2 {
            return None;
        }
        let idx = index::sample(&mut self.rng, pos.len(), 2);
        Some((pos[idx.index(0)], pos[idx.index(1)]))
    }

    /// Samples `batch_size` distinct users and their pairs.
    pub fn sample_batch(&mut self, batch_size: usize) -> Result<Vec<TrainingPair>> {
        let n = self.users();
        if batch_size == 0 || batch_size > n {
            return Err(GrapeError::Config(format!(
                "batch size {batch_size} must be in 1..={n}"
            )));
        }
        let mut users: Vec<usize> = index::sample(&mut self.rng, n, batch_size).into_vec();
        users.sort_unstable();
        let mut out = Vec::with_capacity(batch_size * (1 + self.green_pairs));
        for user in users {
            let pos = {
                let p = &self.positives[user];
                p[self.rng.random_range(0..p.len())]
            };
            if let Some(neg) = self.negative(user) {
                out.push(TrainingPair {
                    user,
                    kind: PairKind::Normal { pos, neg },
                });
            }
            for k in 0..self.green_pairs {
                let kind = if k % 2 == 0 {
                    self.distinct_positives(user)
                        .map(|(a, b)| PairKind::GreenPositive { a, b })
                } else {
                    self.distinct_negatives(user)
                        .map(|(a, b)| PairKind::GreenNegative { a, b })
                };
                if let Some(kind) = kind {
                    out.push(TrainingPair { user, kind });
                }
            }
        }
        Ok(out)
    }

    pub fn is_positive(&self, user: usize, item: usize) -> bool {
        self.seen[user].contains(&item)
    }
}

/// One batch from a fresh sampler seeded with `seed`.
pub fn sample_batch(sequences: &[UserSequence], items: usize, batch_size: usize, seed: u64) -> Result<Vec<TrainingPair>> {
    PairSampler::new(sequences, items, 2, seed).sample_batch(batch_size)
}

//! Chronological and random train/test split protocols.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{ArticleId, Corpus, CorpusError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Random,
    Chronological,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub mode: SplitMode,
    /// Seed is only meaningful for [`SplitMode::Random`].
    pub seed: Option<u64>,
    pub train: Vec<ArticleId>,
    pub validation: Vec<ArticleId>,
    pub test: Vec<ArticleId>,
}

impl SplitResult {
    pub fn save_json(&self, path: &Path) -> Result<(), CorpusError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Pairwise disjoint and jointly exhaustive over the given ids.
    pub fn is_partition_of(&self, ids: &[ArticleId]) -> bool {
        let mut union = BTreeSet::new();
        let total = self.train.len() + self.validation.len() + self.test.len();
        for id in self.train.iter().chain(&self.validation).chain(&self.test) {
            union.insert(id.clone());
        }
        union.len() == total && union == ids.iter().cloned().collect()
    }
}

/// Split by publication timestamp: the chronologically latest ⌈test_ratio·N⌉
/// articles form the test set, and the latest ⌊val_frac·remainder⌋ of the
/// rest form the validation set. Ties on equal timestamps break by id.
pub fn chronological_split(
    corpus: &Corpus,
    test_ratio: f64,
    val_frac: f64,
) -> Result<SplitResult, CorpusError> {
    let mut order: Vec<(&ArticleId, chrono::DateTime<chrono::Utc>)> = corpus
        .articles
        .iter()
        .map(|a| (&a.id, a.timestamp))
        .collect();
    order.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));

    let n = order.len();
    let test_count = ((test_ratio * n as f64).ceil() as usize).min(n);
    let pool = n - test_count;
    let val_count = (val_frac * pool as f64).floor() as usize;

    let ids: Vec<ArticleId> = order.into_iter().map(|(id, _)| id.clone()).collect();
    let train = ids[..pool - val_count].to_vec();
    let validation = ids[pool - val_count..pool].to_vec();
    let test = ids[pool..].to_vec();

    Ok(SplitResult {
        mode: SplitMode::Chronological,
        seed: None,
        train,
        validation,
        test,
    })
}

/// Seeded uniform shuffle with the first ⌊train_ratio·N⌋ articles as the
/// training set. No validation set in this protocol.
pub fn random_split(corpus: &Corpus, train_ratio: f64, seed: u64) -> SplitResult {
    let mut ids = corpus.ids();
    ids.sort();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let train_count = (train_ratio * ids.len() as f64).floor() as usize;
    SplitResult {
        mode: SplitMode::Random,
        seed: Some(seed),
        train: ids[..train_count].to_vec(),
        validation: Vec::new(),
        test: ids[train_count..].to_vec(),
    }
}

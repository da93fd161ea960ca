//! Tokenization and TF-IDF featurization.
//!
//! Term weights are raw counts times the smoothed inverse document frequency
//! `ln((1 + N) / (1 + df)) + 1`, and each document vector is L2-normalized.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dims, Error, Result};
use crate::linalg::{norm2_slice, Vector};

pub const DEFAULT_MAX_FEATURES: usize = 5000;

/// Lowercases and splits on every maximal run of non-alphanumeric
/// characters. Digits are kept.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(core::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Token ↔ column map with document frequencies. Columns are numbered in
/// lexicographic token order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
    document_frequency: Vec<usize>,
    n_documents: usize,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its stored parts. `tokens` must be strictly
    /// increasing.
    pub fn from_parts(tokens: Vec<String>, document_frequency: Vec<usize>, n_documents: usize) -> Result<Self> {
        check_dims(
            "vocabulary document frequencies",
            tokens.len(),
            document_frequency.len(),
        )?;
        if tokens.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("vocabulary tokens are not strictly increasing".into()));
        }
        if let Some(&df) = document_frequency.iter().find(|&&df| df > n_documents) {
            return Err(Error::Config(alloc::format!(
                "document frequency {df} exceeds corpus size {n_documents}"
            )));
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocabulary {
            tokens,
            index,
            document_frequency,
            n_documents,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn document_frequency(&self) -> &[usize] {
        &self.document_frequency
    }

    pub fn n_documents(&self) -> usize {
        self.n_documents
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    vocab: Vocabulary,
    idf: Vector,
    max_features: Option<usize>,
}

impl TfidfModel {
    /// Fits the vocabulary and idf weights. With `max_features`, only the
    /// tokens with the highest total count are kept (ties go to the
    /// lexicographically smaller token).
    pub fn fit<S: AsRef<str>>(corpus: &[S], max_features: Option<usize>) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Config("cannot fit TF-IDF on an empty corpus".into()));
        }
        if max_features == Some(0) {
            return Err(Error::Config("max_features must be positive".into()));
        }
        // token -> (total count, document frequency)
        let mut stats: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for doc in corpus {
            let mut tokens = tokenize(doc.as_ref());
            for t in &tokens {
                stats.entry(t.clone()).or_default().0 += 1;
            }
            tokens.sort_unstable();
            tokens.dedup();
            for t in tokens {
                stats.get_mut(&t).expect("counted above").1 += 1;
            }
        }

        let mut kept: Vec<(String, usize, usize)> = stats.into_iter().map(|(t, (c, df))| (t, c, df)).collect();
        if let Some(cap) = max_features {
            if kept.len() > cap {
                // stable sort keeps lexicographic order among equal counts
                kept.sort_by_key(|&(_, count, _)| core::cmp::Reverse(count));
                kept.truncate(cap);
                kept.sort_by(|a, b| a.0.cmp(&b.0));
            }
        }
        let (tokens, df): (Vec<String>, Vec<usize>) = kept.into_iter().map(|(t, _, df)| (t, df)).unzip();
        let vocab = Vocabulary::from_parts(tokens, df, corpus.len())?;
        Ok(Self::from_vocabulary(vocab, max_features))
    }

    pub fn from_vocabulary(vocab: Vocabulary, max_features: Option<usize>) -> Self {
        let n = vocab.n_documents as f64;
        let idf = vocab
            .document_frequency
            .iter()
            .map(|&df| libm::log((1.0 + n) / (1.0 + df as f64)) + 1.0)
            .collect();
        TfidfModel {
            vocab,
            idf: Vector::from_vec(idf),
            max_features,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn idf(&self) -> &Vector {
        &self.idf
    }

    pub fn max_features(&self) -> Option<usize> {
        self.max_features
    }

    /// Feature dimension `|V|`.
    pub fn dim(&self) -> usize {
        self.vocab.len()
    }

    /// L2-normalized TF-IDF vector. Text with no in-vocabulary token maps to
    /// the zero vector.
    pub fn transform(&self, text: &str) -> Vector {
        let mut x = vec![0.0; self.dim()];
        for t in tokenize(text) {
            if let Some(i) = self.vocab.index_of(&t) {
                x[i] += 1.0;
            }
        }
        for (v, idf) in x.iter_mut().zip(self.idf.iter()) {
            *v *= idf;
        }
        let norm = norm2_slice(&x);
        if norm > 0.0 {
            x.iter_mut().for_each(|v| *v /= norm);
        }
        Vector::from_vec(x)
    }

    pub fn transform_all<S: AsRef<str>>(&self, docs: &[S]) -> Vec<Vector> {
        docs.iter().map(|d| self.transform(d.as_ref())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn toks(text: &str) -> Vec<String> {
        tokenize(text)
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(toks("Chest Pain, severe!"), ["chest", "pain", "severe"]);
        assert!(toks("").is_empty());
        assert_eq!(toks("walk-in 17"), ["walk", "in", "17"]);
        assert_eq!(toks("  --Ünïcode…ÄBC  "), ["ünïcode", "äbc"]);
    }

    #[test]
    fn fit_examples() {
        let m = TfidfModel::fit(&["a b", "a"], None).unwrap();
        assert_eq!(m.vocab().tokens(), ["a", "b"]);
        assert_eq!(m.vocab().document_frequency(), [2, 1]);
        assert_eq!(m.idf()[0], 1.0);
        assert!((m.idf()[1] - 1.405465).abs() < 1e-6);

        let m = TfidfModel::fit(&["x"], None).unwrap();
        assert_eq!(m.idf()[0], 1.0);

        let m = TfidfModel::fit(&["a b", "a"], Some(1)).unwrap();
        assert_eq!(m.vocab().tokens(), ["a"]);

        let empty: [&str; 0] = [];
        assert!(matches!(TfidfModel::fit(&empty, None), Err(Error::Config(_))));
    }

    #[test]
    fn frequency_cap_breaks_ties_lexicographically() {
        let m = TfidfModel::fit(&["d c b", "b c", "a"], Some(2)).unwrap();
        assert_eq!(m.vocab().tokens(), ["b", "c"]);
        let m = TfidfModel::fit(&["z y x"], Some(2)).unwrap();
        assert_eq!(m.vocab().tokens(), ["x", "y"]);
    }

    #[test]
    fn transform_examples() {
        let m = TfidfModel::fit(&["a b", "a"], None).unwrap();
        let x = m.transform("a b");
        assert!((x[0] - 0.579739).abs() < 1e-5);
        assert!((x[1] - 0.814802).abs() < 1e-5);
        assert_eq!(m.transform("a").as_slice(), [1.0, 0.0]);
        assert_eq!(m.transform("zzz").as_slice(), [0.0, 0.0]);
        assert_eq!(m.transform("").as_slice(), [0.0, 0.0]);
    }

    #[test]
    fn vocabulary_round_trips_through_parts() {
        let m = TfidfModel::fit(&["the cat sat", "the dog"], None).unwrap();
        let v = m.vocab();
        let rebuilt = Vocabulary::from_parts(v.tokens().to_vec(), v.document_frequency().to_vec(), v.n_documents());
        let rebuilt = TfidfModel::from_vocabulary(rebuilt.unwrap(), m.max_features());
        assert_eq!(rebuilt, m);

        let bad = Vocabulary::from_parts(vec!["b".to_string(), "a".to_string()], vec![1, 1], 2);
        assert!(bad.is_err());
        let bad = Vocabulary::from_parts(vec!["a".to_string()], vec![3], 2);
        assert!(bad.is_err());
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["alpha", "beta", "gamma", "delta", "eps", "17", "walk-in"]).prop_map(String::from)
    }

    fn doc() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(word(), 0..8)
    }

    proptest! {
        #[test]
        fn transformed_norm_is_zero_or_one(corpus in prop::collection::vec(doc(), 1..6), probe in doc()) {
            let corpus: Vec<String> = corpus.iter().map(|d| d.join(" ")).collect();
            let m = TfidfModel::fit(&corpus, None).unwrap();
            for text in corpus.iter().chain(core::iter::once(&probe.join(" "))) {
                let n = norm2_slice(m.transform(text).as_slice());
                prop_assert!(n.abs() < 1e-12 || (n - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn transform_ignores_token_order(corpus in prop::collection::vec(doc(), 1..6), mut probe in doc()) {
            let corpus: Vec<String> = corpus.iter().map(|d| d.join(" ")).collect();
            let m = TfidfModel::fit(&corpus, None).unwrap();
            let forward = m.transform(&probe.join(" "));
            probe.reverse();
            prop_assert_eq!(forward, m.transform(&probe.join(" ")));
        }
    }
}

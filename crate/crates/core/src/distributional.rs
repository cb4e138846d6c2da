//! Whole-bag document metrics: cosine of summed term vectors (TF and
//! TF-IDF) and inverse KL divergence of unigram distributions.

use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::{Bag, Sentence};
use crate::error::{Error, Result};
use crate::sim::{build_idf_over, IdfTable};

/// Additive guard against division by zero in inverse scores.
pub const INVERSE_EPSILON: f64 = 1e-6;

/// Sparse non-negative term weights with a cached Euclidean norm.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TermVector {
    weights: BTreeMap<String, f64>,
    norm: f64,
}

impl TermVector {
    pub fn from_weights(weights: BTreeMap<String, f64>) -> Self {
        let weights: BTreeMap<String, f64> = weights.into_iter().filter(|(_, w)| *w != 0.0).collect();
        let norm = weights.values().map(|w| w * w).sum::<f64>().sqrt();
        TermVector { weights, norm }
    }

    /// Token counts of one sentence.
    pub fn of_sentence(s: &Sentence) -> Self {
        let mut weights = BTreeMap::new();
        for t in &s.tokens {
            *weights.entry(t.clone()).or_insert(0.0) += 1.0;
        }
        TermVector::from_weights(weights)
    }

    pub fn weights(&self) -> &BTreeMap<String, f64> {
        &self.weights
    }

    pub fn get(&self, token: &str) -> f64 {
        self.weights.get(token).copied().unwrap_or(0.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_zero(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dot(&self, other: &TermVector) -> f64 {
        let (small, large) = if self.weights.len() <= other.weights.len() {
            (self, other)
        } else {
            (other, self)
        };
        small
            .weights
            .iter()
            .map(|(t, w)| w * large.get(t))
            .sum()
    }

    /// Cosine similarity; errors when either vector is zero.
    pub fn cosine(&self, other: &TermVector) -> Result<f64> {
        if self.is_zero() || other.is_zero() {
            return Err(Error::DegenerateVector("term vector has no nonzero weight"));
        }
        Ok((self.dot(other) / (self.norm * other.norm)).clamp(0.0, 1.0))
    }

    pub fn add(&self, other: &TermVector) -> TermVector {
        let mut weights = self.weights.clone();
        for (t, w) in &other.weights {
            *weights.entry(t.clone()).or_insert(0.0) += w;
        }
        TermVector::from_weights(weights)
    }
}

/// Summed token counts over every occurrence of the bag.
pub fn tf_vector(bag: &Bag) -> TermVector {
    let mut weights = BTreeMap::new();
    for s in &bag.items {
        for t in &s.tokens {
            *weights.entry(t.clone()).or_insert(0.0) += 1.0;
        }
    }
    TermVector::from_weights(weights)
}

/// TF vector reweighted by unigram idf.
pub fn tfidf_vector(bag: &Bag, idf: &IdfTable) -> TermVector {
    let tf = tf_vector(bag);
    let weights = tf
        .weights
        .into_iter()
        .map(|(t, w)| {
            let i = idf.idf(std::slice::from_ref(&t));
            (t, w * i)
        })
        .collect();
    TermVector::from_weights(weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Tf,
    TfIdf,
}

/// Cosine of the two bags' term vectors. For TF-IDF the idf table is built
/// over the distinct sentences of both bags.
pub fn cos_bags(g: &Bag, r: &Bag, weighting: Weighting) -> Result<f64> {
    let (gv, rv) = match weighting {
        Weighting::Tf => (tf_vector(g), tf_vector(r)),
        Weighting::TfIdf => {
            let idf = build_idf_over(&[g, r], 1);
            (tfidf_vector(g, &idf), tfidf_vector(r, &idf))
        }
    };
    gv.cosine(&rv)
}

/// Probability distribution over a fixed token vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct UnigramDist {
    probs: BTreeMap<String, f64>,
}

impl UnigramDist {
    /// Wraps explicit probabilities; they must be positive and sum to 1.
    pub fn from_probs(probs: BTreeMap<String, f64>) -> Result<Self> {
        let total: f64 = probs.values().sum();
        if probs.values().any(|p| !(p.is_finite() && *p > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Usage(format!(
                "unigram probabilities must be positive and sum to 1 (sum {total})"
            )));
        }
        Ok(UnigramDist { probs })
    }

    pub fn prob(&self, token: &str) -> f64 {
        self.probs.get(token).copied().unwrap_or(0.0)
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.probs.keys().map(String::as_str)
    }

    pub fn probs(&self) -> &BTreeMap<String, f64> {
        &self.probs
    }
}

/// Add-one smoothed unigram distribution of `bag` over `vocab`.
/// Tokens of the bag outside `vocab` are ignored.
pub fn unigram_dist(bag: &Bag, vocab: &BTreeSet<String>) -> UnigramDist {
    let mut counts: BTreeMap<String, f64> = vocab.iter().map(|t| (t.clone(), 1.0)).collect();
    let mut total = vocab.len() as f64;
    for s in &bag.items {
        for t in &s.tokens {
            if let Some(c) = counts.get_mut(t) {
                *c += 1.0;
                total += 1.0;
            }
        }
    }
    let probs = counts.into_iter().map(|(t, c)| (t, c / total)).collect();
    UnigramDist { probs }
}

/// `D_KL(p || q)` in nats over the vocabulary of `p`.
pub fn kl_divergence(p: &UnigramDist, q: &UnigramDist) -> f64 {
    p.probs
        .iter()
        .map(|(t, &pt)| pt * (pt / q.prob(t)).ln())
        .sum::<f64>()
        .max(0.0)
}

/// `1 / (D_KL(G || R) + ε)` over add-one smoothed unigram distributions on
/// the union vocabulary.
pub fn inv_kl(g: &Bag, r: &Bag) -> Result<f64> {
    if g.is_empty() || r.is_empty() {
        return Err(Error::EmptyBag);
    }
    let vocab: BTreeSet<String> = g
        .vocabulary()
        .into_iter()
        .chain(r.vocabulary())
        .map(str::to_string)
        .collect();
    let p = unigram_dist(g, &vocab);
    let q = unigram_dist(r, &vocab);
    Ok(1.0 / (kl_divergence(&p, &q) + INVERSE_EPSILON))
}

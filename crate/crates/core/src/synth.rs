//! Synthetic shopping-query corpora and random embedding tables, for tests,
//! benchmarks and desk-scale validation runs.
//!
//! Each context is one product (brand + head noun) queried with one intent.
//! Texts are `carrier phrase + itemname`, where the itemname optionally
//! carries attributes before the brand. Occurrence counts within a bag
//! follow a Zipf law over its distinct texts.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::corpus::{Bag, Corpus, EmbeddingTable, Sentence, Span};
use crate::rng::{self, derive_index, derive_seed};

const INTENTS: [(&str, &[&str]); 5] = [
    ("buy", &["buy", "i want to buy", "order", "purchase", "get me", "add to cart"]),
    ("search", &["search for", "find", "look for", "show me", "where can i find", "browse"]),
    ("compare", &["compare", "which is better", "differences between", "compare prices of", "versus"]),
    ("review", &["reviews of", "is it worth buying", "ratings for", "opinions on", "how good is"]),
    ("price", &["price of", "how much is", "cheapest", "deals on", "discount on", "cost of"]),
];

const BRANDS: [&str; 12] = [
    "nike", "apple", "sony", "samsung", "adidas", "dell", "canon", "bose", "garmin", "lenovo", "puma", "philips",
];

const HEADS: [&str; 12] = [
    "shoes", "phone", "laptop", "headphones", "jacket", "watch", "camera", "backpack", "tablet", "speaker", "charger",
    "monitor",
];

const ATTRIBUTES: [&str; 16] = [
    "running",
    "wireless",
    "red",
    "blue",
    "waterproof",
    "leather",
    "pro",
    "mini",
    "black",
    "lightweight",
    "gaming",
    "noise cancelling",
    "refurbished",
    "large",
    "kids",
    "4k",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub contexts: usize,
    /// Upper bound on occurrences per bag.
    pub max_bag: usize,
    /// Range of distinct texts per bag (inclusive).
    pub min_distinct: usize,
    pub max_distinct: usize,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            contexts: 200,
            max_bag: 50,
            min_distinct: 3,
            max_distinct: 14,
            zipf_exponent: 1.1,
            seed: 7,
        }
    }
}

fn annotated(carrier: &str, attrs: &[&str], brand: &str, head: &str, intent: &str) -> Sentence {
    let mut item: Vec<&str> = attrs.to_vec();
    item.extend([brand, head]);
    let raw = format!("{carrier} {}", item.join(" "));
    let s = Sentence::new(&raw).expect("template text is non-empty");
    let c_len = Sentence::new(carrier).expect("carrier is non-empty").len();
    let n = s.len();
    s.with_intent(intent)
        .with_attributes(attrs.iter().copied())
        .with_spans(Some(Span::new(0, c_len)), Some(Span::new(c_len, n)))
        .expect("template spans are in bounds")
}

/// Zipf occurrence counts for `distinct` texts summing to at most `cap`.
fn zipf_counts(distinct: usize, total: usize, exponent: f64) -> Vec<usize> {
    let w: Vec<f64> = (1..=distinct).map(|r| 1.0 / (r as f64).powf(exponent)).collect();
    let z: f64 = w.iter().sum();
    let mut counts: Vec<usize> = w.iter().map(|x| ((x / z) * total as f64).floor().max(1.0) as usize).collect();
    let mut sum: usize = counts.iter().sum();
    // hand the rounding remainder to the head
    if sum < total {
        counts[0] += total - sum;
        sum = total;
    }
    while sum > total && counts[0] > 1 {
        counts[0] -= 1;
        sum -= 1;
    }
    counts
}

/// Generates a corpus of `cfg.contexts` annotated bags.
pub fn synth_corpus(cfg: &SynthConfig) -> Corpus {
    let mut contexts = BTreeMap::new();
    for c in 0..cfg.contexts {
        let mut r = rng::rng(derive_index(derive_seed(cfg.seed, "context"), c as u64));
        let (intent, carriers) = INTENTS[c % INTENTS.len()];
        let brand = BRANDS[(c / INTENTS.len()) % BRANDS.len()];
        let head = HEADS[(c / (INTENTS.len() * BRANDS.len()) + c) % HEADS.len()];

        let mut pool: Vec<Sentence> = Vec::new();
        for carrier in carriers {
            pool.push(annotated(carrier, &[], brand, head, intent));
            for a in ATTRIBUTES {
                pool.push(annotated(carrier, &[a], brand, head, intent));
            }
        }
        pool.shuffle(&mut r);
        pool.dedup_by(|a, b| a.raw == b.raw);

        let distinct = r.gen_range(cfg.min_distinct..=cfg.max_distinct).min(cfg.max_bag);
        let total = r.gen_range(distinct..=cfg.max_bag.max(distinct));
        let counts = zipf_counts(distinct, total, cfg.zipf_exponent);
        let items: Vec<Sentence> = pool
            .iter()
            .zip(&counts)
            .flat_map(|(s, &k)| std::iter::repeat_n(s.clone(), k))
            .collect();
        let id = format!("ctx{c:04}");
        contexts.insert(id.clone(), Bag::new(id, items).expect("bag is non-empty"));
    }
    Corpus {
        contexts,
        distractors: Vec::new(),
    }
}

/// Random Gaussian vectors for every distinct sentence id of `corpus`, plus
/// any `extra` sentences. Each vector depends only on `(seed, id)`.
pub fn random_embeddings<'a>(
    corpus: &'a Corpus,
    extra: impl IntoIterator<Item = &'a Sentence>,
    dim: usize,
    seed: u64,
) -> EmbeddingTable {
    let mut table = EmbeddingTable::new(dim);
    table.model = Some(format!("random-gaussian-{dim}"));
    let ids = corpus
        .contexts
        .values()
        .flat_map(|b| b.items.iter())
        .chain(corpus.distractors.iter())
        .chain(extra)
        .map(|s| s.id.clone());
    for id in ids {
        if table.vectors.contains_key(&id) {
            continue;
        }
        table
            .insert(id.clone(), gaussian_vector(dim, derive_seed(seed, &id)))
            .expect("generated vectors are finite and uniform");
    }
    table.duplicate_ids = 0;
    table
}

fn gaussian_vector(dim: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::rng(seed);
    (0..dim)
        .map(|_| {
            // Box-Muller
            let u1: f64 = r.gen_range(f64::EPSILON..1.0);
            let u2: f64 = r.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

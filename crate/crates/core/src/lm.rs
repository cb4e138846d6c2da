//! Interpolated Kneser-Ney 4-gram language model, trained on one bag and
//! used to score another by perplexity.
//!
//! Sentences are padded with three begin markers and one end marker. The
//! highest order uses raw counts, lower orders use continuation counts, and
//! the unigram level interpolates with a uniform distribution over the
//! training vocabulary plus `<unk>`, which is where unseen tokens get their
//! probability mass.

use std::collections::HashMap;

use crate::corpus::Bag;
use crate::error::{Error, Result};

pub const ORDER: usize = 4;
pub const DEFAULT_DISCOUNT: f64 = 0.75;
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

const BOS_ID: u32 = 0;
const EOS_ID: u32 = 1;
const UNK_ID: u32 = 2;

/// Per-context totals: sum of (continuation) counts and number of distinct
/// continuations.
#[derive(Debug, Clone, Copy, Default)]
struct ContextStats {
    total: f64,
    types: f64,
}

#[derive(Debug, Clone, Default)]
struct OrderTable {
    /// Raw counts at the top order, continuation counts below it.
    counts: HashMap<Vec<u32>, f64>,
    contexts: HashMap<Vec<u32>, ContextStats>,
}

#[derive(Debug, Clone)]
pub struct NGramLM {
    discount: f64,
    ids: HashMap<String, u32>,
    names: Vec<String>,
    /// `tables[k - 1]` holds k-grams.
    tables: Vec<OrderTable>,
}

fn pad(ids: impl Iterator<Item = u32>) -> Vec<u32> {
    let mut out = vec![BOS_ID; ORDER - 1];
    out.extend(ids);
    out.push(EOS_ID);
    out
}

/// Trains an interpolated Kneser-Ney model on every occurrence of `g`.
pub fn train_lm(g: &Bag, discount: f64) -> Result<NGramLM> {
    if g.is_empty() {
        return Err(Error::EmptyBag);
    }
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::Usage(format!("discount must lie in (0, 1), got {discount}")));
    }
    let mut ids: HashMap<String, u32> = HashMap::new();
    let mut names = vec![BOS.to_string(), EOS.to_string(), UNK.to_string()];
    for (i, n) in names.iter().enumerate() {
        ids.insert(n.clone(), i as u32);
    }

    let mut raw: Vec<HashMap<Vec<u32>, f64>> = vec![HashMap::new(); ORDER];
    for s in &g.items {
        let seq = pad(s.tokens.iter().map(|t| {
            let next = names.len() as u32;
            *ids.entry(t.clone()).or_insert_with(|| {
                names.push(t.clone());
                next
            })
        }));
        // Only n-grams that end on a predicted position are counted.
        for end in (ORDER - 1)..seq.len() {
            for k in 1..=ORDER {
                *raw[k - 1].entry(seq[end + 1 - k..=end].to_vec()).or_insert(0.0) += 1.0;
            }
        }
    }

    let mut tables = vec![OrderTable::default(); ORDER];
    for k in 1..ORDER {
        let mut cont: HashMap<Vec<u32>, f64> = HashMap::new();
        for gram in raw[k].keys() {
            *cont.entry(gram[1..].to_vec()).or_insert(0.0) += 1.0;
        }
        tables[k - 1].counts = cont;
    }
    tables[ORDER - 1].counts = std::mem::take(&mut raw[ORDER - 1]);
    for table in &mut tables {
        let mut contexts: HashMap<Vec<u32>, ContextStats> = HashMap::new();
        for (gram, c) in &table.counts {
            let st = contexts.entry(gram[..gram.len() - 1].to_vec()).or_default();
            st.total += c;
            st.types += 1.0;
        }
        table.contexts = contexts;
    }

    Ok(NGramLM {
        discount,
        ids,
        names,
        tables,
    })
}

impl NGramLM {
    pub fn discount(&self) -> f64 {
        self.discount
    }

    fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Outcome vocabulary: every predicted training token, `</s>` and `<unk>`.
    pub fn vocabulary(&self) -> Vec<&str> {
        self.names
            .iter()
            .skip(1)
            .map(String::as_str)
            .collect()
    }

    fn uniform(&self) -> f64 {
        // names minus the begin marker
        1.0 / (self.names.len() - 1) as f64
    }

    /// `p(word | history)` using the k-gram level with `history.len() == k - 1`.
    fn prob_ids(&self, history: &[u32], word: u32) -> f64 {
        let k = history.len() + 1;
        let lower = if k == 1 {
            self.uniform()
        } else {
            self.prob_ids(&history[1..], word)
        };
        let table = &self.tables[k - 1];
        let Some(stats) = table.contexts.get(history) else {
            return lower;
        };
        let mut gram = history.to_vec();
        gram.push(word);
        let c = table.counts.get(&gram).copied().unwrap_or(0.0);
        ((c - self.discount).max(0.0) + self.discount * stats.types * lower) / stats.total
    }

    /// `p(word | context)`; only the last three context tokens are used and
    /// shorter contexts are left-padded with `<s>`.
    pub fn prob(&self, context: &[&str], word: &str) -> f64 {
        let mut hist = vec![BOS_ID; ORDER - 1];
        let tail = &context[context.len().saturating_sub(ORDER - 1)..];
        let offset = ORDER - 1 - tail.len();
        for (i, t) in tail.iter().enumerate() {
            hist[offset + i] = if *t == BOS { BOS_ID } else { self.id(t) };
        }
        self.prob_ids(&hist, self.id(word))
    }

    /// Every history observed at the given order (`order - 1` tokens each).
    pub fn observed_contexts(&self, order: usize) -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = self.tables[order - 1]
            .contexts
            .keys()
            .map(|h| h.iter().map(|&i| self.names[i as usize].clone()).collect())
            .collect();
        out.sort();
        out
    }

    /// Sum of natural-log probabilities and number of scored tokens.
    pub fn log_likelihood(&self, bag: &Bag) -> (f64, usize) {
        let mut total = 0.0;
        let mut scored = 0;
        for s in &bag.items {
            let seq = pad(s.tokens.iter().map(|t| self.id(t)));
            for end in (ORDER - 1)..seq.len() {
                total += self.prob_ids(&seq[end + 1 - ORDER..end], seq[end]).ln();
                scored += 1;
            }
        }
        (total, scored)
    }
}

/// Per-token perplexity of `r` (end markers included).
pub fn perplexity(lm: &NGramLM, r: &Bag) -> Result<f64> {
    if r.is_empty() {
        return Err(Error::EmptyBag);
    }
    let (ll, n) = lm.log_likelihood(r);
    Ok((-ll / n as f64).exp().max(1.0))
}

/// Inverse perplexity of `r` under a model trained on `g`.
pub fn inv_pp(g: &Bag, r: &Bag, discount: f64) -> Result<f64> {
    let lm = train_lm(g, discount)?;
    Ok(1.0 / perplexity(&lm, r)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bag(texts: &[&str]) -> Bag {
        Bag::from_texts("c", texts).unwrap()
    }

    #[test]
    fn single_observation_dominates() {
        let lm = train_lm(&bag(&["a b c"]), DEFAULT_DISCOUNT).unwrap();
        let ctx = [BOS, BOS, "a"];
        let pb = lm.prob(&ctx, "b");
        for w in lm.vocabulary() {
            if w != "b" {
                assert!(pb > lm.prob(&ctx, w), "{w}");
            }
        }
    }

    #[test]
    fn contexts_normalize() {
        let lm = train_lm(&bag(&["a b c", "a c", "b b a d", "a b c"]), DEFAULT_DISCOUNT).unwrap();
        let vocab = lm.vocabulary();
        for order in 1..=ORDER {
            for ctx in lm.observed_contexts(order) {
                let ctx: Vec<&str> = ctx.iter().map(String::as_str).collect();
                let total: f64 = vocab.iter().map(|w| lm.prob(&ctx, w)).sum();
                assert!((total - 1.0).abs() < 1e-9, "{ctx:?}: {total}");
            }
        }
        // unseen history backs off all the way and still normalizes
        let total: f64 = vocab.iter().map(|w| lm.prob(&["zz", "yy", "xx"], w)).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn matching_text_has_lower_perplexity() {
        let g = bag(&["search nike shoes"]);
        let lm = train_lm(&g, DEFAULT_DISCOUNT).unwrap();
        let same = perplexity(&lm, &bag(&["search nike shoes", "search nike shoes"])).unwrap();
        let other = perplexity(&lm, &bag(&["quantum flux capacitor"])).unwrap();
        assert!(same < other);
        assert!(same >= 1.0);
    }

    #[test]
    fn inv_pp_in_unit_interval() {
        let g = bag(&["a b", "c"]);
        for r in [bag(&["a b"]), bag(&["x y z"])] {
            let s = inv_pp(&g, &r, DEFAULT_DISCOUNT).unwrap();
            assert!(s > 0.0 && s <= 1.0);
        }
    }

    #[test]
    fn oov_replacement_lowers_score() {
        let g = bag(&["buy red shoes", "buy blue shoes", "find red hat"]);
        let r = bag(&["buy red shoes", "find red hat", "buy blue shoes", "find red hat"]);
        let noisy = bag(&["buy red shoes", "find red hat", "qqq www", "eee rrr ttt"]);
        assert!(inv_pp(&g, &noisy, 0.75).unwrap() < inv_pp(&g, &r, 0.75).unwrap());
    }

    #[test]
    fn deterministic() {
        let g = bag(&["a b c", "b c d", "a a"]);
        let r = bag(&["a b d", "c"]);
        assert_eq!(
            inv_pp(&g, &r, 0.75).unwrap().to_bits(),
            inv_pp(&g, &r, 0.75).unwrap().to_bits()
        );
    }

    #[test]
    fn rejects_bad_discount() {
        assert!(train_lm(&bag(&["a"]), 1.0).is_err());
        assert!(train_lm(&bag(&["a"]), 0.0).is_err());
    }
}

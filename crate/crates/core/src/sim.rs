//! Sentence-to-sentence similarities used by the pairwise and alignment
//! bag metrics. Every function returns a value in `[0, 1]`; BLEU and CIDEr
//! treat the first argument as the candidate and the second as reference.

use std::collections::{BTreeSet, HashMap};

use crate::corpus::{Bag, EmbeddingTable, Sentence};
use crate::error::Result;
#[cfg(test)]
use crate::error::Error;
use crate::par;

const MAX_ORDER: usize = 4;
const PAD: u32 = u32::MAX;

/// Fixed-width n-gram key: token ids left-aligned, unused slots padded.
type Gram = [u32; MAX_ORDER];

#[derive(Default)]
struct Interner {
    ids: HashMap<String, u32>,
}

impl Interner {
    fn id(&mut self, tok: &str) -> u32 {
        let next = self.ids.len() as u32;
        *self.ids.entry(tok.to_string()).or_insert(next)
    }
}

fn gram_of(ids: &[u32]) -> Gram {
    let mut g = [PAD; MAX_ORDER];
    g[..ids.len()].copy_from_slice(ids);
    g
}

/// Sorted (gram, count) list for n-grams of order `n`.
fn gram_counts(ids: &[u32], n: usize) -> Vec<(Gram, u32)> {
    if ids.len() < n {
        return Vec::new();
    }
    let mut grams: Vec<Gram> = ids.windows(n).map(gram_of).collect();
    grams.sort_unstable();
    let mut out: Vec<(Gram, u32)> = Vec::with_capacity(grams.len());
    for g in grams {
        match out.last_mut() {
            Some((last, c)) if *last == g => *c += 1,
            _ => out.push((g, 1)),
        }
    }
    out
}

/// Sum over shared grams of `min(a, b)` (clipped matches).
fn clipped_matches(a: &[(Gram, u32)], b: &[(Gram, u32)]) -> u32 {
    let (mut i, mut j, mut m) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                m += a[i].1.min(b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    m
}

fn sparse_dot(a: &[(Gram, f64)], b: &[(Gram, f64)]) -> f64 {
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot
}

/// Pre-computed per-sentence features for one comparison.
/// idf-weighted n-gram vector and its norm.
type Weighted = (Vec<(Gram, f64)>, f64);

struct Features<'t> {
    ids: Vec<u32>,
    grams: [Vec<(Gram, u32)>; MAX_ORDER],
    /// idf-weighted vectors and their norms, one per order (CIDEr only).
    weighted: Option<[Weighted; MAX_ORDER]>,
    embedding: Option<&'t [f64]>,
}

fn bleu3_features(c: &Features, r: &Features) -> f64 {
    let clen = c.ids.len();
    let rlen = r.ids.len();
    if clen == 0 {
        return 0.0;
    }
    let m1 = clipped_matches(&c.grams[0], &r.grams[0]);
    if m1 == 0 {
        return 0.0;
    }
    let mut log_sum = (m1 as f64 / clen as f64).ln();
    for n in 2..=3 {
        let total = clen.saturating_sub(n - 1) as f64;
        let matched = clipped_matches(&c.grams[n - 1], &r.grams[n - 1]) as f64;
        log_sum += ((matched + 1.0) / (total + 1.0)).ln();
    }
    let bp = if clen < rlen {
        (1.0 - rlen as f64 / clen as f64).exp()
    } else {
        1.0
    };
    ((log_sum / 3.0).exp() * bp).clamp(0.0, 1.0)
}

fn lcs_len(a: &[u32], b: &[u32]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_l_features(c: &Features, r: &Features) -> f64 {
    if c.ids.is_empty() || r.ids.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&c.ids, &r.ids) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / c.ids.len() as f64;
    let rec = lcs / r.ids.len() as f64;
    (2.0 * p * rec / (p + rec)).clamp(0.0, 1.0)
}

fn cider_features(c: &Features, r: &Features) -> f64 {
    let (cw, rw) = match (&c.weighted, &r.weighted) {
        (Some(a), Some(b)) => (a, b),
        _ => return 0.0,
    };
    let mut total = 0.0;
    for n in 0..MAX_ORDER {
        let (va, na) = &cw[n];
        let (vb, nb) = &rw[n];
        if *na > 0.0 && *nb > 0.0 {
            total += sparse_dot(va, vb) / (na * nb);
        }
    }
    (total / MAX_ORDER as f64).clamp(0.0, 1.0)
}

fn cosine_dense(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// n-gram → idf weight over a set of documents (distinct sentences).
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    weights: HashMap<Vec<String>, f64>,
    pub doc_count: usize,
    unseen: f64,
}

impl IdfTable {
    /// Table with explicit weights; `unseen` applies to absent n-grams.
    pub fn from_weights(weights: HashMap<Vec<String>, f64>, doc_count: usize, unseen: f64) -> Self {
        IdfTable {
            weights,
            doc_count,
            unseen,
        }
    }

    pub fn idf(&self, gram: &[String]) -> f64 {
        self.weights.get(gram).copied().unwrap_or(self.unseen)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `idf(w) = ln((N + 1) / (df(w) + 1))` over the distinct sentences of the
/// given bags, for n-gram orders `1..=max_n`.
pub fn build_idf_over(bags: &[&Bag], max_n: usize) -> IdfTable {
    let docs: BTreeSet<&Vec<String>> = bags
        .iter()
        .flat_map(|b| b.items.iter().map(|s| &s.tokens))
        .collect();
    let n_docs = docs.len();
    let mut df: HashMap<Vec<String>, usize> = HashMap::new();
    for tokens in &docs {
        let mut grams: BTreeSet<&[String]> = BTreeSet::new();
        for n in 1..=max_n {
            grams.extend(tokens.windows(n));
        }
        for g in grams {
            *df.entry(g.to_vec()).or_insert(0) += 1;
        }
    }
    let num = (n_docs + 1) as f64;
    let weights = df
        .into_iter()
        .map(|(g, d)| (g, (num / (d + 1) as f64).ln()))
        .collect();
    IdfTable {
        weights,
        doc_count: n_docs,
        unseen: num.ln(),
    }
}

/// idf table for CIDEr, one document per distinct sentence of the reference.
pub fn build_idf(reference: &Bag, max_n: usize) -> IdfTable {
    build_idf_over(&[reference], max_n)
}

/// Which sentence similarity to use.
#[derive(Debug, Clone, Copy)]
pub enum SimilarityFn<'a> {
    Bleu3,
    RougeL,
    Cider(&'a IdfTable),
    EmbedCos(&'a EmbeddingTable),
}

impl<'a> SimilarityFn<'a> {
    pub fn name(&self) -> &'static str {
        match self {
            SimilarityFn::Bleu3 => "bleu3",
            SimilarityFn::RougeL => "rouge_l",
            SimilarityFn::Cider(_) => "cider",
            SimilarityFn::EmbedCos(_) => "sbert",
        }
    }

    fn prepare<'s>(&self, s: &'s Sentence, interner: &mut Interner) -> Result<Features<'a>> {
        let ids: Vec<u32> = s.tokens.iter().map(|t| interner.id(t)).collect();
        let max_order = match self {
            SimilarityFn::Bleu3 => 3,
            SimilarityFn::Cider(_) => MAX_ORDER,
            _ => 0,
        };
        let grams: [Vec<(Gram, u32)>; MAX_ORDER] = std::array::from_fn(|i| {
            if i < max_order {
                gram_counts(&ids, i + 1)
            } else {
                Vec::new()
            }
        });
        let weighted = match self {
            SimilarityFn::Cider(idf) => Some(std::array::from_fn(|i| {
                let n = i + 1;
                let mut idf_of: HashMap<Gram, f64> = HashMap::new();
                for (pos, w) in s.tokens.windows(n).enumerate() {
                    idf_of
                        .entry(gram_of(&ids[pos..pos + n]))
                        .or_insert_with(|| idf.idf(w));
                }
                let v: Vec<(Gram, f64)> = grams[i]
                    .iter()
                    .map(|(g, c)| (*g, *c as f64 * idf_of[g]))
                    .collect();
                let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
                (v, norm)
            })),
            _ => None,
        };
        let embedding = match self {
            SimilarityFn::EmbedCos(table) => Some(table.get(&s.id)?),
            _ => None,
        };
        Ok(Features {
            ids,
            grams,
            weighted,
            embedding,
        })
    }

    fn apply(&self, c: &Features, r: &Features) -> f64 {
        match self {
            SimilarityFn::Bleu3 => bleu3_features(c, r),
            SimilarityFn::RougeL => rouge_l_features(c, r),
            SimilarityFn::Cider(_) => cider_features(c, r),
            SimilarityFn::EmbedCos(_) => {
                let (a, b) = (c.embedding.unwrap_or(&[]), r.embedding.unwrap_or(&[]));
                ((cosine_dense(a, b) + 1.0) / 2.0).clamp(0.0, 1.0)
            }
        }
    }

    /// `sim(candidate, reference)` for one pair.
    pub fn sim(&self, candidate: &Sentence, reference: &Sentence) -> Result<f64> {
        let mut interner = Interner::default();
        let c = self.prepare(candidate, &mut interner)?;
        let r = self.prepare(reference, &mut interner)?;
        Ok(self.apply(&c, &r))
    }

    /// Full `|g| × |r|` similarity matrix, rows indexed by `g`.
    pub fn matrix(&self, g: &Bag, r: &Bag) -> Result<Vec<Vec<f64>>> {
        let mut interner = Interner::default();
        let gf = g
            .items
            .iter()
            .map(|s| self.prepare(s, &mut interner))
            .collect::<Result<Vec<_>>>()?;
        let rf = r
            .items
            .iter()
            .map(|s| self.prepare(s, &mut interner))
            .collect::<Result<Vec<_>>>()?;
        Ok(par::map(&gf, |cg| rf.iter().map(|cr| self.apply(cg, cr)).collect()))
    }
}

pub fn bleu3(candidate: &Sentence, reference: &Sentence) -> f64 {
    SimilarityFn::Bleu3
        .sim(candidate, reference)
        .expect("lexical similarity is infallible")
}

pub fn rouge_l(candidate: &Sentence, reference: &Sentence) -> f64 {
    SimilarityFn::RougeL
        .sim(candidate, reference)
        .expect("lexical similarity is infallible")
}

pub fn cider(candidate: &Sentence, reference: &Sentence, idf: &IdfTable) -> f64 {
    SimilarityFn::Cider(idf)
        .sim(candidate, reference)
        .expect("lexical similarity is infallible")
}

/// Cosine of the two sentence embeddings, rescaled from `[-1, 1]` to `[0, 1]`.
pub fn embed_cos(a: &Sentence, b: &Sentence, table: &EmbeddingTable) -> Result<f64> {
    SimilarityFn::EmbedCos(table).sim(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(text: &str) -> Sentence {
        Sentence::new(text).unwrap()
    }

    #[test]
    fn bleu_identical_is_one() {
        assert!((bleu3(&s("search for nike shoes"), &s("search for nike shoes")) - 1.0).abs() < 1e-12);
        assert!((bleu3(&s("shoes"), &s("shoes")) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_disjoint_is_tiny() {
        assert!(bleu3(&s("a b c d"), &s("e f g h")) < 0.05);
    }

    #[test]
    fn bleu_hand_computed() {
        // unigrams 3/3, bigrams (0+1)/(2+1), trigrams (0+1)/(1+1), BP exp(1-5/3)
        let expected = (1.0f64 * (1.0 / 3.0) * 0.5).powf(1.0 / 3.0) * (1.0f64 - 5.0 / 3.0).exp();
        let got = bleu3(&s("search nike shoes"), &s("search for nike running shoes"));
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l(&s("a b c"), &s("a b c")), 1.0);
        let got = rouge_l(&s("search nike shoes"), &s("search for nike running shoes"));
        assert!((got - 0.75).abs() < 1e-12);
        assert_eq!(rouge_l(&s("a b"), &s("c d")), 0.0);
    }

    #[test]
    fn idf_examples() {
        let bag = Bag::from_texts("c", &["red shoes", "blue shoes", "green hat"]).unwrap();
        let idf = build_idf(&bag, 4);
        assert_eq!(idf.doc_count, 3);
        let g = |t: &[&str]| t.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert!((idf.idf(&g(&["red"])) - (4.0f64 / 2.0).ln()).abs() < 1e-12);
        assert!((idf.idf(&g(&["shoes"])) - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((idf.idf(&g(&["purple"])) - 4.0f64.ln()).abs() < 1e-12);

        let all = Bag::from_texts("c", &["x y", "x z", "x w", "x y"]).unwrap();
        let idf = build_idf(&all, 4);
        assert_eq!(idf.idf(&g(&["x"])), 0.0);
    }

    #[test]
    fn cider_identical_and_disjoint() {
        let bag = Bag::from_texts("c", &["a b c d e", "f g h i j", "k l m n o"]).unwrap();
        let idf = build_idf(&bag, 4);
        let x = s("a b c d e");
        assert!((cider(&x, &x, &idf) - 1.0).abs() < 1e-12);
        assert_eq!(cider(&x, &s("f g h i j"), &idf), 0.0);
    }

    #[test]
    fn embed_cos_examples() {
        let mut t = EmbeddingTable::new(2);
        let a = s("a");
        let b = s("b");
        let c = s("c");
        let d = s("d");
        t.insert(a.id.clone(), vec![1.0, 0.0]).unwrap();
        t.insert(b.id.clone(), vec![-1.0, 0.0]).unwrap();
        t.insert(c.id.clone(), vec![0.0, 3.0]).unwrap();
        assert_eq!(embed_cos(&a, &a, &t).unwrap(), 1.0);
        assert!((embed_cos(&a, &b, &t).unwrap() - 0.0).abs() < 1e-12);
        assert!((embed_cos(&a, &c, &t).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(embed_cos(&a, &d, &t), Err(Error::MissingEmbedding(d.id.clone())));
    }

    #[test]
    fn matrix_matches_pairwise_calls() {
        let g = Bag::from_texts("c", &["a b c", "b c d", "a"]).unwrap();
        let r = Bag::from_texts("c", &["a b", "c d e f"]).unwrap();
        let idf = build_idf(&r, 4);
        for f in [SimilarityFn::Bleu3, SimilarityFn::RougeL, SimilarityFn::Cider(&idf)] {
            let m = f.matrix(&g, &r).unwrap();
            for (i, gi) in g.items.iter().enumerate() {
                for (j, rj) in r.items.iter().enumerate() {
                    assert_eq!(m[i][j], f.sim(gi, rj).unwrap());
                }
            }
        }
    }

    fn sentence_strategy() -> impl Strategy<Value = Sentence> {
        proptest::collection::vec("[a-e]", 1..8).prop_map(|t| Sentence::from_tokens(&t).unwrap())
    }

    proptest! {
        #[test]
        fn lexical_sims_in_unit_range(a in sentence_strategy(), b in sentence_strategy(), c in sentence_strategy()) {
            let bag = Bag::new("c", vec![b.clone(), c.clone()]).unwrap();
            let idf = build_idf(&bag, 4);
            for v in [bleu3(&a, &b), rouge_l(&a, &b), cider(&a, &b, &idf)] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(rouge_l(&a, &b), rouge_l(&b, &a));
            prop_assert!((bleu3(&a, &a) - 1.0).abs() < 1e-12);
            prop_assert!((rouge_l(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn embed_cos_in_unit_range_and_symmetric(u in proptest::collection::vec(-5.0f64..5.0, 4), v in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let mut t = EmbeddingTable::new(4);
            let a = Sentence::new("a").unwrap();
            let b = Sentence::new("b").unwrap();
            t.insert(a.id.clone(), u).unwrap();
            t.insert(b.id.clone(), v).unwrap();
            let x = embed_cos(&a, &b, &t).unwrap();
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert_eq!(x, embed_cos(&b, &a, &t).unwrap());
        }
    }
}

//! Slow, independently written reference implementations used as oracles.
//! Shared by the core oracle tests and the CLI acceptance suite.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use trafficdist::rng::Rng as ChaRng;
use trafficdist::{Bag, Sentence};

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Random bag of `size` sentences, each 1..=max_tokens words from `vocab`.
pub fn random_bag(rng: &mut ChaRng, size: usize, max_tokens: usize, vocab: &[&str]) -> Bag {
    let texts: Vec<String> = (0..size)
        .map(|_| {
            let len = rng.gen_range(1..=max_tokens);
            (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect::<Vec<_>>().join(" ")
        })
        .collect();
    Bag::from_texts("ctx", &texts).unwrap()
}

/// Mean of `sim` over every (g, r) pair, written as a plain double loop.
pub fn pair_oracle(g: &Bag, r: &Bag, sim: impl Fn(&Sentence, &Sentence) -> f64) -> f64 {
    let mut total = 0.0;
    for a in &g.items {
        for b in &r.items {
            total += sim(a, b);
        }
    }
    total / (g.items.len() * r.items.len()) as f64
}

/// Best mean similarity over all n! one-to-one assignments of equal-size bags.
pub fn align_oracle(g: &[Sentence], r: &[Sentence], sim: impl Fn(&Sentence, &Sentence) -> f64) -> f64 {
    assert_eq!(g.len(), r.len());
    let n = g.len();
    let m: Vec<Vec<f64>> = g.iter().map(|a| r.iter().map(|b| sim(a, b)).collect()).collect();
    permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| m[i][j]).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
        / n as f64
}

/// Single-reference CIDEr over orders 1..=4 with idf from `reference_docs`.
pub fn cider_oracle(c: &[String], r: &[String], reference_docs: &[Vec<String>]) -> f64 {
    let docs: BTreeSet<&Vec<String>> = reference_docs.iter().collect();
    let n_docs = docs.len() as f64;
    let idf = |gram: &[String]| {
        let df = docs
            .iter()
            .filter(|d| d.windows(gram.len()).any(|w| w == gram))
            .count() as f64;
        ((n_docs + 1.0) / (df + 1.0)).ln()
    };
    let mut total = 0.0;
    for n in 1..=4 {
        let vec_of = |t: &[String]| {
            let mut v: BTreeMap<Vec<String>, f64> = BTreeMap::new();
            if t.len() >= n {
                for w in t.windows(n) {
                    *v.entry(w.to_vec()).or_insert(0.0) += 1.0;
                }
            }
            for (g, x) in v.iter_mut() {
                *x *= idf(g);
            }
            v
        };
        let (vc, vr) = (vec_of(c), vec_of(r));
        let dot: f64 = vc.iter().map(|(g, x)| x * vr.get(g).copied().unwrap_or(0.0)).sum();
        let nc = vc.values().map(|x| x * x).sum::<f64>().sqrt();
        let nr = vr.values().map(|x| x * x).sum::<f64>().sqrt();
        if nc > 0.0 && nr > 0.0 {
            total += dot / (nc * nr);
        }
    }
    (total / 4.0).clamp(0.0, 1.0)
}

/// Interpolated Kneser-Ney, 4-gram, computed by rescanning the training
/// sentences on every query.
pub struct KnReference {
    sentences: Vec<Vec<String>>,
    vocab: BTreeSet<String>,
    discount: f64,
}

const ORDER: usize = 4;

impl KnReference {
    pub fn new(train: &[&str], discount: f64) -> Self {
        let sentences: Vec<Vec<String>> = train
            .iter()
            .map(|t| t.split_whitespace().map(str::to_string).collect())
            .collect();
        let mut vocab: BTreeSet<String> = sentences.iter().flatten().cloned().collect();
        vocab.insert("</s>".into());
        vocab.insert("<unk>".into());
        KnReference {
            sentences,
            vocab,
            discount,
        }
    }

    fn padded(&self) -> Vec<Vec<String>> {
        self.sentences
            .iter()
            .map(|s| {
                let mut p = vec!["<s>".to_string(); ORDER - 1];
                p.extend(s.iter().cloned());
                p.push("</s>".into());
                p
            })
            .collect()
    }

    /// Raw counts of k-grams ending on a predicted position.
    fn raw(&self, k: usize) -> BTreeMap<Vec<String>, f64> {
        let mut out = BTreeMap::new();
        for s in self.padded() {
            for end in (ORDER - 1)..s.len() {
                *out.entry(s[end + 1 - k..=end].to_vec()).or_insert(0.0) += 1.0;
            }
        }
        out
    }

    /// Count used at level k: raw at the top, distinct left extensions below.
    fn level_count(&self, gram: &[String]) -> f64 {
        let k = gram.len();
        if k == ORDER {
            return self.raw(k).get(gram).copied().unwrap_or(0.0);
        }
        self.raw(k + 1).keys().filter(|g| &g[1..] == gram).count() as f64
    }

    fn map(&self, w: &str) -> String {
        if self.vocab.contains(w) || w == "<s>" {
            w.to_string()
        } else {
            "<unk>".to_string()
        }
    }

    fn p(&self, history: &[String], w: &str) -> f64 {
        if history.is_empty() {
            let lower = 1.0 / self.vocab.len() as f64;
            return self.interpolate(&[], w, lower);
        }
        let lower = self.p(&history[1..], w);
        self.interpolate(history, w, lower)
    }

    fn interpolate(&self, history: &[String], w: &str, lower: f64) -> f64 {
        let mut total = 0.0;
        let mut types = 0.0;
        let mut c_hw = 0.0;
        let candidates: Vec<String> = self.vocab.iter().cloned().collect();
        for v in &candidates {
            let mut g = history.to_vec();
            g.push(v.clone());
            let c = self.level_count(&g);
            if c > 0.0 {
                total += c;
                types += 1.0;
            }
            if v == w {
                c_hw = c;
            }
        }
        if total == 0.0 {
            return lower;
        }
        ((c_hw - self.discount).max(0.0) + self.discount * types * lower) / total
    }

    /// p(word | last three tokens of context), `<s>`-padded on the left.
    pub fn prob(&self, context: &[&str], word: &str) -> f64 {
        let mut hist: Vec<String> = vec!["<s>".into(); ORDER - 1];
        hist.extend(context.iter().map(|t| self.map(t)));
        let hist = hist[hist.len() - (ORDER - 1)..].to_vec();
        self.p(&hist, &self.map(word))
    }

    pub fn perplexity(&self, test: &[&str]) -> f64 {
        let mut ll = 0.0;
        let mut n = 0usize;
        for t in test {
            let mut toks: Vec<&str> = t.split_whitespace().collect();
            toks.push("</s>");
            for i in 0..toks.len() {
                ll += self.prob(&toks[..i], toks[i]).ln();
                n += 1;
            }
        }
        (-ll / n as f64).exp()
    }

    pub fn vocabulary(&self) -> Vec<String> {
        self.vocab.iter().cloned().collect()
    }
}

fn dense_cos_dist(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    let dot: f64 = a.iter().map(|(k, x)| x * b.get(k).copied().unwrap_or(0.0)).sum();
    1.0 - dot / (na * nb)
}

/// Textbook DBSCAN with a breadth-first expansion; clusters numbered in
/// discovery order, border points kept by the first cluster reaching them.
pub fn naive_dbscan(points: &[BTreeMap<String, f64>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum L {
        Undef,
        Noise,
        C(usize),
    }
    let n = points.len();
    let neighbors = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| j == i || dense_cos_dist(&points[i], &points[j]) <= eps)
            .collect()
    };
    let mut labels = vec![L::Undef; n];
    let mut next = 0;
    for p in 0..n {
        if labels[p] != L::Undef {
            continue;
        }
        let nb = neighbors(p);
        if nb.len() < min_pts {
            labels[p] = L::Noise;
            continue;
        }
        labels[p] = L::C(next);
        let mut queue: std::collections::VecDeque<usize> = nb.into_iter().filter(|&q| q != p).collect();
        while let Some(q) = queue.pop_front() {
            match labels[q] {
                L::Noise => labels[q] = L::C(next),
                L::Undef => {
                    labels[q] = L::C(next);
                    let nq = neighbors(q);
                    if nq.len() >= min_pts {
                        queue.extend(nq);
                    }
                }
                L::C(_) => {}
            }
        }
        next += 1;
    }
    labels
        .into_iter()
        .map(|l| match l {
            L::C(c) => Some(c),
            _ => None,
        })
        .collect()
}

pub fn tf_map(s: &Sentence) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for t in &s.tokens {
        *m.entry(t.clone()).or_insert(0.0) += 1.0;
    }
    m
}

/// Spearman via the d² formula; valid only without ties.
pub fn spearman_closed_form(pred_ranks: &[usize], true_ranks: &[usize]) -> f64 {
    let n = pred_ranks.len() as f64;
    let d2: f64 = pred_ranks
        .iter()
        .zip(true_ranks)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Pearson correlation of average ranks, ranks counted directly.
pub fn spearman_brute(scores: &[f64], true_ranks: &[usize]) -> f64 {
    let rank_desc = |v: &[f64], i: usize| {
        let greater = v.iter().filter(|&&x| x > v[i]).count() as f64;
        let equal = v.iter().filter(|&&x| x == v[i]).count() as f64;
        greater + (equal + 1.0) / 2.0
    };
    let t: Vec<f64> = true_ranks.iter().map(|&r| -(r as f64)).collect();
    let a: Vec<f64> = (0..scores.len()).map(|i| rank_desc(scores, i)).collect();
    let b: Vec<f64> = (0..t.len()).map(|i| rank_desc(&t, i)).collect();
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

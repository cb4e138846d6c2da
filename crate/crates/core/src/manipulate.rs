//! Controlled corruptions of a reference bag and construction of ranking
//! tasks whose ground-truth order is known by construction.
//!
//! Every manipulation works on the bag's canonical occurrence order, so the
//! output depends only on the multiset, the parameters and the seed. The
//! set of modified occurrences at strength `s + 1` contains the set modified
//! at strength `s` for the same seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Bag, Corpus, Sentence, Span};
use crate::error::{Error, Result};
use crate::rng::{self, derive_index, derive_seed};

pub const MAX_STRENGTH: u8 = 5;

/// Largest fraction of a bag that NTI/EDA/CPS/ISM modify (at strength 5).
pub const MAX_REPLACEMENT_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManipulationKind {
    TdmPeaked,
    TdmFlat,
    Nti,
    Eda,
    Cps,
    IsmBroader,
    IsmSpecific,
}

impl ManipulationKind {
    pub const ALL: [ManipulationKind; 7] = [
        ManipulationKind::TdmPeaked,
        ManipulationKind::TdmFlat,
        ManipulationKind::Nti,
        ManipulationKind::Eda,
        ManipulationKind::Cps,
        ManipulationKind::IsmBroader,
        ManipulationKind::IsmSpecific,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ManipulationKind::TdmPeaked => "tdm_peaked",
            ManipulationKind::TdmFlat => "tdm_flat",
            ManipulationKind::Nti => "nti",
            ManipulationKind::Eda => "eda",
            ManipulationKind::Cps => "cps",
            ManipulationKind::IsmBroader => "ism_broader",
            ManipulationKind::IsmSpecific => "ism_specific",
        }
    }
}

impl fmt::Display for ManipulationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ManipulationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ManipulationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = ManipulationKind::ALL.iter().map(|k| k.name()).collect();
                Error::Usage(format!("unknown manipulation {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdmDirection {
    Peaked,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsmDirection {
    Broader,
    Specific,
}

/// Phrase lists per intent, each phrase already tokenized.
pub type CarrierPool = BTreeMap<String, Vec<Vec<String>>>;

/// Candidate attributes per sentence id.
pub type AttributeSource = BTreeMap<String, Vec<String>>;

/// Word → synonyms.
pub type Lexicon = BTreeMap<String, Vec<String>>;

/// Side inputs some manipulations draw from.
#[derive(Debug, Clone, Default)]
pub struct Resources {
    pub distractors: Vec<Sentence>,
    pub carrier_pool: CarrierPool,
    pub attribute_source: AttributeSource,
    pub vocabulary: Vec<String>,
    pub lexicon: Lexicon,
}

impl Resources {
    /// Everything needed to manipulate one context of `corpus`.
    pub fn for_context(corpus: &Corpus, context_id: &str, lexicon: &Lexicon) -> Self {
        let attribute_source = corpus
            .contexts
            .get(context_id)
            .map(popular_attributes)
            .unwrap_or_default();
        Resources {
            distractors: corpus.distractors_for(context_id),
            carrier_pool: carrier_pool(corpus),
            attribute_source,
            vocabulary: corpus.vocabulary(),
            lexicon: lexicon.clone(),
        }
    }
}

/// Distinct annotated carrier phrases per intent across the corpus.
pub fn carrier_pool(corpus: &Corpus) -> CarrierPool {
    let mut pool: BTreeMap<String, BTreeSet<Vec<String>>> = BTreeMap::new();
    for s in corpus.contexts.values().flat_map(|b| b.items.iter()) {
        if let (Some(intent), Some(phrase)) = (&s.intent, s.carrier_tokens()) {
            pool.entry(intent.clone()).or_default().insert(phrase.to_vec());
        }
    }
    pool.into_iter()
        .map(|(k, v)| (k, v.into_iter().collect()))
        .collect()
}

/// Maps every item-annotated sentence of the bag to the bag's attributes,
/// most frequent first.
pub fn popular_attributes(bag: &Bag) -> AttributeSource {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &bag.items {
        for a in &s.attributes {
            *freq.entry(a.as_str()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let attrs: Vec<String> = ranked.into_iter().map(|(a, _)| a.to_string()).collect();
    bag.items
        .iter()
        .filter(|s| s.item_span.is_some())
        .map(|s| (s.id.clone(), attrs.clone()))
        .collect()
}

/// Reads a JSONL synonym lexicon: `{"word": str, "synonyms": [str]}`.
pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    #[derive(Deserialize)]
    struct Entry {
        word: String,
        synonyms: Vec<String>,
    }
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lex = Lexicon::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: Entry = serde_json::from_str(line).map_err(|err| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message: err.to_string(),
        })?;
        let key = tokenize(&e.word).map(|t| t.join(" ")).unwrap_or(e.word);
        lex.entry(key).or_default().extend(e.synonyms);
    }
    Ok(lex)
}

fn check_strength(strength: u8) -> Result<()> {
    if (1..=MAX_STRENGTH).contains(&strength) {
        Ok(())
    } else {
        Err(Error::Usage(format!("strength must be in 1..={MAX_STRENGTH}, got {strength}")))
    }
}

/// Occurrences modified at `strength` in a bag of `n`:
/// `ceil(strength / 5 · n · 0.5)`.
pub fn modified_count(strength: u8, n: usize) -> usize {
    let frac = strength as f64 / MAX_STRENGTH as f64 * MAX_REPLACEMENT_FRACTION;
    // guard against 0.1 * 20 style rounding pushing ceil up by one
    ((frac * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Fraction of the remaining work done at `strength` (used by TDM).
fn level_fraction(strength: u8, total: usize) -> usize {
    ((strength as f64 / MAX_STRENGTH as f64 * total as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Seeded permutation of `eligible`; the first `k` entries are modified.
fn selection_order(eligible: &[usize], seed: u64) -> Vec<usize> {
    let mut order = eligible.to_vec();
    order.shuffle(&mut rng::rng(derive_seed(seed, "select")));
    order
}

fn position_rng(seed: u64, position: usize) -> rng::Rng {
    rng::rng(derive_index(derive_seed(seed, "edit"), position as u64))
}

/// Distinct texts with their canonical occurrence indices.
fn groups(items: &[Sentence]) -> Vec<(String, Vec<usize>)> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in items.iter().enumerate() {
        map.entry(s.raw.as_str()).or_default().push(i);
    }
    map.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Text distribution manipulation: concentrate mass on the head text
/// (`Peaked`) or equalize occurrence counts (`Flat`). Bag size is preserved.
pub fn tdm(bag: &Bag, direction: TdmDirection, strength: u8, seed: u64) -> Result<Bag> {
    check_strength(strength)?;
    let items = bag.canonical_items();
    let groups = groups(&items);
    let kind = match direction {
        TdmDirection::Peaked => ManipulationKind::TdmPeaked,
        TdmDirection::Flat => ManipulationKind::TdmFlat,
    };
    if groups.len() < 2 {
        return Err(Error::NotApplicable {
            kind: kind.to_string(),
            reason: "bag has a single distinct text".into(),
        });
    }
    let out = match direction {
        TdmDirection::Peaked => tdm_peaked(&items, &groups, strength, seed),
        TdmDirection::Flat => tdm_flat(&items, &groups, strength),
    };
    bag.with_items(out)
}

fn tdm_peaked(items: &[Sentence], groups: &[(String, Vec<usize>)], strength: u8, seed: u64) -> Vec<Sentence> {
    // head: most frequent, ties to the smallest text
    let head = groups
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.len().cmp(&b.1 .1.len()).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("at least two groups");
    let mut tail: Vec<usize> = (0..groups.len()).filter(|&i| i != head).collect();
    tail.shuffle(&mut rng::rng(derive_seed(seed, "tdm")));
    tail.sort_by_key(|&i| groups[i].1.len());
    let k = level_fraction(strength, tail.len());
    let replaced: BTreeSet<usize> = tail[..k]
        .iter()
        .flat_map(|&g| groups[g].1.iter().copied())
        .collect();
    let proto = &items[groups[head].1[0]];
    items
        .iter()
        .enumerate()
        .map(|(i, s)| if replaced.contains(&i) { proto.clone() } else { s.clone() })
        .collect()
}

fn tdm_flat(items: &[Sentence], groups: &[(String, Vec<usize>)], strength: u8) -> Vec<Sentence> {
    let n = items.len();
    let d = groups.len();
    let mut by_count: Vec<usize> = (0..d).collect();
    by_count.sort_by(|&a, &b| groups[b].1.len().cmp(&groups[a].1.len()).then(a.cmp(&b)));
    let mut target = vec![n / d; d];
    for &g in by_count.iter().take(n % d) {
        target[g] += 1;
    }
    let mut count: Vec<i64> = groups.iter().map(|g| g.1.len() as i64).collect();
    let target: Vec<i64> = target.into_iter().map(|t| t as i64).collect();
    let total_moves: i64 = (0..d).map(|g| (count[g] - target[g]).max(0)).sum();
    let moves = level_fraction(strength, total_moves as usize);
    for _ in 0..moves {
        let donor = (0..d).max_by_key(|&g| (count[g] - target[g], std::cmp::Reverse(g))).unwrap();
        let recipient = (0..d).max_by_key(|&g| (target[g] - count[g], std::cmp::Reverse(g))).unwrap();
        count[donor] -= 1;
        count[recipient] += 1;
    }
    let mut out = Vec::with_capacity(n);
    for (g, (_, idx)) in groups.iter().enumerate() {
        let c = count[g] as usize;
        for j in 0..c {
            out.push(items[idx[j.min(idx.len() - 1)]].clone());
        }
    }
    out.sort();
    out
}

/// Noisy text injection: replaces `modified_count` occurrences with uniform
/// draws from `distractors` (texts already in the bag are excluded).
pub fn nti(bag: &Bag, distractors: &[Sentence], strength: u8, seed: u64) -> Result<Bag> {
    check_strength(strength)?;
    let own: BTreeSet<&str> = bag.items.iter().map(|s| s.raw.as_str()).collect();
    let mut pool: Vec<&Sentence> = distractors.iter().filter(|s| !own.contains(s.raw.as_str())).collect();
    pool.sort();
    pool.dedup();
    if pool.is_empty() {
        return Err(Error::MissingDistractors);
    }
    let mut items = bag.canonical_items();
    let all: Vec<usize> = (0..items.len()).collect();
    let k = modified_count(strength, items.len());
    for &pos in selection_order(&all, seed).iter().take(k) {
        let mut r = position_rng(seed, pos);
        items[pos] = pool[r.gen_range(0..pool.len())].clone();
    }
    bag.with_items(items)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdaOp {
    Swap,
    Replace,
    Delete,
    Insert,
}

/// Applies one EDA edit to `s`, returning the new sentence and the edit.
pub fn eda_edit(s: &Sentence, vocabulary: &[String], lexicon: &Lexicon, rng: &mut rng::Rng) -> Result<(Sentence, EdaOp)> {
    let mut ops = vec![EdaOp::Replace, EdaOp::Insert];
    if s.len() >= 2 {
        ops.extend([EdaOp::Swap, EdaOp::Delete]);
    }
    ops.sort_by_key(|op| *op as u8);
    let op = ops[rng.gen_range(0..ops.len())];
    let mut tokens = s.tokens.clone();
    let random_word = |rng: &mut rng::Rng, avoid: Option<&str>| -> String {
        let candidates: Vec<&String> = vocabulary.iter().filter(|w| Some(w.as_str()) != avoid).collect();
        if candidates.is_empty() {
            // degenerate vocabulary: fall back to a fixed filler token
            "unk".to_string()
        } else {
            candidates[rng.gen_range(0..candidates.len())].clone()
        }
    };
    match op {
        EdaOp::Swap => {
            let i = rng.gen_range(0..tokens.len());
            let mut j = rng.gen_range(0..tokens.len() - 1);
            if j >= i {
                j += 1;
            }
            tokens.swap(i, j);
        }
        EdaOp::Replace => {
            let i = rng.gen_range(0..tokens.len());
            let synonyms: Vec<&String> = lexicon
                .get(&tokens[i])
                .map(|v| v.iter().filter(|w| **w != tokens[i]).collect())
                .unwrap_or_default();
            let replacement: Vec<String> = if synonyms.is_empty() {
                vec![random_word(rng, Some(&tokens[i]))]
            } else {
                let pick = synonyms[rng.gen_range(0..synonyms.len())];
                tokenize(pick).unwrap_or_else(|_| vec![pick.clone()])
            };
            tokens.splice(i..=i, replacement);
        }
        EdaOp::Delete => {
            let i = rng.gen_range(0..tokens.len());
            tokens.remove(i);
        }
        EdaOp::Insert => {
            let i = rng.gen_range(0..=tokens.len());
            let w = random_word(rng, None);
            tokens.insert(i, w);
        }
    }
    let mut out = Sentence::from_tokens(&tokens)?;
    out.intent = s.intent.clone();
    Ok((out, op))
}

/// Easy-data-augmentation noise: `modified_count` occurrences each receive
/// one random swap, replacement, deletion or insertion. Replacement draws
/// from `lexicon` when the word has synonyms, else from `vocabulary`.
pub fn eda(bag: &Bag, vocabulary: &[String], lexicon: &Lexicon, strength: u8, seed: u64) -> Result<Bag> {
    check_strength(strength)?;
    let own_vocab: Vec<String>;
    let vocabulary = if vocabulary.is_empty() {
        own_vocab = bag.vocabulary().into_iter().map(str::to_string).collect();
        &own_vocab
    } else {
        vocabulary
    };
    let mut items = bag.canonical_items();
    let all: Vec<usize> = (0..items.len()).collect();
    let k = modified_count(strength, items.len());
    for &pos in selection_order(&all, seed).iter().take(k) {
        let mut r = position_rng(seed, pos);
        items[pos] = eda_edit(&items[pos], vocabulary, lexicon, &mut r)?.0;
    }
    bag.with_items(items)
}

/// Replaces the tokens in `span` with `with`, shifting the other span.
fn splice(s: &Sentence, span: Span, with: &[String], is_carrier: bool) -> Result<Sentence> {
    let mut tokens = s.tokens[..span.start].to_vec();
    tokens.extend_from_slice(with);
    tokens.extend_from_slice(&s.tokens[span.end..]);
    let delta = with.len() as i64 - span.len() as i64;
    let new_span = Span::new(span.start, span.start + with.len());
    let shift = |other: Span| {
        if other.start >= span.end {
            Span::new((other.start as i64 + delta) as usize, (other.end as i64 + delta) as usize)
        } else {
            other
        }
    };
    let (carrier, item) = if is_carrier {
        (Some(new_span), s.item_span.map(shift))
    } else {
        (s.carrier_span.map(shift), Some(new_span))
    };
    let mut out = Sentence::from_tokens(&tokens)?;
    out.intent = s.intent.clone();
    out.attributes = s.attributes.clone();
    let carrier = carrier.filter(|c| !c.is_empty());
    out.with_spans(carrier, item)
}

/// Carrier phrase substitution: `modified_count` occurrences get their
/// carrier span replaced by another phrase of the same intent.
pub fn cps(bag: &Bag, pool: &CarrierPool, strength: u8, seed: u64) -> Result<Bag> {
    check_strength(strength)?;
    let mut items = bag.canonical_items();
    let all: Vec<usize> = (0..items.len()).collect();
    let k = modified_count(strength, items.len());
    for &pos in selection_order(&all, seed).iter().take(k) {
        let s = &items[pos];
        let (Some(intent), Some(span)) = (&s.intent, s.carrier_span) else {
            return Err(Error::AnnotationRequired {
                id: s.id.clone(),
                what: if s.intent.is_none() { "intent" } else { "carrier span" },
            });
        };
        let current = &s.tokens[span.start..span.end];
        let phrases = pool.get(intent).map(Vec::as_slice).unwrap_or_default();
        let others: Vec<&Vec<String>> = phrases.iter().filter(|p| p.as_slice() != current).collect();
        if others.is_empty() {
            return Err(Error::NotApplicable {
                kind: ManipulationKind::Cps.to_string(),
                reason: format!("no alternative carrier phrase for intent {intent:?}"),
            });
        }
        let mut r = position_rng(seed, pos);
        let phrase = others[r.gen_range(0..others.len())];
        items[pos] = splice(s, span, phrase, true)?;
    }
    bag.with_items(items)
}

fn find_subsequence(hay: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    hay.windows(needle.len()).position(|w| w == needle)
}

/// Attribute token sequences removable from (broader) or insertable into
/// (specific) the itemname of `s`.
fn ism_candidates(s: &Sentence, direction: IsmDirection, source: &AttributeSource) -> Vec<Vec<String>> {
    let Some(item) = s.item_tokens() else {
        return Vec::new();
    };
    let mut attrs: BTreeSet<Vec<String>> = BTreeSet::new();
    let listed = s.attributes.iter().chain(source.get(&s.id).into_iter().flatten());
    for a in listed {
        if let Ok(t) = tokenize(a) {
            attrs.insert(t);
        }
    }
    attrs
        .into_iter()
        .filter(|a| match direction {
            IsmDirection::Broader => find_subsequence(item, a).is_some() && a.len() < item.len(),
            IsmDirection::Specific => find_subsequence(item, a).is_none(),
        })
        .collect()
}

/// Itemname specificity manipulation: removes an attribute from the
/// itemname (`Broader`) or inserts one before the itemname head
/// (`Specific`). Only occurrences with a usable item annotation are
/// eligible.
pub fn ism(bag: &Bag, direction: IsmDirection, source: &AttributeSource, strength: u8, seed: u64) -> Result<Bag> {
    check_strength(strength)?;
    let mut items = bag.canonical_items();
    let eligible: Vec<usize> = (0..items.len())
        .filter(|&i| !ism_candidates(&items[i], direction, source).is_empty())
        .collect();
    if eligible.is_empty() {
        let id = items
            .iter()
            .find(|s| s.item_span.is_none())
            .unwrap_or(&items[0])
            .id
            .clone();
        return Err(Error::AnnotationRequired {
            id,
            what: "item span with attributes",
        });
    }
    let k = modified_count(strength, items.len()).min(eligible.len());
    for &pos in selection_order(&eligible, seed).iter().take(k) {
        let s = &items[pos];
        let span = s.item_span.expect("eligible implies item span");
        let candidates = ism_candidates(s, direction, source);
        let mut r = position_rng(seed, pos);
        let attr = &candidates[r.gen_range(0..candidates.len())];
        let item = &s.tokens[span.start..span.end];
        let new_item: Vec<String> = match direction {
            IsmDirection::Broader => {
                let at = find_subsequence(item, attr).expect("candidate occurs in item");
                item[..at].iter().chain(&item[at + attr.len()..]).cloned().collect()
            }
            IsmDirection::Specific => {
                let head = item.len() - 1;
                item[..head].iter().chain(attr).chain(&item[head..]).cloned().collect()
            }
        };
        let mut out = splice(s, span, &new_item, false)?;
        let joined = attr.join(" ");
        match direction {
            IsmDirection::Broader => out.attributes.retain(|a| tokenize(a).map(|t| t != *attr).unwrap_or(true)),
            IsmDirection::Specific => {
                if !out.attributes.contains(&joined) {
                    out.attributes.push(joined);
                }
            }
        }
        items[pos] = out;
    }
    bag.with_items(items)
}

/// One manipulation at one strength.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Manipulation {
    pub kind: ManipulationKind,
    pub strength: u8,
    pub seed: u64,
}

impl Manipulation {
    pub fn apply(&self, bag: &Bag, res: &Resources) -> Result<Bag> {
        let (s, seed) = (self.strength, self.seed);
        match self.kind {
            ManipulationKind::TdmPeaked => tdm(bag, TdmDirection::Peaked, s, seed),
            ManipulationKind::TdmFlat => tdm(bag, TdmDirection::Flat, s, seed),
            ManipulationKind::Nti => nti(bag, &res.distractors, s, seed),
            ManipulationKind::Eda => eda(bag, &res.vocabulary, &res.lexicon, s, seed),
            ManipulationKind::Cps => cps(bag, &res.carrier_pool, s, seed),
            ManipulationKind::IsmBroader => ism(bag, IsmDirection::Broader, &res.attribute_source, s, seed),
            ManipulationKind::IsmSpecific => ism(bag, IsmDirection::Specific, &res.attribute_source, s, seed),
        }
    }
}

/// How the candidate bags of a ranking are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum RankingPlan {
    /// One manipulation at increasing strength.
    Strength { kind: ManipulationKind, levels: usize },
    /// Candidate `i` applies steps `1..=i` cumulatively; steps cycle when
    /// fewer than `levels` are given.
    Incremental { steps: Vec<(ManipulationKind, u8)>, levels: usize },
}

impl RankingPlan {
    pub fn label(&self) -> String {
        match self {
            RankingPlan::Strength { kind, .. } => kind.to_string(),
            RankingPlan::Incremental { steps, .. } => {
                let names: Vec<&str> = steps.iter().map(|(k, _)| k.name()).collect();
                format!("incremental:{}", names.join("+"))
            }
        }
    }

    pub fn levels(&self) -> usize {
        match self {
            RankingPlan::Strength { levels, .. } | RankingPlan::Incremental { levels, .. } => *levels,
        }
    }
}

/// Strength used for level `i` (1-based) of `levels`.
pub fn level_strength(i: usize, levels: usize) -> u8 {
    ((i * MAX_STRENGTH as usize).div_ceil(levels)).clamp(1, MAX_STRENGTH as usize) as u8
}

/// A reference bag and candidates of strictly increasing noise.
#[derive(Debug, Clone)]
pub struct RankingTask {
    pub context_id: String,
    pub manipulation: String,
    pub reference: Bag,
    pub candidates: Vec<Bag>,
    /// `true_ranks[i]` is the rank of `candidates[i]`; 1 is least noisy.
    pub true_ranks: Vec<usize>,
}

pub fn build_ranking(reference: &Bag, plan: &RankingPlan, res: &Resources, seed: u64) -> Result<RankingTask> {
    let levels = plan.levels();
    if !(2..=MAX_STRENGTH as usize).contains(&levels) {
        return Err(Error::Usage(format!("levels must be in 2..={MAX_STRENGTH}, got {levels}")));
    }
    let candidates = match plan {
        RankingPlan::Strength { kind, .. } => (1..=levels)
            .map(|i| {
                Manipulation {
                    kind: *kind,
                    strength: level_strength(i, levels),
                    seed,
                }
                .apply(reference, res)
            })
            .collect::<Result<Vec<_>>>()?,
        RankingPlan::Incremental { steps, .. } => {
            if steps.is_empty() {
                return Err(Error::Usage("incremental plan needs at least one manipulation".into()));
            }
            let mut out = Vec::with_capacity(levels);
            let mut cur = reference.clone();
            for i in 0..levels {
                let (kind, strength) = steps[i % steps.len()];
                cur = Manipulation {
                    kind,
                    strength,
                    seed: derive_index(seed, i as u64),
                }
                .apply(&cur, res)?;
                out.push(cur.clone());
            }
            out
        }
    };
    Ok(RankingTask {
        context_id: reference.context_id.clone(),
        manipulation: plan.label(),
        reference: reference.clone(),
        true_ranks: (1..=candidates.len()).collect(),
        candidates,
    })
}

/// Manipulation plan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub mode: PlanMode,
    pub manipulations: Vec<PlanStep>,
    #[serde(default = "default_levels")]
    pub levels: usize,
}

fn default_levels() -> usize {
    MAX_STRENGTH as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanMode {
    Strength,
    Incremental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub kind: ManipulationKind,
    #[serde(default)]
    pub params: StepParams,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    /// Strength of this step in incremental mode (default 3).
    #[serde(default)]
    pub strength: Option<u8>,
}

impl PlanFile {
    pub fn load(path: impl AsRef<Path>) -> Result<PlanFile> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Ranking plans: one per manipulation in strength mode, a single
    /// cumulative plan in incremental mode.
    pub fn plans(&self, levels_override: Option<usize>) -> Result<Vec<RankingPlan>> {
        let levels = levels_override.unwrap_or(self.levels);
        if self.manipulations.is_empty() {
            return Err(Error::Usage("plan lists no manipulations".into()));
        }
        Ok(match self.mode {
            PlanMode::Strength => self
                .manipulations
                .iter()
                .map(|m| RankingPlan::Strength { kind: m.kind, levels })
                .collect(),
            PlanMode::Incremental => {
                let steps = self
                    .manipulations
                    .iter()
                    .map(|m| {
                        let s = m.params.strength.unwrap_or(3);
                        check_strength(s).map(|_| (m.kind, s))
                    })
                    .collect::<Result<Vec<_>>>()?;
                vec![RankingPlan::Incremental { steps, levels }]
            }
        })
    }
}

//! The named bag-to-bag metrics.

use std::fmt;
use std::str::FromStr;

use crate::align::{align_score, pair_score};
use crate::cluster::{clus_score, DbscanParams};
use crate::corpus::{Bag, EmbeddingTable};
use crate::distributional::{cos_bags, inv_kl, Weighting};
use crate::error::{Error, Result};
use crate::lm::{inv_pp, DEFAULT_DISCOUNT};
use crate::sim::{build_idf, SimilarityFn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    PairBleu3,
    PairRougeL,
    PairCider,
    PairSbert,
    CosTf,
    CosTfidf,
    ClusTf,
    InvPp,
    InvKl,
    AlignBleu3,
    AlignRougeL,
    AlignCider,
    AlignSbert,
}

impl Metric {
    pub const ALL: [Metric; 13] = [
        Metric::PairBleu3,
        Metric::PairRougeL,
        Metric::PairCider,
        Metric::PairSbert,
        Metric::CosTf,
        Metric::CosTfidf,
        Metric::ClusTf,
        Metric::InvPp,
        Metric::InvKl,
        Metric::AlignBleu3,
        Metric::AlignRougeL,
        Metric::AlignCider,
        Metric::AlignSbert,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::PairBleu3 => "pair_bleu3",
            Metric::PairRougeL => "pair_rouge_l",
            Metric::PairCider => "pair_cider",
            Metric::PairSbert => "pair_sbert",
            Metric::CosTf => "cos_tf",
            Metric::CosTfidf => "cos_tfidf",
            Metric::ClusTf => "clus_tf",
            Metric::InvPp => "inv_pp",
            Metric::InvKl => "inv_kl",
            Metric::AlignBleu3 => "align_bleu3",
            Metric::AlignRougeL => "align_rouge_l",
            Metric::AlignCider => "align_cider",
            Metric::AlignSbert => "align_sbert",
        }
    }

    pub fn needs_embeddings(&self) -> bool {
        matches!(self, Metric::PairSbert | Metric::AlignSbert)
    }

    /// Scores generated bag `g` against reference `r`; higher is closer.
    pub fn score(&self, g: &Bag, r: &Bag, cfg: &MetricConfig) -> Result<f64> {
        if g.is_empty() || r.is_empty() {
            return Err(Error::EmptyBag);
        }
        let embeddings = || {
            cfg.embeddings
                .ok_or_else(|| Error::Usage(format!("metric {} requires --embeddings", self.name())))
        };
        match self {
            Metric::PairBleu3 => pair_score(g, r, &SimilarityFn::Bleu3),
            Metric::PairRougeL => pair_score(g, r, &SimilarityFn::RougeL),
            Metric::PairCider => pair_score(g, r, &SimilarityFn::Cider(&build_idf(r, 4))),
            Metric::PairSbert => pair_score(g, r, &SimilarityFn::EmbedCos(embeddings()?)),
            Metric::AlignBleu3 => align_score(g, r, &SimilarityFn::Bleu3, cfg.seed),
            Metric::AlignRougeL => align_score(g, r, &SimilarityFn::RougeL, cfg.seed),
            Metric::AlignCider => align_score(g, r, &SimilarityFn::Cider(&build_idf(r, 4)), cfg.seed),
            Metric::AlignSbert => align_score(g, r, &SimilarityFn::EmbedCos(embeddings()?), cfg.seed),
            Metric::CosTf => cos_bags(g, r, Weighting::Tf),
            Metric::CosTfidf => cos_bags(g, r, Weighting::TfIdf),
            Metric::ClusTf => clus_score(g, r, cfg.dbscan),
            Metric::InvPp => inv_pp(g, r, cfg.kn_discount),
            Metric::InvKl => inv_kl(g, r),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Metric::ALL.iter().map(|m| m.name()).collect();
            Error::Usage(format!("unknown metric {s:?}; registered metrics: {}", names.join(", ")))
        })
    }
}

/// Parses a comma-separated metric list, keeping the given order and
/// dropping repeats.
pub fn parse_metric_list(list: &str) -> Result<Vec<Metric>> {
    let mut out: Vec<Metric> = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m: Metric = name.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::Usage("no metrics requested".into()));
    }
    Ok(out)
}

/// Parameters shared by all metrics.
#[derive(Debug, Clone, Copy)]
pub struct MetricConfig<'a> {
    pub dbscan: DbscanParams,
    pub kn_discount: f64,
    /// Seed for the resampling inside alignment metrics.
    pub seed: u64,
    pub embeddings: Option<&'a EmbeddingTable>,
}

impl Default for MetricConfig<'_> {
    fn default() -> Self {
        MetricConfig {
            dbscan: DbscanParams::default(),
            kn_discount: DEFAULT_DISCOUNT,
            seed: 0,
            embeddings: None,
        }
    }
}

impl MetricConfig<'_> {
    /// Rejects configurations that would fail on every task.
    pub fn check(&self, metrics: &[Metric]) -> Result<()> {
        if let Some(m) = metrics.iter().find(|m| m.needs_embeddings()) {
            if self.embeddings.is_none() {
                return Err(Error::Usage(format!("metric {m} requires --embeddings")));
            }
        }
        if !(self.kn_discount > 0.0 && self.kn_discount < 1.0) {
            return Err(Error::Usage(format!("--kn-discount must lie in (0, 1), got {}", self.kn_discount)));
        }
        if self.dbscan.eps.is_nan() || self.dbscan.eps <= 0.0 || self.dbscan.min_pts == 0 {
            return Err(Error::Usage("--dbscan-eps must be positive and --dbscan-min-pts at least 1".into()));
        }
        Ok(())
    }
}

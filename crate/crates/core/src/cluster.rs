//! Bag similarity by clustering: DBSCAN over the combined bag, scored by
//! how far each cluster's share of reference texts drifts from the global
//! share.

use std::collections::BTreeMap;

use crate::corpus::{Bag, Sentence};
use crate::distributional::{TermVector, INVERSE_EPSILON};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbscanParams {
    /// Maximum cosine distance between neighbors.
    pub eps: f64,
    /// Minimum neighborhood size (the point itself included) for a core point.
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        DbscanParams { eps: 0.4, min_pts: 2 }
    }
}

/// Per-point labels (`None` = noise) and cluster membership lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: Vec<Option<usize>>,
    pub clusters: BTreeMap<usize, Vec<usize>>,
}

impl ClusterAssignment {
    pub fn noise(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_none())
            .map(|(i, _)| i)
    }

    /// Clusters followed by one singleton group per noise point.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        self.clusters
            .values()
            .cloned()
            .chain(self.noise().map(|i| vec![i]))
            .collect()
    }
}

/// `1 - cos(a, b)`; a zero vector is at distance 1 from everything.
pub fn cosine_distance(a: &TermVector, b: &TermVector) -> f64 {
    if a.is_zero() || b.is_zero() {
        return 1.0;
    }
    1.0 - (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0)
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index becomes root
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// DBSCAN under cosine distance. Cluster ids follow the order of each
/// cluster's lowest-indexed core point; a border point reachable from
/// several clusters joins the one with the lowest id.
pub fn dbscan(points: &[TermVector], params: DbscanParams) -> ClusterAssignment {
    assert!(params.eps > 0.0, "eps must be positive");
    assert!(params.min_pts >= 1, "min_pts must be at least 1");
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = par::map_range(n, |i| {
        (0..n)
            .filter(|&j| i == j || cosine_distance(&points[i], &points[j]) <= params.eps)
            .collect()
    });
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= params.min_pts).collect();

    let mut dsu = DisjointSet::new(n);
    for i in (0..n).filter(|&i| core[i]) {
        for &j in &neighbors[i] {
            if core[j] {
                dsu.union(i, j);
            }
        }
    }

    // Roots are the lowest index of each component, so numbering roots in
    // index order numbers clusters by their lowest core point.
    let mut cluster_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut labels = vec![None; n];
    for i in (0..n).filter(|&i| core[i]) {
        let root = dsu.find(i);
        let next = cluster_of_root.len();
        let id = *cluster_of_root.entry(root).or_insert(next);
        labels[i] = Some(id);
    }
    for i in (0..n).filter(|&i| !core[i]) {
        labels[i] = neighbors[i]
            .iter()
            .filter(|&&j| core[j])
            .filter_map(|&j| labels[j])
            .min();
    }

    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            clusters.entry(*c).or_default().push(i);
        }
    }
    ClusterAssignment { labels, clusters }
}

/// Clustering similarity with TF sentence vectors as the encoder.
pub fn clus_score(g: &Bag, r: &Bag, params: DbscanParams) -> Result<f64> {
    clus_score_with(g, r, TermVector::of_sentence, params)
}

/// Clustering similarity with an arbitrary sentence encoder.
///
/// The combined bag keeps duplicates and is put in canonical order (sorted
/// by raw text) before clustering. Noise points count as singleton clusters.
pub fn clus_score_with<E>(g: &Bag, r: &Bag, encode: E, params: DbscanParams) -> Result<f64>
where
    E: Fn(&Sentence) -> TermVector,
{
    if g.is_empty() || r.is_empty() {
        return Err(Error::EmptyBag);
    }
    let mut combined: Vec<(&Sentence, bool)> = g
        .items
        .iter()
        .map(|s| (s, false))
        .chain(r.items.iter().map(|s| (s, true)))
        .collect();
    combined.sort_by(|a, b| a.0.raw.cmp(&b.0.raw).then(a.1.cmp(&b.1)));

    let points: Vec<TermVector> = combined.iter().map(|(s, _)| encode(s)).collect();
    let assignment = dbscan(&points, params);

    let total = combined.len() as f64;
    let expected = r.len() as f64 / total;
    let deviation: f64 = assignment
        .groups()
        .iter()
        .map(|members| {
            let from_r = members.iter().filter(|&&i| combined[i].1).count() as f64;
            let size = members.len() as f64;
            (expected - from_r / size).abs() * size / total
        })
        .sum();
    Ok(1.0 / (deviation + INVERSE_EPSILON))
}

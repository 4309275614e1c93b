//! Semantic token clustering from a bilingual dictionary.
//!
//! Dictionary entries induce an undirected graph on token ids; clusters are
//! its connected components. Tokens sharing a cluster are treated as
//! translation-equivalent by the cluster-level watermark and the mock
//! translator.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::sha256_hex;
use crate::lm::{TokenId, Vocabulary};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("dictionary line {line}: {msg}")]
    DictionaryParse { line: usize, msg: String },
    #[error("token id {id} out of range for {size} clusters entries")]
    TokenOutOfRange { id: TokenId, size: usize },
    #[error("edge endpoint {id} out of range for vocabulary of size {size}")]
    EdgeOutOfRange { id: TokenId, size: usize },
    #[error("clustering artifact is inconsistent: {0}")]
    InvalidArtifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("clustering artifact is not valid JSON")]
    Json(#[from] serde_json::Error),
}

/// Word-pair dictionary between two languages.
///
/// Pairs are stored deduplicated in first-seen order; lookups during graph
/// construction are by surface string against a vocabulary.
#[derive(Debug, Clone)]
pub struct BilingualDictionary {
    pairs: Vec<(String, String)>,
}

impl BilingualDictionary {
    pub fn new(pairs: Vec<(String, String)>) -> Self {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for pair in pairs {
            if seen.insert(pair.clone()) {
                out.push(pair);
            }
        }
        Self { pairs: out }
    }

    /// Parses the tab-separated dictionary format: `source<TAB>target` per
    /// line. Blank lines and lines starting with `#` are skipped. Duplicate
    /// pairs collapse to one.
    pub fn from_tsv_str(content: &str) -> Result<Self, ClusterError> {
        let mut pairs = Vec::new();
        for (i, line) in content.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(src), Some(dst)) = (parts.next(), parts.next()) else {
                return Err(ClusterError::DictionaryParse {
                    line: i + 1,
                    msg: "expected two tab-separated fields".into(),
                });
            };
            if src.is_empty() || dst.is_empty() || parts.next().is_some() {
                return Err(ClusterError::DictionaryParse {
                    line: i + 1,
                    msg: "expected exactly two non-empty fields".into(),
                });
            }
            pairs.push((src.to_string(), dst.to_string()));
        }
        Ok(Self::new(pairs))
    }

    pub fn from_tsv_path(path: &Path) -> Result<Self, ClusterError> {
        let content = std::fs::read_to_string(path)?;
        Self::from_tsv_str(&content)
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_tsv_string(&self) -> String {
        let mut out = String::new();
        for (s, t) in &self.pairs {
            out.push_str(s);
            out.push('\t');
            out.push_str(t);
            out.push('\n');
        }
        out
    }
}

/// Edge list induced by a dictionary over a vocabulary.
#[derive(Debug, Clone)]
pub struct TokenGraph {
    pub edges: Vec<(TokenId, TokenId)>,
    /// Dictionary pairs whose source or target is not in the vocabulary.
    pub skipped_pairs: usize,
}

/// Resolves dictionary pairs against the vocabulary. Pairs with an unknown
/// side are counted and skipped, not errors: dictionaries are larger than any
/// one vocabulary.
pub fn build_graph(vocab: &Vocabulary, dict: &BilingualDictionary) -> TokenGraph {
    let mut edges = Vec::new();
    let mut skipped = 0usize;
    for (src, dst) in dict.pairs() {
        match (vocab.id_of(src), vocab.id_of(dst)) {
            (Some(a), Some(b)) => edges.push((a, b)),
            _ => skipped += 1,
        }
    }
    TokenGraph {
        edges,
        skipped_pairs: skipped,
    }
}

/// Partition of all token ids into clusters.
///
/// Cluster indices are canonical: clusters are numbered in increasing order
/// of their smallest member id, so the same partition always serializes to
/// the same artifact no matter how it was computed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticClustering {
    num_clusters: u32,
    cluster_of: Vec<u32>,
}

impl SemanticClustering {
    pub fn num_clusters(&self) -> u32 {
        self.num_clusters
    }

    /// Number of tokens covered (the vocabulary size it was built for).
    pub fn len(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cluster_of.is_empty()
    }

    pub fn cluster_index(&self, id: TokenId) -> Result<u32, ClusterError> {
        self.cluster_of
            .get(id as usize)
            .copied()
            .ok_or(ClusterError::TokenOutOfRange {
                id,
                size: self.cluster_of.len(),
            })
    }

    pub fn cluster_of(&self) -> &[u32] {
        &self.cluster_of
    }

    /// Token ids in one cluster, ascending.
    pub fn members(&self, cluster: u32) -> Vec<TokenId> {
        (0..self.cluster_of.len() as TokenId)
            .filter(|&id| self.cluster_of[id as usize] == cluster)
            .collect()
    }

    /// Smallest member id per cluster; index by cluster id.
    pub fn canonical_members(&self) -> Vec<TokenId> {
        let mut first = vec![TokenId::MAX; self.num_clusters as usize];
        for (id, &c) in self.cluster_of.iter().enumerate() {
            let slot = &mut first[c as usize];
            if *slot == TokenId::MAX {
                *slot = id as TokenId;
            }
        }
        first
    }

    pub fn to_json_string(&self) -> String {
        // Field order is fixed by the struct; serde_json preserves it, so the
        // artifact bytes are deterministic.
        serde_json::to_string_pretty(self).expect("clustering serializes")
    }

    pub fn from_json_str(content: &str) -> Result<Self, ClusterError> {
        let parsed: Self = serde_json::from_str(content)?;
        parsed.validate()?;
        Ok(parsed)
    }

    pub fn from_json_path(path: &Path) -> Result<Self, ClusterError> {
        let content = std::fs::read_to_string(path)?;
        Self::from_json_str(&content)
    }

    pub fn write_json_path(&self, path: &Path) -> Result<(), ClusterError> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    /// Digest of the serialized artifact; trained watermark models pin this
    /// so a model is never applied under a different clustering.
    pub fn sha256_hex(&self) -> String {
        sha256_hex(self.to_json_string().as_bytes())
    }

    fn validate(&self) -> Result<(), ClusterError> {
        if self.cluster_of.is_empty() {
            return Err(ClusterError::InvalidArtifact("empty cluster_of".into()));
        }
        let n = self.num_clusters;
        let mut seen = vec![false; n as usize];
        for &c in &self.cluster_of {
            if c >= n {
                return Err(ClusterError::InvalidArtifact(format!(
                    "cluster index {c} out of range for num_clusters {n}"
                )));
            }
            seen[c as usize] = true;
        }
        if seen.iter().any(|&s| !s) {
            return Err(ClusterError::InvalidArtifact(
                "some cluster indices are unused".into(),
            ));
        }
        // Canonical numbering: first occurrences must be in increasing order.
        let mut next_expected = 0u32;
        for &c in &self.cluster_of {
            if c == next_expected {
                next_expected += 1;
            } else if c > next_expected {
                return Err(ClusterError::InvalidArtifact(
                    "cluster numbering is not canonical".into(),
                ));
            }
        }
        Ok(())
    }
}

struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        // Path compression.
        let mut cur = x;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (hi, lo) = if self.rank[ra as usize] >= self.rank[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[lo as usize] = hi;
        if self.rank[hi as usize] == self.rank[lo as usize] {
            self.rank[hi as usize] += 1;
        }
    }
}

/// Connected components over `vocab_size` nodes. Every token belongs to
/// exactly one cluster; tokens with no edges form singletons.
pub fn connected_components(
    vocab_size: usize,
    edges: &[(TokenId, TokenId)],
) -> Result<SemanticClustering, ClusterError> {
    for &(a, b) in edges {
        for id in [a, b] {
            if id as usize >= vocab_size {
                return Err(ClusterError::EdgeOutOfRange {
                    id,
                    size: vocab_size,
                });
            }
        }
    }
    let mut uf = UnionFind::new(vocab_size);
    for &(a, b) in edges {
        uf.union(a, b);
    }
    // Canonical relabel: clusters numbered by smallest member id.
    let mut label: HashMap<u32, u32> = HashMap::new();
    let mut cluster_of = vec![0u32; vocab_size];
    let mut next = 0u32;
    for id in 0..vocab_size as u32 {
        let root = uf.find(id);
        let c = *label.entry(root).or_insert_with(|| {
            let c = next;
            next += 1;
            c
        });
        cluster_of[id as usize] = c;
    }
    Ok(SemanticClustering {
        num_clusters: next,
        cluster_of,
    })
}

/// One cluster per token: what X-SIR degenerates to with an empty dictionary.
pub fn singleton_clustering(vocab_size: usize) -> SemanticClustering {
    SemanticClustering {
        num_clusters: vocab_size as u32,
        cluster_of: (0..vocab_size as u32).collect(),
    }
}

/// Clusters a vocabulary with a dictionary in one call.
pub fn cluster_vocabulary(
    vocab: &Vocabulary,
    dict: &BilingualDictionary,
) -> Result<(SemanticClustering, TokenGraph), ClusterError> {
    let graph = build_graph(vocab, dict);
    let clustering = connected_components(vocab.len(), &graph.edges)?;
    Ok((clustering, graph))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        Vocabulary::new(tokens.iter().map(|t| (t.to_string(), None)).collect()).unwrap()
    }

    #[test]
    fn dictionary_parses_comments_blanks_and_dedups() {
        let d = BilingualDictionary::from_tsv_str(
            "# translation pairs\nhouse\t房子\n\nhouse\t房子\ncar\t汽车\n",
        )
        .unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.pairs()[0], ("house".into(), "房子".into()));
    }

    #[test]
    fn dictionary_rejects_malformed_lines() {
        let err = BilingualDictionary::from_tsv_str("a\tb\nbad-line\n").unwrap_err();
        match err {
            ClusterError::DictionaryParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(BilingualDictionary::from_tsv_str("a\tb\tc\n").is_err());
        assert!(BilingualDictionary::from_tsv_str("a\t\n").is_err());
    }

    #[test]
    fn build_graph_skips_unknown_tokens() {
        let v = vocab(&["a", "b", "c"]);
        let d = BilingualDictionary::new(vec![
            ("a".into(), "b".into()),
            ("a".into(), "zzz".into()),
            ("zzz".into(), "c".into()),
        ]);
        let g = build_graph(&v, &d);
        assert_eq!(g.edges, vec![(0, 1)]);
        assert_eq!(g.skipped_pairs, 2);
    }

    #[test]
    fn components_match_hand_worked_example() {
        // Edges 0-1, 1-2 chain into one cluster; 3 is a singleton; 4-5 pair.
        let c = connected_components(6, &[(0, 1), (1, 2), (4, 5)]).unwrap();
        assert_eq!(c.num_clusters(), 3);
        assert_eq!(c.cluster_of(), &[0, 0, 0, 1, 2, 2]);
        assert_eq!(c.members(2), vec![4, 5]);
        assert_eq!(c.canonical_members(), vec![0, 3, 4]);
    }

    #[test]
    fn transitive_chains_merge_across_languages() {
        // en1-zh1, en2-zh1, en1-zh2: all four tokens share one cluster even
        // though en2 and zh2 never co-occur in a pair.
        let v = vocab(&["en1", "en2", "zh1", "zh2", "other"]);
        let d = BilingualDictionary::new(vec![
            ("en1".into(), "zh1".into()),
            ("en2".into(), "zh1".into()),
            ("en1".into(), "zh2".into()),
        ]);
        let (c, g) = cluster_vocabulary(&v, &d).unwrap();
        assert_eq!(g.skipped_pairs, 0);
        assert_eq!(c.num_clusters(), 2);
        assert_eq!(c.cluster_of(), &[0, 0, 0, 0, 1]);
    }

    #[test]
    fn empty_dictionary_gives_singletons() {
        let v = vocab(&["a", "b", "c"]);
        let (c, _) = cluster_vocabulary(&v, &BilingualDictionary::new(vec![])).unwrap();
        assert_eq!(c, singleton_clustering(3));
        assert_eq!(c.num_clusters(), 3);
    }

    #[test]
    fn self_loops_and_duplicate_edges_are_harmless() {
        let c = connected_components(3, &[(0, 0), (1, 2), (2, 1), (1, 2)]).unwrap();
        assert_eq!(c.cluster_of(), &[0, 1, 1]);
    }

    #[test]
    fn out_of_range_edge_is_rejected() {
        assert!(matches!(
            connected_components(3, &[(0, 3)]),
            Err(ClusterError::EdgeOutOfRange { id: 3, size: 3 })
        ));
    }

    #[test]
    fn artifact_round_trips_and_hashes_stably() {
        let c = connected_components(5, &[(1, 3)]).unwrap();
        let json = c.to_json_string();
        let back = SemanticClustering::from_json_str(&json).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.sha256_hex(), c.sha256_hex());
        assert_eq!(c.sha256_hex().len(), 64);
    }

    #[test]
    fn artifact_validation_rejects_corruption() {
        // Index out of range.
        assert!(SemanticClustering::from_json_str(
            "{\"num_clusters\": 2, \"cluster_of\": [0, 5]}"
        )
        .is_err());
        // Unused cluster index.
        assert!(SemanticClustering::from_json_str(
            "{\"num_clusters\": 3, \"cluster_of\": [0, 1, 0]}"
        )
        .is_err());
        // Non-canonical numbering (first occurrences out of order).
        assert!(SemanticClustering::from_json_str(
            "{\"num_clusters\": 2, \"cluster_of\": [1, 0]}"
        )
        .is_err());
        assert!(SemanticClustering::from_json_str(
            "{\"num_clusters\": 0, \"cluster_of\": []}"
        )
        .is_err());
    }

    /// Brute-force reachability oracle: repeated relaxation over the edge
    /// list until labels stop changing.
    fn oracle_components(n: usize, edges: &[(TokenId, TokenId)]) -> Vec<u32> {
        let mut label: Vec<u32> = (0..n as u32).collect();
        loop {
            let mut changed = false;
            for &(a, b) in edges {
                let (la, lb) = (label[a as usize], label[b as usize]);
                let min = la.min(lb);
                if la != min {
                    label[a as usize] = min;
                    changed = true;
                }
                if lb != min {
                    label[b as usize] = min;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        // Propagate to fixpoint: labels are now the min reachable id, which
        // is already the canonical numbering after compaction.
        let mut next = 0u32;
        let mut map = HashMap::new();
        let mut out = vec![0u32; n];
        for i in 0..n {
            let root = label[i];
            let c = *map.entry(root).or_insert_with(|| {
                let c = next;
                next += 1;
                c
            });
            out[i] = c;
        }
        out
    }

    #[test]
    fn oracle_relaxation_reaches_fixpoint_on_chain() {
        // The relaxation oracle needs multiple passes on an adversarial edge
        // order; check it settles correctly on a reversed chain.
        let edges: Vec<(TokenId, TokenId)> = (0..9).map(|i| (8 - i, 9 - i)).collect();
        assert_eq!(oracle_components(10, &edges), vec![0; 10]);
    }

    proptest! {
        #[test]
        fn components_agree_with_reachability_oracle(
            n in 1usize..50,
            raw_edges in proptest::collection::vec((0u32..50, 0u32..50), 0..80),
        ) {
            let edges: Vec<(TokenId, TokenId)> = raw_edges
                .into_iter()
                .map(|(a, b)| (a % n as u32, b % n as u32))
                .collect();
            let c = connected_components(n, &edges).unwrap();
            prop_assert_eq!(c.cluster_of(), &oracle_components(n, &edges)[..]);
        }

        #[test]
        fn components_are_invariant_to_edge_order(
            n in 1usize..30,
            raw_edges in proptest::collection::vec((0u32..30, 0u32..30), 0..40),
            swap_seed in 0u64..1000,
        ) {
            let edges: Vec<(TokenId, TokenId)> = raw_edges
                .into_iter()
                .map(|(a, b)| (a % n as u32, b % n as u32))
                .collect();
            let forward = connected_components(n, &edges).unwrap();
            let mut shuffled = edges.clone();
            shuffled.reverse();
            // Also flip endpoint order on a seed-chosen subset.
            for (i, e) in shuffled.iter_mut().enumerate() {
                if (swap_seed >> (i % 60)) & 1 == 1 {
                    *e = (e.1, e.0);
                }
            }
            let backward = connected_components(n, &shuffled).unwrap();
            prop_assert_eq!(forward, backward);
        }
    }
}

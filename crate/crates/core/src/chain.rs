//! Causal chains: typed DAGs of (entity, variation) steps.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub type NodeId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Visible,
    Invisible,
}

/// Edge type. Anything other than `causes`/`needs` read from a file is kept
/// as `Unknown` so that [`validate`] can report it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum EdgeKind {
    Causes,
    Needs,
    Unknown(String),
}

impl EdgeKind {
    pub fn as_str(&self) -> &str {
        match self {
            EdgeKind::Causes => "causes",
            EdgeKind::Needs => "needs",
            EdgeKind::Unknown(s) => s,
        }
    }
}

impl From<String> for EdgeKind {
    fn from(s: String) -> Self {
        match s.as_str() {
            "causes" => EdgeKind::Causes,
            "needs" => EdgeKind::Needs,
            _ => EdgeKind::Unknown(s),
        }
    }
}

impl From<EdgeKind> for String {
    fn from(k: EdgeKind) -> String {
        k.as_str().to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(NodeId, String, String, Visibility)", into = "(NodeId, String, String, Visibility)")]
pub struct ChainNode {
    pub id: NodeId,
    pub entity: String,
    pub variation: String,
    pub visibility: Visibility,
}

impl ChainNode {
    pub fn new(id: NodeId, entity: &str, variation: &str, visibility: Visibility) -> Self {
        ChainNode {
            id,
            entity: entity.to_string(),
            variation: variation.to_string(),
            visibility,
        }
    }

    /// "entity variation", the text form used for labels and embeddings.
    pub fn phrase(&self) -> String {
        format!("{} {}", self.entity, self.variation)
    }
}

impl From<(NodeId, String, String, Visibility)> for ChainNode {
    fn from((id, entity, variation, visibility): (NodeId, String, String, Visibility)) -> Self {
        ChainNode {
            id,
            entity,
            variation,
            visibility,
        }
    }
}

impl From<ChainNode> for (NodeId, String, String, Visibility) {
    fn from(n: ChainNode) -> Self {
        (n.id, n.entity, n.variation, n.visibility)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(NodeId, NodeId, EdgeKind)", into = "(NodeId, NodeId, EdgeKind)")]
pub struct ChainEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: EdgeKind,
}

impl From<(NodeId, NodeId, EdgeKind)> for ChainEdge {
    fn from((src, dst, kind): (NodeId, NodeId, EdgeKind)) -> Self {
        ChainEdge { src, dst, kind }
    }
}

impl From<ChainEdge> for (NodeId, NodeId, EdgeKind) {
    fn from(e: ChainEdge) -> Self {
        (e.src, e.dst, e.kind)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CausalChain {
    pub nodes: Vec<ChainNode>,
    pub edges: Vec<ChainEdge>,
    pub root: NodeId,
}

impl CausalChain {
    pub fn node(&self, id: NodeId) -> Option<&ChainNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    NoNodes,
    DuplicateNodeId(NodeId),
    EmptyPhrase(NodeId),
    UnknownRoot(NodeId),
    MissingEndpoint { src: NodeId, dst: NodeId },
    UnknownEdgeKind(String),
    Cycle,
    Unreachable(NodeId),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoNodes => write!(f, "chain has no nodes"),
            Violation::DuplicateNodeId(id) => write!(f, "duplicate node id {id}"),
            Violation::EmptyPhrase(id) => write!(f, "node {id} has an empty entity or variation"),
            Violation::UnknownRoot(id) => write!(f, "root {id} is not a node"),
            Violation::MissingEndpoint { src, dst } => write!(f, "edge {src}->{dst} has a missing endpoint"),
            Violation::UnknownEdgeKind(k) => write!(f, "unknown edge kind `{k}`"),
            Violation::Cycle => write!(f, "cycle"),
            Violation::Unreachable(id) => write!(f, "node {id} unreachable from the root"),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ChainError {
    #[error("invalid chain: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "))]
    InvalidChain(Vec<Violation>),
    #[error("unknown linearization template {0}")]
    UnknownTemplate(usize),
    #[error("sample {0} has no chain")]
    NoChain(usize),
    #[error("need {needed} negatives but only {available} are eligible")]
    InsufficientNegatives { needed: usize, available: usize },
}

/// Every violated invariant; empty iff the chain is well formed.
pub fn validate(chain: &CausalChain) -> Vec<Violation> {
    let mut out = Vec::new();
    if chain.nodes.is_empty() {
        out.push(Violation::NoNodes);
        return out;
    }
    let mut ids = BTreeSet::new();
    for n in &chain.nodes {
        if !ids.insert(n.id) {
            out.push(Violation::DuplicateNodeId(n.id));
        }
        if n.entity.trim().is_empty() || n.variation.trim().is_empty() {
            out.push(Violation::EmptyPhrase(n.id));
        }
    }
    if !ids.contains(&chain.root) {
        out.push(Violation::UnknownRoot(chain.root));
    }
    let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for e in &chain.edges {
        if !ids.contains(&e.src) || !ids.contains(&e.dst) {
            out.push(Violation::MissingEndpoint { src: e.src, dst: e.dst });
            continue;
        }
        if let EdgeKind::Unknown(k) = &e.kind {
            out.push(Violation::UnknownEdgeKind(k.clone()));
        }
        adj.entry(e.src).or_default().push(e.dst);
    }
    if topo_order(&ids, &chain.edges).is_none() {
        out.push(Violation::Cycle);
    }
    if ids.contains(&chain.root) {
        let mut seen = BTreeSet::from([chain.root]);
        let mut stack = vec![chain.root];
        while let Some(n) = stack.pop() {
            for &d in adj.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(d) {
                    stack.push(d);
                }
            }
        }
        for id in &ids {
            if !seen.contains(id) {
                out.push(Violation::Unreachable(*id));
            }
        }
    }
    out
}

/// Kahn's algorithm, ties broken by smallest node id.
fn topo_order(ids: &BTreeSet<NodeId>, edges: &[ChainEdge]) -> Option<Vec<NodeId>> {
    let mut indeg: BTreeMap<NodeId, usize> = ids.iter().map(|&i| (i, 0)).collect();
    let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for e in edges {
        if ids.contains(&e.src) && ids.contains(&e.dst) {
            *indeg.get_mut(&e.dst).unwrap() += 1;
            adj.entry(e.src).or_default().push(e.dst);
        }
    }
    let mut ready: BinaryHeap<Reverse<NodeId>> = indeg
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&i, _)| Reverse(i))
        .collect();
    let mut order = Vec::with_capacity(ids.len());
    while let Some(Reverse(n)) = ready.pop() {
        order.push(n);
        for &d in adj.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
            let k = indeg.get_mut(&d).unwrap();
            *k -= 1;
            if *k == 0 {
                ready.push(Reverse(d));
            }
        }
    }
    (order.len() == ids.len()).then_some(order)
}

/// Relation words and separator of a linearization template.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Template {
    pub causes: &'static str,
    pub needs: &'static str,
    pub separator: &'static str,
}

pub const TEMPLATES: [Template; 2] = [
    Template {
        causes: "causes",
        needs: "needs",
        separator: ";",
    },
    Template {
        causes: "then",
        needs: "requires",
        separator: ",",
    },
];

pub const DEFAULT_TEMPLATE: usize = 0;

/// Flatten a chain edge by edge in topological order:
/// `"a causes b; b needs c"`. A chain without edges is its root phrase.
pub fn linearize(chain: &CausalChain, template_id: usize) -> Result<String, ChainError> {
    let tpl = TEMPLATES
        .get(template_id)
        .ok_or(ChainError::UnknownTemplate(template_id))?;
    let violations = validate(chain);
    if !violations.is_empty() {
        return Err(ChainError::InvalidChain(violations));
    }
    let ids: BTreeSet<NodeId> = chain.nodes.iter().map(|n| n.id).collect();
    let order = topo_order(&ids, &chain.edges).expect("validated acyclic");
    let rank: BTreeMap<NodeId, usize> = order.iter().enumerate().map(|(r, &id)| (id, r)).collect();
    if chain.edges.is_empty() {
        return Ok(chain.node(chain.root).unwrap().phrase());
    }
    let mut edges: Vec<&ChainEdge> = chain.edges.iter().collect();
    edges.sort_by_key(|e| (rank[&e.src], rank[&e.dst], e.kind.clone()));
    let parts: Vec<String> = edges
        .iter()
        .map(|e| {
            let rel = match e.kind {
                EdgeKind::Causes => tpl.causes,
                EdgeKind::Needs => tpl.needs,
                EdgeKind::Unknown(_) => unreachable!("validated kinds"),
            };
            format!(
                "{} {rel} {}",
                chain.node(e.src).unwrap().phrase(),
                chain.node(e.dst).unwrap().phrase()
            )
        })
        .collect();
    Ok(parts.join(&format!("{} ", tpl.separator)))
}

/// Positives and negatives for the contrastive objective.
///
/// Positives are the anchor's non-root nodes. Negatives are `m` nodes drawn
/// uniformly without replacement from the other chains in the batch (or from
/// `pool` when the batch holds too few), skipping any node whose
/// phrase also occurs in the anchor chain.
pub fn sample_contrast_nodes<R: Rng + ?Sized>(
    chains: &[Option<&CausalChain>],
    index: usize,
    m: usize,
    pool: &[ChainNode],
    rng: &mut R,
) -> Result<(Vec<ChainNode>, Vec<ChainNode>), ChainError> {
    let anchor = chains
        .get(index)
        .copied()
        .flatten()
        .ok_or(ChainError::NoChain(index))?;
    let positives: Vec<ChainNode> = anchor
        .nodes
        .iter()
        .filter(|n| n.id != anchor.root)
        .cloned()
        .collect();
    let own: BTreeSet<String> = anchor.nodes.iter().map(ChainNode::phrase).collect();
    let mut eligible: Vec<&ChainNode> = chains
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != index)
        .filter_map(|(_, c)| *c)
        .flat_map(|c| c.nodes.iter())
        .filter(|n| !own.contains(&n.phrase()))
        .collect();
    if eligible.len() < m {
        let mut seen: BTreeSet<String> = eligible.iter().map(|n| n.phrase()).collect();
        for n in pool {
            let p = n.phrase();
            if !own.contains(&p) && seen.insert(p) {
                eligible.push(n);
            }
        }
    }
    if eligible.len() < m {
        return Err(ChainError::InsufficientNegatives {
            needed: m,
            available: eligible.len(),
        });
    }
    let picks = rand::seq::index::sample(rng, eligible.len(), m);
    let negatives = picks.iter().map(|i| eligible[i].clone()).collect();
    Ok((positives, negatives))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node(id: NodeId, e: &str, v: &str) -> ChainNode {
        ChainNode::new(id, e, v, Visibility::Visible)
    }

    fn edge(s: NodeId, d: NodeId, k: EdgeKind) -> ChainEdge {
        ChainEdge { src: s, dst: d, kind: k }
    }

    fn kick_chain() -> CausalChain {
        CausalChain {
            nodes: vec![node(0, "mouse", "kicks"), node(1, "dog", "feels pain"), node(2, "dog", "shows a painful expression")],
            edges: vec![edge(0, 1, EdgeKind::Causes), edge(1, 2, EdgeKind::Causes)],
            root: 0,
        }
    }

    #[test]
    fn single_node_is_valid_and_linearizes_to_its_phrase() {
        let c = CausalChain {
            nodes: vec![node(3, "ball", "is dropped")],
            edges: vec![],
            root: 3,
        };
        assert!(validate(&c).is_empty());
        assert_eq!(linearize(&c, 0).unwrap(), "ball is dropped");
    }

    #[test]
    fn detects_cycle_and_unknown_kind() {
        let mut c = kick_chain();
        c.edges.push(edge(2, 1, EdgeKind::Causes));
        assert!(validate(&c).contains(&Violation::Cycle));
        let mut c = kick_chain();
        c.edges[0].kind = EdgeKind::Unknown("prevents".into());
        assert_eq!(validate(&c), vec![Violation::UnknownEdgeKind("prevents".into())]);
        assert!(matches!(linearize(&c, 0), Err(ChainError::InvalidChain(_))));
    }

    #[test]
    fn detects_structural_problems() {
        let mut c = kick_chain();
        c.nodes.push(node(1, "cat", "naps"));
        c.nodes.push(node(7, "cat", " "));
        c.edges.push(edge(0, 9, EdgeKind::Needs));
        c.root = 5;
        let v = validate(&c);
        assert!(v.contains(&Violation::DuplicateNodeId(1)));
        assert!(v.contains(&Violation::EmptyPhrase(7)));
        assert!(v.contains(&Violation::UnknownRoot(5)));
        assert!(v.contains(&Violation::MissingEndpoint { src: 0, dst: 9 }));
    }

    #[test]
    fn linearizes_kick_chain() {
        assert_eq!(
            linearize(&kick_chain(), 0).unwrap(),
            "mouse kicks causes dog feels pain; dog feels pain causes dog shows a painful expression"
        );
        assert_eq!(
            linearize(&kick_chain(), 1).unwrap(),
            "mouse kicks then dog feels pain, dog feels pain then dog shows a painful expression"
        );
        assert_eq!(linearize(&kick_chain(), 2), Err(ChainError::UnknownTemplate(2)));
    }

    #[test]
    fn edge_kind_changes_text() {
        let mut c = kick_chain();
        c.edges[1].kind = EdgeKind::Needs;
        assert_ne!(linearize(&c, 0).unwrap(), linearize(&kick_chain(), 0).unwrap());
    }

    #[test]
    fn serializes_as_arrays() {
        let json = serde_json::to_string(&kick_chain()).unwrap();
        assert!(json.starts_with(r#"{"nodes":[[0,"mouse","kicks","visible"]"#), "{json}");
        assert!(json.contains(r#"[0,1,"causes"]"#));
        let back: CausalChain = serde_json::from_str(&json).unwrap();
        assert_eq!(back, kick_chain());
    }

    #[test]
    fn negatives_come_from_other_samples() {
        let a = kick_chain();
        let b = CausalChain {
            nodes: vec![node(0, "sky", "turns dark"), node(1, "cat", "looks sleepy"), node(2, "lamp", "glows"), node(3, "door", "closes")],
            edges: vec![edge(0, 1, EdgeKind::Causes), edge(0, 2, EdgeKind::Causes), edge(0, 3, EdgeKind::Causes)],
            root: 0,
        };
        let chains = [Some(&a), Some(&b), None];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (pos, neg) = sample_contrast_nodes(&chains, 0, 3, &[], &mut rng).unwrap();
        assert_eq!(pos.len(), 2);
        assert_eq!(neg.len(), 3);
        assert!(neg.iter().all(|n| b.nodes.contains(n)));
        assert_eq!(sample_contrast_nodes(&chains, 2, 3, &[], &mut rng), Err(ChainError::NoChain(2)));
        assert_eq!(
            sample_contrast_nodes(&chains, 0, 5, &[], &mut rng),
            Err(ChainError::InsufficientNegatives { needed: 5, available: 4 })
        );
    }

    #[test]
    fn falls_back_to_pool() {
        let a = kick_chain();
        let pool = vec![node(0, "mouse", "kicks"), node(9, "ball", "rolls"), node(10, "sky", "clears up")];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, neg) = sample_contrast_nodes(&[Some(&a)], 0, 2, &pool, &mut rng).unwrap();
        assert_eq!(neg.len(), 2);
        assert!(neg.iter().all(|n| n.entity != "mouse"));
    }
}

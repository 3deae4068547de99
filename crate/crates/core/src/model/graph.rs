//! The factorized node/edge view of the transformer.
//!
//! Sources write to the residual stream (embedding, each attention head's
//! output, each MLP's output); destinations read from it (each head's Q, K,
//! and V inputs, each MLP's input, and the logits input). An edge (u, v)
//! exists whenever u writes strictly before v reads. Within a layer the event
//! order is: heads read, heads write, MLP reads, MLP writes.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourceNode {
    Embed,
    Head { layer: usize, head: usize },
    Mlp { layer: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DestNode {
    HeadQ { layer: usize, head: usize },
    HeadK { layer: usize, head: usize },
    HeadV { layer: usize, head: usize },
    MlpIn { layer: usize },
    Logits,
}

impl SourceNode {
    /// Node label used in DOT exports and reports.
    pub fn label(&self) -> String {
        match self {
            SourceNode::Embed => "embed".into(),
            SourceNode::Head { layer, head } => format!("a{layer}.h{head}"),
            SourceNode::Mlp { layer } => format!("m{layer}"),
        }
    }

    /// Position of this node's write in the residual-stream event order.
    fn write_rank(&self) -> usize {
        match self {
            SourceNode::Embed => 0,
            SourceNode::Head { layer, .. } => 4 * layer + 2,
            SourceNode::Mlp { layer } => 4 * layer + 4,
        }
    }
}

impl DestNode {
    /// Label of the node this destination belongs to.
    pub fn node_label(&self) -> String {
        match self {
            DestNode::HeadQ { layer, head }
            | DestNode::HeadK { layer, head }
            | DestNode::HeadV { layer, head } => format!("a{layer}.h{head}"),
            DestNode::MlpIn { layer } => format!("m{layer}"),
            DestNode::Logits => "logits".into(),
        }
    }

    /// Which of the node's inputs this destination is ("q"/"k"/"v"/"in").
    pub fn slot(&self) -> &'static str {
        match self {
            DestNode::HeadQ { .. } => "q",
            DestNode::HeadK { .. } => "k",
            DestNode::HeadV { .. } => "v",
            DestNode::MlpIn { .. } => "in",
            DestNode::Logits => "in",
        }
    }

    fn read_rank(&self, n_layers: usize) -> usize {
        match self {
            DestNode::HeadQ { layer, .. }
            | DestNode::HeadK { layer, .. }
            | DestNode::HeadV { layer, .. } => 4 * layer + 1,
            DestNode::MlpIn { layer } => 4 * layer + 3,
            DestNode::Logits => 4 * n_layers + 1,
        }
    }
}

impl fmt::Display for SourceNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

impl fmt::Display for DestNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DestNode::Logits => write!(f, "logits"),
            d => write!(f, "{}.{}", d.node_label(), d.slot()),
        }
    }
}

/// One residual-stream edge, as indices into the graph's node lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub dest: usize,
}

/// The full residual-stream graph with a stable, canonical edge order
/// (source-major, destinations in read order).
#[derive(Debug, Clone)]
pub struct EdgeGraph {
    pub n_layers: usize,
    pub n_heads: usize,
    pub sources: Vec<SourceNode>,
    pub dests: Vec<DestNode>,
    pub edges: Vec<Edge>,
    /// Edge indices grouped by destination, ascending.
    incoming: Vec<Vec<usize>>,
}

impl EdgeGraph {
    /// Enumerate nodes and edges for an (L, H) model.
    pub fn enumerate(n_layers: usize, n_heads: usize) -> EdgeGraph {
        let mut sources = vec![SourceNode::Embed];
        for layer in 0..n_layers {
            for head in 0..n_heads {
                sources.push(SourceNode::Head { layer, head });
            }
            sources.push(SourceNode::Mlp { layer });
        }

        let mut dests = Vec::new();
        for layer in 0..n_layers {
            for head in 0..n_heads {
                dests.push(DestNode::HeadQ { layer, head });
                dests.push(DestNode::HeadK { layer, head });
                dests.push(DestNode::HeadV { layer, head });
            }
            dests.push(DestNode::MlpIn { layer });
        }
        dests.push(DestNode::Logits);

        let mut edges = Vec::new();
        for (si, s) in sources.iter().enumerate() {
            for (di, d) in dests.iter().enumerate() {
                if s.write_rank() < d.read_rank(n_layers) {
                    edges.push(Edge {
                        source: si,
                        dest: di,
                    });
                }
            }
        }

        let mut incoming = vec![Vec::new(); dests.len()];
        for (ei, e) in edges.iter().enumerate() {
            incoming[e.dest].push(ei);
        }

        EdgeGraph {
            n_layers,
            n_heads,
            sources,
            dests,
            edges,
            incoming,
        }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edge indices (canonical order) arriving at destination `dest`.
    pub fn incoming(&self, dest: usize) -> &[usize] {
        &self.incoming[dest]
    }

    /// Index of a destination node in the canonical destination order.
    pub fn dest_index(&self, d: DestNode) -> usize {
        self.dests
            .iter()
            .position(|x| *x == d)
            .expect("destination exists in graph")
    }

    pub fn source_index(&self, s: SourceNode) -> usize {
        self.sources
            .iter()
            .position(|x| *x == s)
            .expect("source exists in graph")
    }

    /// Short structural signature used to match circuits/scores to graphs.
    pub fn signature(&self) -> String {
        format!(
            "L{}H{}E{}",
            self.n_layers,
            self.n_heads,
            self.edges.len()
        )
    }

    /// DOT rendering of the node-level graph. Destinations collapse onto
    /// their owning node; the destination slot becomes the edge label.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph residual_stream {\n  rankdir=TB;\n");
        out.push_str("  embed [shape=box];\n  logits [shape=box];\n");
        for s in &self.sources {
            if !matches!(s, SourceNode::Embed) {
                out.push_str(&format!("  \"{}\";\n", s.label()));
            }
        }
        for e in &self.edges {
            let s = self.sources[e.source].label();
            let d = &self.dests[e.dest];
            out.push_str(&format!(
                "  \"{}\" -> \"{}\" [label=\"{}\"];\n",
                s,
                d.node_label(),
                d.slot()
            ));
        }
        out.push_str("}\n");
        out
    }

    /// DOT rendering of a circuit subgraph with per-edge scores as labels.
    pub fn circuit_dot(&self, edge_indices: &[usize], scores: Option<&[f64]>) -> String {
        let mut out = String::from("digraph circuit {\n  rankdir=TB;\n");
        let mut nodes = std::collections::BTreeSet::new();
        for &ei in edge_indices {
            let e = &self.edges[ei];
            nodes.insert(self.sources[e.source].label());
            nodes.insert(self.dests[e.dest].node_label());
        }
        for n in &nodes {
            let shape = if n == "embed" || n == "logits" {
                " [shape=box]"
            } else {
                ""
            };
            out.push_str(&format!("  \"{n}\"{shape};\n"));
        }
        for &ei in edge_indices {
            let e = &self.edges[ei];
            let label = match scores {
                Some(sc) => format!("{}: {:.4}", self.dests[e.dest].slot(), sc[ei]),
                None => self.dests[e.dest].slot().to_string(),
            };
            out.push_str(&format!(
                "  \"{}\" -> \"{}\" [label=\"{}\"];\n",
                self.sources[e.source].label(),
                self.dests[e.dest].node_label(),
                label
            ));
        }
        out.push_str("}\n");
        out
    }
}

/// Closed-form edge count; must agree with [`EdgeGraph::enumerate`].
pub fn edge_count_closed_form(n_layers: usize, n_heads: usize) -> usize {
    let l = n_layers;
    let h = n_heads;
    let d = 3 * l * h + l + 1;
    let mut total = d; // embed reaches every destination
    for layer in 0..l {
        let later = (l - 1 - layer) * (3 * h + 1);
        total += h * (2 + later); // each head: own mlp + logits + later reads
        total += later + 1; // the mlp: later reads + logits
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_edge_counts_match_exhaustive_enumeration() {
        // L=1,H=1: embed→5 dests, head→{mlp_in, logits}, mlp→logits
        assert_eq!(EdgeGraph::enumerate(1, 1).n_edges(), 8);
        assert_eq!(EdgeGraph::enumerate(2, 2).n_edges(), 46);
    }

    #[test]
    fn node_counts() {
        let g = EdgeGraph::enumerate(2, 2);
        assert_eq!(g.sources.len(), 1 + 2 * 2 + 2);
        assert_eq!(g.dests.len(), 3 * 2 * 2 + 2 + 1);
    }

    #[test]
    fn closed_form_matches_enumeration_up_to_six() {
        for l in 1..=6 {
            for h in 1..=6 {
                assert_eq!(
                    edge_count_closed_form(l, h),
                    EdgeGraph::enumerate(l, h).n_edges(),
                    "L={l} H={h}"
                );
            }
        }
    }

    #[test]
    fn gpt_neo_small_shape_has_32491_edges() {
        assert_eq!(EdgeGraph::enumerate(12, 12).n_edges(), 32_491);
    }

    #[test]
    fn every_destination_reachable_from_embed() {
        let g = EdgeGraph::enumerate(3, 2);
        for (di, _) in g.dests.iter().enumerate() {
            assert!(
                g.incoming(di).iter().any(|&ei| g.edges[ei].source == 0),
                "destination {di} unreachable from embed"
            );
        }
    }

    #[test]
    fn edges_are_source_major_ordered() {
        let g = EdgeGraph::enumerate(3, 3);
        for w in g.edges.windows(2) {
            assert!(
                (w[0].source, w[0].dest) < (w[1].source, w[1].dest),
                "edge order violated"
            );
        }
    }

    #[test]
    fn dot_export_uses_node_labels() {
        let g = EdgeGraph::enumerate(1, 2);
        let dot = g.to_dot();
        assert!(dot.contains("\"a0.h1\""));
        assert!(dot.contains("\"m0\""));
        assert!(dot.contains("embed"));
        assert!(dot.contains("logits"));
    }
}

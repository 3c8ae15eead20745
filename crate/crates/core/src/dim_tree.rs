//! Binary dimension trees and their edge enumeration.
//!
//! A dimension tree over the modes `{0, .., d-1}` is a rooted binary tree whose
//! nodes are mode subsets. Every non-root node `n` induces the matricization
//! that separates the modes of `n` from its complement. The two children of the
//! root induce the same matricization, so a tree of order `d` has `2d - 3`
//! distinct edges.
//!
//! For the tensor network view used by [`crate::htensor`], the root is
//! removed and its two children are joined directly. The resulting unrooted
//! tree has one *site* per non-root node and exactly one bond per edge, so
//! "putting the root element on edge `t`" amounts to moving the orthogonality
//! center onto bond `t`.

use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};

/// Index of an edge in the enumeration (equal to its position in the sweep).
pub type EdgeId = usize;
/// Index of a site (a non-root tree node) in the tensor network.
pub type SiteId = usize;

/// One non-root node of the tree seen as a tensor network site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Site {
    /// Tree node this site stands for.
    pub node: usize,
    /// Mode index for leaves, `None` for interior sites.
    pub mode: Option<usize>,
    /// Bonds in core axis order: `[parent]` for leaves (after the physical
    /// axis), `[left child, right child, parent]` for interior sites.
    pub bonds: Vec<EdgeId>,
}

/// An edge `{n_t, [n_t]}` of the tree together with the two sites it joins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    /// Tree node whose mode set is `n_t`.
    pub node: usize,
    /// `n_t`, sorted.
    pub modes: Vec<usize>,
    /// `[n_t]`, the complement of `modes`, sorted.
    pub complement: Vec<usize>,
    /// `(site on the n_t side, site on the complement side)`.
    pub sites: (SiteId, SiteId),
}

impl Edge {
    /// The other end of the edge, seen from `site`.
    pub fn other(&self, site: SiteId) -> SiteId {
        if self.sites.0 == site {
            self.sites.1
        } else {
            self.sites.0
        }
    }

    pub fn touches(&self, site: SiteId) -> bool {
        self.sites.0 == site || self.sites.1 == site
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", ModeSet(&self.modes), ModeSet(&self.complement))
    }
}

/// Displays a 0-based mode set with 1-based labels, e.g. `{1,2}`.
pub struct ModeSet<'a>(pub &'a [usize]);

impl fmt::Display for ModeSet<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, m) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", m + 1)?;
        }
        write!(f, "}}")
    }
}

/// A binary dimension tree with a fixed edge enumeration.
///
/// Immutable after construction. The enumeration doubles as the sweep order
/// of the soft thresholding operator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionTree {
    order: usize,
    nodes: Vec<Vec<usize>>,
    children: Vec<Option<(usize, usize)>>,
    parent: Vec<Option<usize>>,
    root: usize,
    node_site: Vec<Option<SiteId>>,
    sites: Vec<Site>,
    edges: Vec<Edge>,
    // next_hop[a][b]: neighbor of a on the path to b (a itself when a == b)
    next_hop: Vec<Vec<SiteId>>,
}

impl DimensionTree {
    /// The degenerate (tensor-train shaped) tree whose interior nodes are
    /// `{1..k}` for `k = 2..d`.
    pub fn linear(order: usize) -> Result<Self> {
        Self::build(order, |set| {
            let (last, head) = set.split_last().expect("non-empty set");
            (head.to_vec(), vec![*last])
        })
    }

    /// The balanced tree obtained by splitting every node in halves.
    pub fn balanced(order: usize) -> Result<Self> {
        Self::build(order, |set| {
            let mid = set.len() / 2;
            (set[..mid].to_vec(), set[mid..].to_vec())
        })
    }

    fn build<F>(order: usize, split: F) -> Result<Self>
    where
        F: Fn(&[usize]) -> (Vec<usize>, Vec<usize>),
    {
        if order < 2 {
            return Err(Error::InvalidOrder(order));
        }
        let mut nodes = Vec::new();
        let mut children = Vec::new();
        let mut parent = Vec::new();
        let mut stack = vec![((0..order).collect::<Vec<_>>(), None::<usize>, false)];
        // iterative construction; children are linked once both are created
        while let Some((set, par, is_right)) = stack.pop() {
            let id = nodes.len();
            nodes.push(set.clone());
            children.push(None);
            parent.push(par);
            if let Some(p) = par {
                let entry: &mut Option<(usize, usize)> = &mut children[p];
                match entry {
                    Some((l, r)) => {
                        if is_right {
                            *r = id;
                        } else {
                            *l = id;
                        }
                    }
                    None => {
                        *entry = Some(if is_right { (usize::MAX, id) } else { (id, usize::MAX) });
                    }
                }
            }
            if set.len() > 1 {
                let (left, right) = split(&set);
                stack.push((right, Some(id), true));
                stack.push((left, Some(id), false));
            }
        }
        Self::from_parts(order, nodes, children, parent, 0)
    }

    fn from_parts(
        order: usize,
        nodes: Vec<Vec<usize>>,
        children: Vec<Option<(usize, usize)>>,
        parent: Vec<Option<usize>>,
        root: usize,
    ) -> Result<Self> {
        for (id, ch) in children.iter().enumerate() {
            if let Some((l, r)) = *ch {
                let mut joined: Vec<usize> = nodes[l].iter().chain(&nodes[r]).copied().collect();
                joined.sort_unstable();
                if joined != nodes[id] || nodes[l].is_empty() || nodes[r].is_empty() {
                    return Err(Error::InvalidTree(format!(
                        "children of {} do not partition it",
                        ModeSet(&nodes[id])
                    )));
                }
            } else if nodes[id].len() != 1 {
                return Err(Error::InvalidTree(format!(
                    "leaf {} is not a singleton",
                    ModeSet(&nodes[id])
                )));
            }
        }

        // sites in post-order so that leaves of the left part come first
        let post = post_order(root, &children);
        let mut node_site = vec![None; nodes.len()];
        let mut sites = Vec::new();
        for &n in &post {
            if n != root {
                node_site[n] = Some(sites.len());
                sites.push(Site {
                    node: n,
                    mode: if children[n].is_none() { Some(nodes[n][0]) } else { None },
                    bonds: Vec::new(),
                });
            }
        }

        let (root_left, root_right) = children[root].expect("root of order >= 2 has children");
        let mut edges: Vec<Edge> = Vec::new();
        let mut edge_of_node = vec![None; nodes.len()];
        for &n in &post {
            if n == root {
                continue;
            }
            let p = parent[n].expect("non-root node has a parent");
            let edge = if p == root {
                let sibling = if n == root_left { root_right } else { root_left };
                if let Some(e) = edge_of_node[sibling] {
                    edge_of_node[n] = Some(e);
                    continue;
                }
                // merged root edge: label it by the smaller side
                let side = if (nodes[n].len(), &nodes[n]) <= (nodes[sibling].len(), &nodes[sibling]) {
                    n
                } else {
                    sibling
                };
                let other = if side == n { sibling } else { n };
                Edge {
                    node: side,
                    modes: nodes[side].clone(),
                    complement: nodes[other].clone(),
                    sites: (node_site[side].unwrap(), node_site[other].unwrap()),
                }
            } else {
                Edge {
                    node: n,
                    modes: nodes[n].clone(),
                    complement: complement(order, &nodes[n]),
                    sites: (node_site[n].unwrap(), node_site[p].unwrap()),
                }
            };
            edge_of_node[n] = Some(edges.len());
            edges.push(edge);
        }

        for site in sites.iter_mut() {
            let n = site.node;
            if let Some((l, r)) = children[n] {
                site.bonds.push(edge_of_node[l].unwrap());
                site.bonds.push(edge_of_node[r].unwrap());
            }
            site.bonds.push(edge_of_node[n].unwrap());
        }

        let next_hop = next_hops(&sites, &edges);
        Ok(Self {
            order,
            nodes,
            children,
            parent,
            root,
            node_site,
            sites,
            edges,
            next_hop,
        })
    }

    /// Tensor order `d`.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }

    /// Mode subset of tree node `node` (0-based modes).
    pub fn node_modes(&self, node: usize) -> &[usize] {
        &self.nodes[node]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn children(&self, node: usize) -> Option<(usize, usize)> {
        self.children[node]
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn site_of_node(&self, node: usize) -> Option<SiteId> {
        self.node_site[node]
    }

    /// Edges in enumeration order, which is also the sweep schedule.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, t: EdgeId) -> &Edge {
        &self.edges[t]
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site(&self, s: SiteId) -> &Site {
        &self.sites[s]
    }

    /// Site holding the leaf of `mode`.
    pub fn leaf_site(&self, mode: usize) -> SiteId {
        self.sites
            .iter()
            .position(|s| s.mode == Some(mode))
            .expect("every mode has a leaf")
    }

    /// Complement `[n_t]` of the mode set of edge `t`.
    pub fn complement_of(&self, t: EdgeId) -> &[usize] {
        &self.edges[t].complement
    }

    /// Neighbor of `from` on the path towards `to`.
    pub fn next_hop(&self, from: SiteId, to: SiteId) -> SiteId {
        self.next_hop[from][to]
    }

    /// Sites on the path from `from` to `to`, both ends included.
    pub fn path(&self, from: SiteId, to: SiteId) -> Vec<SiteId> {
        let mut path = vec![from];
        let mut cur = from;
        while cur != to {
            cur = self.next_hop[cur][to];
            path.push(cur);
        }
        path
    }

    /// Number of bonds between two sites.
    pub fn distance(&self, a: SiteId, b: SiteId) -> usize {
        self.path(a, b).len() - 1
    }

    /// Bond joining two neighboring sites.
    pub fn bond_between(&self, a: SiteId, b: SiteId) -> Option<EdgeId> {
        self.sites[a]
            .bonds
            .iter()
            .copied()
            .find(|&e| self.edges[e].other(a) == b && self.edges[e].touches(a))
    }

    /// Whether consecutive scheduled edges always share a site, i.e. every step
    /// of the sweep needs exactly one root move.
    pub fn schedule_is_adjacent(&self) -> bool {
        self.edges.windows(2).all(|w| {
            let (a, b) = w[0].sites;
            w[1].touches(a) || w[1].touches(b)
        })
    }

    /// Modes on the side of `site` away from bond `edge`, in the order the
    /// network contraction produces them (subtrees concatenated depth-first).
    pub fn modes_away(&self, site: SiteId, edge: EdgeId) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_modes_away(site, edge, &mut out);
        out
    }

    fn collect_modes_away(&self, site: SiteId, edge: EdgeId, out: &mut Vec<usize>) {
        let s = &self.sites[site];
        if let Some(m) = s.mode {
            out.push(m);
            return;
        }
        for &b in &s.bonds {
            if b != edge {
                self.collect_modes_away(self.edges[b].other(site), b, out);
            }
        }
    }
}

fn complement(order: usize, set: &[usize]) -> Vec<usize> {
    (0..order).filter(|m| !set.contains(m)).collect()
}

fn post_order(root: usize, children: &[Option<(usize, usize)>]) -> Vec<usize> {
    let mut out = Vec::with_capacity(children.len());
    let mut stack = vec![(root, false)];
    while let Some((n, expanded)) = stack.pop() {
        match children[n] {
            Some((l, r)) if !expanded => {
                stack.push((n, true));
                stack.push((r, false));
                stack.push((l, false));
            }
            _ => out.push(n),
        }
    }
    out
}

#[allow(clippy::needless_range_loop)]
fn next_hops(sites: &[Site], edges: &[Edge]) -> Vec<Vec<SiteId>> {
    let n = sites.len();
    let mut table = vec![vec![usize::MAX; n]; n];
    for target in 0..n {
        table[target][target] = target;
        let mut queue = VecDeque::from([target]);
        while let Some(cur) = queue.pop_front() {
            for &b in &sites[cur].bonds {
                let nb = edges[b].other(cur);
                if table[nb][target] == usize::MAX {
                    table[nb][target] = cur;
                    queue.push_back(nb);
                }
            }
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(tree: &DimensionTree) -> Vec<String> {
        tree.edges().iter().map(|e| e.to_string()).collect()
    }

    #[test]
    fn order_below_two_is_rejected() {
        assert!(matches!(DimensionTree::linear(1), Err(Error::InvalidOrder(1))));
        assert!(matches!(DimensionTree::linear(0), Err(Error::InvalidOrder(0))));
    }

    #[test]
    fn linear_two_has_one_edge() {
        let tree = DimensionTree::linear(2).unwrap();
        assert_eq!(labels(&tree), ["{1}|{2}"]);
        assert_eq!(tree.complement_of(0), &[1]);
        assert_eq!(tree.num_sites(), 2);
    }

    #[test]
    fn linear_three_edges() {
        let tree = DimensionTree::linear(3).unwrap();
        assert_eq!(labels(&tree), ["{1}|{2,3}", "{2}|{1,3}", "{3}|{1,2}"]);
    }

    #[test]
    fn linear_four_matches_root_moves() {
        let tree = DimensionTree::linear(4).unwrap();
        assert_eq!(
            labels(&tree),
            [
                "{1}|{2,3,4}",
                "{2}|{1,3,4}",
                "{1,2}|{3,4}",
                "{3}|{1,2,4}",
                "{4}|{1,2,3}"
            ]
        );
        assert_eq!(tree.complement_of(2), &[2, 3]);
    }

    #[test]
    fn edge_count_and_adjacency_up_to_64() {
        for d in 2..=64 {
            let tree = DimensionTree::linear(d).unwrap();
            assert_eq!(tree.num_edges(), 2 * d - 3, "d = {d}");
            assert!(tree.schedule_is_adjacent(), "d = {d}");
            assert_eq!(tree.num_sites(), 2 * d - 2);
        }
    }

    #[test]
    fn edges_are_distinct_cuts() {
        for d in 2..=12 {
            for tree in [DimensionTree::linear(d).unwrap(), DimensionTree::balanced(d).unwrap()] {
                let mut cuts: Vec<Vec<usize>> = tree
                    .edges()
                    .iter()
                    .map(|e| {
                        // normalize to the side containing mode 0
                        if e.modes.contains(&0) {
                            e.modes.clone()
                        } else {
                            e.complement.clone()
                        }
                    })
                    .collect();
                cuts.sort();
                cuts.dedup();
                assert_eq!(cuts.len(), 2 * d - 3);
            }
        }
    }

    #[test]
    fn complement_is_an_involution() {
        let tree = DimensionTree::balanced(7).unwrap();
        for e in tree.edges() {
            let back = complement(7, &e.complement);
            assert_eq!(back, e.modes);
        }
    }

    #[test]
    fn construction_is_deterministic() {
        assert_eq!(DimensionTree::linear(9).unwrap(), DimensionTree::linear(9).unwrap());
    }

    #[test]
    fn modes_away_match_edge_sides() {
        for tree in [DimensionTree::linear(6).unwrap(), DimensionTree::balanced(6).unwrap()] {
            for (t, e) in tree.edges().iter().enumerate() {
                let mut a = tree.modes_away(e.sites.0, t);
                let mut b = tree.modes_away(e.sites.1, t);
                a.sort_unstable();
                b.sort_unstable();
                assert_eq!(a, e.modes);
                assert_eq!(b, e.complement);
            }
        }
    }

    #[test]
    fn bonds_link_neighbors() {
        let tree = DimensionTree::balanced(5).unwrap();
        for (t, e) in tree.edges().iter().enumerate() {
            assert_eq!(tree.bond_between(e.sites.0, e.sites.1), Some(t));
            assert_eq!(tree.distance(e.sites.0, e.sites.1), 1);
        }
    }
}

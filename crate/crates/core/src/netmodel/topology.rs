use std::collections::VecDeque;

/// A radial network oriented away from its root.
///
/// Edges keep the index they were declared with; `forward[e]` tells whether
/// the declared `from` end is the upstream one.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialTree {
    pub root: usize,
    /// Upstream and downstream node of every edge.
    pub ends: Vec<(usize, usize)>,
    pub forward: Vec<bool>,
    /// Edge feeding each node from upstream (`None` at the root).
    pub parent_edge: Vec<Option<usize>>,
    /// Edges leaving each node downstream.
    pub child_edges: Vec<Vec<usize>>,
    /// Nodes in breadth-first order from the root.
    pub order: Vec<usize>,
}

impl RadialTree {
    /// Orients `edges` from `root`. Fails when the graph is not a spanning tree.
    pub fn build(nodes: usize, edges: &[(usize, usize)], root: usize) -> Result<RadialTree, String> {
        if nodes == 0 || root >= nodes {
            return Err("root node is missing".into());
        }
        if edges.len() + 1 != nodes {
            return Err(format!(
                "a radial network with {nodes} nodes needs {} edges, found {}",
                nodes - 1,
                edges.len()
            ));
        }
        let mut adjacent = vec![Vec::new(); nodes];
        for (e, &(a, b)) in edges.iter().enumerate() {
            if a == b {
                return Err(format!("edge {e} is a self loop"));
            }
            adjacent[a].push(e);
            adjacent[b].push(e);
        }
        let mut seen = vec![false; nodes];
        let mut parent_edge = vec![None; nodes];
        let mut ends = vec![(0, 0); edges.len()];
        let mut forward = vec![true; edges.len()];
        let mut child_edges = vec![Vec::new(); nodes];
        let mut order = Vec::with_capacity(nodes);
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(n) = queue.pop_front() {
            order.push(n);
            for &e in &adjacent[n] {
                if parent_edge[n] == Some(e) {
                    continue;
                }
                let (a, b) = edges[e];
                let other = if a == n { b } else { a };
                if seen[other] {
                    return Err("network contains a cycle".into());
                }
                seen[other] = true;
                parent_edge[other] = Some(e);
                ends[e] = (n, other);
                forward[e] = a == n;
                child_edges[n].push(e);
                queue.push_back(other);
            }
        }
        if order.len() != nodes {
            return Err("network is not connected".into());
        }
        Ok(RadialTree { root, ends, forward, parent_edge, child_edges, order })
    }

    pub fn upstream(&self, e: usize) -> usize {
        self.ends[e].0
    }

    pub fn downstream(&self, e: usize) -> usize {
        self.ends[e].1
    }

    pub fn edges(&self) -> usize {
        self.ends.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orients_reversed_edges() {
        let t = RadialTree::build(3, &[(1, 0), (1, 2)], 0).unwrap();
        assert_eq!(t.ends, vec![(0, 1), (1, 2)]);
        assert_eq!(t.forward, vec![false, true]);
        assert_eq!(t.order, vec![0, 1, 2]);
    }

    #[test]
    fn rejects_cycles_and_islands() {
        assert!(RadialTree::build(3, &[(0, 1), (1, 2), (2, 0)], 0).is_err());
        assert!(RadialTree::build(4, &[(0, 1), (1, 0), (2, 3)], 0).is_err());
    }
}

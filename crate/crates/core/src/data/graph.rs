use std::sync::Arc;

use crate::autodiff::CsrMatrix;

use super::DataError;

/// Symmetric bipartite user-item graph with GCN normalization.
///
/// Node `u` is user `u`; node `num_users + i` is item `i`. For an edge the
/// coefficient is `1 / sqrt(|N_m| |N_n|)` over distinct neighbours. The self
/// coefficient is `1 / |N_m|`, or `1` for an isolated node.
#[derive(Clone, Debug)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    adjacency: Arc<CsrMatrix>,
    self_coef: Arc<Vec<f64>>,
    degrees: Vec<usize>,
}

impl InteractionGraph {
    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn item_node(&self, item: usize) -> usize {
        self.num_users + item
    }

    /// Neighbour coefficients, rows sorted by source node.
    pub fn adjacency(&self) -> &Arc<CsrMatrix> {
        &self.adjacency
    }

    pub fn self_coefficients(&self) -> &Arc<Vec<f64>> {
        &self.self_coef
    }

    pub fn degree(&self, node: usize) -> usize {
        self.degrees[node]
    }

    pub fn coefficient(&self, m: usize, n: usize) -> f64 {
        if m == n {
            self.self_coef[m]
        } else {
            self.adjacency.get(m, n)
        }
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }
}

/// Builds the normalized graph from `(user, item)` pairs; repeated pairs
/// count as one edge.
pub fn build_graph<I>(
    num_users: usize,
    num_items: usize,
    pairs: I,
) -> Result<InteractionGraph, DataError>
where
    I: IntoIterator<Item = (usize, usize)>,
{
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for (u, i) in pairs {
        if u >= num_users || i >= num_items {
            return Err(DataError::IndexOutOfRange { user: u, item: i });
        }
        edges.push((u, i));
    }
    edges.sort_unstable();
    edges.dedup();

    let n = num_users + num_items;
    let mut degrees = vec![0usize; n];
    for &(u, i) in &edges {
        degrees[u] += 1;
        degrees[num_users + i] += 1;
    }
    let mut triplets = Vec::with_capacity(edges.len() * 2);
    for &(u, i) in &edges {
        let inode = num_users + i;
        let a = 1.0 / ((degrees[u] * degrees[inode]) as f64).sqrt();
        triplets.push((u, inode, a));
        triplets.push((inode, u, a));
    }
    let self_coef = degrees
        .iter()
        .map(|&d| if d == 0 { 1.0 } else { 1.0 / d as f64 })
        .collect();
    Ok(InteractionGraph {
        num_users,
        num_items,
        adjacency: Arc::new(CsrMatrix::from_triplets(n, n, &triplets)),
        self_coef: Arc::new(self_coef),
        degrees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge_has_unit_coefficient() {
        let g = build_graph(1, 1, [(0, 0)]).unwrap();
        assert_eq!(g.coefficient(0, 1), 1.0);
        assert_eq!(g.coefficient(1, 0), 1.0);
    }

    #[test]
    fn degree_four_user_to_leaf_item() {
        let g = build_graph(1, 4, (0..4).map(|i| (0, i))).unwrap();
        assert_eq!(g.coefficient(0, g.item_node(2)), 0.5);
    }

    #[test]
    fn star_of_nine() {
        let g = build_graph(1, 9, (0..9).map(|i| (0, i))).unwrap();
        for i in 0..9 {
            assert!((g.coefficient(0, g.item_node(i)) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn isolated_nodes_keep_self() {
        let g = build_graph(2, 2, [(0, 0)]).unwrap();
        assert_eq!(g.coefficient(1, 1), 1.0);
        assert_eq!(g.coefficient(3, 3), 1.0);
        assert_eq!(g.degree(1), 0);
    }

    #[test]
    fn repeated_pairs_are_one_edge() {
        let g = build_graph(1, 2, [(0, 0), (0, 0), (0, 1)]).unwrap();
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.degree(0), 2);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(build_graph(1, 1, [(0, 1)]).is_err());
    }
}

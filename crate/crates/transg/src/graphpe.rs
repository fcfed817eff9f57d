//! Skeleton graph construction and Laplacian positional encoding.
//!
//! The skeleton is an undirected graph over body joints. Node positional
//! encodings are the K smallest non-trivial eigenvectors of the symmetric
//! normalized Laplacian, computed once per dataset and shared by every
//! skeleton (all skeletons of a dataset use the same adjacency).

use crate::error::{Result, TransgError};
use crate::numerics::sym_eig;

/// Eigenvalues at or below this are the trivial (per-component zero) modes.
pub const TRIVIAL_EIG_TOL: f64 = 1e-8;

/// A skeleton graph with its derived spectral quantities.
#[derive(Debug, Clone)]
pub struct SkeletonGraphSpec {
    pub joints: usize,
    pub edges: Vec<(usize, usize)>,
    /// Binary symmetric adjacency, row-major J x J.
    pub adjacency: Vec<Vec<f64>>,
    /// Node degrees.
    pub degree: Vec<f64>,
    /// Symmetric normalized Laplacian I - D^{-1/2} A D^{-1/2}.
    pub laplacian: Vec<Vec<f64>>,
    /// Row i is node i's positional encoding in R^K. Empty until
    /// [`compute_pe`] runs (or when K = 0).
    pub pe_matrix: Vec<Vec<f64>>,
    /// Eigenvalues matching the kept PE columns.
    pub pe_eigenvalues: Vec<f64>,
    pub pe_dim: usize,
}

/// Validates an edge list against a joint count: indices in range, no
/// self-loops, no duplicates.
pub fn validate_edges(joints: usize, edges: &[(usize, usize)]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for &(i, j) in edges {
        if i >= joints || j >= joints {
            return Err(TransgError::Config(format!(
                "edge ({i},{j}) references a joint outside 0..{joints}"
            )));
        }
        if i == j {
            return Err(TransgError::Config(format!("self-loop edge ({i},{i})")));
        }
        let key = (i.min(j), i.max(j));
        if !seen.insert(key) {
            return Err(TransgError::Config(format!(
                "duplicate edge ({},{})",
                key.0, key.1
            )));
        }
    }
    Ok(())
}

/// Builds adjacency, degree, and normalized Laplacian. The PE matrix is left
/// empty; call [`compute_pe`] to fill it.
pub fn build_graph(joints: usize, edges: &[(usize, usize)]) -> Result<SkeletonGraphSpec> {
    validate_edges(joints, edges)?;
    let mut adjacency = vec![vec![0.0; joints]; joints];
    for &(i, j) in edges {
        adjacency[i][j] = 1.0;
        adjacency[j][i] = 1.0;
    }
    let degree: Vec<f64> = adjacency.iter().map(|row| row.iter().sum()).collect();
    if let Some(i) = degree.iter().position(|&d| d == 0.0) {
        return Err(TransgError::Config(format!(
            "isolated joint {i}: D^(-1/2) undefined for degree 0"
        )));
    }
    let inv_sqrt_d: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut laplacian = vec![vec![0.0; joints]; joints];
    for i in 0..joints {
        for j in 0..joints {
            let norm_a = inv_sqrt_d[i] * adjacency[i][j] * inv_sqrt_d[j];
            laplacian[i][j] = if i == j { 1.0 - norm_a } else { -norm_a };
        }
    }
    Ok(SkeletonGraphSpec {
        joints,
        edges: edges.to_vec(),
        adjacency,
        degree,
        laplacian,
        pe_matrix: vec![vec![]; joints],
        pe_eigenvalues: vec![],
        pe_dim: 0,
    })
}

/// Fills the positional-encoding matrix with the K smallest non-trivial
/// eigenvectors of the Laplacian. K = 0 yields an empty encoding.
pub fn compute_pe(mut spec: SkeletonGraphSpec, k: usize) -> Result<SkeletonGraphSpec> {
    if k == 0 {
        spec.pe_matrix = vec![vec![]; spec.joints];
        spec.pe_eigenvalues = vec![];
        spec.pe_dim = 0;
        return Ok(spec);
    }
    let (eigenvalues, eigenvectors) = sym_eig(&spec.laplacian)?;
    let nontrivial: Vec<usize> = (0..spec.joints)
        .filter(|&i| eigenvalues[i] > TRIVIAL_EIG_TOL)
        .collect();
    if k > nontrivial.len() {
        return Err(TransgError::Config(format!(
            "PE dimension K={k} exceeds the {} non-trivial eigenvalues; spectrum: {:?}",
            nontrivial.len(),
            eigenvalues
        )));
    }
    let kept = &nontrivial[..k];
    spec.pe_matrix = (0..spec.joints)
        .map(|i| kept.iter().map(|&col| eigenvectors[i][col]).collect())
        .collect();
    spec.pe_eigenvalues = kept.iter().map(|&col| eigenvalues[col]).collect();
    spec.pe_dim = k;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> SkeletonGraphSpec {
        build_graph(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn path_degrees() {
        let g = path3();
        assert_eq!(g.degree, vec![1.0, 2.0, 1.0]);
    }

    #[test]
    fn self_loop_rejected() {
        assert!(build_graph(3, &[(0, 1), (2, 2)]).is_err());
    }

    #[test]
    fn isolated_node_rejected() {
        assert!(build_graph(3, &[(0, 1)]).is_err());
    }

    #[test]
    fn duplicate_edge_rejected() {
        assert!(build_graph(3, &[(0, 1), (1, 0), (1, 2)]).is_err());
    }

    #[test]
    fn path_laplacian_matches_hand_computation() {
        // Hand arithmetic: off-diagonal entries -1/sqrt(2) on the path edges.
        let g = path3();
        let s = 1.0 / 2.0_f64.sqrt();
        let want = [[1.0, -s, 0.0], [-s, 1.0, -s], [0.0, -s, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((g.laplacian[i][j] - want[i][j]).abs() < 1e-12);
                assert!((g.laplacian[i][j] - g.laplacian[j][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn path_pe_k1_is_middle_eigenvector() {
        // Eigenvalue 1 of the path Laplacian has eigenvector (1/sqrt2, 0, -1/sqrt2);
        // verified componentwise via the eigen-equation below.
        let g = compute_pe(path3(), 1).unwrap();
        assert_eq!(g.pe_dim, 1);
        assert!((g.pe_eigenvalues[0] - 1.0).abs() < 1e-10);
        let s = 1.0 / 2.0_f64.sqrt();
        let expected = [s, 0.0, -s];
        for i in 0..3 {
            assert!((g.pe_matrix[i][0] - expected[i]).abs() < 1e-9);
        }
        // Eigen-equation check.
        for i in 0..3 {
            let lhs: f64 = (0..3).map(|j| g.laplacian[i][j] * g.pe_matrix[j][0]).sum();
            assert!((lhs - g.pe_eigenvalues[0] * g.pe_matrix[i][0]).abs() < 1e-9);
        }
    }

    #[test]
    fn connected_graph_skips_exactly_one_trivial() {
        let g = path3();
        let max_k = compute_pe(g.clone(), 2).unwrap();
        assert_eq!(max_k.pe_dim, 2);
        assert!(compute_pe(g, 3).is_err());
    }

    #[test]
    fn k_zero_is_empty() {
        let g = compute_pe(path3(), 0).unwrap();
        assert_eq!(g.pe_dim, 0);
        assert!(g.pe_matrix.iter().all(|row| row.is_empty()));
    }

    #[test]
    fn disconnected_graph_skips_all_trivial() {
        // Two disjoint edges: two components, two zero eigenvalues.
        let g = build_graph(4, &[(0, 1), (2, 3)]).unwrap();
        let g = compute_pe(g, 2).unwrap();
        for lambda in &g.pe_eigenvalues {
            assert!(*lambda > TRIVIAL_EIG_TOL);
        }
    }
}

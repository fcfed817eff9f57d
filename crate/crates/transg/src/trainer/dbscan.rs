use crate::error::{Result, TransgError};

/// Standard DBSCAN over Euclidean distance. Returns one label per point:
/// cluster ids 0, 1, ... in discovery order, -1 for noise.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Result<Vec<i64>> {
    if eps <= 0.0 {
        return Err(TransgError::Config(format!("eps must be > 0, got {eps}")));
    }
    let n = points.len();
    let dist2 = |a: usize, b: usize| -> f64 {
        points[a]
            .iter()
            .zip(&points[b])
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    };
    let eps2 = eps * eps;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist2(i, j) <= eps2).collect())
        .collect();

    const UNVISITED: i64 = -2;
    let mut labels = vec![UNVISITED; n];
    let mut cluster = 0i64;
    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        if neighbors[i].len() < min_pts {
            labels[i] = -1;
            continue;
        }
        labels[i] = cluster;
        let mut frontier = neighbors[i].clone();
        let mut cursor = 0;
        while cursor < frontier.len() {
            let q = frontier[cursor];
            cursor += 1;
            if labels[q] == -1 {
                labels[q] = cluster; // border point
            }
            if labels[q] != UNVISITED {
                continue;
            }
            labels[q] = cluster;
            if neighbors[q].len() >= min_pts {
                frontier.extend_from_slice(&neighbors[q]);
            }
        }
        cluster += 1;
    }
    Ok(labels)
}

/// L2-normalizes each representation row, then clusters with [`dbscan`].
pub fn pseudo_label(reps: &[Vec<f64>], eps: f64, min_pts: usize) -> Result<Vec<i64>> {
    let normalized: Vec<Vec<f64>> = reps
        .iter()
        .map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            r.iter().map(|v| v / n).collect()
        })
        .collect();
    dbscan(&normalized, eps, min_pts)
}

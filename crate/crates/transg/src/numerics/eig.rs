use crate::error::{Result, TransgError};

/// Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues sorted ascending and eigenvectors as columns of `u`
/// (`u[i][k]` is component i of eigenvector k, matching eigenvalue k). Each
/// eigenvector is sign-fixed so that its largest-magnitude component is
/// positive; on ties the first such component decides.
pub fn sym_eig(m: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = m.len();
    for row in m {
        if row.len() != n {
            return Err(TransgError::Contract(format!(
                "sym_eig expects a square matrix, got row of length {} in a {}x{} input",
                row.len(),
                n,
                n
            )));
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[i][j] - m[j][i]).abs() > 1e-10 {
                return Err(TransgError::Contract(format!(
                    "sym_eig input not symmetric: |m[{i}][{j}] - m[{j}][{i}]| = {}",
                    (m[i][j] - m[j][i]).abs()
                )));
            }
        }
    }
    if n == 0 {
        return Ok((vec![], vec![]));
    }

    let mut a = m.to_vec();
    let mut u = vec![vec![0.0; n]; n];
    for (i, row) in u.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    let max_sweeps = 100;
    for _ in 0..max_sweeps {
        let mut off: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                // Rotation angle annihilating a[p][q].
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in u.iter_mut() {
                    let ukp = row[p];
                    let ukq = row[q];
                    row[p] = c * ukp - s * ukq;
                    row[q] = s * ukp + c * ukq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).unwrap());

    let mut eigenvalues = Vec::with_capacity(n);
    let mut vectors = vec![vec![0.0; n]; n];
    for (k, &src) in order.iter().enumerate() {
        eigenvalues.push(a[src][src]);
        // Sign fix: largest-magnitude component positive, first on ties.
        let mut best = 0;
        for i in 1..n {
            if u[i][src].abs() > u[best][src].abs() {
                best = i;
            }
        }
        let sign = if u[best][src] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[i][k] = sign * u[i][src];
        }
    }
    Ok((eigenvalues, vectors))
}

use num_complex::Complex64;
use ppi_core::linalg::ComplexMatrix;

/// Commutant dimension by Gaussian elimination on the Sylvester equations
/// `(XA − AX)_{ij} = Σ_k X_{ik} A_{kj} − A_{ik} X_{kj} = 0`, unknowns
/// `X_{ab}` in row-major order, for every `A` in `ops` and its adjoint.
pub fn commutant_dim_gauss(ops: &[ComplexMatrix], d: usize) -> usize {
    let n = d * d;
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    for a in ops {
        for m in [a.clone(), a.adjoint()] {
            for i in 0..d {
                for j in 0..d {
                    let mut row = vec![Complex64::new(0.0, 0.0); n];
                    for k in 0..d {
                        row[i * d + k] += m[(k, j)];
                        row[k * d + j] -= m[(i, k)];
                    }
                    rows.push(row);
                }
            }
        }
    }
    // Pivots are measured against the operators, not the system, which can
    // vanish up to rounding.
    let scale = ops
        .iter()
        .flat_map(|a| a.iter().map(|z| z.norm()))
        .fold(1.0, f64::max);
    n - gauss_rank(rows, n, 1e-8 * scale)
}

fn gauss_rank(mut rows: Vec<Vec<Complex64>>, n: usize, threshold: f64) -> usize {
    let mut rank = 0;
    for col in 0..n {
        let pivot =
            (rank..rows.len()).max_by(|&a, &b| rows[a][col].norm().total_cmp(&rows[b][col].norm()));
        let Some(p) = pivot else { break };
        if rows[p][col].norm() <= threshold {
            continue;
        }
        rows.swap(rank, p);
        let pivot_row = rows[rank].clone();
        for row in rows.iter_mut().skip(rank + 1) {
            let f = row[col] / pivot_row[col];
            if f.norm() == 0.0 {
                continue;
            }
            for c in col..n {
                row[c] -= f * pivot_row[c];
            }
        }
        rank += 1;
    }
    rank
}

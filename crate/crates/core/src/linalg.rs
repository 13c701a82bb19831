//! Small dense kernels: Cholesky on `n x n` blocks and a block-tridiagonal
//! solver built from them. Matrices are row-major flat slices.

/// In-place Cholesky factorization `A = L L^T`; the lower triangle of `a`
/// is overwritten with `L`. Returns `false` if `A` is not positive definite.
pub(crate) fn cholesky(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

/// Solves `L L^T x = b` in place given the factor from [`cholesky`].
pub(crate) fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves a symmetric block-tridiagonal system by block elimination.
///
/// `diag[k]` are the `m` diagonal blocks, `upper[k]` couples block `k` to
/// `k + 1` (the lower blocks are its transposes), `rhs` holds `m` stacked
/// vectors. Returns `None` when some Schur complement fails to be positive
/// definite, which for the callers means the Hessian needs damping.
pub(crate) fn block_tridiagonal_spd_solve(
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
    m: usize,
    n: usize,
) -> Option<Vec<f64>> {
    if n == 1 {
        return tridiagonal_spd_solve(diag, upper, rhs);
    }
    let nn = n * n;
    let mut factors = vec![0.0; m * nn];
    // g[k] = F_k^{-1} U_k stored column by column, used in the back sweep
    let mut g = vec![0.0; m.saturating_sub(1) * nn];
    let mut y = rhs.to_vec();
    let mut col = vec![0.0; n];

    for k in 0..m {
        let block = &mut factors[k * nn..(k + 1) * nn];
        block.copy_from_slice(&diag[k * nn..(k + 1) * nn]);
        if k > 0 {
            // S_k = D_k - U_{k-1}^T F_{k-1}^{-1} U_{k-1} = D_k - U_{k-1}^T g_{k-1}
            let u = &upper[(k - 1) * nn..k * nn];
            let gp = &g[(k - 1) * nn..k * nn];
            for r in 0..n {
                for c in 0..n {
                    let mut s = 0.0;
                    for t in 0..n {
                        s += u[t * n + r] * gp[t * n + c];
                    }
                    block[r * n + c] -= s;
                }
            }
            // y_k -= U_{k-1}^T F_{k-1}^{-1} y_{k-1}; y_{k-1} already holds F^{-1}y in the w-buffer below
            let (prev, cur) = y.split_at_mut(k * n);
            let yp = &prev[(k - 1) * n..];
            let mut w = yp.to_vec();
            let lp = &factors[(k - 1) * nn..k * nn];
            cholesky_solve(lp, n, &mut w);
            for r in 0..n {
                let mut s = 0.0;
                for t in 0..n {
                    s += u[t * n + r] * w[t];
                }
                cur[r] -= s;
            }
        }
        let block = &mut factors[k * nn..(k + 1) * nn];
        if !cholesky(block, n) {
            return None;
        }
        if k + 1 < m {
            let u = &upper[k * nn..(k + 1) * nn];
            let lk = &factors[k * nn..(k + 1) * nn];
            for c in 0..n {
                for t in 0..n {
                    col[t] = u[t * n + c];
                }
                cholesky_solve(lk, n, &mut col);
                for t in 0..n {
                    g[k * nn + t * n + c] = col[t];
                }
            }
        }
    }

    // back substitution: x_k = S_k^{-1} y_k - g_k x_{k+1}
    let mut x = vec![0.0; m * n];
    for k in (0..m).rev() {
        let mut v = y[k * n..(k + 1) * n].to_vec();
        cholesky_solve(&factors[k * nn..(k + 1) * nn], n, &mut v);
        if k + 1 < m {
            let gk = &g[k * nn..(k + 1) * nn];
            for r in 0..n {
                let mut s = 0.0;
                for t in 0..n {
                    s += gk[r * n + t] * x[(k + 1) * n + t];
                }
                v[r] -= s;
            }
        }
        x[k * n..(k + 1) * n].copy_from_slice(&v);
    }
    Some(x)
}

/// Scalar case of [`block_tridiagonal_spd_solve`] via `L D L^T`.
fn tridiagonal_spd_solve(diag: &[f64], upper: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let m = diag.len();
    let mut d = vec![0.0; m];
    let mut x = rhs.to_vec();
    for k in 0..m {
        let mut dk = diag[k];
        if k > 0 {
            let l = upper[k - 1] / d[k - 1];
            dk -= l * upper[k - 1];
            x[k] -= l * x[k - 1];
        }
        if !(dk > 0.0) || !dk.is_finite() {
            return None;
        }
        d[k] = dk;
    }
    for k in (0..m).rev() {
        let mut v = x[k];
        if k + 1 < m {
            v -= upper[k] * x[k + 1];
        }
        x[k] = v / d[k];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_from_blocks(diag: &[f64], upper: &[f64], m: usize, n: usize) -> Vec<f64> {
        let dim = m * n;
        let mut a = vec![0.0; dim * dim];
        for k in 0..m {
            for r in 0..n {
                for c in 0..n {
                    a[(k * n + r) * dim + k * n + c] = diag[k * n * n + r * n + c];
                    if k + 1 < m {
                        let u = upper[k * n * n + r * n + c];
                        a[(k * n + r) * dim + (k + 1) * n + c] = u;
                        a[((k + 1) * n + c) * dim + k * n + r] = u;
                    }
                }
            }
        }
        a
    }

    #[test]
    fn block_solver_matches_dense_cholesky() {
        let (m, n) = (6, 2);
        let mut diag = vec![0.0; m * n * n];
        let mut upper = vec![0.0; (m - 1) * n * n];
        for k in 0..m {
            diag[k * 4] = 4.0 + k as f64 * 0.1;
            diag[k * 4 + 1] = 0.3;
            diag[k * 4 + 2] = 0.3;
            diag[k * 4 + 3] = 5.0;
            if k + 1 < m {
                upper[k * 4] = -1.0;
                upper[k * 4 + 1] = 0.2;
                upper[k * 4 + 2] = -0.1;
                upper[k * 4 + 3] = -1.2;
            }
        }
        let rhs: Vec<f64> = (0..m * n).map(|i| (i as f64 * 0.7).sin()).collect();
        let x = block_tridiagonal_spd_solve(&diag, &upper, &rhs, m, n).unwrap();
        let mut a = dense_from_blocks(&diag, &upper, m, n);
        assert!(cholesky(&mut a, m * n));
        let mut b = rhs.clone();
        cholesky_solve(&a, m * n, &mut b);
        for (u, v) in x.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_path_matches_dense_cholesky() {
        let m = 9;
        let diag: Vec<f64> = (0..m).map(|k| 2.5 + 0.1 * k as f64).collect();
        let upper: Vec<f64> = (0..m - 1).map(|k| -1.0 + 0.05 * k as f64).collect();
        let rhs: Vec<f64> = (0..m).map(|i| (i as f64).cos()).collect();
        let x = block_tridiagonal_spd_solve(&diag, &upper, &rhs, m, 1).unwrap();
        let mut a = dense_from_blocks(&diag, &upper, m, 1);
        assert!(cholesky(&mut a, m));
        let mut b = rhs.clone();
        cholesky_solve(&a, m, &mut b);
        for (u, v) in x.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_blocks_are_reported() {
        let diag = vec![1.0, -2.0];
        let upper = vec![0.5];
        assert!(block_tridiagonal_spd_solve(&diag, &upper, &[1.0, 1.0], 2, 1).is_none());
    }
}

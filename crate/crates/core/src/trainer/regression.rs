use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::model::{theta_hat, CountCache};
use crate::scalar::{from_usize, lit, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct NuSigma<T> {
    pub nu: Vec<T>,
    /// `max(floor, sigma2_raw)`.
    pub sigma2: T,
    /// `(b'b - b'A nu) / rows`, before flooring.
    pub sigma2_raw: T,
}

/// Solves the SPD system `g x = r` (row-major `k×k`) by Cholesky with one
/// step of iterative refinement.
fn cholesky_solve<T: Real>(g: &[T], r: &[T], k: usize) -> Result<Vec<T>> {
    let mut l = vec![T::zero(); k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = g[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            if i == j {
                if !(s > T::zero()) {
                    return Err(Error::InvalidConfig(
                        "regression normal matrix is not positive definite; raise ridge_eps".into(),
                    ));
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    let solve = |rhs: &[T]| {
        let mut y = vec![T::zero(); k];
        for i in 0..k {
            let mut s = rhs[i];
            for p in 0..i {
                s -= l[i * k + p] * y[p];
            }
            y[i] = s / l[i * k + i];
        }
        for i in (0..k).rev() {
            let mut s = y[i];
            for p in i + 1..k {
                s -= l[p * k + i] * y[p];
            }
            y[i] = s / l[i * k + i];
        }
        y
    };
    let mut x = solve(r);
    let resid: Vec<T> = (0..k)
        .map(|i| r[i] - (0..k).map(|j| g[i * k + j] * x[j]).sum::<T>())
        .collect();
    for (xi, di) in x.iter_mut().zip(solve(&resid)) {
        *xi += di;
    }
    Ok(x)
}

/// Ridge-stabilized least squares `(A'A + eps I) nu = A'b` and
/// `sigma2 = (b'b - b'A nu) / rows`.
pub fn solve_nu_sigma<T: Real>(rows: &[Vec<T>], b: &[T], ridge_eps: T, sigma2_floor: T) -> Result<NuSigma<T>> {
    if rows.is_empty() {
        return Err(Error::EmptyLabelView);
    }
    if rows.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            found: b.len(),
        });
    }
    let k = rows[0].len();
    let mut g = vec![T::zero(); k * k];
    let mut r = vec![T::zero(); k];
    for (row, &y) in rows.iter().zip(b) {
        if row.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: row.len(),
            });
        }
        for i in 0..k {
            r[i] += row[i] * y;
            for j in 0..k {
                g[i * k + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..k {
        g[i * k + i] += ridge_eps;
    }
    let nu = cholesky_solve(&g, &r, k)?;
    let btb: T = b.iter().map(|&y| y * y).sum();
    let bt_a_nu: T = r.iter().zip(&nu).map(|(&a, &n)| a * n).sum();
    let sigma2_raw = (btb - bt_a_nu) / from_usize(rows.len());
    let sigma2 = if sigma2_raw > sigma2_floor { sigma2_raw } else { sigma2_floor };
    Ok(NuSigma { nu, sigma2, sigma2_raw })
}

/// Refits the label regression on the unsmoothed thetahat of every labeled
/// user with at least one document or link.
pub fn maximize_nu_sigma<T: Real>(
    data: &Dataset,
    cache: &CountCache,
    ridge_eps: T,
    sigma2_floor: T,
) -> Result<NuSigma<T>> {
    let mut rows = Vec::new();
    let mut b = Vec::new();
    for i in 0..data.n_users() {
        if let (Some(label), true) = (data.label(i), cache.user_denom[i] > 0) {
            rows.push(theta_hat(cache, i, T::one(), false)?);
            b.push(lit(label.value()));
        }
    }
    solve_nu_sigma(&rows, &b, ridge_eps, sigma2_floor)
}

//! Label-prediction harness: bag-of-words features, feature concatenation,
//! an L2-regularized logistic-loss linear classifier, and seeded k-fold
//! cross-validation with a paired fold layout.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::corpus::{Dataset, Label};
use crate::error::{Error, Result};
use crate::rng::{substream, StreamTag};
use crate::scalar::{from_usize, lit, Real};

/// Normalized word frequencies over all of user `p`'s documents.
pub fn bow_features<T: Real>(data: &Dataset, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.vocab_size()];
    let user = data.user(p);
    let n = user.n_words();
    if n == 0 {
        return out;
    }
    for &t in user.docs.iter().flatten() {
        out[t as usize] += T::one();
    }
    let n = from_usize::<T>(n);
    for x in &mut out {
        *x /= n;
    }
    out
}

/// `[bow | theta]`.
pub fn concat_features<T: Real>(bow: &[T], theta: &[T], v: usize, k: usize) -> Result<Vec<T>> {
    if bow.len() != v {
        return Err(Error::DimensionMismatch { expected: v, found: bow.len() });
    }
    if theta.len() != k {
        return Err(Error::DimensionMismatch { expected: k, found: theta.len() });
    }
    Ok(bow.iter().chain(theta).copied().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub iterations: usize,
    /// Objective after each accepted step, starting at the initial point.
    pub objective_trace: Vec<T>,
}

impl<T: Real> LinearModel<T> {
    pub fn decision(&self, x: &[T]) -> T {
        x.iter().zip(&self.weights).map(|(&a, &w)| a * w).sum::<T>() + self.bias
    }

    pub fn predict(&self, x: &[T]) -> Label {
        if self.decision(x) >= T::zero() {
            Label::Pos
        } else {
            Label::Neg
        }
    }
}

/// `log(1 + exp(x))` without overflow.
fn softplus<T: Real>(x: T) -> T {
    let m = if x > T::zero() { x } else { T::zero() };
    m + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Objective `reg/2 |w|^2 + sum_i log(1 + exp(-y_i (w.x_i + b)))` and its
/// gradient over the packed parameter vector `[w..., b]`. The bias is not
/// regularized.
pub fn logistic_objective<T: Real>(x: &[Vec<T>], y: &[T], reg: T, params: &[T], grad: &mut [T]) -> T {
    let d = params.len() - 1;
    let (w, b) = (&params[..d], params[d]);
    let mut obj = T::zero();
    for (g, &wi) in grad[..d].iter_mut().zip(w) {
        *g = reg * wi;
        obj += lit::<T>(0.5) * reg * wi * wi;
    }
    grad[d] = T::zero();
    for (xi, &yi) in x.iter().zip(y) {
        let margin = yi * (xi.iter().zip(w).map(|(&a, &c)| a * c).sum::<T>() + b);
        obj += softplus(-margin);
        let coef = -yi * sigmoid(-margin);
        for (g, &a) in grad[..d].iter_mut().zip(xi) {
            *g += coef * a;
        }
        grad[d] += coef;
    }
    obj
}

const GRAD_TOL: f64 = 1e-6;
const MAX_ITERS: usize = 10_000;
const HISTORY: usize = 10;

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Fits the linear model by limited-memory BFGS with an Armijo backtracking
/// line search, so the objective decreases at every accepted step.
pub fn train_linear_classifier<T: Real>(x: &[Vec<T>], labels: &[Label], reg: T) -> Result<LinearModel<T>> {
    if x.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: labels.len() });
    }
    if !labels.contains(&Label::Pos) || !labels.contains(&Label::Neg) {
        return Err(Error::SingleClass);
    }
    let d = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, found: bad.len() });
    }
    let y: Vec<T> = labels.iter().map(|l| lit(l.value())).collect();
    let n = d + 1;
    let mut params = vec![T::zero(); n];
    let mut grad = vec![T::zero(); n];
    let mut obj = logistic_objective(x, &y, reg, &params, &mut grad);
    let mut trace = vec![obj];
    let mut s_hist: Vec<Vec<T>> = Vec::new();
    let mut y_hist: Vec<Vec<T>> = Vec::new();
    let mut new_params = vec![T::zero(); n];
    let mut new_grad = vec![T::zero(); n];
    let tol = lit::<T>(GRAD_TOL);
    let c1 = lit::<T>(1e-4);
    let mut iterations = 0;

    while iterations < MAX_ITERS && norm(&grad) > tol {
        iterations += 1;
        // two-loop recursion
        let mut dir: Vec<T> = grad.iter().map(|&g| -g).collect();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, yv) in s_hist.iter().zip(&y_hist).rev() {
            let rho = T::one() / dot(yv, s);
            let a = rho * dot(s, &dir);
            for (di, &yi) in dir.iter_mut().zip(yv) {
                *di -= a * yi;
            }
            alphas.push((rho, a));
        }
        if let (Some(s), Some(yv)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, yv) / dot(yv, yv);
            for di in dir.iter_mut() {
                *di *= gamma;
            }
        } else {
            let scale = T::one() / norm(&grad);
            let scale = if scale < T::one() { scale } else { T::one() };
            for di in dir.iter_mut() {
                *di *= scale;
            }
        }
        for ((s, yv), (rho, a)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * dot(yv, &dir);
            for (di, &si) in dir.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        let mut slope = dot(&grad, &dir);
        if !(slope < T::zero()) {
            s_hist.clear();
            y_hist.clear();
            dir = grad.iter().map(|&g| -g).collect();
            slope = dot(&grad, &dir);
        }

        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            for ((np, &p), &di) in new_params.iter_mut().zip(&params).zip(&dir) {
                *np = p + step * di;
            }
            let new_obj = logistic_objective(x, &y, reg, &new_params, &mut new_grad);
            if new_obj <= obj + c1 * step * slope && new_obj < obj {
                accepted = Some(new_obj);
                break;
            }
            step *= lit(0.5);
        }
        let Some(new_obj) = accepted else {
            break;
        };
        let s: Vec<T> = new_params.iter().zip(&params).map(|(&a, &b)| a - b).collect();
        let yv: Vec<T> = new_grad.iter().zip(&grad).map(|(&a, &b)| a - b).collect();
        if dot(&s, &yv) > T::epsilon() * dot(&yv, &yv) {
            if s_hist.len() == HISTORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(yv);
        }
        std::mem::swap(&mut params, &mut new_params);
        std::mem::swap(&mut grad, &mut new_grad);
        obj = new_obj;
        trace.push(obj);
    }
    let bias = params.pop().expect("bias slot");
    Ok(LinearModel {
        weights: params,
        bias,
        iterations,
        objective_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// `(user index, predicted correctly)` for every labeled user.
    pub predictions: Vec<(usize, bool)>,
}

impl CvResult {
    pub fn n_correct(&self) -> u64 {
        self.predictions.iter().filter(|p| p.1).count() as u64
    }
}

/// Seeded shuffle of the labeled users split into `folds` contiguous chunks.
/// The same seed always yields the same partition, which keeps comparisons
/// between feature sets paired.
pub fn fold_partition(data: &Dataset, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut labeled: Vec<usize> = (0..data.n_users()).filter(|&i| data.label(i).is_some()).collect();
    if folds < 2 || labeled.len() < folds {
        return Err(Error::InsufficientLabels {
            needed: folds.max(2),
            found: labeled.len(),
        });
    }
    labeled.shuffle(&mut substream(seed, StreamTag::CvShuffle, 0));
    let n = labeled.len();
    Ok((0..folds)
        .map(|f| labeled[f * n / folds..(f + 1) * n / folds].to_vec())
        .collect())
}

/// k-fold cross-validated accuracy of the linear classifier on `features`
/// (indexed by user).
pub fn cross_validate<T: Real>(
    data: &Dataset,
    features: &[Vec<T>],
    folds: usize,
    seed: u64,
    reg: T,
) -> Result<CvResult> {
    if features.len() != data.n_users() {
        return Err(Error::DimensionMismatch { expected: data.n_users(), found: features.len() });
    }
    let parts = fold_partition(data, folds, seed)?;
    let per_fold: Vec<Result<Vec<(usize, bool)>>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = parts
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, p)| p.iter().copied())
                .collect();
            let x: Vec<Vec<T>> = train.iter().map(|&i| features[i].clone()).collect();
            let y: Vec<Label> = train.iter().map(|&i| data.label(i).expect("labeled")).collect();
            let model = train_linear_classifier(&x, &y, reg)?;
            Ok(parts[f]
                .iter()
                .map(|&i| (i, model.predict(&features[i]) == data.label(i).expect("labeled")))
                .collect())
        })
        .collect();
    let mut fold_accuracies = Vec::with_capacity(folds);
    let mut predictions = Vec::new();
    for fold in per_fold {
        let fold = fold?;
        let correct = fold.iter().filter(|p| p.1).count();
        fold_accuracies.push(correct as f64 / fold.len() as f64);
        predictions.extend(fold);
    }
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / folds as f64;
    Ok(CvResult {
        fold_accuracies,
        mean_accuracy,
        predictions,
    })
}

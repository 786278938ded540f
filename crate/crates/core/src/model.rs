//! Hyperparameters, latent state, incrementally maintained sufficient
//! statistics, and the posterior-mean parameter recovery formulas.

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::scalar::{from_count, from_usize, Real};

/// Symmetric K×K quantity stored as its upper triangle (diagonal included).
/// Every access canonicalizes `(a, b)` to `(min, max)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriangularMatrix<V> {
    k: usize,
    data: Vec<V>,
}

impl<V: Clone> TriangularMatrix<V> {
    pub fn filled(k: usize, value: V) -> Self {
        TriangularMatrix {
            k,
            data: vec![value; k * (k + 1) / 2],
        }
    }
}

impl<V> TriangularMatrix<V> {
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    fn offset(&self, a: usize, b: usize) -> usize {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        debug_assert!(hi < self.k);
        lo * (2 * self.k - lo + 1) / 2 + (hi - lo)
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> &V {
        &self.data[self.offset(a, b)]
    }

    #[inline]
    pub fn get_mut(&mut self, a: usize, b: usize) -> &mut V {
        let o = self.offset(a, b);
        &mut self.data[o]
    }

    /// Canonical pairs `(a, b)`, `a <= b`, in lexicographic order with values.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &V)> + '_ {
        (0..self.k)
            .flat_map(move |a| (a..self.k).map(move |b| (a, b)))
            .zip(self.data.iter())
    }

    pub fn values(&self) -> &[V] {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams<T> {
    pub k: usize,
    pub alpha: T,
    pub eta: T,
    pub delta: T,
    pub lambda1: T,
    pub lambda0: T,
}

impl<T: Real> Hyperparams<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.k >= 1
            && self.alpha > T::zero()
            && self.eta > T::zero()
            && self.delta > T::zero()
            && self.delta < T::one()
            && self.lambda1 > T::zero()
            && self.lambda0 > T::zero();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("hyperparameters out of range: {self:?}")))
        }
    }
}

/// `ln((P(P-1)/2 - n_edges) / K^2)`, the zero-link pseudo-count.
pub fn compute_lambda0<T: Real>(p: usize, n_edges: usize, k: usize) -> Result<T> {
    let pairs = p as f64 * (p as f64 - 1.0) / 2.0;
    let zero_links = pairs - n_edges as f64;
    let ratio = zero_links / (k * k) as f64;
    if !(ratio > 1.0) {
        return Err(Error::NonPositiveLambda0 { zero_links, k });
    }
    Ok(T::from_f64(ratio.ln()).expect("finite"))
}

/// Learned topic parameters plus the label regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicParams<T> {
    pub k: usize,
    pub v: usize,
    /// Row-major K×V.
    pub beta: Vec<T>,
    pub beta_back: Vec<T>,
    pub phi: TriangularMatrix<T>,
    pub nu: Vec<T>,
    pub sigma2: T,
}

impl<T: Real> TopicParams<T> {
    pub fn beta_row(&self, a: usize) -> &[T] {
        &self.beta[a * self.v..(a + 1) * self.v]
    }
}

/// Latent indicators over the flat document/word/edge layout of a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentState {
    /// Topic per global document.
    pub z: Vec<u32>,
    /// Foreground flag per global word.
    pub f: Vec<bool>,
    /// Per edge `(i, j)`, `i < j`: `[s_ij, s_ji]`.
    pub s: Vec<[u32; 2]>,
}

impl LatentState {
    pub fn check_shape(&self, data: &Dataset, k: usize) -> Result<()> {
        let layout = data.layout();
        let ok = self.z.len() == layout.n_docs()
            && self.f.len() == layout.n_words()
            && self.s.len() == data.edges().len()
            && self.z.iter().all(|&t| (t as usize) < k)
            && self.s.iter().flatten().all(|&t| (t as usize) < k);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("latent state does not match dataset".into()))
        }
    }
}

/// Sufficient statistics of a [`LatentState`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountCache {
    pub k: usize,
    pub v: usize,
    /// P×K counts of a user's document and half-link topics.
    pub user_topic: Vec<u32>,
    /// `D_i + |Neighbors(i)|`.
    pub user_denom: Vec<u32>,
    /// K×V foreground word counts.
    pub topic_word: Vec<u32>,
    pub topic_word_total: Vec<u32>,
    pub back_word: Vec<u32>,
    pub back_total: u32,
    pub pair_link: TriangularMatrix<u32>,
}

impl CountCache {
    pub fn empty(p: usize, k: usize, v: usize) -> Self {
        CountCache {
            k,
            v,
            user_topic: vec![0; p * k],
            user_denom: vec![0; p],
            topic_word: vec![0; k * v],
            topic_word_total: vec![0; k],
            back_word: vec![0; v],
            back_total: 0,
            pair_link: TriangularMatrix::filled(k, 0),
        }
    }

    /// Builds all counts from scratch.
    pub fn recount(data: &Dataset, state: &LatentState, k: usize) -> Self {
        let v = data.vocab_size();
        let mut c = CountCache::empty(data.n_users(), k, v);
        let layout = data.layout();
        for (d, &t) in state.z.iter().enumerate() {
            let i = layout.doc_user[d];
            c.user_topic[i * k + t as usize] += 1;
            for w in layout.doc_range(d) {
                let tok = layout.tokens[w] as usize;
                if state.f[w] {
                    c.topic_word[t as usize * v + tok] += 1;
                    c.topic_word_total[t as usize] += 1;
                } else {
                    c.back_word[tok] += 1;
                    c.back_total += 1;
                }
            }
        }
        for (e, &(i, j)) in data.edges().pairs().iter().enumerate() {
            let [a, b] = state.s[e];
            c.user_topic[i * k + a as usize] += 1;
            c.user_topic[j * k + b as usize] += 1;
            *c.pair_link.get_mut(a as usize, b as usize) += 1;
        }
        for i in 0..data.n_users() {
            c.user_denom[i] = (layout.user_doc_range(i).len() + data.degree(i)) as u32;
        }
        c
    }

    #[inline]
    pub fn user_row(&self, i: usize) -> &[u32] {
        &self.user_topic[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    pub fn topic_row(&self, a: usize) -> &[u32] {
        &self.topic_word[a * self.v..(a + 1) * self.v]
    }

    #[inline]
    pub(crate) fn add_user_topic(&mut self, i: usize, a: usize, delta: i32) {
        let c = &mut self.user_topic[i * self.k + a];
        *c = c.wrapping_add_signed(delta);
    }

    #[inline]
    pub(crate) fn add_foreground(&mut self, a: usize, tok: usize, delta: i32) {
        let c = &mut self.topic_word[a * self.v + tok];
        *c = c.wrapping_add_signed(delta);
        let t = &mut self.topic_word_total[a];
        *t = t.wrapping_add_signed(delta);
    }

    #[inline]
    pub(crate) fn add_background(&mut self, tok: usize, delta: i32) {
        self.back_word[tok] = self.back_word[tok].wrapping_add_signed(delta);
        self.back_total = self.back_total.wrapping_add_signed(delta);
    }

    #[inline]
    pub(crate) fn add_pair(&mut self, a: usize, b: usize, delta: i32) {
        let c = self.pair_link.get_mut(a, b);
        *c = c.wrapping_add_signed(delta);
    }
}

/// Posterior-mean word distributions `(beta, beta_back)` under Dirichlet(η).
pub fn recover_beta<T: Real>(cache: &CountCache, eta: T) -> (Vec<T>, Vec<T>) {
    let v = cache.v;
    let veta = from_usize::<T>(v) * eta;
    let mut beta = Vec::with_capacity(cache.k * v);
    for a in 0..cache.k {
        let denom = veta + from_count(cache.topic_word_total[a]);
        beta.extend(cache.topic_row(a).iter().map(|&n| (eta + from_count(n)) / denom));
    }
    let denom = veta + from_count(cache.back_total);
    let back = cache
        .back_word
        .iter()
        .map(|&n| (eta + from_count(n)) / denom)
        .collect();
    (beta, back)
}

/// Posterior-mean link probabilities `(λ1 + C) / (λ1 + λ0 + C)` per canonical pair.
pub fn recover_phi<T: Real>(cache: &CountCache, lambda1: T, lambda0: T) -> TriangularMatrix<T> {
    let k = cache.k;
    let mut phi = TriangularMatrix::filled(k, T::zero());
    for ((a, b), &c) in cache.pair_link.iter() {
        let c: T = from_count(c);
        *phi.get_mut(a, b) = (lambda1 + c) / (lambda1 + lambda0 + c);
    }
    phi
}

/// User `i`'s topic proportions. Unsmoothed is the empirical indicator average
/// (regression input); smoothed is the Dirichlet posterior mean.
pub fn theta_hat<T: Real>(cache: &CountCache, i: usize, alpha: T, smoothed: bool) -> Result<Vec<T>> {
    if i >= cache.user_denom.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: cache.user_denom.len(),
        });
    }
    let denom: T = from_count(cache.user_denom[i]);
    let row = cache.user_row(i);
    if smoothed {
        let total = denom + from_usize::<T>(cache.k) * alpha;
        Ok(row.iter().map(|&n| (from_count::<T>(n) + alpha) / total).collect())
    } else if cache.user_denom[i] == 0 {
        Err(Error::EmptyUser(i))
    } else {
        Ok(row.iter().map(|&n| from_count::<T>(n) / denom).collect())
    }
}

/// An edge's most likely topic pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkPair<T> {
    pub edge: (usize, usize),
    /// Canonical pair, `pair.0 <= pair.1`.
    pub pair: (usize, usize),
    pub score: T,
}

/// Per-user feature vectors and per-friendship topic-pair explanations.
#[derive(Debug, Clone, PartialEq)]
pub struct UserFeatures<T> {
    pub theta: Vec<Vec<T>>,
    pub link_pairs: Vec<LinkPair<T>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn single_user(k: usize, z: &[u32], links: usize) -> CountCache {
        let mut c = CountCache::empty(1, k, 1);
        for &t in z {
            c.user_topic[t as usize] += 1;
        }
        c.user_denom[0] = (z.len() + links) as u32;
        c
    }

    #[test]
    fn lambda0_examples() {
        let l: f64 = compute_lambda0(5, 2, 2).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        assert!(compute_lambda0::<f64>(3, 3, 1).is_err());
        let l: f64 = compute_lambda0(40_000, 2514, 50).unwrap();
        let expect = ((40_000.0 * 39_999.0 / 2.0 - 2514.0) / 2500.0f64).ln();
        assert!((l - expect).abs() < 1e-12);
        assert!((l - 12.676).abs() < 1e-3);
    }

    #[test]
    fn triangular_indexing_is_dense_and_symmetric() {
        let mut m = TriangularMatrix::filled(4, 0usize);
        let mut n = 0;
        for a in 0..4 {
            for b in a..4 {
                *m.get_mut(b, a) = n;
                n += 1;
            }
        }
        let seen: Vec<_> = m.iter().map(|(_, &v)| v).collect();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(m.get(3, 1), m.get(1, 3));
    }

    #[test]
    fn beta_prior_mean_when_empty() {
        let c = CountCache::empty(1, 2, 4);
        let (beta, back) = recover_beta(&c, 0.3f64);
        assert!(beta.iter().chain(&back).all(|&b| (b - 0.25).abs() < 1e-15));
    }

    #[test]
    fn beta_posterior_mean() {
        let mut c = CountCache::empty(1, 1, 2);
        c.topic_word = vec![2, 0];
        c.topic_word_total = vec![2];
        let (beta, _) = recover_beta(&c, 1.0f64);
        assert!((beta[0] - 0.75).abs() < 1e-15 && (beta[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn phi_examples() {
        let mut c = CountCache::empty(1, 2, 1);
        let prior = recover_phi(&c, 0.1f64, 2f64.ln());
        assert!((prior.get(0, 1) - 0.1 / (0.1 + 2f64.ln())).abs() < 1e-15);
        *c.pair_link.get_mut(0, 1) = 3;
        let phi = recover_phi(&c, 0.1f64, 2f64.ln());
        assert!((phi.get(1, 0) - 0.8173).abs() < 1e-4);
        let mut prev = 0.0;
        for n in 0..50 {
            *c.pair_link.get_mut(0, 0) = n;
            let p = *recover_phi(&c, 0.1f64, 2f64.ln()).get(0, 0);
            assert!(p > prev && p < 1.0);
            prev = p;
        }
    }

    #[test]
    fn theta_hat_examples() {
        let c = single_user(2, &[0, 0], 0);
        assert_eq!(theta_hat(&c, 0, 1.0f64, false).unwrap(), vec![1.0, 0.0]);
        assert_eq!(theta_hat(&c, 0, 1.0f64, true).unwrap(), vec![0.75, 0.25]);

        let mut c = single_user(2, &[0], 1);
        c.user_topic[1] += 1;
        assert_eq!(theta_hat(&c, 0, 1.0f64, false).unwrap(), vec![0.5, 0.5]);

        let empty = CountCache::empty(1, 3, 1);
        assert!(matches!(theta_hat(&empty, 0, 1.0f64, false), Err(Error::EmptyUser(0))));
        let s = theta_hat(&empty, 0, 0.2f64, true).unwrap();
        assert!(s.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn recount_matches_hand_counts() {
        let users = vec![
            ("a".to_string(), vec![vec!["x", "y"], vec!["y"]], Some(Label::Pos)),
            ("b".to_string(), vec![vec!["x"]], None),
        ];
        let d = Dataset::from_tokens(users, &[("a".into(), "b".into())], 1).unwrap();
        let state = LatentState {
            z: vec![1, 0, 1],
            f: vec![true, false, true, true],
            s: vec![[0, 1]],
        };
        let c = CountCache::recount(&d, &state, 2);
        assert_eq!(c.user_row(0), &[2, 1]);
        assert_eq!(c.user_row(1), &[0, 2]);
        assert_eq!(c.user_denom, vec![3, 2]);
        assert_eq!(c.topic_row(1), &[2, 0]);
        assert_eq!(c.topic_row(0), &[0, 1]);
        assert_eq!(c.back_word, vec![0, 1]);
        assert_eq!(*c.pair_link.get(1, 0), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn recovered_parameters_are_valid(
                k in 1usize..5, v in 1usize..8,
                counts in proptest::collection::vec(0u32..50, 64),
                eta in 0.01f64..3.0, l1 in 0.01f64..2.0, l0 in 0.01f64..10.0,
            ) {
                let mut c = CountCache::empty(1, k, v);
                for (x, n) in c.topic_word.iter_mut().zip(&counts) { *x = *n; }
                for a in 0..k { c.topic_word_total[a] = c.topic_row(a).iter().sum(); }
                for (x, n) in c.back_word.iter_mut().zip(counts.iter().rev()) { *x = *n; }
                c.back_total = c.back_word.iter().sum();
                for (idx, n) in counts.iter().take(k * (k + 1) / 2).enumerate() {
                    let a = idx % k; let b = (idx / k) % k;
                    *c.pair_link.get_mut(a, b) = *n;
                }
                let (beta, back) = recover_beta(&c, eta);
                for a in 0..k {
                    let row = &beta[a * v..(a + 1) * v];
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    prop_assert!(row.iter().all(|&x| x > 0.0));
                }
                prop_assert!((back.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                let phi = recover_phi(&c, l1, l0);
                prop_assert!(phi.values().iter().all(|&p| p > 0.0 && p < 1.0));
            }
        }
    }
}

use crate::corpus::Dataset;
use crate::model::{CountCache, Hyperparams};
use crate::scalar::{from_count, from_usize, lit, Real};

/// Collapsed joint log-likelihood split by factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihoodTerms<T> {
    /// Dirichlet-multinomial over each user's `{z, s}` indicators.
    pub user_topics: T,
    /// Dirichlet-multinomial over foreground words per topic plus background.
    pub words: T,
    /// Beta-Bernoulli over positive links per canonical topic pair.
    pub links: T,
    /// Bernoulli(delta) over foreground flags.
    pub switches: T,
    /// Gaussian label densities.
    pub labels: T,
}

impl<T: Real> LogLikelihoodTerms<T> {
    pub fn total(&self) -> T {
        self.user_topics + self.words + self.links + self.switches + self.labels
    }
}

pub(crate) fn user_topic_term<T: Real>(cache: &CountCache, alpha: T) -> T {
    let k = cache.k;
    let kalpha = from_usize::<T>(k) * alpha;
    let lg_alpha = alpha.ln_gamma();
    let lg_kalpha = kalpha.ln_gamma();
    let mut total = T::zero();
    for i in 0..cache.user_denom.len() {
        let row = cache.user_row(i);
        let n: u32 = row.iter().sum();
        if n == 0 {
            continue;
        }
        total += lg_kalpha - (kalpha + from_count(n)).ln_gamma();
        for &c in row.iter().filter(|&&c| c > 0) {
            total += (alpha + from_count(c)).ln_gamma() - lg_alpha;
        }
    }
    total
}

fn dcm<T: Real>(counts: &[u32], total: u32, eta: T, veta: T, lg_eta: T) -> T {
    if total == 0 {
        return T::zero();
    }
    let mut s = veta.ln_gamma() - (veta + from_count(total)).ln_gamma();
    for &c in counts.iter().filter(|&&c| c > 0) {
        s += (eta + from_count(c)).ln_gamma() - lg_eta;
    }
    s
}

pub(crate) fn word_term<T: Real>(cache: &CountCache, eta: T) -> T {
    let veta = from_usize::<T>(cache.v) * eta;
    let lg_eta = eta.ln_gamma();
    let mut total = dcm(&cache.back_word, cache.back_total, eta, veta, lg_eta);
    for a in 0..cache.k {
        total += dcm(cache.topic_row(a), cache.topic_word_total[a], eta, veta, lg_eta);
    }
    total
}

pub(crate) fn link_term<T: Real>(cache: &CountCache, lambda1: T, lambda0: T) -> T {
    let base = (lambda1 + lambda0).ln_gamma() - lambda1.ln_gamma();
    cache
        .pair_link
        .values()
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let c: T = from_count(c);
            (lambda1 + c).ln_gamma() - (lambda1 + lambda0 + c).ln_gamma() + base
        })
        .sum()
}

pub(crate) fn switch_term<T: Real>(cache: &CountCache, delta: T) -> T {
    let fg: u32 = cache.topic_word_total.iter().sum();
    from_count::<T>(fg) * delta.ln() + from_count::<T>(cache.back_total) * (T::one() - delta).ln()
}

pub(crate) fn label_term<T: Real>(data: &Dataset, cache: &CountCache, nu: &[T], sigma2: T) -> T {
    let norm = lit::<T>(-0.5) * (lit::<T>(2.0 * std::f64::consts::PI) * sigma2).ln();
    let two_s2 = lit::<T>(2.0) * sigma2;
    let mut total = T::zero();
    for i in 0..data.n_users() {
        let (Some(label), denom) = (data.label(i), cache.user_denom[i]) else {
            continue;
        };
        if denom == 0 {
            continue;
        }
        let pred: T = cache
            .user_row(i)
            .iter()
            .zip(nu)
            .map(|(&n, &v)| from_count::<T>(n) * v)
            .sum::<T>()
            / from_count(denom);
        let r = lit::<T>(label.value()) - pred;
        total += norm - r * r / two_s2;
    }
    total
}

/// Collapsed joint `log p(w, e, y, z, f, s | alpha, eta, delta, lambda, nu, sigma2)`
/// with `theta`, `beta`, `Phi` integrated out. Every factor is normalized so an
/// empty dataset scores exactly zero.
pub fn joint_log_likelihood<T: Real>(
    data: &Dataset,
    cache: &CountCache,
    hyper: &Hyperparams<T>,
    nu: &[T],
    sigma2: T,
) -> LogLikelihoodTerms<T> {
    LogLikelihoodTerms {
        user_topics: user_topic_term(cache, hyper.alpha),
        words: word_term(cache, hyper.eta),
        links: link_term(cache, hyper.lambda1, hyper.lambda0),
        switches: switch_term(cache, hyper.delta),
        labels: label_term(data, cache, nu, sigma2),
    }
}

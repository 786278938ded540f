use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use super::likelihood::{switch_term, user_topic_term, word_term};
use crate::model::{CountCache, Hyperparams};
use crate::scalar::{lit, Real};

/// Which proposals were accepted in one MH step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MhOutcome {
    pub alpha: bool,
    pub eta: bool,
    pub delta: bool,
}

/// Log acceptance ratio for moving `alpha` from `old` to `new`. Proposals are
/// drawn from the prior, so only the collapsed likelihood ratio remains.
pub fn mh_log_ratio_alpha<T: Real>(cache: &CountCache, old: T, new: T) -> T {
    user_topic_term(cache, new) - user_topic_term(cache, old)
}

pub fn mh_log_ratio_eta<T: Real>(cache: &CountCache, old: T, new: T) -> T {
    word_term(cache, new) - word_term(cache, old)
}

pub fn mh_log_ratio_delta<T: Real>(cache: &CountCache, old: T, new: T) -> T {
    switch_term(cache, new) - switch_term(cache, old)
}

fn accept<T: Real>(log_ratio: T, rng: &mut ChaCha8Rng) -> bool {
    let u: f64 = rng.random();
    log_ratio >= T::zero() || lit::<T>(u).ln() < log_ratio
}

/// Proposes alpha, eta ~ Exponential(1) and delta ~ Beta(1, 1), each accepted
/// independently.
pub(super) fn mh_step<T: Real>(
    cache: &CountCache,
    hyper: &mut Hyperparams<T>,
    rng: &mut ChaCha8Rng,
) -> MhOutcome {
    let mut out = MhOutcome::default();

    let prop: T = lit(Exp1.sample(rng));
    if prop > T::zero() && accept(mh_log_ratio_alpha(cache, hyper.alpha, prop), rng) {
        hyper.alpha = prop;
        out.alpha = true;
    }

    let prop: T = lit(Exp1.sample(rng));
    if prop > T::zero() && accept(mh_log_ratio_eta(cache, hyper.eta, prop), rng) {
        hyper.eta = prop;
        out.eta = true;
    }

    let prop: T = lit(rng.random::<f64>());
    if prop > T::zero() && prop < T::one() && accept(mh_log_ratio_delta(cache, hyper.delta, prop), rng) {
        hyper.delta = prop;
        out.delta = true;
    }
    out
}

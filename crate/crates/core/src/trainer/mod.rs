//! Collapsed Gibbs training: sweeps over document topics `z`, word
//! foreground flags `f` and link topics `s`, followed by an independence-chain
//! Metropolis–Hastings update of `(alpha, eta, delta)` and a closed-form
//! refit of the label regression `(nu, sigma2)`.
//!
//! Every sampler follows decrement → weigh → draw → increment against the
//! [`CountCache`], so each conditional costs O(K · words-in-doc) for `z`,
//! O(1) for `f` and O(K) for `s`.

mod hyper;
mod likelihood;
mod regression;

pub use hyper::{mh_log_ratio_alpha, mh_log_ratio_delta, mh_log_ratio_eta, MhOutcome};
pub use likelihood::{joint_log_likelihood, LogLikelihoodTerms};
pub use regression::{maximize_nu_sigma, solve_nu_sigma, NuSigma};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ParamAccumulator};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::model::{
    compute_lambda0, recover_beta, recover_phi, CountCache, Hyperparams, LatentState, TopicParams,
};
use crate::rng::{substream, RngPosition, StreamTag};
use crate::scalar::{draw_index, from_count, from_usize, lit, normalize_log, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the recent per-iteration gain drops below this fraction of
    /// the cumulative gain.
    pub convergence: f64,
    pub check_convergence: bool,
    pub seed: u64,
    /// Fraction of `max_iters` discarded before recovered parameters are averaged.
    pub burn_in: f64,
    pub fix_hyper: bool,
    pub ridge_eps: f64,
    pub sigma2_floor: f64,
    pub lambda1: f64,
    /// Overrides the `ln(#zero links / K^2)` default.
    pub lambda0: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 10,
            max_iters: 100,
            convergence: 0.01,
            check_convergence: true,
            seed: 0,
            burn_in: 0.5,
            fix_hyper: false,
            ridge_eps: 1e-6,
            sigma2_floor: 1e-8,
            lambda1: 0.1,
            lambda0: None,
        }
    }
}

/// Trailing window used by the convergence rule.
const CONVERGENCE_WINDOW: usize = 5;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.k == 0 {
            return bad("K must be at least 1");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !(self.convergence > 0.0 && self.convergence < 1.0) {
            return bad("convergence must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return bad("burn_in must lie in [0, 1)");
        }
        if !(self.ridge_eps >= 0.0 && self.sigma2_floor > 0.0 && self.lambda1 > 0.0) {
            return bad("ridge_eps, sigma2_floor and lambda1 must be positive");
        }
        Ok(())
    }
}

/// One line of the per-iteration metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub log_likelihood: f64,
    pub alpha: f64,
    pub eta: f64,
    pub delta: f64,
    pub sigma2: f64,
    pub accepted_alpha: bool,
    pub accepted_eta: bool,
    pub accepted_delta: bool,
}

pub struct Trainer<'d, T: Real> {
    data: &'d Dataset,
    cfg: TrainConfig,
    state: LatentState,
    cache: CountCache,
    hyper: Hyperparams<T>,
    nu: Vec<T>,
    sigma2: T,
    rng: ChaCha8Rng,
    iteration: usize,
    trace: Vec<IterationRecord>,
    accum: ParamAccumulator<T>,
    weights: Vec<T>,
    doc_tokens: Vec<(u32, u32)>,
}

impl<'d, T: Real> Trainer<'d, T> {
    /// Random initialization: uniform topics, fair-coin foreground flags,
    /// `alpha = eta = 1`, `delta = 0.5`, `nu = 0`, `sigma2 = 1`.
    pub fn init(data: &'d Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.k;
        let lambda0 = match cfg.lambda0 {
            Some(l) => lit(l),
            None => compute_lambda0::<T>(data.n_users(), data.edges().len(), k)?,
        };
        let hyper = Hyperparams {
            k,
            alpha: T::one(),
            eta: T::one(),
            delta: lit(0.5),
            lambda1: lit(cfg.lambda1),
            lambda0,
        };
        hyper.validate()?;
        let mut rng = substream(cfg.seed, StreamTag::Train, 0);
        let layout = data.layout();
        let z = (0..layout.n_docs())
            .map(|_| rng.random_range(0..k as u32))
            .collect();
        let f = (0..layout.n_words()).map(|_| rng.random_bool(0.5)).collect();
        let s = (0..data.edges().len())
            .map(|_| [rng.random_range(0..k as u32), rng.random_range(0..k as u32)])
            .collect();
        let state = LatentState { z, f, s };
        let mut t = Self::with_state(data, cfg, state, hyper, vec![T::zero(); k], T::one())?;
        t.rng = rng;
        let ll = t.log_likelihood();
        t.push_record(ll, MhOutcome::default());
        Ok(t)
    }

    /// Builds a trainer around an explicit latent state and parameters.
    pub fn with_state(
        data: &'d Dataset,
        cfg: TrainConfig,
        state: LatentState,
        hyper: Hyperparams<T>,
        nu: Vec<T>,
        sigma2: T,
    ) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.k;
        if hyper.k != k || nu.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: nu.len(),
            });
        }
        state.check_shape(data, k)?;
        let cache = CountCache::recount(data, &state, k);
        let rng = substream(cfg.seed, StreamTag::Train, 0);
        let accum = ParamAccumulator::new(k, data.vocab_size());
        Ok(Trainer {
            data,
            cfg,
            state,
            cache,
            hyper,
            nu,
            sigma2,
            rng,
            iteration: 0,
            trace: Vec::new(),
            accum,
            weights: vec![T::zero(); k],
            doc_tokens: Vec::new(),
        })
    }

    /// Restores a trainer from a checkpoint so that continuing produces
    /// exactly the same chain as an uninterrupted run.
    pub fn resume(data: &'d Dataset, ckpt: &Checkpoint<T>) -> Result<Self> {
        if ckpt.p != data.n_users() || ckpt.v != data.vocab_size() || &ckpt.vocab != data.vocab() {
            return Err(Error::Checkpoint("checkpoint does not match dataset".into()));
        }
        let mut t = Self::with_state(
            data,
            ckpt.config.clone(),
            ckpt.state.clone(),
            ckpt.hyper,
            ckpt.nu.clone(),
            ckpt.sigma2,
        )?;
        if t.cache != ckpt.cache {
            return Err(Error::Checkpoint("stored counts disagree with stored state".into()));
        }
        t.rng = ckpt
            .rng
            .restore()
            .ok_or_else(|| Error::Checkpoint("bad rng position".into()))?;
        t.iteration = ckpt.iteration;
        t.trace = ckpt.trace.clone();
        t.accum = ckpt.accum.clone();
        Ok(t)
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &LatentState {
        &self.state
    }

    pub fn cache(&self) -> &CountCache {
        &self.cache
    }

    pub fn hyper(&self) -> &Hyperparams<T> {
        &self.hyper
    }

    pub fn nu(&self) -> &[T] {
        &self.nu
    }

    pub fn sigma2(&self) -> T {
        self.sigma2
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn trace(&self) -> &[IterationRecord] {
        &self.trace
    }

    pub fn set_hyper(&mut self, hyper: Hyperparams<T>) -> Result<()> {
        hyper.validate()?;
        self.hyper = hyper;
        Ok(())
    }

    pub fn set_regression(&mut self, nu: Vec<T>, sigma2: T) {
        assert_eq!(nu.len(), self.cfg.k);
        self.nu = nu;
        self.sigma2 = sigma2;
    }

    pub fn log_likelihood(&self) -> T {
        joint_log_likelihood(self.data, &self.cache, &self.hyper, &self.nu, self.sigma2).total()
    }

    /// `-(y_i - thetahat_i . nu)^2 / (2 sigma2)` for each candidate topic
    /// added to user `i`'s current (already decremented) counts.
    fn add_label_terms(&mut self, i: usize) {
        let Some(label) = self.data.label(i) else {
            return;
        };
        let denom = self.cache.user_denom[i];
        if denom == 0 {
            return;
        }
        let denom: T = from_count(denom);
        let rest: T = self
            .cache
            .user_row(i)
            .iter()
            .zip(&self.nu)
            .map(|(&n, &v)| from_count::<T>(n) * v)
            .sum();
        let y: T = lit(label.value());
        let two_s2 = lit::<T>(2.0) * self.sigma2;
        for (w, &nu_m) in self.weights.iter_mut().zip(&self.nu) {
            let r = y - (rest + nu_m) / denom;
            *w -= r * r / two_s2;
        }
    }

    fn remove_doc(&mut self, d: usize) {
        let layout = self.data.layout();
        let i = layout.doc_user[d];
        let a = self.state.z[d] as usize;
        self.cache.add_user_topic(i, a, -1);
        for w in layout.doc_range(d) {
            if self.state.f[w] {
                self.cache.add_foreground(a, layout.tokens[w] as usize, -1);
            }
        }
    }

    fn insert_doc(&mut self, d: usize, a: u32) {
        let layout = self.data.layout();
        let i = layout.doc_user[d];
        self.state.z[d] = a;
        self.cache.add_user_topic(i, a as usize, 1);
        for w in layout.doc_range(d) {
            if self.state.f[w] {
                self.cache.add_foreground(a as usize, layout.tokens[w] as usize, 1);
            }
        }
    }

    /// Unnormalized log-weights of the document-topic conditional, with doc
    /// `d` already removed from the cache.
    fn doc_topic_log_weights(&mut self, d: usize) {
        let layout = self.data.layout();
        let i = layout.doc_user[d];
        self.doc_tokens.clear();
        for w in layout.doc_range(d) {
            if self.state.f[w] {
                self.doc_tokens.push((layout.tokens[w], 1));
            }
        }
        let n_fg = self.doc_tokens.len();
        self.doc_tokens.sort_unstable();
        self.doc_tokens.dedup_by(|next, kept| {
            if next.0 == kept.0 {
                kept.1 += 1;
                true
            } else {
                false
            }
        });
        let eta = self.hyper.eta;
        let alpha = self.hyper.alpha;
        let veta = from_usize::<T>(self.cache.v) * eta;
        for m in 0..self.cfg.k {
            let mut lw = (from_count::<T>(self.cache.user_row(i)[m]) + alpha).ln();
            let row = self.cache.topic_row(m);
            // Gamma ratios over the doc's foreground words as rising products.
            for &(tok, c) in &self.doc_tokens {
                let base = eta + from_count(row[tok as usize]);
                for t in 0..c {
                    lw += (base + from_count(t)).ln();
                }
            }
            let base = veta + from_count(self.cache.topic_word_total[m]);
            for t in 0..n_fg {
                lw -= (base + from_usize(t)).ln();
            }
            self.weights[m] = lw;
        }
        self.add_label_terms(i);
    }

    /// Exact conditional distribution of doc `d`'s topic given everything else.
    pub fn conditional_z(&mut self, d: usize) -> Vec<T> {
        self.remove_doc(d);
        self.doc_topic_log_weights(d);
        let a = self.state.z[d];
        self.insert_doc(d, a);
        let mut w = self.weights.clone();
        normalize_log(&mut w);
        w
    }

    /// Resamples doc `d`'s topic and returns it.
    pub fn sample_z(&mut self, d: usize) -> u32 {
        self.remove_doc(d);
        self.doc_topic_log_weights(d);
        normalize_log(&mut self.weights);
        let m = draw_index(&self.weights, self.rng.random()) as u32;
        self.insert_doc(d, m);
        m
    }

    fn word_owner(&self, w: usize) -> usize {
        let layout = self.data.layout();
        layout.doc_words.partition_point(|&start| start <= w) - 1
    }

    fn remove_word(&mut self, d: usize, w: usize) {
        let tok = self.data.layout().tokens[w] as usize;
        if self.state.f[w] {
            self.cache.add_foreground(self.state.z[d] as usize, tok, -1);
        } else {
            self.cache.add_background(tok, -1);
        }
    }

    fn insert_word(&mut self, d: usize, w: usize, fg: bool) {
        let tok = self.data.layout().tokens[w] as usize;
        self.state.f[w] = fg;
        if fg {
            self.cache.add_foreground(self.state.z[d] as usize, tok, 1);
        } else {
            self.cache.add_background(tok, 1);
        }
    }

    fn foreground_prob(&self, d: usize, w: usize) -> T {
        let tok = self.data.layout().tokens[w] as usize;
        let a = self.state.z[d] as usize;
        let eta = self.hyper.eta;
        let veta = from_usize::<T>(self.cache.v) * eta;
        let delta = self.hyper.delta;
        let fg = (eta + from_count(self.cache.topic_row(a)[tok])) * delta
            / (veta + from_count(self.cache.topic_word_total[a]));
        let bg = (eta + from_count(self.cache.back_word[tok])) * (T::one() - delta)
            / (veta + from_count(self.cache.back_total));
        fg / (fg + bg)
    }

    /// `[P(f=0), P(f=1)]` for global word `w`.
    pub fn conditional_f(&mut self, w: usize) -> [T; 2] {
        let d = self.word_owner(w);
        let cur = self.state.f[w];
        self.remove_word(d, w);
        let p1 = self.foreground_prob(d, w);
        self.insert_word(d, w, cur);
        [T::one() - p1, p1]
    }

    fn sample_f_in(&mut self, d: usize, w: usize) -> bool {
        self.remove_word(d, w);
        let p1 = self.foreground_prob(d, w);
        let u: f64 = self.rng.random();
        let fg = lit::<T>(u) < p1;
        self.insert_word(d, w, fg);
        fg
    }

    /// Resamples the foreground flag of global word `w`.
    pub fn sample_f(&mut self, w: usize) -> bool {
        let d = self.word_owner(w);
        self.sample_f_in(d, w)
    }

    fn endpoint(&self, e: usize, side: usize) -> usize {
        let (i, j) = self.data.edges().pairs()[e];
        if side == 0 {
            i
        } else {
            j
        }
    }

    fn remove_half_link(&mut self, e: usize, side: usize) {
        let i = self.endpoint(e, side);
        let [a, b] = self.state.s[e];
        self.cache.add_user_topic(i, self.state.s[e][side] as usize, -1);
        self.cache.add_pair(a as usize, b as usize, -1);
    }

    fn insert_half_link(&mut self, e: usize, side: usize, m: u32) {
        let i = self.endpoint(e, side);
        self.state.s[e][side] = m;
        let [a, b] = self.state.s[e];
        self.cache.add_user_topic(i, m as usize, 1);
        self.cache.add_pair(a as usize, b as usize, 1);
    }

    fn link_topic_log_weights(&mut self, e: usize, side: usize) {
        let i = self.endpoint(e, side);
        let other = self.state.s[e][1 - side] as usize;
        let alpha = self.hyper.alpha;
        let (l1, l0) = (self.hyper.lambda1, self.hyper.lambda0);
        for m in 0..self.cfg.k {
            let c: T = from_count(*self.cache.pair_link.get(m, other));
            self.weights[m] = (from_count::<T>(self.cache.user_row(i)[m]) + alpha).ln()
                + (l1 + c).ln()
                - (l1 + l0 + c).ln();
        }
        self.add_label_terms(i);
    }

    /// Exact conditional of the link topic on `side` (0: lower-index user) of edge `e`.
    pub fn conditional_s(&mut self, e: usize, side: usize) -> Vec<T> {
        self.remove_half_link(e, side);
        self.link_topic_log_weights(e, side);
        let cur = self.state.s[e][side];
        self.insert_half_link(e, side, cur);
        let mut w = self.weights.clone();
        normalize_log(&mut w);
        w
    }

    pub fn sample_s(&mut self, e: usize, side: usize) -> u32 {
        self.remove_half_link(e, side);
        self.link_topic_log_weights(e, side);
        normalize_log(&mut self.weights);
        let m = draw_index(&self.weights, self.rng.random()) as u32;
        self.insert_half_link(e, side, m);
        m
    }

    /// One full Gibbs sweep: all `z`, then all `f`, then all `s`.
    pub fn sweep(&mut self) {
        let layout = self.data.layout();
        for d in 0..layout.n_docs() {
            self.sample_z(d);
        }
        for d in 0..layout.n_docs() {
            for w in layout.doc_range(d) {
                self.sample_f_in(d, w);
            }
        }
        for e in 0..self.data.edges().len() {
            self.sample_s(e, 0);
            self.sample_s(e, 1);
        }
    }

    /// One independence-chain MH proposal each for `alpha`, `eta`, `delta`.
    pub fn mh_step_hyper(&mut self) -> MhOutcome {
        if self.cfg.fix_hyper {
            return MhOutcome::default();
        }
        hyper::mh_step(&self.cache, &mut self.hyper, &mut self.rng)
    }

    /// Refits `(nu, sigma2)`; a no-op when no user carries a label.
    pub fn maximize_nu_sigma(&mut self) -> Result<()> {
        match maximize_nu_sigma(self.data, &self.cache, lit(self.cfg.ridge_eps), lit(self.cfg.sigma2_floor)) {
            Ok(fit) => {
                self.nu = fit.nu;
                self.sigma2 = fit.sigma2;
                Ok(())
            }
            Err(Error::EmptyLabelView) => Ok(()),
            Err(e) => Err(e),
        }
    }

    fn push_record(&mut self, ll: T, mh: MhOutcome) {
        let f = |x: T| x.to_f64().unwrap_or(f64::NAN);
        self.trace.push(IterationRecord {
            iter: self.iteration,
            log_likelihood: f(ll),
            alpha: f(self.hyper.alpha),
            eta: f(self.hyper.eta),
            delta: f(self.hyper.delta),
            sigma2: f(self.sigma2),
            accepted_alpha: mh.alpha,
            accepted_eta: mh.eta,
            accepted_delta: mh.delta,
        });
    }

    /// Sweep + MH + regression refit, then log-likelihood bookkeeping.
    pub fn iterate(&mut self) -> Result<&IterationRecord> {
        self.sweep();
        let mh = self.mh_step_hyper();
        self.maximize_nu_sigma()?;
        self.iteration += 1;
        let ll = self.log_likelihood();
        self.push_record(ll, mh);
        let start = (self.cfg.burn_in * self.cfg.max_iters as f64).floor() as usize;
        if self.iteration > start {
            self.accum.add(&self.cache, &self.hyper);
        }
        Ok(self.trace.last().expect("just pushed"))
    }

    /// Windowed form of "gain < convergence × cumulative gain".
    pub fn converged(&self) -> bool {
        let t = self.iteration;
        if !self.cfg.check_convergence || t < CONVERGENCE_WINDOW {
            return false;
        }
        let ll = |i: usize| self.trace[i].log_likelihood;
        let recent = (ll(t) - ll(t - CONVERGENCE_WINDOW)) / CONVERGENCE_WINDOW as f64;
        let cumulative = ll(t) - ll(0);
        cumulative > 0.0 && recent < self.cfg.convergence * cumulative
    }

    /// Iterates until `max_iters` or convergence.
    pub fn run(&mut self) -> Result<()> {
        while self.iteration < self.cfg.max_iters {
            let rec = self.iterate()?;
            log::debug!("iter {} ll {:.4}", rec.iter, rec.log_likelihood);
            if self.converged() {
                log::info!("converged after {} iterations", self.iteration);
                break;
            }
        }
        Ok(())
    }

    /// Posterior-mean parameters: averaged over post-burn-in iterations when
    /// any were recorded, otherwise read off the current counts.
    pub fn topic_params(&self) -> TopicParams<T> {
        let (beta, beta_back, phi) = match self.accum.mean() {
            Some(m) => m,
            None => {
                let (b, bb) = recover_beta(&self.cache, self.hyper.eta);
                (b, bb, recover_phi(&self.cache, self.hyper.lambda1, self.hyper.lambda0))
            }
        };
        TopicParams {
            k: self.cfg.k,
            v: self.cache.v,
            beta,
            beta_back,
            phi,
            nu: self.nu.clone(),
            sigma2: self.sigma2,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            format: crate::checkpoint::FORMAT.to_owned(),
            version: crate::checkpoint::VERSION,
            k: self.cfg.k,
            v: self.cache.v,
            p: self.data.n_users(),
            vocab: self.data.vocab().clone(),
            user_ids: self.data.users().iter().map(|u| u.id.clone()).collect(),
            config: self.cfg.clone(),
            hyper: self.hyper,
            nu: self.nu.clone(),
            sigma2: self.sigma2,
            cache: self.cache.clone(),
            state: self.state.clone(),
            rng: RngPosition::capture(self.cfg.seed, &self.rng),
            iteration: self.iteration,
            trace: self.trace.clone(),
            accum: self.accum.clone(),
            params: self.topic_params(),
        }
    }
}

/// Result of [`train`].
pub struct TrainOutput<T> {
    pub checkpoint: Checkpoint<T>,
    pub params: TopicParams<T>,
}

pub fn train<T: Real>(data: &Dataset, cfg: TrainConfig) -> Result<TrainOutput<T>> {
    let mut trainer = Trainer::<T>::init(data, cfg)?;
    trainer.run()?;
    let checkpoint = trainer.checkpoint();
    let params = checkpoint.params.clone();
    Ok(TrainOutput { checkpoint, params })
}

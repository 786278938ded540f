//! Forward simulation of the full generative model, and a brute-force
//! reference for the collapsed conditionals on tiny instances.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::corpus::{Dataset, EdgeList, Label, UserRecord, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Hyperparams, LatentState, TopicParams, TriangularMatrix};
use crate::rng::{substream, StreamTag};
use crate::scalar::draw_index;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub k: usize,
    pub v: usize,
    pub p: usize,
    /// Inclusive range of documents per user.
    pub docs_per_user: (usize, usize),
    /// Inclusive range of words per document.
    pub words_per_doc: (usize, usize),
    pub alpha: f64,
    pub eta: f64,
    pub delta: f64,
    pub lambda1: f64,
    pub lambda0: f64,
    /// Regression coefficients; defaults to evenly spaced values in `[-2, 2]`.
    pub nu: Option<Vec<f64>>,
    pub sigma2: f64,
    /// Forces every `Phi` entry to this value instead of drawing from the Beta prior.
    pub phi_override: Option<f64>,
    /// Fraction of users that keep their label.
    pub label_fraction: f64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            k: 5,
            v: 200,
            p: 200,
            docs_per_user: (10, 20),
            words_per_doc: (3, 8),
            alpha: 0.1,
            eta: 0.05,
            delta: 0.8,
            lambda1: 0.1,
            lambda0: 8.0,
            nu: None,
            sigma2: 0.1,
            phi_override: None,
            label_fraction: 1.0,
        }
    }
}

impl GenSpec {
    pub fn nu(&self) -> Vec<f64> {
        match &self.nu {
            Some(nu) => nu.clone(),
            None if self.k == 1 => vec![1.0],
            None => (0..self.k)
                .map(|a| -2.0 + 4.0 * a as f64 / (self.k - 1) as f64)
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("infeasible generator spec: {m}")));
        if self.k == 0 || self.v == 0 {
            return bad("K and V must be at least 1");
        }
        if self.docs_per_user.0 > self.docs_per_user.1 || self.words_per_doc.0 > self.words_per_doc.1 {
            return bad("empty range");
        }
        if !(self.alpha > 0.0 && self.eta > 0.0 && self.lambda1 > 0.0 && self.lambda0 > 0.0 && self.sigma2 >= 0.0) {
            return bad("concentrations must be positive");
        }
        if !(0.0..=1.0).contains(&self.delta) || !(0.0..=1.0).contains(&self.label_fraction) {
            return bad("delta and label_fraction must lie in [0, 1]");
        }
        if let Some(f) = self.phi_override {
            if !(0.0..=1.0).contains(&f) {
                return bad("phi_override must lie in [0, 1]");
            }
        }
        if self.nu().len() != self.k {
            return bad("nu must have K entries");
        }
        Ok(())
    }
}

/// Everything the simulation drew.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub params: TopicParams<f64>,
    pub theta: Vec<Vec<f64>>,
    pub state: LatentState,
    /// Real-valued responses before thresholding.
    pub response: Vec<f64>,
}

fn dirichlet(rng: &mut ChaCha8Rng, conc: f64, n: usize) -> Vec<f64> {
    let g = Gamma::new(conc, 1.0).expect("positive concentration");
    let mut x: Vec<f64> = (0..n).map(|_| g.sample(rng)).collect();
    let s: f64 = x.iter().sum();
    if s > 0.0 {
        x.iter_mut().for_each(|v| *v /= s);
    } else {
        // every gamma draw underflowed
        x[rng.random_range(0..n)] = 1.0;
    }
    x
}

/// Simulates users, documents, all-pairs links and thresholded labels.
pub fn generate_dataset(spec: &GenSpec, seed: u64) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = substream(seed, StreamTag::Generate, 0);
    let (k, v, p) = (spec.k, spec.v, spec.p);

    let beta_back = dirichlet(&mut rng, spec.eta, v);
    let mut beta = Vec::with_capacity(k * v);
    for _ in 0..k {
        beta.extend(dirichlet(&mut rng, spec.eta, v));
    }
    let mut phi = TriangularMatrix::filled(k, 0.0);
    let beta_prior = Beta::new(spec.lambda1, spec.lambda0).expect("positive shape");
    for a in 0..k {
        for b in a..k {
            *phi.get_mut(a, b) = spec.phi_override.unwrap_or_else(|| beta_prior.sample(&mut rng));
        }
    }
    let theta: Vec<Vec<f64>> = (0..p).map(|_| dirichlet(&mut rng, spec.alpha, k)).collect();

    let mut users = Vec::with_capacity(p);
    let mut z = Vec::new();
    let mut f = Vec::new();
    for (i, th) in theta.iter().enumerate() {
        let n_docs = rng.random_range(spec.docs_per_user.0..=spec.docs_per_user.1);
        let mut docs = Vec::with_capacity(n_docs);
        for _ in 0..n_docs {
            let topic = draw_index(th, rng.random());
            z.push(topic as u32);
            let n_words = rng.random_range(spec.words_per_doc.0..=spec.words_per_doc.1);
            let row = &beta[topic * v..(topic + 1) * v];
            let doc = (0..n_words)
                .map(|_| {
                    let fg = rng.random_bool(spec.delta);
                    f.push(fg);
                    let dist = if fg { row } else { &beta_back[..] };
                    draw_index(dist, rng.random()) as u32
                })
                .collect();
            docs.push(doc);
        }
        users.push(UserRecord { id: format!("u{i}"), docs, label: None });
    }

    let mut pairs = Vec::new();
    let mut s = Vec::new();
    for i in 0..p {
        for j in i + 1..p {
            let a = draw_index(&theta[i], rng.random());
            let b = draw_index(&theta[j], rng.random());
            if rng.random_bool(*phi.get(a, b)) {
                pairs.push((i, j));
                s.push([a as u32, b as u32]);
            }
        }
    }

    let nu = spec.nu();
    let noise = Normal::new(0.0, spec.sigma2.sqrt()).expect("finite sigma");
    let mut counts = vec![vec![0u32; k]; p];
    let mut doc = 0;
    for (i, u) in users.iter().enumerate() {
        for _ in 0..u.docs.len() {
            counts[i][z[doc] as usize] += 1;
            doc += 1;
        }
    }
    for (&(i, j), &[a, b]) in pairs.iter().zip(&s) {
        counts[i][a as usize] += 1;
        counts[j][b as usize] += 1;
    }
    let mut response = vec![f64::NAN; p];
    for i in 0..p {
        let n: u32 = counts[i].iter().sum();
        let labeled = rng.random_bool(spec.label_fraction);
        let eps = noise.sample(&mut rng);
        if n == 0 {
            continue;
        }
        let mean: f64 = counts[i].iter().zip(&nu).map(|(&c, &w)| c as f64 * w).sum::<f64>() / n as f64;
        response[i] = mean + eps;
        if labeled {
            users[i].label = Some(if response[i] >= 0.0 { Label::Pos } else { Label::Neg });
        }
    }

    let vocab = Vocabulary::from((0..v).map(|t| format!("w{t}")).collect::<Vec<_>>());
    let data = Dataset::new(users, vocab, EdgeList::new(pairs)?)?;
    let truth = GroundTruth {
        params: TopicParams { k, v, beta, beta_back, phi, nu, sigma2: spec.sigma2 },
        theta,
        state: LatentState { z, f, s },
        response,
    };
    Ok((data, truth))
}

/// A single latent variable of a [`LatentState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Global document index.
    Z(usize),
    /// Global word index.
    F(usize),
    /// Edge index and side (0: lower-index endpoint).
    S(usize, usize),
}

const ENUMERATION_LIMIT: usize = 64;

/// Collapsed joint log-probability computed from scratch with plain maps and
/// loops. Shares no code with the trainer's cached implementation.
pub fn reference_log_joint(
    data: &Dataset,
    state: &LatentState,
    hyper: &Hyperparams<f64>,
    nu: &[f64],
    sigma2: f64,
) -> f64 {
    let k = hyper.k;
    let v = data.vocab_size();
    let (alpha, eta, delta) = (hyper.alpha, hyper.eta, hyper.delta);
    let mut user_counts: Vec<Vec<f64>> = vec![vec![0.0; k]; data.n_users()];
    let mut fg: HashMap<(usize, u32), f64> = HashMap::new();
    let mut bg: HashMap<u32, f64> = HashMap::new();
    let mut n_fg = 0.0;
    let mut n_bg = 0.0;
    let mut doc = 0;
    let mut word = 0;
    for (i, u) in data.users().iter().enumerate() {
        for tokens in &u.docs {
            let topic = state.z[doc] as usize;
            user_counts[i][topic] += 1.0;
            for &t in tokens {
                if state.f[word] {
                    *fg.entry((topic, t)).or_default() += 1.0;
                    n_fg += 1.0;
                } else {
                    *bg.entry(t).or_default() += 1.0;
                    n_bg += 1.0;
                }
                word += 1;
            }
            doc += 1;
        }
    }
    let mut links: HashMap<(usize, usize), f64> = HashMap::new();
    for (e, &(i, j)) in data.edges().pairs().iter().enumerate() {
        let (a, b) = (state.s[e][0] as usize, state.s[e][1] as usize);
        user_counts[i][a] += 1.0;
        user_counts[j][b] += 1.0;
        *links.entry((a.min(b), a.max(b))).or_default() += 1.0;
    }

    let mut total = 0.0;
    let ka = k as f64 * alpha;
    for row in &user_counts {
        let n: f64 = row.iter().sum();
        if n == 0.0 {
            continue;
        }
        total += ln_gamma(ka) - ln_gamma(ka + n);
        for &c in row {
            total += ln_gamma(alpha + c) - ln_gamma(alpha);
        }
    }
    let ve = v as f64 * eta;
    let dcm = |counts: Vec<f64>| {
        let n: f64 = counts.iter().sum();
        if n == 0.0 {
            return 0.0;
        }
        let mut s = ln_gamma(ve) - ln_gamma(ve + n);
        for c in counts {
            s += ln_gamma(eta + c) - ln_gamma(eta);
        }
        s
    };
    for topic in 0..k {
        total += dcm((0..v as u32).map(|t| fg.get(&(topic, t)).copied().unwrap_or(0.0)).collect());
    }
    total += dcm((0..v as u32).map(|t| bg.get(&t).copied().unwrap_or(0.0)).collect());

    let (l1, l0) = (hyper.lambda1, hyper.lambda0);
    for a in 0..k {
        for b in a..k {
            let c = links.get(&(a, b)).copied().unwrap_or(0.0);
            // log B(l1 + c, l0) - log B(l1, l0)
            total += ln_gamma(l1 + c) + ln_gamma(l0) - ln_gamma(l1 + l0 + c)
                - (ln_gamma(l1) + ln_gamma(l0) - ln_gamma(l1 + l0));
        }
    }
    total += n_fg * delta.ln() + n_bg * (1.0 - delta).ln();

    for (i, row) in user_counts.iter().enumerate() {
        let n: f64 = row.iter().sum();
        if let (Some(label), true) = (data.label(i), n > 0.0) {
            let mean: f64 = row.iter().zip(nu).map(|(c, w)| c / n * w).sum();
            let r = label.value() - mean;
            total += -0.5 * (2.0 * std::f64::consts::PI * sigma2).ln() - r * r / (2.0 * sigma2);
        }
    }
    total
}

/// Exact conditional of `target` given the rest of `state`, by evaluating the
/// collapsed joint at every value of the target and normalizing.
pub fn enumerate_conditionals(
    data: &Dataset,
    state: &LatentState,
    target: Target,
    hyper: &Hyperparams<f64>,
    nu: &[f64],
    sigma2: f64,
) -> Result<Vec<f64>> {
    let size = data.layout().n_words() + data.edges().len();
    if size > ENUMERATION_LIMIT {
        return Err(Error::InstanceTooLarge(size));
    }
    let n_values = match target {
        Target::F(_) => 2,
        _ => hyper.k,
    };
    let mut scratch = state.clone();
    let logs: Vec<f64> = (0..n_values)
        .map(|m| {
            match target {
                Target::Z(d) => scratch.z[d] = m as u32,
                Target::F(w) => scratch.f[w] = m == 1,
                Target::S(e, side) => scratch.s[e][side] = m as u32,
            }
            reference_log_joint(data, &scratch, hyper, nu, sigma2)
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

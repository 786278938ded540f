//! Per-user inference of topic proportions under frozen trained parameters,
//! and the most-likely topic pair for each friendship.
//!
//! Users are independent given the recovered `beta`/`beta_back`, so
//! [`predict_all`] fans out across a rayon pool. Each user draws from its own
//! `(seed, user index)` stream, which keeps results identical for any worker
//! count.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, EdgeList, UserRecord};
use crate::error::{Error, Result};
use crate::model::{Hyperparams, LinkPair, TopicParams, TriangularMatrix, UserFeatures};
use crate::rng::{substream, StreamTag};
use crate::scalar::{draw_index, from_count, from_usize, lit, normalize_log, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictConfig {
    pub iters: usize,
    /// Fraction of sweeps discarded before averaging.
    pub burn_in: f64,
    pub seed: u64,
    pub threads: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            iters: 50,
            burn_in: 0.5,
            seed: 0,
            threads: 1,
        }
    }
}

/// Gibbs-samples one user's document topics and foreground flags against
/// fixed parameters and returns the averaged smoothed topic proportions.
pub fn predict_user<T: Real>(
    user: &UserRecord,
    params: &TopicParams<T>,
    hyper: &Hyperparams<T>,
    cfg: &PredictConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<T>> {
    let k = params.k;
    if cfg.iters == 0 || !(0.0..1.0).contains(&cfg.burn_in) {
        return Err(Error::InvalidConfig("predict iters must be >= 1 and burn_in in [0, 1)".into()));
    }
    if let Some(&bad) = user.docs.iter().flatten().find(|&&t| t as usize >= params.v) {
        return Err(Error::IndexOutOfRange {
            index: bad as usize,
            len: params.v,
        });
    }
    let n_docs = user.docs.len();
    let alpha = hyper.alpha;
    let kalpha = from_usize::<T>(k) * alpha;
    let denom = from_usize::<T>(n_docs) + kalpha;
    if n_docs == 0 {
        return Ok(vec![T::one() / from_usize(k); k]);
    }

    let delta = hyper.delta;
    let mut z: Vec<u32> = (0..n_docs).map(|_| rng.random_range(0..k as u32)).collect();
    let mut f: Vec<Vec<bool>> = user
        .docs
        .iter()
        .map(|d| d.iter().map(|_| rng.random_bool(0.5)).collect())
        .collect();
    let mut counts = vec![0u32; k];
    for &t in &z {
        counts[t as usize] += 1;
    }

    let start = (cfg.burn_in * cfg.iters as f64).floor() as usize;
    let mut theta = vec![T::zero(); k];
    let mut retained = 0usize;
    let mut weights = vec![T::zero(); k];
    for sweep in 0..cfg.iters {
        for (d, doc) in user.docs.iter().enumerate() {
            counts[z[d] as usize] -= 1;
            for (m, w) in weights.iter_mut().enumerate() {
                let row = params.beta_row(m);
                *w = (from_count::<T>(counts[m]) + alpha).ln()
                    + doc
                        .iter()
                        .zip(&f[d])
                        .filter(|(_, &fg)| fg)
                        .map(|(&tok, _)| row[tok as usize].ln())
                        .sum::<T>();
            }
            normalize_log(&mut weights);
            z[d] = draw_index(&weights, rng.random()) as u32;
            counts[z[d] as usize] += 1;
        }
        for (d, doc) in user.docs.iter().enumerate() {
            let row = params.beta_row(z[d] as usize);
            for (l, &tok) in doc.iter().enumerate() {
                let fg = row[tok as usize] * delta;
                let bg = params.beta_back[tok as usize] * (T::one() - delta);
                let u: f64 = rng.random();
                f[d][l] = lit::<T>(u) < fg / (fg + bg);
            }
        }
        if sweep >= start {
            for (acc, &c) in theta.iter_mut().zip(&counts) {
                *acc += (from_count::<T>(c) + alpha) / denom;
            }
            retained += 1;
        }
    }
    let n = from_usize::<T>(retained);
    Ok(theta.into_iter().map(|x| x / n).collect())
}

/// Most likely canonical topic pair for one friendship: the argmax over
/// `a <= b` of `max(theta_p[a] Phi[a][b] theta_j[b], theta_p[b] Phi[a][b] theta_j[a])`,
/// ties resolved toward the lexicographically smallest pair.
pub fn best_pair<T: Real>(theta_p: &[T], theta_j: &[T], phi: &TriangularMatrix<T>) -> ((usize, usize), T) {
    let k = phi.k();
    let mut best = ((0, 0), T::neg_infinity());
    for a in 0..k {
        for b in a..k {
            let f = *phi.get(a, b);
            let fwd = theta_p[a] * f * theta_j[b];
            let rev = theta_p[b] * f * theta_j[a];
            let score = if rev > fwd { rev } else { fwd };
            if score > best.1 {
                best = ((a, b), score);
            }
        }
    }
    best
}

pub fn assign_link_pairs<T: Real>(
    theta: &[Vec<T>],
    edges: &EdgeList,
    phi: &TriangularMatrix<T>,
) -> Vec<LinkPair<T>> {
    edges
        .pairs()
        .iter()
        .map(|&(p, j)| {
            let (pair, score) = best_pair(&theta[p], &theta[j], phi);
            LinkPair {
                edge: (p, j),
                pair,
                score,
            }
        })
        .collect()
}

/// Output of [`predict_all`]; users whose inference failed keep the prior
/// mean and are listed in `failures`.
#[derive(Debug, Clone)]
pub struct Prediction<T> {
    pub features: UserFeatures<T>,
    pub failures: Vec<(usize, String)>,
}

pub fn predict_all<T: Real>(
    data: &Dataset,
    params: &TopicParams<T>,
    hyper: &Hyperparams<T>,
    cfg: &PredictConfig,
) -> Result<Prediction<T>> {
    if params.v != data.vocab_size() || hyper.k != params.k {
        return Err(Error::DimensionMismatch {
            expected: params.v,
            found: data.vocab_size(),
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let results: Vec<Result<Vec<T>>> = pool.install(|| {
        data.users()
            .par_iter()
            .enumerate()
            .map(|(i, user)| {
                let mut rng = substream(cfg.seed, StreamTag::Predict, i as u64);
                predict_user(user, params, hyper, cfg, &mut rng)
            })
            .collect()
    });
    let k = params.k;
    let mut failures = Vec::new();
    let theta: Vec<Vec<T>> = results
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.unwrap_or_else(|e| {
                failures.push((i, e.to_string()));
                vec![T::one() / from_usize(k); k]
            })
        })
        .collect();
    let link_pairs = assign_link_pairs(&theta, data.edges(), &params.phi);
    Ok(Prediction {
        features: UserFeatures { theta, link_pairs },
        failures,
    })
}

/// One line of a features file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureRecord {
    User { id: String, theta: Vec<f64> },
    Edge { u: String, v: String, pair: (usize, usize), score: f64 },
}

/// Features keyed by user id, as read back from disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub theta: Vec<Vec<f64>>,
    pub edges: Vec<(String, String, (usize, usize), f64)>,
}

impl FeatureTable {
    /// `theta` rows reordered to match `data`'s users.
    pub fn theta_for(&self, data: &Dataset) -> Result<Vec<Vec<f64>>> {
        let index: std::collections::HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        data.users()
            .iter()
            .map(|u| {
                index
                    .get(u.id.as_str())
                    .map(|&i| self.theta[i].clone())
                    .ok_or_else(|| Error::UnknownUser(u.id.clone()))
            })
            .collect()
    }

    /// Edge records as [`LinkPair`]s indexed by position in `ids`.
    pub fn link_pairs(&self) -> Result<Vec<LinkPair<f64>>> {
        let index: std::collections::HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let find = |id: &str| index.get(id).copied().ok_or_else(|| Error::UnknownUser(id.to_owned()));
        self.edges
            .iter()
            .map(|(u, v, pair, score)| Ok(LinkPair { edge: (find(u)?, find(v)?), pair: *pair, score: *score }))
            .collect()
    }
}

pub fn write_features<T: Real>(data: &Dataset, features: &UserFeatures<T>, path: &Path) -> Result<()> {
    let f = |x: T| x.to_f64().unwrap_or(f64::NAN);
    let mut w = BufWriter::new(File::create(path)?);
    for (u, theta) in data.users().iter().zip(&features.theta) {
        let rec = FeatureRecord::User { id: u.id.clone(), theta: theta.iter().map(|&x| f(x)).collect() };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    for lp in &features.link_pairs {
        let rec = FeatureRecord::Edge {
            u: data.user(lp.edge.0).id.clone(),
            v: data.user(lp.edge.1).id.clone(),
            pair: lp.pair,
            score: f(lp.score),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureTable> {
    let mut table = FeatureTable::default();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FeatureRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: n + 1,
            msg: e.to_string(),
        })?;
        match rec {
            FeatureRecord::User { id, theta } => {
                table.ids.push(id);
                table.theta.push(theta);
            }
            FeatureRecord::Edge { u, v, pair, score } => table.edges.push((u, v, pair, score)),
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_2x1(b0: f64, b1: f64) -> (TopicParams<f64>, Hyperparams<f64>) {
        let params = TopicParams {
            k: 2,
            v: 1,
            beta: vec![b0, b1],
            beta_back: vec![1.0],
            phi: TriangularMatrix::filled(2, 0.5),
            nu: vec![0.0; 2],
            sigma2: 1.0,
        };
        let hyper = Hyperparams {
            k: 2,
            alpha: 1.0,
            eta: 1.0,
            delta: 1.0 - 1e-12,
            lambda1: 0.1,
            lambda0: 1.0,
        };
        (params, hyper)
    }

    #[test]
    fn single_topic_is_certain() {
        let params = TopicParams {
            k: 1,
            v: 2,
            beta: vec![0.5, 0.5],
            beta_back: vec![0.5, 0.5],
            phi: TriangularMatrix::filled(1, 0.3),
            nu: vec![0.0],
            sigma2: 1.0,
        };
        let hyper = Hyperparams { k: 1, alpha: 0.5, eta: 1.0, delta: 0.5, lambda1: 0.1, lambda0: 1.0 };
        let user = UserRecord { id: "u".into(), docs: vec![vec![0, 1], vec![1]], label: None };
        let mut rng = substream(1, StreamTag::Predict, 0);
        let th = predict_user(&user, &params, &hyper, &PredictConfig::default(), &mut rng).unwrap();
        assert_eq!(th, vec![1.0]);
    }

    #[test]
    fn empty_user_gets_prior_mean() {
        let (params, hyper) = params_2x1(0.5, 0.5);
        let user = UserRecord { id: "u".into(), docs: vec![], label: None };
        let mut rng = substream(1, StreamTag::Predict, 0);
        let th = predict_user(&user, &params, &hyper, &PredictConfig::default(), &mut rng).unwrap();
        assert_eq!(th, vec![0.5, 0.5]);
    }

    #[test]
    fn one_word_user_converges_to_two_state_mixture() {
        // P(z=0) = 0.99; smoothing maps z=0 to (2/3, 1/3) and z=1 to (1/3, 2/3).
        let expect0 = 0.99 * (2.0 / 3.0) + 0.01 * (1.0 / 3.0);
        let (params, hyper) = params_2x1(0.99, 0.01);
        let user = UserRecord { id: "u".into(), docs: vec![vec![0]], label: None };
        let cfg = PredictConfig { iters: 40_000, ..Default::default() };
        let mut rng = substream(3, StreamTag::Predict, 0);
        let th = predict_user(&user, &params, &hyper, &cfg, &mut rng).unwrap();
        assert!((th[0] - expect0).abs() < 5e-3, "{th:?} vs {expect0}");
        assert!((th[0] + th[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_vocabulary_token_is_an_error() {
        let (params, hyper) = params_2x1(0.5, 0.5);
        let user = UserRecord { id: "u".into(), docs: vec![vec![3]], label: None };
        let mut rng = substream(1, StreamTag::Predict, 0);
        assert!(predict_user(&user, &params, &hyper, &PredictConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn link_pair_examples() {
        let phi1 = TriangularMatrix::filled(1, 0.2);
        assert_eq!(best_pair(&[1.0], &[1.0], &phi1).0, (0, 0));

        let mut phi = TriangularMatrix::filled(3, 0.9);
        *phi.get_mut(0, 1) = 0.01;
        assert_eq!(best_pair(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &phi).0, (0, 1));
        // reversed orientation maps onto the same canonical pair
        assert_eq!(best_pair(&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0], &phi).0, (0, 1));
        // all-zero scores tie everywhere; smallest pair wins
        assert_eq!(best_pair(&[0.0; 3], &[0.0; 3], &phi).0, (0, 0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn simplex(raw: Vec<f64>) -> Vec<f64> {
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        }

        proptest! {
            #[test]
            fn pair_is_symmetric_and_scale_invariant(
                tp in proptest::collection::vec(0.01f64..1.0, 4),
                tj in proptest::collection::vec(0.01f64..1.0, 4),
                ph in proptest::collection::vec(0.001f64..0.999, 10),
                shift in -4i32..4,
            ) {
                let (tp, tj) = (simplex(tp), simplex(tj));
                let mut phi = TriangularMatrix::filled(4, 0.0);
                let mut scaled = phi.clone();
                let c = 2f64.powi(shift);
                for (idx, ((a, b), _)) in TriangularMatrix::filled(4, 0.0).iter().enumerate() {
                    *phi.get_mut(a, b) = ph[idx];
                    *scaled.get_mut(a, b) = ph[idx] * c;
                }
                let (p1, _) = best_pair(&tp, &tj, &phi);
                let (p2, _) = best_pair(&tj, &tp, &phi);
                let (p3, _) = best_pair(&tp, &tj, &scaled);
                prop_assert_eq!(p1, p2);
                prop_assert_eq!(p1, p3);
            }
        }
    }
}

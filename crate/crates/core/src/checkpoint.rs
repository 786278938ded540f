//! Versioned JSON checkpoint: everything needed to resume training exactly
//! (latent state, counts, hyperparameters, regression, RNG position) plus the
//! recovered parameters consumed by prediction and analysis.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{
    recover_beta, recover_phi, CountCache, Hyperparams, LatentState, TopicParams, TriangularMatrix,
};
use crate::rng::RngPosition;
use crate::scalar::{from_usize, Real};
use crate::trainer::{IterationRecord, TrainConfig};

pub const FORMAT: &str = "mmtopic-checkpoint";
pub const VERSION: u32 = 1;

/// Running sums of recovered `beta`, `beta_back`, `Phi` across post-burn-in
/// iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamAccumulator<T> {
    pub samples: usize,
    pub beta: Vec<T>,
    pub beta_back: Vec<T>,
    pub phi: TriangularMatrix<T>,
}

impl<T: Real> ParamAccumulator<T> {
    pub fn new(k: usize, v: usize) -> Self {
        ParamAccumulator {
            samples: 0,
            beta: vec![T::zero(); k * v],
            beta_back: vec![T::zero(); v],
            phi: TriangularMatrix::filled(k, T::zero()),
        }
    }

    pub fn add(&mut self, cache: &CountCache, hyper: &Hyperparams<T>) {
        let (beta, back) = recover_beta(cache, hyper.eta);
        let phi = recover_phi(cache, hyper.lambda1, hyper.lambda0);
        for (acc, x) in self.beta.iter_mut().zip(beta) {
            *acc += x;
        }
        for (acc, x) in self.beta_back.iter_mut().zip(back) {
            *acc += x;
        }
        for ((a, b), &x) in phi.iter() {
            *self.phi.get_mut(a, b) += x;
        }
        self.samples += 1;
    }

    #[allow(clippy::type_complexity)]
    pub fn mean(&self) -> Option<(Vec<T>, Vec<T>, TriangularMatrix<T>)> {
        if self.samples == 0 {
            return None;
        }
        let n: T = from_usize(self.samples);
        let mut phi = self.phi.clone();
        let k = phi.k();
        for a in 0..k {
            for b in a..k {
                *phi.get_mut(a, b) = *self.phi.get(a, b) / n;
            }
        }
        Some((
            self.beta.iter().map(|&x| x / n).collect(),
            self.beta_back.iter().map(|&x| x / n).collect(),
            phi,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub format: String,
    pub version: u32,
    pub k: usize,
    pub v: usize,
    pub p: usize,
    pub vocab: Vocabulary,
    pub user_ids: Vec<String>,
    pub config: TrainConfig,
    pub hyper: Hyperparams<T>,
    pub nu: Vec<T>,
    pub sigma2: T,
    pub cache: CountCache,
    pub state: LatentState,
    pub rng: RngPosition,
    pub iteration: usize,
    pub trace: Vec<IterationRecord>,
    pub accum: ParamAccumulator<T>,
    pub params: TopicParams<T>,
}

impl<T: Real> Checkpoint<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(s)?;
        ckpt.check_header()?;
        Ok(ckpt)
    }

    fn check_header(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        if self.vocab.len() != self.v || self.params.v != self.v || self.params.k != self.k {
            return Err(Error::Checkpoint("inconsistent dimensions".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

impl<T: Real + DeserializeOwned> Checkpoint<T> {
    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        ckpt.check_header()?;
        Ok(ckpt)
    }
}

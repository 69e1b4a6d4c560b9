//! Successive-halving hyperparameter search.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::WindowBatch;
use crate::error::{FddError, Result};
use crate::model::{train, ModelConfig};

/// Candidate values per hyperparameter; each trial draws one from every list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rates: Vec<f64>,
    /// Encoder stacks.
    pub encoders: Vec<Vec<usize>>,
    /// Decoder layers before the final `features`-wide layer.
    pub decoder_hidden: Vec<Vec<usize>>,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub lambda3: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-1, 2e-1, 3e-1, 1e-2],
            encoders: vec![vec![16]],
            decoder_hidden: vec![vec![]],
            lambda1: vec![1.0],
            lambda2: vec![1.0],
            lambda3: vec![1e-4],
            batch_sizes: vec![64],
        }
    }
}

impl SearchSpace {
    fn validate(&self) -> Result<()> {
        let empty = self.learning_rates.is_empty()
            || self.encoders.is_empty()
            || self.decoder_hidden.is_empty()
            || self.lambda1.is_empty()
            || self.lambda2.is_empty()
            || self.lambda3.is_empty()
            || self.batch_sizes.is_empty();
        if empty {
            return Err(FddError::Config("search space has an empty dimension".into()));
        }
        Ok(())
    }

    fn sample(&self, base: &ModelConfig, rng: &mut ChaCha8Rng) -> ModelConfig {
        let mut c = base.clone();
        c.learning_rate = *self.learning_rates.choose(rng).unwrap();
        c.encoder = self.encoders.choose(rng).unwrap().clone();
        c.decoder = self.decoder_hidden.choose(rng).unwrap().clone();
        c.decoder.push(base.features);
        c.lambda1 = *self.lambda1.choose(rng).unwrap();
        c.lambda2 = *self.lambda2.choose(rng).unwrap();
        c.lambda3 = *self.lambda3.choose(rng).unwrap();
        c.batch_size = *self.batch_sizes.choose(rng).unwrap();
        c
    }
}

/// One training run of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub stage: usize,
    pub epochs: usize,
    pub val_accuracy: f64,
    pub config: ModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: ModelConfig,
    pub best_trial: usize,
    pub log: Vec<TrialRecord>,
}

impl TuneResult {
    /// `trial,stage,epochs,val_accuracy,learning_rate,encoder,decoder,lambda1,lambda2,lambda3,batch_size` rows.
    pub fn log_table(&self) -> String {
        let mut s = String::from("trial,stage,epochs,val_accuracy,learning_rate,encoder,decoder,lambda1,lambda2,lambda3,batch_size\n");
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        for r in &self.log {
            let c = &r.config;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.trial,
                r.stage,
                r.epochs,
                r.val_accuracy,
                c.learning_rate,
                join(&c.encoder),
                join(&c.decoder),
                c.lambda1,
                c.lambda2,
                c.lambda3,
                c.batch_size
            ));
        }
        s
    }
}

/// Samples `budget` configurations, trains each for `initial_epochs`, keeps
/// the better half (ceiling) by best validation accuracy, doubles the epochs
/// and retrains from scratch until one remains. Ties favor the lower trial
/// index. With `budget = 1` the sampled configuration is returned untrained.
pub fn tune(
    train_set: &WindowBatch,
    val: &WindowBatch,
    base: &ModelConfig,
    space: &SearchSpace,
    budget: usize,
    initial_epochs: usize,
    seed: u64,
) -> Result<TuneResult> {
    space.validate()?;
    if budget == 0 {
        return Err(FddError::Config("tuning budget must be at least 1".into()));
    }
    if initial_epochs == 0 {
        return Err(FddError::Config("initial stage needs at least one epoch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trials: Vec<ModelConfig> = (0..budget)
        .map(|t| {
            let mut c = space.sample(base, &mut rng);
            c.seed = seed.wrapping_add(t as u64);
            c
        })
        .collect();
    for c in &trials {
        c.validate()?;
    }
    if budget == 1 {
        return Ok(TuneResult {
            best: trials[0].clone(),
            best_trial: 0,
            log: Vec::new(),
        });
    }
    if val.is_empty() {
        return Err(FddError::EmptySplit("validation"));
    }

    let mut survivors: Vec<usize> = (0..budget).collect();
    let mut epochs = initial_epochs;
    let mut log = Vec::new();
    let mut stage = 0;
    loop {
        let scores: Vec<(usize, f64)> = survivors
            .par_iter()
            .map(|&t| {
                let mut c = trials[t].clone();
                c.epochs = epochs;
                let m = train(train_set, val, &c)?;
                let acc = m
                    .history
                    .iter()
                    .filter_map(|r| r.val_accuracy)
                    .fold(f64::NEG_INFINITY, f64::max);
                Ok((t, acc))
            })
            .collect::<Result<_>>()?;
        for &(t, acc) in &scores {
            let mut c = trials[t].clone();
            c.epochs = epochs;
            log.push(TrialRecord {
                trial: t,
                stage,
                epochs,
                val_accuracy: acc,
                config: c,
            });
        }
        let mut ranked = scores;
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let keep = ranked.len().div_ceil(2);
        survivors = ranked[..keep].iter().map(|&(t, _)| t).collect();
        if survivors.len() == 1 {
            let best_trial = survivors[0];
            let mut best = trials[best_trial].clone();
            best.epochs = epochs;
            return Ok(TuneResult { best, best_trial, log });
        }
        epochs *= 2;
        stage += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor2;

    fn toy() -> (WindowBatch, WindowBatch) {
        let mk = |s: f64| Tensor2::from_vec(4, 2, (0..8).map(|k| s * (k as f64 * 0.7).sin()).collect()).unwrap();
        let w: Vec<Tensor2> = (0..8).map(|i| mk(if i % 2 == 0 { 1.0 } else { -1.0 })).collect();
        let labels = (0..8).map(|i| i % 2).collect();
        let b = WindowBatch::from_windows(&w, labels).unwrap();
        (b.subset(&[0, 1, 2, 3, 4, 5]), b.subset(&[6, 7]))
    }

    fn base() -> ModelConfig {
        ModelConfig::new(vec![3], vec![2], 2, 2, 4, 0)
    }

    #[test]
    fn default_grid_has_listed_rates() {
        let s = SearchSpace::default();
        for lr in [1e-1, 2e-1, 3e-1, 1e-2] {
            assert!(s.learning_rates.contains(&lr));
        }
    }

    #[test]
    fn budget_one_returns_sampled_config() {
        let (t, v) = toy();
        let r = tune(&t, &v, &base(), &SearchSpace::default(), 1, 2, 9).unwrap();
        assert!(r.log.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut want = SearchSpace::default().sample(&base(), &mut rng);
        want.seed = 9;
        assert_eq!(r.best, want);
    }

    #[test]
    fn empty_space_is_config_error() {
        let (t, v) = toy();
        let space = SearchSpace {
            learning_rates: vec![],
            ..SearchSpace::default()
        };
        assert!(matches!(tune(&t, &v, &base(), &space, 3, 1, 0), Err(FddError::Config(_))));
    }

    #[test]
    fn winner_tops_final_stage_and_is_deterministic() {
        let (t, v) = toy();
        let space = SearchSpace {
            encoders: vec![vec![2], vec![3]],
            ..SearchSpace::default()
        };
        let r = tune(&t, &v, &base(), &space, 5, 1, 3).unwrap();
        let last = r.log.iter().map(|x| x.stage).max().unwrap();
        let final_stage: Vec<_> = r.log.iter().filter(|x| x.stage == last).collect();
        let top = final_stage.iter().map(|x| x.val_accuracy).fold(f64::NEG_INFINITY, f64::max);
        let winner = final_stage.iter().find(|x| x.trial == r.best_trial).unwrap();
        assert_eq!(winner.val_accuracy, top);
        // 5 -> 3 -> 2 -> 1 survivors.
        assert_eq!(r.log.len(), 5 + 3 + 2);
        assert_eq!(r.best.epochs, 4);
        assert_eq!(tune(&t, &v, &base(), &space, 5, 1, 3).unwrap(), r);
    }
}

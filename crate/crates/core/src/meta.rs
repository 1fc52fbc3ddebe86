//! Reptile meta-training across fading families.
//!
//! Each episode draws a task uniformly, runs `p` SGD steps from a copy of the
//! current parameters to get `θ̄`, and moves `θ ← θ + η(θ̄ − θ)`. With `p = 1`
//! this collapses to SGD with step `η·ε` on the task mixture.

use serde::{Deserialize, Serialize};

use crate::channel::FadingModel;
use crate::error::{Error, Result};
use crate::nn::{evaluate, sample_batch, train, train_step, Dataset, EpochStats, MlpModel, TrainConfig};
use crate::numerics::Prng;

const META_STREAM: u64 = 0x6d65_7461;

#[derive(Clone, Debug)]
pub struct MetaTask {
    pub task_id: usize,
    pub fading: FadingModel,
    pub dataset: Dataset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    pub outer_step_eta: f64,
    pub inner_steps_p: usize,
    pub episodes: usize,
    /// Inner SGD settings; `epochs` is unused here.
    pub inner: TrainConfig,
    /// Records of the sampled task scored after each episode.
    pub val_records: usize,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            outer_step_eta: 0.1,
            inner_steps_p: 5,
            episodes: 400,
            inner: TrainConfig { learning_rate: 0.01, batch_size: 100, epochs: 0, seed: 0 },
            val_records: 100,
            seed: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.outer_step_eta >= 0.0 && self.outer_step_eta <= 1.0) {
            return Err(Error::Config(format!("outer step {} outside [0, 1]", self.outer_step_eta)));
        }
        if self.inner_steps_p == 0 {
            return Err(Error::Config("inner step count must be at least 1".into()));
        }
        self.inner.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub task_id: usize,
    /// Loss on the sampled task after the outer update.
    pub val_loss: f64,
}

/// `θ̄` after `p` SGD steps from a copy of `model`.
pub fn inner_update(
    model: &MlpModel,
    data: &Dataset,
    p: usize,
    inner: &TrainConfig,
    rng: &mut Prng,
) -> Result<MlpModel> {
    if p == 0 {
        return Err(Error::invalid("inner step count must be at least 1"));
    }
    if data.is_empty() {
        return Err(Error::invalid("task dataset is empty"));
    }
    let mut theta_bar = model.clone();
    for _ in 0..p {
        let idx = sample_batch(rng, data.len(), inner.batch_size);
        train_step(&mut theta_bar, data, &idx, inner.learning_rate)?;
    }
    Ok(theta_bar)
}

/// `θ ← θ + η(θ̄ − θ)`.
pub fn reptile_step(model: &mut MlpModel, theta_bar: &MlpModel, eta: f64) -> Result<()> {
    if model.layer_sizes() != theta_bar.layer_sizes() {
        return Err(Error::invalid("inner model shape differs from the meta model"));
    }
    for (t, b) in model.params_mut().iter_mut().zip(theta_bar.params()) {
        *t += eta * (b - *t);
    }
    Ok(())
}

fn check_tasks(model: &MlpModel, tasks: &[MetaTask]) -> Result<()> {
    if tasks.is_empty() {
        return Err(Error::invalid("meta-training needs at least one task"));
    }
    for t in tasks {
        if t.dataset.is_empty() {
            return Err(Error::invalid(format!("task {} has no records", t.task_id)));
        }
        if t.dataset.dim() != model.input_dim() {
            return Err(Error::invalid(format!(
                "task {} features have length {}, model expects {}",
                t.task_id,
                t.dataset.dim(),
                model.input_dim()
            )));
        }
    }
    Ok(())
}

/// Generator for one episode; also lets callers replay an episode's draws.
pub fn episode_rng(cfg: &MetaConfig, episode: usize) -> Prng {
    Prng::new(cfg.seed, META_STREAM).derive(episode as u64)
}

/// One task draw, inner update and outer step.
pub fn meta_episode(
    model: &mut MlpModel,
    tasks: &[MetaTask],
    cfg: &MetaConfig,
    episode: usize,
) -> Result<EpisodeRecord> {
    let mut rng = episode_rng(cfg, episode);
    let task = &tasks[rng.below(tasks.len())];
    let theta_bar = inner_update(model, &task.dataset, cfg.inner_steps_p, &cfg.inner, &mut rng)?;
    reptile_step(model, &theta_bar, cfg.outer_step_eta)?;
    let val_loss = if cfg.val_records > 0 {
        evaluate(model, &task.dataset.head(cfg.val_records))?.0
    } else {
        f64::NAN
    };
    Ok(EpisodeRecord { episode, task_id: task.task_id, val_loss })
}

pub fn meta_train(model: &mut MlpModel, tasks: &[MetaTask], cfg: &MetaConfig) -> Result<Vec<EpisodeRecord>> {
    cfg.validate()?;
    check_tasks(model, tasks)?;
    let mut history = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        history.push(meta_episode(model, tasks, cfg, episode)?);
    }
    if !model.is_finite() {
        return Err(Error::Numerical("meta-training produced non-finite parameters".into()));
    }
    Ok(history)
}

/// Ordinary training started from the meta-initialization.
pub fn fine_tune(meta_model: &MlpModel, target: &Dataset, cfg: &TrainConfig) -> Result<(MlpModel, Vec<EpochStats>)> {
    let mut model = meta_model.clone();
    if cfg.epochs == 0 {
        return Ok((model, Vec::new()));
    }
    let history = train(&mut model, target, cfg)?;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{backward, init_model};
    use proptest::prelude::*;

    fn task(id: usize, n: usize, shift: f64, seed: u64) -> MetaTask {
        let mut rng = Prng::new(seed, 0);
        let mut d = Dataset::new(4);
        for _ in 0..n {
            let label = rng.below(2) as u8;
            let s = if label == 1 { shift } else { -shift };
            let x: Vec<f64> = (0..4).map(|_| s + rng.standard_normal()).collect();
            d.push(&x, label).unwrap();
        }
        MetaTask { task_id: id, fading: FadingModel::Rayleigh, dataset: d }
    }

    fn small_cfg(p: usize, eta: f64, episodes: usize) -> MetaConfig {
        MetaConfig {
            outer_step_eta: eta,
            inner_steps_p: p,
            episodes,
            inner: TrainConfig { learning_rate: 0.05, batch_size: 8, epochs: 0, seed: 0 },
            val_records: 10,
            seed: 11,
        }
    }

    #[test]
    fn inner_update_cases() {
        let model = init_model(&mut Prng::new(1, 0), &[4, 5, 2]).unwrap();
        let t = task(0, 40, 1.0, 2);
        let zero_lr = TrainConfig { learning_rate: 0.0, ..small_cfg(1, 1.0, 1).inner };
        // Zero learning rate is rejected by validation elsewhere but the
        // inner loop itself must leave θ alone.
        let same = inner_update(&model, &t.dataset, 3, &zero_lr, &mut Prng::new(0, 0)).unwrap();
        assert_eq!(same, model);

        let cfg = small_cfg(1, 1.0, 1);
        let mut rng = Prng::new(4, 4);
        let bar = inner_update(&model, &t.dataset, 1, &cfg.inner, &mut rng).unwrap();
        let mut rng = Prng::new(4, 4);
        let idx = sample_batch(&mut rng, t.dataset.len(), cfg.inner.batch_size);
        let batch = t.dataset.subset(&idx);
        let g = backward(&model, batch.features(), batch.labels()).unwrap();
        for k in 0..model.param_count() {
            let want = model.params()[k] - cfg.inner.learning_rate * g.values()[k];
            assert_eq!(bar.params()[k], want);
        }
        let again = inner_update(&model, &t.dataset, 1, &cfg.inner, &mut Prng::new(4, 4)).unwrap();
        assert_eq!(again, bar);
        assert!(inner_update(&model, &t.dataset, 0, &cfg.inner, &mut rng).is_err());
    }

    #[test]
    fn reptile_arithmetic() {
        let mut theta = MlpModel::from_params(&[1, 1], vec![1.0, 0.0]).unwrap();
        let bar = MlpModel::from_params(&[1, 1], vec![0.5, 2.0]).unwrap();
        reptile_step(&mut theta, &bar, 0.1).unwrap();
        assert_eq!(theta.params()[0], 0.95);
        let before = theta.clone();
        reptile_step(&mut theta, &bar, 0.0).unwrap();
        assert_eq!(theta, before);
        reptile_step(&mut theta, &bar, 1.0).unwrap();
        assert_eq!(theta, bar);
        let other = MlpModel::zeros(&[2, 1]).unwrap();
        assert!(reptile_step(&mut theta, &other, 0.5).is_err());
    }

    #[test]
    fn single_task_full_step_is_plain_sgd() {
        let init = init_model(&mut Prng::new(3, 0), &[4, 6, 2]).unwrap();
        let tasks = vec![task(7, 60, 0.8, 5)];
        let cfg = small_cfg(1, 1.0, 25);
        let mut meta = init.clone();
        meta_train(&mut meta, &tasks, &cfg).unwrap();

        let mut plain = init;
        for ep in 0..cfg.episodes {
            let mut rng = episode_rng(&cfg, ep);
            assert_eq!(rng.below(1), 0);
            let idx = sample_batch(&mut rng, 60, cfg.inner.batch_size);
            train_step(&mut plain, &tasks[0].dataset, &idx, cfg.inner.learning_rate).unwrap();
        }
        for (a, b) in meta.params().iter().zip(plain.params()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn one_inner_step_is_joint_training() {
        let tasks = vec![task(0, 50, 1.0, 1), task(1, 50, -0.5, 2)];
        let cfg = small_cfg(1, 0.1, 100);
        let mut model = init_model(&mut Prng::new(8, 0), &[4, 6, 2]).unwrap();
        let mut seen = [0usize; 2];
        for ep in 0..cfg.episodes {
            let before = model.clone();
            let rec = meta_episode(&mut model, &tasks, &cfg, ep).unwrap();
            seen[rec.task_id] += 1;
            let mut rng = episode_rng(&cfg, ep);
            let t = &tasks[rng.below(2)];
            assert_eq!(t.task_id, rec.task_id);
            let batch = t.dataset.subset(&sample_batch(&mut rng, 50, cfg.inner.batch_size));
            let g = backward(&before, batch.features(), batch.labels()).unwrap();
            let step = cfg.outer_step_eta * cfg.inner.learning_rate;
            for k in 0..model.param_count() {
                let want = before.params()[k] - step * g.values()[k];
                assert!((model.params()[k] - want).abs() < 1e-10);
            }
        }
        assert!(seen.iter().all(|&c| c > 20));
    }

    #[test]
    fn meta_train_edges() {
        let tasks = vec![task(0, 30, 1.0, 1), task(1, 30, 1.0, 2)];
        let snapshot: Vec<Dataset> = tasks.iter().map(|t| t.dataset.clone()).collect();
        let init = init_model(&mut Prng::new(2, 0), &[4, 3, 2]).unwrap();

        let mut m = init.clone();
        assert!(meta_train(&mut m, &tasks, &small_cfg(2, 0.5, 0)).unwrap().is_empty());
        assert_eq!(m, init);

        let cfg = small_cfg(3, 0.5, 10);
        let hist = meta_train(&mut m, &tasks, &cfg).unwrap();
        assert_eq!(hist.len(), 10);
        assert!(hist.iter().all(|r| r.val_loss.is_finite() && r.task_id < 2));
        for (t, s) in tasks.iter().zip(&snapshot) {
            assert_eq!(&t.dataset, s);
        }
        let mut m2 = init.clone();
        assert_eq!(meta_train(&mut m2, &tasks, &cfg).unwrap(), hist);
        assert_eq!(m2, m);

        assert!(meta_train(&mut m2, &[], &cfg).is_err());
        let wrong = MetaTask { dataset: Dataset::new(3), ..tasks[0].clone() };
        assert!(meta_train(&mut m2, &[wrong], &cfg).is_err());
        assert!(meta_train(&mut m2, &tasks, &small_cfg(0, 0.5, 1)).is_err());
        assert!(meta_train(&mut m2, &tasks, &small_cfg(1, 1.5, 1)).is_err());
    }

    #[test]
    fn fine_tune_cases() {
        let init = init_model(&mut Prng::new(2, 0), &[4, 3, 2]).unwrap();
        let data = task(0, 40, 1.0, 9).dataset;
        let zero = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert_eq!(fine_tune(&init, &data, &zero).unwrap().0, init);
        let cfg = TrainConfig { learning_rate: 0.05, batch_size: 10, epochs: 5, seed: 1 };
        let (a, ha) = fine_tune(&init, &data, &cfg).unwrap();
        let (b, hb) = fine_tune(&init, &data, &cfg).unwrap();
        assert_eq!((a, ha.len()), (b, hb.len()));
    }

    proptest! {
        #[test]
        fn reptile_is_a_convex_combination(
            theta in prop::collection::vec(-5.0f64..5.0, 4),
            bar in prop::collection::vec(-5.0f64..5.0, 4),
            eta in 0.0f64..=1.0,
        ) {
            let mut t = MlpModel::from_params(&[1, 2], theta.clone()).unwrap();
            let b = MlpModel::from_params(&[1, 2], bar.clone()).unwrap();
            reptile_step(&mut t, &b, eta).unwrap();
            for i in 0..4 {
                let (lo, hi) = (theta[i].min(bar[i]), theta[i].max(bar[i]));
                prop_assert!(t.params()[i] >= lo - 1e-12 && t.params()[i] <= hi + 1e-12);
            }
        }
    }
}

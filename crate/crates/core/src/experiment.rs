//! Experiment orchestration: dataset generation, BER and rate sweeps,
//! training, meta-training, guessing-entropy tables and the end-to-end demo.
//!
//! Every Monte-Carlo unit (a trial frame, a dataset record, a channel draw)
//! owns a substream derived from `(seed, purpose, point, index)`, and results
//! are reduced in index order, so output does not depend on worker count.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{draw_channel, synthesize_frame, BackscatterLevel, ChannelParams, FadingModel, ReceivedBlock};
use crate::codec::{build_frames, merge_message, pilot_pattern, split_message, strip_frames, AmbFrame, SplitConfig};
use crate::error::{Error, Result};
use crate::features::{
    estimate_pilot_covariances, feature_len, read_dataset, sample_covariance, write_dataset, FeatureReference,
};
use crate::meta::{fine_tune, meta_train, EpisodeRecord, MetaConfig, MetaTask};
use crate::mlk::{build_covariances, energy_decide, mlk_decide, PerfectCsi};
use crate::nn::{detector_layer_sizes, init_model, train, Dataset, EpochStats, MlpModel, TrainConfig};
use crate::numerics::{db_to_linear, Prng};
use crate::rate::{rate_sweep, RateAxis, RateRow, RateSweep};
use crate::security::{uniform_bound_sweep, BoundRow};

const STREAM_BER: u64 = 0x0062_6572;
const STREAM_DATASET: u64 = 0x6461_7461;
const STREAM_E2E: u64 = 0x0065_3265;
const STREAM_INIT: u64 = 0x696e_6974;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Detector {
    #[serde(rename = "mlk")]
    Mlk,
    #[serde(rename = "dl-pcsi")]
    DlPcsi,
    #[serde(rename = "dl-ecsi")]
    DlEcsi,
    #[serde(rename = "energy")]
    Energy,
}

impl Detector {
    pub fn name(self) -> &'static str {
        match self {
            Detector::Mlk => "mlk",
            Detector::DlPcsi => "dl-pcsi",
            Detector::DlEcsi => "dl-ecsi",
            Detector::Energy => "energy",
        }
    }
}

/// Source of the neural detector's reference covariances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsiMode {
    Pcsi,
    Ecsi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Theta0,
    AlphaDt,
    AlphaBt,
    Antennas,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BerSection {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    pub detectors: Vec<Detector>,
    pub dl_pcsi_model: Option<PathBuf>,
    pub dl_ecsi_model: Option<PathBuf>,
}

impl Default for BerSection {
    fn default() -> Self {
        Self {
            axis: SweepAxis::AlphaDt,
            grid: vec![1.0, 5.0, 9.0],
            detectors: vec![Detector::Mlk],
            dl_pcsi_model: None,
            dl_ecsi_model: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub records: usize,
    pub csi: CsiMode,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { records: 10_000, csi: CsiMode::Pcsi }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Dataset file; generated from the link settings when absent.
    pub data: Option<PathBuf>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { data: None, learning_rate: 0.01, batch_size: 1000, epochs: 30 }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaSection {
    pub outer_step_eta: f64,
    pub inner_steps_p: usize,
    pub episodes: usize,
    pub inner_learning_rate: f64,
    pub inner_batch_size: usize,
    pub val_records: usize,
    /// Training tasks, one per fading family.
    pub tasks: Vec<FadingModel>,
    pub task_records: usize,
    /// Dataset files for the tasks, in order; generated when empty.
    pub task_data: Vec<PathBuf>,
    /// Records of the target channel used for fine-tuning; 0 skips it.
    pub finetune_records: usize,
    pub finetune_data: Option<PathBuf>,
    pub finetune: TrainSection,
}

impl Default for MetaSection {
    fn default() -> Self {
        let m = MetaConfig::default();
        Self {
            outer_step_eta: m.outer_step_eta,
            inner_steps_p: m.inner_steps_p,
            episodes: m.episodes,
            inner_learning_rate: m.inner.learning_rate,
            inner_batch_size: m.inner.batch_size,
            val_records: m.val_records,
            tasks: vec![FadingModel::Rician { k_factor: 3.0 }, FadingModel::Nakagami { m_shape: 2.0 }],
            task_records: 500,
            task_data: Vec::new(),
            finetune_records: 50,
            finetune_data: None,
            finetune: TrainSection { data: None, learning_rate: 0.01, batch_size: 50, epochs: 30 },
        }
    }
}

impl MetaSection {
    pub fn to_config(&self, seed: u64) -> MetaConfig {
        MetaConfig {
            outer_step_eta: self.outer_step_eta,
            inner_steps_p: self.inner_steps_p,
            episodes: self.episodes,
            inner: TrainConfig {
                learning_rate: self.inner_learning_rate,
                batch_size: self.inner_batch_size,
                epochs: 0,
                seed,
            },
            val_records: self.val_records,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateSection {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    /// Channel draws per point; each draw gets `trials / channels` signals.
    pub channels: usize,
}

impl Default for RateSection {
    fn default() -> Self {
        Self {
            axis: SweepAxis::Theta0,
            grid: (1..=9).map(|k| k as f64 / 10.0).collect(),
            channels: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecuritySection {
    pub message_bits: u64,
    pub beta_grid: Vec<f64>,
}

impl Default for SecuritySection {
    fn default() -> Self {
        Self {
            message_bits: 100,
            beta_grid: (1..=50).map(|k| k as f64 / 100.0).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E2eSection {
    pub message_bits: usize,
    /// Every `stride`-th original bit goes over the backscatter link.
    pub stride: usize,
    pub messages: usize,
    pub detector: Detector,
}

impl Default for E2eSection {
    fn default() -> Self {
        Self { message_bits: 1000, stride: 10, messages: 1, detector: Detector::Mlk }
    }
}

/// Whole-run configuration, read from one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub antennas: usize,
    pub spreading: usize,
    pub frame_bits: usize,
    pub pilots: usize,
    pub alpha_dt_db: f64,
    pub backscatter: BackscatterLevel,
    pub theta0: f64,
    pub fading: FadingModel,
    /// Monte-Carlo trials per grid point: frames for BER, samples for rate.
    pub trials: usize,
    pub ber: BerSection,
    pub dataset: DatasetSection,
    pub train: TrainSection,
    pub meta: MetaSection,
    pub rate: RateSection,
    pub security: SecuritySection,
    pub e2e: E2eSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            antennas: 10,
            spreading: 50,
            frame_bits: 100,
            pilots: 40,
            alpha_dt_db: 5.0,
            backscatter: BackscatterLevel::Fixed { alpha_bt_db: -10.0 },
            theta0: 0.5,
            fading: FadingModel::Rayleigh,
            trials: 100_000,
            ber: BerSection::default(),
            dataset: DatasetSection::default(),
            train: TrainSection::default(),
            meta: MetaSection::default(),
            rate: RateSection::default(),
            security: SecuritySection::default(),
            e2e: E2eSection::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 || self.spreading == 0 {
            return Err(config_err("antennas and spreading must be at least 1"));
        }
        if self.pilots < 2 || !self.pilots.is_multiple_of(2) || self.pilots >= self.frame_bits {
            return Err(config_err(format!(
                "pilots must be even, at least 2 and below frame_bits ({}), got {}",
                self.frame_bits, self.pilots
            )));
        }
        if !(0.0..=1.0).contains(&self.theta0) {
            return Err(config_err(format!("theta0 {} outside [0, 1]", self.theta0)));
        }
        if self.trials == 0 {
            return Err(config_err("trials must be at least 1"));
        }
        if self.ber.grid.is_empty() || self.rate.grid.is_empty() || self.security.beta_grid.is_empty() {
            return Err(config_err("sweep grids must be nonempty"));
        }
        if self.ber.detectors.is_empty() {
            return Err(config_err("at least one detector is required"));
        }
        if self.ber.axis == SweepAxis::Theta0 || self.rate.axis == SweepAxis::AlphaBt {
            return Err(config_err("unsupported sweep axis for this command"));
        }
        if self.rate.channels == 0 {
            return Err(config_err("rate.channels must be at least 1"));
        }
        if self.e2e.stride < 2 || self.e2e.message_bits == 0 {
            return Err(config_err("e2e needs stride ≥ 2 and a nonempty message"));
        }
        self.fading.validate().map_err(|e| config_err(e.to_string()))?;
        self.train.to_config(self.seed).validate()?;
        self.meta.to_config(self.seed).validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex-encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Comment line written at the top of every CSV output.
    pub fn header_comment(&self) -> String {
        format!(
            "# config_sha256={} seed={} version={} pilots={} meta_p={}",
            self.hash(),
            self.seed,
            VERSION,
            self.pilots,
            self.meta.inner_steps_p
        )
    }

    pub fn link(&self) -> LinkPoint {
        LinkPoint {
            alpha_dt_db: self.alpha_dt_db,
            alpha_bt_db: self.backscatter.alpha_bt_db(self.alpha_dt_db),
            antennas: self.antennas,
            spreading: self.spreading,
            fading: self.fading,
        }
    }

    pub fn layout(&self) -> FrameLayout {
        FrameLayout { frame_bits: self.frame_bits, pilots: self.pilots }
    }
}

/// One operating point of the link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkPoint {
    pub alpha_dt_db: f64,
    pub alpha_bt_db: f64,
    pub antennas: usize,
    pub spreading: usize,
    pub fading: FadingModel,
}

impl LinkPoint {
    pub fn params(&self) -> Result<ChannelParams> {
        ChannelParams::new(
            db_to_linear(self.alpha_dt_db),
            db_to_linear(self.alpha_bt_db),
            self.antennas,
            self.spreading,
            self.fading,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameLayout {
    pub frame_bits: usize,
    pub pilots: usize,
}

impl FrameLayout {
    pub fn payload(&self) -> usize {
        self.frame_bits - self.pilots
    }
}

/// Trained networks available to the BER harness.
#[derive(Clone, Copy, Debug, Default)]
pub struct DlModels<'a> {
    pub pcsi: Option<&'a MlpModel>,
    pub ecsi: Option<&'a MlpModel>,
}

impl<'a> DlModels<'a> {
    fn get(&self, det: Detector, antennas: usize) -> Result<Option<&'a MlpModel>> {
        let model = match det {
            Detector::DlPcsi => self.pcsi,
            Detector::DlEcsi => self.ecsi,
            _ => return Ok(None),
        };
        let model = model.ok_or_else(|| config_err(format!("detector {} needs a model file", det.name())))?;
        if model.input_dim() != feature_len(antennas) || model.output_dim() != 2 {
            return Err(config_err(format!(
                "model for {} has input {} but M={antennas} needs {}",
                det.name(),
                model.input_dim(),
                feature_len(antennas)
            )));
        }
        Ok(Some(model))
    }
}

fn nn_decisions(model: &MlpModel, reference: &FeatureReference, blocks: &[ReceivedBlock]) -> Result<Vec<u8>> {
    let mut x = Vec::with_capacity(blocks.len() * model.input_dim());
    for b in blocks {
        x.extend_from_slice(reference.features(&sample_covariance(b)).values());
    }
    model.predict_batch(&x)
}

fn draw_bits(rng: &mut Prng, n: usize, theta0: f64) -> Vec<u8> {
    (0..n).map(|_| u8::from(rng.bernoulli(1.0 - theta0))).collect()
}

/// Bit errors of each detector on one frame.
fn trial_errors(
    params: &ChannelParams,
    layout: FrameLayout,
    theta0: f64,
    detectors: &[(Detector, Option<&MlpModel>)],
    root: &Prng,
) -> Result<Vec<u64>> {
    let chan = draw_channel(&mut root.derive(0), params);
    let payload = draw_bits(&mut root.derive(1), layout.payload(), theta0);
    let blocks = synthesize_frame(&mut root.derive(2), &chan, params, &payload)?;
    let csi = PerfectCsi::from_channel(&chan, params);
    let needs_cov = detectors.iter().any(|(d, _)| matches!(d, Detector::Mlk | Detector::Energy));
    let cov = needs_cov.then(|| build_covariances(&csi));
    let count = |decided: &[u8]| decided.iter().zip(&payload).filter(|(a, b)| a != b).count() as u64;
    detectors
        .iter()
        .map(|&(det, model)| {
            let decided: Vec<u8> = match det {
                Detector::Mlk => blocks.iter().map(|b| mlk_decide(b, cov.as_ref().unwrap())).collect(),
                Detector::Energy => blocks.iter().map(|b| energy_decide(b, cov.as_ref().unwrap())).collect(),
                Detector::DlPcsi => nn_decisions(model.unwrap(), &FeatureReference::from_csi(&csi), &blocks)?,
                Detector::DlEcsi => {
                    let pilots = synthesize_frame(&mut root.derive(3), &chan, params, &pilot_pattern(layout.pilots))?;
                    let est = estimate_pilot_covariances(&pilots, layout.pilots)?;
                    nn_decisions(model.unwrap(), &FeatureReference::from_pilots(&est)?, &blocks)?
                }
            };
            Ok(count(&decided))
        })
        .collect()
}

/// Total bit errors per detector over `trials` frames at one point. Trials
/// are keyed by `(seed, point, trial)`, so every detector sees the same
/// frames.
#[allow(clippy::too_many_arguments)]
pub fn count_bit_errors(
    point: &LinkPoint,
    layout: FrameLayout,
    theta0: f64,
    detectors: &[Detector],
    models: DlModels<'_>,
    trials: usize,
    seed: u64,
    point_index: u64,
) -> Result<Vec<u64>> {
    let params = point.params()?;
    let resolved: Vec<(Detector, Option<&MlpModel>)> = detectors
        .iter()
        .map(|&d| Ok((d, models.get(d, point.antennas)?)))
        .collect::<Result<_>>()?;
    let base = Prng::new(seed, STREAM_BER).derive(point_index);
    let zero = vec![0u64; detectors.len()];
    (0..trials)
        .into_par_iter()
        .map(|t| trial_errors(&params, layout, theta0, &resolved, &base.derive(t as u64)))
        .try_fold(
            || zero.clone(),
            |mut acc, errs| {
                acc.iter_mut().zip(errs?).for_each(|(a, e)| *a += e);
                Ok(acc)
            },
        )
        .try_reduce(
            || zero.clone(),
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BerRow {
    pub detector: Detector,
    #[serde(rename = "M")]
    pub antennas: usize,
    pub alpha_dt_db: f64,
    pub alpha_bt_db: f64,
    pub trials: usize,
    pub bits_tested: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub seed: u64,
}

impl BerRow {
    /// Binomial standard error of the BER estimate.
    pub fn stderr(&self) -> f64 {
        (self.ber * (1.0 - self.ber) / self.bits_tested as f64).sqrt()
    }
}

fn sweep_point(cfg: &ExperimentConfig, axis: SweepAxis, x: f64) -> Result<LinkPoint> {
    let mut p = cfg.link();
    match axis {
        SweepAxis::AlphaDt => {
            p.alpha_dt_db = x;
            p.alpha_bt_db = cfg.backscatter.alpha_bt_db(x);
        }
        SweepAxis::AlphaBt => p.alpha_bt_db = x,
        SweepAxis::Antennas => {
            if x < 1.0 || x.fract() != 0.0 {
                return Err(config_err(format!("antenna count {x} is not a positive integer")));
            }
            p.antennas = x as usize;
        }
        SweepAxis::Theta0 => return Err(config_err("theta0 is not a BER sweep axis")),
    }
    Ok(p)
}

/// BER rows for every grid point and detector, in grid-major order.
pub fn run_ber_sweep_with(cfg: &ExperimentConfig, models: DlModels<'_>) -> Result<Vec<BerRow>> {
    cfg.validate()?;
    let layout = cfg.layout();
    let mut rows = Vec::new();
    for (i, &x) in cfg.ber.grid.iter().enumerate() {
        let point = sweep_point(cfg, cfg.ber.axis, x)?;
        let errors = count_bit_errors(&point, layout, cfg.theta0, &cfg.ber.detectors, models, cfg.trials, cfg.seed, i as u64)?;
        let bits = (cfg.trials * layout.payload()) as u64;
        for (&det, &e) in cfg.ber.detectors.iter().zip(&errors) {
            rows.push(BerRow {
                detector: det,
                antennas: point.antennas,
                alpha_dt_db: point.alpha_dt_db,
                alpha_bt_db: point.alpha_bt_db,
                trials: cfg.trials,
                bits_tested: bits,
                bit_errors: e,
                ber: e as f64 / bits as f64,
                seed: cfg.seed,
            });
        }
    }
    Ok(rows)
}

fn load_model(path: &Option<PathBuf>, needed: bool, what: &str) -> Result<Option<MlpModel>> {
    match path {
        Some(p) if needed => match MlpModel::load(p) {
            Ok(m) => Ok(Some(m)),
            Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(config_err(format!("{what} model file {} not found", p.display())))
            }
            Err(e) => Err(e),
        },
        None if needed => Err(config_err(format!("{what} detector requested but no model file configured"))),
        _ => Ok(None),
    }
}

/// BER sweep using model files named in the configuration.
pub fn run_ber_sweep(cfg: &ExperimentConfig) -> Result<Vec<BerRow>> {
    let dets = &cfg.ber.detectors;
    let pcsi = load_model(&cfg.ber.dl_pcsi_model, dets.contains(&Detector::DlPcsi), "dl-pcsi")?;
    let ecsi = load_model(&cfg.ber.dl_ecsi_model, dets.contains(&Detector::DlEcsi), "dl-ecsi")?;
    run_ber_sweep_with(cfg, DlModels { pcsi: pcsi.as_ref(), ecsi: ecsi.as_ref() })
}

/// A generated training set plus the likelihood detector's score on it.
#[derive(Clone, Debug)]
pub struct Generated {
    pub dataset: Dataset,
    /// Records the perfect-CSI likelihood test labels correctly.
    pub mlk_correct: usize,
}

impl Generated {
    pub fn mlk_accuracy(&self) -> f64 {
        self.mlk_correct as f64 / self.dataset.len() as f64
    }
}

/// One record per channel draw: a random tag bit, one data block, and (for
/// estimated CSI) a fresh set of pilot blocks.
pub fn generate_dataset(
    point: &LinkPoint,
    pilots: usize,
    theta0: f64,
    csi: CsiMode,
    records: usize,
    seed: u64,
    stream: u64,
) -> Result<Generated> {
    if records == 0 {
        return Err(Error::invalid("record count must be at least 1"));
    }
    let params = point.params()?;
    let base = Prng::new(seed, STREAM_DATASET).derive(stream);
    let rows: Vec<(Vec<f64>, u8, bool)> = (0..records)
        .into_par_iter()
        .map(|i| {
            let root = base.derive(i as u64);
            let chan = draw_channel(&mut root.derive(0), &params);
            let label = draw_bits(&mut root.derive(1), 1, theta0)[0];
            let block = synthesize_frame(&mut root.derive(2), &chan, &params, &[label])?.remove(0);
            let csi_true = PerfectCsi::from_channel(&chan, &params);
            let mlk_ok = mlk_decide(&block, &build_covariances(&csi_true)) == label;
            let reference = match csi {
                CsiMode::Pcsi => FeatureReference::from_csi(&csi_true),
                CsiMode::Ecsi => {
                    let pil = synthesize_frame(&mut root.derive(3), &chan, &params, &pilot_pattern(pilots))?;
                    FeatureReference::from_pilots(&estimate_pilot_covariances(&pil, pilots)?)?
                }
            };
            Ok((reference.features(&sample_covariance(&block)).into_inner(), label, mlk_ok))
        })
        .collect::<Result<_>>()?;
    let mut dataset = Dataset::with_capacity(feature_len(point.antennas), records);
    let mut mlk_correct = 0;
    for (x, label, ok) in rows {
        dataset.push(&x, label)?;
        mlk_correct += usize::from(ok);
    }
    Ok(Generated { dataset, mlk_correct })
}

/// Dataset at the configured link point.
pub fn gen_dataset(cfg: &ExperimentConfig) -> Result<Generated> {
    cfg.validate()?;
    generate_dataset(&cfg.link(), cfg.pilots, cfg.theta0, cfg.dataset.csi, cfg.dataset.records, cfg.seed, 0)
}

fn load_dataset(path: &Path, antennas: usize) -> Result<Dataset> {
    let data = read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))?;
    if data.dim() != feature_len(antennas) {
        return Err(config_err(format!(
            "dataset {} has feature length {}, configured M={antennas} needs {}",
            path.display(),
            data.dim(),
            feature_len(antennas)
        )));
    }
    Ok(data)
}

/// Fresh detector network with the configured seed.
pub fn fresh_model(antennas: usize, seed: u64) -> Result<MlpModel> {
    init_model(&mut Prng::new(seed, STREAM_INIT), &detector_layer_sizes(antennas))
}

/// Trains a detector on the configured (or generated) dataset.
pub fn run_train(cfg: &ExperimentConfig) -> Result<(MlpModel, Vec<EpochStats>)> {
    cfg.validate()?;
    let data = match &cfg.train.data {
        Some(p) => load_dataset(p, cfg.antennas)?,
        None => gen_dataset(cfg)?.dataset,
    };
    let mut model = fresh_model(cfg.antennas, cfg.seed)?;
    let history = train(&mut model, &data, &cfg.train.to_config(cfg.seed))?;
    Ok((model, history))
}

#[derive(Clone, Debug)]
pub struct MetaOutcome {
    pub meta_model: MlpModel,
    pub history: Vec<EpisodeRecord>,
    /// Meta model adapted to the target channel, when fine-tuning ran.
    pub finetuned: Option<(MlpModel, Vec<EpochStats>)>,
}

/// Task datasets, generated at the configured link point with each task's
/// fading family unless files are given.
pub fn meta_tasks(cfg: &ExperimentConfig) -> Result<Vec<MetaTask>> {
    let m = &cfg.meta;
    if !m.task_data.is_empty() && m.task_data.len() != m.tasks.len() {
        return Err(config_err("meta.task_data must list one file per task"));
    }
    m.tasks
        .iter()
        .enumerate()
        .map(|(i, &fading)| {
            let dataset = match m.task_data.get(i) {
                Some(p) => load_dataset(p, cfg.antennas)?,
                None => {
                    let point = LinkPoint { fading, ..cfg.link() };
                    generate_dataset(&point, cfg.pilots, cfg.theta0, CsiMode::Pcsi, m.task_records, cfg.seed, 100 + i as u64)?
                        .dataset
                }
            };
            Ok(MetaTask { task_id: i, fading, dataset })
        })
        .collect()
}

pub fn run_meta_train(cfg: &ExperimentConfig) -> Result<MetaOutcome> {
    cfg.validate()?;
    let tasks = meta_tasks(cfg)?;
    let mut model = fresh_model(cfg.antennas, cfg.seed)?;
    let history = meta_train(&mut model, &tasks, &cfg.meta.to_config(cfg.seed))?;
    let finetuned = if cfg.meta.finetune_records > 0 {
        let target = match &cfg.meta.finetune_data {
            Some(p) => load_dataset(p, cfg.antennas)?,
            None => {
                generate_dataset(&cfg.link(), cfg.pilots, cfg.theta0, CsiMode::Pcsi, cfg.meta.finetune_records, cfg.seed, 200)?
                    .dataset
            }
        };
        Some(fine_tune(&model, &target, &cfg.meta.finetune.to_config(cfg.seed))?)
    } else {
        None
    };
    Ok(MetaOutcome { meta_model: model, history, finetuned })
}

pub fn run_rate_sweep(cfg: &ExperimentConfig) -> Result<Vec<RateRow>> {
    cfg.validate()?;
    let axis = match cfg.rate.axis {
        SweepAxis::Theta0 => RateAxis::Theta0,
        SweepAxis::AlphaDt => RateAxis::AlphaDt,
        SweepAxis::Antennas => RateAxis::Antennas,
        SweepAxis::AlphaBt => return Err(config_err("alpha_bt is not a rate sweep axis")),
    };
    let channels = cfg.rate.channels.min(cfg.trials);
    let sweep = RateSweep {
        theta0: cfg.theta0,
        alpha_dt_db: cfg.alpha_dt_db,
        backscatter: cfg.backscatter,
        antennas: cfg.antennas,
        fading: cfg.fading,
        trials_signal: cfg.trials.div_ceil(channels),
        trials_channel: channels,
        seed: cfg.seed,
    };
    rate_sweep(axis, &cfg.rate.grid, &sweep)
}

pub fn run_guess_entropy(cfg: &ExperimentConfig) -> Result<Vec<BoundRow>> {
    cfg.validate()?;
    uniform_bound_sweep(cfg.security.message_bits, &cfg.security.beta_grid)
        .map_err(|e| config_err(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct E2eReport {
    pub detector: Detector,
    pub seed: u64,
    pub messages: usize,
    pub message_bits: usize,
    pub active_bits: usize,
    pub amb_bits: usize,
    pub frames: usize,
    pub amb_bit_errors: u64,
    pub amb_ber: f64,
    pub message_bit_errors: u64,
    pub messages_recovered: usize,
}

/// Original message → split → frames → both links → detection → merge.
pub fn run_e2e_with(cfg: &ExperimentConfig, models: DlModels<'_>) -> Result<E2eReport> {
    cfg.validate()?;
    let e2e = &cfg.e2e;
    let split_cfg = SplitConfig::new(e2e.stride, cfg.pilots, cfg.frame_bits)?;
    let params = cfg.link().params()?;
    let model = models.get(e2e.detector, cfg.antennas)?;
    let det = [(e2e.detector, model)];
    let base = Prng::new(cfg.seed, STREAM_E2E);

    let mut report = E2eReport {
        detector: e2e.detector,
        seed: cfg.seed,
        messages: e2e.messages,
        message_bits: e2e.message_bits,
        active_bits: 0,
        amb_bits: 0,
        frames: 0,
        amb_bit_errors: 0,
        amb_ber: 0.0,
        message_bit_errors: 0,
        messages_recovered: 0,
    };
    for msg in 0..e2e.messages {
        let root = base.derive(msg as u64);
        let original: Vec<u8> = draw_bits(&mut root.derive(0), e2e.message_bits, 0.5);
        let split = split_message(&original, &split_cfg)?;
        let frames = build_frames(&split.amb_bits, &split_cfg)?;
        let detected: Vec<AmbFrame> = frames
            .par_iter()
            .enumerate()
            .map(|(f, frame)| {
                let froot = root.derive(1 + f as u64);
                let chan = draw_channel(&mut froot.derive(0), &params);
                let blocks = synthesize_frame(&mut froot.derive(2), &chan, &params, &frame.bits())?;
                let (pilot_blocks, data_blocks) = blocks.split_at(frame.pilots.len());
                let payload = detect_blocks(&det[0], &params, &chan, pilot_blocks, data_blocks)?;
                Ok(AmbFrame { pilots: frame.pilots.clone(), payload, padding: frame.padding })
            })
            .collect::<Result<_>>()?;
        let received_amb = strip_frames(&detected, split.amb_bits.len())?;
        let amb_errors = received_amb.iter().zip(&split.amb_bits).filter(|(a, b)| a != b).count() as u64;
        let mut rebuilt = split.clone();
        rebuilt.amb_bits = received_amb;
        let merged = merge_message(&rebuilt, &split_cfg)?;
        let msg_errors = merged.iter().zip(&original).filter(|(a, b)| a != b).count() as u64;

        report.active_bits += split.active_bits.len();
        report.amb_bits += split.amb_bits.len();
        report.frames += frames.len();
        report.amb_bit_errors += amb_errors;
        report.message_bit_errors += msg_errors;
        report.messages_recovered += usize::from(msg_errors == 0);
    }
    report.amb_ber = report.amb_bit_errors as f64 / report.amb_bits.max(1) as f64;
    Ok(report)
}

pub fn run_e2e_demo(cfg: &ExperimentConfig) -> Result<E2eReport> {
    let det = cfg.e2e.detector;
    let pcsi = load_model(&cfg.ber.dl_pcsi_model, det == Detector::DlPcsi, "dl-pcsi")?;
    let ecsi = load_model(&cfg.ber.dl_ecsi_model, det == Detector::DlEcsi, "dl-ecsi")?;
    run_e2e_with(cfg, DlModels { pcsi: pcsi.as_ref(), ecsi: ecsi.as_ref() })
}

fn detect_blocks(
    det: &(Detector, Option<&MlpModel>),
    params: &ChannelParams,
    chan: &crate::channel::ChannelRealization,
    pilot_blocks: &[ReceivedBlock],
    data_blocks: &[ReceivedBlock],
) -> Result<Vec<u8>> {
    let csi = PerfectCsi::from_channel(chan, params);
    Ok(match det.0 {
        Detector::Mlk => {
            let cov = build_covariances(&csi);
            data_blocks.iter().map(|b| mlk_decide(b, &cov)).collect()
        }
        Detector::Energy => {
            let cov = build_covariances(&csi);
            data_blocks.iter().map(|b| energy_decide(b, &cov)).collect()
        }
        Detector::DlPcsi => nn_decisions(det.1.unwrap(), &FeatureReference::from_csi(&csi), data_blocks)?,
        Detector::DlEcsi => {
            let est = estimate_pilot_covariances(pilot_blocks, pilot_blocks.len())?;
            nn_decisions(det.1.unwrap(), &FeatureReference::from_pilots(&est)?, data_blocks)?
        }
    })
}

/// Runs `f` on a pool with `workers` threads (the global pool if `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(config_err("worker count must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Writes a comment line, a header row and the rows.
pub fn write_csv<W: Write>(mut w: W, comment: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    writeln!(w, "{comment}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    for r in rows {
        out.write_record(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn ber_table(rows: &[BerRow]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec!["detector", "M", "alpha_dt_db", "alpha_bt_db", "trials", "bits_tested", "bit_errors", "ber", "seed"];
    let body = rows
        .iter()
        .map(|r| {
            vec![
                r.detector.name().to_string(),
                r.antennas.to_string(),
                r.alpha_dt_db.to_string(),
                r.alpha_bt_db.to_string(),
                r.trials.to_string(),
                r.bits_tested.to_string(),
                r.bit_errors.to_string(),
                r.ber.to_string(),
                r.seed.to_string(),
            ]
        })
        .collect();
    (header, body)
}

pub fn rate_table(rows: &[RateRow]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec!["axis_value", "rate_bits", "stderr", "samples", "seed"];
    let body = rows
        .iter()
        .map(|r| {
            vec![
                r.axis_value.to_string(),
                r.rate_bits.to_string(),
                r.stderr.to_string(),
                r.samples.to_string(),
                r.seed.to_string(),
            ]
        })
        .collect();
    (header, body)
}

pub fn bound_table(rows: &[BoundRow]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec!["beta", "P", "I", "log2_keyspace", "log2_bound"];
    let body = rows
        .iter()
        .map(|r| {
            vec![
                r.beta.to_string(),
                r.p.to_string(),
                r.i.to_string(),
                r.log2_keyspace.to_string(),
                r.log2_bound.to_string(),
            ]
        })
        .collect();
    (header, body)
}

pub fn epoch_table(rows: &[EpochStats]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec!["epoch", "loss", "accuracy"];
    let body = rows
        .iter()
        .map(|r| vec![r.epoch.to_string(), r.loss.to_string(), r.accuracy.to_string()])
        .collect();
    (header, body)
}

pub fn episode_table(rows: &[EpisodeRecord]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec!["episode", "task_id", "val_loss"];
    let body = rows
        .iter()
        .map(|r| vec![r.episode.to_string(), r.task_id.to_string(), r.val_loss.to_string()])
        .collect();
    (header, body)
}

pub fn save_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    write_dataset(std::io::BufWriter::new(std::fs::File::create(path)?), data)
}

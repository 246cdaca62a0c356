//! Alternating generator / discriminator optimization.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use strgate_tensor::{Adam, Binder, Graph, ParamStore, Tensor};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::data::{derive_seed, pad_image, pad_mask, rgb_to_tensor, ImageSample, MaskPyramid};
use crate::discriminator::{locality_labels, Branch, Discriminator, DiscriminatorConfig, DOWNSAMPLE_FACTOR};
use crate::error::{invalid, Error, Result};
use crate::ga::AttentionKind;
use crate::generator::{Generator, GeneratorConfig};
use crate::losses::{
    attention_loss, batch_level_targets, composite, discriminator_loss, full_image_l1_loss,
    generator_adversarial_loss, perceptual_loss, roi_regression_loss, style_loss, total_generator_loss,
    total_variation_loss, AttentionLossMode, LevelTargets, LossComponents, LossWeights, COUNT_EPS,
};
use crate::perceptual::{ExtractorSpec, PerceptualExtractor};
use crate::version::code_hash;

/// Model and loss wiring of one row of the ablation table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Ablation {
    Baseline,
    BaselineSa,
    BaselineTsra,
    BaselineTssra,
    BaselineGa,
    BaselineRoig,
    #[default]
    BaselineGaRoig,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::Baseline,
        Ablation::BaselineSa,
        Ablation::BaselineTsra,
        Ablation::BaselineTssra,
        Ablation::BaselineGa,
        Ablation::BaselineRoig,
        Ablation::BaselineGaRoig,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::BaselineSa => "baseline+sa",
            Ablation::BaselineTsra => "baseline+tsra",
            Ablation::BaselineTssra => "baseline+tssra",
            Ablation::BaselineGa => "baseline+ga",
            Ablation::BaselineRoig => "baseline+roig",
            Ablation::BaselineGaRoig => "baseline+ga+roig",
        }
    }

    pub fn attention(self) -> AttentionKind {
        match self {
            Ablation::Baseline | Ablation::BaselineRoig => AttentionKind::None,
            Ablation::BaselineSa => AttentionKind::Sa,
            Ablation::BaselineTsra => AttentionKind::Tsra,
            Ablation::BaselineTssra => AttentionKind::Tssra,
            Ablation::BaselineGa | Ablation::BaselineGaRoig => AttentionKind::Ga,
        }
    }

    pub fn roig(self) -> bool {
        matches!(self, Ablation::BaselineRoig | Ablation::BaselineGaRoig)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Ablation::ALL.iter().map(|a| a.name()).collect();
                invalid!("unknown ablation `{s}` (expected one of {})", names.join(", "))
            })
    }
}

impl TryFrom<String> for Ablation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Ablation> for String {
    fn from(a: Ablation) -> String {
        a.name().to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops after this many steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub lr0: f64,
    /// The learning rate is divided by `lr_decay_factor` every `lr_decay_every` steps.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub base_channels: usize,
    pub disc_base_channels: usize,
    /// Nominal training resolution recorded in the generator config.
    pub input_size: usize,
    pub loss_weights: LossWeights,
    pub attention_loss: AttentionLossMode,
    pub extractor: ExtractorSpec,
    /// Writes a checkpoint every this many steps when an output directory is given.
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            epochs: 6,
            max_steps: None,
            lr0: 5e-4,
            lr_decay_every: 500,
            lr_decay_factor: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            ablation: Ablation::default(),
            base_channels: 8,
            disc_base_channels: 8,
            input_size: 64,
            loss_weights: LossWeights::default(),
            attention_loss: AttentionLossMode::default(),
            extractor: ExtractorSpec::default(),
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    /// Full-size settings: batch 30, decay every 50,000 steps, 64 base channels.
    pub fn paper_scale() -> Self {
        Self {
            batch_size: 30,
            lr_decay_every: 50_000,
            base_channels: 64,
            disc_base_channels: 64,
            input_size: 512,
            ..Self::default()
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid!("batch_size must be positive"));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(invalid!("lr0 must be positive, got {}", self.lr0));
        }
        if self.lr_decay_every == 0 || !(self.lr_decay_factor >= 1.0) {
            return Err(invalid!(
                "lr decay needs a positive interval and a factor >= 1, got {} / {}",
                self.lr_decay_every,
                self.lr_decay_factor
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid!("Adam betas must lie in [0, 1)"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(invalid!("checkpoint_every must be positive"));
        }
        self.loss_weights.validate()?;
        apply_ablation(self).map(|_| ())
    }
}

/// `lr0 / factor^⌊step / decay_every⌋`.
pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    config.lr0 / config.lr_decay_factor.powi((step / config.lr_decay_every) as i32)
}

/// Networks and loss switches selected by an ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct Wiring {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub roig: bool,
}

pub fn apply_ablation(config: &TrainConfig) -> Result<Wiring> {
    let generator = GeneratorConfig {
        base_channels: config.base_channels,
        input_size: config.input_size,
        attention: config.ablation.attention(),
        roig: config.ablation.roig(),
        ..GeneratorConfig::default()
    };
    generator.validate()?;
    if config.disc_base_channels == 0 {
        return Err(invalid!("disc_base_channels must be positive"));
    }
    Ok(Wiring {
        generator,
        discriminator: DiscriminatorConfig {
            base_channels: config.disc_base_channels,
        },
        roig: config.ablation.roig(),
    })
}

/// Per-sample tensors, padded to a multiple of 32.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub id: String,
    pub input: Tensor,
    pub gt: Tensor,
    pub box_mask: Tensor,
    pub stroke_mask: Tensor,
    pub pyramid: MaskPyramid,
    pub fake_labels: Tensor,
}

impl PreparedSample {
    pub fn new(sample: &ImageSample) -> Result<Self> {
        let unit = 32;
        let box_mask = pad_mask(&sample.box_mask, unit);
        let stroke = pad_mask(&sample.stroke_mask, unit);
        Ok(Self {
            id: sample.id.clone(),
            input: rgb_to_tensor(&pad_image(&sample.input_image, unit)),
            gt: rgb_to_tensor(&pad_image(&sample.gt_image, unit)),
            pyramid: MaskPyramid::from_masks(&box_mask, &stroke)?,
            fake_labels: locality_labels(&stroke, DOWNSAMPLE_FACTOR, Branch::Fake)?,
            box_mask: box_mask.to_tensor(),
            stroke_mask: stroke.to_tensor(),
        })
    }
}

/// A stacked mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    pub input: Tensor,
    pub gt: Tensor,
    pub box_mask: Tensor,
    pub stroke_mask: Tensor,
    pub targets: Vec<LevelTargets>,
    pub fake_labels: Tensor,
}

impl Batch {
    pub fn new(samples: &[&PreparedSample]) -> Result<Self> {
        let stack = |f: fn(&PreparedSample) -> &Tensor| -> Result<Tensor> {
            let items: Vec<Tensor> = samples.iter().map(|s| f(s).clone()).collect();
            Tensor::stack_batch(&items).map_err(|e| invalid!("samples in a batch must share a size: {e}"))
        };
        let pyramids: Vec<MaskPyramid> = samples.iter().map(|s| s.pyramid.clone()).collect();
        Ok(Self {
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            input: stack(|s| &s.input)?,
            gt: stack(|s| &s.gt)?,
            box_mask: stack(|s| &s.box_mask)?,
            stroke_mask: stack(|s| &s.stroke_mask)?,
            targets: batch_level_targets(&pyramids)?,
            fake_labels: stack(|s| &s.fake_labels)?,
        })
    }
}

/// One line of the loss log.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub l_r: f64,
    pub l_p: f64,
    pub l_s: f64,
    pub l_tv: f64,
    pub l_adv: f64,
    pub l_att: f64,
    pub total: f64,
    /// Discriminator loss.
    pub l_d: f64,
    /// Mean absolute error of the full output inside the box, before the update.
    pub box_l1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean_total: f64,
    pub mean_l_d: f64,
    pub mean_box_l1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub code_hash: String,
    pub steps: usize,
    pub epochs: Vec<EpochSummary>,
    pub checkpoints: Vec<PathBuf>,
    pub loss_log: Option<PathBuf>,
}

/// Model, optimizers and step counter of a training run.
pub struct Trainer {
    config: TrainConfig,
    wiring: Wiring,
    generator: Generator,
    discriminator: Discriminator,
    extractor: PerceptualExtractor,
    g_params: ParamStore,
    d_params: ParamStore,
    g_opt: Adam,
    d_opt: Adam,
    step: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        Self::with_extractor_weights(config, None)
    }

    /// `weights` supplies the stages of a pretrained perceptual extractor.
    pub fn with_extractor_weights(config: TrainConfig, weights: Option<&ParamStore>) -> Result<Self> {
        config.validate()?;
        let wiring = apply_ablation(&config)?;
        let generator = Generator::new(wiring.generator.clone())?;
        let discriminator = Discriminator::new(&wiring.discriminator)?;
        let g_params = generator.init_params(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0)));
        let d_params = discriminator.init_params(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1)));
        let extractor = PerceptualExtractor::from_spec(&config.extractor, weights)?;
        Ok(Self {
            g_opt: Adam::new(config.beta1, config.beta2, 1e-8),
            d_opt: Adam::new(config.beta1, config.beta2, 1e-8),
            config,
            wiring,
            generator,
            discriminator,
            extractor,
            g_params,
            d_params,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn generator_params(&self) -> &ParamStore {
        &self.g_params
    }

    pub fn discriminator_params(&self) -> &ParamStore {
        &self.d_params
    }

    pub fn generator_params_mut(&mut self) -> &mut ParamStore {
        &mut self.g_params
    }

    pub fn discriminator_params_mut(&mut self) -> &mut ParamStore {
        &mut self.d_params
    }

    /// One generator update followed by one discriminator update.
    pub fn step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let lr = lr_at(self.step, &self.config);
        let step = self.step;
        let non_finite = |what: &str| Error::NonFinite {
            what: what.to_string(),
            step,
            batch_ids: batch.ids.clone(),
        };

        // generator
        let graph = Graph::new();
        let g_bind = Binder::trainable(&graph, &self.g_params);
        let d_bind = Binder::frozen(&graph, &self.d_params);
        let input = graph.constant(batch.input.clone());
        let box_mask = graph.constant(batch.box_mask.clone());
        let out = self.generator.forward(&g_bind, &input, &box_mask)?;
        let weights = &self.config.loss_weights;
        let (l_r, images, tv_image) = if self.wiring.roig {
            let bc = composite(&batch.input, &out.full_output, &batch.box_mask)?;
            let sc = composite(&batch.input, &out.full_output, &batch.stroke_mask)?;
            let l_r = roi_regression_loss(&out.aux_outputs, &batch.gt, &batch.box_mask, &weights.scale_weights)?;
            (l_r, [bc, sc], bc)
        } else {
            let l_r = full_image_l1_loss(&out.aux_outputs, &batch.gt, &weights.scale_weights)?;
            (l_r, [out.full_output, out.full_output], out.full_output)
        };
        let l_p = perceptual_loss(&self.extractor, &images, &batch.gt)?;
        let l_s = style_loss(&self.extractor, &images, &batch.gt)?;
        let l_tv = total_variation_loss(&tv_image)?;
        let fake = self.discriminator.forward(&d_bind, &input, &box_mask, &out.full_output)?;
        let l_adv = generator_adversarial_loss(&fake.scores, &batch.fake_labels)?;
        let l_att = attention_loss(&graph, &out.ga_outputs, &batch.targets, self.config.attention_loss)?;
        let components = LossComponents {
            l_r,
            l_p,
            l_s,
            l_tv,
            l_adv,
            l_att,
        };
        let total = total_generator_loss(&components, weights)?;
        let values = components.values()?;
        let total_value = total.item()?;
        for (name, v) in [
            ("l_r", values.l_r),
            ("l_p", values.l_p),
            ("l_s", values.l_s),
            ("l_tv", values.l_tv),
            ("l_adv", values.l_adv),
            ("l_att", values.l_att),
            ("total", total_value),
        ] {
            if !v.is_finite() {
                return Err(non_finite(name));
            }
        }
        let fake_image = (*out.full_output.value()).clone();
        let box_l1 = masked_l1(&fake_image, &batch.gt, &batch.box_mask)?;
        let grads = graph.backward(total)?;
        let g_grads = g_bind.collect_grads(&grads);
        if g_grads.values().any(|g| !g.all_finite()) {
            return Err(non_finite("generator gradient"));
        }
        drop(g_bind);
        drop(d_bind);
        drop(graph);
        self.g_opt.step(&mut self.g_params, &g_grads, lr)?;

        // discriminator on the same (detached) fake
        let graph = Graph::new();
        let d_bind = Binder::trainable(&graph, &self.d_params);
        let input = graph.constant(batch.input.clone());
        let box_mask = graph.constant(batch.box_mask.clone());
        let real = self.discriminator.forward(&d_bind, &input, &box_mask, &graph.constant(batch.gt.clone()))?;
        let fake = self.discriminator.forward(&d_bind, &input, &box_mask, &graph.constant(fake_image))?;
        let l_d = discriminator_loss(&real.scores, &fake.scores, &batch.fake_labels)?;
        let l_d_value = l_d.item()?;
        if !l_d_value.is_finite() {
            return Err(non_finite("l_d"));
        }
        let grads = graph.backward(l_d)?;
        let d_grads = d_bind.collect_grads(&grads);
        drop(d_bind);
        drop(graph);
        self.d_opt.step(&mut self.d_params, &d_grads, lr)?;

        self.step += 1;
        Ok(StepRecord {
            step,
            l_r: values.l_r,
            l_p: values.l_p,
            l_s: values.l_s,
            l_tv: values.l_tv,
            l_adv: values.l_adv,
            l_att: values.l_att,
            total: total_value,
            l_d: l_d_value,
            box_l1,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                generator: self.wiring.generator.clone(),
                discriminator: self.wiring.discriminator.clone(),
                step: self.step,
                train: Some(self.config.clone()),
            },
            generator: self.g_params.clone(),
            discriminator: self.d_params.clone(),
        }
    }
}

/// `Σ box·|a − b| / (count(box)·C + ε)`.
pub fn masked_l1(a: &Tensor, b: &Tensor, box_mask: &Tensor) -> Result<f64> {
    let (n, c, h, w) = a.dims4()?;
    if b.shape() != a.shape() || box_mask.shape() != [n, 1, h, w] {
        return Err(invalid!("masked_l1: shapes {:?}, {:?}, {:?}", a.shape(), b.shape(), box_mask.shape()));
    }
    let (ad, bd, md) = (a.data(), b.data(), box_mask.data());
    let plane = h * w;
    let mut sum = 0.0;
    for i in 0..ad.len() {
        let m = md[(i / (c * plane)) * plane + i % plane];
        sum += m * (ad[i] - bd[i]).abs();
    }
    Ok(sum / (box_mask.sum() * c as f64 + COUNT_EPS))
}

/// Output of [`train`].
pub struct TrainResult {
    pub manifest: RunManifest,
    pub log: Vec<StepRecord>,
    pub checkpoint: Checkpoint,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn dump_non_finite(dir: &Path, err: &Error, record: Option<&StepRecord>) {
    if let Error::NonFinite { what, step, batch_ids } = err {
        let dump = serde_json::json!({
            "what": what,
            "step": step,
            "batch_ids": batch_ids,
            "previous_step": record,
        });
        let path = dir.join("nonfinite_dump.json");
        if let Err(e) = write_json(&path, &dump) {
            log::error!("could not write diagnostic dump: {e}");
        }
    }
}

/// Trains on `dataset`. With `out_dir`, writes `loss.jsonl`, periodic and final
/// checkpoints and `manifest.json` there.
pub fn train(config: &TrainConfig, dataset: &[ImageSample], out_dir: Option<&Path>) -> Result<TrainResult> {
    let mut trainer = Trainer::new(config.clone())?;
    train_with(&mut trainer, dataset, out_dir)
}

pub fn train_with(trainer: &mut Trainer, dataset: &[ImageSample], out_dir: Option<&Path>) -> Result<TrainResult> {
    let config = trainer.config().clone();
    if dataset.is_empty() {
        return Err(invalid!("training needs a nonempty dataset"));
    }
    let prepared: Vec<PreparedSample> = dataset.iter().map(PreparedSample::new).collect::<Result<_>>()?;
    let mut log_writer = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("loss.jsonl");
            let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            Some((BufWriter::new(f), path))
        }
        None => None,
    };
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let budget = config.max_steps.unwrap_or(usize::MAX);
    let mut log = Vec::new();
    let mut epochs = Vec::new();
    let mut checkpoints = Vec::new();
    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let mut summary = EpochSummary {
            epoch,
            steps: 0,
            mean_total: 0.0,
            mean_l_d: 0.0,
            mean_box_l1: 0.0,
        };
        for chunk in order.chunks(config.batch_size) {
            if trainer.steps_done() >= budget {
                break;
            }
            let batch = Batch::new(&chunk.iter().map(|&i| &prepared[i]).collect::<Vec<_>>())?;
            let record = match trainer.step(&batch) {
                Ok(r) => r,
                Err(e) => {
                    log::error!("{e}");
                    if let Some(dir) = out_dir {
                        dump_non_finite(dir, &e, log.last());
                    }
                    return Err(e);
                }
            };
            if let Some((w, path)) = log_writer.as_mut() {
                serde_json::to_writer(&mut *w, &record)?;
                writeln!(w).map_err(|e| Error::io(&*path, e))?;
            }
            log::debug!("step {} total {:.5} box_l1 {:.5}", record.step, record.total, record.box_l1);
            summary.steps += 1;
            summary.mean_total += record.total;
            summary.mean_l_d += record.l_d;
            summary.mean_box_l1 += record.box_l1;
            log.push(record);
            if let (Some(dir), Some(every)) = (out_dir, config.checkpoint_every) {
                if trainer.steps_done() % every == 0 {
                    let ckpt_dir = dir.join("checkpoints");
                    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
                    let path = ckpt_dir.join(format!("step_{:06}.bin", trainer.steps_done()));
                    trainer.checkpoint().save(&path)?;
                    checkpoints.push(path);
                }
            }
        }
        if summary.steps == 0 {
            break 'epochs;
        }
        let k = summary.steps as f64;
        summary.mean_total /= k;
        summary.mean_l_d /= k;
        summary.mean_box_l1 /= k;
        log::info!(
            "epoch {epoch}: {} steps, mean total {:.4}, mean box L1 {:.4}",
            summary.steps,
            summary.mean_total,
            summary.mean_box_l1
        );
        epochs.push(summary);
    }
    let checkpoint = trainer.checkpoint();
    let mut loss_log = None;
    if let Some((mut w, path)) = log_writer {
        w.flush().map_err(|e| Error::io(&path, e))?;
        loss_log = Some(path);
    }
    if let Some(dir) = out_dir {
        let path = dir.join("final.bin");
        checkpoint.save(&path)?;
        checkpoints.push(path);
    }
    let manifest = RunManifest {
        config,
        code_hash: code_hash(),
        steps: trainer.steps_done(),
        epochs,
        checkpoints,
        loss_log,
    };
    if let Some(dir) = out_dir {
        write_json(&dir.join("manifest.json"), &manifest)?;
    }
    Ok(TrainResult {
        manifest,
        log,
        checkpoint,
    })
}

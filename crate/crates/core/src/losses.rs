//! Generator and discriminator objectives.
//!
//! Pixel losses use mean reduction; masked variants divide by the number of
//! masked elements plus [`COUNT_EPS`]. Log arguments are clamped to
//! `[LOG_EPS, 1 - LOG_EPS]`.

use serde::{Deserialize, Serialize};
use strgate_tensor::{Graph, Tensor, Var};

use crate::data::{downsample_area2, downsample_max2, MaskPyramid, PYRAMID_LEVELS};
use crate::error::{invalid, Result};
use crate::ga::GaVars;
use crate::perceptual::PerceptualExtractor;

pub const LOG_EPS: f64 = 1e-7;
pub const COUNT_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_p: f64,
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub lambda_adv: f64,
    pub lambda_att: f64,
    /// Weights of the `H/4`, `H/2`, `H` outputs in the regression loss.
    pub scale_weights: [f64; 3],
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_r: 100.0,
            lambda_p: 0.5,
            lambda_s: 50.0,
            lambda_t: 25.0,
            lambda_adv: 1.0,
            lambda_att: 10.0,
            scale_weights: [0.6, 0.8, 1.0],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_r,
            self.lambda_p,
            self.lambda_s,
            self.lambda_t,
            self.lambda_adv,
            self.lambda_att,
        ];
        if all.iter().chain(&self.scale_weights).any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid!("loss weights must be finite and nonnegative: {self:?}"));
        }
        Ok(())
    }

    /// Weighted sum of plain component values.
    pub fn combine(&self, c: &LossValues) -> f64 {
        self.lambda_r * c.l_r
            + self.lambda_p * c.l_p
            + self.lambda_s * c.l_s
            + self.lambda_t * c.l_tv
            + self.lambda_adv * c.l_adv
            + self.lambda_att * c.l_att
    }
}

/// How the attention maps are supervised inside the box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionLossMode {
    /// Binary cross-entropy against the stroke / surround targets.
    #[default]
    Bce,
    /// Only the `-gt · ln σ(score)` term.
    Literal,
}

/// Unweighted loss components for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub l_r: f64,
    pub l_p: f64,
    pub l_s: f64,
    pub l_tv: f64,
    pub l_adv: f64,
    pub l_att: f64,
}

/// Graph-level loss components.
#[derive(Clone, Copy, Debug)]
pub struct LossComponents<'g> {
    pub l_r: Var<'g>,
    pub l_p: Var<'g>,
    pub l_s: Var<'g>,
    pub l_tv: Var<'g>,
    pub l_adv: Var<'g>,
    pub l_att: Var<'g>,
}

impl LossComponents<'_> {
    pub fn values(&self) -> Result<LossValues> {
        Ok(LossValues {
            l_r: self.l_r.item()?,
            l_p: self.l_p.item()?,
            l_s: self.l_s.item()?,
            l_tv: self.l_tv.item()?,
            l_adv: self.l_adv.item()?,
            l_att: self.l_att.item()?,
        })
    }
}

/// `λ_r L_R + λ_p L_P + λ_s L_S + λ_t L_tv + λ_adv L_adv + λ_att L_att`.
pub fn total_generator_loss<'g>(c: &LossComponents<'g>, w: &LossWeights) -> Result<Var<'g>> {
    let terms = [
        (c.l_r, w.lambda_r),
        (c.l_p, w.lambda_p),
        (c.l_s, w.lambda_s),
        (c.l_tv, w.lambda_t),
        (c.l_adv, w.lambda_adv),
        (c.l_att, w.lambda_att),
    ];
    let mut total = terms[0].0.scale(terms[0].1);
    for (v, k) in &terms[1..] {
        total = total.add(&v.scale(*k))?;
    }
    Ok(total)
}

fn zero<'g>(graph: &'g Graph) -> Var<'g> {
    graph.constant(Tensor::scalar(0.0))
}

fn check_mask(op: &str, image: &[usize], mask: &[usize]) -> Result<()> {
    if image.len() != 4 || mask.len() != 4 || mask[0] != image[0] || mask[1] != 1 || mask[2..] != image[2..] {
        return Err(invalid!("{op}: mask {mask:?} does not match image {image:?}"));
    }
    Ok(())
}

/// `input · (1 − mask) + output · mask`, with `mask` `[N, 1, H, W]` broadcast over channels.
pub fn composite<'g>(input: &Tensor, output: &Var<'g>, mask: &Tensor) -> Result<Var<'g>> {
    let shape = output.shape();
    if input.shape() != shape.as_slice() {
        return Err(invalid!("composite: input {:?} vs output {shape:?}", input.shape()));
    }
    check_mask("composite", &shape, mask.shape())?;
    let graph = output.graph();
    let keep = graph.constant(input.clone()).mul_broadcast(&graph.constant(mask.map(|m| 1.0 - m)))?;
    Ok(output.mul_broadcast(&graph.constant(mask.clone()))?.add(&keep)?)
}

/// Plain-tensor [`composite`].
pub fn composite_tensor(input: &Tensor, output: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let graph = Graph::new();
    let v = composite(input, &graph.constant(output.clone()), mask)?;
    Ok((*v.value()).clone())
}

/// `Σ(mask · x) / (count(mask) · C + ε)` for `x` `[N, C, H, W]`.
fn masked_mean<'g>(x: &Var<'g>, mask: &Tensor) -> Result<Var<'g>> {
    let shape = x.shape();
    check_mask("masked mean", &shape, mask.shape())?;
    let count = mask.sum() * shape[1] as f64;
    let m = x.graph().constant(mask.clone());
    Ok(x.mul_broadcast(&m)?.sum().scale(1.0 / (count + COUNT_EPS)))
}

/// Repeatedly halves `t` with `down` until its spatial size is `(h, w)`.
fn resize_to(t: &Tensor, h: usize, w: usize, down: fn(&Tensor) -> crate::Result<Tensor>) -> Result<Tensor> {
    let mut cur = t.clone();
    loop {
        let (_, _, ch, cw) = cur.dims4()?;
        if (ch, cw) == (h, w) {
            return Ok(cur);
        }
        if ch < 2 * h || cw < 2 * w {
            return Err(invalid!("cannot halve {ch}x{cw} down to {h}x{w}"));
        }
        cur = down(&cur)?;
    }
}

fn scale_targets(aux: &[Var<'_>], gt: &Tensor, mask: Option<&Tensor>) -> Result<Vec<(Tensor, Option<Tensor>)>> {
    aux.iter()
        .map(|a| {
            let s = a.shape();
            if s.len() != 4 {
                return Err(invalid!("output must be rank 4, got {s:?}"));
            }
            let g = resize_to(gt, s[2], s[3], downsample_area2)?;
            if g.shape() != s.as_slice() {
                return Err(invalid!("output {s:?} does not match target {:?}", g.shape()));
            }
            let m = mask.map(|m| resize_to(m, s[2], s[3], downsample_max2)).transpose()?;
            Ok((g, m))
        })
        .collect()
}

/// `Σ_i λ_i · mean_{box}|out_i − gt_i|` over the multi-scale outputs. The target
/// is area-downsampled and the mask max-pooled to each output scale.
pub fn roi_regression_loss<'g>(
    aux: &[Var<'g>],
    gt: &Tensor,
    box_mask: &Tensor,
    scale_weights: &[f64],
) -> Result<Var<'g>> {
    if aux.len() != scale_weights.len() || aux.is_empty() {
        return Err(invalid!("{} outputs but {} scale weights", aux.len(), scale_weights.len()));
    }
    let graph = aux[0].graph();
    let mut total = zero(graph);
    for ((out, (g, m)), &lambda) in aux.iter().zip(scale_targets(aux, gt, Some(box_mask))?).zip(scale_weights) {
        let diff = out.sub(&graph.constant(g))?.abs();
        let term = masked_mean(&diff, &m.expect("mask requested"))?;
        total = total.add(&term.scale(lambda))?;
    }
    Ok(total)
}

/// Unmasked variant of [`roi_regression_loss`]: `Σ_i λ_i · mean|out_i − gt_i|`.
pub fn full_image_l1_loss<'g>(aux: &[Var<'g>], gt: &Tensor, scale_weights: &[f64]) -> Result<Var<'g>> {
    if aux.len() != scale_weights.len() || aux.is_empty() {
        return Err(invalid!("{} outputs but {} scale weights", aux.len(), scale_weights.len()));
    }
    let graph = aux[0].graph();
    let mut total = zero(graph);
    for ((out, (g, _)), &lambda) in aux.iter().zip(scale_targets(aux, gt, None)?).zip(scale_weights) {
        total = total.add(&out.sub(&graph.constant(g))?.abs().mean().scale(lambda))?;
    }
    Ok(total)
}

/// `Σ_images Σ_n mean|A_n(image) − A_n(gt)|`.
pub fn perceptual_loss<'g>(
    extractor: &PerceptualExtractor,
    images: &[Var<'g>],
    gt: &Tensor,
) -> Result<Var<'g>> {
    feature_loss(extractor, images, gt, |f| Ok(*f))
}

/// `Σ_images Σ_n mean|G(A_n(image)) − G(A_n(gt))|` with `G(A) = A Aᵀ / (C H W)`.
pub fn style_loss<'g>(extractor: &PerceptualExtractor, images: &[Var<'g>], gt: &Tensor) -> Result<Var<'g>> {
    feature_loss(extractor, images, gt, |f| Ok(f.gram()?))
}

fn feature_loss<'g>(
    extractor: &PerceptualExtractor,
    images: &[Var<'g>],
    gt: &Tensor,
    transform: impl Fn(&Var<'g>) -> Result<Var<'g>>,
) -> Result<Var<'g>> {
    let Some(first) = images.first() else {
        return Err(invalid!("feature loss needs at least one image"));
    };
    let graph = first.graph();
    let gt_feats: Vec<Tensor> = extractor
        .features(graph, &graph.constant(gt.clone()))?
        .iter()
        .map(|f| transform(f).map(|t| (*t.value()).clone()))
        .collect::<Result<_>>()?;
    let mut total = zero(graph);
    for img in images {
        if img.shape() != gt.shape() {
            return Err(invalid!("feature loss: image {:?} vs gt {:?}", img.shape(), gt.shape()));
        }
        for (f, g) in extractor.features(graph, img)?.iter().zip(&gt_feats) {
            let d = transform(f)?.sub(&graph.constant(g.clone()))?.abs().mean();
            total = total.add(&d)?;
        }
    }
    Ok(total)
}

/// `mean|x[.., y, x+1] − x[.., y, x]| + mean|x[.., y+1, x] − x[.., y, x]|`.
pub fn total_variation_loss<'g>(image: &Var<'g>) -> Result<Var<'g>> {
    let shape = image.shape();
    if shape.len() != 4 || shape[2] < 2 || shape[3] < 2 {
        return Err(invalid!("total variation needs [N, C, H>=2, W>=2], got {shape:?}"));
    }
    let c = shape[1];
    let graph = image.graph();
    let kernel = |kh: usize, kw: usize| {
        let mut w = Tensor::zeros([c, c, kh, kw]);
        let d = w.data_mut();
        for ch in 0..c {
            let base = (ch * c + ch) * kh * kw;
            d[base] = -1.0;
            d[base + kh * kw - 1] = 1.0;
        }
        graph.constant(w)
    };
    let dx = image.conv2d(&kernel(1, 2), None, 1, 0)?.abs().mean();
    let dy = image.conv2d(&kernel(2, 1), None, 1, 0)?.abs().mean();
    Ok(dx.add(&dy)?)
}

/// Box / stroke / surround targets at one encoder scale, each `[N, 1, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelTargets {
    pub box_mask: Tensor,
    pub stroke: Tensor,
    pub surround: Tensor,
}

/// Stacks per-sample pyramids into batched per-level targets.
pub fn batch_level_targets(pyramids: &[MaskPyramid]) -> Result<Vec<LevelTargets>> {
    if pyramids.is_empty() {
        return Err(invalid!("no pyramids to batch"));
    }
    (0..PYRAMID_LEVELS)
        .map(|i| {
            let stack = |f: &dyn Fn(&MaskPyramid) -> Tensor| -> Result<Tensor> {
                let items: Vec<Tensor> = pyramids.iter().map(f).collect();
                Ok(Tensor::stack_batch(&items)?)
            };
            Ok(LevelTargets {
                box_mask: stack(&|p| p.levels[i].box_mask.to_tensor())?,
                stroke: stack(&|p| p.levels[i].stroke_mask.to_tensor())?,
                surround: stack(&|p| p.levels[i].surround_mask.to_tensor())?,
            })
        })
        .collect()
}

fn clamped_sigmoid<'g>(score: &Var<'g>) -> Var<'g> {
    score.sigmoid().clamp(LOG_EPS, 1.0 - LOG_EPS)
}

/// Per-element `−[y ln p + (1 − y) ln(1 − p)]` (or only `−y ln p` when `literal`).
fn bce_map<'g>(p: &Var<'g>, target: &Tensor, literal: bool) -> Result<Var<'g>> {
    let graph = p.graph();
    let pos = p.ln().mul(&graph.constant(target.clone()))?;
    if literal {
        return Ok(pos.neg());
    }
    let neg = p.neg().add_scalar(1.0).ln().mul(&graph.constant(target.map(|y| 1.0 - y)))?;
    Ok(pos.add(&neg)?.neg())
}

/// Box-restricted supervision of the raw score maps: per level, the cross-entropy
/// of `σ(score_t)` against the stroke target and `σ(score_s)` against the surround
/// target, summed over box pixels and divided by the box pixel count. Levels
/// without attention output or without box pixels contribute 0.
pub fn attention_loss<'g>(
    graph: &'g Graph,
    ga_outputs: &[Option<GaVars<'g>>],
    targets: &[LevelTargets],
    mode: AttentionLossMode,
) -> Result<Var<'g>> {
    if ga_outputs.len() != targets.len() {
        return Err(invalid!("{} attention outputs for {} target levels", ga_outputs.len(), targets.len()));
    }
    let literal = mode == AttentionLossMode::Literal;
    let mut total = zero(graph);
    for (ga, t) in ga_outputs.iter().zip(targets) {
        let Some(ga) = ga else { continue };
        let count = t.box_mask.sum();
        let boxm = graph.constant(t.box_mask.clone());
        for (score, target) in [(ga.score_t, &t.stroke), (ga.score_s, &t.surround)] {
            let Some(score) = score else { continue };
            check_mask("attention loss", &score.shape(), t.box_mask.shape())?;
            let per_pixel = bce_map(&clamped_sigmoid(&score), target, literal)?;
            let term = per_pixel.mul(&boxm)?.sum().scale(1.0 / (count + COUNT_EPS));
            total = total.add(&term)?;
        }
    }
    Ok(total)
}

/// Discriminator objective: `mean BCE(real, 1) + mean BCE(fake, labels)`.
pub fn discriminator_loss<'g>(real_scores: &Var<'g>, fake_scores: &Var<'g>, fake_labels: &Tensor) -> Result<Var<'g>> {
    if fake_scores.shape() != fake_labels.shape() || real_scores.shape() != fake_labels.shape() {
        return Err(invalid!(
            "discriminator loss: scores {:?} / {:?} vs labels {:?}",
            real_scores.shape(),
            fake_scores.shape(),
            fake_labels.shape()
        ));
    }
    let ones = Tensor::ones(fake_labels.shape());
    let real = bce_map(&real_scores.clamp(LOG_EPS, 1.0 - LOG_EPS), &ones, false)?.mean();
    let fake = bce_map(&fake_scores.clamp(LOG_EPS, 1.0 - LOG_EPS), fake_labels, false)?.mean();
    Ok(real.add(&fake)?)
}

/// Generator objective: mean `−ln D` over text cells (label 0); 0 when there are none.
pub fn generator_adversarial_loss<'g>(fake_scores: &Var<'g>, fake_labels: &Tensor) -> Result<Var<'g>> {
    if fake_scores.shape() != fake_labels.shape() {
        return Err(invalid!(
            "adversarial loss: scores {:?} vs labels {:?}",
            fake_scores.shape(),
            fake_labels.shape()
        ));
    }
    let text = fake_labels.map(|y| 1.0 - y);
    let count = text.sum();
    let graph = fake_scores.graph();
    if count == 0.0 {
        return Ok(zero(graph));
    }
    let nll = fake_scores.clamp(LOG_EPS, 1.0 - LOG_EPS).ln().neg();
    Ok(nll.mul(&graph.constant(text))?.sum().scale(1.0 / count))
}

/// `(g_loss, d_loss)` on plain score maps.
pub fn adversarial_losses(real_scores: &Tensor, fake_scores: &Tensor, fake_labels: &Tensor) -> Result<(f64, f64)> {
    let graph = Graph::new();
    let r = graph.constant(real_scores.clone());
    let f = graph.constant(fake_scores.clone());
    let g = generator_adversarial_loss(&f, fake_labels)?.item()?;
    let d = discriminator_loss(&r, &f, fake_labels)?.item()?;
    Ok((g, d))
}

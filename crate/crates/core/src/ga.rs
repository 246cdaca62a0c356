//! Gated attention: two 7×7 spatial-attention branches over pooled features
//! and the box mask, blended by learnable scalar gates.

use image::GrayImage;
use rand::Rng;
use serde::{Deserialize, Serialize};
use strgate_tensor::{sigmoid, Binder, Graph, ParamStore, Tensor, Var};

use crate::error::{invalid, Result};
use crate::nn::Conv;

pub const GA_KERNEL: usize = 7;
const GA_PAD: usize = 3;

/// Which attention block sits after each encoder stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    /// No attention; features pass through unchanged.
    #[default]
    None,
    /// One unsupervised 7×7 conv over (channel max, channel mean).
    Sa,
    /// Text-stroke branch only, `σ(α·score_t)`.
    Tsra,
    /// Surround branch only, `σ(β·score_s)`.
    Tssra,
    /// Both branches, `σ(α·score_t + β·score_s)`.
    Ga,
}

impl AttentionKind {
    pub fn has_t(self) -> bool {
        matches!(self, Self::Tsra | Self::Ga)
    }

    pub fn has_s(self) -> bool {
        matches!(self, Self::Tssra | Self::Ga)
    }
}

/// Graph-level result of one attention block.
#[derive(Clone, Copy, Debug)]
pub struct GaVars<'g> {
    pub features_out: Var<'g>,
    pub attn: Var<'g>,
    /// Raw text-stroke logits, when the block has that branch.
    pub score_t: Option<Var<'g>>,
    /// Raw surround logits, when the block has that branch.
    pub score_s: Option<Var<'g>>,
}

/// One attention block with parameters named `{prefix}.*`.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub prefix: String,
    pub kind: AttentionKind,
}

impl AttentionBlock {
    pub fn new(prefix: impl Into<String>, kind: AttentionKind) -> Self {
        Self {
            prefix: prefix.into(),
            kind,
        }
    }

    fn conv_t(&self) -> Conv {
        Conv::new(format!("{}.w_t", self.prefix), 3, 1, GA_KERNEL, 1, GA_PAD)
    }

    fn conv_s(&self) -> Conv {
        Conv::new(format!("{}.w_s", self.prefix), 3, 1, GA_KERNEL, 1, GA_PAD)
    }

    fn conv_sa(&self) -> Conv {
        Conv::new(format!("{}.w_sa", self.prefix), 2, 1, GA_KERNEL, 1, GA_PAD)
    }

    pub fn alpha_name(&self) -> String {
        format!("{}.alpha", self.prefix)
    }

    pub fn beta_name(&self) -> String {
        format!("{}.beta", self.prefix)
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        if self.kind.has_t() {
            n += self.conv_t().num_params() + 1;
        }
        if self.kind.has_s() {
            n += self.conv_s().num_params() + 1;
        }
        if self.kind == AttentionKind::Sa {
            n += self.conv_sa().num_params();
        }
        n
    }

    /// Random filters, zero biases, gates at 1.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        if self.kind.has_t() {
            self.conv_t().init(store, 1.0, rng);
            store.insert(self.alpha_name(), Tensor::scalar(1.0));
        }
        if self.kind.has_s() {
            self.conv_s().init(store, 1.0, rng);
            store.insert(self.beta_name(), Tensor::scalar(1.0));
        }
        if self.kind == AttentionKind::Sa {
            self.conv_sa().init(store, 1.0, rng);
        }
    }

    /// Applies the block to `features` `[N, C, H, W]` given the box mask `[N, 1, H, W]`.
    /// Returns `None` for [`AttentionKind::None`].
    pub fn forward<'g>(
        &self,
        bind: &Binder<'g, '_>,
        features: &Var<'g>,
        box_mask: &Var<'g>,
    ) -> Result<Option<GaVars<'g>>> {
        if self.kind == AttentionKind::None {
            return Ok(None);
        }
        check_shapes(&features.shape(), &box_mask.shape())?;
        let graph = bind.graph();
        let mx = features.channel_max()?;
        let mean = features.channel_mean()?;
        let (logit, score_t, score_s) = if self.kind == AttentionKind::Sa {
            let pooled = graph.concat_channels(&[mx, mean])?;
            (self.conv_sa().forward(bind, &pooled)?, None, None)
        } else {
            let pooled = graph.concat_channels(&[mx, mean, *box_mask])?;
            let mut logit: Option<Var<'g>> = None;
            let mut score_t = None;
            let mut score_s = None;
            if self.kind.has_t() {
                let st = self.conv_t().forward(bind, &pooled)?;
                let a = bind.var(&self.alpha_name())?;
                logit = Some(st.mul_scalar_var(&a)?);
                score_t = Some(st);
            }
            if self.kind.has_s() {
                let ss = self.conv_s().forward(bind, &pooled)?;
                let b = bind.var(&self.beta_name())?;
                let term = ss.mul_scalar_var(&b)?;
                logit = Some(match logit {
                    Some(l) => l.add(&term)?,
                    None => term,
                });
                score_s = Some(ss);
            }
            (logit.expect("kind has at least one branch"), score_t, score_s)
        };
        let attn = logit.sigmoid();
        let features_out = features.mul_broadcast(&attn)?;
        Ok(Some(GaVars {
            features_out,
            attn,
            score_t,
            score_s,
        }))
    }
}

fn check_shapes(features: &[usize], mask: &[usize]) -> Result<()> {
    if features.len() != 4 || mask.len() != 4 {
        return Err(invalid!(
            "attention expects rank-4 features and mask, got {features:?} and {mask:?}"
        ));
    }
    if mask[1] != 1 || mask[0] != features[0] || mask[2..] != features[2..] {
        return Err(invalid!(
            "box mask {mask:?} does not match features {features:?}"
        ));
    }
    Ok(())
}

/// Standalone parameters of a full two-branch block.
#[derive(Clone, Debug, PartialEq)]
pub struct GaParams {
    /// `[1, 3, 7, 7]` text-stroke filter over (max, mean, mask).
    pub w_t: Tensor,
    pub b_t: f64,
    /// `[1, 3, 7, 7]` surround filter.
    pub w_s: Tensor,
    pub b_s: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Result of [`GaParams::forward`]; maps are `[N, 1, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaOutput {
    pub features_out: Tensor,
    pub attn_map: Tensor,
    pub score_t: Tensor,
    pub score_s: Tensor,
}

impl GaParams {
    pub const NUM_PARAMS: usize = 2 * (3 * GA_KERNEL * GA_KERNEL + 1) + 2;

    /// Same initialization as a block inside the generator.
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let block = AttentionBlock::new("ga", AttentionKind::Ga);
        block.init(&mut store, rng);
        Self::from_store(&store, "ga").expect("just initialized")
    }

    pub fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        let item = |name: &str| -> Result<f64> { Ok(store.get(&format!("{prefix}.{name}"))?.data()[0]) };
        let w_t = store.get(&format!("{prefix}.w_t.weight"))?.clone();
        let w_s = store.get(&format!("{prefix}.w_s.weight"))?.clone();
        for w in [&w_t, &w_s] {
            if w.shape() != [1, 3, GA_KERNEL, GA_KERNEL] {
                return Err(invalid!("attention filter must be [1, 3, 7, 7], got {:?}", w.shape()));
            }
        }
        Ok(Self {
            w_t,
            b_t: item("w_t.bias")?,
            w_s,
            b_s: item("w_s.bias")?,
            alpha: item("alpha")?,
            beta: item("beta")?,
        })
    }

    pub fn write_to_store(&self, store: &mut ParamStore, prefix: &str) {
        store.insert(format!("{prefix}.w_t.weight"), self.w_t.clone());
        store.insert(format!("{prefix}.w_t.bias"), Tensor::full([1], self.b_t));
        store.insert(format!("{prefix}.w_s.weight"), self.w_s.clone());
        store.insert(format!("{prefix}.w_s.bias"), Tensor::full([1], self.b_s));
        store.insert(format!("{prefix}.alpha"), Tensor::scalar(self.alpha));
        store.insert(format!("{prefix}.beta"), Tensor::scalar(self.beta));
    }

    /// Evaluates the block on plain tensors.
    pub fn forward(&self, features: &Tensor, box_mask: &Tensor) -> Result<GaOutput> {
        let mut store = ParamStore::new();
        self.write_to_store(&mut store, "ga");
        let graph = Graph::new();
        let bind = Binder::frozen(&graph, &store);
        let block = AttentionBlock::new("ga", AttentionKind::Ga);
        let f = graph.constant(features.clone());
        let m = graph.constant(box_mask.clone());
        let out = block.forward(&bind, &f, &m)?.expect("ga kind");
        Ok(GaOutput {
            features_out: (*out.features_out.value()).clone(),
            attn_map: (*out.attn.value()).clone(),
            score_t: (*out.score_t.expect("ga kind").value()).clone(),
            score_s: (*out.score_s.expect("ga kind").value()).clone(),
        })
    }
}

/// Min-max scaled grayscale rendering of the first `H × W` map in `t`
/// (the trailing two dimensions). A map with zero range renders as all zeros.
pub fn heatmap(t: &Tensor) -> Result<GrayImage> {
    let shape = t.shape();
    if shape.len() < 2 {
        return Err(invalid!("heatmap needs at least 2 dimensions, got {shape:?}"));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let vals = &t.data()[..h * w];
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let pixels = vals
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) / range * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    Ok(GrayImage::from_raw(w as u32, h as u32, pixels).expect("sized from shape"))
}

/// Heatmaps of `σ(score_t)`, `σ(score_s)` and the attention map.
pub fn ga_visualize(score_t: &Tensor, score_s: &Tensor, attn_map: &Tensor) -> Result<[GrayImage; 3]> {
    Ok([
        heatmap(&score_t.map(sigmoid))?,
        heatmap(&score_s.map(sigmoid))?,
        heatmap(attn_map)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
        let f = Tensor::from_fn([1, 4, 8, 8], |_| rng.random_range(-1.0..1.0));
        let m = Tensor::from_fn([1, 1, 8, 8], |_| rng.random_bool(0.4) as u8 as f64);
        (f, m)
    }

    #[test]
    fn block_has_298_parameters() {
        assert_eq!(GaParams::NUM_PARAMS, 298);
        assert_eq!(AttentionBlock::new("g", AttentionKind::Ga).num_params(), 298);
        assert_eq!(AttentionBlock::new("g", AttentionKind::Tsra).num_params(), 149);
        assert_eq!(AttentionBlock::new("g", AttentionKind::None).num_params(), 0);
        let mut store = ParamStore::new();
        AttentionBlock::new("g", AttentionKind::Sa).init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(store.num_scalars(), 99);
    }

    #[test]
    fn zero_gates_give_half_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = GaParams::random(&mut rng);
        p.alpha = 0.0;
        p.beta = 0.0;
        let (f, m) = random_input(&mut rng);
        let out = p.forward(&f, &m).unwrap();
        assert!(out.attn_map.data().iter().all(|&a| a == 0.5));
        let half = f.map(|v| 0.5 * v);
        assert_eq!(out.features_out.max_abs_diff(&half).unwrap(), 0.0);
    }

    #[test]
    fn zero_features_give_zero_scores_for_any_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = GaParams::random(&mut rng);
        let (_, m) = random_input(&mut rng);
        let out = p.forward(&Tensor::zeros([1, 4, 8, 8]), &Tensor::zeros([1, 1, 8, 8])).unwrap();
        assert!(out.score_t.data().iter().chain(out.score_s.data()).all(|&v| v == 0.0));
        // with a mask, only the mask channel contributes; features stay zero
        let out = p.forward(&Tensor::zeros([1, 4, 8, 8]), &m).unwrap();
        assert!(out.features_out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_is_strictly_inside_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = GaParams::random(&mut rng);
        let (f, m) = random_input(&mut rng);
        let out = p.forward(&f, &m).unwrap();
        assert!(out.attn_map.data().iter().all(|&a| a > 0.0 && a < 1.0));
        assert_eq!(out.attn_map.shape(), &[1, 1, 8, 8]);
        assert_eq!(out.features_out.shape(), f.shape());
    }

    #[test]
    fn mismatched_mask_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = GaParams::random(&mut rng);
        let f = Tensor::zeros([1, 4, 8, 8]);
        assert!(p.forward(&f, &Tensor::zeros([1, 1, 4, 8])).is_err());
        assert!(p.forward(&f, &Tensor::zeros([1, 2, 8, 8])).is_err());
        assert!(p.forward(&f, &Tensor::zeros([2, 1, 8, 8])).is_err());
    }

    #[test]
    fn gated_off_branch_is_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (f, m) = random_input(&mut rng);
        let mut p = GaParams::random(&mut rng);
        p.beta = 0.0;
        let base = p.forward(&f, &m).unwrap();
        let mut q = p.clone();
        q.w_s = q.w_s.map(|v| v * 3.0 + 1.0);
        q.b_s = 2.5;
        assert_eq!(q.forward(&f, &m).unwrap().features_out, base.features_out);

        let mut p = GaParams::random(&mut rng);
        p.alpha = 0.0;
        let base = p.forward(&f, &m).unwrap();
        let mut q = p.clone();
        q.w_t = q.w_t.map(|v| -v);
        assert_eq!(q.forward(&f, &m).unwrap().features_out, base.features_out);
    }

    #[test]
    fn constant_map_renders_black() {
        let img = heatmap(&Tensor::full([1, 1, 3, 4], 0.5)).unwrap();
        assert_eq!(img.dimensions(), (4, 3));
        assert!(img.pixels().all(|p| p[0] == 0));
    }

    #[test]
    fn heatmap_preserves_rank_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = Tensor::from_fn([1, 1, 6, 6], |_| rng.random_range(-5.0..5.0));
        let [a, _, _] = ga_visualize(&t, &t, &t).unwrap();
        let px = a.as_raw();
        let sig: Vec<f64> = t.data().iter().map(|&v| sigmoid(v)).collect();
        for i in 0..36 {
            for j in 0..36 {
                if sig[i] < sig[j] {
                    assert!(px[i] <= px[j]);
                }
            }
        }
        assert_eq!(*px.iter().min().unwrap(), 0);
        assert_eq!(*px.iter().max().unwrap(), 255);
    }
}

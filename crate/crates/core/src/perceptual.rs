//! Fixed three-stage feature extractor for the perceptual and style losses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use strgate_tensor::{Graph, ParamStore, Tensor, Var};

use crate::error::{invalid, Result};
use crate::nn::Conv;

pub const EXTRACTOR_STAGES: usize = 3;
/// Output channels of the default random extractor.
pub const DEFAULT_STAGE_CHANNELS: [usize; EXTRACTOR_STAGES] = [8, 16, 32];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ExtractorSpec {
    /// He-initialized random filters drawn from `seed`.
    FixedRandom { seed: u64 },
    /// Weights supplied by the caller (`stage{n}.weight` / `stage{n}.bias`, `n = 1..=3`).
    Pretrained,
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        Self::FixedRandom { seed: 0x5eed }
    }
}

/// Three `conv3×3 → ReLU → maxpool2` stages with frozen weights.
///
/// Stage `n` features are the pooled activations after stage `n`.
#[derive(Clone, Debug)]
pub struct PerceptualExtractor {
    weights: Vec<(Tensor, Tensor)>,
}

impl PerceptualExtractor {
    pub fn fixed_random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut cin = 3;
        for (i, &c) in DEFAULT_STAGE_CHANNELS.iter().enumerate() {
            Conv::new(format!("stage{}", i + 1), cin, c, 3, 1, 1).init(&mut store, 1.0, &mut rng);
            cin = c;
        }
        Self::pretrained(&store).expect("consistent random weights")
    }

    /// Takes `stage{n}.weight` `[C_n, C_{n-1}, 3, 3]` and `stage{n}.bias` `[C_n]` with `C_0 = 3`.
    pub fn pretrained(store: &ParamStore) -> Result<Self> {
        let mut weights = Vec::with_capacity(EXTRACTOR_STAGES);
        let mut cin = 3;
        for n in 1..=EXTRACTOR_STAGES {
            let w = store.get(&format!("stage{n}.weight"))?.clone();
            let b = store.get(&format!("stage{n}.bias"))?.clone();
            let s = w.shape();
            if s.len() != 4 || s[1] != cin || s[2] != 3 || s[3] != 3 || b.shape() != [s[0]] {
                return Err(invalid!(
                    "extractor stage {n}: weight {s:?} / bias {:?} do not chain from {cin} channels",
                    b.shape()
                ));
            }
            cin = s[0];
            weights.push((w, b));
        }
        Ok(Self { weights })
    }

    pub fn from_spec(spec: &ExtractorSpec, weights: Option<&ParamStore>) -> Result<Self> {
        match spec {
            ExtractorSpec::FixedRandom { seed } => Ok(Self::fixed_random(*seed)),
            ExtractorSpec::Pretrained => Self::pretrained(
                weights.ok_or_else(|| invalid!("pretrained extractor requires weights"))?,
            ),
        }
    }

    pub fn stage_weights(&self) -> &[(Tensor, Tensor)] {
        &self.weights
    }

    /// Features of `x` `[N, 3, H, W]` after each stage; gradients flow to `x` only.
    pub fn features<'g>(&self, graph: &'g Graph, x: &Var<'g>) -> Result<Vec<Var<'g>>> {
        let mut h = *x;
        let mut out = Vec::with_capacity(EXTRACTOR_STAGES);
        for (w, b) in &self.weights {
            let w = graph.constant(w.clone());
            let b = graph.constant(b.clone());
            h = h.conv2d(&w, Some(&b), 1, 1)?.relu().max_pool2()?;
            out.push(h);
        }
        Ok(out)
    }

    pub fn features_tensor(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let graph = Graph::new();
        let feats = self.features(&graph, &graph.constant(x.clone()))?;
        Ok(feats.iter().map(|f| (*f.value()).clone()).collect())
    }
}

impl Default for PerceptualExtractor {
    fn default() -> Self {
        Self::from_spec(&ExtractorSpec::default(), None).expect("random extractor")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_shapes_halve_each_time() {
        let e = PerceptualExtractor::fixed_random(1);
        let f = e.features_tensor(&Tensor::zeros([2, 3, 16, 8])).unwrap();
        let shapes: Vec<_> = f.iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![2, 8, 8, 4], vec![2, 16, 4, 2], vec![2, 32, 2, 1]]);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = PerceptualExtractor::fixed_random(3);
        let b = PerceptualExtractor::fixed_random(3);
        assert_eq!(a.weights, b.weights);
        assert_ne!(a.weights, PerceptualExtractor::fixed_random(4).weights);
    }

    #[test]
    fn pretrained_requires_consistent_shapes() {
        let mut store = ParamStore::new();
        store.insert("stage1.weight", Tensor::zeros([4, 3, 3, 3]));
        store.insert("stage1.bias", Tensor::zeros([4]));
        store.insert("stage2.weight", Tensor::zeros([4, 5, 3, 3]));
        store.insert("stage2.bias", Tensor::zeros([4]));
        store.insert("stage3.weight", Tensor::zeros([4, 4, 3, 3]));
        store.insert("stage3.bias", Tensor::zeros([4]));
        assert!(PerceptualExtractor::pretrained(&store).is_err());
        store.insert("stage2.weight", Tensor::zeros([4, 4, 3, 3]));
        assert!(PerceptualExtractor::pretrained(&store).is_ok());
        assert!(PerceptualExtractor::from_spec(&ExtractorSpec::Pretrained, None).is_err());
    }
}

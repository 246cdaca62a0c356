//! Encoder–decoder generator with skip connections, per-stage attention and
//! multi-scale output heads.

use rand::Rng;
use serde::{Deserialize, Serialize};
use strgate_tensor::{Binder, Graph, ParamStore, Tensor, Var};

use crate::error::{invalid, Result};
use crate::ga::{AttentionBlock, AttentionKind, GaVars};
use crate::nn::{Conv, Norm};

pub const LEVELS: usize = 5;
/// Per-stage width multipliers of `base_channels`.
pub const WIDTH_MULTIPLIERS: [usize; LEVELS] = [1, 2, 3, 4, 4];
/// Decoder stages that carry an output head (1-based), at `H/4`, `H/2`, `H`.
pub const HEAD_STAGES: [usize; 3] = [3, 4, 5];
const RES_BLOCKS: usize = 2;
/// Initial scale of the last norm in each residual block.
const RES_GAMMA0: f64 = 0.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    /// Nominal training resolution; inputs of any multiple-of-32 size are accepted.
    pub input_size: usize,
    pub levels: usize,
    pub attention: AttentionKind,
    /// Whether training uses the box-restricted losses. Does not change the network.
    pub roig: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_channels: 8,
            input_size: 64,
            levels: LEVELS,
            attention: AttentionKind::Ga,
            roig: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels != LEVELS {
            return Err(invalid!("generator levels must be {LEVELS}, got {}", self.levels));
        }
        if self.base_channels < 2 {
            return Err(invalid!("base_channels must be at least 2, got {}", self.base_channels));
        }
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(invalid!("input_size must be a positive multiple of 32, got {}", self.input_size));
        }
        Ok(())
    }

    pub fn widths(&self) -> [usize; LEVELS] {
        WIDTH_MULTIPLIERS.map(|m| m * self.base_channels)
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv,
    norm1: Norm,
    conv2: Conv,
    norm2: Norm,
}

impl ResBlock {
    fn new(prefix: &str, c: usize) -> Self {
        Self {
            conv1: Conv::new(format!("{prefix}.conv1"), c, c, 3, 1, 1).no_bias(),
            norm1: Norm::new(format!("{prefix}.norm1"), c),
            conv2: Conv::new(format!("{prefix}.conv2"), c, c, 3, 1, 1).no_bias(),
            norm2: Norm::new(format!("{prefix}.norm2"), c),
        }
    }

    fn forward<'g>(&self, bind: &Binder<'g, '_>, x: &Var<'g>) -> Result<Var<'g>> {
        let h = self.conv1.forward(bind, x)?;
        let h = self.norm1.forward(bind, &h)?.relu();
        let h = self.conv2.forward(bind, &h)?;
        let h = self.norm2.forward(bind, &h)?;
        Ok(h.add(x)?.relu())
    }
}

#[derive(Clone, Debug)]
struct EncoderStage {
    down: Conv,
    norm: Norm,
    res: Vec<ResBlock>,
    attention: AttentionBlock,
}

#[derive(Clone, Debug)]
struct DecoderStage {
    up: Conv,
    norm: Norm,
}

/// Graph-level generator outputs.
#[derive(Clone, Debug)]
pub struct GeneratorVars<'g> {
    /// Final full-resolution image, equal to the last auxiliary output.
    pub full_output: Var<'g>,
    /// Head outputs at `H/4`, `H/2`, `H`.
    pub aux_outputs: [Var<'g>; 3],
    /// Attention results per encoder stage (`None` when attention is off).
    pub ga_outputs: Vec<Option<GaVars<'g>>>,
}

/// Tensor-level generator outputs.
#[derive(Clone, Debug)]
pub struct GeneratorOutput {
    pub full_output: Tensor,
    pub aux_outputs: [Tensor; 3],
    pub attn_maps: Vec<Option<Tensor>>,
}

#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    encoder: Vec<EncoderStage>,
    decoder: Vec<DecoderStage>,
    heads: Vec<Conv>,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let widths = config.widths();
        let mut encoder = Vec::with_capacity(LEVELS);
        let mut cin = 4;
        for (i, &c) in widths.iter().enumerate() {
            let name = format!("enc{}", i + 1);
            encoder.push(EncoderStage {
                down: Conv::new(format!("{name}.down"), cin, c, 4, 2, 1).no_bias(),
                norm: Norm::new(format!("{name}.norm"), c),
                res: (0..RES_BLOCKS)
                    .map(|j| ResBlock::new(&format!("{name}.res{}", j + 1), c))
                    .collect(),
                attention: AttentionBlock::new(format!("ga{}", i + 1), config.attention),
            });
            cin = c;
        }
        // dec1 upsamples the bottleneck; later stages see [previous, skip].
        let mut decoder = Vec::with_capacity(LEVELS);
        for k in 0..LEVELS {
            let cin = if k == 0 {
                widths[LEVELS - 1]
            } else {
                2 * widths[LEVELS - 1 - k]
            };
            let cout = if k + 1 < LEVELS {
                widths[LEVELS - 2 - k]
            } else {
                widths[0]
            };
            let name = format!("dec{}", k + 1);
            decoder.push(DecoderStage {
                up: Conv::new(format!("{name}.up"), cin, cout, 4, 2, 1).no_bias().transposed(),
                norm: Norm::new(format!("{name}.norm"), cout),
            });
        }
        let heads = HEAD_STAGES
            .iter()
            .map(|&s| Conv::new(format!("head{s}"), decoder[s - 1].up.cout, 3, 1, 1, 0))
            .collect();
        Ok(Self {
            config,
            encoder,
            decoder,
            heads,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Fresh parameters.
    pub fn init_params(&self, rng: &mut impl Rng) -> ParamStore {
        let mut store = ParamStore::new();
        for stage in &self.encoder {
            stage.down.init(&mut store, 1.0, rng);
            stage.norm.init(&mut store);
            for r in &stage.res {
                r.conv1.init(&mut store, 1.0, rng);
                r.norm1.init(&mut store);
                r.conv2.init(&mut store, 1.0, rng);
                r.norm2.init_with_gain(&mut store, RES_GAMMA0);
            }
            stage.attention.init(&mut store, rng);
        }
        for stage in &self.decoder {
            stage.up.init(&mut store, 1.0, rng);
            stage.norm.init(&mut store);
        }
        for head in &self.heads {
            head.init(&mut store, 1.0, rng);
        }
        store
    }

    /// Learnable scalars implied by the configuration.
    pub fn num_params(&self) -> usize {
        let enc: usize = self
            .encoder
            .iter()
            .map(|s| {
                s.down.num_params()
                    + s.norm.num_params()
                    + s.res
                        .iter()
                        .map(|r| {
                            r.conv1.num_params()
                                + r.norm1.num_params()
                                + r.conv2.num_params()
                                + r.norm2.num_params()
                        })
                        .sum::<usize>()
                    + s.attention.num_params()
            })
            .sum();
        let dec: usize = self
            .decoder
            .iter()
            .map(|s| s.up.num_params() + s.norm.num_params())
            .sum();
        enc + dec + self.heads.iter().map(Conv::num_params).sum::<usize>()
    }

    /// `image` is `[N, 3, H, W]` in `[-1, 1]`, `box_mask` is `[N, 1, H, W]` of 0/1.
    pub fn forward<'g>(
        &self,
        bind: &Binder<'g, '_>,
        image: &Var<'g>,
        box_mask: &Var<'g>,
    ) -> Result<GeneratorVars<'g>> {
        let (is, ms) = (image.shape(), box_mask.shape());
        if is.len() != 4 || is[1] != 3 {
            return Err(invalid!("generator image must be [N, 3, H, W], got {is:?}"));
        }
        if ms.len() != 4 || ms[0] != is[0] || ms[1] != 1 || ms[2..] != is[2..] {
            return Err(invalid!("box mask {ms:?} does not match image {is:?}"));
        }
        if is[2] % 32 != 0 || is[3] % 32 != 0 || is[2] == 0 || is[3] == 0 {
            return Err(invalid!("image size {}x{} is not a multiple of 32", is[3], is[2]));
        }
        let graph = bind.graph();
        let mut x = graph.concat_channels(&[*image, *box_mask])?;
        let mut level_mask = *box_mask;
        let mut skips = Vec::with_capacity(LEVELS);
        let mut ga_outputs = Vec::with_capacity(LEVELS);
        for stage in &self.encoder {
            x = stage.down.forward(bind, &x)?;
            x = stage.norm.forward(bind, &x)?.relu();
            for r in &stage.res {
                x = r.forward(bind, &x)?;
            }
            level_mask = level_mask.max_pool2()?;
            let ga = stage.attention.forward(bind, &x, &level_mask)?;
            if let Some(g) = &ga {
                x = g.features_out;
            }
            ga_outputs.push(ga);
            skips.push(x);
        }
        let mut aux = Vec::with_capacity(3);
        let mut d = skips[LEVELS - 1];
        for (k, stage) in self.decoder.iter().enumerate() {
            let input = if k == 0 {
                d
            } else {
                graph.concat_channels(&[d, skips[LEVELS - 1 - k]])?
            };
            d = stage.up.forward(bind, &input)?;
            d = stage.norm.forward(bind, &d)?.relu();
            if let Some(h) = HEAD_STAGES.iter().position(|&s| s == k + 1) {
                aux.push(self.heads[h].forward(bind, &d)?.tanh());
            }
        }
        let aux_outputs: [Var<'g>; 3] = aux.try_into().expect("three heads");
        Ok(GeneratorVars {
            full_output: aux_outputs[2],
            aux_outputs,
            ga_outputs,
        })
    }

    /// Evaluates the generator on plain tensors without recording gradients.
    pub fn forward_tensors(&self, params: &ParamStore, image: &Tensor, box_mask: &Tensor) -> Result<GeneratorOutput> {
        let graph = Graph::new();
        let bind = Binder::frozen(&graph, params);
        let out = self.forward(&bind, &graph.constant(image.clone()), &graph.constant(box_mask.clone()))?;
        Ok(GeneratorOutput {
            full_output: (*out.full_output.value()).clone(),
            aux_outputs: out.aux_outputs.map(|v| (*v.value()).clone()),
            attn_maps: out
                .ga_outputs
                .iter()
                .map(|g| g.map(|g| (*g.attn.value()).clone()))
                .collect(),
        })
    }
}

/// Exact number of learnable scalars in `params`.
pub fn count_parameters(params: &ParamStore) -> usize {
    params.num_scalars()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_validation() {
        assert!(GeneratorConfig::default().validate().is_ok());
        let bad = [
            GeneratorConfig { levels: 4, ..Default::default() },
            GeneratorConfig { base_channels: 1, ..Default::default() },
            GeneratorConfig { input_size: 48, ..Default::default() },
        ];
        for c in bad {
            assert!(Generator::new(c).is_err());
        }
    }

    #[test]
    fn declared_and_initialized_counts_agree() {
        for kind in [AttentionKind::None, AttentionKind::Sa, AttentionKind::Tsra, AttentionKind::Ga] {
            let g = Generator::new(GeneratorConfig { attention: kind, ..Default::default() }).unwrap();
            let p = g.init_params(&mut ChaCha8Rng::seed_from_u64(0));
            assert_eq!(count_parameters(&p), g.num_params());
        }
    }

    #[test]
    fn no_attention_means_no_ga_parameters() {
        let g = Generator::new(GeneratorConfig { attention: AttentionKind::None, ..Default::default() }).unwrap();
        let p = g.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(p.num_scalars_with_prefix("ga"), 0);
        let g = Generator::new(GeneratorConfig::default()).unwrap();
        let p = g.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(p.num_scalars_with_prefix("ga"), 5 * 298);
    }

    #[test]
    fn rejects_bad_input_sizes() {
        let g = Generator::new(GeneratorConfig::default()).unwrap();
        let p = g.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        assert!(g.forward_tensors(&p, &Tensor::zeros([1, 3, 48, 64]), &Tensor::zeros([1, 1, 48, 64])).is_err());
        assert!(g.forward_tensors(&p, &Tensor::zeros([1, 3, 64, 64]), &Tensor::zeros([1, 1, 32, 64])).is_err());
        assert!(g.forward_tensors(&p, &Tensor::zeros([1, 4, 64, 64]), &Tensor::zeros([1, 1, 64, 64])).is_err());
    }
}

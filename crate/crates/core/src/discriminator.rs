//! Conditional patch discriminator and its stroke-dependent labels.

use rand::Rng;
use serde::{Deserialize, Serialize};
use strgate_tensor::{Binder, ParamStore, Tensor, Var};

use crate::data::Mask;
use crate::error::{invalid, Result};
use crate::nn::Conv;

pub const DISC_STAGES: usize = 4;
pub const DOWNSAMPLE_FACTOR: usize = 1 << DISC_STAGES;
const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 8 }
    }
}

/// Graph-level discriminator outputs, both `[N, 1, H/16, W/16]`.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorVars<'g> {
    pub logits: Var<'g>,
    /// `σ(logits)`, strictly inside `(0, 1)`.
    pub scores: Var<'g>,
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    stages: Vec<Conv>,
    head: Conv,
}

impl Discriminator {
    pub fn new(config: &DiscriminatorConfig) -> Result<Self> {
        if config.base_channels == 0 {
            return Err(invalid!("discriminator base_channels must be positive"));
        }
        let mut stages = Vec::with_capacity(DISC_STAGES);
        let mut cin = 7;
        for i in 0..DISC_STAGES {
            let c = config.base_channels << i;
            stages.push(Conv::new(format!("disc.conv{}", i + 1), cin, c, 4, 2, 1));
            cin = c;
        }
        Ok(Self {
            stages,
            head: Conv::new("disc.head", cin, 1, 1, 1, 0),
        })
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> ParamStore {
        let mut store = ParamStore::new();
        for s in &self.stages {
            s.init(&mut store, 1.0, rng);
        }
        self.head.init(&mut store, 1.0, rng);
        store
    }

    pub fn num_params(&self) -> usize {
        self.stages.iter().map(Conv::num_params).sum::<usize>() + self.head.num_params()
    }

    /// Scores the candidate `image_y` `[N, 3, H, W]` conditioned on the input
    /// image `[N, 3, H, W]` and its box mask `[N, 1, H, W]`.
    pub fn forward<'g>(
        &self,
        bind: &Binder<'g, '_>,
        input: &Var<'g>,
        box_mask: &Var<'g>,
        image_y: &Var<'g>,
    ) -> Result<DiscriminatorVars<'g>> {
        let (a, m, y) = (input.shape(), box_mask.shape(), image_y.shape());
        if a.len() != 4 || a[1] != 3 || y != a || m.len() != 4 || m[1] != 1 || m[0] != a[0] || m[2..] != a[2..] {
            return Err(invalid!(
                "discriminator inputs do not match: input {a:?}, mask {m:?}, candidate {y:?}"
            ));
        }
        if a[2] % DOWNSAMPLE_FACTOR != 0 || a[3] % DOWNSAMPLE_FACTOR != 0 {
            return Err(invalid!(
                "discriminator input {}x{} is not a multiple of {DOWNSAMPLE_FACTOR}",
                a[3],
                a[2]
            ));
        }
        let mut x = bind.graph().concat_channels(&[*input, *box_mask, *image_y])?;
        for s in &self.stages {
            x = s.forward(bind, &x)?.leaky_relu(LEAKY_SLOPE);
        }
        let logits = self.head.forward(bind, &x)?;
        Ok(DiscriminatorVars {
            logits,
            scores: logits.sigmoid(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Real,
    Fake,
}

/// Per-cell target labels `[1, 1, H/f, W/f]`: all ones for the real branch;
/// for the fake branch 0 on cells containing any stroke pixel and 1 elsewhere.
pub fn locality_labels(stroke_mask: &Mask, factor: usize, branch: Branch) -> Result<Tensor> {
    let pooled = stroke_mask.max_pool(factor as u32)?;
    Ok(match branch {
        Branch::Real => Tensor::ones([1, 1, pooled.height() as usize, pooled.width() as usize]),
        Branch::Fake => pooled.to_tensor().map(|v| 1.0 - v),
    })
}

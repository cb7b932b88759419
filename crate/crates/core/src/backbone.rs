//! The assembled multi-resolution landmark network.
//!
//! ```text
//! image (1 x H x W)
//!   -> stem                      width B at H/4
//!   -> bottleneck stage          SelfConvBlock(B -> 4B), then SelfResBlock(4B) x (units-1)
//!   -> transition 3x3 conv       4B -> C
//!   -> stages 2..4               add a branch (3x3 stride-2 conv, width doubles),
//!                                then `modules` x [per-branch BasicUnits, fusion, tanh]
//!   -> head                      bilinear-upsample every branch to H/4, concat, 1x1 conv
//! heatmaps (L x H/4 x W/4)
//! ```
//!
//! The head is linear so heatmap targets in `[0, 1]` are reachable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{check_ladder, BasicUnit, Conv2d, FusionLayer, SelfConvBlock, SelfResBlock, Stem};
use crate::error::{Error, Result};
use crate::tensor::{Parameterized, Tape, Tensor, Var};
use crate::NUM_LANDMARKS;

/// Stem stride: image pixels per heatmap cell.
pub const HEATMAP_STRIDE: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Width `C` of the highest-resolution branch; later branches use 2C, 4C, 8C.
    pub base_width: usize,
    pub q_order: usize,
    /// Number of multi-resolution modules in each branch stage.
    pub stage_modules: Vec<usize>,
    pub units_per_branch: usize,
    /// Stem width and bottleneck width; the bottleneck stage outputs four times this.
    pub bottleneck_width: usize,
    pub bottleneck_units: usize,
    pub num_landmarks: usize,
    pub input_size: (usize, usize),
    pub heatmap_size: (usize, usize),
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            base_width: 18,
            q_order: 3,
            stage_modules: vec![1, 4, 3],
            units_per_branch: 4,
            bottleneck_width: 64,
            bottleneck_units: 4,
            num_landmarks: NUM_LANDMARKS,
            input_size: (256, 256),
            heatmap_size: (64, 64),
        }
    }
}

impl NetworkConfig {
    /// Desk-scale configuration: 64x64 input, `C = 8`, `Q = 3`, one module per
    /// stage and one unit per branch.
    pub fn toy() -> Self {
        Self {
            base_width: 8,
            q_order: 3,
            stage_modules: vec![1, 1, 1],
            units_per_branch: 1,
            bottleneck_width: 16,
            bottleneck_units: 2,
            num_landmarks: NUM_LANDMARKS,
            input_size: (64, 64),
            heatmap_size: (16, 16),
        }
    }

    pub fn num_branches(&self) -> usize {
        self.stage_modules.len() + 1
    }

    pub fn branch_widths(&self) -> Vec<usize> {
        (0..self.num_branches()).map(|i| self.base_width << i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.base_width == 0 || self.q_order == 0 || self.bottleneck_width == 0 {
            return bad(format!(
                "base_width, q_order and bottleneck_width must be positive ({}, {}, {})",
                self.base_width, self.q_order, self.bottleneck_width
            ));
        }
        if self.bottleneck_units == 0 || self.units_per_branch == 0 || self.num_landmarks == 0 {
            return bad("unit counts and num_landmarks must be positive".into());
        }
        if self.stage_modules.contains(&0) {
            return bad(format!("every stage needs at least one module: {:?}", self.stage_modules));
        }
        let (h, w) = self.input_size;
        if self.heatmap_size != (h / HEATMAP_STRIDE, w / HEATMAP_STRIDE) {
            return bad(format!(
                "heatmap size {:?} must be input size {:?} / {HEATMAP_STRIDE}",
                self.heatmap_size, self.input_size
            ));
        }
        let ladder = HEATMAP_STRIDE << (self.num_branches() - 1);
        if h % ladder != 0 || w % ladder != 0 {
            return bad(format!(
                "input {h}x{w} must be divisible by {ladder} for {} branches",
                self.num_branches()
            ));
        }
        Ok(())
    }
}

/// One multi-resolution module: per-branch residual units followed by fusion.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchModule {
    units: Vec<Vec<BasicUnit>>,
    fusion: FusionLayer,
}

impl BranchModule {
    fn init(widths: &[usize], cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let units = widths
            .iter()
            .map(|&w| {
                (0..cfg.units_per_branch)
                    .map(|_| BasicUnit::init(w, cfg.q_order, rng))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            units,
            fusion: FusionLayer::init(widths, rng)?,
        })
    }

    fn forward(&self, tape: &mut Tape, branches: &[Var]) -> Result<Vec<Var>> {
        let mut xs = branches.to_vec();
        for (x, units) in xs.iter_mut().zip(&self.units) {
            for unit in units {
                *x = unit.forward(tape, *x)?;
            }
        }
        let fused = self.fusion.forward(tape, &xs)?;
        fused.into_iter().map(|v| tape.tanh(v)).collect()
    }
}

impl Parameterized for BranchModule {
    fn params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.units.iter().flatten().flat_map(|u| u.params()).collect();
        v.extend(self.fusion.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self
            .units
            .iter_mut()
            .flatten()
            .flat_map(|u| u.params_mut())
            .collect();
        v.extend(self.fusion.params_mut());
        v
    }
}

/// A stage opens one new, coarser branch and runs its modules.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchStage {
    new_branch: Conv2d,
    modules: Vec<BranchModule>,
}

impl Parameterized for BranchStage {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.new_branch.params();
        v.extend(self.modules.iter().flat_map(|m| m.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.new_branch.params_mut();
        v.extend(self.modules.iter_mut().flat_map(|m| m.params_mut()));
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfCephaloNet {
    config: NetworkConfig,
    stem: Stem,
    expand: SelfConvBlock,
    residuals: Vec<SelfResBlock>,
    transition: Conv2d,
    stages: Vec<BranchStage>,
    head: Conv2d,
}

impl SelfCephaloNet {
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = config.q_order;
        let bw = config.bottleneck_width;
        let stem = Stem::init(1, bw, &mut rng)?;
        let expand = SelfConvBlock::init(bw, q, &mut rng)?;
        let wide = bw * SelfConvBlock::EXPANSION;
        let residuals = (1..config.bottleneck_units)
            .map(|_| SelfResBlock::init(wide, q, &mut rng))
            .collect::<Result<_>>()?;
        let transition = Conv2d::init(config.base_width, wide, 3, 1, 1, &mut rng)?;

        let widths = config.branch_widths();
        let mut stages = Vec::with_capacity(config.stage_modules.len());
        for (s, &modules) in config.stage_modules.iter().enumerate() {
            let active = &widths[..s + 2];
            let new_branch = Conv2d::init(active[s + 1], active[s], 3, 2, 1, &mut rng)?;
            let modules = (0..modules)
                .map(|_| BranchModule::init(active, config, &mut rng))
                .collect::<Result<_>>()?;
            stages.push(BranchStage { new_branch, modules });
        }
        let head = Conv2d::init(config.num_landmarks, widths.iter().sum(), 1, 1, 0, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            stem,
            expand,
            residuals,
            transition,
            stages,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Records the forward pass of a `B x 1 x H x W` batch on `tape`.
    pub fn forward(&self, tape: &mut Tape, images: Var) -> Result<Var> {
        let (h, w) = self.config.input_size;
        match tape.shape(images) {
            &[_, 1, ih, iw] if (ih, iw) == (h, w) => {}
            other => {
                return Err(Error::shape(
                    "forward",
                    format!("expected [B, 1, {h}, {w}], got {other:?}"),
                ))
            }
        }
        let mut x = self.stem.forward(tape, images)?;
        x = self.expand.forward(tape, x)?;
        for r in &self.residuals {
            x = r.forward(tape, x)?;
        }
        x = self.transition.forward(tape, x)?;
        let mut branches = vec![tape.tanh(x)?];
        for stage in &self.stages {
            let last = *branches.last().expect("at least one branch");
            let opened = stage.new_branch.forward(tape, last)?;
            branches.push(tape.tanh(opened)?);
            for module in &stage.modules {
                branches = module.forward(tape, &branches)?;
            }
        }
        check_ladder(tape, &branches, &self.config.branch_widths())?;
        let mut upsampled = Vec::with_capacity(branches.len());
        for (i, &b) in branches.iter().enumerate() {
            upsampled.push(if i == 0 { b } else { tape.upsample_bilinear(b, 1 << i)? });
        }
        let cat = tape.concat_channels(&upsampled)?;
        self.head.forward(tape, cat)
    }

    /// Inference convenience: runs a fresh tape and returns the heatmaps.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.leaf(images);
        let y = self.forward(&mut tape, x)?;
        Ok(tape.tensor(y))
    }

    pub fn count_params(&self) -> usize {
        self.num_params()
    }

    /// Flat copy of every parameter in enumeration order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    /// Overwrites every parameter from a flat buffer in enumeration order.
    pub fn load_flat_params(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.num_params();
        if values.len() != expected {
            return Err(Error::shape(
                "load_flat_params",
                format!("{} values for {expected} parameters", values.len()),
            ));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

impl Parameterized for SelfCephaloNet {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.stem.params();
        v.extend(self.expand.params());
        v.extend(self.residuals.iter().flat_map(|r| r.params()));
        v.extend(self.transition.params());
        v.extend(self.stages.iter().flat_map(|s| s.params()));
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.stem.params_mut();
        v.extend(self.expand.params_mut());
        v.extend(self.residuals.iter_mut().flat_map(|r| r.params_mut()));
        v.extend(self.transition.params_mut());
        v.extend(self.stages.iter_mut().flat_map(|s| s.params_mut()));
        v.extend(self.head.params_mut());
        v
    }
}

/// Reference parameter count of the first-stage model.
pub const REFERENCE_PARAM_COUNT: usize = 9_725_841;

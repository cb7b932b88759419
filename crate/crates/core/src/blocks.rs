//! Composite blocks: the downsampling stem, the two Self-ONN bottleneck
//! sub-blocks, the constant-width residual unit used on every branch, and the
//! cross-resolution fusion layer.
//!
//! Channel counts follow bottleneck semantics: [`SelfConvBlock`] expands `n`
//! channels to `4n`, [`SelfResBlock`] squeezes `n` to `n/4` internally and
//! restores it. Spatial extents are preserved by everything except the stem and
//! the strided fusion paths.

use rand::Rng;

use crate::error::{Error, Result};
use crate::selfonn::SelfOnnConv2d;
use crate::tensor::{Parameterized, Tape, Tensor, Var};

/// Plain convolution with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    kernel: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(kernel: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let [cout, ..] = kernel.dims4()?;
        if bias.shape() != [cout] {
            return Err(Error::shape(
                "conv",
                format!("bias {:?} for {cout} output channels", bias.shape()),
            ));
        }
        Ok(Self {
            kernel: kernel.requiring_grad(),
            bias: bias.requiring_grad(),
            stride,
            padding,
        })
    }

    /// Glorot-uniform kernel, zero bias.
    pub fn init(
        out_channels: usize,
        in_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let area = (kernel_size * kernel_size) as f64;
        let bound = (6.0 / (in_channels as f64 * area + out_channels as f64 * area)).sqrt();
        let shape = [out_channels, in_channels, kernel_size, kernel_size];
        let kernel = Tensor::from_fn(&shape, |_| rng.random_range(-bound..=bound));
        Self::new(kernel, Tensor::zeros(&[out_channels]), stride, padding)
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let k = tape.leaf(&self.kernel);
        let b = tape.leaf(&self.bias);
        tape.conv2d(x, k, Some(b), self.stride, self.padding)
    }
}

impl Parameterized for Conv2d {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.kernel, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.kernel, &mut self.bias]
    }
}

fn check_channels(tape: &Tape, x: Var, expected: usize, op: &'static str) -> Result<()> {
    match tape.shape(x) {
        &[_, c, _, _] if c == expected => Ok(()),
        other => Err(Error::shape(op, format!("expected {expected} channels, got {other:?}"))),
    }
}

/// Two 3x3 stride-2 convolutions, each followed by tanh: `H x W -> H/4 x W/4`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stem {
    first: Conv2d,
    second: Conv2d,
}

impl Stem {
    pub fn init(in_channels: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            first: Conv2d::init(width, in_channels, 3, 2, 1, rng)?,
            second: Conv2d::init(width, width, 3, 2, 1, rng)?,
        })
    }

    pub fn width(&self) -> usize {
        self.second.out_channels()
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        check_channels(tape, x, self.first.in_channels(), "stem")?;
        let &[_, _, h, w] = tape.shape(x) else { unreachable!() };
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::shape("stem", format!("{h}x{w} is not divisible by 4")));
        }
        let y = self.first.forward(tape, x)?;
        let y = tape.tanh(y)?;
        let y = self.second.forward(tape, y)?;
        tape.tanh(y)
    }
}

impl Parameterized for Stem {
    fn params(&self) -> Vec<&Tensor> {
        [self.first.params(), self.second.params()].concat()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.first.params_mut();
        v.extend(self.second.params_mut());
        v
    }
}

/// Expanding bottleneck: `n -> 4n` channels.
///
/// `out = tanh(tanh(S1x1(tanh(S3x3(x)))) + C3x3(x))` where `S` are Self-ONN
/// layers and `C` is a plain projection shortcut.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfConvBlock {
    expand: SelfOnnConv2d,
    mix: SelfOnnConv2d,
    shortcut: Conv2d,
}

impl SelfConvBlock {
    pub const EXPANSION: usize = 4;

    pub fn init(in_channels: usize, q: usize, rng: &mut impl Rng) -> Result<Self> {
        let out = in_channels * Self::EXPANSION;
        Ok(Self {
            expand: SelfOnnConv2d::init(q, out, in_channels, 3, 3, 1, 1, rng)?,
            mix: SelfOnnConv2d::init(q, out, out, 1, 1, 1, 0, rng)?,
            shortcut: Conv2d::init(out, in_channels, 3, 1, 1, rng)?,
        })
    }

    pub fn layers(&self) -> (&SelfOnnConv2d, &SelfOnnConv2d, &Conv2d) {
        (&self.expand, &self.mix, &self.shortcut)
    }

    pub fn in_channels(&self) -> usize {
        self.expand.in_channels()
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        check_channels(tape, x, self.in_channels(), "self_conv_block")?;
        let a = self.expand.forward(tape, x)?;
        let a = tape.tanh(a)?;
        let a = self.mix.forward(tape, a)?;
        let a = tape.tanh(a)?;
        let s = self.shortcut.forward(tape, x)?;
        let sum = tape.add(a, s)?;
        tape.tanh(sum)
    }
}

impl Parameterized for SelfConvBlock {
    fn params(&self) -> Vec<&Tensor> {
        [self.expand.params(), self.mix.params(), self.shortcut.params()].concat()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.expand.params_mut();
        v.extend(self.mix.params_mut());
        v.extend(self.shortcut.params_mut());
        v
    }
}

/// Squeezing residual bottleneck: `n -> n/4 -> n` with identity shortcut.
///
/// `out = tanh(x + S1x1(tanh(S3x3(x))))`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfResBlock {
    squeeze: SelfOnnConv2d,
    restore: SelfOnnConv2d,
}

impl SelfResBlock {
    pub const REDUCTION: usize = 4;

    pub fn init(channels: usize, q: usize, rng: &mut impl Rng) -> Result<Self> {
        if !channels.is_multiple_of(Self::REDUCTION) || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "residual bottleneck width {channels} is not a positive multiple of 4"
            )));
        }
        let inner = channels / Self::REDUCTION;
        Ok(Self {
            squeeze: SelfOnnConv2d::init(q, inner, channels, 3, 3, 1, 1, rng)?,
            restore: SelfOnnConv2d::init(q, channels, inner, 1, 1, 1, 0, rng)?,
        })
    }

    pub fn layers(&self) -> (&SelfOnnConv2d, &SelfOnnConv2d) {
        (&self.squeeze, &self.restore)
    }

    pub fn channels(&self) -> usize {
        self.squeeze.in_channels()
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        check_channels(tape, x, self.channels(), "self_res_block")?;
        let a = self.squeeze.forward(tape, x)?;
        let a = tape.tanh(a)?;
        let a = self.restore.forward(tape, a)?;
        let sum = tape.add(x, a)?;
        tape.tanh(sum)
    }
}

impl Parameterized for SelfResBlock {
    fn params(&self) -> Vec<&Tensor> {
        [self.squeeze.params(), self.restore.params()].concat()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.squeeze.params_mut();
        v.extend(self.restore.params_mut());
        v
    }
}

/// Two 3x3 Self-ONN convolutions at constant width with identity shortcut:
/// `out = tanh(x + S2(tanh(S1(x))))`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasicUnit {
    first: SelfOnnConv2d,
    second: SelfOnnConv2d,
}

impl BasicUnit {
    pub fn init(channels: usize, q: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            first: SelfOnnConv2d::init(q, channels, channels, 3, 3, 1, 1, rng)?,
            second: SelfOnnConv2d::init(q, channels, channels, 3, 3, 1, 1, rng)?,
        })
    }

    pub fn layers(&self) -> (&SelfOnnConv2d, &SelfOnnConv2d) {
        (&self.first, &self.second)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        check_channels(tape, x, self.first.in_channels(), "basic_unit")?;
        let a = self.first.forward(tape, x)?;
        let a = tape.tanh(a)?;
        let a = self.second.forward(tape, a)?;
        let sum = tape.add(x, a)?;
        tape.tanh(sum)
    }
}

impl Parameterized for BasicUnit {
    fn params(&self) -> Vec<&Tensor> {
        [self.first.params(), self.second.params()].concat()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.first.params_mut();
        v.extend(self.second.params_mut());
        v
    }
}

/// Moves branch `j` onto the grid and width of branch `i`.
#[derive(Clone, Debug, PartialEq)]
pub enum Transform {
    /// Coarser source: 1x1 projection then nearest upsampling by `factor`.
    /// Projection and nearest upsampling commute exactly, so projecting first
    /// is the same map at a fraction of the cost.
    Up { project: Conv2d, factor: usize },
    /// Finer source: a chain of 3x3 stride-2 convolutions; all but the last
    /// keep the source width and are followed by tanh.
    Down { steps: Vec<Conv2d> },
}

impl Transform {
    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Transform::Up { project, factor } => {
                let y = project.forward(tape, x)?;
                tape.upsample_nearest(y, *factor)
            }
            Transform::Down { steps } => {
                let mut y = x;
                for (k, conv) in steps.iter().enumerate() {
                    y = conv.forward(tape, y)?;
                    if k + 1 < steps.len() {
                        y = tape.tanh(y)?;
                    }
                }
                Ok(y)
            }
        }
    }

    fn params(&self) -> Vec<&Tensor> {
        match self {
            Transform::Up { project, .. } => project.params(),
            Transform::Down { steps } => steps.iter().flat_map(|c| c.params()).collect(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Transform::Up { project, .. } => project.params_mut(),
            Transform::Down { steps } => steps.iter_mut().flat_map(|c| c.params_mut()).collect(),
        }
    }
}

/// Exchanges information across parallel branches of widths `C, 2C, 4C, ...`
/// at resolutions `r, r/2, r/4, ...`. Output branch `i` is the sum over
/// source branches `j` of `transform[i][j](x_j)`, identity on the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionLayer {
    widths: Vec<usize>,
    transforms: Vec<Vec<Option<Transform>>>,
}

impl FusionLayer {
    pub fn init(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid branch widths {widths:?}")));
        }
        let mut transforms = Vec::with_capacity(widths.len());
        for (i, &wi) in widths.iter().enumerate() {
            let mut row = Vec::with_capacity(widths.len());
            for (j, &wj) in widths.iter().enumerate() {
                row.push(match j.cmp(&i) {
                    std::cmp::Ordering::Equal => None,
                    std::cmp::Ordering::Greater => Some(Transform::Up {
                        project: Conv2d::init(wi, wj, 1, 1, 0, rng)?,
                        factor: 1 << (j - i),
                    }),
                    std::cmp::Ordering::Less => {
                        let hops = i - j;
                        let steps = (0..hops)
                            .map(|k| {
                                let out = if k + 1 == hops { wi } else { wj };
                                Conv2d::init(out, wj, 3, 2, 1, rng)
                            })
                            .collect::<Result<_>>()?;
                        Some(Transform::Down { steps })
                    }
                });
            }
            transforms.push(row);
        }
        Ok(Self {
            widths: widths.to_vec(),
            transforms,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn transform(&self, to: usize, from: usize) -> Option<&Transform> {
        self.transforms[to][from].as_ref()
    }

    pub fn forward(&self, tape: &mut Tape, branches: &[Var]) -> Result<Vec<Var>> {
        check_ladder(tape, branches, &self.widths)?;
        let mut out = Vec::with_capacity(branches.len());
        for row in &self.transforms {
            let mut terms = Vec::with_capacity(row.len());
            for (j, t) in row.iter().enumerate() {
                terms.push(match t {
                    None => branches[j],
                    Some(t) => t.forward(tape, branches[j])?,
                });
            }
            out.push(tape.add_all(&terms)?);
        }
        Ok(out)
    }
}

impl Parameterized for FusionLayer {
    fn params(&self) -> Vec<&Tensor> {
        self.transforms
            .iter()
            .flatten()
            .flatten()
            .flat_map(Transform::params)
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.transforms
            .iter_mut()
            .flatten()
            .flatten()
            .flat_map(Transform::params_mut)
            .collect()
    }
}

/// Checks that branch `i` has the expected width and `1/2^i` of branch 0's
/// resolution.
pub fn check_ladder(tape: &Tape, branches: &[Var], widths: &[usize]) -> Result<()> {
    if branches.len() != widths.len() {
        return Err(Error::shape(
            "fuse",
            format!("{} branches for {} widths", branches.len(), widths.len()),
        ));
    }
    let &[b0, _, h0, w0] = tape.shape(branches[0]) else {
        return Err(Error::shape("fuse", "branches must be 4-D"));
    };
    for (i, (&v, &width)) in branches.iter().zip(widths).enumerate() {
        let expected = [b0, width, h0 >> i, w0 >> i];
        if tape.shape(v) != expected || (i > 0 && (h0 % (1 << i) != 0 || w0 % (1 << i) != 0)) {
            return Err(Error::shape(
                "fuse",
                format!("branch {i} is {:?}, expected {expected:?}", tape.shape(v)),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    fn zero_all(m: &mut impl Parameterized) {
        for p in m.params_mut() {
            p.data_mut().fill(0.0);
        }
    }

    fn forward(x: &Tensor, f: impl FnOnce(&mut Tape, Var) -> Result<Var>) -> Tensor {
        let mut tape = Tape::new();
        let v = tape.leaf(x);
        let y = f(&mut tape, v).unwrap();
        tape.tensor(y)
    }

    #[test]
    fn stem_quarters_resolution() {
        let stem = Stem::init(1, 6, &mut rng()).unwrap();
        let y = forward(&Tensor::full(&[2, 1, 20, 12], 0.5), |t, v| stem.forward(t, v));
        assert_eq!(y.shape(), &[2, 6, 5, 3]);
        let bad = Tensor::zeros(&[1, 1, 10, 12]);
        let mut tape = Tape::new();
        let v = tape.leaf(&bad);
        assert!(stem.forward(&mut tape, v).is_err());
    }

    #[test]
    fn conv_block_expands_channels() {
        let block = SelfConvBlock::init(3, 2, &mut rng()).unwrap();
        let y = forward(&Tensor::full(&[1, 3, 5, 4], 0.1), |t, v| block.forward(t, v));
        assert_eq!(y.shape(), &[1, 12, 5, 4]);
    }

    #[test]
    fn residual_blocks_with_zero_weights_are_tanh() {
        let x = Tensor::from_fn(&[1, 4, 3, 3], |i| i as f64 / 36.0 - 0.5);
        let mut res = SelfResBlock::init(4, 3, &mut rng()).unwrap();
        zero_all(&mut res);
        let y = forward(&x, |t, v| res.forward(t, v));
        let mut unit = BasicUnit::init(4, 3, &mut rng()).unwrap();
        zero_all(&mut unit);
        let z = forward(&x, |t, v| unit.forward(t, v));
        for ((a, b), v) in y.data().iter().zip(z.data()).zip(x.data()) {
            assert_eq!(*a, v.tanh());
            assert_eq!(*b, v.tanh());
        }
    }

    #[test]
    fn fusion_with_zero_weights_is_identity() {
        let widths = [2, 4];
        let mut fuse = FusionLayer::init(&widths, &mut rng()).unwrap();
        zero_all(&mut fuse);
        let a = Tensor::from_fn(&[1, 2, 4, 4], |i| i as f64);
        let b = Tensor::from_fn(&[1, 4, 2, 2], |i| -(i as f64));
        let mut tape = Tape::new();
        let vars = [tape.leaf(&a), tape.leaf(&b)];
        let out = fuse.forward(&mut tape, &vars).unwrap();
        assert_eq!(tape.value(out[0]), a.data());
        assert_eq!(tape.value(out[1]), b.data());
    }

    #[test]
    fn fusion_paths_have_expected_structure() {
        let fuse = FusionLayer::init(&[2, 4, 8], &mut rng()).unwrap();
        assert!(fuse.transform(1, 1).is_none());
        match fuse.transform(0, 2) {
            Some(Transform::Up { project, factor }) => {
                assert_eq!(*factor, 4);
                assert_eq!(project.kernel().shape(), &[2, 8, 1, 1]);
            }
            other => panic!("{other:?}"),
        }
        match fuse.transform(2, 0) {
            Some(Transform::Down { steps }) => {
                assert_eq!(steps.len(), 2);
                assert_eq!(steps[0].out_channels(), 2);
                assert_eq!(steps[1].out_channels(), 8);
                assert!(steps.iter().all(|c| c.stride() == 2));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn conv_rejects_mismatched_bias() {
        assert!(Conv2d::new(Tensor::zeros(&[2, 1, 3, 3]), Tensor::zeros(&[3]), 1, 1).is_err());
    }
}

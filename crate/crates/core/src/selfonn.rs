//! Self-organized operational convolution.
//!
//! Each connection applies a truncated Taylor polynomial instead of a single
//! weight: `y = c + w_1 * x + w_2 * x^2 + ... + w_Q * x^Q`, pooled by summation
//! over the receptive field. As a layer that is
//!
//! ```text
//! y = bias + sum_{q=1..Q} conv2d(x^q, W_q)
//! ```
//!
//! with one kernel bank `W_q` per power. `Q = 1` is an ordinary convolution.
//! Powers are taken on the raw input; the surrounding network keeps it in
//! `[-1, 1]` with tanh activations.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Parameterized, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct SelfOnnConv2d {
    kernels: Vec<Tensor>,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl SelfOnnConv2d {
    /// Builds a layer from explicit banks; all banks must share one
    /// `[Cout, Cin, Kh, Kw]` shape and `bias` must be `[Cout]`.
    pub fn new(kernels: Vec<Tensor>, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let first = kernels
            .first()
            .ok_or_else(|| Error::InvalidArgument("Self-ONN layer needs at least one bank".into()))?;
        let [cout, ..] = first.dims4()?;
        if let Some(k) = kernels.iter().find(|k| k.shape() != first.shape()) {
            return Err(Error::shape(
                "selfonn",
                format!("bank shapes differ: {:?} vs {:?}", first.shape(), k.shape()),
            ));
        }
        if bias.shape() != [cout] {
            return Err(Error::shape(
                "selfonn",
                format!("bias {:?} for {cout} output channels", bias.shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        let kernels = kernels.into_iter().map(Tensor::requiring_grad).collect();
        Ok(Self {
            kernels,
            bias: bias.requiring_grad(),
            stride,
            padding,
        })
    }

    /// Uniform fan-scaled initialisation with the variance split across the
    /// `q` banks; bias starts at zero.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        q: usize,
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if q == 0 || out_channels == 0 || in_channels == 0 || kernel_h == 0 || kernel_w == 0 {
            return Err(Error::InvalidArgument(format!(
                "Self-ONN dimensions must be positive (q={q}, {out_channels}x{in_channels}x{kernel_h}x{kernel_w})"
            )));
        }
        let fan_in = (in_channels * kernel_h * kernel_w) as f64;
        let fan_out = (out_channels * kernel_h * kernel_w) as f64;
        let bound = (6.0 / (fan_in * q as f64 + fan_out * q as f64)).sqrt();
        let shape = [out_channels, in_channels, kernel_h, kernel_w];
        let kernels = (0..q)
            .map(|_| Tensor::from_fn(&shape, |_| rng.random_range(-bound..=bound)))
            .collect();
        Self::new(kernels, Tensor::zeros(&[out_channels]), stride, padding)
    }

    pub fn order(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernels(&self) -> &[Tensor] {
        &self.kernels
    }

    pub fn kernels_mut(&mut self) -> &mut [Tensor] {
        &mut self.kernels
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    pub fn in_channels(&self) -> usize {
        self.kernels[0].shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernels[0].shape()[0]
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let bias = tape.leaf(&self.bias);
        let mut terms = Vec::with_capacity(self.kernels.len());
        for (i, kernel) in self.kernels.iter().enumerate() {
            let power = if i == 0 { x } else { tape.pow(x, i as u32 + 1)? };
            let k = tape.leaf(kernel);
            let b = (i == 0).then_some(bias);
            terms.push(tape.conv2d(power, k, b, self.stride, self.padding)?);
        }
        tape.add_all(&terms)
    }
}

impl Parameterized for SelfOnnConv2d {
    fn params(&self) -> Vec<&Tensor> {
        self.kernels.iter().chain([&self.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.kernels.iter_mut().chain([&mut self.bias]).collect()
    }
}

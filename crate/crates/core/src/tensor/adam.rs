use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers, one per parameter tensor, plus the
/// shared step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let sizes: Vec<usize> = params.into_iter().map(Tensor::len).collect();
        Self {
            config,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Every parameter must carry a gradient.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    if params.len() != state.first.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} parameters, state tracks {}", params.len(), state.first.len()),
        ));
    }
    for (i, p) in params.iter().enumerate() {
        if p.grad().is_none() {
            return Err(Error::MissingGradient { index: i });
        }
        if p.len() != state.first[i].len() {
            return Err(Error::shape(
                "adam_step",
                format!("parameter {i} has {} values, moments hold {}", p.len(), state.first[i].len()),
            ));
        }
    }

    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let correct1 = 1.0 - beta1.powi(t);
    let correct2 = 1.0 - beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let grad = p.grad.take().expect("checked above");
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for (j, (w, g)) in p.data.iter_mut().zip(&grad).enumerate() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
            let m_hat = m[j] / correct1;
            let v_hat = v[j] / correct2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p.grad = Some(grad);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::full(&[3], 0.7).requiring_grad();
        p.set_grad(vec![0.0; 3]).unwrap();
        let mut state = AdamState::new(AdamConfig::default(), [&p]);
        adam_step(&mut [&mut p], &mut state, 1e-3).unwrap();
        assert_eq!(p.data(), &[0.7; 3]);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::full(&[1], 2.0).requiring_grad();
        let g = -0.3;
        p.set_grad(vec![g]).unwrap();
        let mut state = AdamState::new(AdamConfig::default(), [&p]);
        let lr = 0.01;
        adam_step(&mut [&mut p], &mut state, lr).unwrap();
        let expected = 2.0 - lr * g / (g.abs() + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_and_bad_lr_rejected() {
        let mut p = Tensor::full(&[1], 1.0).requiring_grad();
        let mut state = AdamState::new(AdamConfig::default(), [&p]);
        assert!(matches!(
            adam_step(&mut [&mut p], &mut state, 1e-3),
            Err(Error::MissingGradient { index: 0 })
        ));
        p.set_grad(vec![1.0]).unwrap();
        assert!(adam_step(&mut [&mut p], &mut state, 0.0).is_err());
        assert!(adam_step(&mut [&mut p], &mut state, -1.0).is_err());
        assert_eq!(state.step(), 0);
    }
}

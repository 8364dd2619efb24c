use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::scalar::Real;

/// Adam moments and hyperparameters for one parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    step_count: u64,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Real> Default for AdamState<T> {
    fn default() -> Self {
        Self::new(T::of(2e-4))
    }
}

impl<T: Real> AdamState<T> {
    /// beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn new(learning_rate: T) -> Self {
        Self {
            learning_rate,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One bias-corrected Adam update of every tensor that requires grad, using
/// the gradient stored on the tensor. Tensors without a gradient are left
/// untouched.
pub fn adam_step<T: Real>(params: &mut [Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if state.first_moment.is_empty() {
        state.first_moment = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        state.second_moment = state.first_moment.clone();
    }
    if state.first_moment.len() != params.len() {
        return Err(Error::dim(
            "adam_step",
            format!("state tracks {} tensors, got {}", state.first_moment.len(), params.len()),
        ));
    }
    for (i, p) in params.iter().enumerate() {
        if state.first_moment[i].len() != p.numel() {
            return Err(Error::dim("adam_step", format!("tensor {i} changed size")));
        }
        if let Some(g) = p.grad() {
            if g.len() != p.numel() {
                return Err(Error::dim("adam_step", format!("gradient {i} has wrong size")));
            }
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;

    for (i, p) in params.iter_mut().enumerate() {
        if !p.requires_grad() {
            continue;
        }
        let Some(g) = p.grad().map(<[T]>::to_vec) else { continue };
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: f64) -> Tensor<f64> {
        let mut t = Tensor::scalar(v).with_grad();
        t.set_grad(vec![g]).unwrap();
        t
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![param(1.0, 1.0)];
        let mut s = AdamState::new(0.1);
        adam_step(&mut p, &mut s).unwrap();
        let expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p[0].item() - expected).abs() < 1e-15);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = vec![param(0.7, 0.0), param(-2.0, 0.0)];
        let mut s = AdamState::new(0.1);
        for _ in 0..3 {
            adam_step(&mut p, &mut s).unwrap();
        }
        assert_eq!(p[0].item(), 0.7);
        assert_eq!(p[1].item(), -2.0);
        assert_eq!(s.step_count(), 3);
    }

    #[test]
    fn constant_gradient_steps_decrease_a_convex_quadratic() {
        // f(x) = (x - 3)^2 at x = 0, gradient held at its initial value -6.
        let f = |x: f64| (x - 3.0) * (x - 3.0);
        let mut p = vec![param(0.0, -6.0)];
        let mut s = AdamState::new(0.5);
        let mut prev = f(0.0);
        for _ in 0..2 {
            adam_step(&mut p, &mut s).unwrap();
            let now = f(p[0].item());
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn frozen_tensors_are_skipped() {
        let mut frozen = param(1.0, 1.0);
        frozen.set_requires_grad(false);
        let mut p = vec![frozen, param(1.0, 1.0)];
        let mut s = AdamState::new(0.1);
        adam_step(&mut p, &mut s).unwrap();
        assert_eq!(p[0].item(), 1.0);
        assert!(p[1].item() < 1.0);
    }

    #[test]
    fn changed_parameter_list_is_a_dimension_error() {
        let mut s = AdamState::new(0.1);
        adam_step(&mut [param(1.0, 1.0)], &mut s).unwrap();
        let mut two = vec![param(1.0, 1.0), param(1.0, 1.0)];
        assert!(matches!(adam_step(&mut two, &mut s), Err(Error::Dimension { .. })));
        let mut wide = vec![Tensor::zeros(vec![2]).with_grad()];
        assert!(matches!(adam_step(&mut wide, &mut s), Err(Error::Dimension { .. })));
    }
}

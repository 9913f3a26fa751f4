use super::Scalar;
use crate::error::{EgaError, Result};

/// Adam optimizer state for a flat parameter vector.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub first_moment: Vec<F>,
    pub second_moment: Vec<F>,
    pub step_count: u64,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    pub learning_rate: F,
}

impl<F: Scalar> AdamState<F> {
    /// Defaults: β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(param_count: usize, learning_rate: F) -> Self {
        AdamState {
            first_moment: vec![F::zero(); param_count],
            second_moment: vec![F::zero(); param_count],
            step_count: 0,
            beta1: F::from(0.9).unwrap(),
            beta2: F::from(0.999).unwrap(),
            epsilon: F::from(1e-8).unwrap(),
            learning_rate,
        }
    }
}

/// One Adam update with bias correction, in place.
pub fn adam_step<F: Scalar>(
    params: &mut [F],
    gradients: &[F],
    state: &mut AdamState<F>,
) -> Result<()> {
    if params.len() != gradients.len()
        || params.len() != state.first_moment.len()
        || params.len() != state.second_moment.len()
    {
        return Err(EgaError::config("adam_step length mismatch"));
    }
    if gradients.iter().any(|g| !g.is_finite()) {
        return Err(EgaError::numeric("non-finite gradient in adam_step"));
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let one = F::one();
    let bc1 = one - state.beta1.powi(t);
    let bc2 = one - state.beta2.powi(t);

    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(gradients.iter())
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        *m = state.beta1 * *m + (one - state.beta1) * g;
        *v = state.beta2 * *v + (one - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p - state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

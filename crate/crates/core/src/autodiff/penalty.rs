use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Mlp, MlpVars, Tensor, Var};

/// Gradient penalty `mean((|grad_x C(x_hat)| - 1)^2)` over interpolates
/// `x_hat = u * real + (1 - u) * fake` with one `u ~ U(0, 1)` per row.
///
/// The result stays differentiable with respect to the critic parameters in
/// `vars`.
pub fn gradient_penalty<'t, T: Scalar>(
    critic: &Mlp<T>,
    vars: &MlpVars<'t, T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    rng: &mut impl Rng,
) -> Result<Var<'t, T>> {
    if real.shape() != fake.shape() {
        return Err(Error::Shape(format!(
            "gradient penalty: real {:?} vs fake {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    let [m, n] = real.shape();
    let mut interp = Vec::with_capacity(m * n);
    for i in 0..m {
        let u = T::of(rng.random::<f64>());
        for j in 0..n {
            interp.push(u * real.get(i, j) + (T::one() - u) * fake.get(i, j));
        }
    }
    penalty_at(critic, vars, Tensor::new([m, n], interp)?)
}

/// Gradient penalty at fixed points `x_hat`.
pub fn penalty_at<'t, T: Scalar>(critic: &Mlp<T>, vars: &MlpVars<'t, T>, x_hat: Tensor<T>) -> Result<Var<'t, T>> {
    let tape = vars
        .layers
        .first()
        .ok_or_else(|| Error::InvalidArgument("critic has no layers".into()))?
        .weight
        .tape();
    let x = tape.leaf(x_hat);
    let out = critic.forward(vars, x)?;
    let grad_x = tape.grad(out.sum(), &[x])?[0];
    Ok(grad_x.l2_norm_rows().add_scalar(-T::one()).square().mean())
}

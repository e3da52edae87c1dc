use crate::error::{param_err, Error, Result};
use crate::tensor::{s, Scalar};

/// Probability clamp applied before evaluating the log terms.
pub const BCE_EPS: f64 = 1e-7;

/// Binary cross-entropy of a single prediction. Returns the loss and its
/// derivative with respect to `p`, both evaluated at the clamped probability.
pub fn bce_loss<T: Scalar>(p: T, y: u8) -> Result<(T, T)> {
    if y > 1 {
        return Err(param_err!("binary target must be 0 or 1, got {y}"));
    }
    if p.is_nan() {
        return Err(Error::Numeric("prediction is NaN".into()));
    }
    let eps: T = s(BCE_EPS);
    let one = T::one();
    let p = p.max(eps).min(one - eps);
    Ok(if y == 1 {
        (-p.ln(), -one / p)
    } else {
        (-(one - p).ln(), one / (one - p))
    })
}

/// Loss and gradient with respect to the pre-sigmoid logit, given the
/// sigmoid output `p`. Uses the chain rule through the clamped BCE.
pub fn bce_logit_grad<T: Scalar>(p: T, y: u8) -> Result<(T, T)> {
    let (loss, dp) = bce_loss(p, y)?;
    Ok((loss, dp * p * (T::one() - p)))
}

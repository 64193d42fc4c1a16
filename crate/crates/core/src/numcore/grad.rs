use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Named parameter matrices, iterated in name order.
pub type ParamMap = BTreeMap<String, Matrix>;

/// A scalar loss together with its gradient for every trainable matrix.
#[derive(Clone, Debug)]
pub struct GradBundle {
    pub value: f64,
    pub grads: ParamMap,
}

impl GradBundle {
    /// Checks that `grads` covers exactly the names in `params` with matching shapes.
    pub fn validate_against(&self, params: &ParamMap) -> Result<()> {
        if self.grads.len() != params.len() {
            return Err(Error::dims(format!(
                "{} gradients for {} parameters",
                self.grads.len(),
                params.len()
            )));
        }
        for (name, p) in params {
            match self.grads.get(name) {
                Some(g) if g.shape() == p.shape() => {}
                Some(g) => {
                    return Err(Error::dims(format!(
                        "gradient {name} is {:?}, parameter is {:?}",
                        g.shape(),
                        p.shape()
                    )))
                }
                None => return Err(Error::dims(format!("no gradient for {name}"))),
            }
        }
        Ok(())
    }
}

/// Largest relative disagreement between `analytic` and central differences
/// of `loss_fn` over every coordinate of every parameter.
///
/// Per coordinate the error is `|a - n| / max(1e-8, |a| + |n|)` with
/// `n = (f(p + h) - f(p - h)) / 2h`.
pub fn finite_diff_check<F>(loss_fn: F, params: &ParamMap, analytic: &ParamMap, step: f64) -> f64
where
    F: Fn(&ParamMap) -> f64,
{
    assert!(step > 0.0, "finite difference step must be positive");
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (name, p) in params {
        let a = &analytic[name];
        for i in 0..p.data().len() {
            let orig = p.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + step;
            let plus = loss_fn(&probe);
            probe.get_mut(name).unwrap().data_mut()[i] = orig - step;
            let minus = loss_fn(&probe);
            probe.get_mut(name).unwrap().data_mut()[i] = orig;

            let num = (plus - minus) / (2.0 * step);
            let an = a.data()[i];
            let err = (an - num).abs() / (an.abs() + num.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    worst
}

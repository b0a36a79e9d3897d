use super::Param;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub const PRELU_INIT_SLOPE: f64 = 0.25;

/// Parametric ReLU with one learned negative slope per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PReLUState<T> {
    pub a: Param<T>,
}

impl<T: Scalar> PReLUState<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            a: Param::new(
                format!("{name}.slope"),
                vec![channels],
                vec![T::lit(PRELU_INIT_SLOPE); channels],
                true,
            ),
        }
    }
}

pub fn prelu<T: Scalar>(x: &Tensor4<T>, state: &PReLUState<T>) -> Result<Tensor4<T>> {
    let [n, c, _, _] = x.shape();
    if state.a.value.len() != c {
        return invalid(format!(
            "prelu has {} slopes for {} channels",
            state.a.value.len(),
            c
        ));
    }
    let mut y = x.clone();
    for s in 0..n {
        for ch in 0..c {
            let a = state.a.value[ch];
            for v in y.plane_mut(s, ch) {
                if *v < T::zero() {
                    *v = a * *v;
                }
            }
        }
    }
    Ok(y)
}

/// Returns `(dL/dx, dL/da)`; the kink at zero takes the positive branch.
pub fn prelu_backward<T: Scalar>(
    x: &Tensor4<T>,
    state: &PReLUState<T>,
    dy: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<T>)> {
    let [n, c, _, _] = x.shape();
    if dy.shape() != x.shape() || state.a.value.len() != c {
        return invalid("prelu backward shape mismatch");
    }
    let mut dx = dy.clone();
    let mut da = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let a = state.a.value[ch];
            let xs = x.plane(s, ch);
            for (g, &xv) in dx.plane_mut(s, ch).iter_mut().zip(xs) {
                if xv < T::zero() {
                    da[ch] += *g * xv;
                    *g *= a;
                }
            }
        }
    }
    Ok((dx, da))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positive_and_negative_branches() {
        let x = Tensor4::<f64>::from_vec([1, 1, 1, 2], vec![2.0, -2.0]).unwrap();
        let y = prelu(&x, &PReLUState::new("p", 1)).unwrap();
        assert_eq!(y.data(), &[2.0, -0.5]);
    }

    #[test]
    fn slope_count_must_match() {
        assert!(prelu(
            &Tensor4::<f64>::zeros([1, 2, 1, 1]),
            &PReLUState::new("p", 3)
        )
        .is_err());
    }
}

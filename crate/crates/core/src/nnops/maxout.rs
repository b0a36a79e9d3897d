use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Elementwise maximum of two equally shaped maps.
pub fn maxout<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    if a.shape() != b.shape() {
        return invalid(format!(
            "maxout shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| if y > x { y } else { x })
        .collect();
    Tensor4::from_vec(a.shape(), data)
}

/// Routes `dy` to the winning operand; ties go to `a`.
pub fn maxout_backward<T: Scalar>(
    a: &Tensor4<T>,
    b: &Tensor4<T>,
    dy: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    if a.shape() != b.shape() || a.shape() != dy.shape() {
        return invalid(format!(
            "maxout backward shape mismatch {:?} {:?} {:?}",
            a.shape(),
            b.shape(),
            dy.shape()
        ));
    }
    let mut da = Tensor4::zeros(a.shape());
    let mut db = Tensor4::zeros(a.shape());
    for (k, ((&x, &y), &g)) in a.data().iter().zip(b.data()).zip(dy.data()).enumerate() {
        if y > x {
            db.data_mut()[k] = g;
        } else {
            da.data_mut()[k] = g;
        }
    }
    Ok((da, db))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementwise_max() {
        let a = Tensor4::<f64>::from_vec([1, 1, 1, 2], vec![1.0, -2.0]).unwrap();
        let b = Tensor4::<f64>::from_vec([1, 1, 1, 2], vec![0.0, 5.0]).unwrap();
        assert_eq!(maxout(&a, &b).unwrap().data(), &[1.0, 5.0]);
        assert_eq!(maxout(&a, &a).unwrap(), a);
    }

    #[test]
    fn ties_route_to_first() {
        let a = Tensor4::<f64>::from_vec([1, 1, 1, 1], vec![1.0]).unwrap();
        let g = Tensor4::<f64>::from_vec([1, 1, 1, 1], vec![3.0]).unwrap();
        let (da, db) = maxout_backward(&a, &a, &g).unwrap();
        assert_eq!((da.data()[0], db.data()[0]), (3.0, 0.0));
    }

    #[test]
    fn shape_mismatch() {
        assert!(maxout(
            &Tensor4::<f32>::zeros([1, 1, 2, 2]),
            &Tensor4::zeros([1, 2, 2, 2])
        )
        .is_err());
    }
}

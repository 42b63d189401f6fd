use crate::error::{DsuError, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Mean,
    Max,
    Sum,
}

/// Which axes of a `C×H×W` map collapse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceAxis {
    /// `C×H×W → 1×H×W`
    Channel,
    /// `C×H×W → C×1×1`
    Spatial,
    /// any rank → `[1]`
    All,
}

fn fold<T: Scalar>(values: impl Iterator<Item = T>, op: ReduceOp, n: usize) -> T {
    match op {
        ReduceOp::Max => values.fold(T::neg_infinity(), T::max),
        ReduceOp::Sum => T::from_f64c(values.map(|v| v.as_f64()).sum()),
        ReduceOp::Mean => T::from_f64c(values.map(|v| v.as_f64()).sum::<f64>() / n as f64),
    }
}

pub fn reduce<T: Scalar>(input: &Tensor<T>, op: ReduceOp, axis: ReduceAxis) -> Result<Tensor<T>> {
    if axis != ReduceAxis::All && input.ndim() != 3 {
        return Err(DsuError::Shape(format!("{axis:?} reduction needs C×H×W, got {:?}", input.shape())));
    }
    let d = input.data();
    match axis {
        ReduceAxis::All => Tensor::from_vec(&[1], vec![fold(d.iter().copied(), op, d.len())]),
        ReduceAxis::Channel => {
            let (c, h, w) = input.chw();
            let p = h * w;
            let out = (0..p).map(|i| fold((0..c).map(|ch| d[ch * p + i]), op, c)).collect();
            Tensor::from_vec(&[1, h, w], out)
        }
        ReduceAxis::Spatial => {
            let (c, h, w) = input.chw();
            let p = h * w;
            let out = (0..c).map(|ch| fold(d[ch * p..(ch + 1) * p].iter().copied(), op, p)).collect();
            Tensor::from_vec(&[c, 1, 1], out)
        }
    }
}

/// Backward of [`reduce`]. Max routes the upstream gradient to the first maximal element.
pub fn reduce_backward<T: Scalar>(input: &Tensor<T>, op: ReduceOp, axis: ReduceAxis, grad_out: &Tensor<T>) -> Tensor<T> {
    let d = input.data();
    let g = grad_out.data();
    let mut dx = vec![T::zero(); d.len()];
    // (groups, members) index maps: member m of group k lives at index(k, m)
    let (groups, members, index): (usize, usize, Box<dyn Fn(usize, usize) -> usize>) = match axis {
        ReduceAxis::All => (1, d.len(), Box::new(|_, m| m)),
        ReduceAxis::Channel => {
            let (c, h, w) = input.chw();
            let p = h * w;
            (p, c, Box::new(move |k, m| m * p + k))
        }
        ReduceAxis::Spatial => {
            let (c, h, w) = input.chw();
            let p = h * w;
            (c, p, Box::new(move |k, m| k * p + m))
        }
    };
    for k in 0..groups {
        match op {
            ReduceOp::Sum => (0..members).for_each(|m| dx[index(k, m)] = g[k]),
            ReduceOp::Mean => {
                let v = g[k] / T::from_usize(members).unwrap();
                (0..members).for_each(|m| dx[index(k, m)] = v);
            }
            ReduceOp::Max => {
                let mut best = 0;
                for m in 1..members {
                    if d[index(k, m)] > d[index(k, best)] {
                        best = m;
                    }
                }
                dx[index(k, best)] = g[k];
            }
        }
    }
    Tensor::from_vec(input.shape(), dx).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_reductions() {
        let ones = Tensor::<f32>::full(&[3, 2, 2], 1.0);
        assert_eq!(reduce(&ones, ReduceOp::Mean, ReduceAxis::All).unwrap().data(), &[1.0]);
        let v = Tensor::<f32>::from_vec(&[2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(reduce(&v, ReduceOp::Max, ReduceAxis::All).unwrap().data(), &[2.0]);
        let m = reduce(&ones, ReduceOp::Max, ReduceAxis::Channel).unwrap();
        assert_eq!(m.shape(), &[1, 2, 2]);
        let s = reduce(&ones, ReduceOp::Sum, ReduceAxis::Spatial).unwrap();
        assert_eq!(s.shape(), &[3, 1, 1]);
        assert_eq!(s.data(), &[4.0; 3]);
    }

    #[test]
    fn sum_gradient_broadcasts() {
        let x = Tensor::<f64>::from_fn(&[2, 2, 2], |i| i as f64);
        let g = Tensor::from_vec(&[2, 1, 1], vec![0.5, -2.0]).unwrap();
        let dx = reduce_backward(&x, ReduceOp::Sum, ReduceAxis::Spatial, &g);
        assert_eq!(dx.data(), &[0.5, 0.5, 0.5, 0.5, -2.0, -2.0, -2.0, -2.0]);
    }
}

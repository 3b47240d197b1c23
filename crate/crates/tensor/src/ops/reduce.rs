use crate::tensor::Tensor;

impl Tensor {
    /// Sum of all elements as a scalar tensor.
    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![s], vec![], "sum", vec![self.clone()], move |ctx| {
            vec![Some(vec![ctx.grad[0]; n])]
        })
    }

    /// Mean of all elements. The mean of an empty tensor is 0.
    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let s: f64 = self.data().iter().sum();
        let m = if n == 0 { 0.0 } else { s / n as f64 };
        Tensor::from_op(vec![m], vec![], "mean", vec![self.clone()], move |ctx| {
            vec![Some(vec![ctx.grad[0] / n.max(1) as f64; n])]
        })
    }

    /// Maximum element; the gradient goes to the first maximiser in
    /// row-major order.
    pub fn max_reduce(&self) -> Tensor {
        let (idx, m) = {
            let d = self.data();
            let mut best = 0usize;
            for (i, &v) in d.iter().enumerate() {
                if v > d[best] {
                    best = i;
                }
            }
            (best, d.get(best).copied().unwrap_or(f64::NEG_INFINITY))
        };
        let n = self.numel();
        Tensor::from_op(vec![m], vec![], "max_reduce", vec![self.clone()], move |ctx| {
            let mut g = vec![0.0; n];
            g[idx] = ctx.grad[0];
            vec![Some(g)]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_max() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        assert_eq!(x.mean().item(), 2.0);
        let y = Tensor::new(vec![1.0, 5.0, 2.0], &[3]).unwrap();
        assert_eq!(y.max_reduce().item(), 5.0);
    }

    #[test]
    fn max_ties_route_to_first() {
        let x = Tensor::parameter(vec![4.0, 1.0, 4.0], &[3]).unwrap();
        x.max_reduce().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn mean_gradient_is_one_over_n() {
        let x = Tensor::parameter(vec![0.3; 7], &[7]).unwrap();
        x.mean().backward().unwrap();
        for g in x.grad().unwrap() {
            assert_eq!(g, 1.0 / 7.0);
        }
    }
}

use crate::element::Element;
use crate::tensor::Tensor;

impl<T: Element> Tensor<T> {
    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Tensor<T> {
        let s: T = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![s], vec![1], vec![self.clone()], move |g, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        let inv = T::one() / T::lit(n as f64);
        let s: T = self.data().iter().copied().sum();
        Tensor::from_op("mean", vec![s * inv], vec![1], vec![self.clone()], move |g, _| {
            vec![Some(vec![g[0] * inv; n])]
        })
    }
}

/// Mean over H×W per channel: N×C×H×W → N×C×1×1.
pub fn global_avg_pool<T: Element>(x: &Tensor<T>) -> crate::Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("global_avg_pool")?;
    let hw = h * w;
    let inv = T::one() / T::lit(hw as f64);
    let data: Vec<T> = x
        .data()
        .chunks_exact(hw)
        .map(|plane| plane.iter().copied().sum::<T>() * inv)
        .collect();
    Ok(Tensor::from_op("global_avg_pool", data, vec![n, c, 1, 1], vec![x.clone()], move |g, _| {
        let mut gx = Vec::with_capacity(n * c * hw);
        for &gv in g {
            gx.extend(std::iter::repeat_n(gv * inv, hw));
        }
        vec![Some(gx)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_reference_values() {
        let x = Tensor::<f64>::new(vec![1.0, 3.0, 5.0, 7.0], &[1, 1, 2, 2]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().to_vec(), vec![4.0]);
        let c = Tensor::<f64>::full(&[2, 3, 4, 4], 2.5);
        assert!(global_avg_pool(&c).unwrap().to_vec().iter().all(|&v| v == 2.5));
    }
}

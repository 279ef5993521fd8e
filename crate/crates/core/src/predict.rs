//! Batched inference in eval mode and whole-set evaluation.

use lfinet_tensor::ops::NormMode;
use lfinet_tensor::{no_grad, Element};

use crate::error::Result;
use crate::metrics::{evaluate_set, EvalItem, Evaluation};
use crate::model::Lfinet;
use crate::raster::{stack, unstack, Raster};
use crate::trajdata::SamplePair;

/// Probability maps for `images`, `batch` at a time.
pub fn predict<T: Element>(model: &Lfinet<T>, images: &[Raster], batch: usize) -> Result<Vec<Raster>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let x = stack::<T>(chunk)?;
        let prob = no_grad(|| model.forward(&x, NormMode::Eval))?;
        out.extend(unstack(&prob, 0)?);
    }
    Ok(out)
}

/// Predicts every pair and scores the set against its masks.
pub fn evaluate_model<T: Element>(model: &Lfinet<T>, pairs: &[SamplePair], batch: usize) -> Result<Evaluation> {
    let images: Vec<Raster> = pairs.iter().map(|p| p.image.clone()).collect();
    let probs = predict(model, &images, batch)?;
    let items: Vec<EvalItem<'_>> =
        pairs.iter().zip(&probs).map(|(p, prob)| EvalItem { id: &p.id, prob, gt: &p.mask }).collect();
    evaluate_set(&items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn batching_does_not_change_predictions() {
        let cfg = ModelConfig {
            image_size: [16, 16],
            channels: [8, 8, 16],
            st_dim: 16,
            st_layers: 1,
            st_heads: 2,
            st_ffn_mult: 2,
            ablate: Default::default(),
        };
        let m = Lfinet::<f32>::new(cfg, 4).unwrap();
        let imgs: Vec<Raster> =
            (0..3).map(|k| Raster::new(16, 16, (0..256).map(|i| ((i * (k + 3)) % 17) as f32 / 17.0).collect()).unwrap()).collect();
        let a = predict(&m, &imgs, 1).unwrap();
        let b = predict(&m, &imgs, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.data.iter().zip(&y.data).all(|(p, q)| (p - q).abs() <= 1e-6));
            assert!(x.data.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}

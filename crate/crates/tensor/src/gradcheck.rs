//! Central finite-difference gradient checks in `f64`.
//!
//! The numeric side only evaluates the forward function, so it is
//! independent of every backward rule it checks.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{no_grad, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coords {
    All,
    /// At most this many random coordinates per input tensor.
    PerInput(usize),
    /// This many random coordinates drawn uniformly over all inputs.
    Total(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor for near-zero gradients.
    pub abs_floor: f64,
    pub coords: Coords,
    pub seed: u64,
}

impl GradCheckConfig {
    pub fn primitive() -> Self {
        GradCheckConfig { step: 1e-6, tolerance: 1e-5, abs_floor: 1e-8, coords: Coords::All, seed: 0 }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_coords(mut self, coords: Coords) -> Self {
        self.coords = coords;
        self
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// (input index, flat coordinate, analytic, numeric) of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance && self.max_rel_err.is_finite()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} {:>6} coords  max rel err {:.3e}  (tol {:.0e})  {}",
            self.name,
            self.coords_checked,
            self.max_rel_err,
            self.tolerance,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Fixed pseudo-random projection weights in [-1, 1], used to reduce a
/// tensor output to a scalar with a non-degenerate gradient.
pub fn projection(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    Tensor::rand_uniform(shape, -1.0, 1.0, &mut rng)
}

/// `sum(out ⊙ weights)`
pub fn project(out: &Tensor<f64>, weights: &Tensor<f64>) -> Result<Tensor<f64>> {
    Ok(out.mul(weights)?.sum())
}

fn select(inputs: &[Tensor<f64>], coords: Coords, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match coords {
        Coords::All => inputs
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
            .collect(),
        Coords::PerInput(k) => inputs
            .iter()
            .enumerate()
            .flat_map(|(i, t)| {
                let n = t.numel();
                let mut idx = if n <= k { (0..n).collect() } else { sample(&mut rng, n, k).into_vec() };
                idx.sort_unstable();
                idx.into_iter().map(move |j| (i, j)).collect::<Vec<_>>()
            })
            .collect(),
        Coords::Total(k) => {
            let sizes: Vec<usize> = inputs.iter().map(Tensor::numel).collect();
            let total: usize = sizes.iter().sum();
            let mut flat = if total <= k { (0..total).collect() } else { sample(&mut rng, total, k).into_vec() };
            flat.sort_unstable();
            flat.into_iter()
                .map(|mut f| {
                    let mut i = 0;
                    while f >= sizes[i] {
                        f -= sizes[i];
                        i += 1;
                    }
                    (i, f)
                })
                .collect()
        }
    }
}

/// Compares the backward pass of the scalar function `f` against central
/// differences with respect to every selected coordinate of `inputs`.
/// Inputs must be leaves with `requires_grad`.
pub fn check_gradients(
    name: &str,
    inputs: &[Tensor<f64>],
    f: impl Fn() -> Result<Tensor<f64>>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    inputs.iter().for_each(Tensor::clear_grad);
    f()?.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    inputs.iter().for_each(Tensor::clear_grad);

    let mut report = GradCheckReport {
        name: name.to_string(),
        coords_checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: None,
        tolerance: cfg.tolerance,
    };
    for (i, j) in select(inputs, cfg.coords, cfg.seed) {
        let t = &inputs[i];
        let orig = t.data()[j];
        t.data_mut()[j] = orig + cfg.step;
        let plus = no_grad(&f)?.item();
        t.data_mut()[j] = orig - cfg.step;
        let minus = no_grad(&f)?.item();
        t.data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic[i][j];
        let rel = relative_error(a, numeric, cfg.abs_floor);
        report.coords_checked += 1;
        report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
        if rel > report.max_rel_err || rel.is_nan() {
            report.max_rel_err = if rel.is_nan() { f64::INFINITY } else { rel };
            report.worst = Some((i, j, a, numeric));
        }
    }
    Ok(report)
}

/// Like [`check_gradients`] for a tensor-valued `f`, reduced with fixed
/// projection weights. The central difference is taken per output element
/// before the weighted sum, so outputs a perturbation does not reach cancel
/// exactly and the roundoff of the whole sum does not swamp small gradients.
pub fn check_projected(
    name: &str,
    inputs: &[Tensor<f64>],
    f: impl Fn() -> Result<Tensor<f64>>,
    seed: u64,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let probe = no_grad(&f)?;
    let weights = projection(probe.shape(), seed);
    inputs.iter().for_each(Tensor::clear_grad);
    project(&f()?, &weights)?.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    inputs.iter().for_each(Tensor::clear_grad);

    let w = weights.to_vec();
    let mut report = GradCheckReport {
        name: name.to_string(),
        coords_checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: None,
        tolerance: cfg.tolerance,
    };
    for (i, j) in select(inputs, cfg.coords, cfg.seed) {
        let t = &inputs[i];
        let orig = t.data()[j];
        t.data_mut()[j] = orig + cfg.step;
        let plus = no_grad(&f)?.to_vec();
        t.data_mut()[j] = orig - cfg.step;
        let minus = no_grad(&f)?.to_vec();
        t.data_mut()[j] = orig;
        let numeric = plus
            .iter()
            .zip(&minus)
            .zip(&w)
            .map(|((p, m), w)| w * (p - m))
            .sum::<f64>()
            / (2.0 * cfg.step);
        let a = analytic[i][j];
        let rel = relative_error(a, numeric, cfg.abs_floor);
        report.coords_checked += 1;
        report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
        if rel > report.max_rel_err || rel.is_nan() {
            report.max_rel_err = if rel.is_nan() { f64::INFINITY } else { rel };
            report.worst = Some((i, j, a, numeric));
        }
    }
    Ok(report)
}

/// Finite-difference checks for every differentiable primitive, in `f64`.
pub fn primitive_suite() -> Result<Vec<GradCheckReport>> {
    use crate::ops::*;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut leaf = |shape: &[usize], lo: f64, hi: f64| Tensor::<f64>::rand_uniform(shape, lo, hi, &mut rng).into_param();
    let tight = GradCheckConfig::primitive().with_tolerance(1e-6);
    let loose = GradCheckConfig::primitive();
    let mut reports = Vec::new();

    let mut run = |name: &str, inputs: Vec<Tensor<f64>>, cfg: &GradCheckConfig, f: &dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>| -> Result<()> {
        let r = check_projected(name, &inputs, || f(&inputs), reports.len() as u64, cfg)?;
        reports.push(r);
        Ok(())
    };

    run(
        "conv2d 3x3 pad1",
        vec![leaf(&[2, 3, 5, 6], -1.0, 1.0), leaf(&[4, 3, 3, 3], -0.5, 0.5), leaf(&[4], -0.5, 0.5)],
        &tight,
        &|t| conv2d(&t[0], &t[1], Some(&t[2]), Conv2dParams { stride: 1, padding: 1, dilation: 1, groups: 1 }),
    )?;
    run(
        "conv2d strided grouped",
        vec![leaf(&[2, 4, 7, 7], -1.0, 1.0), leaf(&[6, 2, 3, 3], -0.5, 0.5)],
        &tight,
        &|t| conv2d(&t[0], &t[1], None, Conv2dParams { stride: 2, padding: 1, dilation: 1, groups: 2 }),
    )?;
    run(
        "conv2d depthwise dilated",
        vec![leaf(&[2, 3, 9, 8], -1.0, 1.0), leaf(&[3, 1, 5, 5], -0.5, 0.5), leaf(&[3], -0.5, 0.5)],
        &tight,
        &|t| conv2d(&t[0], &t[1], Some(&t[2]), Conv2dParams::same(5, 2, 3)),
    )?;
    run(
        "conv2d pointwise",
        vec![leaf(&[2, 5, 3, 4], -1.0, 1.0), leaf(&[3, 5, 1, 1], -0.5, 0.5)],
        &tight,
        &|t| conv2d(&t[0], &t[1], None, Conv2dParams::default()),
    )?;
    run(
        "conv_transpose2d k2 s2",
        vec![leaf(&[2, 3, 3, 4], -1.0, 1.0), leaf(&[3, 2, 2, 2], -0.5, 0.5), leaf(&[2], -0.5, 0.5)],
        &tight,
        &|t| conv_transpose2d(&t[0], &t[1], Some(&t[2]), 2),
    )?;
    run("avg_pool2x2", vec![leaf(&[2, 2, 4, 6], -1.0, 1.0)], &tight, &|t| avg_pool2x2(&t[0]))?;
    for scale in [2, 4, 8] {
        run(
            &format!("bilinear_upsample x{scale}"),
            vec![leaf(&[1, 2, 3, 2], -1.0, 1.0)],
            &tight,
            &move |t| bilinear_upsample(&t[0], scale),
        )?;
    }
    for mode in [NormMode::Train, NormMode::Eval] {
        let stats = [Tensor::<f64>::full(&[3], 0.1), Tensor::<f64>::full(&[3], 1.3)];
        run(
            &format!("batch_norm2d {mode:?}"),
            vec![leaf(&[2, 3, 3, 3], -1.0, 1.0), leaf(&[3], 0.5, 1.5), leaf(&[3], -0.5, 0.5)],
            &loose,
            &move |t| batch_norm2d(&t[0], &t[1], &t[2], &stats[0], &stats[1], mode),
        )?;
    }
    // keep relu inputs away from the kink
    let away = leaf(&[3, 7], -1.0, 1.0);
    away.data_mut().iter_mut().for_each(|v| *v += 0.2 * v.signum());
    run("relu", vec![away], &tight, &|t| Ok(t[0].relu()))?;
    run("gelu", vec![leaf(&[3, 7], -3.0, 3.0)], &tight, &|t| Ok(t[0].gelu()))?;
    run("sigmoid", vec![leaf(&[3, 7], -4.0, 4.0)], &tight, &|t| Ok(t[0].sigmoid()))?;
    run("softmax axis 1", vec![leaf(&[2, 5, 3], -2.0, 2.0)], &tight, &|t| softmax(&t[0], 1))?;
    run("global_avg_pool", vec![leaf(&[2, 3, 4, 5], -1.0, 1.0)], &tight, &|t| global_avg_pool(&t[0]))?;
    run(
        "concat/slice channels",
        vec![leaf(&[2, 2, 3, 3], -1.0, 1.0), leaf(&[2, 3, 3, 3], -1.0, 1.0)],
        &tight,
        &|t| {
            let c = concat(&[&t[0], &t[1]], 1)?;
            let parts = slice_channels(&c, &[0..1, 1..4, 4..5])?;
            concat(&[&parts[2].scale(2.0), &parts[0], &parts[1]], 1)
        },
    )?;
    run(
        "matmul batched",
        vec![leaf(&[2, 3, 4], -1.0, 1.0), leaf(&[2, 4, 5], -1.0, 1.0)],
        &tight,
        &|t| matmul(&t[0], &t[1]),
    )?;
    run(
        "linear",
        vec![leaf(&[2, 3, 4], -1.0, 1.0), leaf(&[4, 6], -1.0, 1.0), leaf(&[6], -1.0, 1.0)],
        &tight,
        &|t| linear(&t[0], &t[1], Some(&t[2])),
    )?;
    run(
        "scaled_dot_attention",
        vec![leaf(&[2, 5, 8], -1.0, 1.0), leaf(&[2, 5, 8], -1.0, 1.0), leaf(&[2, 5, 8], -1.0, 1.0)],
        &loose,
        &|t| scaled_dot_attention(&t[0], &t[1], &t[2], 2),
    )?;
    run(
        "layer_norm",
        vec![leaf(&[2, 3, 6], -1.0, 1.0), leaf(&[6], 0.5, 1.5), leaf(&[6], -0.5, 0.5)],
        &loose,
        &|t| layer_norm(&t[0], &t[1], &t[2]),
    )?;
    run(
        "broadcast arithmetic",
        vec![leaf(&[2, 3, 2, 2], -1.0, 1.0), leaf(&[2, 3, 1, 1], 0.5, 1.5)],
        &tight,
        &|t| t[0].mul(&t[1])?.add(&t[1])?.div(&t[1].add_scalar(0.5))?.sub(&t[0]),
    )?;
    run(
        "ln/clamp",
        vec![leaf(&[10], 0.2, 0.8)],
        &tight,
        &|t| Ok(t[0].clamp(0.01, 0.99).ln().rsub_scalar(1.0).exp().scale(0.5)),
    )?;
    run("sum/mean", vec![leaf(&[3, 4], -1.0, 1.0)], &tight, &|t| {
        t[0].mul(&t[0])?.sum().add(&t[0].mean())
    })?;
    Ok(reports)
}

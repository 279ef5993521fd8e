//! Finite-difference gradient-check suites, grouped by component.

use std::fmt;
use std::str::FromStr;

use lfinet_tensor::gradcheck::{check_gradients, check_projected, primitive_suite, Coords, GradCheckConfig, GradCheckReport};
use lfinet_tensor::ops::NormMode;
use lfinet_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cfib::{EncoderLayer, Fgm, Hfb};
use crate::error::{invalid, Result};
use crate::layers::Builder;
use crate::lms::laplacian_decompose;
use crate::loss::dice_bce_loss;
use crate::model::{Lfinet, ModelConfig};
use crate::prd::ConvStage;
use crate::seed::{derive_seed, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Primitives,
    Lms,
    Hfb,
    St,
    Fgm,
    ConvStage,
    Loss,
    Net,
    All,
}

impl Scope {
    pub const NAMES: [&'static str; 9] = ["primitives", "lms", "hfb", "st", "fgm", "conv_stage", "loss", "net", "all"];
    const EACH: [Scope; 8] =
        [Scope::Primitives, Scope::Lms, Scope::Hfb, Scope::St, Scope::Fgm, Scope::ConvStage, Scope::Loss, Scope::Net];
}

impl FromStr for Scope {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match Scope::NAMES.iter().position(|n| *n == s) {
            Some(i) if i < 8 => Ok(Scope::EACH[i]),
            Some(_) => Ok(Scope::All),
            None => Err(invalid(format!("unknown gradcheck scope `{s}`; expected one of {}", Scope::NAMES.join(", ")))),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = Scope::EACH.iter().position(|s| s == self).unwrap_or(8);
        f.write_str(Scope::NAMES[i])
    }
}

/// Gradient checks take tensor-level results.
fn lift(r: Result<Tensor<f64>>) -> lfinet_tensor::Result<Tensor<f64>> {
    r.map_err(|e| match e {
        crate::Error::Tensor(t) => t,
        other => lfinet_tensor::TensorError::Invalid { op: "gradcheck", msg: other.to_string() },
    })
}

fn leaf(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::rand_uniform(shape, lo, hi, rng).into_param()
}

fn composite(tolerance: f64) -> GradCheckConfig {
    GradCheckConfig::primitive().with_tolerance(tolerance).with_coords(Coords::PerInput(24))
}

/// Input first, then every parameter of the store.
fn with_params(x: Tensor<f64>, store: &lfinet_tensor::ParamStore<f64>) -> Vec<Tensor<f64>> {
    std::iter::once(x).chain(store.params().map(|(_, p)| p.clone())).collect()
}

fn rng_for(index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(0, Stream::Gradcheck, index))
}

fn lms_suite() -> Result<Vec<GradCheckReport>> {
    let mut rng = rng_for(1);
    let x = leaf(&mut rng, &[2, 1, 16, 16], 0.0, 1.0);
    let cfg = GradCheckConfig::primitive().with_coords(Coords::All);
    let inputs = [x.clone()];
    let mut out = Vec::new();
    for (k, name) in ["lms L0", "lms L1", "lms L2", "lms base"].into_iter().enumerate() {
        let f = || {
            let d = lift(laplacian_decompose(&x).map(|d| if k < 3 { d.levels[k].clone() } else { d.base }))?;
            Ok(d)
        };
        out.push(check_projected(name, &inputs, f, 10 + k as u64, &cfg)?);
    }
    Ok(out)
}

fn hfb_suite() -> Result<Vec<GradCheckReport>> {
    let mut rng = rng_for(2);
    let mut b = Builder::<f64>::new(rng.random());
    let hfb = Hfb::new(&mut b, "hfb", 1, 8, false)?;
    let store = b.finish();
    let inputs = with_params(leaf(&mut rng, &[2, 1, 8, 8], -1.0, 1.0), &store);
    let f = || lift(hfb.forward(&inputs[0], NormMode::Train));
    Ok(vec![check_projected("hfb C=8 8x8", &inputs, f, 20, &composite(1e-4))?])
}

fn st_suite() -> Result<Vec<GradCheckReport>> {
    let mut rng = rng_for(3);
    let mut b = Builder::<f64>::new(rng.random());
    let layer = EncoderLayer::new(&mut b, "st", 8, 2, 2)?;
    let store = b.finish();
    // a 4x4 token grid
    let inputs = with_params(leaf(&mut rng, &[2, 16, 8], -1.0, 1.0), &store);
    let f = || lift(layer.forward(&inputs[0]));
    Ok(vec![check_projected("st layer 4x4", &inputs, f, 30, &composite(1e-4))?])
}

fn fgm_suite() -> Result<Vec<GradCheckReport>> {
    let mut rng = rng_for(4);
    let mut b = Builder::<f64>::new(rng.random());
    let fgm = Fgm::new(&mut b, "fgm", 8, 8, false)?;
    let store = b.finish();
    let mut inputs = with_params(leaf(&mut rng, &[2, 8, 8, 8], -1.0, 1.0), &store);
    inputs.insert(1, leaf(&mut rng, &[2, 8, 4, 4], -1.0, 1.0));
    let f = || lift(fgm.forward(&inputs[0], &inputs[1], 2, NormMode::Train));
    Ok(vec![check_projected("fgm C=8 8x8", &inputs, f, 40, &composite(1e-4))?])
}

fn conv_stage_suite() -> Result<Vec<GradCheckReport>> {
    let mut rng = rng_for(5);
    let mut b = Builder::<f64>::new(rng.random());
    let stage = ConvStage::new(&mut b, "stage", 4, 4)?;
    let store = b.finish();
    let inputs = with_params(leaf(&mut rng, &[2, 4, 8, 8], -1.0, 1.0), &store);
    let f = || lift(stage.forward(&inputs[0], NormMode::Train));
    Ok(vec![check_projected("conv stage", &inputs, f, 50, &composite(1e-5))?])
}

fn loss_suite() -> Result<Vec<GradCheckReport>> {
    let mut rng = rng_for(6);
    let pred = leaf(&mut rng, &[2, 1, 6, 6], 0.05, 0.95);
    let target = Tensor::new((0..72).map(|_| rng.random_bool(0.3) as u8 as f64).collect(), &[2, 1, 6, 6])?;
    let cfg = GradCheckConfig::primitive().with_tolerance(1e-6);
    let inputs = [pred.clone()];
    let total = check_gradients("dice_bce total", &inputs, || lift(dice_bce_loss(&pred, &target).map(|l| l.total)), &cfg)?;
    let dice = check_gradients("dice term", &inputs, || lift(dice_bce_loss(&pred, &target).map(|l| l.dice)), &cfg)?;
    Ok(vec![total, dice])
}

/// The full network at 16×16; tolerance 1e-3 over at least 200 coordinates.
fn net_suite() -> Result<Vec<GradCheckReport>> {
    let mut rng = rng_for(7);
    let config = ModelConfig {
        image_size: [16, 16],
        channels: [8, 8, 16],
        st_dim: 16,
        st_layers: 1,
        st_heads: 2,
        st_ffn_mult: 2,
        ablate: Default::default(),
    };
    let net = Lfinet::<f64>::new(config, rng.random())?;
    let inputs = with_params(leaf(&mut rng, &[2, 1, 16, 16], 0.0, 1.0), &net.store);
    let cfg = GradCheckConfig::primitive().with_tolerance(1e-3).with_coords(Coords::Total(240));
    let f = || lift(net.forward(&inputs[0], NormMode::Train));
    let mut coords = check_projected("full net 16x16", &inputs, f, 70, &cfg)?;
    // the image itself, which a parameter-dominated sample rarely hits
    let cfg_x = cfg.with_coords(Coords::PerInput(32));
    let image = check_projected("full net 16x16 image", &inputs[..1], f, 71, &cfg_x)?;
    coords.name = "full net 16x16 params".into();
    Ok(vec![coords, image])
}

pub fn run(scope: Scope) -> Result<Vec<GradCheckReport>> {
    Ok(match scope {
        Scope::Primitives => primitive_suite()?,
        Scope::Lms => lms_suite()?,
        Scope::Hfb => hfb_suite()?,
        Scope::St => st_suite()?,
        Scope::Fgm => fgm_suite()?,
        Scope::ConvStage => conv_stage_suite()?,
        Scope::Loss => loss_suite()?,
        Scope::Net => net_suite()?,
        Scope::All => {
            let mut all = Vec::new();
            for s in Scope::EACH {
                all.extend(run(s)?);
            }
            all
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scope_names_round_trip() {
        for name in Scope::NAMES {
            assert_eq!(name.parse::<Scope>().unwrap().to_string(), name);
        }
        assert!("bogus".parse::<Scope>().unwrap_err().to_string().contains("conv_stage"));
    }

    #[test]
    fn cheap_suites_pass() {
        for scope in [Scope::Lms, Scope::Loss, Scope::ConvStage] {
            for r in run(scope).unwrap() {
                assert!(r.passed(), "{r} {:?}", r.worst);
            }
        }
    }
}

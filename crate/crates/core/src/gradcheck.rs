//! Central finite-difference checks for tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute rather than relative
/// terms; central differences cannot resolve them any better.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Compares reverse-mode gradients of the scalar `f` against central finite
/// differences on up to `samples` coordinates drawn with `seed`.
pub fn grad_check<F>(f: F, params: &[Tensor], samples: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();

    let mut coords = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        coords.extend((0..p.len()).map(|ei| (pi, ei)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, coords.len(), samples.min(coords.len()));

    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for k in picks.iter() {
        let (pi, ei) = coords[k];
        let orig = probe[pi].data()[ei];
        probe[pi].data_mut()[ei] = orig + FD_STEP;
        let plus = evaluate(&f, &probe)?;
        probe[pi].data_mut()[ei] = orig - FD_STEP;
        let minus = evaluate(&f, &probe)?;
        probe[pi].data_mut()[ei] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic[pi].data()[ei], numeric));
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        coordinates: picks.len(),
    })
}

//! Central finite-difference verification of recorded gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::DiffError;
use crate::{ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step along each unit direction.
    pub h: f64,
    /// Random directions tested per input or parameter tensor.
    pub directions: usize,
    pub seed: u64,
    /// Directional derivatives below `floor * max(1, |f|)` are compared
    /// absolutely, where `f` is the checked scalar at the base point. This
    /// keeps exactly-zero gradients from dividing roundoff by zero.
    pub floor: f64,
    /// When set, a direction whose forward and backward one-sided
    /// differences disagree by more than this relative amount straddles a
    /// kink (ReLU, max, neighbor switch) and is redrawn instead of compared.
    /// The test uses forward evaluations only, so it cannot mask a wrong
    /// backward pass.
    pub kink_tol: Option<f64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            directions: 3,
            seed: 0,
            floor: 1e-4,
            kink_tol: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error over all tensors and directions.
    pub max_rel_error: f64,
    /// Worst relative error per tensor: `input[i]` or the parameter name.
    pub per_tensor: Vec<(String, f64)>,
    /// Directions compared against finite differences.
    pub checked: usize,
    /// Directions redrawn because their stencil crossed a kink.
    pub kinks: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_tensor
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

fn unit_direction(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut u: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u.iter_mut().for_each(|v| *v /= norm);
    u
}

/// Compares the analytic gradient of `sum(w * build(inputs))` (with fixed
/// random weights `w`) against central differences along random unit
/// directions, for every input tensor and every parameter in `store`.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor * max(1, |f|))` for
/// analytic directional derivative `a` and numeric `n`.
pub fn gradient_check<F>(
    store: &mut ParamStore,
    inputs: &[Tensor],
    cfg: &GradCheckConfig,
    build: F,
) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // analytic pass
    let (weights, input_grads, param_grads, f0) = {
        let mut tape = Tape::new(store);
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| tape.input_with_grad(t.clone()))
            .collect();
        let out = build(&mut tape, &vars)?;
        let shape = tape.shape(out).to_vec();
        let len = tape.value(out).len();
        let weights = Tensor::new(
            &shape,
            (0..len).map(|_| StandardNormal.sample(&mut rng)).collect(),
        )?;
        let s = tape.weighted_sum(out, &weights)?;
        let f0 = tape.value(s).data()[0];
        let grads = tape.backward(s);
        let input_grads: Vec<Vec<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| grads.wrt(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
            .collect();
        let param_grads: Vec<Vec<f64>> = store
            .ids()
            .map(|id| {
                grads
                    .param(id)
                    .map_or_else(|| vec![0.0; store.get(id).value.len()], <[f64]>::to_vec)
            })
            .collect();
        (weights, input_grads, param_grads, f0)
    };

    let eval = |store: &ParamStore, inputs: &[Tensor]| -> Result<f64, DiffError> {
        let mut tape = Tape::new(store);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let s = tape.weighted_sum(out, &weights)?;
        Ok(tape.value(s).data()[0])
    };

    let floor = cfg.floor * f0.abs().max(1.0);
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(floor);
    let kinked = |plus: f64, minus: f64| {
        cfg.kink_tol.is_some_and(|tol| {
            let fwd = (plus - f0) / cfg.h;
            let bwd = (f0 - minus) / cfg.h;
            (fwd - bwd).abs() > tol * fwd.abs().max(bwd.abs()).max(floor)
        })
    };
    // Redraws per tensor before a kinked direction is compared anyway.
    let max_redraws = 4 * cfg.directions;
    let mut per_tensor = Vec::new();
    let mut checked = 0;
    let mut kinks = 0;

    for (i, grad) in input_grads.iter().enumerate() {
        let mut worst = 0.0f64;
        let mut done = 0;
        let mut redraws = 0;
        while done < cfg.directions {
            let u = unit_direction(&mut rng, grad.len());
            let analytic: f64 = grad.iter().zip(&u).map(|(g, d)| g * d).sum();
            let mut shifted = inputs.to_vec();
            let base = inputs[i].data();
            for (s, (b, d)) in shifted[i].data_mut().iter_mut().zip(base.iter().zip(&u)) {
                *s = b + cfg.h * d;
            }
            let plus = eval(store, &shifted)?;
            for (s, (b, d)) in shifted[i].data_mut().iter_mut().zip(base.iter().zip(&u)) {
                *s = b - cfg.h * d;
            }
            let minus = eval(store, &shifted)?;
            if redraws < max_redraws && kinked(plus, minus) {
                redraws += 1;
                continue;
            }
            worst = worst.max(rel(analytic, (plus - minus) / (2.0 * cfg.h)));
            done += 1;
        }
        checked += done;
        kinks += redraws;
        per_tensor.push((format!("input[{i}]"), worst));
    }

    let ids: Vec<_> = store.ids().collect();
    for (id, grad) in ids.into_iter().zip(&param_grads) {
        let base = store.get(id).value.clone();
        let mut worst = 0.0f64;
        let mut done = 0;
        let mut redraws = 0;
        while done < cfg.directions {
            let u = unit_direction(&mut rng, grad.len());
            let analytic: f64 = grad.iter().zip(&u).map(|(g, d)| g * d).sum();
            let mut side = |sign: f64| -> Result<f64, DiffError> {
                let values = store.get_mut(id).value.data_mut();
                for (s, (b, d)) in values.iter_mut().zip(base.data().iter().zip(&u)) {
                    *s = b + sign * cfg.h * d;
                }
                eval(store, inputs)
            };
            let plus = side(1.0)?;
            let minus = side(-1.0)?;
            if redraws < max_redraws && kinked(plus, minus) {
                redraws += 1;
                continue;
            }
            worst = worst.max(rel(analytic, (plus - minus) / (2.0 * cfg.h)));
            done += 1;
        }
        checked += done;
        kinks += redraws;
        store.get_mut(id).value = base;
        per_tensor.push((store.get(id).name.clone(), worst));
    }

    let max_rel_error = per_tensor.iter().map(|e| e.1).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        per_tensor,
        checked,
        kinks,
    })
}

//! Finite-difference verification of the hand-written backward pass.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{backward, forward, Params};
use super::{LstmError, LstmModel};

/// Below this magnitude of the numerical gradient, deviations are measured
/// absolutely instead of relative to the reference.
pub const ABSOLUTE_FLOOR: f64 = 1e-6;

/// Location of one scalar parameter: tensor position in
/// [`Params::tensors`] order, then flat index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRef {
    pub tensor: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckReport {
    pub max_deviation: f64,
    pub checked: usize,
    /// Tensor name and flat index of the worst parameter.
    pub worst: (String, usize),
}

/// Deviation of an analytic derivative from its numerical reference:
/// relative to `numeric`, or absolute when `numeric` is below
/// [`ABSOLUTE_FLOOR`].
pub fn deviation(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if numeric.abs() < ABSOLUTE_FLOOR {
        diff
    } else {
        diff / numeric.abs()
    }
}

/// Central difference `(f(x + ε e_i) − f(x − ε e_i)) / 2ε`; restores `x[i]`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &mut [f64], i: usize, epsilon: f64) -> f64 {
    let orig = x[i];
    x[i] = orig + epsilon;
    let plus = f(x);
    x[i] = orig - epsilon;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * epsilon)
}

fn inference_loss(params: &Params, model: &LstmModel, seq: &[usize], target: f64) -> f64 {
    (forward(params, &model.hyperparams, seq, None).output - target).powi(2)
}

/// Squared-error loss and its analytic gradient for one sample, dropout off.
pub fn analytic_gradients(model: &LstmModel, phrase: &str, target: f64) -> (f64, Params) {
    let seq = model.encode(phrase);
    let pass = forward(&model.params, &model.hyperparams, &seq, None);
    backward(&model.params, &seq, &pass, target)
}

/// Picks `count` parameters, spread round-robin over every tensor. Embedding
/// picks are restricted to rows of characters present in `phrase`; other rows
/// have an identically zero gradient.
pub fn sample_parameters(model: &LstmModel, phrase: &str, count: usize, seed: u64) -> Vec<ParamRef> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let used_rows: BTreeSet<usize> = model.encode(phrase).into_iter().collect();
    let tensors = model.params.tensors();
    let mut pools: Vec<Vec<usize>> = tensors
        .iter()
        .enumerate()
        .map(|(ti, (_, t))| {
            let mut pool: Vec<usize> = if ti == 0 {
                used_rows.iter().flat_map(|&r| r * t.cols..(r + 1) * t.cols).collect()
            } else {
                (0..t.data.len()).collect()
            };
            pool.shuffle(&mut rng);
            pool
        })
        .collect();

    let mut picks = Vec::with_capacity(count);
    while picks.len() < count && pools.iter().any(|p| !p.is_empty()) {
        for (tensor, pool) in pools.iter_mut().enumerate() {
            if picks.len() == count {
                break;
            }
            if let Some(index) = pool.pop() {
                picks.push(ParamRef { tensor, index });
            }
        }
    }
    picks
}

/// Compares `grads` against central differences of the inference loss at
/// each picked parameter.
pub fn compare_gradients(
    model: &LstmModel,
    phrase: &str,
    target: f64,
    grads: &Params,
    picks: &[ParamRef],
    epsilon: f64,
) -> GradientCheckReport {
    let seq = model.encode(phrase);
    let mut probe = model.params.clone();
    let names: Vec<String> = grads.tensors().into_iter().map(|(n, _)| n).collect();
    let analytic_tensors = grads.tensors();

    let mut report = GradientCheckReport {
        max_deviation: 0.0,
        checked: 0,
        worst: (String::new(), 0),
    };
    for p in picks {
        let orig = probe.tensors_mut()[p.tensor].data[p.index];
        let mut eval = |v: f64| {
            probe.tensors_mut()[p.tensor].data[p.index] = v;
            inference_loss(&probe, model, &seq, target)
        };
        let plus = eval(orig + epsilon);
        let minus = eval(orig - epsilon);
        eval(orig);
        let numeric = (plus - minus) / (2.0 * epsilon);
        let dev = deviation(analytic_tensors[p.tensor].1.data[p.index], numeric);
        report.checked += 1;
        if report.checked == 1 || dev > report.max_deviation {
            report.max_deviation = dev;
            report.worst = (names[p.tensor].clone(), p.index);
        }
    }
    report
}

/// Worst deviation between backpropagated and finite-difference gradients
/// over `samples` parameters chosen with `seed`.
pub fn gradient_check(
    model: &LstmModel,
    sample: (&str, f64),
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<GradientCheckReport, LstmError> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(LstmError::InvalidHyperparams(format!(
            "epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let (phrase, target) = sample;
    let (_, grads) = analytic_gradients(model, phrase, target);
    let picks = sample_parameters(model, phrase, samples, seed);
    Ok(compare_gradients(model, phrase, target, &grads, &picks, epsilon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::LstmHyperparams;

    #[test]
    fn deviation_switches_to_absolute_near_zero() {
        assert_eq!(deviation(2.0, 1.0), 1.0);
        assert_eq!(deviation(1e-9, 0.0), 1e-9);
        assert!((deviation(1.0001, 1.0) - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn quadratic_at_its_minimum() {
        let center = [0.3, -1.2, 4.0];
        let f = |x: &[f64]| x.iter().zip(&center).map(|(a, c)| (a - c).powi(2)).sum::<f64>();
        let mut x = center.to_vec();
        for i in 0..3 {
            let numeric = central_difference(f, &mut x, i, 1e-5);
            assert!(deviation(0.0, numeric) < 1e-8);
        }
        assert_eq!(x, center);
    }

    #[test]
    fn samples_cover_every_tensor() {
        let model = LstmModel::new(LstmHyperparams::default()).unwrap();
        let picks = sample_parameters(&model, "big sale", 64, 3);
        assert_eq!(picks.len(), 64);
        let tensors: BTreeSet<usize> = picks.iter().map(|p| p.tensor).collect();
        assert_eq!(tensors.len(), model.params.tensors().len());
        let cols = model.params.embedding.cols;
        let used: BTreeSet<usize> = model.encode("big sale").into_iter().collect();
        for p in picks.iter().filter(|p| p.tensor == 0) {
            assert!(used.contains(&(p.index / cols)));
        }
    }

    #[test]
    fn fresh_model_passes() {
        let model = LstmModel::new(LstmHyperparams::default()).unwrap();
        let report = gradient_check(&model, ("up to 25%", 0.8), 1e-5, 60, 11).unwrap();
        assert_eq!(report.checked, 60);
        assert!(report.max_deviation < 1e-4, "{report:?}");
    }

    #[test]
    fn rejects_out_of_range_epsilon() {
        let model = LstmModel::new(LstmHyperparams::default()).unwrap();
        assert!(gradient_check(&model, ("x", 0.5), 1e-2, 10, 0).is_err());
    }
}

//! Central finite-difference oracle for the analytic gradients.
//!
//! [`numeric_gradient`] differences any `f64` loss. For the click-through
//! loss itself, [`numeric_instance_gradient`] differences an independent
//! double-double evaluation instead: in plain `f64` the rounding of a loss
//! near 1.0 is about 1e-16, which after dividing by `2ε = 2e-5` swamps the
//! smallest gradient coordinates at a 1e-5 relative tolerance.

pub mod double_double;
mod reference;

use std::fmt;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bptt::{instance_gradients, Gradients, Truncation};
use crate::error::{Error, Result};
use crate::lstm::{init_parameters, LstmParameters, ModelDims, GROUP_NAMES};
use crate::text::{hash_sequence, ClickThroughInstance, TrigramVocabulary, Words};
use double_double::DoubleDouble;
use reference::ReferenceModel;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
/// Floor of the relative-error denominator.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// `(L(θ + ε e_k) − L(θ − ε e_k)) / 2ε` for every coordinate `k`.
pub fn numeric_gradient<F>(loss_fn: F, params: &LstmParameters, epsilon: f64) -> Result<Gradients>
where
    F: Fn(&LstmParameters) -> Result<f64> + Sync,
{
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let coords: Vec<(usize, usize)> = params
        .groups()
        .iter()
        .enumerate()
        .flat_map(|(g, s)| (0..s.len()).map(move |k| (g, k)))
        .collect();

    let values: Vec<f64> = coords
        .par_iter()
        .map_init(
            || params.clone(),
            |probe, &(g, k)| {
                let original = probe.groups()[g][k];
                probe.groups_mut()[g][k] = original + epsilon;
                let plus = loss_fn(probe);
                probe.groups_mut()[g][k] = original - epsilon;
                let minus = loss_fn(probe);
                probe.groups_mut()[g][k] = original;
                let (plus, minus) = (plus?, minus?);
                if !(plus.is_finite() && minus.is_finite()) {
                    return Err(Error::NonFinite(format!("loss with {}[{k}] perturbed", GROUP_NAMES[g])));
                }
                Ok((plus - minus) / (2.0 * epsilon))
            },
        )
        .collect::<Result<_>>()?;

    let mut grads = Gradients::zeros(params.dims());
    for (&(g, k), v) in coords.iter().zip(values) {
        grads.groups_mut()[g][k] = v;
    }
    Ok(grads)
}

/// Central differences of one instance's loss, evaluated in double-double
/// precision by an independent forward pass. The perturbation `θ ± ε` is
/// exact.
pub fn numeric_instance_gradient(
    params: &LstmParameters,
    instance: &ClickThroughInstance,
    vocab: &TrigramVocabulary,
    gamma: f64,
    epsilon: f64,
) -> Result<Gradients> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let query = hash_sequence(&instance.query, vocab)?;
    let docs: Vec<_> = instance
        .sequences()
        .skip(1)
        .map(|d| hash_sequence(d, vocab))
        .collect::<Result<_>>()?;
    let base = ReferenceModel::new(params);
    let coords: Vec<(usize, usize)> = base
        .groups
        .iter()
        .enumerate()
        .flat_map(|(g, s)| (0..s.len()).map(move |k| (g, k)))
        .collect();

    let values: Vec<f64> = coords
        .par_iter()
        .map_init(
            || base.clone(),
            |probe, &(g, k)| {
                let original = probe.groups[g][k];
                probe.groups[g][k] = original + epsilon;
                let plus = probe.instance_loss(&query, &docs, gamma);
                probe.groups[g][k] = original - epsilon;
                let minus = probe.instance_loss(&query, &docs, gamma);
                probe.groups[g][k] = original;
                let diff: DoubleDouble = (plus - minus) / (2.0 * epsilon);
                if !diff.is_finite() {
                    return Err(Error::NonFinite(format!("loss with {}[{k}] perturbed", GROUP_NAMES[g])));
                }
                Ok(diff.to_f64())
            },
        )
        .collect::<Result<_>>()?;

    let mut grads = Gradients::zeros(params.dims());
    for (&(g, k), v) in coords.iter().zip(values) {
        grads.groups_mut()[g][k] = v;
    }
    Ok(grads)
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate within the group.
    pub argmax: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
    pub pass: bool,
    pub epsilon: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn failing(&self) -> impl Iterator<Item = &GroupCheck> {
        self.groups.iter().filter(|g| !g.pass)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>14} {:>8}  status", "group", "max_rel_err", "argmax")?;
        for g in &self.groups {
            writeln!(
                f,
                "{:<12} {:>14.3e} {:>8}  {}",
                g.name,
                g.max_rel_error,
                g.argmax,
                if g.pass { "ok" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "overall: {} (epsilon {:e}, tolerance {:e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.epsilon,
            self.tolerance
        )
    }
}

/// Compares two gradients group by group.
pub fn compare_gradients(analytic: &Gradients, numeric: &Gradients, tolerance: f64, epsilon: f64) -> GradCheckReport {
    let groups: Vec<GroupCheck> = analytic
        .groups()
        .iter()
        .zip(numeric.groups())
        .zip(GROUP_NAMES)
        .map(|((a, n), name)| {
            let (argmax, max_rel_error) = a
                .iter()
                .zip(n)
                .map(|(&a, &n)| relative_error(a, n))
                .enumerate()
                .fold((0, 0.0), |best, (k, e)| if e > best.1 || e.is_nan() { (k, e) } else { best });
            GroupCheck {
                name,
                max_rel_error,
                argmax,
                pass: max_rel_error <= tolerance,
            }
        })
        .collect();
    let pass = groups.iter().all(|g| g.pass);
    GradCheckReport {
        groups,
        pass,
        epsilon,
        tolerance,
    }
}

/// Checks [`instance_gradients`] (full BPTT) against
/// [`numeric_instance_gradient`].
pub fn check_gradients(
    params: &LstmParameters,
    instance: &ClickThroughInstance,
    vocab: &TrigramVocabulary,
    gamma: f64,
    tolerance: f64,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let analytic = instance_gradients(params, instance, vocab, gamma, Truncation::Full)?;
    let numeric = numeric_instance_gradient(params, instance, vocab, gamma, epsilon)?;
    Ok(compare_gradients(&analytic, &numeric, tolerance, epsilon))
}

/// A randomly generated model and instance for gradient checking.
#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub params: LstmParameters,
    pub instance: ClickThroughInstance,
    pub vocab: TrigramVocabulary,
}

impl GradCheckCase {
    /// Builds a model over a vocabulary of exactly `input_dim` trigrams, with
    /// every parameter group (peepholes and biases included) randomized, and
    /// an instance whose texts are 3 to 7 words long.
    pub fn random(seed: u64, input_dim: usize, ncell: usize, n_negatives: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let letters: Vec<char> = "abcdefghij".chars().collect();
        let word = |rng: &mut ChaCha8Rng| -> String {
            let len = rng.gen_range(2..=6);
            (0..len).map(|_| letters[rng.gen_range(0..letters.len())]).collect()
        };

        let pool: Vec<String> = (0..input_dim.max(8) * 2).map(|_| word(&mut rng)).collect();
        let full = TrigramVocabulary::build([pool.clone()])?;
        if full.dimension() < input_dim {
            return Err(Error::Config(format!(
                "could only generate {} trigrams, need {input_dim}",
                full.dimension()
            )));
        }
        let vocab = TrigramVocabulary::from_trigrams(full.trigrams()[..input_dim].iter().cloned())?;

        let text = |rng: &mut ChaCha8Rng| -> Words {
            let len = rng.gen_range(3..=7);
            (0..len).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect()
        };
        let query = text(&mut rng);
        let clicked = text(&mut rng);
        let mut negatives = Vec::with_capacity(n_negatives);
        while negatives.len() < n_negatives {
            let n = text(&mut rng);
            if n != clicked {
                negatives.push(n);
            }
        }
        let instance = ClickThroughInstance::new(query, clicked, negatives)?;

        let dims = ModelDims::new(input_dim, ncell)?;
        let mut params = init_parameters(dims, rng.gen());
        let jitter = Uniform::new_inclusive(-0.5, 0.5);
        for v in params.peephole.iter_mut().chain(params.bias.iter_mut()).flatten() {
            *v += jitter.sample(&mut rng);
        }
        Ok(GradCheckCase {
            params,
            instance,
            vocab,
        })
    }

    pub fn check(&self, gamma: f64, tolerance: f64, epsilon: f64) -> Result<GradCheckReport> {
        check_gradients(&self.params, &self.instance, &self.vocab, gamma, tolerance, epsilon)
    }
}

//! Finite-difference oracle for the reverse sweep.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParameterStore;
use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// `(f(x + eps) - f(x - eps)) / (2 eps)`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

/// Compare reverse-mode gradients of a scalar computation with central
/// differences on up to `max_coords` sampled coordinates of each parameter.
///
/// The relative error of a coordinate is `|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)`.
/// `forward` must be deterministic: any noise has to be fixed by the caller.
pub fn grad_check<T, F>(
    params: &mut ParameterStore<T>,
    eps: f64,
    max_coords: usize,
    seed: u64,
    forward: F,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: for<'g> Fn(&mut Graph<'g, T>) -> Result<Var>,
{
    let analytic: Vec<Option<Vec<T>>> = {
        let mut graph = Graph::new(params);
        let out = forward(&mut graph)?;
        if let Some((var, _)) = graph.first_non_finite() {
            return Err(Error::NonFinite(graph.describe(var)));
        }
        let grads = graph.backward(out);
        (0..params.len())
            .map(|i| grads.params().get(i).map(|g| g.data().to_vec()))
            .collect()
    };

    let eval = |params: &ParameterStore<T>| -> Result<f64> {
        let mut graph = Graph::new(params);
        let out = forward(&mut graph)?;
        let v = graph.value(out).sum().as_f64();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(graph.describe(out)))
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for p in 0..params.len() {
        let len = params.at(p).value.len();
        let coords: Vec<usize> = if len <= max_coords {
            (0..len).collect()
        } else {
            sample(&mut rng, len, max_coords).into_vec()
        };
        for idx in coords {
            let original = params.at(p).value.data()[idx];
            params.at_mut(p).value.data_mut()[idx] = T::of(original.as_f64() + eps);
            let plus = eval(params);
            params.at_mut(p).value.data_mut()[idx] = T::of(original.as_f64() - eps);
            let minus = eval(params);
            params.at_mut(p).value.data_mut()[idx] = original;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let ad = analytic[p].as_ref().map_or(0.0, |g| g[idx].as_f64());
            let denom = ad.abs().max(numeric.abs()).max(1e-8);
            let rel = (ad - numeric).abs() / denom;
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((params.at(p).name.clone(), idx));
                }
            }
        }
    }
    Ok(report)
}

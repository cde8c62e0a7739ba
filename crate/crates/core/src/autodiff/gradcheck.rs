//! Finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Backend, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Minimum number of coordinates probed (all of them if there are fewer).
pub const MIN_COORDS: usize = 32;

#[derive(Clone, Debug)]
pub struct Probe {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: Vec<Probe>,
}

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` builds the loss on a fresh tape from the parameter leaves. The
/// relative error of each probe uses `max(|analytic|, 1e-8)` as denominator.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64, coords: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-8..=1e-4).contains(&eps) {
        return Err(Error::config("eps", format!("{eps} outside [1e-8, 1e-4]")));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(&loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
    drop(tape);

    let total: usize = params.iter().map(Tensor::len).sum();
    let n = coords.max(MIN_COORDS).min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = sample(&mut rng, total, n).into_vec();
    picks.sort_unstable();

    let mut work = params.to_vec();
    let mut probes = Vec::with_capacity(n);
    for flat in picks {
        let (mut param, mut index) = (0, flat);
        while index >= params[param].len() {
            index -= params[param].len();
            param += 1;
        }
        let orig = work[param].data()[index];
        work[param].data_mut()[index] = orig + eps;
        let up = eval(&work)?;
        work[param].data_mut()[index] = orig - eps;
        let down = eval(&work)?;
        work[param].data_mut()[index] = orig;

        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[param].data()[index];
        let rel_error = (a - numeric).abs() / a.abs().max(1e-8);
        probes.push(Probe {
            param,
            index,
            analytic: a,
            numeric,
            rel_error,
        });
    }
    let max_rel_error = probes.iter().fold(0.0f64, |m, p| m.max(p.rel_error));
    Ok(GradCheckReport { max_rel_error, probes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_is_exact() {
        let x = Tensor::from_fn(1, 4, 4, |_, j, i| (j as f64) - 0.3 * i as f64);
        let c = Tensor::from_fn(1, 4, 4, |_, j, i| 0.1 * (i * j) as f64 + 1.0);
        let report = grad_check(
            |tape, v| {
                let cw = tape.constant(c.clone());
                let a = tape.mul(&v[0], &cw)?;
                let b = tape.mul(&a, &v[0])?;
                tape.sum(&b)
            },
            &[x],
            1e-5,
            32,
            0,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-9, "{}", report.max_rel_error);
        assert_eq!(report.probes.len(), 16);
    }

    #[test]
    fn eps_out_of_range_is_rejected() {
        let x = Tensor::scalar(1.0);
        assert!(grad_check(|t, v| t.sum(&v[0]), &[x], 1e-2, 1, 0).is_err());
    }
}

//! Finite-difference check of every recordable primitive.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, Backend, GradCheckReport, Tape, Var};
use crate::error::Result;
use crate::grid::Grid;
use crate::solver::poisson::PoissonSolver;
use crate::tensor::Tensor;

const N: usize = 6;

/// Values in `(-1, 1)` at least 0.02 away from the kinks of relu and of
/// a clamp to `[-0.5, 0.5]`.
fn smooth_random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| loop {
            let x: f64 = rng.random_range(-1.0..1.0);
            if x.abs() > 0.02 && (x.abs() - 0.5).abs() > 0.02 {
                break x;
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches")
}

/// Contracts `y` with fixed random weights so every output entry matters.
fn contract(t: &mut Tape, y: &Var, seed: u64) -> Result<Var> {
    let shape = t.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = t.constant(smooth_random(&mut rng, &shape));
    let p = t.mul(y, &w)?;
    t.sum(&p)
}

type Case = (
    &'static str,
    Vec<Vec<usize>>,
    Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>,
);

fn cases() -> Vec<Case> {
    let grid = Grid::square(N, 2.0 * PI).expect("valid grid");
    let (dx, dy) = (grid.dx(), grid.dy());
    let poisson = Arc::new(PoissonSolver::new(grid));
    let field = vec![2, N, N];
    let one = vec![1, N, N];
    vec![
        (
            "add",
            vec![field.clone(), field.clone()],
            Box::new(|t, v| t.add(&v[0], &v[1])),
        ),
        (
            "sub",
            vec![field.clone(), field.clone()],
            Box::new(|t, v| t.sub(&v[0], &v[1])),
        ),
        (
            "mul",
            vec![field.clone(), field.clone()],
            Box::new(|t, v| t.mul(&v[0], &v[1])),
        ),
        (
            "mul_broadcast",
            vec![field.clone(), one.clone()],
            Box::new(|t, v| t.mul(&v[0], &v[1])),
        ),
        ("scale", vec![field.clone()], Box::new(|t, v| t.scale(&v[0], -1.7))),
        (
            "affine",
            vec![field.clone()],
            Box::new(|t, v| t.affine(&v[0], 0.3, 2.0)),
        ),
        (
            "mul_scalar",
            vec![field.clone(), vec![1]],
            Box::new(|t, v| t.mul_scalar(&v[0], &v[1])),
        ),
        ("tanh", vec![field.clone()], Box::new(|t, v| t.tanh(&v[0]))),
        ("sigmoid", vec![field.clone()], Box::new(|t, v| t.sigmoid(&v[0]))),
        ("relu", vec![field.clone()], Box::new(|t, v| t.relu(&v[0]))),
        ("clamp", vec![field.clone()], Box::new(|t, v| t.clamp(&v[0], -0.5, 0.5))),
        ("square", vec![field.clone()], Box::new(|t, v| t.square(&v[0]))),
        ("sum", vec![field.clone()], Box::new(|t, v| t.sum(&v[0]))),
        (
            "conv2d_3x3",
            vec![field.clone(), vec![3, 2, 3, 3], vec![3]],
            Box::new(|t, v| t.conv2d(&v[0], &v[1], &v[2])),
        ),
        (
            "conv2d_1x1",
            vec![field.clone(), vec![3, 2, 1, 1], vec![3]],
            Box::new(|t, v| t.conv2d(&v[0], &v[1], &v[2])),
        ),
        ("shift", vec![field.clone()], Box::new(|t, v| t.shift(&v[0], 2, -1))),
        (
            "slice",
            vec![vec![3, N, N]],
            Box::new(|t, v| t.slice_channels(&v[0], 1, 2)),
        ),
        (
            "concat",
            vec![field.clone(), one.clone()],
            Box::new(|t, v| t.concat_channels(&[&v[0], &v[1]])),
        ),
        (
            // The right-hand side must have zero mean, so it is built as
            // a divergence.
            "poisson",
            vec![field.clone()],
            Box::new(move |t, v| {
                let d = t.divergence(&v[0], dx, dy)?;
                t.poisson(&d, &poisson)
            }),
        ),
        (
            "face_to_center",
            vec![field.clone()],
            Box::new(|t, v| t.face_to_center(&v[0])),
        ),
        (
            "center_to_face",
            vec![field.clone()],
            Box::new(|t, v| t.center_to_face(&v[0])),
        ),
        (
            "divergence",
            vec![field.clone()],
            Box::new(move |t, v| t.divergence(&v[0], dx, dy)),
        ),
        (
            "gradient",
            vec![one.clone()],
            Box::new(move |t, v| t.gradient(&v[0], dx, dy)),
        ),
        (
            "vorticity",
            vec![field],
            Box::new(move |t, v| t.vorticity(&v[0], dx, dy)),
        ),
    ]
}

/// Gradient check of every primitive on random inputs, each probed at all
/// coordinates. The primitive output is contracted with random weights.
pub fn check_primitives(eps: f64, seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cases()
        .into_iter()
        .enumerate()
        .map(|(k, (name, shapes, f))| {
            let params: Vec<Tensor> = shapes.iter().map(|s| smooth_random(&mut rng, s)).collect();
            let wseed = seed.wrapping_add(k as u64 + 1);
            let report = grad_check(
                |t, v| {
                    let y = f(t, v)?;
                    contract(t, &y, wseed)
                },
                &params,
                eps,
                usize::MAX,
                seed,
            )?;
            Ok((name, report))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes() {
        let reports = check_primitives(1e-6, 3).unwrap();
        assert_eq!(reports.len(), 24);
        for (name, r) in &reports {
            assert!(r.max_rel_error <= 1e-5, "{name}: {}", r.max_rel_error);
        }
    }
}

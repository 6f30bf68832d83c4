//! Central-difference gradient oracle.
//!
//! The checks here are the independent verification path for the tape: they
//! re-derive every gradient from forward evaluations only and compare against
//! what [`Graph::backward`] produced. Run at 64-bit; finite-difference
//! tolerances are unreachable at 32-bit.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::graph::{BnMode, BnRunning, Graph, Var};
use crate::tensor::Tensor;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error between an analytic and a central-difference derivative.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Check the gradient of a scalar-valued function of one tensor.
///
/// Returns the maximum relative error over all coordinates.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    grad_check_multi(|g, vars| f(g, vars[0]), std::slice::from_ref(x), h)
}

/// Check gradients of a scalar-valued function of several tensors.
pub fn grad_check_multi<F>(f: F, xs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    // analytic pass
    let mut graph = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|x| graph.leaf(x.clone(), true)).collect();
    let loss = f(&mut graph, &vars)?;
    if graph.value(loss).len() != 1 {
        return Err(Error::NonScalarLoss(graph.value(loss).len()));
    }
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(xs.iter())
        .map(|(&v, x)| {
            graph
                .grad(v)
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; x.len()])
        })
        .collect();

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone(), false)).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = xs.to_vec();
    for (i, x) in xs.iter().enumerate() {
        for j in 0..x.len() {
            let orig = x.data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(rel_err(analytic[i][j], numeric));
        }
    }
    Ok(worst)
}

/// One named check of the primitive-op suite.
pub struct OpCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
}

/// Run the central-difference oracle over every primitive op, `instances`
/// random instances each, and report the worst relative error per op.
pub fn primitive_gradcheck_suite(instances: usize, seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut results = Vec::new();

    // weighted-sum reducer so sign errors cannot cancel
    fn wsum(g: &mut Graph<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
        let w = g.constant(weights.clone());
        let prod = g.mul(out, w)?;
        g.sum(prod)
    }

    fn rand_tensor(rng: &mut StdRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor::new(shape.to_vec(), data).expect("finite random tensor")
    }

    // values bounded away from zero, for ops with a kink there
    fn rand_tensor_off_zero(rng: &mut StdRng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                sign * rng.random_range(0.05..2.0)
            })
            .collect();
        Tensor::new(shape.to_vec(), data).expect("finite random tensor")
    }

    let mut check = |name: &'static str,
                     rng: &mut StdRng,
                     mut instance: Box<dyn FnMut(&mut StdRng) -> Result<f64>>|
     -> Result<()> {
        let mut worst = 0.0f64;
        for _ in 0..instances {
            worst = worst.max(instance(rng)?);
        }
        results.push(OpCheck {
            name,
            max_rel_err: worst,
        });
        Ok(())
    };

    check(
        "add",
        &mut rng,
        Box::new(|rng| {
            let a = rand_tensor(rng, &[2, 3], -2.0, 2.0);
            let b = rand_tensor(rng, &[2, 3], -2.0, 2.0);
            let w = rand_tensor(rng, &[2, 3], -1.0, 1.0);
            grad_check_multi(
                |g, v| {
                    let s = g.add(v[0], v[1])?;
                    wsum(g, s, &w)
                },
                &[a, b],
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "sub",
        &mut rng,
        Box::new(|rng| {
            let a = rand_tensor(rng, &[4], -2.0, 2.0);
            let b = rand_tensor(rng, &[4], -2.0, 2.0);
            let w = rand_tensor(rng, &[4], -1.0, 1.0);
            grad_check_multi(
                |g, v| {
                    let s = g.sub(v[0], v[1])?;
                    wsum(g, s, &w)
                },
                &[a, b],
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "mul",
        &mut rng,
        Box::new(|rng| {
            let a = rand_tensor(rng, &[3, 2], -2.0, 2.0);
            let b = rand_tensor(rng, &[3, 2], -2.0, 2.0);
            let w = rand_tensor(rng, &[3, 2], -1.0, 1.0);
            grad_check_multi(
                |g, v| {
                    let s = g.mul(v[0], v[1])?;
                    wsum(g, s, &w)
                },
                &[a, b],
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "scale",
        &mut rng,
        Box::new(|rng| {
            let a = rand_tensor(rng, &[5], -2.0, 2.0);
            let w = rand_tensor(rng, &[5], -1.0, 1.0);
            let c = rng.random_range(-2.0..2.0);
            grad_check(
                |g, v| {
                    let s = g.scale(v, c)?;
                    wsum(g, s, &w)
                },
                &a,
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "shift",
        &mut rng,
        Box::new(|rng| {
            let a = rand_tensor(rng, &[5], -2.0, 2.0);
            let w = rand_tensor(rng, &[5], -1.0, 1.0);
            let c = rng.random_range(-2.0..2.0);
            grad_check(
                |g, v| {
                    let s = g.shift(v, c)?;
                    wsum(g, s, &w)
                },
                &a,
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "matmul",
        &mut rng,
        Box::new(|rng| {
            let a = rand_tensor(rng, &[3, 4], -1.5, 1.5);
            let b = rand_tensor(rng, &[4, 2], -1.5, 1.5);
            let w = rand_tensor(rng, &[3, 2], -1.0, 1.0);
            grad_check_multi(
                |g, v| {
                    let s = g.matmul(v[0], v[1])?;
                    wsum(g, s, &w)
                },
                &[a, b],
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "conv2d_stride1",
        &mut rng,
        Box::new(|rng| {
            let x = rand_tensor(rng, &[2, 2, 5, 5], -1.5, 1.5);
            let k = rand_tensor(rng, &[3, 2, 3, 3], -1.0, 1.0);
            let b = rand_tensor(rng, &[3], -0.5, 0.5);
            let w = rand_tensor(rng, &[2, 3, 5, 5], -1.0, 1.0);
            grad_check_multi(
                |g, v| {
                    let s = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                    wsum(g, s, &w)
                },
                &[x, k, b],
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "conv2d_stride2",
        &mut rng,
        Box::new(|rng| {
            let x = rand_tensor(rng, &[1, 2, 6, 6], -1.5, 1.5);
            let k = rand_tensor(rng, &[2, 2, 3, 3], -1.0, 1.0);
            let b = rand_tensor(rng, &[2], -0.5, 0.5);
            let w = rand_tensor(rng, &[1, 2, 3, 3], -1.0, 1.0);
            grad_check_multi(
                |g, v| {
                    let s = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
                    wsum(g, s, &w)
                },
                &[x, k, b],
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "upsample2x",
        &mut rng,
        Box::new(|rng| {
            let x = rand_tensor(rng, &[2, 2, 3, 3], -2.0, 2.0);
            let w = rand_tensor(rng, &[2, 2, 6, 6], -1.0, 1.0);
            grad_check(
                |g, v| {
                    let s = g.upsample2x(v)?;
                    wsum(g, s, &w)
                },
                &x,
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "relu",
        &mut rng,
        Box::new(|rng| {
            let x = rand_tensor_off_zero(rng, &[6]);
            let w = rand_tensor(rng, &[6], -1.0, 1.0);
            grad_check(
                |g, v| {
                    let s = g.relu(v)?;
                    wsum(g, s, &w)
                },
                &x,
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "silu",
        &mut rng,
        Box::new(|rng| {
            let x = rand_tensor(rng, &[6], -3.0, 3.0);
            let w = rand_tensor(rng, &[6], -1.0, 1.0);
            grad_check(
                |g, v| {
                    let s = g.silu(v)?;
                    wsum(g, s, &w)
                },
                &x,
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "batch_norm_train",
        &mut rng,
        Box::new(|rng| {
            let x = rand_tensor(rng, &[3, 2, 2, 2], -2.0, 2.0);
            let gamma = rand_tensor(rng, &[2], 0.5, 1.5);
            let beta = rand_tensor(rng, &[2], -0.5, 0.5);
            let w = rand_tensor(rng, &[3, 2, 2, 2], -1.0, 1.0);
            grad_check_multi(
                |g, v| {
                    let s = g.batch_norm(v[0], v[1], v[2], BnMode::Train, 1e-5, BnRunning::None)?;
                    wsum(g, s, &w)
                },
                &[x, gamma, beta],
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "batch_norm_eval",
        &mut rng,
        Box::new(|rng| {
            let x = rand_tensor(rng, &[2, 3, 2, 2], -2.0, 2.0);
            let gamma = rand_tensor(rng, &[3], 0.5, 1.5);
            let beta = rand_tensor(rng, &[3], -0.5, 0.5);
            let rm = rand_tensor(rng, &[3], -0.5, 0.5);
            let rv = rand_tensor(rng, &[3], 0.5, 1.5);
            let w = rand_tensor(rng, &[2, 3, 2, 2], -1.0, 1.0);
            grad_check_multi(
                |g, v| {
                    let s = g.batch_norm(
                        v[0],
                        v[1],
                        v[2],
                        BnMode::Eval,
                        1e-5,
                        BnRunning::Frozen { mean: &rm, var: &rv },
                    )?;
                    wsum(g, s, &w)
                },
                &[x, gamma, beta],
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "embedding",
        &mut rng,
        Box::new(|rng| {
            let table = rand_tensor(rng, &[5, 3], -1.0, 1.0);
            let idx: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
            let w = rand_tensor(rng, &[4, 3], -1.0, 1.0);
            grad_check(
                |g, v| {
                    let s = g.embedding(v, &idx)?;
                    wsum(g, s, &w)
                },
                &table,
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "concat_channels",
        &mut rng,
        Box::new(|rng| {
            let a = rand_tensor(rng, &[2, 2, 2, 2], -1.0, 1.0);
            let b = rand_tensor(rng, &[2, 3, 2, 2], -1.0, 1.0);
            let w = rand_tensor(rng, &[2, 5, 2, 2], -1.0, 1.0);
            grad_check_multi(
                |g, v| {
                    let s = g.concat_channels(v[0], v[1])?;
                    wsum(g, s, &w)
                },
                &[a, b],
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "sum",
        &mut rng,
        Box::new(|rng| {
            let x = rand_tensor(rng, &[3, 3], -2.0, 2.0);
            grad_check(|g, v| g.sum(v), &x, DEFAULT_STEP)
        }),
    )?;

    check(
        "mean",
        &mut rng,
        Box::new(|rng| {
            let x = rand_tensor(rng, &[7], -2.0, 2.0);
            grad_check(|g, v| g.mean(v), &x, DEFAULT_STEP)
        }),
    )?;

    check(
        "sum_rows",
        &mut rng,
        Box::new(|rng| {
            let x = rand_tensor(rng, &[3, 4], -2.0, 2.0);
            let w = rand_tensor(rng, &[3], -1.0, 1.0);
            grad_check(
                |g, v| {
                    let s = g.sum_rows(v)?;
                    wsum(g, s, &w)
                },
                &x,
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "sq_diff",
        &mut rng,
        Box::new(|rng| {
            let a = rand_tensor(rng, &[2, 3], -2.0, 2.0);
            let b = rand_tensor(rng, &[2, 3], -2.0, 2.0);
            grad_check_multi(|g, v| g.sq_diff(v[0], v[1]), &[a, b], DEFAULT_STEP)
        }),
    )?;

    check(
        "log_sum_exp",
        &mut rng,
        Box::new(|rng| {
            let x = rand_tensor(rng, &[3, 4], -2.0, 2.0);
            let w = rand_tensor(rng, &[3], -1.0, 1.0);
            grad_check(
                |g, v| {
                    let s = g.log_sum_exp(v)?;
                    wsum(g, s, &w)
                },
                &x,
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "pick",
        &mut rng,
        Box::new(|rng| {
            let x = rand_tensor(rng, &[3, 4], -2.0, 2.0);
            let idx: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
            let w = rand_tensor(rng, &[3], -1.0, 1.0);
            grad_check(
                |g, v| {
                    let s = g.pick(v, &idx)?;
                    wsum(g, s, &w)
                },
                &x,
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "zscore",
        &mut rng,
        Box::new(|rng| {
            // rows spread out so sigma stays well away from zero
            let x = rand_tensor(rng, &[3, 4], -3.0, 3.0);
            let w = rand_tensor(rng, &[3, 4], -1.0, 1.0);
            grad_check(
                |g, v| {
                    let s = g.zscore(v)?;
                    wsum(g, s, &w)
                },
                &x,
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "reshape",
        &mut rng,
        Box::new(|rng| {
            let x = rand_tensor(rng, &[2, 6], -2.0, 2.0);
            let w = rand_tensor(rng, &[3, 4], -1.0, 1.0);
            grad_check(
                |g, v| {
                    let s = g.reshape(v, vec![3, 4])?;
                    wsum(g, s, &w)
                },
                &x,
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "repeat_rows",
        &mut rng,
        Box::new(|rng| {
            let x = rand_tensor(rng, &[2, 3], -2.0, 2.0);
            let w = rand_tensor(rng, &[6, 3], -1.0, 1.0);
            grad_check(
                |g, v| {
                    let s = g.repeat_rows(v, 3)?;
                    wsum(g, s, &w)
                },
                &x,
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "add_chan_bias",
        &mut rng,
        Box::new(|rng| {
            let x = rand_tensor(rng, &[2, 3, 2, 2], -2.0, 2.0);
            let b = rand_tensor(rng, &[2, 3], -1.0, 1.0);
            let w = rand_tensor(rng, &[2, 3, 2, 2], -1.0, 1.0);
            grad_check_multi(
                |g, v| {
                    let s = g.add_chan_bias(v[0], v[1])?;
                    wsum(g, s, &w)
                },
                &[x, b],
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "add_bias",
        &mut rng,
        Box::new(|rng| {
            let x = rand_tensor(rng, &[3, 4], -2.0, 2.0);
            let b = rand_tensor(rng, &[4], -1.0, 1.0);
            let w = rand_tensor(rng, &[3, 4], -1.0, 1.0);
            grad_check_multi(
                |g, v| {
                    let s = g.add_bias(v[0], v[1])?;
                    wsum(g, s, &w)
                },
                &[x, b],
                DEFAULT_STEP,
            )
        }),
    )?;

    check(
        "stack_scalars",
        &mut rng,
        Box::new(|rng| {
            let a = Tensor::scalar(rng.random_range(-2.0..2.0));
            let b = Tensor::scalar(rng.random_range(-2.0..2.0));
            let c = Tensor::scalar(rng.random_range(-2.0..2.0));
            let w = rand_tensor(rng, &[3], -1.0, 1.0);
            grad_check_multi(
                |g, v| {
                    let s = g.stack_scalars(v)?;
                    wsum(g, s, &w)
                },
                &[a, b, c],
                DEFAULT_STEP,
            )
        }),
    )?;

    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_matches_analytic() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let err = grad_check(
            |g, v| {
                let sq = g.mul(v, v)?;
                g.sum(sq)
            },
            &x,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::new(vec![3], vec![0.3, -0.7, 1.1]).unwrap();
        let err = grad_check(
            |g, v| {
                let zero = g.scale(v, 0.0)?;
                g.sum(zero)
            },
            &x,
            DEFAULT_STEP,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = Tensor::new(vec![3], vec![0.3, -0.7, 1.1]).unwrap();
        let res = grad_check(|g, v| g.relu(v), &x, DEFAULT_STEP);
        assert!(matches!(res, Err(Error::NonScalarLoss(3))));
    }
}

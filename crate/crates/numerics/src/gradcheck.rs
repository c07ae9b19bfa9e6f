//! Central finite-difference gradient checking at 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{Gradients, ParamStore};
use crate::tensor::Tensor;

const STEP: f64 = 1e-6;

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or the absolute difference when both are ~0.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

/// Compares autodiff gradients of a scalar function of `inputs` against central
/// differences. Returns the worst relative error over all inputs.
pub fn check<F>(inputs: &[Tensor<f64>], f: F) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let empty = ParamStore::new();
    let mut g = Graph::new(&empty);
    let vars = inputs
        .iter()
        .map(|t| g.input(t))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut g, &vars)?;
    let mut sink = Gradients::zeros_like(&empty);
    g.backward(loss, &mut sink)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or(vec![0.0; t.len()]))
        .collect();

    let eval = |ins: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new(&empty);
        let vars = ins.iter().map(|t| g.constant(t)).collect::<Result<Vec<_>>>()?;
        let l = f(&mut g, &vars)?;
        Ok(g.value(l)[0])
    };

    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; t.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            *slot = (eval(&plus)? - eval(&minus)?) / (2.0 * STEP);
        }
        worst = worst.max(relative_error(&analytic[i], &numeric));
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct OpReport {
    pub op: &'static str,
    pub trials: usize,
    pub max_relative_error: f64,
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(vec![rows, cols], |_| rng.random_range(-1.0..1.0))
}

/// Random values bounded away from zero so ReLU stays differentiable under the probe step.
fn random_off_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(vec![rows, cols], |_| {
        let m: f64 = rng.random_range(0.05..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Projects a matrix output onto a fixed random direction so every output element
/// contributes to the scalar being differentiated.
fn project(g: &mut Graph<'_, f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(weights)?;
    let p = g.mul(out, w)?;
    g.sum(p)
}

/// Runs the finite-difference check for every differentiable op on `trials`
/// random shapes each.
pub fn op_suite(trials: usize, seed: u64) -> Result<Vec<OpReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    let mut run = |op: &'static str,
                   rng: &mut ChaCha8Rng,
                   case: &mut dyn FnMut(&mut ChaCha8Rng) -> Result<f64>|
     -> Result<()> {
        let mut worst = 0.0f64;
        for _ in 0..trials {
            worst = worst.max(case(rng)?);
        }
        reports.push(OpReport {
            op,
            trials,
            max_relative_error: worst,
        });
        Ok(())
    };

    run("matmul", &mut rng, &mut |rng| {
        let (n, k, m) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
        let w = random(rng, n, m);
        check(&[random(rng, n, k), random(rng, k, m)], |g, v| {
            let o = g.matmul(v[0], v[1])?;
            project(g, o, &w)
        })
    })?;
    run("matmul_nt", &mut rng, &mut |rng| {
        let (n, k, m) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
        let w = random(rng, n, m);
        check(&[random(rng, n, k), random(rng, m, k)], |g, v| {
            let o = g.matmul_nt(v[0], v[1])?;
            project(g, o, &w)
        })
    })?;
    run("add", &mut rng, &mut |rng| {
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
        let w = random(rng, r, c);
        check(&[random(rng, r, c), random(rng, r, c)], |g, v| {
            let o = g.add(v[0], v[1])?;
            project(g, o, &w)
        })
    })?;
    run("add_bias", &mut rng, &mut |rng| {
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
        let w = random(rng, r, c);
        check(&[random(rng, r, c), random(rng, 1, c)], |g, v| {
            let o = g.add_bias(v[0], v[1])?;
            project(g, o, &w)
        })
    })?;
    run("mul", &mut rng, &mut |rng| {
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
        let w = random(rng, r, c);
        check(&[random(rng, r, c), random(rng, r, c)], |g, v| {
            let o = g.mul(v[0], v[1])?;
            project(g, o, &w)
        })
    })?;
    run("scale", &mut rng, &mut |rng| {
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
        let s = rng.random_range(-2.0..2.0);
        let w = random(rng, r, c);
        check(&[random(rng, r, c)], |g, v| {
            let o = g.scale(v[0], s)?;
            project(g, o, &w)
        })
    })?;
    run("relu", &mut rng, &mut |rng| {
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
        let w = random(rng, r, c);
        check(&[random_off_zero(rng, r, c)], |g, v| {
            let o = g.relu(v[0])?;
            project(g, o, &w)
        })
    })?;
    run("softmax", &mut rng, &mut |rng| {
        let (r, c) = (rng.random_range(1..5), rng.random_range(2..6));
        let w = random(rng, r, c);
        check(&[random(rng, r, c)], |g, v| {
            let o = g.softmax(v[0])?;
            project(g, o, &w)
        })
    })?;
    run("layer_norm", &mut rng, &mut |rng| {
        let (r, c) = (rng.random_range(1..5), rng.random_range(2..7));
        let w = random(rng, r, c);
        check(
            &[random(rng, r, c), random(rng, 1, c), random(rng, 1, c)],
            |g, v| {
                let o = g.layer_norm(v[0], v[1], v[2])?;
                project(g, o, &w)
            },
        )
    })?;
    run("embedding", &mut rng, &mut |rng| {
        let (vocab, d, n) = (rng.random_range(2..7), rng.random_range(1..5), rng.random_range(1..6));
        let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..vocab)).collect();
        let w = random(rng, n, d);
        check(&[random(rng, vocab, d)], |g, v| {
            let o = g.embedding(v[0], &ids)?;
            project(g, o, &w)
        })
    })?;
    run("cross_entropy", &mut rng, &mut |rng| {
        let (n, vocab) = (rng.random_range(1..6), rng.random_range(2..7));
        let mut targets: Vec<Option<usize>> = (0..n)
            .map(|_| rng.random_bool(0.75).then(|| rng.random_range(0..vocab)))
            .collect();
        targets[0] = Some(rng.random_range(0..vocab));
        check(&[random(rng, n, vocab)], |g, v| g.cross_entropy(v[0], &targets))
    })?;
    run("dropout", &mut rng, &mut |rng| {
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
        let mask_seed: u64 = rng.random();
        let w = random(rng, r, c);
        check(&[random(rng, r, c)], |g, v| {
            let mut mrng = ChaCha8Rng::seed_from_u64(mask_seed);
            let o = g.dropout(v[0], 0.3, &mut mrng)?;
            project(g, o, &w)
        })
    })?;
    run("attention", &mut rng, &mut |rng| {
        let heads = rng.random_range(1..3);
        let d = heads * rng.random_range(1..4);
        let n = rng.random_range(1..5);
        let causal = rng.random::<bool>();
        let m = if causal { n + rng.random_range(0..2) } else { rng.random_range(1..5) };
        let w = random(rng, n, d);
        check(
            &[random(rng, n, d), random(rng, m, d), random(rng, m, d)],
            |g, v| {
                let o = g.attention(v[0], v[1], v[2], heads, causal)?;
                project(g, o, &w)
            },
        )
    })?;
    run("sum", &mut rng, &mut |rng| {
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
        check(&[random(rng, r, c)], |g, v| g.sum(v[0]))
    })?;
    Ok(reports)
}

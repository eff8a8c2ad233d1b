//! Central-difference verification of tape gradients.
//!
//! The checker runs the analytic backward pass once, then re-evaluates the
//! scalar loss twice per input element with that element nudged by `+eps`
//! and `-eps`. Keeping losses around O(1) (mean rather than sum reductions)
//! keeps the difference quotient well inside f64 accuracy.

use super::{Tape, Tensor, TensorError, Var};

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Worst relative disagreement across all checked elements.
    pub max_rel_err: f64,
    /// Number of scalar elements checked.
    pub checked: usize,
}

/// Relative error with an absolute floor so that near-zero pairs compare
/// absolutely instead of blowing up.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Compares analytic gradients of `build`'s scalar output against central
/// differences over every element of every input.
///
/// `build` must be a pure function of the tape and the leased inputs: it is
/// re-invoked many times on fresh tapes.
pub fn check<F>(inputs: &[Tensor], eps: f64, build: F) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t)).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.scalar(loss))
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    for i in 0..inputs.len() {
        for e in 0..inputs[i].numel() {
            let orig = work[i].data()[e];
            work[i].data_mut()[e] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;

            let fd = (plus - minus) / (2.0 * eps);
            max_rel_err = max_rel_err.max(rel_err(analytic[i][e], fd));
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const PRIMITIVE_TOL: f64 = 1e-6;
    const EPS: f64 = 1e-5;

    /// Uniform values in [lo, hi] from a fixed seed.
    fn filled(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Values bounded away from zero, for kinked ops like relu.
    fn filled_off_zero(shape: &[usize], seed: u64) -> Tensor {
        let mut t = filled(shape, seed, 0.2, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51ce);
        for v in t.data_mut() {
            if rng.random_range(0..2) == 1 {
                *v = -*v;
            }
        }
        t
    }

    fn assert_passes<F>(inputs: &[Tensor], tol: f64, build: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
    {
        let report = check(inputs, EPS, build).unwrap();
        assert!(
            report.max_rel_err < tol,
            "max relative error {} over {} elements",
            report.max_rel_err,
            report.checked
        );
    }

    #[test]
    fn elementwise_ops() {
        let a = filled(&[3, 4], 1, -1.0, 1.0);
        let b = filled(&[3, 4], 2, -1.0, 1.0);
        assert_passes(&[a.clone(), b.clone()], PRIMITIVE_TOL, |t, v| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(s, v[1])?;
            let p = t.mul(d, v[1])?;
            let sc = t.scale(p, -1.7)?;
            t.reduce_mean(sc)
        });
    }

    #[test]
    fn matmul_chain() {
        let a = filled(&[4, 3], 3, -1.0, 1.0);
        let b = filled(&[3, 5], 4, -1.0, 1.0);
        assert_passes(&[a, b], PRIMITIVE_TOL, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            t.reduce_mean(y)
        });
    }

    #[test]
    fn activations() {
        let x = filled_off_zero(&[17], 5);
        assert_passes(&[x.clone()], PRIMITIVE_TOL, |t, v| {
            let y = t.relu(v[0])?;
            t.reduce_mean(y)
        });
        assert_passes(&[x.clone()], PRIMITIVE_TOL, |t, v| {
            let y = t.sigmoid(v[0])?;
            t.reduce_mean(y)
        });
        assert_passes(&[x], PRIMITIVE_TOL, |t, v| {
            let y = t.tanh(v[0])?;
            t.reduce_mean(y)
        });
    }

    #[test]
    fn shape_ops() {
        let x = filled(&[4, 6], 6, -1.0, 1.0);
        assert_passes(&[x], PRIMITIVE_TOL, |t, v| {
            let r = t.reshape(v[0], &[8, 3])?;
            let top = t.slice_rows(r, 0, 3)?;
            let bottom = t.slice_rows(r, 3, 5)?;
            let glued = t.concat_rows(&[bottom, top])?;
            let sq = t.mul(glued, glued)?;
            t.reduce_mean(sq)
        });
    }

    #[test]
    fn scale_op() {
        let x = filled(&[9], 17, -1.0, 1.0);
        assert_passes(&[x], PRIMITIVE_TOL, |t, v| {
            let y = t.scale(v[0], 2.5)?;
            t.reduce_mean(y)
        });
    }

    #[test]
    fn reductions() {
        let x = filled(&[7], 7, -1.0, 1.0);
        assert_passes(&[x.clone()], PRIMITIVE_TOL, |t, v| {
            let s = t.reduce_sum(v[0])?;
            t.scale(s, 0.25)
        });
        assert_passes(&[x], PRIMITIVE_TOL, |t, v| t.reduce_mean(v[0]));
    }

    #[test]
    fn conv_all_three_gradients() {
        let x = filled(&[2, 6, 6], 8, -1.0, 1.0);
        let w = filled(&[3, 2, 3, 3], 9, -0.5, 0.5);
        let b = filled(&[3], 10, -0.2, 0.2);
        assert_passes(&[x, w, b], PRIMITIVE_TOL, |t, v| {
            let y = t.conv2d(v[0], v[1], v[2])?;
            let sq = t.mul(y, y)?;
            t.reduce_mean(sq)
        });
    }

    #[test]
    fn maxpool_away_from_ties() {
        // Distinct, well-separated values keep the argmax stable under eps.
        let mut data = Vec::new();
        for i in 0..(2 * 6 * 6) {
            data.push(((i * 37) % 72) as f64 * 0.1);
        }
        let x = Tensor::from_vec(&[2, 6, 6], data).unwrap();
        assert_passes(&[x], PRIMITIVE_TOL, |t, v| {
            let y = t.maxpool2(v[0])?;
            t.reduce_mean(y)
        });
    }

    #[test]
    fn gate_shaped_composite() {
        // The recurrent cell wiring: sigmoid/tanh gates over a shared affine
        // map, elementwise blend, squash.
        let w = filled(&[8, 5], 11, -0.5, 0.5);
        let x = filled(&[5, 1], 12, -1.0, 1.0);
        let b = filled(&[8, 1], 13, -0.3, 0.3);
        let c = filled(&[2, 1], 14, -0.5, 0.5);
        assert_passes(&[w, x, b, c], PRIMITIVE_TOL, |t, v| {
            let za = t.matmul(v[0], v[1])?;
            let z = t.add(za, v[2])?;
            let zi = t.slice_rows(z, 0, 2)?;
            let zf = t.slice_rows(z, 2, 2)?;
            let zg = t.slice_rows(z, 4, 2)?;
            let zo = t.slice_rows(z, 6, 2)?;
            let i = t.sigmoid(zi)?;
            let f = t.sigmoid(zf)?;
            let g = t.tanh(zg)?;
            let o = t.sigmoid(zo)?;
            let keep = t.mul(f, v[3])?;
            let write = t.mul(i, g)?;
            let c_new = t.add(keep, write)?;
            let squash = t.tanh(c_new)?;
            let h = t.mul(o, squash)?;
            let sq = t.mul(h, h)?;
            t.reduce_mean(sq)
        });
    }

    #[test]
    fn unused_input_reports_zero_gradient() {
        let a = filled(&[3], 15, -1.0, 1.0);
        let b = filled(&[3], 16, -1.0, 1.0);
        let report = check(&[a, b], EPS, |t, v| t.reduce_mean(v[0])).unwrap();
        assert!(report.max_rel_err < PRIMITIVE_TOL);
        assert_eq!(report.checked, 6);
    }
}

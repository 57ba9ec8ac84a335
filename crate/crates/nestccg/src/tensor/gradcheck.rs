//! Central-difference validation of analytic gradients.

use crate::tensor::matrix::Parameter;

/// Outcome of a finite-difference sweep over a parameter set.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (parameter index, flat coordinate) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// Compares the gradients already accumulated in `params[i].grad` against
/// central differences of `f`. `f` must re-evaluate the scalar objective
/// from the current parameter values and must not touch the grads.
///
/// The error of a coordinate is |analytic - numeric| / max(1, |analytic|,
/// |numeric|), so near-zero gradients are judged by absolute error.
pub fn grad_check<F>(mut f: F, params: &mut [Parameter], h: f64, tol: f64) -> GradCheckReport
where
    F: FnMut(&[Parameter]) -> f64,
{
    let mut max_rel_err = 0.0_f64;
    let mut worst = None;
    let mut coords = 0;
    for pi in 0..params.len() {
        for ci in 0..params[pi].value.data().len() {
            let orig = params[pi].value.data()[ci];

            params[pi].value.data_mut()[ci] = orig + h;
            let plus = f(params);
            params[pi].value.data_mut()[ci] = orig - h;
            let minus = f(params);
            params[pi].value.data_mut()[ci] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let analytic = params[pi].grad.data()[ci];
            let rel = (analytic - numeric).abs() / 1.0_f64.max(analytic.abs()).max(numeric.abs());
            coords += 1;
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = Some((pi, ci));
            }
        }
    }
    GradCheckReport {
        max_rel_err,
        worst,
        coords_checked: coords,
        tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::matrix::Matrix;
    use crate::tensor::tape::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for v in m.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        m
    }

    #[test]
    fn linear_function_has_exact_gradient() {
        // f(W) = sum(W): analytic gradient is all-ones.
        let mut params = vec![Parameter::new(Matrix::from_rows(&[
            vec![0.3, -1.2],
            vec![2.0, 0.0],
        ]))];
        params[0].grad = Matrix::filled(2, 2, 1.0);
        let report = grad_check(
            |p| p[0].value.data().iter().sum(),
            &mut params,
            1e-5,
            1e-9,
        );
        assert!(report.passed(), "rel err {}", report.max_rel_err);
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        // One-layer softmax over a random 4x3 input.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_matrix(4, 3, &mut rng);
        let w = random_matrix(3, 3, &mut rng);
        let targets = vec![0, 2, 1, 1];

        let loss_of = |w: &Matrix| {
            let mut tape = Tape::new();
            let xid = tape.input(x.clone());
            let wid = tape.param(0, w);
            let logits = tape.matmul(xid, wid);
            let loss = tape.cross_entropy_mean_rows(logits, targets.clone());
            (tape, loss)
        };

        let mut params = vec![Parameter::new(w)];
        let (mut tape, loss) = loss_of(&params[0].value);
        tape.backward(loss);
        params[0].grad = tape.param_grads()[0].1.clone();

        let report = grad_check(
            |p| {
                let (tape, loss) = loss_of(&p[0].value);
                tape.scalar(loss)
            },
            &mut params,
            1e-5,
            1e-6,
        );
        assert!(report.passed(), "rel err {}", report.max_rel_err);
    }

    #[test]
    fn relu_chain_gradient_away_from_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        loop {
            let x = random_matrix(3, 4, &mut rng);
            let w = random_matrix(4, 4, &mut rng);
            let build = |w: &Matrix| {
                let mut tape = Tape::new();
                let xid = tape.input(x.clone());
                let wid = tape.param(0, w);
                let pre = tape.matmul(xid, wid);
                let act = tape.relu(pre);
                let loss = tape.cross_entropy_mean_rows(act, vec![0, 1, 2]);
                (tape, loss)
            };
            let mut params = vec![Parameter::new(w)];
            let (mut tape, loss) = build(&params[0].value);
            if tape.min_relu_input_magnitude() <= 1e-3 {
                continue; // resample away from the kink
            }
            tape.backward(loss);
            params[0].grad = tape.param_grads()[0].1.clone();
            let report = grad_check(
                |p| {
                    let (tape, loss) = build(&p[0].value);
                    tape.scalar(loss)
                },
                &mut params,
                1e-5,
                1e-5,
            );
            assert!(report.passed(), "rel err {}", report.max_rel_err);
            break;
        }
    }

    #[test]
    fn every_tape_op_passes_gradcheck() {
        // Chain exercising add, add_row_vec, transpose, scale, hadamard,
        // layer norm, masked softmax and select_rows in a single scalar
        // objective.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let table = random_matrix(5, 4, &mut rng);
        let w = random_matrix(4, 4, &mut rng);
        let bias = random_matrix(1, 4, &mut rng);
        let gain = random_matrix(1, 4, &mut rng);
        let mask = Matrix::from_rows(&[
            vec![1.0, 1.0, 0.0, 1.0],
            vec![0.0, 1.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0, 0.0],
        ]);
        let scaler = random_matrix(3, 4, &mut rng);
        let indices = vec![4, 0, 2];
        let targets = vec![1, 3, 0];

        let build = |p: &[Parameter]| {
            let mut tape = Tape::new();
            let t = tape.param(0, &p[0].value);
            let w = tape.param(1, &p[1].value);
            let b = tape.param(2, &p[2].value);
            let g = tape.param(3, &p[3].value);
            let h0 = tape.select_rows(t, indices.clone());
            let wt = tape.transpose(w);
            let lin = tape.matmul(h0, wt);
            let lin = tape.add_row_vec(lin, b);
            let mixed = tape.add(lin, h0);
            let mixed = tape.scale(mixed, 0.7);
            let mixed = tape.hadamard_const(mixed, scaler.clone());
            let normed = tape.layer_norm_rows(mixed, g, b, 1e-5);
            let probs = tape.masked_softmax_rows(normed, mask.clone());
            let loss = tape.cross_entropy_mean_rows(probs, targets.clone());
            (tape, loss)
        };

        let mut params = vec![
            Parameter::new(table),
            Parameter::new(w),
            Parameter::new(bias),
            Parameter::new(gain),
        ];
        let (mut tape, loss) = build(&params);
        tape.backward(loss);
        for (slot, grad) in tape.param_grads() {
            params[slot].grad = grad;
        }
        let report = grad_check(
            |p| {
                let (tape, loss) = build(p);
                tape.scalar(loss)
            },
            &mut params,
            1e-5,
            1e-4,
        );
        assert!(
            report.passed(),
            "rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
}

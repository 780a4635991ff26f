//! Central finite-difference checks against reverse-mode gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct FdOptions {
    pub step: f64,
    pub tol: f64,
    /// Coordinates whose perturbation by this much flips any ReLU, max route,
    /// sampling cell or loss branch are skipped.
    pub kink_radius: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Check only this many randomly chosen coordinates.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            step: 1e-4,
            tol: 1e-4,
            kink_radius: 1e-3,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    pub pass: bool,
}

/// Compares the reverse-mode gradient of `f` at `input` with central
/// differences `(f(x+h) - f(x-h)) / 2h`, coordinate by coordinate.
///
/// Non-scalar outputs are reduced with a fixed random projection so every
/// output component takes part.
pub fn finite_diff_check<F>(f: F, input: &Tensor, opts: &FdOptions) -> Result<FdReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut weights: Option<Vec<f64>> = None;

    let mut eval = |x: &Tensor, want_grad: bool| -> Result<(f64, u64, Option<Vec<f64>>)> {
        let mut tape = Tape::with_branch_tracking();
        let xv = tape.leaf(x.clone(), true);
        let y = f(&mut tape, xv)?;
        let n = tape.value(y).numel();
        let loss = if n == 1 {
            y
        } else {
            let w = weights
                .get_or_insert_with(|| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .clone();
            tape.weighted_sum(y, w)?
        };
        let value = tape.value(loss).data()[0];
        let sig = tape.branch_signature();
        let grad = if want_grad {
            tape.backward(loss)?;
            Some(tape.grad_tensor(xv).into_data())
        } else {
            None
        };
        Ok((value, sig, grad))
    };

    let (_, base_sig, grad) = eval(input, true)?;
    let grad = grad.expect("requested");
    let coords: Vec<usize> = match opts.max_coords {
        Some(k) if k < input.numel() => {
            let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed), input.numel(), k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..input.numel()).collect(),
    };

    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        pass: true,
    };
    let mut probe = input.clone();
    for i in coords {
        let x0 = input.data()[i];
        let mut at = |v: f64| -> Result<(f64, u64)> {
            probe.data_mut()[i] = v;
            let (val, sig, _) = eval(&probe, false)?;
            Ok((val, sig))
        };
        let (_, s_hi) = at(x0 + opts.kink_radius)?;
        let (_, s_lo) = at(x0 - opts.kink_radius)?;
        if s_hi != base_sig || s_lo != base_sig {
            report.skipped += 1;
            probe.data_mut()[i] = x0;
            continue;
        }
        let (f_hi, _) = at(x0 + opts.step)?;
        let (f_lo, _) = at(x0 - opts.step)?;
        probe.data_mut()[i] = x0;
        let numeric = (f_hi - f_lo) / (2.0 * opts.step);
        let analytic = grad[i];
        let denom = analytic.abs().max(numeric.abs()).max(opts.floor);
        let rel = (analytic - numeric).abs() / denom;
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    report.pass = report.max_rel_error <= opts.tol;
    Ok(report)
}

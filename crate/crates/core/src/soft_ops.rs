//! Differentiable stand-ins for the hard operators of the settlement rules.
//!
//! All blocks act element-wise on latent vectors (slices of [`Var`] of a
//! common length `h`). The condition block is the exception: it mixes whole
//! branches with one scalar softmax weight per branch.

use crate::autodiff::{DenseLayer, Tape, Var};
use crate::error::{Error, Result};

/// Offset used by [`smooth_abs`] and [`safe_div`].
pub const EPSILON: f64 = 1e-7;

pub type LatentVector = Vec<Var>;

fn check_len(a: &[Var], b: &[Var]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        })
    }
}

/// Applies `f` pairwise over two equally long latent vectors.
pub fn zip_with<F>(tape: &mut Tape, a: &[Var], b: &[Var], mut f: F) -> Result<LatentVector>
where
    F: FnMut(&mut Tape, Var, Var) -> Result<Var>,
{
    check_len(a, b)?;
    a.iter().zip(b).map(|(&x, &y)| f(tape, x, y)).collect()
}

pub fn map<F>(tape: &mut Tape, a: &[Var], mut f: F) -> Result<LatentVector>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    a.iter().map(|&x| f(tape, x)).collect()
}

pub fn add(tape: &mut Tape, a: &[Var], b: &[Var]) -> Result<LatentVector> {
    zip_with(tape, a, b, |t, x, y| t.add(x, y))
}

pub fn sub(tape: &mut Tape, a: &[Var], b: &[Var]) -> Result<LatentVector> {
    zip_with(tape, a, b, |t, x, y| t.sub(x, y))
}

pub fn mul(tape: &mut Tape, a: &[Var], b: &[Var]) -> Result<LatentVector> {
    zip_with(tape, a, b, |t, x, y| t.mul(x, y))
}

/// A constant broadcast to `h` channels. The nodes are leaves that the caller
/// never reads gradients from.
pub fn broadcast(tape: &mut Tape, value: f64, h: usize) -> Result<LatentVector> {
    (0..h).map(|_| tape.leaf(value)).collect()
}

fn ordered(x: Var, y: Var) -> (Var, Var) {
    if x.value() >= y.value() {
        (x, y)
    } else {
        (y, x)
    }
}

/// `b + softplus(a - b)`, recorded as `max(a, b) + softplus(-|a - b|)` so the
/// rounded result never falls below the hard maximum.
pub fn soft_max(tape: &mut Tape, a: &[Var], b: &[Var]) -> Result<LatentVector> {
    zip_with(tape, a, b, |t, x, y| {
        let (hi, lo) = ordered(x, y);
        let d = t.sub(lo, hi)?;
        let s = t.softplus(d)?;
        t.add(hi, s)
    })
}

/// `-soft_max(-a, -b)`, recorded as `min(a, b) - softplus(-|a - b|)`.
pub fn soft_min(tape: &mut Tape, a: &[Var], b: &[Var]) -> Result<LatentVector> {
    zip_with(tape, a, b, |t, x, y| {
        let (hi, lo) = ordered(x, y);
        let d = t.sub(lo, hi)?;
        let s = t.softplus(d)?;
        t.sub(lo, s)
    })
}

pub fn soft_max3(tape: &mut Tape, a: &[Var], b: &[Var], c: &[Var]) -> Result<LatentVector> {
    let ab = soft_max(tape, a, b)?;
    soft_max(tape, &ab, c)
}

pub fn soft_min3(tape: &mut Tape, a: &[Var], b: &[Var], c: &[Var]) -> Result<LatentVector> {
    let ab = soft_min(tape, a, b)?;
    soft_min(tape, &ab, c)
}

/// `sqrt(a^2 + EPSILON)`.
pub fn smooth_abs(tape: &mut Tape, a: &[Var]) -> Result<LatentVector> {
    map(tape, a, |t, x| {
        let sq = t.mul(x, x)?;
        let shifted = t.shift(sq, EPSILON)?;
        t.sqrt(shifted)
    })
}

/// `tanh(a)`.
pub fn soft_sign(tape: &mut Tape, a: &[Var]) -> Result<LatentVector> {
    map(tape, a, |t, x| t.tanh(x))
}

/// `a / (b + EPSILON)`.
pub fn safe_div(tape: &mut Tape, a: &[Var], b: &[Var]) -> Result<LatentVector> {
    zip_with(tape, a, b, |t, x, y| {
        let d = t.shift(y, EPSILON)?;
        t.div(x, d)
    })
}

/// Softmax with the maximum logit subtracted first.
pub fn softmax(tape: &mut Tape, x: &[Var]) -> Result<Vec<Var>> {
    if x.is_empty() {
        return Err(Error::Dimension {
            expected: 1,
            actual: 0,
        });
    }
    let peak = x.iter().map(|v| v.value()).fold(f64::NEG_INFINITY, f64::max);
    let exps = x
        .iter()
        .map(|&v| {
            let shifted = tape.shift(v, -peak)?;
            tape.exp(shifted)
        })
        .collect::<Result<Vec<_>>>()?;
    let total = tape.sum(&exps)?;
    exps.into_iter().map(|e| tape.div(e, total)).collect()
}

/// Output of a condition block.
#[derive(Debug, Clone)]
pub struct SoftSelection {
    pub output: LatentVector,
    /// One weight per branch; they sum to one.
    pub weights: Vec<Var>,
}

/// Soft if/else: `softmax(selector([conditions...]))` weights mix the branches.
pub fn soft_cond(
    tape: &mut Tape,
    params: &[Var],
    selector: &DenseLayer,
    branches: &[&[Var]],
    conditions: &[&[Var]],
) -> Result<SoftSelection> {
    if branches.len() < 2 || selector.outputs != branches.len() {
        return Err(Error::Dimension {
            expected: selector.outputs,
            actual: branches.len(),
        });
    }
    let width = branches[0].len();
    for branch in &branches[1..] {
        check_len(branches[0], branch)?;
    }
    let joined: Vec<Var> = conditions.iter().flat_map(|c| c.iter().copied()).collect();
    if joined.len() != selector.inputs {
        return Err(Error::Dimension {
            expected: selector.inputs,
            actual: joined.len(),
        });
    }
    let logits = selector.apply(tape, params, &joined)?;
    let weights = softmax(tape, &logits)?;
    let mut column = Vec::with_capacity(branches.len());
    let output = (0..width)
        .map(|ch| {
            column.clear();
            column.extend(branches.iter().map(|b| b[ch]));
            tape.linear(&weights, &column, None)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SoftSelection { output, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, LayerAllocator};
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn vals(v: &[Var]) -> Vec<f64> {
        v.iter().map(|x| x.value()).collect()
    }

    fn leaves(tape: &mut Tape, xs: &[f64]) -> Vec<Var> {
        tape.leaves(xs).unwrap()
    }

    #[test]
    fn soft_max_examples() {
        let mut t = Tape::new();
        let a = leaves(&mut t, &[0.0, 10.0, 40.0]);
        let b = leaves(&mut t, &[0.0, 0.0, 0.0]);
        let m = vals(&soft_max(&mut t, &a, &b).unwrap());
        assert!((m[0] - LN_2).abs() < 1e-15);
        assert!((m[1] - 10.000_045_398_899_218).abs() < 1e-12);
        assert!((m[2] - 40.0).abs() < 1e-12);
    }

    #[test]
    fn soft_min_examples() {
        let mut t = Tape::new();
        let a = leaves(&mut t, &[0.0, 3.0, -10.0]);
        let b = leaves(&mut t, &[0.0, 5.0, 10.0]);
        let m = vals(&soft_min(&mut t, &a, &b).unwrap());
        assert!((m[0] + LN_2).abs() < 1e-15);
        assert!((m[1] - 2.873_071_988_957_027_3).abs() < 1e-12);
        assert!((m[2] + 10.0).abs() < 1e-8);
    }

    #[test]
    fn soft_min_matches_negated_soft_max() {
        let mut t = Tape::new();
        let a = leaves(&mut t, &[1.5, -2.25, 7.0]);
        let b = leaves(&mut t, &[0.5, 3.0, 7.0]);
        let direct = vals(&soft_min(&mut t, &a, &b).unwrap());
        let na: Vec<Var> = a.iter().map(|&x| t.neg(x).unwrap()).collect();
        let nb: Vec<Var> = b.iter().map(|&x| t.neg(x).unwrap()).collect();
        let m = soft_max(&mut t, &na, &nb).unwrap();
        let via_max: Vec<f64> = m.iter().map(|x| -x.value()).collect();
        assert_eq!(direct, via_max);
    }

    #[test]
    fn length_mismatch_is_reported() {
        let mut t = Tape::new();
        let a = leaves(&mut t, &[1.0, 2.0]);
        let b = leaves(&mut t, &[1.0]);
        assert!(soft_max(&mut t, &a, &b).is_err());
        assert!(soft_min(&mut t, &a, &b).is_err());
        assert!(safe_div(&mut t, &a, &b).is_err());
    }

    #[test]
    fn smooth_abs_sign_and_div_examples() {
        let mut t = Tape::new();
        let a = leaves(&mut t, &[0.0, 3.0, -3.0]);
        let s = vals(&smooth_abs(&mut t, &a).unwrap());
        assert!((s[0] - 1e-7_f64.sqrt()).abs() < 1e-18);
        assert!((s[1] - 3.000_000_016_666_667).abs() < 1e-15);
        assert_eq!(s[1], s[2]);

        let a = leaves(&mut t, &[0.0, 20.0, -1.3]);
        let s = vals(&soft_sign(&mut t, &a).unwrap());
        assert_eq!(s[0], 0.0);
        assert!(s[1] > 0.999_999_999 && s[1] <= 1.0);
        assert_eq!(s[2], -(1.3f64.tanh()));

        let a = leaves(&mut t, &[1.0, 6.0, 0.0]);
        let b = leaves(&mut t, &[0.0, 3.0, -42.0]);
        let q = vals(&safe_div(&mut t, &a, &b).unwrap());
        assert!((q[0] - 1e7).abs() < 1e-6);
        assert!((q[1] - 1.999_999_933_333_335_6).abs() < 1e-12);
        assert_eq!(q[2], 0.0);
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let x = leaves(&mut t, &[0.0, 0.0, 0.0]);
        for w in vals(&softmax(&mut t, &x).unwrap()) {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = leaves(&mut t, &[1000.0, 0.0]);
        let w = vals(&softmax(&mut t, &x).unwrap());
        assert_eq!(w[0], 1.0);
        assert!(w[1] >= 0.0 && w[1] < 1e-300);
        let x = leaves(&mut t, &[1.0f64.ln(), 2.0f64.ln(), 3.0f64.ln()]);
        let w = vals(&softmax(&mut t, &x).unwrap());
        for (got, want) in w.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(softmax(&mut t, &[]).is_err());
    }

    /// Selector with zero weights whose bias produces the requested logits.
    fn fixed_selector(t: &mut Tape, inputs: usize, logits: &[f64]) -> (DenseLayer, Vec<Var>) {
        let layer = LayerAllocator::new().dense(inputs, logits.len());
        let mut params = vec![0.0; layer.param_count()];
        for (i, &l) in logits.iter().enumerate() {
            params[layer.bias_index(i)] = l;
        }
        (layer, t.leaves(&params).unwrap())
    }

    #[test]
    fn soft_cond_examples() {
        let mut t = Tape::new();
        let a = leaves(&mut t, &[1.0, 2.0]);
        let b = leaves(&mut t, &[10.0, 20.0]);
        let c = leaves(&mut t, &[-5.0, 5.0]);
        let cond = leaves(&mut t, &[0.3, -0.7]);

        let (sel, p) = fixed_selector(&mut t, 2, &[100.0, 0.0, 0.0]);
        let out = soft_cond(&mut t, &p, &sel, &[&a, &b, &c], &[&cond]).unwrap();
        for (got, want) in vals(&out.output).iter().zip([1.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }

        let (sel, p) = fixed_selector(&mut t, 2, &[0.0, 0.0]);
        let out = soft_cond(&mut t, &p, &sel, &[&a, &b], &[&cond]).unwrap();
        assert_eq!(vals(&out.output), [5.5, 11.0]);

        let (sel, p) = fixed_selector(&mut t, 2, &[LN_2, 0.0]);
        let out = soft_cond(&mut t, &p, &sel, &[&a, &b], &[&cond]).unwrap();
        for (got, want) in vals(&out.output).iter().zip([(2.0 + 10.0) / 3.0, (4.0 + 20.0) / 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        let total: f64 = out.weights.iter().map(|w| w.value()).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn soft_cond_width_checks() {
        let mut t = Tape::new();
        let a = leaves(&mut t, &[1.0, 2.0]);
        let cond = leaves(&mut t, &[0.3, -0.7]);
        let (sel, p) = fixed_selector(&mut t, 2, &[0.0, 0.0]);
        assert!(soft_cond(&mut t, &p, &sel, &[&a], &[&cond]).is_err());
        assert!(soft_cond(&mut t, &p, &sel, &[&a, &a], &[&cond, &cond]).is_err());
        let short = leaves(&mut t, &[1.0]);
        assert!(soft_cond(&mut t, &p, &sel, &[&a, &short], &[&cond]).is_err());
    }

    #[test]
    fn every_block_passes_grad_check() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p: Vec<f64> = (0..6).map(|_| rng.random_range(-4.0..4.0)).collect();
            type Block = fn(&mut Tape, &[Var]) -> Result<Var>;
            let blocks: [Block; 6] = [
                |t, p| Ok(soft_max(t, &p[..1], &p[1..2])?[0]),
                |t, p| Ok(soft_min(t, &p[..1], &p[1..2])?[0]),
                |t, p| Ok(smooth_abs(t, &p[..1])?[0]),
                |t, p| Ok(soft_sign(t, &p[..1])?[0]),
                |t, p| {
                    // keep the denominator away from -EPSILON
                    let d = t.softplus(p[1])?;
                    Ok(safe_div(t, &p[..1], &[d])?[0])
                },
                |t, p| {
                    let w = softmax(t, &p[..3])?;
                    t.linear(&w, &p[3..6], None)
                },
            ];
            for (i, block) in blocks.iter().enumerate() {
                let report = grad_check(block, &p, 1e-5, 1e-4).unwrap();
                assert!(report.passed, "block {i} at {p:?}: {report:?}");
            }
            let selector = LayerAllocator::new().dense(2, 3);
            let mut params: Vec<f64> = (0..selector.param_count())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            params.extend(&p);
            let report = grad_check(
                |t, q| {
                    let (weights, rest) = q.split_at(selector.param_count());
                    let out = soft_cond(t, weights, &selector, &[&rest[..2], &rest[2..4], &rest[4..6]], &[&rest[..2]])?;
                    t.sum(&out.output)
                },
                &params,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed, "soft_cond: {report:?}");
        }
    }

    proptest! {
        #[test]
        fn soft_extrema_bracket_hard_extrema(a in -1e3f64..1e3, b in -1e3f64..1e3) {
            let mut t = Tape::new();
            let va = t.leaves(&[a]).unwrap();
            let vb = t.leaves(&[b]).unwrap();
            let hi = soft_max(&mut t, &va, &vb).unwrap()[0].value();
            let lo = soft_min(&mut t, &va, &vb).unwrap()[0].value();
            let tol = 1e-12 * (1.0 + a.abs().max(b.abs()));
            prop_assert!(hi >= a.max(b) - tol && hi <= a.max(b) + LN_2 + tol);
            prop_assert!(lo <= a.min(b) + tol && lo >= a.min(b) - LN_2 - tol);
            if (a - b).abs() >= 20.0 {
                prop_assert!((hi - a.max(b)).abs() <= 1e-8 + tol);
                prop_assert!((lo - a.min(b)).abs() <= 1e-8 + tol);
            }
        }

        #[test]
        fn smooth_abs_excess_is_bounded(a in -1e3f64..1e3) {
            let mut t = Tape::new();
            let va = t.leaves(&[a]).unwrap();
            let s = smooth_abs(&mut t, &va).unwrap()[0].value();
            let excess = s - a.abs();
            prop_assert!(excess >= 0.0 && excess <= EPSILON.sqrt() + 1e-15);
            let neg = t.leaves(&[-a]).unwrap();
            prop_assert_eq!(smooth_abs(&mut t, &neg).unwrap()[0].value(), s);
        }

        #[test]
        fn soft_sign_stays_inside_unit_interval(a in -15f64..15.0) {
            let mut t = Tape::new();
            let va = t.leaves(&[a]).unwrap();
            let s = soft_sign(&mut t, &va).unwrap()[0].value();
            prop_assert!(s > -1.0 && s < 1.0);
        }

        #[test]
        fn softmax_is_a_simplex(xs in proptest::collection::vec(-500f64..500.0, 2..8)) {
            let mut t = Tape::new();
            let v = t.leaves(&xs).unwrap();
            let w = softmax(&mut t, &v).unwrap();
            let total: f64 = w.iter().map(|x| x.value()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|x| (0.0..=1.0).contains(&x.value())));
        }
    }
}

use std::f64::consts::LN_2;

use mrinn_core::autodiff::{grad_check, LayerAllocator, Tape, Var};
use mrinn_core::soft_ops::{safe_div, smooth_abs, soft_cond, soft_max, soft_max3, soft_min, soft_min3, soft_sign};
use mrinn_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded pairs over several magnitudes plus the ties and the |a - b| = 20 edge.
fn pairs() -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut out = Vec::new();
    for scale in [1e-3, 1.0, 30.0, 1e3, 1e5] {
        for _ in 0..4000 {
            out.push((rng.random_range(-scale..scale), rng.random_range(-scale..scale)));
        }
    }
    for x in [-1e5, -250.0, -1.0, 0.0, 0.5, 42.0, 1e4] {
        out.push((x, x));
        out.push((x + 20.0, x));
        out.push((x, x - 20.0));
        out.push((x - 20.0, x));
    }
    out
}

fn soft_pair(a: f64, b: f64) -> (f64, f64) {
    let mut t = Tape::new();
    let va = t.leaves(&[a]).unwrap();
    let vb = t.leaves(&[b]).unwrap();
    let hi = soft_max(&mut t, &va, &vb).unwrap()[0].value();
    let lo = soft_min(&mut t, &va, &vb).unwrap()[0].value();
    (hi, lo)
}

#[test]
fn soft_extrema_bracket_the_hard_ones() {
    for (a, b) in pairs() {
        let (hi, lo) = soft_pair(a, b);
        let (max, min) = (a.max(b), a.min(b));
        assert!(max <= hi && hi <= max + LN_2, "soft_max({a}, {b}) = {hi}");
        assert!(min - LN_2 <= lo && lo <= min, "soft_min({a}, {b}) = {lo}");
        if (a - b).abs() >= 20.0 {
            assert!(hi - max <= 1e-8, "gap {} at ({a}, {b})", hi - max);
            assert!(min - lo <= 1e-8, "gap {} at ({a}, {b})", min - lo);
        }
    }
}

#[test]
fn tie_gap_is_ln_2() {
    for x in [-1e3, -3.5, 0.0, 1.0, 77.25, 900.0] {
        let (hi, lo) = soft_pair(x, x);
        assert!((hi - x - LN_2).abs() <= 1e-12, "{x}: {}", hi - x);
        assert!((x - lo - LN_2).abs() <= 1e-12, "{x}: {}", x - lo);
    }
}

#[test]
fn three_way_extrema_bracket_the_hard_ones() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..2000 {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-100.0..100.0));
        let mut t = Tape::new();
        let x = t.leaves(&v).unwrap();
        let hi = soft_max3(&mut t, &x[..1], &x[1..2], &x[2..]).unwrap()[0].value();
        let lo = soft_min3(&mut t, &x[..1], &x[1..2], &x[2..]).unwrap()[0].value();
        let max = v[0].max(v[1]).max(v[2]);
        let min = v[0].min(v[1]).min(v[2]);
        assert!(max <= hi && hi <= max + 2.0 * LN_2);
        assert!(min - 2.0 * LN_2 <= lo && lo <= min);
    }
}

type Block = fn(&mut Tape, &[Var]) -> Result<Var>;

#[test]
fn blocks_match_finite_differences() {
    let blocks: [(&str, Block); 7] = [
        ("soft_max", |t, p| Ok(soft_max(t, &p[..1], &p[1..2])?[0])),
        ("soft_min", |t, p| Ok(soft_min(t, &p[..1], &p[1..2])?[0])),
        ("soft_max3", |t, p| Ok(soft_max3(t, &p[..1], &p[1..2], &p[2..3])?[0])),
        ("soft_min3", |t, p| Ok(soft_min3(t, &p[..1], &p[1..2], &p[2..3])?[0])),
        ("smooth_abs", |t, p| Ok(smooth_abs(t, &p[..1])?[0])),
        ("soft_sign", |t, p| Ok(soft_sign(t, &p[..1])?[0])),
        ("safe_div", |t, p| {
            let d = t.softplus(p[1])?;
            Ok(safe_div(t, &p[..1], &[d])?[0])
        }),
    ];
    let selector = LayerAllocator::new().dense(2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        let p: Vec<f64> = (0..6).map(|_| rng.random_range(-4.0..4.0)).collect();
        for (name, block) in blocks {
            let report = grad_check(block, &p, 1e-5, 1e-4).unwrap();
            assert!(report.passed, "{name} at {p:?}: {}", report.max_relative_error);
        }
        let mut params: Vec<f64> = (0..selector.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        params.extend(&p);
        let report = grad_check(
            |t, q| {
                let (w, x) = q.split_at(selector.param_count());
                let out = soft_cond(t, w, &selector, &[&x[..2], &x[2..4], &x[4..]], &[&x[1..3]])?;
                t.sum(&out.output)
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "soft_cond: {}", report.max_relative_error);
    }
}

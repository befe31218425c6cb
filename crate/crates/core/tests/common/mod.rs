#![allow(dead_code)]

use disdca::data::{generate_synthetic, Dataset, SyntheticSpec};
use disdca::model::{IncrementProblem, LossKind, LossModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twofloat::TwoFloat;

/// Synthetic grouped data in the unit ball with regression labels.
pub fn synthetic(groups: usize, group_dim: usize, points: usize, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec::new(groups, group_dim, points, seed)).unwrap()
}

/// Same data with `sign(y − median)` labels.
pub fn synthetic_signs(groups: usize, group_dim: usize, points: usize, seed: u64) -> Dataset {
    let ds = synthetic(groups, group_dim, points, seed);
    ds.with_labels(ds.median_sign_labels()).unwrap()
}

fn tf(x: f64) -> TwoFloat {
    TwoFloat::from(x)
}

/// Double-double evaluation of the single-coordinate objective
/// `−φ*(−(α+Δ)) − Δ·margin − (scale·‖x‖²/(2λn))·Δ²`, written out from the
/// conjugate formulas independently of the library. `None` outside the
/// conjugate domain.
pub fn objective_dd(kind: LossKind, sign_constrained: bool, p: &IncrementProblem, delta: f64) -> Option<TwoFloat> {
    let a = tf(p.alpha) + tf(delta);
    let y = tf(p.label);
    let conj = match kind {
        LossKind::LeastSquares => -(a * y) + a * a / 2.0,
        LossKind::SquaredHinge => {
            if sign_constrained && (a * y) < 0.0 {
                return None;
            }
            -(a * y) + a * a / 4.0
        }
        LossKind::Logistic => {
            let q = a * y;
            if !(0.0..=1.0).contains(&q) {
                return None;
            }
            let xlogx = |v: TwoFloat| if v == 0.0 { tf(0.0) } else { v * v.ln() };
            xlogx(q) + xlogx(tf(1.0) - q)
        }
    };
    let curvature = tf(p.scale) * tf(p.x_norm_sq) / (tf(p.lambda) * tf(p.n as f64));
    let d = tf(delta);
    Some(-conj - d * tf(p.margin) - curvature * d * d / 2.0)
}

/// Grid search over `[lo, hi]` at `step`, then golden-section refinement of
/// the best grid cell's neighbourhood. Valid for concave objectives.
pub fn golden_argmax(
    f: impl Fn(f64) -> Option<TwoFloat>,
    lo: f64,
    hi: f64,
    step: f64,
) -> f64 {
    let value = |x: f64| f(x).unwrap_or(TwoFloat::NEG_INFINITY);
    let cells = ((hi - lo) / step).ceil().max(1.0) as usize;
    let h = (hi - lo) / cells as f64;
    let at = |i: usize| if i == cells { hi } else { lo + h * i as f64 };
    let mut best = 0;
    let mut best_val = value(lo);
    for i in 1..=cells {
        let v = value(at(i));
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    let mut a = at(best.saturating_sub(1));
    let mut b = at((best + 1).min(cells));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (value(c), value(d));
    for _ in 0..200 {
        if b - a <= 1e-15 * a.abs().max(b.abs()).max(1e-3) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = value(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = value(d);
        }
    }
    0.5 * (a + b)
}

/// A random problem whose maximizer lies inside `[−10, 10]`, with the dual
/// variable inside the conjugate domain.
pub fn random_problem(kind: LossKind, rng: &mut ChaCha8Rng) -> IncrementProblem {
    let workers = rng.gen_range(1..=10usize);
    let m = rng.gen_range(1..=100usize);
    let scale = match rng.gen_range(0..3) {
        0 => 1.0,
        1 => workers as f64,
        _ => (m * workers) as f64,
    };
    let label = match kind {
        LossKind::LeastSquares => rng.gen_range(-2.0..2.0),
        _ => {
            if rng.gen_bool(0.5) {
                1.0
            } else {
                -1.0
            }
        }
    };
    let alpha = match kind {
        LossKind::LeastSquares => rng.gen_range(-2.0..2.0),
        LossKind::SquaredHinge => label * rng.gen_range(0.0..2.0),
        LossKind::Logistic => label * rng.gen_range(0.0..1.0),
    };
    IncrementProblem {
        alpha,
        margin: rng.gen_range(-2.0..2.0),
        x_norm_sq: if rng.gen_bool(0.05) { 0.0 } else { rng.gen_range(0.0..=1.0) },
        scale,
        lambda: 10f64.powf(rng.gen_range(-4.0..0.0)),
        n: rng.gen_range(10..10_000),
        label,
    }
}

/// Maximizer over `[−10, 10]` intersected with the conjugate domain.
pub fn oracle_increment(loss: &LossModel, p: &IncrementProblem, step: f64) -> f64 {
    let kind = loss.kind();
    let constrained = loss.sign_constrained();
    let y = p.label;
    // dual variable a = α + Δ with a·y in [lo_p, hi_p]
    let (lo_p, hi_p) = match kind {
        LossKind::LeastSquares => (f64::NEG_INFINITY, f64::INFINITY),
        LossKind::SquaredHinge if constrained => (0.0, f64::INFINITY),
        LossKind::SquaredHinge => (f64::NEG_INFINITY, f64::INFINITY),
        LossKind::Logistic => (0.0, 1.0),
    };
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    // Δ = y·(a·y) − α since y = ±1 for the bounded cases
    if lo_p.is_finite() || hi_p.is_finite() {
        let ends = [y * lo_p - p.alpha, y * hi_p - p.alpha];
        let (a, b) = if ends[0] <= ends[1] { (ends[0], ends[1]) } else { (ends[1], ends[0]) };
        lo = lo.max(a);
        hi = hi.min(b);
    }
    golden_argmax(|d| objective_dd(kind, constrained, p, d), lo, hi, step)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

//! Adaptive rejection sampling for univariate log-concave densities, using a
//! tangent upper hull and a chord squeeze.

use rand::Rng;

use crate::error::{Error, Result};

/// Maximum number of abscissae kept in the hull.
pub const MAX_ABSCISSAE: usize = 64;
const MAX_TRIALS: usize = 10_000;
const MAX_BRACKET_EXPANSIONS: usize = 64;

/// A log density (up to a constant) that is concave in its argument.
pub trait LogConcave {
    fn log_density(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
    fn second_derivative(&self, x: f64) -> f64;
}

/// Safeguarded Newton search for the mode, after bracketing it by expanding
/// from `start` in steps that double from `scale`.
pub fn find_mode<F: LogConcave + ?Sized>(f: &F, start: f64, scale: f64) -> Result<f64> {
    let d0 = f.derivative(start);
    if d0 == 0.0 {
        return Ok(start);
    }
    if d0.is_nan() {
        return Err(Error::numerical("ars", format!("derivative is NaN at {start}")));
    }
    let dir = d0.signum();
    let mut step = scale.max(1e-8);
    let mut near = start;
    let mut far = start + dir * step;
    let mut expansions = 0;
    while f.derivative(far) * dir > 0.0 {
        expansions += 1;
        if expansions > MAX_BRACKET_EXPANSIONS || !far.is_finite() {
            return Err(Error::numerical(
                "ars",
                format!("could not bracket the mode from {start}"),
            ));
        }
        near = far;
        step *= 2.0;
        far = start + dir * step;
    }
    let (mut lo, mut hi) = if dir > 0.0 { (near, far) } else { (far, near) };

    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let d = f.derivative(x);
        let h2 = f.second_derivative(x);
        if d == 0.0 || (d / h2).abs() <= 1e-13 * (1.0 + x.abs()) {
            return Ok(x);
        }
        if d > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 1e-13 * (1.0 + x.abs()) {
            break;
        }
        let newton = x - d / h2;
        x = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug)]
struct Point {
    x: f64,
    h: f64,
    dh: f64,
}

/// Upper hull: segment j spans `[z[j], z[j+1]]` and follows the tangent at `points[j]`.
struct Hull {
    z: Vec<f64>,
    cumulative: Vec<f64>,
}

fn log_segment_mass(p: &Point, a: f64, b: f64) -> f64 {
    if b <= a {
        return f64::NEG_INFINITY;
    }
    let s = p.dh;
    if s == 0.0 || (a.is_finite() && b.is_finite() && (s * (b - a)).abs() < 1e-10) {
        p.h + s * (0.5 * (a + b) - p.x) + (b - a).ln()
    } else if s > 0.0 {
        p.h + s * (b - p.x) + (-(-s * (b - a)).exp_m1() / s).ln()
    } else {
        p.h + s * (a - p.x) + (-(s * (b - a)).exp_m1() / -s).ln()
    }
}

fn sample_segment(s: f64, a: f64, b: f64, u: f64) -> f64 {
    let x = if s == 0.0 || (a.is_finite() && b.is_finite() && (s * (b - a)).abs() < 1e-10) {
        a + u * (b - a)
    } else if s > 0.0 {
        b + ((1.0 - u) * (-s * (b - a)).exp_m1()).ln_1p() / s
    } else {
        a + ((1.0 - u) * (s * (b - a)).exp_m1()).ln_1p() / s
    };
    x.clamp(a, b)
}

fn build_hull(points: &[Point]) -> Hull {
    let k = points.len();
    let mut z = Vec::with_capacity(k + 1);
    z.push(f64::NEG_INFINITY);
    for w in points.windows(2) {
        let (p, q) = (w[0], w[1]);
        let denom = p.dh - q.dh;
        let zj = if denom > 1e-300 {
            (q.h - p.h - q.x * q.dh + p.x * p.dh) / denom
        } else {
            0.5 * (p.x + q.x)
        };
        z.push(zj.clamp(p.x, q.x));
    }
    z.push(f64::INFINITY);
    let log_mass: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(j, p)| log_segment_mass(p, z[j], z[j + 1]))
        .collect();
    let max = log_mass.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut cumulative = Vec::with_capacity(k);
    let mut acc = 0.0;
    for lm in log_mass {
        acc += (lm - max).exp();
        cumulative.push(acc);
    }
    Hull { z, cumulative }
}

/// Draws one exact sample from the density proportional to `exp(f.log_density)`.
///
/// `initial` must contain at least two abscissae with the density increasing at
/// the leftmost and decreasing at the rightmost.
pub fn sample<F: LogConcave + ?Sized, R: Rng + ?Sized>(
    f: &F,
    initial: &[f64],
    rng: &mut R,
) -> Result<f64> {
    let mut points: Vec<Point> = initial
        .iter()
        .map(|&x| Point {
            x,
            h: f.log_density(x),
            dh: f.derivative(x),
        })
        .collect();
    points.sort_by(|a, b| a.x.total_cmp(&b.x));
    points.dedup_by(|a, b| a.x == b.x);
    if points.len() < 2 || !(points[0].dh > 0.0) || !(points[points.len() - 1].dh < 0.0) {
        return Err(Error::numerical(
            "ars",
            "initial abscissae do not bracket the mode",
        ));
    }
    if points.iter().any(|p| !p.h.is_finite() || !p.dh.is_finite()) {
        return Err(Error::numerical("ars", "non-finite log density at an initial abscissa"));
    }

    let mut hull = build_hull(&points);
    for _ in 0..MAX_TRIALS {
        let total = *hull.cumulative.last().expect("non-empty hull");
        let target = rng.random::<f64>() * total;
        let j = hull.cumulative.partition_point(|&c| c <= target).min(points.len() - 1);
        let p = points[j];
        let x = sample_segment(p.dh, hull.z[j], hull.z[j + 1], rng.random::<f64>());
        let upper = p.h + p.dh * (x - p.x);
        let log_w = rng.random::<f64>().ln();

        let idx = points.partition_point(|q| q.x <= x);
        if idx > 0 && idx < points.len() {
            let (a, b) = (points[idx - 1], points[idx]);
            let lower = ((b.x - x) * a.h + (x - a.x) * b.h) / (b.x - a.x);
            if log_w <= lower - upper {
                return Ok(x);
            }
        }
        let hx = f.log_density(x);
        if log_w <= hx - upper {
            return Ok(x);
        }
        let dx = f.derivative(x);
        let distinct = points.iter().all(|q| (q.x - x).abs() > 1e-12 * (1.0 + x.abs()));
        if points.len() < MAX_ABSCISSAE && hx.is_finite() && dx.is_finite() && distinct {
            points.insert(idx, Point { x, h: hx, dh: dx });
            hull = build_hull(&points);
        }
    }
    Err(Error::numerical("ars", "exceeded the rejection trial limit"))
}

#![allow(dead_code)]

use std::path::PathBuf;

use num_complex::Complex64 as C64;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.toml"))
}

/// `sin(n(t-s))/n` and `cos(n(t-s))`.
pub fn sine_cosine(n: u32, t: f64, s: f64) -> (f64, f64) {
    let n = f64::from(n);
    ((n * (t - s)).sin() / n, (n * (t - s)).cos())
}

/// `int_0^T sin^2(n(T-s))/n^2 ds`.
pub fn gramian_entry(n: u32, horizon: f64) -> f64 {
    let n = f64::from(n);
    horizon / (2.0 * n * n) - (2.0 * n * horizon).sin() / (4.0 * n * n * n)
}

/// Scalar `q'' = (-n^2 + i n b(t)) q` from `(q, q')(0) = (pos, vel)` by
/// classical RK4 with `per_interval` steps between consecutive samples.
pub fn scalar_mode(
    n: u32,
    damping: impl Fn(f64) -> f64,
    horizon: f64,
    intervals: usize,
    per_interval: usize,
    pos: C64,
    vel: C64,
) -> Vec<C64> {
    let n = f64::from(n);
    let h = horizon / (intervals * per_interval) as f64;
    let rhs = |t: f64, q: C64, p: C64| (p, C64::new(-n * n, n * damping(t)) * q);
    let (mut q, mut p) = (pos, vel);
    let mut out = vec![q];
    let mut t = 0.0;
    for i in 0..intervals {
        for _ in 0..per_interval {
            let (a1, b1) = rhs(t, q, p);
            let (a2, b2) = rhs(t + h / 2.0, q + a1 * (h / 2.0), p + b1 * (h / 2.0));
            let (a3, b3) = rhs(t + h / 2.0, q + a2 * (h / 2.0), p + b2 * (h / 2.0));
            let (a4, b4) = rhs(t + h, q + a3 * h, p + b3 * h);
            q += (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (h / 6.0);
            p += (b1 + b2 * 2.0 + b3 * 2.0 + b4) * (h / 6.0);
            t += h;
        }
        t = horizon * (i + 1) as f64 / intervals as f64;
        out.push(q);
    }
    out
}

pub fn max_gap(a: &[C64], b: &[C64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

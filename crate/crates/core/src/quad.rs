//! Fixed-order Gauss-Legendre rules and log-spaced grids.

const GL8_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// 8-point Gauss-Legendre approximation of the integral of `f` over `[a, b]`.
pub fn gauss_legendre<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut s = 0.0;
    for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
        s += w * (f(mid - half * x) + f(mid + half * x));
    }
    s * half
}

/// `n` points spaced evenly in log scale from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && n >= 1);
    if n == 1 {
        return vec![lo];
    }
    let (l0, l1) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == n - 1 {
                hi
            } else {
                (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Integral of `f(r) / r^2` over `(0, inf)` from samples on an increasing
/// positive grid, using the trapezoid rule in `ln r`. Below the grid the
/// integrand is extended as `f ~ r^2`; above it `f` is held at `f_inf`.
pub fn r_integral(grid: &[f64], values: &[f64], f_inf: f64) -> f64 {
    assert_eq!(grid.len(), values.len());
    if grid.is_empty() {
        return 0.0;
    }
    let mut s = values[0] / grid[0];
    for i in 1..grid.len() {
        let dl = (grid[i] / grid[i - 1]).ln();
        s += 0.5 * (values[i - 1] / grid[i - 1] + values[i] / grid[i]) * dl;
    }
    s + f_inf / grid[grid.len() - 1]
}

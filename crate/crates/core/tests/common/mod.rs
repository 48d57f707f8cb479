//! Independent reference computations shared by the integration tests.

#![allow(dead_code)]

use authq::sim::SimRng;
use authq::BirthDeathSpec;

/// Solves the global balance equations `πQ = 0, Σπ = 1` of the birth-death
/// generator by Gaussian elimination with partial pivoting. The last balance
/// equation is replaced by the normalization row.
pub fn balance_equation_solution(spec: &BirthDeathSpec) -> Vec<f64> {
    let k = spec.capacity();
    let n = k + 1;
    let lambda = spec.arrival_rates();
    let mu = spec.service_rates();

    // Row j of the system is column j of Q: inflow to j minus outflow from j.
    let mut a = vec![vec![0.0; n + 1]; n];
    for j in 0..n {
        let out_rate = if j < k { lambda[j] } else { 0.0 } + if j > 0 { mu[j - 1] } else { 0.0 };
        a[j][j] = -out_rate;
        if j > 0 {
            a[j][j - 1] = lambda[j - 1];
        }
        if j < k {
            a[j][j + 1] = mu[j];
        }
    }
    for cell in a[n - 1].iter_mut().take(n) {
        *cell = 1.0;
    }
    a[n - 1][n] = 1.0;

    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        for row in 0..n {
            if row != col && a[row][col] != 0.0 {
                let factor = a[row][col] / a[col][col];
                let pivot_row = a[col].clone();
                for (cell, p) in a[row].iter_mut().zip(&pivot_row).skip(col) {
                    *cell -= factor * p;
                }
            }
        }
    }
    (0..n).map(|i| a[i][n] / a[i][i]).collect()
}

/// `P(i) = ρ^i (1 − ρ) / (1 − ρ^{K+1})`, or uniform when `ρ = 1`.
pub fn mm1k_closed_form(lambda: f64, mu: f64, k: usize) -> Vec<f64> {
    let rho = lambda / mu;
    if rho == 1.0 {
        return vec![1.0 / (k + 1) as f64; k + 1];
    }
    let norm = (1.0 - rho) / (1.0 - rho.powi(k as i32 + 1));
    (0..=k).map(|i| rho.powi(i as i32) * norm).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Uniform on `[lo, hi)` from the simulator's generator.
pub fn uniform(rng: &mut SimRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * (1.0 - rng.next_uniform())
}

pub fn below(rng: &mut SimRng, n: usize) -> usize {
    ((rng.next_uniform() * n as f64).ceil() as usize).clamp(1, n) - 1
}

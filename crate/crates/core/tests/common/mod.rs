//! Independent reference implementations shared by the integration and
//! acceptance tests. Nothing here calls the library's numerical code.

#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::DMatrix;
use spikegrow::dataset::{generate_family, split_train_test, GeneratorConfig, LabeledDataset};
use spikegrow::LifParams;

/// Dense step-by-step LIF evaluator over 0/1 inputs, `x[channel][t]`.
pub fn lif_dense(x: &[Vec<u8>], w: &[f64], v: f64, p: &LifParams) -> Vec<u8> {
    let a = (-p.dt / p.tau_syn).exp();
    let b = (-p.dt / p.tau_mem).exp();
    let steps = x.first().map_or(0, Vec::len);
    let (mut i, mut u, mut s) = (0.0f64, 0.0f64, 0u8);
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut wx = 0.0;
        for k in 0..w.len() {
            wx += w[k] * f64::from(x[k][t]);
        }
        let i_next = a * i + (wx + v * f64::from(s));
        let u_next = b * u + i - f64::from(s);
        let s_next = u8::from(u_next - p.theta >= 0.0);
        i = i_next;
        u = u_next;
        s = s_next;
        out.push(s);
    }
    out
}

fn cholesky_solve(g: &[Vec<f64>], rhs: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = g.len();
    let max_diag = (0..n).map(|i| g[i][i].abs()).fold(0.0, f64::max);
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = g[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 1e-12 * max_diag.max(f64::MIN_POSITIVE) {
                    return None;
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    let cols = rhs.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; cols]; n];
    for q in 0..cols {
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut sum = rhs[i][q];
            for k in 0..i {
                sum -= l[i][k] * y[k];
            }
            y[i] = sum / l[i][i];
        }
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in i + 1..n {
                sum -= l[k][i] * out[k][q];
            }
            out[i][q] = sum / l[i][i];
        }
    }
    Some(out)
}

fn gram(h: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let n = h.ncols();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..h.nrows()).map(|r| h[(r, i)] * h[(r, j)]).sum())
                .collect()
        })
        .collect()
}

fn ht_times(h: &DMatrix<f64>, f: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..h.ncols())
        .map(|i| {
            (0..f.ncols())
                .map(|q| (0..h.nrows()).map(|r| h[(r, i)] * f[(r, q)]).sum())
                .collect()
        })
        .collect()
}

/// Least squares through the normal equations `H^T H beta = H^T F`, solved by
/// a hand-rolled Cholesky factorization with a few rounds of iterative
/// refinement. `None` when `H^T H` is numerically singular.
pub fn normal_equations(h: &DMatrix<f64>, f: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let g = gram(h);
    let mut beta = cholesky_solve(&g, &ht_times(h, f))?;
    let (n, m) = (h.ncols(), f.ncols());
    for _ in 0..3 {
        let b = DMatrix::from_fn(n, m, |i, q| beta[i][q]);
        let r = f - h * &b;
        let delta = cholesky_solve(&g, &ht_times(h, &r))?;
        for i in 0..n {
            for q in 0..m {
                beta[i][q] += delta[i][q];
            }
        }
    }
    Some(DMatrix::from_fn(n, m, |i, q| beta[i][q]))
}

/// Per-channel spike counts plus a constant column.
pub fn count_features(ds: &LabeledDataset) -> DMatrix<f64> {
    let d = ds.channels();
    DMatrix::from_fn(ds.len(), d + 1, |r, c| {
        if c == d {
            1.0
        } else {
            ds.samples()[r].channels[c].count_ones() as f64
        }
    })
}

pub fn one_hot(ds: &LabeledDataset) -> DMatrix<f64> {
    let labels = ds.label_indices();
    DMatrix::from_fn(ds.len(), ds.categories().len(), |r, q| {
        f64::from(u8::from(labels[r] == q))
    })
}

fn argmax_row(m: &DMatrix<f64>, r: usize) -> usize {
    let mut best = 0;
    for q in 1..m.ncols() {
        if m[(r, q)] > m[(r, best)] {
            best = q;
        }
    }
    best
}

/// Train and test accuracy of a least-squares linear classifier on spike
/// counts, fit on `train`.
pub fn count_classifier(train: &LabeledDataset, test: &LabeledDataset) -> (f64, f64) {
    let beta = normal_equations(&count_features(train), &one_hot(train))
        .expect("count features are full rank");
    let acc = |ds: &LabeledDataset| {
        let out = count_features(ds) * &beta;
        let labels = ds.label_indices();
        (0..ds.len())
            .filter(|&r| argmax_row(&out, r) == labels[r])
            .count() as f64
            / ds.len() as f64
    };
    (acc(train), acc(test))
}

/// The nested family used by the transfer and adaptivity checks.
pub fn family_config(categories: usize, seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        channels: 16,
        steps: 25,
        categories,
        samples_per_category: 40,
        separation: 0.7,
        jitter: 0.1,
        rng_seed: seed,
        ..Default::default()
    }
}

/// Train/test splits of each stage, with split seed equal to `seed`.
pub fn split_family(
    categories: usize,
    stages: &[usize],
    seed: u64,
) -> Vec<(LabeledDataset, LabeledDataset)> {
    let family = generate_family(&family_config(categories, seed), stages).unwrap();
    family
        .stages()
        .iter()
        .map(|s| split_train_test(s, 0.2, seed).unwrap())
        .collect()
}

pub fn median(values: &mut [usize]) -> f64 {
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0
    }
}

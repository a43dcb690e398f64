//! Independent scalar oracles for the integration suites. Everything here
//! is deliberately written as plain loops, separate from the library's
//! implementation paths.

#![allow(dead_code)]

use eer_core::Tensor;

/// Naive triple-loop matrix product.
pub fn matmul_oracle(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols(), b.rows());
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    Tensor::from_fn(m, n, |i, j| {
        let mut s = 0.0;
        for p in 0..k {
            s += a.get(i, p) * b.get(p, j);
        }
        s
    })
}

/// Plain exp-normalize softmax of one row at a temperature.
pub fn softmax_row_oracle(row: &[f64], temperature: f64) -> Vec<f64> {
    let exps: Vec<f64> = row.iter().map(|&v| (v / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Scalar log-sum-exp without the max shift (safe for moderate inputs).
pub fn lse_oracle(values: &[f64]) -> f64 {
    values.iter().map(|&v| v.exp()).sum::<f64>().ln()
}

/// Mean cross-entropy over targeted rows, scalar loops only.
pub fn cross_entropy_oracle(logits: &Tensor, targets: &[Option<usize>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, tgt) in targets.iter().enumerate() {
        if let Some(t) = *tgt {
            let row = logits.row(i);
            let lse = lse_oracle(row);
            total += lse - row[t];
            count += 1;
        }
    }
    total / count as f64
}

/// Scalar Tsallis entropy.
pub fn tsallis_oracle(p: &[f64], q: f64) -> f64 {
    let mut pow_sum = 0.0;
    for &v in p {
        pow_sum += v.powf(q);
    }
    (1.0 - pow_sum) / (q - 1.0)
}

/// Largest singular value by one-sided Jacobi orthogonalization of the
/// columns; small matrices only.
pub fn svd_max_oracle(a: &Tensor) -> f64 {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    for _sweep in 0..60 {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let (mut aa, mut bb, mut cc) = (0.0, 0.0, 0.0);
                for k in 0..m {
                    aa += cols[i][k] * cols[i][k];
                    bb += cols[j][k] * cols[j][k];
                    cc += cols[i][k] * cols[j][k];
                }
                if cc.abs() <= 1e-15 * (aa * bb).sqrt().max(1e-300) {
                    continue;
                }
                rotated = true;
                let zeta = (bb - aa) / (2.0 * cc);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..m {
                    let vi = cols[i][k];
                    let vj = cols[j][k];
                    cols[i][k] = c * vi - s * vj;
                    cols[j][k] = s * vi + c * vj;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    cols.iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Brute-force most-recent-occurrence targets: for each position, scan
/// backward for the nearest earlier equal token.
pub fn induction_targets_oracle(tokens: &[usize]) -> Vec<Option<usize>> {
    let mut targets = Vec::with_capacity(tokens.len());
    for t in 0..tokens.len() {
        let mut found = None;
        for j in (0..t).rev() {
            if tokens[j] == tokens[t] {
                found = Some(tokens[j + 1]);
                break;
            }
        }
        targets.push(found);
    }
    targets
}

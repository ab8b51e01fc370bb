//! Slow reference implementations written from the definitions, sharing no
//! code with the library beyond its plain data types.
#![allow(dead_code)]

use crosspool::{ActivationTensor, ConvLayerSpec};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in descending order with unit eigenvectors as rows.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[y][y].partial_cmp(&m[x][x]).unwrap());
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

/// Sample covariance with denominator n−1.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut c = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                c[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for row in &mut c {
        for v in row.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }
    c
}

/// Variance (denominator n−1) of each column.
pub fn column_variances(rows: &[Vec<f64>]) -> Vec<f64> {
    let c = covariance(rows);
    (0..c.len()).map(|i| c[i][i]).collect()
}

/// Cross-layer pooling straight from the definition: every window of
/// `layer_t` is one descriptor, and its weight in channel k is the next
/// layer's ReLU response recomputed on that very window.
///
/// Output is channel-major: entry `k·dim + j`.
pub fn cross_layer_by_definition(layer_t: &ActivationTensor, conv: &ConvLayerSpec) -> Vec<f64> {
    let (h, w, d) = layer_t.dims();
    let (kh, kw, s) = (conv.kernel_h, conv.kernel_w, conv.stride);
    let dim = kh * kw * d;
    let mut out = vec![0.0f64; dim * conv.out_depth];
    let mut r = 0;
    while r + kh <= h {
        let mut c = 0;
        while c + kw <= w {
            let mut x = Vec::with_capacity(dim);
            for y in 0..kh {
                for xx in 0..kw {
                    for ch in 0..d {
                        x.push(f64::from(layer_t.get(r + y, c + xx, ch)));
                    }
                }
            }
            for k in 0..conv.out_depth {
                let filter = &conv.weights()[k * dim..(k + 1) * dim];
                let z: f64 =
                    filter.iter().zip(&x).map(|(f, v)| f64::from(*f) * v).sum::<f64>() + f64::from(conv.bias()[k]);
                let a = z.max(0.0);
                for j in 0..dim {
                    out[k * dim + j] += x[j] * a;
                }
            }
            c += s;
        }
        r += s;
    }
    out
}

/// Binary soft-margin SVM dual with unregularized bias, solved by projected
/// gradient descent on `{0 ≤ α ≤ C, yᵀα = 0}`. Returns (α·y, b).
pub fn svm_dual_projected_gradient(k: &[Vec<f64>], y: &[f64], c: f64, iters: usize) -> (Vec<f64>, f64) {
    let n = y.len();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| y[i] * y[j] * k[i][j]).collect())
        .collect();
    // step from the Frobenius bound on the largest eigenvalue
    let lip = q.iter().flatten().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let step = 1.0 / lip;
    let mut alpha = vec![0.0; n];
    for _ in 0..iters {
        let grad: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| q[i][j] * alpha[j]).sum::<f64>() - 1.0)
            .collect();
        let v: Vec<f64> = (0..n).map(|i| alpha[i] - step * grad[i]).collect();
        alpha = project_box_hyperplane(&v, y, c);
    }
    let mut free_b = Vec::new();
    for i in 0..n {
        if alpha[i] > 1e-6 * c && alpha[i] < c * (1.0 - 1e-6) {
            let f: f64 = (0..n).map(|j| alpha[j] * y[j] * k[i][j]).sum();
            free_b.push(y[i] - f);
        }
    }
    let b = if free_b.is_empty() {
        0.0
    } else {
        free_b.iter().sum::<f64>() / free_b.len() as f64
    };
    ((0..n).map(|i| alpha[i] * y[i]).collect(), b)
}

/// Euclidean projection onto `{0 ≤ α ≤ C, yᵀα = 0}` by bisection on the
/// multiplier of the equality constraint.
fn project_box_hyperplane(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lam: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - lam * yi).clamp(0.0, c)).collect() };
    let g = |lam: f64| -> f64 { at(lam).iter().zip(y).map(|(a, yi)| a * yi).sum() };
    let (mut lo, mut hi) = (-1e6, 1e6);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        // g is nonincreasing in λ
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// One-vs-rest decisions from the projected-gradient oracle.
pub fn ovr_oracle_predictions(k: &[Vec<f64>], labels: &[usize], classes: usize, c: f64) -> Vec<usize> {
    let n = labels.len();
    let models: Vec<(Vec<f64>, f64)> = (0..classes)
        .map(|cls| {
            let y: Vec<f64> = labels.iter().map(|l| if *l == cls { 1.0 } else { -1.0 }).collect();
            svm_dual_projected_gradient(k, &y, c, 20_000)
        })
        .collect();
    (0..n)
        .map(|i| {
            let scores: Vec<f64> = models
                .iter()
                .map(|(beta, b)| (0..n).map(|j| beta[j] * k[i][j]).sum::<f64>() + b)
                .collect();
            let mut best = 0;
            for (cls, s) in scores.iter().enumerate() {
                if *s > scores[best] {
                    best = cls;
                }
            }
            best
        })
        .collect()
}

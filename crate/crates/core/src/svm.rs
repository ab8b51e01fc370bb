//! Linear-kernel Gram matrices and a one-vs-rest SVM trained on a
//! precomputed kernel.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{put_f64s, put_u32, read_file, write_file, ByteReader};
use crate::postproc::{packed_dot, PackedSignVector};
use crate::tensor::FeatureMatrix;

pub const SVM_MAGIC: &[u8; 8] = b"CPSVM001";
pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 10_000_000;

/// Symmetric n×n matrix of pairwise dot products, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub n: usize,
    pub values: Vec<f64>,
}

impl GramMatrix {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Validation(format!(
                "{} values for a {n}x{n} gram matrix",
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn to_matrix(&self) -> Result<FeatureMatrix> {
        FeatureMatrix::new(self.n, self.n, self.values.iter().map(|v| *v as f32).collect())
    }

    pub fn from_matrix(m: &FeatureMatrix) -> Result<Self> {
        if m.count() != m.dim() {
            return Err(Error::Validation(format!(
                "gram matrix must be square, got {}x{}",
                m.count(),
                m.dim()
            )));
        }
        Self::new(m.count(), m.values().iter().map(|v| f64::from(*v)).collect())
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

/// Upper triangle computed row-parallel, each entry summed sequentially, so
/// the result does not depend on the number of threads.
fn gram_rows(reps: &FeatureMatrix) -> GramMatrix {
    let n = reps.count();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| dot(reps.row(i), reps.row(j))).collect())
        .collect();
    let mut values = vec![0.0; n * n];
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    GramMatrix { n, values }
}

pub fn gram_matrix(reps: &FeatureMatrix) -> GramMatrix {
    gram_rows(reps)
}

pub fn gram_matrix_with_workers(reps: &FeatureMatrix, workers: usize) -> Result<GramMatrix> {
    with_workers(workers, || gram_rows(reps))
}

pub(crate) fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

pub fn gram_matrix_packed(reps: &[PackedSignVector]) -> Result<GramMatrix> {
    let n = reps.len();
    if let Some(first) = reps.first() {
        if let Some(bad) = reps.iter().find(|r| r.dim() != first.dim()) {
            return Err(Error::Contract(format!(
                "sign vectors of dims {} and {} in one gram matrix",
                first.dim(),
                bad.dim()
            )));
        }
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = packed_dot(&reps[i], &reps[j])? as f64;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(GramMatrix { n, values })
}

/// Kernel rows of `test` against `train`: entry (i, j) = dot(test_i, train_j).
pub fn cross_kernel(test: &FeatureMatrix, train: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
    if test.dim() != train.dim() {
        return Err(Error::Contract(format!(
            "test dim {} differs from train dim {}",
            test.dim(),
            train.dim()
        )));
    }
    Ok((0..test.count())
        .into_par_iter()
        .map(|i| train.rows().map(|t| dot(test.row(i), t)).collect())
        .collect())
}

pub fn cross_kernel_packed(test: &[PackedSignVector], train: &[PackedSignVector]) -> Result<Vec<Vec<f64>>> {
    test.iter()
        .map(|a| train.iter().map(|b| packed_dot(a, b).map(|v| v as f64)).collect())
        .collect()
}

/// Per-image membership in each class; single-label data has one entry per
/// image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSets {
    pub classes: Vec<String>,
    pub members: Vec<Vec<usize>>,
}

impl LabelSets {
    pub fn single(labels: &[usize]) -> Self {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        Self {
            classes: (0..k).map(|c| c.to_string()).collect(),
            members: labels.iter().map(|l| vec![*l]).collect(),
        }
    }

    pub fn has(&self, image: usize, class: usize) -> bool {
        self.members[image].contains(&class)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub classes: Vec<String>,
    /// Signed coefficients `β_i = α_i·y_i`, one vector per class.
    pub dual_coeffs: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmOptions {
    pub c: f64,
    pub tol: f64,
    /// Raised to `100·n` for large problems.
    pub max_iter: usize,
}

impl Default for SvmOptions {
    fn default() -> Self {
        Self {
            c: DEFAULT_C,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

pub fn svm_train(gram: &GramMatrix, labels: &[usize], c: f64, tol: f64) -> Result<SvmModel> {
    svm_train_sets(
        gram,
        &LabelSets::single(labels),
        SvmOptions {
            c,
            tol,
            ..SvmOptions::default()
        },
    )
}

pub fn svm_train_sets(gram: &GramMatrix, labels: &LabelSets, opts: SvmOptions) -> Result<SvmModel> {
    if labels.members.len() != gram.n {
        return Err(Error::Contract(format!(
            "{} labels for a gram matrix over {} images",
            labels.members.len(),
            gram.n
        )));
    }
    if !(opts.c > 0.0 && opts.c.is_finite()) || opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::Config(format!(
            "svm needs C > 0 and tol > 0, got C={} tol={}",
            opts.c, opts.tol
        )));
    }
    if labels.classes.len() < 2 {
        return Err(Error::Contract("svm needs at least two classes".into()));
    }
    for (k, name) in labels.classes.iter().enumerate() {
        let pos = (0..gram.n).filter(|&i| labels.has(i, k)).count();
        if pos == 0 || pos == gram.n {
            return Err(Error::Contract(format!(
                "class {name} has {pos} of {} positive examples; one-vs-rest problem is degenerate",
                gram.n
            )));
        }
    }
    let solved = (0..labels.classes.len())
        .into_par_iter()
        .map(|k| {
            let y: Vec<f64> = (0..gram.n).map(|i| if labels.has(i, k) { 1.0 } else { -1.0 }).collect();
            solve_binary(gram, &y, opts).map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!("class {}: {msg}", labels.classes[k])),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (dual_coeffs, bias) = solved.into_iter().unzip();
    Ok(SvmModel {
        classes: labels.classes.clone(),
        dual_coeffs,
        bias,
        c: opts.c,
    })
}

const TAU: f64 = 1e-12;

/// Solves `min ½ αᵀQα − Σα` with `Q_ij = y_i y_j K_ij`, `0 ≤ α ≤ C` and
/// `yᵀα = 0` by two-coordinate ascent. Each step takes the maximal violating
/// index `i` and picks `j` by second-order gain; ties go to the smaller
/// index. Stops when the KKT gap `m(α) − M(α)` is at most `tol`.
///
/// Returns `(β, b)` with `β = α∘y`.
fn solve_binary(gram: &GramMatrix, y: &[f64], opts: SvmOptions) -> Result<(Vec<f64>, f64)> {
    let n = gram.n;
    let c = opts.c;
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let in_up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let in_low = |a: f64, y: f64| (y > 0.0 && a > 0.0) || (y < 0.0 && a < c);
    let mut converged = false;
    for _ in 0..opts.max_iter.max(100 * n) {
        let mut i = usize::MAX;
        let mut g_max = f64::NEG_INFINITY;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] > g_max {
                g_max = -y[t] * grad[t];
                i = t;
            }
        }
        let mut g_min = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            g_min = g_min.min(v);
            if i != usize::MAX && v < g_max {
                let b = g_max - v;
                let a = gram.get(i, i) + gram.get(t, t) - 2.0 * gram.get(i, t);
                let gain = -(b * b) / if a > 0.0 { a } else { TAU };
                if gain < best {
                    best = gain;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || g_max - g_min <= opts.tol {
            converged = true;
            break;
        }

        let (ai, aj) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * gram.get(i, j);
        let (qii, qjj) = (gram.get(i, i), gram.get(j, j));
        if y[i] != y[j] {
            let quad = (qii + qjj + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        let (ri, rj) = (gram.row(i), gram.row(j));
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ri[t] * di + y[j] * rj[t] * dj);
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "solver did not reach KKT gap {} in {} iterations",
            opts.tol,
            opts.max_iter.max(100 * n)
        )));
    }

    // offset from free vectors, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut free_sum) = (0usize, 0.0f64);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else {
        (ub + lb) / 2.0
    };
    Ok((alpha.iter().zip(y).map(|(a, yi)| a * yi).collect(), -rho))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub scores: Vec<f64>,
}

pub fn svm_predict(model: &SvmModel, kernel_row: &[f64]) -> Result<Prediction> {
    let n = model.dual_coeffs.first().map_or(0, Vec::len);
    if kernel_row.len() != n {
        return Err(Error::Contract(format!(
            "kernel row has {} entries, model was trained on {n} points",
            kernel_row.len()
        )));
    }
    let scores: Vec<f64> = model
        .dual_coeffs
        .iter()
        .zip(&model.bias)
        .map(|(beta, b)| beta.iter().zip(kernel_row).map(|(x, k)| x * k).sum::<f64>() + b)
        .collect();
    let mut label = 0;
    for (k, s) in scores.iter().enumerate() {
        if *s > scores[label] {
            label = k;
        }
    }
    Ok(Prediction { label, scores })
}

impl SvmModel {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(SVM_MAGIC);
        put_u32(&mut out, self.classes.len())?;
        put_u32(&mut out, self.dual_coeffs.first().map_or(0, Vec::len))?;
        put_f64s(&mut out, &[self.c]);
        for name in &self.classes {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
        }
        put_f64s(&mut out, &self.bias);
        for beta in &self.dual_coeffs {
            put_f64s(&mut out, beta);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(SVM_MAGIC)?;
        let k = r.u32()? as usize;
        let n = r.u32()? as usize;
        let c = r.f64s(1)?[0];
        if k < 2 || n == 0 {
            return Err(Error::Validation(format!("svm model with {k} classes over {n} points")));
        }
        let mut classes = Vec::with_capacity(k);
        for _ in 0..k {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            classes.push(String::from_utf8(raw.to_vec()).map_err(|_| Error::Format("class name is not utf-8".into()))?);
        }
        let bias = r.f64s(k)?;
        let dual_coeffs = (0..k).map(|_| r.f64s(n)).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(Self {
            classes,
            dual_coeffs,
            bias,
            c,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(Error::Contract(format!(
            "accuracy over {} predictions and {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Non-interpolated average precision: mean of precision@rank over the
/// positives, ranking by descending score with ties kept in input order.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Contract("scores and relevance differ in length".into()));
    }
    let total = positive.iter().filter(|p| **p).count();
    if total == 0 {
        return Err(Error::Contract("average precision needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postproc::sign_quantize;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_reps(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::new(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn training_predictions(model: &SvmModel, gram: &GramMatrix) -> Vec<usize> {
        (0..gram.n)
            .map(|i| svm_predict(model, gram.row(i)).unwrap().label)
            .collect()
    }

    #[test]
    fn gram_small_cases() {
        let eye = FeatureMatrix::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let g = gram_matrix(&eye);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
        let one = FeatureMatrix::new(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(gram_matrix(&one).values, vec![25.0]);
    }

    #[test]
    fn gram_matches_double_loop() {
        let reps = random_reps(20, 13, 5);
        let g = gram_matrix(&reps);
        for i in 0..20 {
            for j in 0..20 {
                let mut s = 0.0f64;
                for k in 0..13 {
                    s += f64::from(reps.row(i)[k]) * f64::from(reps.row(j)[k]);
                }
                assert!((g.get(i, j) - s).abs() <= 1e-6 * s.abs().max(1e-6));
            }
        }
    }

    #[test]
    fn gram_is_thread_count_independent() {
        let reps = random_reps(37, 50, 9);
        let one = gram_matrix_with_workers(&reps, 1).unwrap();
        for w in [2, 3, 8] {
            assert_eq!(gram_matrix_with_workers(&reps, w).unwrap().values, one.values);
        }
    }

    #[test]
    fn packed_gram_cases() {
        let v = sign_quantize(&[1.0, -2.0, 3.0, -0.5, 2.0]);
        let g = gram_matrix_packed(&[v.clone(), v.clone()]).unwrap();
        assert_eq!(g.values, vec![5.0; 4]);

        let w = sign_quantize(&[1.0, 0.0, -1.0]);
        let g = gram_matrix_packed(&[w.clone(), w.negated()]).unwrap();
        assert_eq!(g.get(0, 1), -2.0);

        let short = sign_quantize(&[1.0]);
        assert!(matches!(gram_matrix_packed(&[w, short]), Err(Error::Contract(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vs: Vec<Vec<f32>> = (0..6)
            .map(|_| (0..70).map(|_| rng.gen_range(-1i32..=1) as f32).collect())
            .collect();
        let packed: Vec<_> = vs.iter().map(|v| sign_quantize(v)).collect();
        let g = gram_matrix_packed(&packed).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let want: f32 = vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum();
                assert_eq!(g.get(i, j), f64::from(want));
            }
        }
    }

    fn clusters(per: usize, centers: &[[f32; 2]], spread: f32, seed: u64) -> (FeatureMatrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..per {
                rows.push(vec![
                    c[0] + rng.gen_range(-spread..spread),
                    c[1] + rng.gen_range(-spread..spread),
                ]);
                labels.push(k);
            }
        }
        (FeatureMatrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separable_clusters_fit_perfectly() {
        let (reps, labels) = clusters(15, &[[10.0, 0.0], [-10.0, 0.0], [0.0, 12.0]], 1.0, 1);
        let g = gram_matrix(&reps);
        for c in [1.0, 10.0] {
            let model = svm_train(&g, &labels, c, 1e-4).unwrap();
            assert_eq!(training_predictions(&model, &g), labels);
            for beta in &model.dual_coeffs {
                assert!(beta.iter().all(|b| b.abs() <= c + 1e-9));
            }
            // a training point's own kernel row recovers its label
            assert_eq!(svm_predict(&model, g.row(7)).unwrap().label, labels[7]);
        }
    }

    #[test]
    fn xor_is_not_linearly_separable() {
        let reps = FeatureMatrix::new(4, 2, vec![1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0, 1.0]).unwrap();
        let labels = [0, 0, 1, 1];
        let g = gram_matrix(&reps);
        let model = svm_train(&g, &labels, 1.0, 1e-4).unwrap();
        assert!(accuracy(&training_predictions(&model, &g), &labels).unwrap() <= 0.75);
    }

    #[test]
    fn predict_zero_row_and_ties() {
        let model = SvmModel {
            classes: vec!["a".into(), "b".into(), "c".into()],
            dual_coeffs: vec![vec![1.0, 2.0]; 3],
            bias: vec![0.5, 2.0, 2.0],
            c: 1.0,
        };
        let p = svm_predict(&model, &[0.0, 0.0]).unwrap();
        assert_eq!(p.label, 1);
        assert_eq!(p.scores, vec![0.5, 2.0, 2.0]);
        assert!(matches!(svm_predict(&model, &[0.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn predict_matches_hand_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = SvmModel {
            classes: vec!["x".into(), "y".into()],
            dual_coeffs: (0..2)
                .map(|_| (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            bias: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            c: 1.0,
        };
        for _ in 0..10 {
            let row: Vec<f64> = (0..9).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let p = svm_predict(&model, &row).unwrap();
            for k in 0..2 {
                let mut s = model.bias[k];
                for i in 0..9 {
                    s += model.dual_coeffs[k][i] * row[i];
                }
                assert!((p.scores[k] - s).abs() <= 1e-6 * s.abs().max(1.0));
            }
        }
    }

    #[test]
    fn degenerate_inputs() {
        let g = gram_matrix(&random_reps(4, 2, 1));
        assert!(matches!(
            svm_train(&g, &[0, 0, 0, 0], 1.0, 1e-4),
            Err(Error::Contract(_))
        ));
        assert!(matches!(svm_train(&g, &[0, 1, 0], 1.0, 1e-4), Err(Error::Contract(_))));
        assert!(matches!(svm_train(&g, &[0, 1, 0, 1], 0.0, 1e-4), Err(Error::Config(_))));
    }

    #[test]
    fn model_file_roundtrip() {
        let (reps, labels) = clusters(5, &[[3.0, 0.0], [-3.0, 0.0]], 0.5, 4);
        let model = svm_train(&gram_matrix(&reps), &labels, 1.0, 1e-4).unwrap();
        let bytes = model.encode().unwrap();
        assert_eq!(&bytes[..8], b"CPSVM001");
        assert_eq!(SvmModel::decode(&bytes).unwrap(), model);
        assert!(matches!(
            SvmModel::decode(&bytes[..bytes.len() - 3]),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn metric_examples() {
        assert_eq!(accuracy(&[0, 1, 2, 2], &[0, 1, 1, 2]).unwrap(), 0.75);
        // ranking: p n p → (1/1 + 2/3) / 2
        let ap = average_precision(&[0.9, 0.8, 0.1], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&[3.0, 2.0, 1.0], &[true, true, false]).unwrap(), 1.0);
        // tied scores keep input order
        let ap = average_precision(&[1.0, 1.0], &[false, true]).unwrap();
        assert_eq!(ap, 0.5);
        assert!(average_precision(&[1.0], &[false]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gram_symmetric_psd(seed in 0u64..1000, n in 1usize..12, d in 1usize..8) {
            let g = gram_matrix(&random_reps(n, d, seed));
            let m = nalgebra::DMatrix::from_row_slice(n, n, &g.values);
            for i in 0..n {
                prop_assert!(g.get(i, i) >= 0.0);
                for j in 0..n {
                    prop_assert_eq!(g.get(i, j), g.get(j, i));
                }
            }
            let eig = nalgebra::SymmetricEigen::new(m).eigenvalues;
            let top = eig.iter().cloned().fold(0.0f64, f64::max);
            prop_assert!(eig.iter().all(|e| *e >= -1e-6 * top.max(1e-12)));
        }

        #[test]
        fn dual_feasibility(seed in 0u64..1000, c in 0.05f64..5.0) {
            let reps = random_reps(18, 4, seed);
            let labels: Vec<usize> = (0..18).map(|i| i % 3).collect();
            let model = svm_train(&gram_matrix(&reps), &labels, c, 1e-4).unwrap();
            for beta in &model.dual_coeffs {
                prop_assert!(beta.iter().all(|b| b.abs() <= c + 1e-9));
            }
        }

        #[test]
        fn scaling_covariance(seed in 0u64..1000, s in 0.2f32..5.0) {
            let reps = random_reps(16, 3, seed);
            let labels: Vec<usize> = (0..16).map(|i| (i * 7 + seed as usize) % 2).collect();
            let scaled = FeatureMatrix::new(16, 3, reps.values().iter().map(|v| v * s).collect()).unwrap();
            let g = gram_matrix(&reps);
            let gs = gram_matrix(&scaled);
            let a = svm_train(&g, &labels, 1.0, 1e-6).unwrap();
            let b = svm_train(&gs, &labels, 1.0 / f64::from(s * s), 1e-6).unwrap();
            let probe = random_reps(10, 3, seed + 1);
            let probe_s = FeatureMatrix::new(10, 3, probe.values().iter().map(|v| v * s).collect()).unwrap();
            let ka = cross_kernel(&probe, &reps).unwrap();
            let kb = cross_kernel(&probe_s, &scaled).unwrap();
            for (ra, rb) in ka.iter().zip(&kb) {
                let pa = svm_predict(&a, ra).unwrap();
                let pb = svm_predict(&b, rb).unwrap();
                let margin = (pa.scores[0] - pa.scores[1]).abs();
                if margin > 1e-3 {
                    prop_assert_eq!(pa.label, pb.label);
                }
            }
        }
    }
}

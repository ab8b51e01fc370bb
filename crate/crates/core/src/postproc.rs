//! PCA on local features, power normalization of pooled vectors, and 2-bit
//! feature-sign quantization.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{self, put_f64s, put_u32, ByteReader};
use crate::tensor::FeatureMatrix;

pub const PCA_MAGIC: &[u8; 8] = b"CPPCAM01";
pub const SIGN_MAGIC: &[u8; 8] = b"CPSIGN01";

/// Default cap on descriptors used to fit a PCA model.
pub const DEFAULT_PCA_SAMPLE_CAP: usize = 100_000;

/// Mean and principal directions mapping `input_dim` → `output_dim`.
///
/// `basis` is row-major `output_dim × input_dim`; rows are orthonormal and
/// ordered by descending eigenvalue. With `whiten` set, projections are
/// additionally divided by the square root of their eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub input_dim: usize,
    pub output_dim: usize,
    pub mean: Vec<f64>,
    pub basis: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub whiten: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PcaOptions {
    pub whiten: bool,
}

impl PcaModel {
    pub fn basis_row(&self, k: usize) -> &[f64] {
        &self.basis[k * self.input_dim..(k + 1) * self.input_dim]
    }

    /// Identity projection with zero mean; handy as a no-op stand-in.
    pub fn identity(dim: usize) -> Self {
        let mut basis = vec![0.0; dim * dim];
        for i in 0..dim {
            basis[i * dim + i] = 1.0;
        }
        Self {
            input_dim: dim,
            output_dim: dim,
            mean: vec![0.0; dim],
            basis,
            eigenvalues: vec![1.0; dim],
            whiten: false,
        }
    }

    pub fn project_row(&self, x: &[f32], out: &mut [f32]) {
        for (k, o) in out.iter_mut().enumerate() {
            let row = self.basis_row(k);
            let mut acc = 0.0f64;
            for ((b, xi), m) in row.iter().zip(x).zip(&self.mean) {
                acc += b * (f64::from(*xi) - m);
            }
            if self.whiten {
                acc /= self.eigenvalues[k].max(f64::MIN_POSITIVE).sqrt();
            }
            *o = acc as f32;
        }
    }

    /// Maps projected coordinates back to input space (ignores whitening).
    pub fn reconstruct_row(&self, z: &[f32]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (k, zk) in z.iter().enumerate() {
            for (xi, b) in x.iter_mut().zip(self.basis_row(k)) {
                *xi += f64::from(*zk) * b;
            }
        }
        x
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(PCA_MAGIC);
        put_u32(&mut out, self.input_dim)?;
        put_u32(&mut out, self.output_dim)?;
        out.push(u8::from(self.whiten));
        put_f64s(&mut out, &self.mean);
        put_f64s(&mut out, &self.basis);
        put_f64s(&mut out, &self.eigenvalues);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(PCA_MAGIC)?;
        let input_dim = r.u32()? as usize;
        let output_dim = r.u32()? as usize;
        let whiten = match r.u8()? {
            0 => false,
            1 => true,
            v => return Err(Error::Format(format!("whiten flag must be 0 or 1, got {v}"))),
        };
        if input_dim == 0 || output_dim == 0 || output_dim > input_dim {
            return Err(Error::Validation(format!(
                "pca header dims {input_dim} -> {output_dim} are invalid"
            )));
        }
        let mean = r.f64s(input_dim)?;
        let basis = r.f64s(input_dim * output_dim)?;
        let eigenvalues = r.f64s(output_dim)?;
        r.finish()?;
        Ok(Self {
            input_dim,
            output_dim,
            mean,
            basis,
            eigenvalues,
            whiten,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_file(path.as_ref(), &self.encode()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&io::read_file(path.as_ref())?)
    }
}

pub fn pca_fit(sample: &FeatureMatrix, output_dim: usize) -> Result<PcaModel> {
    pca_fit_with(sample, output_dim, PcaOptions::default())
}

/// Fits PCA by eigendecomposing the sample covariance (denominator n−1).
///
/// Each basis row is sign-fixed so that its largest-magnitude entry is
/// positive.
pub fn pca_fit_with(sample: &FeatureMatrix, output_dim: usize, opts: PcaOptions) -> Result<PcaModel> {
    let n = sample.count();
    let dim = sample.dim();
    if n < 2 {
        return Err(Error::Contract(format!("pca needs at least 2 samples, got {n}")));
    }
    if output_dim == 0 || output_dim > dim.min(n - 1) {
        return Err(Error::Contract(format!(
            "pca output_dim {output_dim} must be in 1..={} for {n} samples of dim {dim}",
            dim.min(n - 1)
        )));
    }

    let mut mean = vec![0.0f64; dim];
    for row in sample.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += f64::from(*v);
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered = DMatrix::from_fn(n, dim, |i, j| f64::from(sample.row(i)[j]) - mean[j]);
    let mut cov = centered.transpose() * &centered;
    cov /= (n - 1) as f64;
    // symmetrize away rounding asymmetry before the symmetric solver
    for i in 0..dim {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let threshold = top * 1e-10 * dim as f64;
    let achievable = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > threshold && eig.eigenvalues[i] > 0.0)
        .count();
    if achievable < output_dim {
        return Err(Error::Rank {
            requested: output_dim,
            achievable,
        });
    }

    let mut basis = Vec::with_capacity(output_dim * dim);
    let mut eigenvalues = Vec::with_capacity(output_dim);
    for &col in order.iter().take(output_dim) {
        let v = eig.eigenvectors.column(col);
        let norm = v.norm();
        let pivot = (0..dim)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .unwrap();
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        basis.extend(v.iter().map(|x| sign * x / norm));
        eigenvalues.push(eig.eigenvalues[col].max(0.0));
    }

    Ok(PcaModel {
        input_dim: dim,
        output_dim,
        mean,
        basis,
        eigenvalues,
        whiten: opts.whiten,
    })
}

pub fn pca_project(features: &FeatureMatrix, model: &PcaModel) -> Result<FeatureMatrix> {
    if features.dim() != model.input_dim {
        return Err(Error::Contract(format!(
            "pca expects dim {}, features have dim {}",
            model.input_dim,
            features.dim()
        )));
    }
    let mut values = vec![0.0f32; features.count() * model.output_dim];
    for (row, out) in features.rows().zip(values.chunks_exact_mut(model.output_dim)) {
        model.project_row(row, out);
    }
    FeatureMatrix::new(features.count(), model.output_dim, values)
}

/// Mean squared reconstruction error per sample (summed over dimensions).
pub fn reconstruction_mse(sample: &FeatureMatrix, model: &PcaModel) -> Result<f64> {
    let unwhitened = PcaModel {
        whiten: false,
        ..model.clone()
    };
    let z = pca_project(sample, &unwhitened)?;
    let mut total = 0.0;
    for (x, zr) in sample.rows().zip(z.rows()) {
        let xr = unwhitened.reconstruct_row(zr);
        total += x.iter().zip(&xr).map(|(a, b)| (f64::from(*a) - b).powi(2)).sum::<f64>();
    }
    Ok(total / sample.count().max(1) as f64)
}

/// Uniform subsample of at most `cap` rows without replacement, kept in
/// original order.
pub fn subsample_rows(m: &FeatureMatrix, cap: usize, seed: u64) -> FeatureMatrix {
    if m.count() <= cap {
        return m.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, m.count(), cap).into_vec();
    picked.sort_unstable();
    m.select_rows(&picked)
}

/// Elementwise `sign(v)·sqrt(|v|)`.
pub fn power_normalize(v: &[f32]) -> Vec<f32> {
    v.iter()
        .map(|x| x.signum() * x.abs().sqrt())
        .map(|x| if x == 0.0 { 0.0 } else { x })
        .collect()
}

/// Scales to unit Euclidean norm; the zero vector is returned unchanged.
pub fn l2_normalize(v: &[f32]) -> Vec<f32> {
    let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| (f64::from(*x) / norm) as f32).collect()
}

/// Signs packed at 2 bits per dimension: `00` zero, `01` positive, `10`
/// negative. Dimension `i` lives in byte `i/4` at bit offset `2·(i%4)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PackedSignVector {
    dim: usize,
    bits: Vec<u8>,
}

const CODE_POS: u8 = 0b01;
const CODE_NEG: u8 = 0b10;
const LOW_BITS: u64 = 0x5555_5555_5555_5555;

impl PackedSignVector {
    pub fn byte_len(dim: usize) -> usize {
        dim.div_ceil(4)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bits
    }

    /// Validates that no `11` codes and no bits past `dim` are set.
    pub fn from_bytes(dim: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != Self::byte_len(dim) {
            return Err(Error::Validation(format!(
                "{dim} signs need {} bytes, got {}",
                Self::byte_len(dim),
                bits.len()
            )));
        }
        for (i, b) in bits.iter().enumerate() {
            for slot in 0..4 {
                let code = (b >> (2 * slot)) & 0b11;
                if code == 0b11 {
                    return Err(Error::Corruption(format!(
                        "invalid sign code 11 at dimension {}",
                        i * 4 + slot
                    )));
                }
                if code != 0 && i * 4 + slot >= dim {
                    return Err(Error::Corruption(format!("bits set past dimension {dim}")));
                }
            }
        }
        Ok(Self { dim, bits })
    }

    pub fn get(&self, i: usize) -> i8 {
        match (self.bits[i / 4] >> (2 * (i % 4))) & 0b11 {
            CODE_POS => 1,
            CODE_NEG => -1,
            _ => 0,
        }
    }

    pub fn unpack(&self) -> Vec<i8> {
        (0..self.dim).map(|i| self.get(i)).collect()
    }

    pub fn nonzero_count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn negated(&self) -> Self {
        let bits = self
            .bits
            .iter()
            .map(|b| ((b & 0x55) << 1) | ((b & 0xAA) >> 1))
            .collect();
        Self { dim: self.dim, bits }
    }

    fn words(&self) -> impl Iterator<Item = u64> + '_ {
        self.bits.chunks(8).map(|chunk| {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            u64::from_le_bytes(buf)
        })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(12 + self.bits.len());
        out.extend_from_slice(SIGN_MAGIC);
        put_u32(&mut out, self.dim)?;
        out.extend_from_slice(&self.bits);
        Ok(out)
    }

    fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        r.expect_magic(SIGN_MAGIC)?;
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(Error::Validation("sign vector dim must be positive".into()));
        }
        let bits = r.take(Self::byte_len(dim))?.to_vec();
        Self::from_bytes(dim, bits)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let v = Self::read(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

/// Concatenated sign-vector records, one per image.
pub fn encode_sign_vectors(vs: &[PackedSignVector]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for v in vs {
        out.extend(v.encode()?);
    }
    Ok(out)
}

pub fn decode_sign_vectors(bytes: &[u8]) -> Result<Vec<PackedSignVector>> {
    let mut r = ByteReader::new(bytes);
    let mut out = Vec::new();
    while !r.at_end() {
        out.push(PackedSignVector::read(&mut r)?);
    }
    Ok(out)
}

pub fn sign_quantize(v: &[f32]) -> PackedSignVector {
    let mut bits = vec![0u8; PackedSignVector::byte_len(v.len())];
    for (i, x) in v.iter().enumerate() {
        let code = if *x > 0.0 {
            CODE_POS
        } else if *x < 0.0 {
            CODE_NEG
        } else {
            0
        };
        bits[i / 4] |= code << (2 * (i % 4));
    }
    PackedSignVector { dim: v.len(), bits }
}

/// `Σ sign_a(i)·sign_b(i)` straight from the packed words.
pub fn packed_dot(a: &PackedSignVector, b: &PackedSignVector) -> Result<i64> {
    if a.dim != b.dim {
        return Err(Error::Contract(format!("packed_dot on dims {} and {}", a.dim, b.dim)));
    }
    let mut agree = 0i64;
    let mut disagree = 0i64;
    for (wa, wb) in a.words().zip(b.words()) {
        let (pa, na) = (wa & LOW_BITS, (wa >> 1) & LOW_BITS);
        let (pb, nb) = (wb & LOW_BITS, (wb >> 1) & LOW_BITS);
        agree += i64::from((pa & pb).count_ones() + (na & nb).count_ones());
        disagree += i64::from((pa & nb).count_ones() + (na & pb).count_ones());
    }
    Ok(agree - disagree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..n * d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z as f32
            })
            .collect();
        FeatureMatrix::new(n, d, values).unwrap()
    }

    #[test]
    fn rank_one_line() {
        let dir = [2.0f64, -3.0, -6.0];
        let norm = 7.0;
        let rows: Vec<Vec<f32>> = (0..10)
            .map(|i| {
                let t = i as f64 - 4.0;
                dir.iter().map(|d| (d * t + 0.5) as f32).collect()
            })
            .collect();
        let m = FeatureMatrix::from_rows(&rows).unwrap();
        let model = pca_fit(&m, 1).unwrap();
        let dot: f64 = model.basis_row(0).iter().zip(&dir).map(|(a, b)| a * b / norm).sum();
        assert!(dot.abs() >= 1.0 - 1e-5, "dot {dot}");
        // the largest-magnitude entry is forced positive
        assert!(model.basis_row(0)[2] > 0.0);
        assert!(matches!(
            pca_fit(&m, 2),
            Err(Error::Rank {
                requested: 2,
                achievable: 1
            })
        ));
    }

    #[test]
    fn full_rank_reconstruction_is_exact() {
        let m = random_matrix(200, 6, 3);
        let model = pca_fit(&m, 6).unwrap();
        assert!(reconstruction_mse(&m, &model).unwrap() < 1e-5);
    }

    #[test]
    fn contract_errors() {
        let m = random_matrix(1, 3, 0);
        assert!(matches!(pca_fit(&m, 1), Err(Error::Contract(_))));
        let m = random_matrix(4, 5, 0);
        assert!(matches!(pca_fit(&m, 4), Err(Error::Contract(_))));
        assert!(matches!(pca_fit(&m, 0), Err(Error::Contract(_))));
        let model = pca_fit(&m, 2).unwrap();
        assert!(matches!(
            pca_project(&random_matrix(2, 4, 0), &model),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn basis_orthonormal_and_sorted() {
        let m = random_matrix(120, 10, 8);
        let model = pca_fit(&m, 7).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let d: f64 = model
                    .basis_row(i)
                    .iter()
                    .zip(model.basis_row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-5);
            }
        }
        assert!(model.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn projecting_the_mean_gives_zero() {
        let m = random_matrix(50, 4, 1);
        let model = pca_fit(&m, 3).unwrap();
        let mean: Vec<f32> = model.mean.iter().map(|v| *v as f32).collect();
        let z = pca_project(&FeatureMatrix::from_rows(&[mean]).unwrap(), &model).unwrap();
        assert!(z.values().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn identity_model_passes_through() {
        let m = random_matrix(5, 4, 2);
        assert_eq!(pca_project(&m, &PcaModel::identity(4)).unwrap(), m);
    }

    #[test]
    fn projection_matches_row_loop() {
        let m = random_matrix(40, 8, 4);
        let model = pca_fit(&m, 3).unwrap();
        let z = pca_project(&m, &model).unwrap();
        for i in 0..m.count() {
            for k in 0..3 {
                let mut acc = 0.0f64;
                for j in 0..8 {
                    acc += model.basis[k * 8 + j] * (f64::from(m.row(i)[j]) - model.mean[j]);
                }
                assert!((f64::from(z.row(i)[k]) - acc).abs() <= 1e-6 * acc.abs().max(1.0));
            }
        }
    }

    #[test]
    fn projected_components_uncorrelated() {
        let m = random_matrix(300, 12, 6);
        let model = pca_fit(&m, 6).unwrap();
        let z = pca_project(&m, &model).unwrap();
        for a in 0..6 {
            for b in 0..6 {
                let cov: f64 =
                    z.rows().map(|r| f64::from(r[a]) * f64::from(r[b])).sum::<f64>() / (z.count() - 1) as f64;
                if a == b {
                    assert!((cov - model.eigenvalues[a]).abs() < 1e-4 * model.eigenvalues[a].max(1.0));
                } else {
                    assert!(cov.abs() <= 1e-4, "cov({a},{b}) = {cov}");
                }
            }
        }
    }

    #[test]
    fn whitening_gives_unit_variance() {
        let m = random_matrix(200, 5, 9);
        let model = pca_fit_with(&m, 3, PcaOptions { whiten: true }).unwrap();
        let z = pca_project(&m, &model).unwrap();
        for k in 0..3 {
            let var: f64 = z.rows().map(|r| f64::from(r[k]).powi(2)).sum::<f64>() / 199.0;
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn pca_file_roundtrip() {
        let model = pca_fit(&random_matrix(30, 5, 1), 2).unwrap();
        assert_eq!(PcaModel::decode(&model.encode().unwrap()).unwrap(), model);
        let mut bytes = model.encode().unwrap();
        bytes.pop();
        assert!(matches!(PcaModel::decode(&bytes), Err(Error::Corruption(_))));
    }

    #[test]
    fn subsample_is_seeded_and_capped() {
        let m = random_matrix(50, 2, 1);
        let a = subsample_rows(&m, 10, 3);
        assert_eq!(a.count(), 10);
        assert_eq!(a, subsample_rows(&m, 10, 3));
        assert_eq!(subsample_rows(&m, 100, 3), m);
    }

    #[test]
    fn power_normalize_examples() {
        assert_eq!(power_normalize(&[4.0, -9.0, 0.0]), vec![2.0, -3.0, 0.0]);
        assert_eq!(power_normalize(&[-1.0, 0.0, 1.0, -0.0]), vec![-1.0, 0.0, 1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f32> = (0..100).map(|_| rng.gen_range(-50.0..50.0)).collect();
        for (x, y) in v.iter().zip(power_normalize(&v)) {
            let want = f64::from(*x).signum() * f64::from(*x).abs().sqrt();
            assert!((f64::from(y) - want).abs() <= 1e-7 * want.abs().max(1.0));
        }
    }

    #[test]
    fn l2_normalize_unit_norm() {
        let v = l2_normalize(&[3.0, 4.0]);
        assert!((v[0] - 0.6).abs() < 1e-7 && (v[1] - 0.8).abs() < 1e-7);
        assert_eq!(l2_normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn sign_quantize_examples() {
        let q = sign_quantize(&[2.5, -0.1, 0.0, 7.0]);
        assert_eq!(q.unpack(), vec![1, -1, 0, 1]);
        assert_eq!(q.bytes(), &[0b01_00_10_01]);
        let z = sign_quantize(&[0.0; 9]);
        assert_eq!(z.bytes(), &[0, 0, 0]);
        assert_eq!(sign_quantize(&[-0.0]).unpack(), vec![0]);
    }

    #[test]
    fn packed_dot_examples() {
        let v = sign_quantize(&[1.0, 0.0, -2.0, 3.0, 0.0, -1.0]);
        assert_eq!(packed_dot(&v, &v).unwrap(), 4);
        assert_eq!(packed_dot(&v, &v.negated()).unwrap(), -4);
        let w = sign_quantize(&[1.0; 5]);
        assert!(matches!(packed_dot(&v, &w), Err(Error::Contract(_))));
    }

    #[test]
    fn invalid_code_rejected() {
        assert!(matches!(
            PackedSignVector::from_bytes(4, vec![0b11]),
            Err(Error::Corruption(_))
        ));
        assert!(matches!(
            PackedSignVector::from_bytes(1, vec![0b0100]),
            Err(Error::Corruption(_))
        ));
        assert!(PackedSignVector::from_bytes(2, vec![0b1001]).is_ok());
    }

    #[test]
    fn sign_file_records() {
        let a = sign_quantize(&[1.0, -1.0, 0.0]);
        let b = sign_quantize(&[0.0, 2.0, -3.0, 4.0, 5.0]);
        let bytes = a.encode().unwrap();
        assert_eq!(&bytes[..8], b"CPSIGN01");
        assert_eq!(bytes.len(), 8 + 4 + 1);
        assert_eq!(PackedSignVector::decode(&bytes).unwrap(), a);
        let both = encode_sign_vectors(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(decode_sign_vectors(&both).unwrap(), vec![a, b]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pack_roundtrip_is_sign(v in proptest::collection::vec(-3i8..=3, 1..300)) {
                let x: Vec<f32> = v.iter().map(|s| f32::from(*s) * 0.7).collect();
                let q = sign_quantize(&x);
                prop_assert_eq!(q.bytes().len(), x.len().div_ceil(4));
                let signs: Vec<i8> = v.iter().map(|s| s.signum()).collect();
                prop_assert_eq!(q.unpack(), signs.clone());
                let rebuilt = PackedSignVector::from_bytes(q.dim(), q.bytes().to_vec()).unwrap();
                prop_assert_eq!(&rebuilt, &q);
                let back: Vec<f32> = signs.iter().map(|s| f32::from(*s)).collect();
                prop_assert_eq!(sign_quantize(&back), q);
            }

            #[test]
            fn packed_dot_matches_unpacked(a in proptest::collection::vec(-1i8..=1, 1..200), seed in 0u64..100) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let b: Vec<i8> = a.iter().map(|_| rand::Rng::gen_range(&mut rng, -1..=1)).collect();
                let qa = sign_quantize(&a.iter().map(|s| f32::from(*s)).collect::<Vec<_>>());
                let qb = sign_quantize(&b.iter().map(|s| f32::from(*s)).collect::<Vec<_>>());
                let want: i64 = a.iter().zip(&b).map(|(x, y)| i64::from(x * y)).sum();
                prop_assert_eq!(packed_dot(&qa, &qb).unwrap(), want);
            }

            #[test]
            fn power_normalize_keeps_signs(v in proptest::collection::vec(-1e4f32..1e4, 1..64)) {
                let p = power_normalize(&v);
                prop_assert_eq!(sign_quantize(&p), sign_quantize(&v));
                for (x, y) in v.iter().zip(&p) {
                    prop_assert_eq!(x.partial_cmp(&0.0), y.partial_cmp(&0.0));
                }
            }

            #[test]
            fn reconstruction_error_nonincreasing(seed in 0u64..20) {
                let m = random_matrix(60, 8, seed);
                let mut prev = f64::INFINITY;
                for d in 1..=8 {
                    let err = reconstruction_mse(&m, &pca_fit(&m, d).unwrap()).unwrap();
                    prop_assert!(err <= prev + 1e-9);
                    prev = err;
                }
            }
        }
    }
}

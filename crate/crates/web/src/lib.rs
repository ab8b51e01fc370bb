//! WebAssembly bindings for the demo page in `www/`.
//!
//! Everything runs in memory on the synthetic co-occurrence images: draw a
//! sample, look at its pooled vector under a scheme, or train and score
//! one SVM per scheme.

use crosspool::encode::{extract_part, pool_part, PartFeatures};
use crosspool::postproc::sign_quantize;
use crosspool::svm::{cross_kernel, cross_kernel_packed, gram_matrix_packed};
use crosspool::synth::{cooccurrence_dataset, demo_network, SynthImage, SynthParams, CLASS_NAMES};
use crosspool::{
    gram_matrix, pca_fit, svm_predict, svm_train, EncoderConfig, FeatureMatrix, NetworkSpec, PcaModel, PoolingScheme,
};
use serde_json::json;
use wasm_bindgen::prelude::*;

const NET_SEED: u64 = 7;
const PCA_DIM: usize = 16;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn sample(class: usize, seed: u64) -> Result<SynthImage, String> {
    if class >= CLASS_NAMES.len() {
        return Err(format!("class must be below {}", CLASS_NAMES.len()));
    }
    let params = SynthParams {
        train_per_class: 1,
        test_per_class: 1,
        ..SynthParams::default()
    };
    let mut data = cooccurrence_dataset(&params, seed).map_err(err)?;
    let pos = data
        .train
        .iter()
        .position(|i| i.label == class)
        .expect("one image per class");
    Ok(data.train.swap_remove(pos))
}

/// RGBA pixels of a synthetic image: channel 0 in red, channel 1 in cyan.
pub fn render_rgba(class: usize, seed: u64) -> Result<Vec<u8>, String> {
    let img = sample(class, seed)?;
    let t = &img.tensor;
    let to_byte = |v: f32| (v.clamp(0.0, 1.5) / 1.5 * 255.0) as u8;
    let mut out = Vec::with_capacity(t.height() * t.width() * 4);
    for r in 0..t.height() {
        for c in 0..t.width() {
            let (a, b) = (to_byte(t.get(r, c, 0)), to_byte(t.get(r, c, 1)));
            out.extend_from_slice(&[a, b, b, 255]);
        }
    }
    Ok(out)
}

fn encoder(scheme: &str) -> Result<(EncoderConfig, NetworkSpec), String> {
    let scheme: PoolingScheme = scheme.parse().map_err(err)?;
    let enc = EncoderConfig {
        scheme,
        ..EncoderConfig::default()
    };
    Ok((enc, demo_network(NET_SEED).map_err(err)?))
}

fn extract(images: &[SynthImage], net: &NetworkSpec, enc: &EncoderConfig) -> Result<Vec<PartFeatures>, String> {
    let resolved = enc.resolve(net).map_err(err)?;
    images
        .iter()
        .map(|i| extract_part(&i.tensor, net, enc, &resolved).map_err(err))
        .collect()
}

fn fit_pca(parts: &[PartFeatures]) -> Result<PcaModel, String> {
    let mut sample = FeatureMatrix::empty(parts[0].set.features.dim()).map_err(err)?;
    for p in parts {
        for row in p.set.features.rows() {
            sample.push_row(row).map_err(err)?;
        }
    }
    pca_fit(&sample, PCA_DIM).map_err(err)
}

/// Pooled vector of one sample, with PCA fitted on that image's own
/// local features.
pub fn pooled_vector(class: usize, seed: u64, scheme: &str) -> Result<Vec<f32>, String> {
    let (enc, net) = encoder(scheme)?;
    let parts = extract(&[sample(class, seed)?], &net, &enc)?;
    let pca = fit_pca(&parts)?;
    pool_part(&parts[0], &enc, Some(&pca)).map_err(err)
}

/// Test accuracy per scheme as a JSON array of
/// `{scheme, dim, accuracy, quantized_accuracy}`.
pub fn compare_json(per_class: usize, seed: u64, schemes: &str) -> Result<String, String> {
    if per_class == 0 {
        return Err("need at least one image per class".into());
    }
    let params = SynthParams {
        train_per_class: per_class,
        test_per_class: per_class,
        ..SynthParams::default()
    };
    let data = cooccurrence_dataset(&params, seed).map_err(err)?;
    let train_labels: Vec<usize> = data.train.iter().map(|i| i.label).collect();
    let mut rows = Vec::new();
    for scheme in schemes.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (enc, net) = encoder(scheme)?;
        let train_parts = extract(&data.train, &net, &enc)?;
        let test_parts = extract(&data.test, &net, &enc)?;
        let pca = fit_pca(&train_parts)?;
        let pool = |parts: &[PartFeatures]| -> Result<FeatureMatrix, String> {
            let reps = parts
                .iter()
                .map(|p| pool_part(p, &enc, Some(&pca)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(err)?;
            FeatureMatrix::from_rows(&reps).map_err(err)
        };
        let (train, test) = (pool(&train_parts)?, pool(&test_parts)?);

        let score = |gram, rows: Vec<Vec<f64>>| -> Result<f64, String> {
            let model = svm_train(&gram, &train_labels, 1.0, 1e-4).map_err(err)?;
            let mut hits = 0;
            for (row, img) in rows.iter().zip(&data.test) {
                hits += usize::from(svm_predict(&model, row).map_err(err)?.label == img.label);
            }
            Ok(hits as f64 / data.test.len() as f64)
        };
        let full = score(gram_matrix(&train), cross_kernel(&test, &train).map_err(err)?)?;
        let ptrain: Vec<_> = train.rows().map(sign_quantize).collect();
        let ptest: Vec<_> = test.rows().map(sign_quantize).collect();
        let quant = score(
            gram_matrix_packed(&ptrain).map_err(err)?,
            cross_kernel_packed(&ptest, &ptrain).map_err(err)?,
        )?;
        rows.push(json!({
            "scheme": enc.scheme.to_string(),
            "dim": train.dim(),
            "accuracy": full,
            "quantized_accuracy": quant,
        }));
    }
    if rows.is_empty() {
        return Err("no schemes given".into());
    }
    serde_json::to_string(&rows).map_err(err)
}

#[wasm_bindgen(js_name = renderSample)]
pub fn render_sample(class: usize, seed: u32) -> Result<Vec<u8>, JsError> {
    render_rgba(class, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = pooledVector)]
pub fn pooled_vector_js(class: usize, seed: u32, scheme: &str) -> Result<Vec<f32>, JsError> {
    pooled_vector(class, u64::from(seed), scheme).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = compareSchemes)]
pub fn compare_schemes_js(per_class: usize, seed: u32, schemes: &str) -> Result<String, JsError> {
    compare_json(per_class, u64::from(seed), schemes).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = classNames)]
pub fn class_names() -> Vec<String> {
    CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

pub mod fd;
pub mod knn;
pub mod matching;

/// Cosine clamped to `[0, 1]`, zero for a zero vector.
pub fn clamped_cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu * nv)).clamp(0.0, 1.0)
}

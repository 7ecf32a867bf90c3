use nlctd_core::nlc::{CrossFusionModel, ModelConfig};
use nlctd_core::trainer::{self, model_tensors_mut, TrainCandidate, TrainExample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;

/// Central differences of `trainer::loss` for every scalar parameter,
/// grouped by tensor in `Gradients::tensors` order.
pub fn numeric_gradients(model: &CrossFusionModel, batch: &[TrainExample]) -> Vec<(String, Vec<f64>)> {
    let mut probe = model.clone();
    let shapes: Vec<(String, usize)> = model_tensors_mut(&mut probe)
        .into_iter()
        .map(|(n, t)| (n, t.len()))
        .collect();
    let mut out = Vec::new();
    for (t, (name, len)) in shapes.into_iter().enumerate() {
        let mut grad = Vec::with_capacity(len);
        for i in 0..len {
            let orig = model_tensors_mut(&mut probe)[t].1[i];
            model_tensors_mut(&mut probe)[t].1[i] = orig + EPS;
            let up = trainer::loss(&probe, batch).unwrap();
            model_tensors_mut(&mut probe)[t].1[i] = orig - EPS;
            let down = trainer::loss(&probe, batch).unwrap();
            model_tensors_mut(&mut probe)[t].1[i] = orig;
            grad.push((up - down) / (2.0 * EPS));
        }
        out.push((name, grad));
    }
    out
}

/// `|a - n| / max(|a| + |n|, 1e-8)` in the Euclidean norm.
pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nn).max(1e-8)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// A small random model (d=4, d_h=6) and a batch of 3 queries.
pub fn random_problem(seed: u64) -> (CrossFusionModel, Vec<TrainExample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let model = CrossFusionModel::new(&ModelConfig {
        dim: 4,
        hidden: 6,
        head_widths: vec![5],
        lambda: rng.random_range(0.1..2.0),
        seed,
    })
    .unwrap();
    let batch = (0..3)
        .map(|q| TrainExample {
            query_id: format!("q{q}"),
            condition: rand_vec(&mut rng, 4),
            candidates: (0..2 + q)
                .map(|k| TrainCandidate {
                    table_id: format!("t{k}"),
                    columns: (0..rng.random_range(1..4)).map(|_| rand_vec(&mut rng, 4)).collect(),
                    metadata: rand_vec(&mut rng, 4),
                    table_score: rng.random_range(0.0..1.0),
                    label: [0.0, 0.5, 1.0][rng.random_range(0..3)],
                })
                .collect(),
        })
        .collect();
    (model, batch)
}

/// Worst per-tensor relative error between `backward` and finite differences.
pub fn max_gradient_error(seed: u64) -> (f64, String) {
    let (model, batch) = random_problem(seed);
    let analytic = trainer::backward(&model, &batch).unwrap();
    let numeric = numeric_gradients(&model, &batch);
    let mut worst = (0.0, String::new());
    for ((name, a), (_, n)) in analytic.tensors().into_iter().zip(&numeric) {
        let e = relative_error(a, n);
        if e > worst.0 {
            worst = (e, name);
        }
    }
    worst
}

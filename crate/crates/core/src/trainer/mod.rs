//! Pointwise MSE training of the condition scorer.
//!
//! For a batch of queries `Q`, each with a sampled candidate set `T_q`:
//!
//! ```text
//! L = 1/|Q| * sum_q 1/|T_q| * sum_k (MLP(h_c) + lambda * rho_t - y_k)^2
//! ```
//!
//! Gradients are derived by hand through the head, both tanh branches and
//! the max-pool (which routes each component to its winning column). Plain
//! SGD; `lambda` is only updated when `optimize_lambda` is set.

mod checkpoint;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::nlc::{CrossFusionModel, DenseLayer, ModelError};

pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("loss diverged (non-finite) in epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainCandidate {
    pub table_id: String,
    pub columns: Vec<Vec<f64>>,
    pub metadata: Vec<f64>,
    pub table_score: f64,
    /// Gold grade normalized to `[0, 1]`.
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub query_id: String,
    pub condition: Vec<f64>,
    pub candidates: Vec<TrainCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Queries per SGD step.
    pub batch_size: usize,
    pub negatives_per_query: usize,
    pub seed: u64,
    pub optimize_lambda: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 8,
            negatives_per_query: 32,
            seed: 0,
            optimize_lambda: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter-shaped gradient container, tensors in checkpoint order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub interaction: DenseLayer,
    pub metadata: DenseLayer,
    pub head: Vec<DenseLayer>,
    pub lambda: f64,
}

impl Gradients {
    pub fn zeros_like(model: &CrossFusionModel) -> Self {
        let z = |l: &DenseLayer| DenseLayer::zeros(l.out_dim(), l.in_dim());
        Gradients {
            interaction: z(&model.interaction),
            metadata: z(&model.metadata),
            head: model.head.layers.iter().map(z).collect(),
            lambda: 0.0,
        }
    }

    /// Named flat views: `W1, b1, W2, b2, head.{i}.W, head.{i}.b, lambda`.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("W1".into(), &self.interaction.weight.data),
            ("b1".into(), &self.interaction.bias),
            ("W2".into(), &self.metadata.weight.data),
            ("b2".into(), &self.metadata.bias),
        ];
        for (i, l) in self.head.iter().enumerate() {
            out.push((format!("head.{i}.W"), &l.weight.data));
            out.push((format!("head.{i}.b"), &l.bias));
        }
        out.push(("lambda".into(), std::slice::from_ref(&self.lambda)));
        out
    }

    fn add(&mut self, other: &Gradients) {
        fn acc(a: &mut DenseLayer, b: &DenseLayer) {
            a.weight.data.iter_mut().zip(&b.weight.data).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
        acc(&mut self.interaction, &other.interaction);
        acc(&mut self.metadata, &other.metadata);
        for (a, b) in self.head.iter_mut().zip(&other.head) {
            acc(a, b);
        }
        self.lambda += other.lambda;
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| *v == 0.0))
    }
}

/// Same names and order as [`Gradients::tensors`].
pub fn model_tensors_mut(model: &mut CrossFusionModel) -> Vec<(String, &mut [f64])> {
    let mut out: Vec<(String, &mut [f64])> = vec![
        ("W1".into(), &mut model.interaction.weight.data),
        ("b1".into(), &mut model.interaction.bias),
        ("W2".into(), &mut model.metadata.weight.data),
        ("b2".into(), &mut model.metadata.bias),
    ];
    for (i, l) in model.head.layers.iter_mut().enumerate() {
        out.push((format!("head.{i}.W"), &mut l.weight.data));
        out.push((format!("head.{i}.b"), &mut l.bias));
    }
    out.push(("lambda".into(), std::slice::from_mut(&mut model.lambda)));
    out
}

/// Prediction for one candidate: `MLP(h_c) + lambda * rho_t`.
pub fn predict(model: &CrossFusionModel, condition: &[f64], cand: &TrainCandidate) -> Result<f64, ModelError> {
    let s = model.condition_score(&cand.columns, &cand.metadata, condition)?;
    Ok(s.value + model.lambda * cand.table_score)
}

fn example_loss(model: &CrossFusionModel, ex: &TrainExample) -> Result<f64, TrainError> {
    if ex.candidates.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut sum = 0.0;
    for cand in &ex.candidates {
        let r = predict(model, &ex.condition, cand)? - cand.label;
        sum += r * r;
    }
    Ok(sum / ex.candidates.len() as f64)
}

pub fn loss(model: &CrossFusionModel, batch: &[TrainExample]) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let per_query = batch
        .par_iter()
        .map(|ex| example_loss(model, ex))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_query.iter().sum::<f64>() / batch.len() as f64)
}

/// Gradient of [`loss`] with respect to every parameter, including
/// `lambda` (whether or not training updates it).
pub fn backward(model: &CrossFusionModel, batch: &[TrainExample]) -> Result<Gradients, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let q = batch.len() as f64;
    let parts = batch
        .par_iter()
        .map(|ex| {
            if ex.candidates.is_empty() {
                return Err(TrainError::EmptyBatch);
            }
            let mut g = Gradients::zeros_like(model);
            let scale = 2.0 / (q * ex.candidates.len() as f64);
            for cand in &ex.candidates {
                accumulate_candidate(model, &ex.condition, cand, scale, &mut g)?;
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let mut total = Gradients::zeros_like(model);
    for g in &parts {
        total.add(g);
    }
    Ok(total)
}

fn accumulate_candidate(
    model: &CrossFusionModel,
    condition: &[f64],
    cand: &TrainCandidate,
    scale: f64,
    g: &mut Gradients,
) -> Result<(), TrainError> {
    let fwd = model.forward(&cand.columns, &cand.metadata, condition)?;
    let residual = fwd.value + model.lambda * cand.table_score - cand.label;
    let d_pred = scale * residual;
    if d_pred == 0.0 {
        return Ok(());
    }
    g.lambda += d_pred * cand.table_score;

    // Head, last layer first. Hidden layers are tanh, the output is linear.
    let layers = &model.head.layers;
    let mut delta = vec![d_pred];
    for l in (0..layers.len()).rev() {
        let input = if l == 0 { &fwd.head_input } else { &fwd.head_acts[l - 1] };
        g.head[l].weight.add_outer(&delta, input);
        g.head[l].bias.iter_mut().zip(&delta).for_each(|(b, d)| *b += d);
        let mut d_input = layers[l].weight.matvec_t(&delta);
        if l > 0 {
            for (d, a) in d_input.iter_mut().zip(&fwd.head_acts[l - 1]) {
                *d *= 1.0 - a * a;
            }
        }
        delta = d_input;
    }
    let (d_ct, d_cm) = delta.split_at(model.hidden);

    // Metadata branch.
    let dz: Vec<f64> = d_cm.iter().zip(&fwd.h_cm).map(|(d, h)| d * (1.0 - h * h)).collect();
    g.metadata.weight.add_outer(&dz, &fwd.meta_features);
    g.metadata.bias.iter_mut().zip(&dz).for_each(|(b, d)| *b += d);

    // Table branch: each pooled component flows back to its argmax column.
    let branch = &fwd.table;
    for (j, (col, h)) in cand.columns.iter().zip(&branch.column_hidden).enumerate() {
        let mut dz = vec![0.0; model.hidden];
        let mut any = false;
        for i in 0..model.hidden {
            if branch.argmax[i] == j && d_ct[i] != 0.0 {
                dz[i] = d_ct[i] * (1.0 - h[i] * h[i]);
                any = true;
            }
        }
        if !any {
            continue;
        }
        let x = crate::nlc::interaction_features(col, condition)?;
        g.interaction.weight.add_outer(&dz, &x);
        g.interaction.bias.iter_mut().zip(&dz).for_each(|(b, d)| *b += d);
    }
    Ok(())
}

/// `theta -= lr * grad`; `lambda` only when `optimize_lambda`, and kept >= 0.
pub fn sgd_step(model: &mut CrossFusionModel, grads: &Gradients, lr: f64, optimize_lambda: bool) {
    for ((name, param), (_, grad)) in model_tensors_mut(model).into_iter().zip(grads.tensors()) {
        if name == "lambda" && !optimize_lambda {
            continue;
        }
        for (p, g) in param.iter_mut().zip(grad) {
            *p -= lr * g;
        }
    }
    model.lambda = model.lambda.max(0.0);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    /// Full-set loss before the first step.
    pub initial: f64,
    /// Full-set loss after each epoch.
    pub epochs: Vec<f64>,
}

impl LossCurve {
    pub fn last(&self) -> f64 {
        self.epochs.last().copied().unwrap_or(self.initial)
    }
}

pub fn train(
    mut model: CrossFusionModel,
    examples: &[TrainExample],
    config: &TrainConfig,
) -> Result<(CrossFusionModel, LossCurve), TrainError> {
    config.validate()?;
    model.validate()?;
    if examples.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let initial = loss(&model, examples)?;
    if !initial.is_finite() {
        return Err(TrainError::DivergenceDetected { epoch: 0 });
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let grads = backward(&model, &batch)?;
            sgd_step(&mut model, &grads, config.learning_rate, config.optimize_lambda);
        }
        let epoch_loss = loss(&model, examples)?;
        if !epoch_loss.is_finite() {
            return Err(TrainError::DivergenceDetected { epoch });
        }
        log::debug!("epoch {epoch}: loss {epoch_loss:.6}");
        curve.push(epoch_loss);
    }
    Ok((
        model,
        LossCurve {
            initial,
            epochs: curve,
        },
    ))
}

/// All positives plus up to `negatives` ids drawn without replacement from
/// `negative_pool` (positives excluded). Deterministic per `rng` state;
/// the result keeps positives first, then negatives in draw order.
pub fn sample_candidates(
    positives: &[String],
    negative_pool: &[String],
    negatives: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    let mut pool: Vec<&String> = negative_pool.iter().filter(|id| !positives.contains(id)).collect();
    pool.sort();
    pool.dedup();
    pool.shuffle(rng);
    positives
        .iter()
        .cloned()
        .chain(pool.into_iter().take(negatives).cloned())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlc::{FusionHead, ModelConfig};
    use rand::Rng;

    fn model(seed: u64) -> CrossFusionModel {
        CrossFusionModel::new(&ModelConfig {
            dim: 4,
            hidden: 6,
            head_widths: vec![5],
            lambda: 0.7,
            seed,
        })
        .unwrap()
    }

    fn vec_in(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn example(rng: &mut ChaCha8Rng, id: &str, cands: usize) -> TrainExample {
        TrainExample {
            query_id: id.into(),
            condition: vec_in(rng, 4),
            candidates: (0..cands)
                .map(|k| TrainCandidate {
                    table_id: format!("t{k}"),
                    columns: (0..1 + k % 3).map(|_| vec_in(rng, 4)).collect(),
                    metadata: vec_in(rng, 4),
                    table_score: rng.random_range(0.0..1.0),
                    label: rng.random_range(0.0..1.0),
                })
                .collect(),
        }
    }

    /// Head replaced by a single zero layer, so MLP output is 0.
    fn zero_head(mut m: CrossFusionModel) -> CrossFusionModel {
        m.head = FusionHead {
            layers: vec![DenseLayer::zeros(1, 2 * m.hidden)],
        };
        m
    }

    #[test]
    fn zero_residual_zero_loss_and_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = zero_head(model(1));
        let mut ex = example(&mut rng, "q", 4);
        for c in &mut ex.candidates {
            c.label = m.lambda * c.table_score;
        }
        let batch = [ex];
        assert!(loss(&m, &batch).unwrap().abs() < 1e-24);
        assert!(backward(&m, &batch).unwrap().is_zero());
    }

    #[test]
    fn single_candidate_quarter() {
        let mut m = zero_head(model(2));
        m.head.layers[0].bias = vec![0.5];
        let ex = TrainExample {
            query_id: "q".into(),
            condition: vec![0.1; 4],
            candidates: vec![TrainCandidate {
                table_id: "t".into(),
                columns: vec![vec![0.2; 4]],
                metadata: vec![0.0; 4],
                table_score: 0.0,
                label: 1.0,
            }],
        };
        assert!((loss(&m, &[ex]).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn batch_loss_is_mean_of_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = model(3);
        let batch: Vec<_> = (0..4).map(|i| example(&mut rng, &format!("q{i}"), 2 + i)).collect();
        let mean = batch.iter().map(|e| loss(&m, std::slice::from_ref(e)).unwrap()).sum::<f64>() / 4.0;
        assert!((loss(&m, &batch).unwrap() - mean).abs() < 1e-14);
    }

    #[test]
    fn lambda_gradient_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = model(4);
        let batch: Vec<_> = (0..3).map(|i| example(&mut rng, &format!("q{i}"), 3)).collect();
        let mut expect = 0.0;
        for ex in &batch {
            for c in &ex.candidates {
                let r = predict(&m, &ex.condition, c).unwrap() - c.label;
                expect += 2.0 / (3.0 * 3.0) * r * c.table_score;
            }
        }
        assert!((backward(&m, &batch).unwrap().lambda - expect).abs() < 1e-12);
    }

    #[test]
    fn tiny_step_never_increases_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..25 {
            let m = model(seed);
            let batch = [example(&mut rng, "q", 1)];
            let before = loss(&m, &batch).unwrap();
            let g = backward(&m, &batch).unwrap();
            let mut stepped = m.clone();
            sgd_step(&mut stepped, &g, 1e-6, true);
            assert!(loss(&stepped, &batch).unwrap() <= before, "seed {seed}");
        }
    }

    #[test]
    fn zero_rate_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let exs: Vec<_> = (0..5).map(|i| example(&mut rng, &format!("q{i}"), 3)).collect();
        let m = model(6);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..Default::default()
        };
        let (out, curve) = train(m.clone(), &exs, &cfg).unwrap();
        assert_eq!(out, m);
        assert!(curve.epochs.iter().all(|l| *l == curve.initial));
    }

    #[test]
    fn same_seed_same_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let exs: Vec<_> = (0..10).map(|i| example(&mut rng, &format!("q{i}"), 4)).collect();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 5,
            batch_size: 3,
            ..Default::default()
        };
        let a = train(model(7), &exs, &cfg).unwrap();
        let b = train(model(7), &exs, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let exs: Vec<_> = (0..4).map(|i| example(&mut rng, &format!("q{i}"), 3)).collect();
        let cfg = TrainConfig {
            learning_rate: 1e200,
            epochs: 3,
            ..Default::default()
        };
        assert!(matches!(
            train(model(8), &exs, &cfg),
            Err(TrainError::DivergenceDetected { epoch: 1 }) | Err(TrainError::Model(_))
        ));
    }

    #[test]
    fn empty_batches() {
        assert!(matches!(loss(&model(0), &[]), Err(TrainError::EmptyBatch)));
        assert!(matches!(backward(&model(0), &[]), Err(TrainError::EmptyBatch)));
        assert!(matches!(
            train(model(0), &[], &TrainConfig::default()),
            Err(TrainError::EmptyBatch)
        ));
    }

    #[test]
    fn candidate_sampling() {
        let pos = vec!["p1".to_string(), "p2".to_string()];
        let pool: Vec<String> = (0..50).map(|i| format!("n{i:02}")).chain(pos.iter().cloned()).collect();
        let a = sample_candidates(&pos, &pool, 32, &mut ChaCha8Rng::seed_from_u64(1));
        let b = sample_candidates(&pos, &pool, 32, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert_eq!(a.len(), 34);
        assert_eq!(&a[..2], &pos[..]);
        assert!(a[2..].iter().all(|id| id.starts_with('n')));
        let unique: std::collections::HashSet<_> = a.iter().collect();
        assert_eq!(unique.len(), 34);
        let few = sample_candidates(&pos, &pool[..5], 32, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(few.len(), 7);
    }
}

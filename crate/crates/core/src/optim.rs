//! Nadam (Nesterov-accelerated adaptive moments) and the random
//! hyperparameter sampler.

use crate::matrix::Matrix;
use crate::model::ModelConfig;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: usize },
    #[error("gradient shape {gr}x{gc} does not match parameter {pr}x{pc}")]
    ShapeMismatch {
        gr: usize,
        gc: usize,
        pr: usize,
        pc: usize,
    },
}

#[derive(Clone, Copy, Debug)]
pub struct NadamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// psi in the momentum schedule mu_t = beta1 * (1 - 0.5 * 0.96^(t*psi)).
    pub schedule_decay: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        NadamConfig {
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule_decay: 0.004,
        }
    }
}

/// Per-parameter optimizer state. Each parameter keeps its own step count and
/// momentum-schedule product so that selectively updated parameters (task
/// heads touched only by their own batches) stay correctly bias-corrected.
#[derive(Clone, Debug)]
pub struct NadamSlot {
    pub step: u64,
    pub mu_product: f64,
    pub m: Matrix,
    pub v: Matrix,
}

impl NadamSlot {
    pub fn new(rows: usize, cols: usize) -> Self {
        NadamSlot {
            step: 0,
            mu_product: 1.0,
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NadamState {
    slots: Vec<NadamSlot>,
}

impl NadamState {
    pub fn for_shapes<I: IntoIterator<Item = (usize, usize)>>(shapes: I) -> Self {
        NadamState {
            slots: shapes
                .into_iter()
                .map(|(r, c)| NadamSlot::new(r, c))
                .collect(),
        }
    }

    pub fn slot_mut(&mut self, idx: usize) -> &mut NadamSlot {
        &mut self.slots[idx]
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// One Nadam update of a single parameter matrix.
pub fn nadam_step(
    cfg: &NadamConfig,
    slot: &mut NadamSlot,
    param: &mut Matrix,
    grad: &Matrix,
) -> Result<(), OptimError> {
    if !param.same_shape(grad) {
        return Err(OptimError::ShapeMismatch {
            gr: grad.rows(),
            gc: grad.cols(),
            pr: param.rows(),
            pc: param.cols(),
        });
    }
    if !grad.is_finite() {
        return Err(OptimError::NonFiniteGradient { param: 0 });
    }

    let t = slot.step + 1;
    let psi = cfg.schedule_decay;
    let mu_t = cfg.beta1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * psi));
    let mu_next = cfg.beta1 * (1.0 - 0.5 * 0.96f64.powf((t + 1) as f64 * psi));
    let prod_t = slot.mu_product * mu_t;
    let prod_next = prod_t * mu_next;
    let v_correction = 1.0 - cfg.beta2.powi(t as i32);

    let pdata = param.as_mut_slice();
    let mdata = slot.m.as_mut_slice();
    let vdata = slot.v.as_mut_slice();
    let gdata = grad.as_slice();
    for i in 0..pdata.len() {
        let g = gdata[i];
        mdata[i] = cfg.beta1 * mdata[i] + (1.0 - cfg.beta1) * g;
        vdata[i] = cfg.beta2 * vdata[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = mu_next * mdata[i] / (1.0 - prod_next) + (1.0 - mu_t) * g / (1.0 - prod_t);
        let v_hat = vdata[i] / v_correction;
        pdata[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }

    slot.step = t;
    slot.mu_product = prod_t;
    Ok(())
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .map(|g| g.as_slice().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let c = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_assign(c);
        }
    }
    norm
}

/// The random-search space: four layer layouts, variational dropout rates
/// in [0.2, 0.5] for input and recurrent connections, and a block of runs
/// per embedding family.
#[derive(Clone, Debug)]
pub struct SearchSpace {
    pub layouts: Vec<Vec<usize>>,
    pub dropout_range: (f64, f64),
    pub embedding_ids: Vec<String>,
    pub runs_per_embedding: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            layouts: vec![vec![50], vec![100], vec![150], vec![100, 100]],
            dropout_range: (0.2, 0.5),
            embedding_ids: vec!["glove".into(), "komninos".into()],
            runs_per_embedding: 50,
        }
    }
}

/// Draws one configuration: layout uniform over the layouts, each dropout
/// rate uniform over the range, embedding chosen by the run schedule
/// (blocks of `runs_per_embedding` consecutive runs per family).
pub fn sample_config(space: &SearchSpace, rng: &mut ChaCha8Rng, run_index: usize) -> ModelConfig {
    assert!(!space.layouts.is_empty() && !space.embedding_ids.is_empty());
    let layout = space.layouts[rng.random_range(0..space.layouts.len())].clone();
    let (lo, hi) = space.dropout_range;
    let input_dropout = lo + (hi - lo) * rng.random::<f64>();
    let recurrent_dropout = lo + (hi - lo) * rng.random::<f64>();
    let block = run_index / space.runs_per_embedding.max(1);
    let embedding_id = space.embedding_ids[block % space.embedding_ids.len()].clone();
    ModelConfig {
        layer_sizes: layout,
        input_dropout,
        recurrent_dropout,
        embedding_id,
        seed: rng.random(),
    }
}

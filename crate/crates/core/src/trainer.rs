//! Training: STL, the main-task-driven MTL epoch schedule, and the
//! union-of-data baseline, with early stopping on dev macro-F1, Nadam
//! updates under global-norm clipping, and per-run manifests.

use crate::data::{
    make_batches, map_tags_to, union_datasets, Dataset, EmbeddingTable, SentenceRef, TagSet,
};
use crate::eval::{count_invalid_bio, macro_f1, per_label_scores, EvalError, InvalidBioCounts};
use crate::graph::GraphError;
use crate::matrix::Matrix;
use crate::model::{
    embed_tokens, save_checkpoint, DropoutMode, ModelConfig, ModelError, ParamStore, TaskModel,
};
use crate::optim::{clip_global_norm, nadam_step, NadamConfig, NadamState, OptimError};
use crate::util::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

pub const GRAD_CLIP_NORM: f64 = 5.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid plan: {0}")]
    BadPlan(String),
    #[error("non-finite loss on task {task:?} in epoch {epoch}")]
    NonFiniteLoss { task: String, epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<GraphError> for TrainError {
    fn from(e: GraphError) -> Self {
        TrainError::Model(ModelError::Graph(e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Stl,
    Mtl,
    Union,
}

impl TrainMode {
    pub fn parse(s: &str) -> Option<TrainMode> {
        match s.to_ascii_lowercase().as_str() {
            "stl" => Some(TrainMode::Stl),
            "mtl" => Some(TrainMode::Mtl),
            "union" | "bl" => Some(TrainMode::Union),
            _ => None,
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TrainMode::Stl => "stl",
            TrainMode::Mtl => "mtl",
            TrainMode::Union => "union",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub mode: TrainMode,
    pub main_task: String,
    pub aux_tasks: Vec<String>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl TrainPlan {
    pub fn new(mode: TrainMode, main_task: impl Into<String>) -> TrainPlan {
        TrainPlan {
            mode,
            main_task: main_task.into(),
            aux_tasks: Vec::new(),
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        match self.mode {
            TrainMode::Stl if !self.aux_tasks.is_empty() => Err(TrainError::BadPlan(
                "STL takes no auxiliary tasks".to_string(),
            )),
            TrainMode::Mtl if self.aux_tasks.is_empty() => Err(TrainError::BadPlan(
                "MTL requires at least one auxiliary task".to_string(),
            )),
            _ if self.batch_size == 0 => {
                Err(TrainError::BadPlan("batch size must be >= 1".to_string()))
            }
            _ if self.max_epochs == 0 => {
                Err(TrainError::BadPlan("max epochs must be >= 1".to_string()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed,
}

/// One training run: configuration, scores, and where the weights live.
/// Serialized as the run-manifest JSON; `data_manifests` holds content
/// hashes of the scenario manifests the run consumed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub dataset: String,
    pub k: String,
    pub plan: TrainPlan,
    pub config: ModelConfig,
    pub status: RunStatus,
    pub failure: Option<String>,
    pub dev_score: Option<f64>,
    pub test_score: Option<f64>,
    pub per_label_f1: BTreeMap<String, f64>,
    pub epochs_trained: usize,
    pub best_epoch: usize,
    pub checkpoint_path: Option<String>,
    pub wall_clock_secs: f64,
    /// Global gradient-norm clip applied before every optimizer step.
    #[serde(default = "default_clip")]
    pub grad_clip_norm: f64,
    /// Invalid BIO structure in the decoded test predictions.
    #[serde(default)]
    pub test_invalid_bio: InvalidBioCounts,
    #[serde(default)]
    pub data_manifests: BTreeMap<String, String>,
}

fn default_clip() -> f64 {
    GRAD_CLIP_NORM
}

/// The main task's data: one dataset with its scenario splits.
pub struct MainTask<'a> {
    pub task_id: String,
    pub dataset: &'a Dataset,
    pub train_docs: Vec<usize>,
    pub dev_docs: Vec<usize>,
    pub test_docs: Vec<usize>,
}

/// An auxiliary task trained on all of its documents.
pub struct TaskData<'a> {
    pub task_id: String,
    pub dataset: &'a Dataset,
    pub docs: Vec<usize>,
}

/// Interleaved (task, batch index) steps for one epoch. The main task
/// contributes each of its `main_batches` exactly once; every auxiliary task
/// contributes the same number of steps, drawn uniformly with replacement
/// from its own pool. The combined order is a uniform shuffle.
pub fn epoch_schedule(
    main_task: &str,
    main_batches: usize,
    aux_pools: &[(String, usize)],
    rng: &mut ChaCha8Rng,
) -> Vec<(String, usize)> {
    assert!(main_batches >= 1);
    let mut schedule: Vec<(String, usize)> = (0..main_batches)
        .map(|i| (main_task.to_string(), i))
        .collect();
    for (task, pool) in aux_pools {
        assert!(*pool >= 1, "auxiliary task {task} has no batches");
        for _ in 0..main_batches {
            schedule.push((task.clone(), rng.random_range(0..*pool)));
        }
    }
    use rand::seq::SliceRandom;
    schedule.shuffle(rng);
    schedule
}

struct GradAccum {
    indices: Vec<usize>,
    position: Vec<Option<usize>>,
    grads: Vec<Matrix>,
}

impl GradAccum {
    fn new(n_params: usize) -> Self {
        GradAccum {
            indices: Vec::new(),
            position: vec![None; n_params],
            grads: Vec::new(),
        }
    }

    fn add(&mut self, idx: usize, grad: &Matrix) {
        match self.position[idx] {
            Some(pos) => self.grads[pos].add_assign(grad),
            None => {
                self.position[idx] = Some(self.grads.len());
                self.indices.push(idx);
                self.grads.push(grad.clone());
            }
        }
    }
}

/// One gradient step on a single task batch: mean CRF loss gradient over the
/// batch's sentences, clipped at global norm 5.0, then a Nadam update of
/// exactly the parameters the batch's task touches (trunk + that task's
/// head).
#[allow(clippy::too_many_arguments)]
pub fn train_on_batch(
    model: &mut TaskModel,
    nadam: &mut NadamState,
    nadam_cfg: &NadamConfig,
    task: &str,
    dataset: &Dataset,
    batch: &[SentenceRef],
    table: &EmbeddingTable,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<(), TrainError> {
    let mut accum = GradAccum::new(model.params.len());
    for sref in batch {
        let sentence = sref.resolve(dataset);
        if sentence.is_empty() {
            continue;
        }
        let embedded = embed_tokens(sentence, table);
        let gold: Vec<usize> = sentence.iter().map(|t| t.tag).collect();
        let masks = model.draw_masks(DropoutMode::Train, rng);
        let mut lg = model.loss_graph(task, &embedded, &gold, &masks)?;
        let loss = match lg.graph.forward(lg.loss) {
            Ok(v) => v,
            Err(GraphError::NonFiniteValue { .. }) => {
                return Err(TrainError::NonFiniteLoss {
                    task: task.to_string(),
                    epoch,
                })
            }
            Err(e) => return Err(e.into()),
        };
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                task: task.to_string(),
                epoch,
            });
        }
        lg.graph.backward(lg.loss)?;
        for (idx, node) in &lg.bound {
            accum.add(*idx, lg.graph.grad(*node));
        }
    }
    if accum.grads.is_empty() {
        return Ok(());
    }
    let scale = 1.0 / batch.len() as f64;
    for g in accum.grads.iter_mut() {
        g.scale_assign(scale);
    }
    clip_global_norm(&mut accum.grads, GRAD_CLIP_NORM);
    for (pos, &idx) in accum.indices.iter().enumerate() {
        nadam_step(
            nadam_cfg,
            nadam.slot_mut(idx),
            model.params.get_mut(idx),
            &accum.grads[pos],
        )?;
    }
    Ok(())
}

/// Predictions and scores of `model` on a document split. Gold tags are in
/// `eval_tags` space; predictions come out of the head's `pred_tags` space
/// and are mapped (names absent from `eval_tags` become O).
pub struct SplitEval {
    pub macro_f1: f64,
    pub per_label_f1: BTreeMap<String, f64>,
    /// Invalid BIO structure in the decoded sequences; decoding applies no
    /// transition masking, so these are possible and worth tracking.
    pub invalid_bio: InvalidBioCounts,
    pub gold: Vec<Vec<usize>>,
    pub pred: Vec<Vec<usize>>,
}

pub fn evaluate_split(
    model: &TaskModel,
    task: &str,
    dataset: &Dataset,
    docs: &[usize],
    table: &EmbeddingTable,
    pred_tags: &TagSet,
    eval_tags: &TagSet,
) -> Result<SplitEval, TrainError> {
    let mut gold: Vec<Vec<usize>> = Vec::new();
    let mut pred: Vec<Vec<usize>> = Vec::new();
    for &doc in docs {
        for sentence in &dataset.documents[doc].sentences {
            if sentence.is_empty() {
                continue;
            }
            let embedded = embed_tokens(sentence, table);
            let decoded = model.predict(task, &embedded)?;
            gold.push(sentence.iter().map(|t| t.tag).collect());
            pred.push(map_tags_to(pred_tags, eval_tags, &decoded));
        }
    }
    let labels: Vec<usize> = (0..eval_tags.tag_count()).collect();
    let score = macro_f1(&gold, &pred, &labels)?;
    let per_label = per_label_scores(&gold, &pred, &labels)?
        .into_iter()
        .map(|(l, s)| (eval_tags.name(l).to_string(), s.f1))
        .collect();
    let mut invalid = InvalidBioCounts::default();
    for seq in &pred {
        let c = count_invalid_bio(seq, eval_tags);
        invalid.o_then_i += c.o_then_i;
        invalid.initial_i += c.initial_i;
        invalid.type_mismatch += c.type_mismatch;
    }
    Ok(SplitEval {
        macro_f1: score,
        per_label_f1: per_label,
        invalid_bio: invalid,
        gold,
        pred,
    })
}

/// Runs one training: epochs of the schedule, dev evaluation after each,
/// early stopping with checkpoint restore, final test scoring.
pub fn train(
    plan: &TrainPlan,
    config: &ModelConfig,
    main: &MainTask,
    auxes: &[TaskData],
    embeddings: &EmbeddingTable,
    checkpoint_path: Option<&Path>,
) -> Result<RunRecord, TrainError> {
    plan.validate()?;
    let started = Instant::now();

    if plan.mode == TrainMode::Mtl {
        for id in &plan.aux_tasks {
            if !auxes.iter().any(|a| &a.task_id == id) {
                return Err(TrainError::BadPlan(format!(
                    "auxiliary task {id:?} has no data"
                )));
            }
        }
    }

    // The dataset the single training task of STL/UNION actually sees. For
    // UNION this pools the main train split with all auxiliary data over the
    // union label space; with no auxiliaries it reduces to the STL path.
    let union_ds: Option<Dataset> = match plan.mode {
        TrainMode::Union => {
            let main_train = main.dataset.subset(&main.train_docs);
            let aux_refs: Vec<&Dataset> = auxes.iter().map(|a| a.dataset).collect();
            Some(union_datasets(&main_train, &aux_refs))
        }
        _ => None,
    };
    let (train_ds, train_docs): (&Dataset, Vec<usize>) = match &union_ds {
        Some(ds) => (ds, (0..ds.documents.len()).collect()),
        None => (main.dataset, main.train_docs.clone()),
    };
    let pred_tags: &TagSet = match &union_ds {
        Some(ds) => &ds.tag_set,
        None => &main.dataset.tag_set,
    };
    let eval_tags = &main.dataset.tag_set;

    let mut model_tasks: Vec<(String, usize)> =
        vec![(plan.main_task.clone(), pred_tags.tag_count())];
    if plan.mode == TrainMode::Mtl {
        for aux in auxes {
            model_tasks.push((aux.task_id.clone(), aux.dataset.tag_set.tag_count()));
        }
    }

    let train_sentences: usize = train_docs
        .iter()
        .map(|&d| train_ds.documents[d].sentences.len())
        .sum();
    if train_sentences == 0 {
        return Err(TrainError::BadPlan(
            "main task has no training sentences".to_string(),
        ));
    }
    if plan.mode == TrainMode::Mtl {
        for aux in auxes {
            let n: usize = aux
                .docs
                .iter()
                .map(|&d| aux.dataset.documents[d].sentences.len())
                .sum();
            if n == 0 {
                return Err(TrainError::BadPlan(format!(
                    "auxiliary task {:?} has no training sentences",
                    aux.task_id
                )));
            }
        }
    }

    let mut model = TaskModel::new(config.clone(), embeddings.dim(), &model_tasks);
    let mut nadam = NadamState::for_shapes(model.params.shapes());
    let nadam_cfg = NadamConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, 0x7121));

    let mut best: Option<(f64, ParamStore, usize)> = None;
    let mut epochs_without_improvement = 0usize;
    let mut epochs_trained = 0usize;

    for epoch in 0..plan.max_epochs {
        epochs_trained = epoch + 1;
        let main_batches = make_batches(train_ds, &train_docs, plan.batch_size, &mut rng);
        let aux_batches: Vec<(String, Vec<Vec<SentenceRef>>)> = if plan.mode == TrainMode::Mtl {
            auxes
                .iter()
                .map(|aux| {
                    (
                        aux.task_id.clone(),
                        make_batches(aux.dataset, &aux.docs, plan.batch_size, &mut rng),
                    )
                })
                .collect()
        } else {
            Vec::new()
        };
        let pools: Vec<(String, usize)> = aux_batches
            .iter()
            .map(|(id, b)| (id.clone(), b.len()))
            .collect();
        let schedule = epoch_schedule(&plan.main_task, main_batches.len(), &pools, &mut rng);

        for (task, batch_idx) in &schedule {
            let (ds, batch): (&Dataset, &[SentenceRef]) = if task == &plan.main_task {
                (train_ds, &main_batches[*batch_idx])
            } else {
                let (_, batches) = aux_batches
                    .iter()
                    .find(|(id, _)| id == task)
                    .expect("scheduled task has batches");
                let aux = auxes.iter().find(|a| &a.task_id == task).unwrap();
                (aux.dataset, &batches[*batch_idx])
            };
            train_on_batch(
                &mut model, &mut nadam, &nadam_cfg, task, ds, batch, embeddings, &mut rng, epoch,
            )?;
        }

        let dev = evaluate_split(
            &model,
            &plan.main_task,
            main.dataset,
            &main.dev_docs,
            embeddings,
            pred_tags,
            eval_tags,
        )?;
        let improved = best
            .as_ref()
            .map(|(b, _, _)| dev.macro_f1 > *b)
            .unwrap_or(true);
        if improved {
            best = Some((dev.macro_f1, model.params.clone(), epoch));
            epochs_without_improvement = 0;
        } else {
            epochs_without_improvement += 1;
            if epochs_without_improvement >= plan.patience {
                break;
            }
        }
    }

    let (dev_score, best_params, best_epoch) = best.expect("at least one epoch ran");
    model.params = best_params;

    let test = evaluate_split(
        &model,
        &plan.main_task,
        main.dataset,
        &main.test_docs,
        embeddings,
        pred_tags,
        eval_tags,
    )?;

    let checkpoint = match checkpoint_path {
        Some(path) => {
            save_checkpoint(path, &model)?;
            Some(path.display().to_string())
        }
        None => None,
    };

    Ok(RunRecord {
        run_id: String::new(),
        dataset: main.dataset.id.clone(),
        k: String::new(),
        plan: plan.clone(),
        config: config.clone(),
        status: RunStatus::Completed,
        failure: None,
        dev_score: Some(dev_score),
        test_score: Some(test.macro_f1),
        per_label_f1: test.per_label_f1,
        epochs_trained,
        best_epoch,
        checkpoint_path: checkpoint,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        grad_clip_norm: GRAD_CLIP_NORM,
        test_invalid_bio: test.invalid_bio,
        data_manifests: BTreeMap::new(),
    })
}

/// Search driver: `n_runs` independent trainings with sampled configurations
/// and per-run derived seeds. Failures are recorded, not propagated. Runs
/// whose id is in `skip` are not re-executed (resume support). With
/// `jobs > 1`, runs execute on a bounded worker pool; `on_record` fires as
/// each run completes (completion order), and the returned records are
/// sorted by run index either way.
pub struct SearchContext<'a> {
    pub main: &'a MainTask<'a>,
    pub auxes: &'a [TaskData<'a>],
    pub embeddings: &'a BTreeMap<String, EmbeddingTable>,
    pub checkpoint_dir: Option<&'a Path>,
    pub k_label: String,
    /// Content hashes of the data manifests feeding this search.
    pub data_manifests: BTreeMap<String, String>,
}

pub fn run_search<F>(
    space: &crate::optim::SearchSpace,
    plan_template: &TrainPlan,
    ctx: &SearchContext,
    n_runs: usize,
    jobs: usize,
    skip: &std::collections::HashSet<String>,
    mut on_record: F,
) -> Vec<RunRecord>
where
    F: FnMut(&RunRecord) + Send,
{
    let run_one = |i: usize| -> Option<RunRecord> {
        let run_id = format!(
            "{}-{}-{}-r{:03}",
            plan_template.mode, plan_template.main_task, ctx.k_label, i
        );
        if skip.contains(&run_id) {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan_template.seed, 1000 + i as u64));
        let config = crate::optim::sample_config(space, &mut rng, i);
        let mut plan = plan_template.clone();
        plan.seed = rng.random();

        let checkpoint = ctx
            .checkpoint_dir
            .map(|d| d.join(format!("{run_id}.ckpt.json")));
        let outcome = match ctx.embeddings.get(&config.embedding_id) {
            Some(table) => train(
                &plan,
                &config,
                ctx.main,
                ctx.auxes,
                table,
                checkpoint.as_deref(),
            ),
            None => Err(TrainError::BadPlan(format!(
                "embedding {:?} not configured",
                config.embedding_id
            ))),
        };
        let mut record = match outcome {
            Ok(mut r) => {
                r.run_id = run_id.clone();
                r
            }
            Err(e) => RunRecord {
                run_id: run_id.clone(),
                dataset: ctx.main.dataset.id.clone(),
                k: ctx.k_label.clone(),
                plan: plan.clone(),
                config: config.clone(),
                status: RunStatus::Failed,
                failure: Some(e.to_string()),
                dev_score: None,
                test_score: None,
                per_label_f1: BTreeMap::new(),
                epochs_trained: 0,
                best_epoch: 0,
                checkpoint_path: None,
                wall_clock_secs: 0.0,
                grad_clip_norm: GRAD_CLIP_NORM,
                test_invalid_bio: InvalidBioCounts::default(),
                data_manifests: BTreeMap::new(),
            },
        };
        record.k = ctx.k_label.clone();
        record.data_manifests = ctx.data_manifests.clone();
        Some(record)
    };

    let next = std::sync::atomic::AtomicUsize::new(0);
    let (tx, rx) = std::sync::mpsc::channel::<(usize, RunRecord)>();
    let mut records: Vec<(usize, RunRecord)> = if jobs <= 1 {
        let mut out = Vec::new();
        for i in 0..n_runs {
            if let Some(r) = run_one(i) {
                on_record(&r);
                out.push((i, r));
            }
        }
        out
    } else {
        let next_ref = &next;
        let run_ref = &run_one;
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(n_runs.max(1)) {
                let tx = tx.clone();
                scope.spawn(move || loop {
                    let i = next_ref.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= n_runs {
                        break;
                    }
                    if let Some(r) = run_ref(i) {
                        if tx.send((i, r)).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(tx);
            // Collector: persist each record as it lands.
            let mut out = Vec::new();
            for (i, r) in rx.iter() {
                on_record(&r);
                out.push((i, r));
            }
            out
        })
    };
    records.sort_by_key(|(i, _)| *i);
    records.into_iter().map(|(_, r)| r).collect()
}

/// Serializes one record as a run-manifest JSON object.
pub fn run_manifest_json(record: &RunRecord) -> serde_json::Result<String> {
    serde_json::to_string_pretty(record)
}

//! Subcommand implementations.

use crate::config::ExperimentConfig;
use crate::CliError;
use mtseq_core::data::{
    build_scenarios, load_embeddings, parse_corpus, synth, Dataset, KLabel, ScenarioManifest,
};
use mtseq_core::eval::report::{
    append_results, build_report, completed_run_ids, curves_csv, read_results, ResultRow,
};
use mtseq_core::model::ModelConfig;
use mtseq_core::optim::SearchSpace;
use mtseq_core::trainer::{
    run_manifest_json, run_search, train, MainTask, RunStatus, SearchContext, TaskData, TrainMode,
    TrainPlan,
};
use mtseq_core::util::{content_hash, derive_seed, fnv1a64};
use mtseq_core::EmbeddingTable;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn out_dir(config: &ExperimentConfig, out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(|| config.out_dir.clone())
}

fn scenario_path(out: &Path, dataset: &str, k: &str) -> PathBuf {
    out.join("scenarios")
        .join(dataset)
        .join(format!("{k}.json"))
}

fn load_dataset(config: &ExperimentConfig, id: &str) -> Result<Dataset, CliError> {
    let src = config.dataset(id)?;
    let text = std::fs::read_to_string(&src.path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", src.path.display())))?;
    let (dataset, report) = parse_corpus(id, &text).map_err(|e| CliError::Data(e.to_string()))?;
    if report.total_normalized() > 0 {
        eprintln!(
            "note: {id}: normalized {} gold I tags ({} after O, {} sentence-initial, {} cross-type)",
            report.total_normalized(),
            report.i_after_o,
            report.sentence_initial_i,
            report.i_type_mismatch
        );
    }
    Ok(dataset)
}

pub fn cmd_prepare(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let config = ExperimentConfig::load(config_path)?;
    let out = out_dir(&config, &out);
    let seed = seed.unwrap_or(config.scenario_seed);
    for src in &config.datasets {
        let dataset = load_dataset(&config, &src.id)?;
        let set = build_scenarios(&dataset, seed).map_err(|e| CliError::Data(e.to_string()))?;
        for sc in &set.scenarios {
            let manifest = ScenarioManifest::from_scenario(&dataset, sc);
            let json = serde_json::to_string_pretty(&manifest)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let path = scenario_path(&out, &src.id, &sc.k.to_string());
            write_atomic(&path, &json)?;
            println!(
                "{}: {} train={} dev={} test={} -> {}",
                src.id,
                sc.k,
                manifest.train_tokens,
                manifest.dev_tokens,
                manifest.test_tokens,
                path.display()
            );
        }
    }
    Ok(())
}

struct Loaded {
    main: Dataset,
    auxes: Vec<(String, Dataset)>,
    embeddings: BTreeMap<String, EmbeddingTable>,
    scenario_manifest: ScenarioManifest,
    scenario_hash: String,
    corpus_hashes: BTreeMap<String, String>,
}

fn load_for_training(
    config: &ExperimentConfig,
    out: &Path,
    main_id: &str,
    k: KLabel,
    needs_aux: bool,
) -> Result<Loaded, CliError> {
    let main = load_dataset(config, main_id)?;
    let mut auxes = Vec::new();
    let mut corpus_hashes = BTreeMap::new();
    for src in &config.datasets {
        let bytes = std::fs::read(&src.path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", src.path.display())))?;
        corpus_hashes.insert(format!("corpus:{}", src.id), content_hash(&bytes));
        if src.id != main_id && needs_aux {
            auxes.push((src.id.clone(), load_dataset(config, &src.id)?));
        }
    }

    let manifest_path = scenario_path(out, main_id, &k.to_string());
    let manifest_text = std::fs::read_to_string(&manifest_path).map_err(|_| {
        CliError::Data(format!(
            "missing scenario manifest {} (run `mtseq prepare` first)",
            manifest_path.display()
        ))
    })?;
    let scenario_hash = content_hash(manifest_text.as_bytes());
    let scenario_manifest: ScenarioManifest = serde_json::from_str(&manifest_text)
        .map_err(|e| CliError::Data(format!("bad scenario manifest: {e}")))?;

    if config.embeddings.is_empty() {
        return Err(CliError::Config("no embeddings configured".into()));
    }
    let mut vocab = main.vocabulary();
    for (_, aux) in &auxes {
        vocab.extend(aux.vocabulary());
    }
    let mut embeddings = BTreeMap::new();
    for src in &config.embeddings {
        let text = std::fs::read_to_string(&src.path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", src.path.display())))?;
        let table = load_embeddings(&text, &vocab)
            .map_err(|e| CliError::Data(format!("{}: {e}", src.id)))?;
        embeddings.insert(src.id.clone(), table);
    }

    Ok(Loaded {
        main,
        auxes,
        embeddings,
        scenario_manifest,
        scenario_hash,
        corpus_hashes,
    })
}

fn main_task<'a>(loaded: &'a Loaded, main_id: &str) -> Result<MainTask<'a>, CliError> {
    let sc = loaded
        .scenario_manifest
        .to_scenario(&loaded.main)
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok(MainTask {
        task_id: main_id.to_string(),
        dataset: &loaded.main,
        train_docs: sc.train,
        dev_docs: sc.dev,
        test_docs: sc.test,
    })
}

fn parse_mode(mode: &str) -> Result<TrainMode, CliError> {
    TrainMode::parse(mode)
        .ok_or_else(|| CliError::Config(format!("unknown mode {mode:?} (stl|mtl|union)")))
}

fn parse_k(k: &str) -> Result<KLabel, CliError> {
    KLabel::parse(k).ok_or_else(|| CliError::Config(format!("unknown k {k:?} (1K|6K|12K|21K)")))
}

fn plan_from(
    config: &ExperimentConfig,
    mode: TrainMode,
    main_id: &str,
    aux_ids: Vec<String>,
) -> TrainPlan {
    let mut plan = TrainPlan::new(mode, main_id);
    plan.aux_tasks = aux_ids;
    if let Some(b) = config.search.batch_size {
        plan.batch_size = b;
    }
    if let Some(e) = config.search.max_epochs {
        plan.max_epochs = e;
    }
    if let Some(p) = config.search.patience {
        plan.patience = p;
    }
    plan
}

fn persist_record(out: &Path, record: &mtseq_core::trainer::RunRecord) -> Result<(), CliError> {
    let manifest = run_manifest_json(record).map_err(|e| CliError::Data(e.to_string()))?;
    write_atomic(
        &out.join("runs").join(format!("{}.json", record.run_id)),
        &manifest,
    )?;
    append_results(&out.join("results.csv"), &[ResultRow::from(record)])
        .map_err(|e| CliError::Data(format!("cannot append results.csv: {e}")))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    config_path: &Path,
    mode: &str,
    main_id: &str,
    k: &str,
    seed: Option<u64>,
    layout: Option<String>,
    input_dropout: Option<f64>,
    recurrent_dropout: Option<f64>,
    embedding: Option<String>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let config = ExperimentConfig::load(config_path)?;
    let out = out_dir(&config, &out);
    let mode = parse_mode(mode)?;
    let k = parse_k(k)?;
    config.dataset(main_id)?;

    let loaded = load_for_training(&config, &out, main_id, k, mode != TrainMode::Stl)?;
    let main = main_task(&loaded, main_id)?;
    let aux_ids: Vec<String> = loaded.auxes.iter().map(|(id, _)| id.clone()).collect();
    if mode == TrainMode::Mtl && aux_ids.is_empty() {
        return Err(CliError::Config(
            "mtl requires at least one auxiliary dataset in the config".into(),
        ));
    }
    let auxes: Vec<TaskData> = loaded
        .auxes
        .iter()
        .map(|(id, ds)| TaskData {
            task_id: id.clone(),
            dataset: ds,
            docs: (0..ds.documents.len()).collect(),
        })
        .collect();

    let seed = seed.unwrap_or_else(|| derive_seed(config.scenario_seed, fnv1a64(b"train")));
    let mut plan = plan_from(&config, mode, main_id, aux_ids);
    plan.seed = seed;

    let layer_sizes = match layout {
        None => vec![100],
        Some(s) => s
            .split('x')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<Vec<usize>, _>>()
            .map_err(|_| CliError::Config(format!("bad layout {s:?} (e.g. 100 or 100x100)")))?,
    };
    let embedding_id = match embedding {
        Some(id) => id,
        None => config
            .embeddings
            .first()
            .map(|e| e.id.clone())
            .ok_or_else(|| CliError::Config("no embeddings configured".into()))?,
    };
    let model_config = ModelConfig {
        layer_sizes,
        input_dropout: input_dropout.unwrap_or(0.3),
        recurrent_dropout: recurrent_dropout.unwrap_or(0.3),
        embedding_id: embedding_id.clone(),
        seed: derive_seed(seed, 1),
    };
    let table = loaded
        .embeddings
        .get(&embedding_id)
        .ok_or_else(|| CliError::Config(format!("embedding {embedding_id:?} not configured")))?;

    let run_id = format!("train-{mode}-{main_id}-{k}-s{seed}");
    let ckpt = out.join("checkpoints").join(format!("{run_id}.ckpt.json"));
    std::fs::create_dir_all(ckpt.parent().unwrap()).map_err(|e| CliError::Data(e.to_string()))?;
    let mut record =
        train(&plan, &model_config, &main, &auxes, table, Some(&ckpt)).map_err(|e| match e {
            mtseq_core::trainer::TrainError::BadPlan(m) => CliError::Config(m),
            other => CliError::Training(other.to_string()),
        })?;
    record.run_id = run_id;
    record.k = k.to_string();
    record.data_manifests = {
        let mut m = loaded.corpus_hashes.clone();
        m.insert(
            format!("scenario:{main_id}:{k}"),
            loaded.scenario_hash.clone(),
        );
        m
    };
    persist_record(&out, &record)?;
    println!(
        "{}: dev={:.4} test={:.4} epochs={} (best {})",
        record.run_id,
        record.dev_score.unwrap_or(f64::NAN),
        record.test_score.unwrap_or(f64::NAN),
        record.epochs_trained,
        record.best_epoch,
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_search(
    config_path: &Path,
    mode: &str,
    main_id: &str,
    k: &str,
    runs: usize,
    jobs: usize,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let config = ExperimentConfig::load(config_path)?;
    let out = out_dir(&config, &out);
    let mode = parse_mode(mode)?;
    let k = parse_k(k)?;
    if runs == 0 {
        return Err(CliError::Config("--runs must be >= 1".into()));
    }
    config.dataset(main_id)?;

    let loaded = load_for_training(&config, &out, main_id, k, mode != TrainMode::Stl)?;
    let main = main_task(&loaded, main_id)?;
    let aux_ids: Vec<String> = loaded.auxes.iter().map(|(id, _)| id.clone()).collect();
    if mode == TrainMode::Mtl && aux_ids.is_empty() {
        return Err(CliError::Config(
            "mtl requires at least one auxiliary dataset in the config".into(),
        ));
    }
    let auxes: Vec<TaskData> = loaded
        .auxes
        .iter()
        .map(|(id, ds)| TaskData {
            task_id: id.clone(),
            dataset: ds,
            docs: (0..ds.documents.len()).collect(),
        })
        .collect();

    let embedding_ids: Vec<String> = config.embeddings.iter().map(|e| e.id.clone()).collect();
    let space = SearchSpace {
        layouts: config
            .search
            .layouts
            .clone()
            .unwrap_or_else(|| SearchSpace::default().layouts),
        dropout_range: (
            config.search.dropout_min.unwrap_or(0.2),
            config.search.dropout_max.unwrap_or(0.5),
        ),
        runs_per_embedding: config
            .search
            .runs_per_embedding
            .unwrap_or_else(|| runs.div_ceil(embedding_ids.len().max(1)).max(1)),
        embedding_ids,
    };

    let mut plan = plan_from(&config, mode, main_id, aux_ids);
    plan.seed = seed.unwrap_or_else(|| {
        derive_seed(
            config.scenario_seed,
            fnv1a64(format!("search:{mode}:{main_id}:{k}").as_bytes()),
        )
    });

    let checkpoint_dir = out.join("checkpoints");
    std::fs::create_dir_all(&checkpoint_dir).map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::create_dir_all(out.join("runs")).map_err(|e| CliError::Data(e.to_string()))?;

    let mut data_manifests = loaded.corpus_hashes.clone();
    data_manifests.insert(
        format!("scenario:{main_id}:{k}"),
        loaded.scenario_hash.clone(),
    );
    let ctx = SearchContext {
        main: &main,
        auxes: &auxes,
        embeddings: &loaded.embeddings,
        checkpoint_dir: Some(&checkpoint_dir),
        k_label: k.to_string(),
        data_manifests,
    };

    let skip = completed_run_ids(&out.join("results.csv"))
        .map_err(|e| CliError::Data(format!("cannot read results.csv: {e}")))?;
    let already = skip.len();

    let mut persist_err: Option<CliError> = None;
    let records = run_search(&space, &plan, &ctx, runs, jobs.max(1), &skip, |record| {
        match record.status {
            RunStatus::Completed => println!(
                "{}: dev={:.4} test={:.4} epochs={}",
                record.run_id,
                record.dev_score.unwrap_or(f64::NAN),
                record.test_score.unwrap_or(f64::NAN),
                record.epochs_trained
            ),
            RunStatus::Failed => println!(
                "{}: FAILED ({})",
                record.run_id,
                record.failure.as_deref().unwrap_or("unknown")
            ),
        }
        if persist_err.is_none() {
            persist_err = persist_record(&out, record).err();
        }
    });
    if let Some(e) = persist_err {
        return Err(e);
    }

    let completed = records
        .iter()
        .filter(|r| r.status == RunStatus::Completed)
        .count();
    let failed = records.len() - completed;
    println!(
        "search done: {completed} completed, {failed} failed, {} skipped (already recorded)",
        runs - records.len()
    );
    if already > 0 {
        println!("resumed over {already} existing records");
    }
    if completed == 0 && failed > 0 {
        println!("warning: no usable runs were produced by this search");
    }
    Ok(())
}

pub fn cmd_report(config_path: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let config = ExperimentConfig::load(config_path)?;
    let out = out_dir(&config, &out);
    let results_path = out.join("results.csv");
    if !results_path.exists() {
        return Err(CliError::Data(format!(
            "no results at {} (run `mtseq search` first)",
            results_path.display()
        )));
    }
    let rows = read_results(&results_path)
        .map_err(|e| CliError::Data(format!("cannot read results.csv: {e}")))?;
    if rows.is_empty() {
        return Err(CliError::Data("results.csv is empty".into()));
    }
    let top_k = config.search.top_k.unwrap_or(10);
    let output = build_report(&rows, top_k);
    write_atomic(&out.join("report.txt"), &output.report)?;
    write_atomic(&out.join("curves.csv"), &curves_csv(&output.curves))?;
    print!("{}", output.report);
    println!(
        "wrote {} and {} ({} curve points)",
        out.join("report.txt").display(),
        out.join("curves.csv").display(),
        output.curves.len()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_gen_synth(
    out: &Path,
    task_id: &str,
    types: &str,
    docs: usize,
    sentences: usize,
    tokens: usize,
    seed: u64,
    lexicon_seed: u64,
    embed_dim: usize,
) -> Result<(), CliError> {
    let types: Vec<String> = types
        .split(',')
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect();
    if types.is_empty() {
        return Err(CliError::Config(
            "--types must list at least one type".into(),
        ));
    }
    let spec = synth::SynthSpec {
        task_id: task_id.to_string(),
        seed,
        lexicon_seed,
        types,
        n_docs: docs,
        sentences_per_doc: sentences,
        tokens_per_sentence: tokens,
        embed_dim,
        ..synth::SynthSpec::default()
    };
    let corpus = synth::generate_corpus(&spec);
    let embeddings = synth::embeddings_text(
        spec.vocabulary().iter().map(|s| s.as_str()),
        spec.embed_dim,
        spec.lexicon_seed,
    );
    let corpus_path = out.join(format!("{task_id}.conll"));
    let emb_path = out.join(format!("{task_id}.embeddings.txt"));
    write_atomic(&corpus_path, &corpus)?;
    write_atomic(&emb_path, &embeddings)?;
    let (ds, _) = parse_corpus(task_id, &corpus).map_err(|e| CliError::Data(e.to_string()))?;
    println!(
        "{}: {} documents, {} tokens, {} tags -> {} / {}",
        task_id,
        ds.documents.len(),
        ds.token_count(),
        ds.tag_set.tag_count(),
        corpus_path.display(),
        emb_path.display()
    );
    Ok(())
}

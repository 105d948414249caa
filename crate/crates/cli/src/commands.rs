use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use hinmal_core::container::sha256_hex;
use hinmal_core::datagen::generate;
use hinmal_core::detector::{
    cross_validate_with, evaluate, stratified_split, verdicts, CvReport, Metrics, Verdict,
};
use hinmal_core::hin::{
    load_batch, load_hin, load_manifest, parse_manifest, parse_permission_map, save_hin, write_manifest,
    write_permission_map, AppBatch, Hin, Label, ManifestRecord,
};
use hinmal_core::incremental::{
    fine_tune_beta, read_embeddings, write_audit, write_embedding_rows, write_embeddings, Embedder,
};
use hinmal_core::metastructure::{
    build_all, default_structures, load_adjacencies, parse_spec, save_adjacencies, AdjacencyMatrix, MetaStructure,
};
use hinmal_core::msgat::{load_model, save_model, train_with, MsGatModel};
use hinmal_core::{Error, Result};

use crate::config::{EvalMode, PipelineConfig};
use crate::io::{read_truth, read_verdicts, write_json, write_truth, write_verdicts, TruthRecord};

/// A finalized configuration bound to an output directory.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: PipelineConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(config: PipelineConfig, out: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Self {
            config: config.finalize()?,
            out,
        })
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out.join(p)
        }
    }

    fn require(&self, p: &Path) -> Result<PathBuf> {
        let full = self.path(p);
        if !full.exists() {
            return Err(Error::Config(format!("required file {} does not exist", full.display())));
        }
        Ok(full)
    }

    pub fn structures(&self) -> Result<Vec<MetaStructure>> {
        match &self.config.paths.structures {
            None => Ok(default_structures()),
            Some(p) => {
                let path = self.require(p)?;
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let s = parse_spec(&text)?;
                if s.is_empty() {
                    return Err(Error::Config(format!("{} defines no structures", path.display())));
                }
                Ok(s)
            }
        }
    }

    fn load_hin(&self) -> Result<Hin> {
        load_hin(&self.require(&self.config.paths.hin)?)
    }

    fn load_model(&self) -> Result<MsGatModel> {
        load_model(&self.require(&self.config.paths.checkpoint)?)
    }

    /// Cached adjacencies when they match the HIN and structure list,
    /// otherwise freshly built ones.
    fn adjacencies(&self, hin: &Hin, structures: &[MetaStructure]) -> Result<Vec<AdjacencyMatrix>> {
        let path = self.path(&self.config.paths.adjacency);
        if path.exists() {
            let (fingerprint, adjs) = load_adjacencies(&path)?;
            let names_match = adjs.len() == structures.len()
                && adjs.iter().zip(structures).all(|(a, s)| a.name() == s.name());
            if fingerprint == hin.fingerprint() && names_match {
                return Ok(adjs);
            }
        }
        build_all(hin, structures)
    }
}

fn labels_of(hin: &Hin, apps: &[usize]) -> Vec<Label> {
    apps.iter().map(|&i| hin.labels()[i].expect("labeled app")).collect()
}

/// Labeled in-sample apps used for training and held out, by index.
pub fn training_split(hin: &Hin, holdout: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let labeled = hin.labeled();
    if holdout == 0.0 {
        return Ok((labeled, Vec::new()));
    }
    let (train, test) = stratified_split(&labels_of(hin, &labeled), 1.0 - holdout, seed)?;
    Ok((
        train.into_iter().map(|i| labeled[i]).collect(),
        test.into_iter().map(|i| labeled[i]).collect(),
    ))
}

fn predictions(scores: &[f64]) -> Vec<Label> {
    scores.iter().map(|&p| hinmal_core::detector::label_for(p)).collect()
}

fn read_records(path: &Path) -> Result<Vec<(usize, ManifestRecord)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(BufReader::new(f))
}

pub fn gen(ctx: &Context) -> Result<Value> {
    let p = &ctx.config.paths;
    let data = generate(&ctx.config.synthetic)?;
    write_manifest(&ctx.path(&p.manifest), &data.in_records)?;
    write_permission_map(&ctx.path(&p.permission_map), &data.permission_map)?;
    write_manifest(&ctx.path(&p.batch), &data.out_records)?;
    let truth: Vec<TruthRecord> = data
        .out_records
        .iter()
        .zip(&data.out_labels)
        .map(|(r, &label)| TruthRecord {
            app: r.app.clone(),
            label,
        })
        .collect();
    write_truth(&ctx.path(&p.truth), &truth)?;
    Ok(json!({
        "command": "gen",
        "seed": ctx.config.seed,
        "in_apps": data.in_records.len(),
        "out_apps": data.out_records.len(),
        "fingerprint": data.hin.fingerprint(),
    }))
}

pub fn build(ctx: &Context) -> Result<Value> {
    let p = &ctx.config.paths;
    let hin = load_manifest(&ctx.require(&p.manifest)?, &ctx.require(&p.permission_map)?)?;
    let structures = ctx.structures()?;
    save_hin(&hin, &ctx.path(&p.hin))?;
    let adjs = build_all(&hin, &structures)?;
    let fingerprint = hin.fingerprint();
    save_adjacencies(&ctx.path(&p.adjacency), &fingerprint, &adjs)?;
    let nnz: serde_json::Map<String, Value> = adjs
        .iter()
        .map(|a| (a.name().to_owned(), json!(a.psi().nnz())))
        .collect();
    Ok(json!({
        "command": "build",
        "fingerprint": fingerprint,
        "apps": hin.num_apps(),
        "labeled": hin.labeled().len(),
        "adjacency_nnz": nnz,
    }))
}

pub fn train(ctx: &Context) -> Result<Value> {
    let cfg = &ctx.config;
    let start = Instant::now();
    let hin = ctx.load_hin()?;
    let structures = ctx.structures()?;
    let adjs = ctx.adjacencies(&hin, &structures)?;
    let (mask, holdout) = training_split(&hin, cfg.holdout_fraction, cfg.seed)?;
    let model = train_with(&hin, &structures, &adjs, &cfg.train, &mask)?;
    save_model(&model, &ctx.path(&cfg.paths.checkpoint))?;
    write_embedding_rows(
        &ctx.path(&cfg.paths.embeddings_in),
        hin.app_ids(),
        &vec![false; hin.num_apps()],
        model.embedding(),
    )?;
    let holdout_metrics = if holdout.is_empty() {
        Value::Null
    } else {
        let scores = model.predict_proba(&model.embedding().select_rows(&holdout))?;
        json!(evaluate(&predictions(&scores), &labels_of(&hin, &holdout))?)
    };
    let losses = model.loss_history();
    let report = json!({
        "command": "train",
        "seed": cfg.seed,
        "fingerprint": hin.fingerprint(),
        "config": cfg.train,
        "structures": model.structure_names(),
        "beta": model.beta(),
        "train_apps": mask.len(),
        "holdout_apps": holdout.len(),
        "loss_first": losses.first(),
        "loss_last": losses.last(),
        "holdout_metrics": holdout_metrics,
        "timing_seconds": start.elapsed().as_secs_f64(),
    });
    write_json(&ctx.path(&cfg.paths.train_report), &report)?;
    Ok(report)
}

/// The model with structure weights tuned on the calibration batch when
/// requested.
fn tuned_model(ctx: &Context, model: MsGatModel, hin: &Hin) -> Result<MsGatModel> {
    let inc = &ctx.config.incremental;
    if !inc.fine_tune_beta {
        return Ok(model);
    }
    let path = ctx.config.paths.calibration.as_ref().ok_or_else(|| {
        Error::Config("incremental.fine_tune_beta requires paths.calibration".into())
    })?;
    let calibration = load_batch(&ctx.require(path)?, hin)?;
    let out = Embedder::new(&model, hin)?.embed(&calibration, inc)?;
    let beta = fine_tune_beta(&model, &out, calibration.labels(), inc.fine_tune_steps, inc.fine_tune_learning_rate)?;
    model.with_beta(beta)
}

pub fn embed(ctx: &Context) -> Result<Value> {
    let cfg = &ctx.config;
    let hin = ctx.load_hin()?;
    let model = tuned_model(ctx, ctx.load_model()?, &hin)?;
    let batch = load_batch(&ctx.require(&cfg.paths.batch)?, &hin)?;
    let out = Embedder::new(&model, &hin)?.embed(&batch, &cfg.incremental)?;
    write_embeddings(&ctx.path(&cfg.paths.embeddings_out), &out)?;
    write_audit(&ctx.path(&cfg.paths.audit), &out, &hin)?;
    Ok(json!({
        "command": "embed",
        "seed": cfg.seed,
        "apps": out.len(),
        "isolated": out.isolated.iter().filter(|&&f| f).count(),
        "dropped_entities": batch.dropped(),
        "beta": out.beta,
    }))
}

pub fn detect(ctx: &Context) -> Result<Value> {
    let cfg = &ctx.config;
    let model = ctx.load_model()?;
    let rows = read_embeddings(&ctx.require(&cfg.paths.embeddings_out)?)?;
    if rows.rows.cols() != model.dim() && !rows.app_ids.is_empty() {
        return Err(Error::Validation(format!(
            "embeddings have {} columns, model dimension is {}",
            rows.rows.cols(),
            model.dim()
        )));
    }
    let scores = if rows.app_ids.is_empty() {
        Vec::new()
    } else {
        model.predict_proba(&rows.rows)?
    };
    let v = verdicts(&rows.app_ids, &scores, &rows.isolated);
    write_verdicts(&ctx.path(&cfg.paths.verdicts), &v)?;
    Ok(json!({
        "command": "detect",
        "apps": v.len(),
        "malicious": v.iter().filter(|x| x.label == Label::Malicious).count(),
        "low_confidence": v.iter().filter(|x| x.low_confidence).count(),
    }))
}

/// Scores verdicts against ground truth; every verdict needs a truth entry.
pub fn score_verdicts(verdicts: &[Verdict], truth: &[TruthRecord]) -> Result<Metrics> {
    let by_app: HashMap<&str, Label> = truth.iter().map(|t| (t.app.as_str(), t.label)).collect();
    let mut pred = Vec::with_capacity(verdicts.len());
    let mut actual = Vec::with_capacity(verdicts.len());
    for v in verdicts {
        let t = by_app
            .get(v.app.as_str())
            .ok_or_else(|| Error::Validation(format!("no ground truth for app `{}`", v.app)))?;
        pred.push(v.label);
        actual.push(*t);
    }
    evaluate(&pred, &actual)
}

/// Stratified k-fold over labeled in-sample apps; each fold retrains the
/// embedding model with only its training labels and classifies the rest.
pub fn cross_validate_pipeline(
    hin: &Hin,
    structures: &[MetaStructure],
    adjs: &[AdjacencyMatrix],
    ctx_cfg: &PipelineConfig,
) -> Result<CvReport> {
    let labeled = hin.labeled();
    let labels = labels_of(hin, &labeled);
    cross_validate_with(&labels, ctx_cfg.eval.folds, ctx_cfg.seed, |train, test| {
        let mask: Vec<usize> = train.iter().map(|&i| labeled[i]).collect();
        let rows: Vec<usize> = test.iter().map(|&i| labeled[i]).collect();
        let model = train_with(hin, structures, adjs, &ctx_cfg.train, &mask)?;
        let scores = model.predict_proba(&model.embedding().select_rows(&rows))?;
        let truth: Vec<Label> = test.iter().map(|&i| labels[i]).collect();
        evaluate(&predictions(&scores), &truth)
    })
}

pub fn eval(ctx: &Context) -> Result<Value> {
    let cfg = &ctx.config;
    let start = Instant::now();
    let (fingerprint, cv, isolated) = match cfg.eval.mode {
        EvalMode::Verdicts => {
            let truth_path = ctx.require(&cfg.paths.truth)?;
            let bytes = std::fs::read(&truth_path).map_err(|e| Error::io(&truth_path, e))?;
            let v = read_verdicts(&ctx.require(&cfg.paths.verdicts)?)?;
            let m = score_verdicts(&v, &read_truth(&truth_path)?)?;
            let isolated = v.iter().filter(|x| x.low_confidence).count();
            (sha256_hex(&bytes), CvReport::from_folds(vec![m]), isolated)
        }
        EvalMode::Cv => {
            let hin = ctx.load_hin()?;
            let structures = ctx.structures()?;
            let adjs = ctx.adjacencies(&hin, &structures)?;
            (hin.fingerprint(), cross_validate_pipeline(&hin, &structures, &adjs, cfg)?, 0)
        }
    };
    let report = json!({
        "command": "eval",
        "seed": cfg.seed,
        "mode": cfg.eval.mode,
        "dataset_fingerprint": fingerprint,
        "config": cfg,
        "folds": cv.folds,
        "mean": cv.mean,
        "std": cv.std,
        "isolated_apps": isolated,
        "timing_seconds": start.elapsed().as_secs_f64(),
    });
    write_json(&ctx.path(&cfg.paths.eval_report), &report)?;
    Ok(report)
}

/// Full rebuild and retrain over in-sample plus batch apps; returns the
/// batch apps' malicious scores.
pub fn rerun_scores(
    in_records: &[(usize, ManifestRecord)],
    batch_records: &[(usize, ManifestRecord)],
    permission_map: &hinmal_core::hin::PermissionTypeMap,
    structures: &[MetaStructure],
    cfg: &PipelineConfig,
) -> Result<Vec<f64>> {
    let mut all = in_records.to_vec();
    all.extend(batch_records.iter().cloned().map(|(line, mut r)| {
        r.label = None;
        (line, r)
    }));
    let hin = Hin::from_records(&all, permission_map)?;
    let adjs = build_all(&hin, structures)?;
    let (mask, _) = training_split(&hin, cfg.holdout_fraction, cfg.seed)?;
    let model = train_with(&hin, structures, &adjs, &cfg.train, &mask)?;
    let rows: Vec<usize> = (in_records.len()..all.len()).collect();
    model.predict_proba(&model.embedding().select_rows(&rows))
}

pub fn bench(ctx: &Context) -> Result<Value> {
    let cfg = &ctx.config;
    let p = &cfg.paths;
    let hin = ctx.load_hin()?;
    let model = ctx.load_model()?;
    let batch_path = ctx.require(&p.batch)?;
    let batch: AppBatch = load_batch(&batch_path, &hin)?;
    let truth = read_truth(&ctx.require(&p.truth)?)?;
    let n_out = batch.len().max(1) as f64;

    let mut best = f64::INFINITY;
    let mut best_prepare = 0.0;
    let mut out = None;
    for _ in 0..cfg.bench.repetitions {
        let t = Instant::now();
        let embedder = Embedder::new(&model, &hin)?;
        let prepared = t.elapsed().as_secs_f64();
        let o = embedder.embed(&batch, &cfg.incremental)?;
        let total = t.elapsed().as_secs_f64();
        if total < best {
            best = total;
            best_prepare = prepared;
        }
        out = Some(o);
    }
    let out = out.expect("at least one repetition");
    let inc_scores = if out.is_empty() { Vec::new() } else { model.predict_proba(&out.embedding)? };
    let inc_verdicts = verdicts(&out.app_ids, &inc_scores, &out.isolated);

    let t = Instant::now();
    let in_records = read_records(&ctx.require(&p.manifest)?)?;
    let batch_records = read_records(&batch_path)?;
    let map_path = ctx.require(&p.permission_map)?;
    let map = parse_permission_map(BufReader::new(File::open(&map_path).map_err(|e| Error::io(&map_path, e))?))?;
    let rerun = rerun_scores(&in_records, &batch_records, &map, model.structures(), cfg)?;
    let rerun_total = t.elapsed().as_secs_f64();
    let rerun_verdicts = verdicts(batch.app_ids(), &rerun, &vec![false; batch.len()]);

    write_verdicts(&ctx.out.join("verdicts_incremental.jsonl"), &inc_verdicts)?;
    write_verdicts(&ctx.out.join("verdicts_rerun.jsonl"), &rerun_verdicts)?;
    let m_inc = score_verdicts(&inc_verdicts, &truth)?;
    let m_rerun = score_verdicts(&rerun_verdicts, &truth)?;
    let inc_per_app = best / n_out;
    let rerun_per_app = rerun_total / n_out;
    let report = json!({
        "command": "bench",
        "seed": cfg.seed,
        "fingerprint": hin.fingerprint(),
        "in_apps": hin.num_apps(),
        "out_apps": batch.len(),
        "threads": rayon::current_num_threads(),
        "incremental": {
            "total_seconds": best,
            "prepare_seconds": best_prepare,
            "per_app_ms": inc_per_app * 1e3,
            "metrics": m_inc,
        },
        "rerun": {
            "total_seconds": rerun_total,
            "per_app_ms": rerun_per_app * 1e3,
            "metrics": m_rerun,
        },
        "speedup": rerun_per_app / inc_per_app,
        "accuracy_gap": {
            "acc": m_inc.acc - m_rerun.acc,
            "f1": m_inc.f1 - m_rerun.f1,
        },
    });
    write_json(&ctx.path(&p.bench_report), &report)?;
    Ok(report)
}

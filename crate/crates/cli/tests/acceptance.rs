//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use hinmal_cli::io::{read_truth, read_verdicts};
use hinmal_core::datagen::{generate, oracle_path_count, oracle_sim, random_hin, SyntheticConfig};
use hinmal_core::detector::evaluate;
use hinmal_core::hin::{parse_manifest, parse_permission_map, AppBatch, Hin, Label};
use hinmal_core::incremental::{Embedder, IncrementalConfig};
use hinmal_core::metastructure::{build_adjacency, build_all, default_structures, parse_spec, MetaStructure};
use hinmal_core::msgat::{loss_on_tape, train_with, Params, TrainConfig, TrainingGraph};
use hinmal_core::numerics::{grad_check, DenseMatrix};
use hinmal_core::Result;

type Check = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- pipeline

fn hinmal(dir: &Path, args: &[&str]) -> std::result::Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hinmal"))
        .args(args)
        .args(["--out", dir.to_str().expect("utf-8 path"), "--threads", "1"])
        .output()
        .map_err(fail)?;
    if !out.status.success() {
        return Err(format!(
            "hinmal {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    serde_json::from_slice(&out.stdout).map_err(fail)
}

/// gen, build, train, embed and detect with the default configuration.
/// Returns the train report and the wall time of `train`.
fn full_run(dir: &Path) -> std::result::Result<(Value, f64), String> {
    hinmal(dir, &["gen"])?;
    hinmal(dir, &["build"])?;
    let t = Instant::now();
    let report = hinmal(dir, &["train"])?;
    let secs = t.elapsed().as_secs_f64();
    hinmal(dir, &["embed"])?;
    hinmal(dir, &["detect"])?;
    Ok((report, secs))
}

/// F1 of a verdict file against the truth file, counted directly.
fn f1_from_files(verdicts: &Path, truth: &Path) -> std::result::Result<f64, String> {
    let truth: HashMap<String, Label> = read_truth(truth)
        .map_err(fail)?
        .into_iter()
        .map(|t| (t.app, t.label))
        .collect();
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for v in read_verdicts(verdicts).map_err(fail)? {
        match (v.label, truth[&v.app]) {
            (Label::Malicious, Label::Malicious) => tp += 1.0,
            (Label::Malicious, Label::Benign) => fp += 1.0,
            (Label::Benign, Label::Malicious) => fn_ += 1.0,
            (Label::Benign, Label::Benign) => {}
        }
    }
    Ok(if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) })
}

struct Pipeline {
    root: tempfile::TempDir,
    first: std::result::Result<(Value, f64), String>,
    bench: Option<std::result::Result<Value, String>>,
}

impl Pipeline {
    fn new() -> Self {
        let root = tempfile::tempdir().expect("tempdir");
        let first = full_run(&root.path().join("a"));
        Self { root, first, bench: None }
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }

    fn bench(&mut self) -> std::result::Result<Value, String> {
        if self.bench.is_none() {
            let a = self.dir("a");
            self.bench = Some(self.first.clone().and_then(|_| hinmal(&a, &["bench"])));
        }
        self.bench.clone().expect("bench ran")
    }
}

// ---------------------------------------------------------------- criteria

fn adjacency_oracle() -> Check {
    let t = Instant::now();
    let structures = default_structures();
    let mut compared = 0usize;
    for seed in 0..200 {
        let hin = random_hin(seed, 10, 8);
        for s in &structures {
            let adj = build_adjacency(&hin, s).map_err(fail)?;
            for i in 0..hin.num_apps() {
                for j in 0..hin.num_apps() {
                    let mut expected = 1u64;
                    for part in s.parts() {
                        expected *= oracle_path_count(&hin, part, i, j).map_err(fail)?;
                    }
                    let got = adj.psi().get(i, j);
                    if got != expected as f64 {
                        return Err(format!("seed {seed} {} ({i},{j}): {got} vs {expected}", s.name()));
                    }
                    compared += 1;
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(secs < 60.0, format!("{compared} entries equal, {secs:.1}s"))
}

fn similarity_oracle() -> Check {
    let structures = default_structures();
    let mut worst = 0.0f64;
    let mut self_pairs = 0usize;
    for seed in 0..200 {
        let hin = random_hin(seed, 10, 8);
        for s in &structures {
            let adj = build_adjacency(&hin, s).map_err(fail)?;
            for i in 0..hin.num_apps() {
                for j in 0..hin.num_apps() {
                    let got = adj.similarity(i, j).map_err(fail)?;
                    worst = worst.max((got - oracle_sim(&hin, s, i, j).map_err(fail)?).abs());
                }
                if adj.psi().get(i, i) > 0.0 {
                    if adj.similarity(i, i).map_err(fail)? != 1.0 {
                        return Err(format!("seed {seed} {} self-similarity of {i} is not 1", s.name()));
                    }
                    self_pairs += 1;
                }
            }
        }
    }
    check(worst <= 1e-12, format!("max error {worst:e}, {self_pairs} self-pairs exactly 1"))
}

fn six_app_hin() -> (Hin, Vec<MetaStructure>) {
    let text = r#"{"app":"a0","apis":["x","y"],"permissions":["P1"],"label":"malicious"}
{"app":"a1","apis":["x"],"permissions":["P1","P2"],"label":"malicious"}
{"app":"a2","apis":["x","z"],"permissions":["P2"],"label":"malicious"}
{"app":"a3","apis":["z"],"permissions":["P3"],"label":"benign"}
{"app":"a4","apis":["w","z"],"permissions":["P3"],"label":"benign"}
{"app":"a5","apis":["w"],"permissions":["P2","P3"],"label":"benign"}"#;
    let map = parse_permission_map("P1,SMS\nP2,NORMAL\nP3,NORMAL\n".as_bytes()).expect("map");
    let hin = Hin::from_records(&parse_manifest(text.as_bytes()).expect("manifest"), &map).expect("hin");
    (hin, parse_spec("M1: A-API-A\nM2: A-P-A").expect("spec"))
}

fn gradient_fidelity() -> Check {
    let (hin, structures) = six_app_hin();
    let adjs = build_all(&hin, &structures).map_err(fail)?;
    let cfg = TrainConfig {
        dim: 4,
        ..TrainConfig::default()
    };
    let graph = TrainingGraph::new(&hin, &adjs, cfg.features, cfg.tau).map_err(fail)?;
    let params = Params::init(11, graph.features().cols(), structures.len(), &cfg);
    let targets = hinmal_core::msgat::training_targets(&hin, &hin.labeled()).map_err(fail)?;
    let values: Vec<DenseMatrix> = params.flatten().into_iter().cloned().collect();
    let err = grad_check(
        |tape, vars| loss_on_tape(tape, vars, &graph, cfg.heads, cfg.leaky_slope, targets.clone()),
        &values,
        1e-5,
    )
    .map_err(fail)?;
    check(err <= 1e-4, format!("max relative error {err:e}"))
}

fn small_synthetic(seed: u64, n_out: usize) -> SyntheticConfig {
    SyntheticConfig {
        n_in: 40,
        n_out,
        apis: 30,
        permissions: 10,
        classes: 20,
        interfaces: 10,
        so_files: 8,
        density: 0.1,
        seed,
        ..SyntheticConfig::default()
    }
}

fn duplication_consistency() -> Check {
    let structures = default_structures();
    let cfg = TrainConfig {
        dim: 8,
        epochs: 3,
        ..TrainConfig::default()
    };
    let inc = IncrementalConfig {
        sigma: 1,
        ..IncrementalConfig::default()
    };
    let (mut cloned, mut skipped, mut worst) = (0usize, 0usize, 0.0f64);
    for seed in 0..50u64 {
        let data = generate(&small_synthetic(seed, 1)).map_err(fail)?;
        let hin = &data.hin;
        let adjs = build_all(hin, &structures).map_err(fail)?;
        let model = train_with(hin, &structures, &adjs, &TrainConfig { seed, ..cfg.clone() }, &hin.labeled())
            .map_err(fail)?;
        let embedder = Embedder::new(&model, hin).map_err(fail)?;
        let n = hin.num_apps() as u64;
        let mut candidates = vec![0usize, ((seed * 7 + 3) % n) as usize, ((seed * 13 + 11) % n) as usize];
        candidates.dedup();
        for a in candidates {
            // Ties go to the lowest index, so an earlier exact twin would be
            // selected in place of `a`.
            let twin = (0..a).any(|j| adjs.iter().any(|adj| adj.similarity(j, a).map(|s| s == 1.0).unwrap_or(false)));
            if twin {
                skipped += 1;
                continue;
            }
            let mut record = data
                .in_records
                .iter()
                .find(|r| r.app == hin.app_ids()[a])
                .cloned()
                .ok_or("record not found")?;
            record.app = format!("clone-of-{}", record.app);
            record.label = None;
            let batch = AppBatch::from_records(&[(1, record)], hin).map_err(fail)?;
            let out = embedder.embed(&batch, &inc).map_err(fail)?;
            let mut expected = vec![0.0; model.dim()];
            for (k, adj) in adjs.iter().enumerate() {
                if adj.psi().get(a, a) <= 0.0 {
                    continue;
                }
                let chosen = &out.selections[k][0].neighbors;
                if chosen != &[a] {
                    return Err(format!("seed {seed} app {a} {}: selected {chosen:?}", adj.name()));
                }
                for (e, v) in expected.iter_mut().zip(model.structure_embeddings()[k].row(a)) {
                    *e += model.beta()[k] * v;
                }
            }
            for (e, v) in expected.iter().zip(out.embedding.row(0)) {
                worst = worst.max((e - v).abs());
            }
            cloned += 1;
        }
    }
    check(
        worst <= 1e-9 && cloned >= 50,
        format!("{cloned} clones matched (max error {worst:e}), {skipped} candidates with an earlier twin skipped"),
    )
}

fn planted_signal(p: &Pipeline) -> Check {
    let (report, secs) = p.first.clone()?;
    let m = &report["holdout_metrics"];
    let (acc, f1) = (m["acc"].as_f64().ok_or("no acc")?, m["f1"].as_f64().ok_or("no f1")?);
    check(
        acc >= 0.95 && f1 >= 0.95 && secs < 600.0,
        format!("held-out acc {acc:.4}, F1 {f1:.4}, training {secs:.1}s on one thread"),
    )
}

fn incremental_fidelity(p: &mut Pipeline) -> Check {
    let bench = p.bench()?;
    let a = p.dir("a");
    let truth = a.join("batch_truth.jsonl");
    let f1_inc = f1_from_files(&a.join("verdicts_incremental.jsonl"), &truth)?;
    let f1_rerun = f1_from_files(&a.join("verdicts_rerun.jsonl"), &truth)?;
    let reported = bench["accuracy_gap"]["f1"].as_f64().ok_or("no gap")?;
    let gap = f1_inc - f1_rerun;
    check(
        gap.abs() <= 0.05 && (reported - gap).abs() < 1e-12,
        format!("F1 incremental {f1_inc:.4}, rerun {f1_rerun:.4}, gap {gap:.4} (reported {reported:.4})"),
    )
}

fn speedup(p: &mut Pipeline) -> Check {
    let bench = p.bench()?;
    let inc = bench["incremental"]["per_app_ms"].as_f64().ok_or("no timing")?;
    let rerun = bench["rerun"]["per_app_ms"].as_f64().ok_or("no timing")?;
    check(
        inc * 10.0 <= rerun,
        format!("{inc:.3} ms/app incremental vs {rerun:.1} ms/app rerun ({:.0}x)", rerun / inc),
    )
}

fn embed_seconds(embedder: &Embedder, batch: &AppBatch) -> Result<f64> {
    let cfg = IncrementalConfig::default();
    let mut best = f64::INFINITY;
    for _ in 0..5 {
        let t = Instant::now();
        embedder.embed(batch, &cfg)?;
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best)
}

fn scaling_shape() -> Check {
    let data = generate(&SyntheticConfig {
        n_out: 400,
        ..SyntheticConfig::default()
    })
    .map_err(fail)?;
    let hin = &data.hin;
    let records: Vec<_> = data.out_records.iter().cloned().enumerate().collect();
    let half = AppBatch::from_records(&records[..200], hin).map_err(fail)?;
    let full = AppBatch::from_records(&records, hin).map_err(fail)?;
    let base = default_structures();
    let doubled: Vec<MetaStructure> = base
        .iter()
        .cloned()
        .chain(base.iter().map(|s| s.renamed(&format!("{}x", s.name()))))
        .collect();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let model_k = |s: &[MetaStructure]| {
        let adjs = build_all(hin, s)?;
        train_with(hin, s, &adjs, &cfg, &hin.labeled())
    };
    let m1 = model_k(&base).map_err(fail)?;
    let m2 = model_k(&doubled).map_err(fail)?;
    let e1 = Embedder::new(&m1, hin).map_err(fail)?;
    let e2 = Embedder::new(&m2, hin).map_err(fail)?;
    let t_base = embed_seconds(&e1, &half).map_err(fail)?;
    let t_out = embed_seconds(&e1, &full).map_err(fail)?;
    let t_k = embed_seconds(&e2, &half).map_err(fail)?;
    let (r_out, r_k) = (t_out / t_base, t_k / t_base);
    let within = |r: f64| (1.4..=2.6).contains(&r);
    check(
        within(r_out) && within(r_k),
        format!("doubling n_out x{r_out:.2}, doubling K x{r_k:.2} (base {:.1} ms)", t_base * 1e3),
    )
}

fn sigma_sweep(p: &Pipeline) -> Check {
    p.first.clone()?;
    let a = p.dir("a");
    let mut f1 = HashMap::new();
    for sigma in [1, 3, 16] {
        let emb = format!("paths.embeddings_out=embeddings_sigma{sigma}.tsv");
        let audit = format!("paths.audit=audit_sigma{sigma}.jsonl");
        let verdicts = format!("paths.verdicts=verdicts_sigma{sigma}.jsonl");
        let report = format!("paths.eval_report=eval_sigma{sigma}.json");
        let sig = format!("incremental.sigma={sigma}");
        hinmal(&a, &["embed", "--set", &sig, "--set", &emb, "--set", &audit])?;
        hinmal(&a, &["detect", "--set", &emb, "--set", &verdicts])?;
        let r = hinmal(&a, &["eval", "--set", &verdicts, "--set", &report])?;
        f1.insert(sigma, r["mean"]["f1"].as_f64().ok_or("no f1")?);
    }
    let (f1_1, f1_3, f1_16) = (f1[&1], f1[&3], f1[&16]);
    check(
        f1_3 >= f1_1 && f1_3 >= f1_16 - 0.02,
        format!("F1 sigma=1 {f1_1:.4}, sigma=3 {f1_3:.4}, sigma=16 {f1_16:.4}"),
    )
}

fn determinism(p: &Pipeline) -> Check {
    p.first.clone()?;
    let (a, b) = (p.dir("a"), p.dir("b"));
    full_run(&b)?;
    let files = ["model.ckpt", "embeddings_in.tsv", "embeddings_out.tsv", "audit.jsonl", "verdicts.jsonl"];
    for f in files {
        let x = std::fs::read(a.join(f)).map_err(fail)?;
        let y = std::fs::read(b.join(f)).map_err(fail)?;
        if x != y {
            return Err(format!("{f} differs between runs"));
        }
    }
    Ok(format!("{} outputs byte-identical across two runs", files.len()))
}

fn metric_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..10_000 {
        let [tp, tn, fp, fn_]: [usize; 4] = std::array::from_fn(|_| rng.random_range(0..40));
        let mut pairs: Vec<(Label, Label)> = Vec::new();
        pairs.extend(std::iter::repeat_n((Label::Malicious, Label::Malicious), tp));
        pairs.extend(std::iter::repeat_n((Label::Benign, Label::Benign), tn));
        pairs.extend(std::iter::repeat_n((Label::Malicious, Label::Benign), fp));
        pairs.extend(std::iter::repeat_n((Label::Benign, Label::Malicious), fn_));
        for i in (1..pairs.len()).rev() {
            pairs.swap(i, rng.random_range(0..=i));
        }
        let (pred, truth): (Vec<Label>, Vec<Label>) = pairs.into_iter().unzip();
        let m = evaluate(&pred, &truth).map_err(fail)?;
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let expected = [
            ratio(tp, tp + fp),
            ratio(tp, tp + fn_),
            ratio(fp, fp + tn),
            f1,
            ratio(tp + tn, tp + tn + fp + fn_),
        ];
        let got = [m.precision, m.recall, m.fp_rate, m.f1, m.acc];
        if (m.tp, m.tn, m.fp, m.fn_) != (tp, tn, fp, fn_) || got != expected {
            return Err(format!("trial {trial}: counts ({tp},{tn},{fp},{fn_}) gave {m:?}"));
        }
    }
    Ok("10000 confusion matrices match".into())
}

fn null_model(p: &Pipeline) -> Check {
    let c = p.dir("null");
    hinmal(&c, &["gen", "--set", "synthetic.p_sig=0.5"])?;
    hinmal(&c, &["build"])?;
    let r = hinmal(&c, &["eval", "--set", "eval.mode=cv"])?;
    let acc = r["mean"]["acc"].as_f64().ok_or("no acc")?;
    let std = r["std"]["acc"].as_f64().unwrap_or(f64::NAN);
    check(
        (0.4..=0.6).contains(&acc),
        format!("5-fold mean acc {acc:.4} (std {std:.4}) at p_sig 0.5"),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Check)> = Vec::new();
    let mut report = |id: usize, name: &'static str, c: Check| {
        let (tag, detail) = match &c {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("[{tag}] {id:>2} {name}: {detail}");
        results.push((id, name, c));
    };
    report(1, "adjacency matches path-count oracle", adjacency_oracle());
    report(2, "similarity matches oracle", similarity_oracle());
    report(3, "gradient fidelity", gradient_fidelity());
    report(4, "duplicate app consistency", duplication_consistency());
    let mut pipeline = Pipeline::new();
    report(5, "detection on planted signal", planted_signal(&pipeline));
    report(6, "incremental vs rerun fidelity", incremental_fidelity(&mut pipeline));
    report(7, "incremental speedup", speedup(&mut pipeline));
    report(8, "embedding cost scaling", scaling_shape());
    report(9, "neighbor count sweep", sigma_sweep(&pipeline));
    report(10, "determinism", determinism(&pipeline));
    report(11, "metric identities", metric_identities());
    report(12, "null model", null_model(&pipeline));
    let failed = results.iter().filter(|(_, _, c)| c.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

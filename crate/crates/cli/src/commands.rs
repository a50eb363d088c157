use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fogguard_core::config::EvalMethod;
use fogguard_core::experiment::{
    aggregate, evaluate_settings, mean_gap, train_variant, write_aggregate_csv, RunResult,
};
use fogguard_core::inference::accuracy;
use fogguard_core::resiliency::Method;
use fogguard_core::runtime::{
    compare_with_simulator, run_pipeline, serve_node, ChaosAction, ChaosEvent, ChaosPlan, Launcher, NodePlan,
    ProcessLauncher, StopHandle, ThreadLauncher, Transcript,
};
use fogguard_core::{Dataset, DistributedDnn, LoadedConfig, Prediction, Variant};
use serde::Serialize;

use crate::manifest::{ReportEntry, RunEntry, RunManifest};
use crate::{
    Category, Cli, CliError, CliResult, Command, CommonArgs, DistributedArgs, EvaluateArgs, MethodArg, ResiliencyArgs,
    ServeNodeArgs, TrainArgs, VariantArg,
};

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => train(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Resiliency(a) => resiliency(&a),
        Command::ServeNode(a) => serve(&a),
        Command::RunDistributed(a) => distributed(&a, false),
        Command::Chaos(a) => distributed(&a, true),
        Command::Report(a) => {
            let ctx = Ctx::open(&a)?;
            let manifest = RunManifest::read(&ctx.out)?;
            report(&ctx, &manifest)
        }
    }
}

struct Ctx {
    loaded: LoadedConfig,
    out: PathBuf,
}

impl Ctx {
    fn open(common: &CommonArgs) -> CliResult<Self> {
        let loaded = LoadedConfig::load(&common.config)?;
        let out = match &common.output_dir {
            Some(d) => d.clone(),
            None => loaded.output_dir(),
        };
        Ok(Self { loaded, out })
    }

    fn manifest(&self) -> CliResult<RunManifest> {
        RunManifest::open(&self.out, &self.loaded.config.name, &self.loaded.hash)
    }

    fn seeds(&self, requested: &[u64]) -> Vec<u64> {
        if requested.is_empty() {
            self.loaded.config.seeds.clone()
        } else {
            requested.to_vec()
        }
    }

    fn run_dir(variant: Variant, seed: u64) -> String {
        format!("{variant}/seed-{seed}")
    }

    fn load_model(&self, manifest: &RunManifest, variant: Variant, seed: u64) -> CliResult<DistributedDnn<f32>> {
        let entry = manifest.entry(variant.name(), seed)?;
        let graph = self.loaded.config.graph(variant)?;
        Ok(DistributedDnn::load_weights(graph, &self.out.join(&entry.weights))?)
    }
}

fn variants(arg: VariantArg) -> Vec<Variant> {
    match arg {
        VariantArg::Vanilla => vec![Variant::Vanilla],
        VariantArg::Deepfogguard => vec![Variant::Deepfogguard],
        VariantArg::Both => Variant::BOTH.to_vec(),
    }
}

fn single_variant(arg: VariantArg) -> CliResult<Variant> {
    match arg {
        VariantArg::Both => Err(CliError::config("this command needs --variant vanilla or --variant deepfogguard")),
        a => Ok(variants(a)[0]),
    }
}

fn train(args: &TrainArgs) -> CliResult<()> {
    let mut ctx = Ctx::open(&args.common)?;
    let mut overrides = BTreeMap::new();
    if let Some(e) = args.epochs {
        ctx.loaded.config.training.epochs = e;
        overrides.insert("epochs".to_string(), e.to_string());
    }
    if let Some(lr) = args.learning_rate {
        ctx.loaded.config.training.learning_rate = lr;
        overrides.insert("learning_rate".to_string(), lr.to_string());
    }
    ctx.loaded.config.validate()?;
    let mut manifest = ctx.manifest()?;
    let data = ctx.loaded.load_dataset()?;
    let cfg = &ctx.loaded.config;
    for seed in ctx.seeds(&args.seeds) {
        for variant in variants(args.variant) {
            eprintln!("training {variant}, seed {seed}");
            let model = train_variant(cfg, &data, variant, seed, |s| {
                eprintln!("  epoch {:>3}  loss {:.5}  val accuracy {:.4}", s.epoch, s.train_loss, s.val_accuracy);
            })?;
            let rel = Ctx::run_dir(variant, seed);
            let dir = ctx.out.join(&rel);
            fs::create_dir_all(&dir)?;
            model.dnn.save_weights(&dir.join("weights.dfgw"))?;
            let mut w = csv::Writer::from_path(dir.join("history.csv"))?;
            w.write_record(["epoch", "train_loss", "val_accuracy", "selected", "seed", "config_hash"])?;
            for s in &model.history {
                w.write_record([
                    s.epoch.to_string(),
                    s.train_loss.to_string(),
                    s.val_accuracy.to_string(),
                    (s.epoch == model.best_epoch).to_string(),
                    seed.to_string(),
                    ctx.loaded.hash.clone(),
                ])?;
            }
            w.flush()?;
            let entry = RunEntry {
                seed,
                weights: format!("{rel}/weights.dfgw"),
                history: format!("{rel}/history.csv"),
                best_epoch: model.best_epoch,
                val_accuracy: model.val_accuracy,
                skip_hyperconnections: model.dnn.graph.skip_count(),
                parameters: model.dnn.param_count(),
                overrides: overrides.clone(),
                reports: BTreeMap::new(),
            };
            println!(
                "{variant} seed {seed}: best epoch {}, val accuracy {:.4}, {} skip hyperconnections, weights {}",
                entry.best_epoch,
                entry.val_accuracy,
                entry.skip_hyperconnections,
                ctx.out.join(&entry.weights).display()
            );
            manifest.runs.entry(variant.name().to_string()).or_default().insert(seed, entry);
            manifest.write(&ctx.out)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EvaluateOutput<'a> {
    variant: Variant,
    seed: u64,
    split: fogguard_core::SplitKind,
    failed: &'a [String],
    accuracy: f64,
    config_hash: &'a str,
}

fn evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let ctx = Ctx::open(&args.common)?;
    let variant = single_variant(args.variant)?;
    let manifest = RunManifest::read(&ctx.out)?;
    let dnn = ctx.load_model(&manifest, variant, args.seed)?;
    let g = &dnn.graph;
    let mut alive = vec![true; g.nodes.len()];
    for id in &args.failed {
        let n = g.node_index(id).ok_or_else(|| CliError::config(format!("unknown node {id}")))?;
        if !g.nodes[n].fallible {
            return Err(CliError::config(format!("{id} is not a fallible node")));
        }
        alive[n] = false;
    }
    let data = ctx.loaded.load_dataset()?;
    let ev = &ctx.loaded.config.evaluation;
    let acc = accuracy(&dnn, &data, ev.split, &alive, ev.guess)?;
    let out = EvaluateOutput {
        variant,
        seed: args.seed,
        split: ev.split,
        failed: &args.failed,
        accuracy: acc,
        config_hash: &ctx.loaded.hash,
    };
    println!("{}", serde_json::to_string_pretty(&out).map_err(|e| CliError::other(e.to_string()))?);
    Ok(())
}

fn method_name(m: &Method) -> String {
    match m {
        Method::Exact => "exact".into(),
        Method::MonteCarlo { samples, seed, .. } => format!("monte_carlo(samples={samples}, seed={seed})"),
    }
}

fn resiliency(args: &ResiliencyArgs) -> CliResult<()> {
    let mut ctx = Ctx::open(&args.common)?;
    match args.method {
        Some(MethodArg::Exact) => ctx.loaded.config.evaluation.method = EvalMethod::Exact,
        Some(MethodArg::Mc) => {
            ctx.loaded.config.evaluation.method = EvalMethod::MonteCarlo { samples: args.samples, seed: args.mc_seed }
        }
        None => {}
    }
    ctx.loaded.config.validate()?;
    let mut manifest = RunManifest::read(&ctx.out)?;
    if manifest.config_hash != ctx.loaded.hash {
        return Err(CliError::config("the manifest was produced by a different config"));
    }
    let data = ctx.loaded.load_dataset()?;
    let cfg = &ctx.loaded.config;
    for variant in variants(args.variant) {
        let graph = cfg.graph(variant)?;
        let settings = if args.tiers.is_empty() {
            cfg.reliability_settings(&graph)?
        } else {
            args.tiers.iter().map(|t| Ok((t.clone(), cfg.setting(&graph, t)?))).collect::<CliResult<Vec<_>>>()?
        };
        if settings.is_empty() {
            return Err(CliError::config("no reliability settings configured or requested"));
        }
        for seed in ctx.seeds(&args.seeds) {
            let dnn = ctx.load_model(&manifest, variant, seed)?;
            let reports = evaluate_settings(cfg, &dnn, &data, &settings)?;
            let rel = Ctx::run_dir(variant, seed);
            let mut entries = Vec::new();
            for (name, report) in reports {
                let path = format!("{rel}/resiliency-{name}.csv");
                let extra = [
                    ("setting", name.clone()),
                    ("variant", variant.name().to_string()),
                    ("seed", seed.to_string()),
                    ("config_hash", ctx.loaded.hash.clone()),
                ];
                report.write_csv(BufWriter::new(File::create(ctx.out.join(&path))?), &extra)?;
                println!("{variant} seed {seed} {name}: average accuracy {:.4}", report.average_accuracy);
                entries.push((
                    name,
                    ReportEntry {
                        path,
                        average_accuracy: report.average_accuracy,
                        method: method_name(&report.method),
                    },
                ));
            }
            manifest.entry_mut(variant.name(), seed)?.reports.extend(entries);
        }
    }
    manifest.write(&ctx.out)?;
    report(&ctx, &manifest)
}

fn report(ctx: &Ctx, manifest: &RunManifest) -> CliResult<()> {
    if manifest.config_hash != ctx.loaded.hash {
        return Err(CliError::config("the manifest was produced by a different config"));
    }
    let cfg = &ctx.loaded.config;
    let order: Vec<String> =
        cfg.reliability_settings(&cfg.graph(Variant::Deepfogguard)?)?.into_iter().map(|(n, _)| n).collect();
    let rank = |s: &str| order.iter().position(|o| o == s).unwrap_or(order.len());
    let mut results = Vec::new();
    for (vname, runs) in &manifest.runs {
        let variant =
            Variant::parse(vname).ok_or_else(|| CliError::data(format!("unknown variant {vname} in manifest")))?;
        for (seed, entry) in runs {
            for (setting, r) in &entry.reports {
                results.push(RunResult {
                    variant,
                    setting: setting.clone(),
                    seed: *seed,
                    average_accuracy: r.average_accuracy,
                });
            }
        }
    }
    if results.is_empty() {
        return Err(CliError::config("no resiliency reports recorded yet; run `fogguard resiliency` first"));
    }
    results.sort_by(|a, b| {
        (a.variant, rank(&a.setting), &a.setting, a.seed).cmp(&(b.variant, rank(&b.setting), &b.setting, b.seed))
    });
    let rows = aggregate(&results);
    write_aggregate_csv(
        BufWriter::new(File::create(ctx.out.join("aggregate.csv"))?),
        &rows,
        &ctx.loaded.hash,
        &manifest.seeds,
    )?;
    println!("{:<14} {:<12} {:>4} {:>9} {:>9}", "variant", "setting", "runs", "mean", "std_dev");
    for r in &rows {
        println!("{:<14} {:<12} {:>4} {:>9.4} {:>9.4}", r.variant.name(), r.setting, r.runs, r.mean, r.std_dev);
    }
    let mut seen = Vec::new();
    for r in &rows {
        if !seen.contains(&r.setting) {
            seen.push(r.setting.clone());
            if let Ok(gap) = mean_gap(&rows, &r.setting) {
                println!("gap {:<12} {:+.2} pp", r.setting, gap * 100.0);
            }
        }
    }
    Ok(())
}

fn serve(args: &ServeNodeArgs) -> CliResult<()> {
    let loaded = LoadedConfig::load(&args.config)?;
    let variant = single_variant(args.variant)?;
    let graph = loaded.config.graph(variant)?;
    let mut timeouts = loaded.config.runtime.timeouts;
    if let Some(v) = args.round_timeout_ms {
        timeouts.round_ms = v;
    }
    if let Some(v) = args.heartbeat_ms {
        timeouts.heartbeat_ms = v;
    }
    if let Some(v) = args.suspicion_ms {
        timeouts.suspicion_ms = v;
    }
    let plan = NodePlan::from_named(&graph, &args.node, args.listen, &args.peers, args.coordinator, timeouts)?;
    let dnn = DistributedDnn::load_weights(graph, &args.weights)?;
    serve_node(Arc::new(dnn), plan, StopHandle::new())?;
    Ok(())
}

/// The first `n` instances of the evaluation split, one vector per source.
fn split_instances(data: &Dataset, indices: &[usize], n: usize) -> Vec<Vec<Vec<f32>>> {
    indices.iter().take(n).map(|&i| data.views.iter().map(|v| v.row(i).to_vec()).collect()).collect()
}

fn prediction_label(p: &Prediction) -> String {
    match p {
        Prediction::Class(c) => c.to_string(),
        Prediction::RandomGuess => "random_guess".into(),
    }
}

#[derive(Serialize)]
struct Verdict<'a> {
    pass: bool,
    instances: usize,
    max_deviation: f64,
    null_mismatches: usize,
    tolerance: f64,
    events: &'a [String],
    variant: Variant,
    seed: u64,
    config_hash: &'a str,
}

fn distributed(args: &DistributedArgs, verdict: bool) -> CliResult<()> {
    let ctx = Ctx::open(&args.common)?;
    let variant = single_variant(args.variant)?;
    let manifest = RunManifest::read(&ctx.out)?;
    let dnn = ctx.load_model(&manifest, variant, args.seed)?;
    let cfg = &ctx.loaded.config;

    let mut plan = match &args.plan {
        Some(p) => ChaosPlan::load(p)?,
        None => ChaosPlan::empty(),
    };
    for (node, at) in &args.kills {
        plan.events.push(ChaosEvent {
            at_instance: Some(*at),
            at_ms: None,
            node: node.clone(),
            action: ChaosAction::Kill,
        });
    }
    plan.validate(&dnn.graph)?;

    let data = ctx.loaded.load_dataset()?;
    let indices = data.split(cfg.evaluation.split).to_vec();
    let instances = split_instances(&data, &indices, args.instances);
    let mut options = cfg.runtime;
    if let Some(ms) = args.round_timeout_ms {
        options.timeouts.round_ms = ms;
    }

    let dnn = Arc::new(dnn);
    let mut launcher: Box<dyn Launcher> = if args.threads {
        Box::new(ThreadLauncher::new(dnn.clone()))
    } else {
        let exe = std::env::current_exe()?;
        let entry = manifest.entry(variant.name(), args.seed)?;
        let abs = |p: &Path| fs::canonicalize(p).map(|p| p.display().to_string());
        let base = vec![
            "serve-node".to_string(),
            "--config".to_string(),
            abs(&args.common.config)?,
            "--variant".to_string(),
            variant.name().to_string(),
            "--weights".to_string(),
            abs(&ctx.out.join(&entry.weights))?,
        ];
        Box::new(ProcessLauncher::new(exe, base, dnn.graph.clone()))
    };
    let transcript = run_pipeline(&dnn, &instances, &plan, launcher.as_mut(), &options)?;

    let dir = ctx.out.join(Ctx::run_dir(variant, args.seed)).join(if verdict { "chaos" } else { "distributed" });
    fs::create_dir_all(&dir)?;
    write_transcript(&dir, &transcript, &data, &indices, &ctx.loaded.hash, args.seed)?;
    let k = dnn.class_count() as f64;
    let score: f64 = transcript
        .records
        .iter()
        .zip(&indices)
        .map(|(r, &i)| match r.predicted {
            Prediction::Class(c) => f64::from(u8::from(c == data.labels[i])),
            Prediction::RandomGuess => 1.0 / k,
        })
        .sum();
    let guesses = transcript.records.iter().filter(|r| r.predicted == Prediction::RandomGuess).count();
    println!(
        "{variant} seed {}: {} instances, accuracy {:.4}, {guesses} random guesses, events: [{}]",
        args.seed,
        transcript.records.len(),
        score / transcript.records.len().max(1) as f64,
        transcript.events.join(", ")
    );
    if !verdict {
        return Ok(());
    }
    let eq = compare_with_simulator(&dnn, &instances, &transcript, args.tolerance)?;
    let v = Verdict {
        pass: eq.pass,
        instances: eq.instances,
        max_deviation: eq.max_deviation,
        null_mismatches: eq.null_mismatches,
        tolerance: eq.tolerance,
        events: &transcript.events,
        variant,
        seed: args.seed,
        config_hash: &ctx.loaded.hash,
    };
    let text = serde_json::to_string_pretty(&v).map_err(|e| CliError::other(e.to_string()))?;
    fs::write(dir.join("verdict.json"), format!("{text}\n"))?;
    println!(
        "verdict: {} (max deviation {:.3e}, {} null mismatches)",
        if eq.pass { "pass" } else { "fail" },
        eq.max_deviation,
        eq.null_mismatches
    );
    if eq.pass {
        Ok(())
    } else {
        Err(CliError { category: Category::Verdict, message: "runtime outputs differ from the simulator".into() })
    }
}

fn write_transcript(
    dir: &Path,
    transcript: &Transcript,
    data: &Dataset,
    indices: &[usize],
    config_hash: &str,
    seed: u64,
) -> CliResult<()> {
    let text = serde_json::to_string_pretty(transcript).map_err(|e| CliError::other(e.to_string()))?;
    fs::write(dir.join("transcript.json"), format!("{text}\n"))?;
    let mut w = csv::Writer::from_path(dir.join("outcomes.csv"))?;
    w.write_record(["inference_id", "alive", "predicted", "label", "latency_ms", "seed", "config_hash"])?;
    for (r, &i) in transcript.records.iter().zip(indices) {
        let alive: String = r.alive.iter().map(|&a| if a { '1' } else { '0' }).collect();
        w.write_record([
            r.inference_id.to_string(),
            alive,
            prediction_label(&r.predicted),
            data.labels[i].to_string(),
            format!("{:.3}", r.latency_ms),
            seed.to_string(),
            config_hash.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

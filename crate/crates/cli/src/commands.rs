use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use coldstart::data::{self, USER, VIDEO};
use coldstart::eval::{self, compute_auc, generate_world, rela_impr, Experiment};
use coldstart::graph::{read_graph, write_graph, Vocabulary};
use coldstart::model::{checkpoint_manifest, read_checkpoint, write_checkpoint, Model};
use coldstart::sampler::{sample_all, write_store, NeighborStore};
use coldstart::serving::{self, Scorer, ServerConfig};
use coldstart::train::{check_subset, finetune, predict_all, pretrain, Corpus};

use crate::config::RunConfig;
use crate::manifest::Recorder;
use crate::{Cli, CliError, Command, Inputs};

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    coldstart::Error::Io { path: path.into(), source: e }.into()
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Graph, users and neighbor store, plus the vocabulary that names them.
fn load_inputs(inputs: &Inputs, rec: &mut Recorder) -> Result<(Corpus, Vocabulary), CliError> {
    for p in [&inputs.graph, &inputs.users, &inputs.neighbors] {
        rec.input(p)?;
    }
    let t = Instant::now();
    let (graph, mut vocab) = read_graph(&inputs.graph)?;
    let users = data::read_users(&inputs.users, &mut vocab)?;
    let store = NeighborStore::open(&inputs.neighbors)?;
    let corpus = Corpus::with_store(&graph, users, &store)?;
    rec.lap("load", t);
    Ok((corpus, vocab))
}

fn read_imps(path: &Path, vocab: &Vocabulary, rec: &mut Recorder) -> Result<Vec<data::Impression>, CliError> {
    rec.input(path)?;
    Ok(data::read_impressions(path, vocab)?)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    let name = command_name(&cli.command);
    let mut rec = Recorder::new(name, cfg.snapshot(), cfg.seed()?);
    if let Some(c) = &cli.config {
        rec.input(c)?;
    }
    let default_manifest = |out: &Path| Some(cli.manifest.clone().unwrap_or_else(|| with_suffix(out, ".manifest.json")));
    let manifest_path: Option<PathBuf> = match &cli.command {
        Command::SynthData { out } => {
            let t = Instant::now();
            let world = generate_world(&cfg.world()?)?;
            world.write(out)?;
            rec.lap("generate", t);
            rec.output(out)?;
            println!(
                "wrote {} videos, {} users, {} / {} / {} impressions to {}",
                world.videos.len(),
                world.users.len(),
                world.d_full.len(),
                world.d_cold.len(),
                world.d_test.len(),
                out.display()
            );
            Some(cli.manifest.clone().unwrap_or_else(|| out.join("synth.manifest.json")))
        }
        Command::BuildGraph { videos, out } => {
            rec.input(videos)?;
            let t = Instant::now();
            let mut vocab = Vocabulary::new();
            let (build_ts, nodes) = data::read_videos(videos, &mut vocab)?;
            let graph = eval::build_graph(build_ts, nodes, cfg.usize("semantic_k")?, cfg.exec()?)?;
            write_graph(&graph, &vocab, out)?;
            rec.lap("build", t);
            rec.output(out)?;
            let cov = graph.coverage();
            println!(
                "{} videos ({} cold); physical coverage {:.4}, semantic coverage {:.4}",
                graph.videos().len(),
                cov.cold_videos,
                cov.physical,
                cov.semantic
            );
            Some(cli.manifest.clone().unwrap_or_else(|| out.join("graph.manifest.json")))
        }
        Command::SampleNeighbors { graph, out } => {
            rec.input(graph)?;
            let t = Instant::now();
            let (g, _) = read_graph(graph)?;
            let k = cfg.usize("neighbors_k")?;
            let cgs = sample_all(&g, k, cfg.exec()?)?;
            write_store(out, &cgs, k)?;
            rec.lap("sample", t);
            rec.output(out)?;
            println!("sampled {} cold videos with k={k}", cgs.len());
            default_manifest(out)
        }
        Command::Pretrain { inputs, train, out, metrics } => {
            let (corpus, vocab) = load_inputs(inputs, &mut rec)?;
            let d_full = read_imps(train, &vocab, &mut rec)?;
            let t = Instant::now();
            let model = Model::init(cfg.model()?, &corpus.store)?;
            let (model, report) = pretrain(model, &corpus, &d_full, &cfg.train_for("pretrain_epochs")?)?;
            rec.lap("train", t);
            write_checkpoint(&model, out)?;
            let metrics = metrics.clone().unwrap_or_else(|| with_suffix(out, ".metrics.tsv"));
            report.write_metrics(&metrics)?;
            rec.output(out)?;
            rec.output(&metrics)?;
            println!("pretrained {} steps; epoch losses {:?}", report.steps.len(), report.epoch_losses());
            default_manifest(out)
        }
        Command::Finetune { inputs, checkpoint, train, full, out, metrics } => {
            let (corpus, vocab) = load_inputs(inputs, &mut rec)?;
            rec.input(checkpoint)?;
            let model = read_checkpoint(checkpoint)?;
            let d_cold = read_imps(train, &vocab, &mut rec)?;
            if let Some(full) = full {
                check_subset(&d_cold, &read_imps(full, &vocab, &mut rec)?)?;
            }
            let t = Instant::now();
            let (model, report) =
                finetune(model, &cfg.model()?, &corpus, &d_cold, &cfg.train_for("finetune_epochs")?)?;
            rec.lap("train", t);
            write_checkpoint(&model, out)?;
            let metrics = metrics.clone().unwrap_or_else(|| with_suffix(out, ".metrics.tsv"));
            report.write_metrics(&metrics)?;
            rec.output(out)?;
            rec.output(&metrics)?;
            println!("fine-tuned {} steps; epoch losses {:?}", report.steps.len(), report.epoch_losses());
            default_manifest(out)
        }
        Command::Eval { inputs, checkpoint, test, out, baseline_auc, predictions } => {
            let (corpus, vocab) = load_inputs(inputs, &mut rec)?;
            rec.input(checkpoint)?;
            let model = read_checkpoint(checkpoint)?;
            let d_test = read_imps(test, &vocab, &mut rec)?;
            let t = Instant::now();
            let mask = cfg.mask()?;
            let scores = predict_all(&model, &corpus, &d_test, mask, cfg.exec()?);
            let labels: Vec<bool> = d_test.iter().map(|i| i.label).collect();
            let auc = compute_auc(&scores, &labels)?;
            rec.lap("score", t);
            let mut report = format!(
                "metric\tvalue\nmask\t{mask}\nimpressions\t{}\npositives\t{}\nauc\t{auc:.6}\n",
                d_test.len(),
                labels.iter().filter(|&&l| l).count()
            );
            if let Some(b) = baseline_auc {
                writeln!(report, "rela_impr_pct\t{:.4}", rela_impr(auc, *b)?).expect("string write");
            }
            write_text(out, &report)?;
            rec.output(out)?;
            if let Some(p) = predictions {
                let mut text = String::from("impression\tscore\tlabel\n");
                for (imp, s) in d_test.iter().zip(&scores) {
                    writeln!(text, "{}\t{s}\t{}", imp.id, u8::from(imp.label)).expect("string write");
                }
                write_text(p, &text)?;
                rec.output(p)?;
            }
            print!("{report}");
            default_manifest(out)
        }
        Command::Ablate { inputs, full, cold, test, out } => {
            let (corpus, vocab) = load_inputs(inputs, &mut rec)?;
            let d_full = read_imps(full, &vocab, &mut rec)?;
            let d_cold = read_imps(cold, &vocab, &mut rec)?;
            check_subset(&d_cold, &d_full)?;
            let d_test = read_imps(test, &vocab, &mut rec)?;
            let ex = Experiment {
                corpus,
                d_full,
                d_cold,
                d_test,
                model: cfg.model()?,
                train: cfg.train()?,
                pretrain_epochs: cfg.usize("pretrain_epochs")?,
                finetune_epochs: cfg.usize("finetune_epochs")?,
            };
            let t = Instant::now();
            let report = eval::run_ablation(&ex, &cfg.ablation_masks()?)?;
            rec.lap("ablation", t);
            write_text(out, &report.to_tsv())?;
            rec.output(out)?;
            print!("{}", report.to_tsv());
            default_manifest(out)
        }
        Command::Serve { inputs, checkpoint, addr, exact } => {
            let (corpus, vocab) = load_inputs(inputs, &mut rec)?;
            rec.input(checkpoint)?;
            let model = read_checkpoint(checkpoint)?;
            let scorer = Arc::new(Scorer::new(model, &corpus, vocab));
            let server_cfg = ServerConfig { threads: cfg.usize("server.threads")?, exact: *exact };
            let handle = serving::serve(scorer, addr, server_cfg)?;
            // Written before blocking so the run is recorded even if killed.
            let path = cli.manifest.clone();
            rec.finish(path.as_deref())?;
            println!("listening on {}", handle.addr());
            use std::io::Write;
            std::io::stdout().flush().ok();
            handle.join();
            return Ok(());
        }
        Command::Bench { addr, graph, users, out } => {
            rec.input(graph)?;
            rec.input(users)?;
            let (g, mut vocab) = read_graph(graph)?;
            let user_ids = data::read_users(users, &mut vocab)?;
            let name = |space: &str, id: u64| vocab.external(space, id).unwrap_or_default().to_string();
            let user_names: Vec<String> = user_ids.iter().map(|(u, _)| name(USER, *u)).collect();
            let mut warm: Vec<_> = g.warm_videos().collect();
            let mut cold: Vec<_> = g.cold_videos().collect();
            warm.sort();
            cold.sort();
            let warm: Vec<String> = warm.into_iter().map(|v| name(VIDEO, v.0)).collect();
            let cold: Vec<String> = cold.into_iter().map(|v| name(VIDEO, v.0)).collect();
            let reqs = serving::workload(&cfg.workload()?, &user_names, &warm, &cold);
            let addr = addr
                .parse()
                .map_err(|_| CliError::Config(format!("bad address `{addr}`")))?;
            let t = Instant::now();
            let report = serving::bench(addr, &reqs)?;
            rec.lap("bench", t);
            write_text(out, &report.to_text())?;
            rec.output(out)?;
            print!("{}", report.to_text());
            default_manifest(out)
        }
        Command::DumpNeighbors { neighbors, out } => {
            rec.input(neighbors)?;
            let text = NeighborStore::open(neighbors)?.dump()?;
            emit(&text, out.as_deref(), &mut rec)?;
            out.as_deref().and_then(default_manifest).or(cli.manifest.clone())
        }
        Command::DumpCheckpoint { checkpoint, out } => {
            rec.input(checkpoint)?;
            let bytes = std::fs::read(checkpoint).map_err(|e| io_err(checkpoint, e))?;
            let text = checkpoint_manifest(&bytes)?;
            emit(&text, out.as_deref(), &mut rec)?;
            out.as_deref().and_then(default_manifest).or(cli.manifest.clone())
        }
    };
    rec.finish(manifest_path.as_deref())?;
    Ok(())
}

fn emit(text: &str, out: Option<&Path>, rec: &mut Recorder) -> Result<(), CliError> {
    match out {
        Some(p) => {
            write_text(p, text)?;
            rec.output(p)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::SynthData { .. } => "synth-data",
        Command::BuildGraph { .. } => "build-graph",
        Command::SampleNeighbors { .. } => "sample-neighbors",
        Command::Pretrain { .. } => "pretrain",
        Command::Finetune { .. } => "finetune",
        Command::Eval { .. } => "eval",
        Command::Ablate { .. } => "ablate",
        Command::Serve { .. } => "serve",
        Command::Bench { .. } => "bench",
        Command::DumpNeighbors { .. } => "dump-neighbors",
        Command::DumpCheckpoint { .. } => "dump-checkpoint",
    }
}

//! Command-line front end: data preparation, the individual training stages,
//! full co-training runs, evaluation and reports.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rxcycle::backbone::{Backbone, BackboneScorer};
use rxcycle::checkpoint::Checkpoint;
use rxcycle::config::Config;
use rxcycle::cycle::{
    beta_grid, predictions_csv, run_cycle, score_backbone, sweep_beta, sweep_csv, train_backbone, train_gcn, Workspace,
};
use rxcycle::data::{load_dataset, split_dataset, write_dataset};
use rxcycle::emb::EmbeddingStore;
use rxcycle::metrics::{EvalReport, PairRecord};
use rxcycle::ontology::IngredientGraph;
use rxcycle::par::Exec;
use rxcycle::rx_parse::{extract_concepts, Lexicon};
use rxcycle::synth::{synth_generate, SynthSpec};

#[derive(Parser)]
#[command(
    name = "rxcycle",
    version,
    about = "Graph-augmented co-training for prescription sentence similarity"
)]
struct Cli {
    /// Seed for splitting, initialization and generation (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for every file a command writes.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Run data-parallel loops on the current thread only.
    #[arg(long, global = true)]
    serial: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct DataArgs {
    /// Dataset JSONL. Pairs without split labels are split with the
    /// configured ratio.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    ontology_edges: Option<PathBuf>,
    #[arg(long)]
    drug_map: Option<PathBuf>,
    /// EMB1 sentence and drug-span vectors.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract concepts from sentences given as arguments or one per line in a file.
    Parse {
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        sentences: Vec<String>,
    },
    /// Generate the synthetic benchmark: dataset, ontology, drug map and lexicon.
    Synth {
        /// Flat TOML overriding generator parameters.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n_drugs: Option<usize>,
        #[arg(long)]
        n_pairs: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Seeded train/test split; writes dataset.jsonl with split labels.
    Split {
        #[arg(long)]
        data: PathBuf,
        /// Training fraction; defaults to the configured split ratio.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Build the drug graph from backbone scores and dump it as JSON.
    BuildGraph {
        #[command(flatten)]
        data: DataArgs,
        /// Backbone checkpoint; a bootstrap backbone is trained when absent.
        #[arg(long)]
        backbone: Option<PathBuf>,
    },
    /// Train the backbone, optionally against GCN pseudo labels.
    TrainBackbone {
        #[command(flatten)]
        data: DataArgs,
        /// predictions.csv whose `gcn` column supplies test-pair pseudo labels.
        #[arg(long)]
        pseudo: Option<PathBuf>,
    },
    /// Train the GCN on a graph built from backbone scores.
    TrainGcn {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        backbone: Option<PathBuf>,
    },
    /// Full cyclic co-training run with per-iteration checkpoints.
    RunCycle {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Pearson, MSE and the diagnostic ordering from a predictions.csv.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Final backbone Pearson over a grid of ontology weights.
    SweepBeta {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Comma-separated betas; defaults to 0, 0.1, ..., 1.
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
    },
    /// Summarize a run directory as report.md plus diagnostic plot data.
    ExportReport {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    let exec = if cli.serial { Exec::Serial } else { Exec::Parallel };
    let out = cli.out_dir.as_path();

    match cli.command {
        Command::Parse {
            lexicon,
            input,
            sentences,
        } => parse(&lexicon, input.as_deref(), &sentences),
        Command::Synth {
            spec,
            n_drugs,
            n_pairs,
            sigma,
        } => {
            let mut s: SynthSpec = match spec {
                Some(p) => toml::from_str(&read(&p)?).with_context(|| format!("synth spec {}", p.display()))?,
                None => SynthSpec::default(),
            };
            s.seed = config.seed;
            s.n_drugs = n_drugs.unwrap_or(s.n_drugs);
            s.n_pairs = n_pairs.unwrap_or(s.n_pairs);
            s.sigma = sigma.unwrap_or(s.sigma);
            let generated = synth_generate(&s)?;
            generated.write_to(out)?;
            println!(
                "wrote {} pairs over {} drugs to {}",
                generated.pairs.len(),
                s.n_drugs,
                out.display()
            );
            Ok(())
        }
        Command::Split { data, ratio } => {
            let pairs = load_dataset(&data)?;
            let split = split_dataset(&pairs, ratio.unwrap_or(config.split_ratio), config.seed)?;
            create(out)?;
            write_dataset(out.join("dataset.jsonl"), &split)?;
            let n_train = split.iter().filter(|p| p.is_train()).count();
            println!("train {n_train}, test {}", split.len() - n_train);
            Ok(())
        }
        Command::BuildGraph { data, backbone } => {
            let ws = workspace(&data, &mut config, exec)?;
            let bb = backbone_for(&ws, &config, backbone.as_deref())?;
            let graph = ws.graph(&config, &score_backbone(&ws, &bb, exec), exec)?;
            create(out)?;
            write(&out.join("graph.json"), serde_json::to_string_pretty(&graph.to_json())?)?;
            println!("{} drugs, {} edges", graph.len(), graph.edges.len());
            Ok(())
        }
        Command::TrainBackbone { data, pseudo } => {
            let ws = workspace(&data, &mut config, exec)?;
            let pseudo = pseudo.map(|p| gcn_column(&ws, &p)).transpose()?;
            let (bb, trace) = train_backbone(&ws, &config, pseudo.as_deref())?;
            let scores = score_backbone(&ws, &bb, exec);
            create(out)?;
            bb.to_checkpoint().write(out.join("backbone.ckpt"))?;
            write(&out.join("backbone_loss.csv"), loss_csv(&trace))?;
            let mut csv = String::from("id,split,gold,backbone\n");
            for (k, p) in ws.pairs.iter().enumerate() {
                let split = if p.is_train() { "train" } else { "test" };
                let gold = p.gold.map(|g| g.to_string()).unwrap_or_default();
                let _ = writeln!(csv, "{},{split},{gold},{}", p.id, scores[k]);
            }
            write(&out.join("backbone_scores.csv"), csv)?;
            report_test(&ws, "backbone", &scores);
            Ok(())
        }
        Command::TrainGcn { data, backbone } => {
            let ws = workspace(&data, &mut config, exec)?;
            let bb = backbone_for(&ws, &config, backbone.as_deref())?;
            let pseudo_b = score_backbone(&ws, &bb, exec);
            let run = train_gcn(&ws, &config, &ws.diffs(config.scale_diffs), &pseudo_b, exec)?;
            create(out)?;
            run.model.to_checkpoint().write(out.join("gcn.ckpt"))?;
            write(&out.join("gcn_loss.csv"), loss_csv(&run.trace))?;
            write(
                &out.join("graph.json"),
                serde_json::to_string_pretty(&run.graph.to_json())?,
            )?;
            write(
                &out.join("predictions.csv"),
                predictions_csv(&ws, &pseudo_b, &run.scores),
            )?;
            report_test(&ws, "backbone", &pseudo_b);
            report_test(&ws, "gcn", &run.scores);
            Ok(())
        }
        Command::RunCycle { data } => {
            let ws = workspace(&data, &mut config, exec)?;
            let history = run_cycle(&ws, &config, Some(out), exec)?;
            print!("{}", history.metrics_csv());
            if let Some(e) = history.ensemble {
                let r = e.test.map(|m| m.pearson.r).unwrap_or(f64::NAN);
                println!("ensemble lambda {} test pearson {r}", e.lambda);
            }
            Ok(())
        }
        Command::Eval { predictions } => {
            let report = EvalReport::new(read_records(&predictions)?)?;
            create(out)?;
            write(&out.join("report.csv"), report.summary_csv())?;
            write(&out.join("diagnostic.tsv"), report.diagnostic_tsv())?;
            print!("{}", report.summary_csv());
            Ok(())
        }
        Command::SweepBeta { data, alpha, betas } => {
            let ws = workspace(&data, &mut config, exec)?;
            let betas = betas.unwrap_or_else(beta_grid);
            let points = sweep_beta(&ws, &config, alpha, &betas, exec)?;
            create(out)?;
            let csv = sweep_csv(&points);
            write(&out.join("sweep.csv"), &csv)?;
            print!("{csv}");
            Ok(())
        }
        Command::ExportReport { run_dir } => export_report(&run_dir, out),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn create(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn parse(lexicon: &Path, input: Option<&Path>, sentences: &[String]) -> Result<()> {
    let lex = Lexicon::load(lexicon)?;
    let mut all: Vec<String> = sentences.to_vec();
    if let Some(p) = input {
        all.extend(read(p)?.lines().filter(|l| !l.trim().is_empty()).map(str::to_string));
    }
    if all.is_empty() {
        bail!("no sentences given");
    }
    for text in all {
        let line = match extract_concepts(&text, &lex) {
            Ok(p) => serde_json::json!({ "text": text, "concepts": p.concepts, "defaulted": p.defaulted }),
            Err(e) => serde_json::json!({ "text": text, "error": e.to_string() }),
        };
        println!("{line}");
    }
    Ok(())
}

/// Loads the dataset and side files, splitting unlabelled data on the fly.
/// Command-line paths override the configured ones and are echoed back into
/// `config` so run directories record them.
fn workspace(args: &DataArgs, config: &mut Config, exec: Exec) -> Result<Workspace> {
    let pick = |flag: &Option<PathBuf>, conf: &mut Option<PathBuf>| {
        if flag.is_some() {
            conf.clone_from(flag);
        }
        conf.clone()
    };
    let lexicon = pick(&args.lexicon, &mut config.lexicon)
        .context("a lexicon is required (--lexicon or `lexicon` in the config)")?;
    let edges = pick(&args.ontology_edges, &mut config.ontology_edges);
    let map = pick(&args.drug_map, &mut config.drug_map);
    let embeddings = pick(&args.embeddings, &mut config.embeddings);

    let mut pairs = load_dataset(&args.data)?;
    if pairs.iter().all(|p| p.split.is_none()) {
        eprintln!(
            "no split labels in {}; splitting with ratio {} and seed {}",
            args.data.display(),
            config.split_ratio,
            config.seed
        );
        pairs = split_dataset(&pairs, config.split_ratio, config.seed)?;
    }
    let lex = Lexicon::load(&lexicon)?;
    let ontology = match (edges, map) {
        (Some(e), Some(m)) => Some(IngredientGraph::load(e, m)?),
        (None, None) => None,
        _ => bail!("ontology edges and drug map must be given together"),
    };
    let store = embeddings.map(EmbeddingStore::load).transpose()?;
    Ok(Workspace::prepare(
        pairs,
        &lex,
        ontology.as_ref(),
        store,
        config.fallback_dim,
        config.seed,
        exec,
    )?)
}

fn backbone_for(ws: &Workspace, config: &Config, checkpoint: Option<&Path>) -> Result<Backbone> {
    match checkpoint {
        Some(p) => Ok(Backbone::from_checkpoint(&Checkpoint::read(p)?, ws.store.clone())?),
        None => Ok(train_backbone(ws, config, None)?.0),
    }
}

fn loss_csv(trace: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (k, l) in trace.iter().enumerate() {
        let _ = writeln!(s, "{k},{l}");
    }
    s
}

fn report_test(ws: &Workspace, name: &str, scores: &[f64]) {
    let (pred, gold): (Vec<f64>, Vec<f64>) = ws.test.iter().filter_map(|&k| Some((scores[k], ws.gold(k)?))).unzip();
    match rxcycle::metrics::pearson(&pred, &gold) {
        Ok(r) => println!("{name} test pearson {}", r.r),
        Err(_) => println!("{name}: too few labelled test pairs for a pearson score"),
    }
}

/// One row of a predictions.csv.
struct Row {
    id: String,
    split: String,
    gold: Option<f64>,
    backbone: f64,
    gcn: f64,
}

/// Rows of a predictions.csv: `id,split,gold,backbone,gcn`. Ids may contain
/// commas, so fields are taken from the right.
fn prediction_rows(path: &Path) -> Result<Vec<Row>> {
    let text = read(path)?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.rsplitn(5, ',').collect();
        let [gcn, backbone, gold, split, id] = f.as_slice() else {
            bail!("{}, line {}: expected 5 fields", path.display(), n + 1);
        };
        let num = |s: &str| {
            s.parse::<f64>()
                .with_context(|| format!("{}, line {}: bad number `{s}`", path.display(), n + 1))
        };
        let gold = if gold.is_empty() { None } else { Some(num(gold)?) };
        rows.push(Row {
            id: id.to_string(),
            split: split.to_string(),
            gold,
            backbone: num(backbone)?,
            gcn: num(gcn)?,
        });
    }
    Ok(rows)
}

fn gcn_column(ws: &Workspace, path: &Path) -> Result<Vec<f64>> {
    let by_id: HashMap<String, f64> = prediction_rows(path)?.into_iter().map(|r| (r.id, r.gcn)).collect();
    ws.pairs
        .iter()
        .map(|p| {
            by_id
                .get(&p.id)
                .copied()
                .with_context(|| format!("{} has no row for pair `{}`", path.display(), p.id))
        })
        .collect()
}

fn read_records(path: &Path) -> Result<Vec<PairRecord>> {
    let records: Vec<PairRecord> = prediction_rows(path)?
        .into_iter()
        .filter(|r| r.split == "test")
        .filter_map(|r| {
            Some(PairRecord {
                gold: r.gold?,
                id: r.id,
                backbone: r.backbone,
                gcn: r.gcn,
            })
        })
        .collect();
    if records.len() < 2 {
        bail!("{} has fewer than 2 labelled test pairs", path.display());
    }
    Ok(records)
}

fn export_report(run_dir: &Path, out: &Path) -> Result<()> {
    let metrics = read(&run_dir.join("metrics.csv"))?;
    let mut iters: Vec<PathBuf> = std::fs::read_dir(run_dir)
        .with_context(|| format!("reading {}", run_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("iter")))
        .collect();
    iters.sort();
    let last = iters
        .last()
        .with_context(|| format!("no iteration directories in {}", run_dir.display()))?;
    let report = EvalReport::new(read_records(&last.join("predictions.csv"))?)?;

    let mut md = String::from("# Co-training run report\n\n## Held-out metrics by iteration\n\n");
    md.push_str("| iteration | network | pearson | mse |\n|---|---|---|---|\n");
    for line in metrics.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if let [it, net, r, mse] = f.as_slice() {
            let num = |s: &str| {
                s.parse::<f64>()
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|_| s.to_string())
            };
            let _ = writeln!(md, "| {it} | {net} | {} | {} |", num(r), num(mse));
        }
    }
    if let Ok(ens) = read(&run_dir.join("ensemble.csv")) {
        if let Some(row) = ens.lines().nth(1) {
            let f: Vec<&str> = row.split(',').collect();
            if let [lambda, train_r, test_r, test_mse] = f.as_slice() {
                let _ = write!(
                    md,
                    "\n## Ensemble of the first iteration\n\nlambda {lambda}, train pearson {train_r}, test pearson {test_r}, test mse {test_mse}\n"
                );
            }
        }
    }
    let name = last
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let _ = write!(
        md,
        "\n## Final iteration ({name})\n\n{} test pairs; backbone pearson {:.4}, mse {:.4}; gcn pearson {:.4}, mse {:.4}.\n\
         Per-pair comparison in diagnostic order: diagnostic.tsv.\n",
        report.n, report.backbone_pearson.r, report.backbone_mse, report.gcn_pearson.r, report.gcn_mse
    );
    create(out)?;
    write(&out.join("report.md"), md)?;
    write(&out.join("diagnostic.tsv"), report.diagnostic_tsv())?;
    println!("wrote {}", out.join("report.md").display());
    Ok(())
}

//! `lta`: learn, evaluate and apply latent tree models from the command line.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use lta_core::clustering::{
    adjusted_rand_index, build_unidimensional_model, describe_partition, extract_partitions, normalized_mutual_information,
    PartitionSelection,
};
use lta_core::data::{forward_sample, ingest_bag_of_words, ingest_with_vocabulary, load_categorical_csv, read_corpus, read_vocabulary};
use lta_core::hlta::{build_hierarchy, export_hierarchy, extract_topics, topic_tree, ExportFormat, HierarchicalModel};
use lta_core::inference::log_likelihood;
use lta_core::structure::{bridged_islands, clrg};
use lta_core::{Error, LatentTreeModel, Schema, WeightedDataset};
use serde_json::{json, Value};

use config::{ConfigFlags, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "lta", version, about = "Latent tree analysis: structure learning, topics and clustering")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(flatten)]
    flags: ConfigFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct DataArgs {
    /// CSV with a header row of variable names and integer cells.
    #[arg(long)]
    data: Option<PathBuf>,
    /// JSON sidecar with cardinalities or label lists for the CSV.
    #[arg(long, requires = "data")]
    schema: Option<PathBuf>,
    /// Bag-of-words corpus: one document per line.
    #[arg(long, conflicts_with = "data")]
    corpus: Option<PathBuf>,
    /// Vocabulary file (one token per line) instead of frequency selection.
    #[arg(long, requires = "corpus")]
    vocabulary: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Learner {
    /// Bridged islands.
    Bi,
    /// Chow-Liu recursive grouping.
    Clrg,
    /// Hierarchical model over binary words.
    Hlta,
    /// Unidimensional clustering model with a designated latent `Z`.
    Unidim,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Html,
    Text,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a model and write it as JSON.
    Learn {
        #[arg(value_enum)]
        learner: Learner,
        #[command(flatten)]
        input: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Log-likelihood and BIC of a model on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw records from a model.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(short = 'n', long)]
        count: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Topic tables and topic hierarchy of a hierarchical model.
    Topics {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: DataArgs,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hard cluster labels per record from a model's latents.
    Cluster {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: DataArgs,
        /// Only this latent (default: every latent).
        #[arg(long)]
        latent: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-state profiles of the selected latents.
        #[arg(long)]
        profiles: Option<PathBuf>,
    },
    /// Normalized mutual information between two label columns.
    Nmi {
        /// CSV whose first column (or `--column-a`) holds labels.
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        column_a: Option<String>,
        #[arg(long)]
        column_b: Option<String>,
    },
}

/// Exit status by failure kind.
enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            Error::Numeric(_) | Error::ZeroProbability { .. } | Error::GuardExceeded { .. } => Failure::Numeric(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: &Cli) -> Outcome<()> {
    let mut config = cli.flags.resolve()?;
    match &cli.command {
        Command::Learn { learner, input, out } => {
            config.outputs = vec![out.display().to_string()];
            learn(*learner, input, out, &config)
        }
        Command::Eval { model, input, out } => {
            config.outputs = out.iter().map(|p| p.display().to_string()).collect();
            eval(model, input, out.as_deref(), &config)
        }
        Command::Sample { model, count, out } => {
            config.outputs = vec![out.display().to_string()];
            let (m, _) = load_model(model)?;
            let data = forward_sample(&m, *count, config.seed)?;
            let mut buf = header_line(&metadata("sample", &config, json!({ "model": model, "count": count })));
            data.write_csv(&mut buf)?;
            write(out, &buf)
        }
        Command::Topics { model, input, format, out } => {
            config.outputs = vec![out.display().to_string()];
            topics(model, input, *format, out, &config)
        }
        Command::Cluster { model, input, latent, out, profiles } => {
            config.outputs = std::iter::once(out).chain(profiles).map(|p| p.display().to_string()).collect();
            cluster(model, input, latent.as_deref(), out, profiles.as_deref(), &config)
        }
        Command::Nmi { a, b, column_a, column_b } => {
            let la = read_labels(a, column_a.as_deref())?;
            let lb = read_labels(b, column_b.as_deref())?;
            let nmi = normalized_mutual_information(&la, &lb)?;
            let ari = adjusted_rand_index(&la, &lb)?;
            println!("{}", json!({ "records": la.len(), "nmi": nmi, "adjusted_rand_index": ari }));
            Ok(())
        }
    }
}

fn metadata(command: &str, config: &RunConfig, extra: Value) -> Value {
    json!({
        "tool": "lta",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "details": extra,
    })
}

fn header_line(meta: &Value) -> Vec<u8> {
    format!("# {meta}\n").into_bytes()
}

fn write(path: &Path, bytes: &[u8]) -> Outcome<()> {
    std::fs::write(path, bytes).map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

fn load_data(input: &DataArgs, config: &RunConfig) -> Outcome<WeightedDataset> {
    match (&input.data, &input.corpus) {
        (Some(path), _) => {
            let schema = input.schema.as_ref().map(Schema::load).transpose()?;
            Ok(load_categorical_csv(path, schema.as_ref())?)
        }
        (None, Some(path)) => {
            let docs = read_corpus(path)?;
            Ok(match &input.vocabulary {
                Some(v) => ingest_with_vocabulary(&docs, &read_vocabulary(v)?)?,
                None => ingest_bag_of_words(&docs, config.vocab_size)?,
            })
        }
        (None, None) => Err(Failure::Usage("one of --data or --corpus is required".into())),
    }
}

/// Reads a model file or a hierarchy file; the latter yields its merged model.
fn load_model(path: &Path) -> Outcome<(LatentTreeModel, Option<HierarchicalModel>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(Error::from)?;
    if value.get("levels").is_some() {
        let h = HierarchicalModel::load(path)?;
        Ok((h.merged.clone(), Some(h)))
    } else {
        Ok((LatentTreeModel::from_json(&text)?, None))
    }
}

/// `data` restricted to the model's observed variables.
fn model_view(model: &LatentTreeModel, data: &WeightedDataset) -> Outcome<WeightedDataset> {
    Ok(data.project(&model.observed_names())?)
}

fn scores(model: &LatentTreeModel, data: &WeightedDataset) -> Outcome<Value> {
    let view = model_view(model, data)?;
    let ll = log_likelihood(model, &view)?;
    let n = view.total_weight();
    Ok(json!({
        "records": n,
        "log_likelihood": ll,
        "per_record": ll / n as f64,
        "bic": model.bic(&view)?,
    }))
}

fn learn(learner: Learner, input: &DataArgs, out: &Path, config: &RunConfig) -> Outcome<()> {
    let data = load_data(input, config)?;
    let cfg = config.structure();
    let start = Instant::now();
    let (name, result) = match learner {
        Learner::Bi => ("learn bi", bridged_islands(&data, &cfg)?),
        Learner::Clrg => ("learn clrg", clrg(&data, &cfg)?),
        Learner::Unidim => {
            let u = build_unidimensional_model(&data, &cfg)?;
            log::info!("designated latent {} with features {:?}", u.designated, u.features);
            ("learn unidim", u.model)
        }
        Learner::Hlta => {
            let h = build_hierarchy(&data, config.max_levels, &cfg)?;
            let fit = scores(&h.merged, &data)?;
            let meta = metadata("learn hlta", config, json!({ "input": inputs(input), "fit": fit }));
            h.save(out, Some(meta))?;
            report(&fit, start, h.levels.len());
            return Ok(());
        }
    };
    let fit = scores(&result, &data)?;
    let meta = metadata(name, config, json!({ "input": inputs(input), "fit": fit }));
    result.save(out, Some(meta))?;
    report(&fit, start, 1);
    Ok(())
}

fn inputs(input: &DataArgs) -> Value {
    json!({
        "data": input.data,
        "schema": input.schema,
        "corpus": input.corpus,
        "vocabulary": input.vocabulary,
    })
}

fn report(fit: &Value, start: Instant, levels: usize) {
    println!("{}", json!({ "fit": fit, "levels": levels, "runtime_seconds": start.elapsed().as_secs_f64() }));
}

fn eval(model: &Path, input: &DataArgs, out: Option<&Path>, config: &RunConfig) -> Outcome<()> {
    let (m, _) = load_model(model)?;
    let data = load_data(input, config)?;
    let fit = scores(&m, &data)?;
    let doc = json!({ "metadata": metadata("eval", config, json!({ "model": model, "input": inputs(input) })), "fit": fit });
    match out {
        Some(path) => write(path, serde_json::to_string_pretty(&doc).expect("report serializes").as_bytes()),
        None => {
            println!("{fit}");
            Ok(())
        }
    }
}

fn topics(model: &Path, input: &DataArgs, format: Format, out: &Path, config: &RunConfig) -> Outcome<()> {
    let (_, hier) = load_model(model)?;
    let hier = hier.ok_or_else(|| Failure::Usage(format!("{} is not a hierarchy file", model.display())))?;
    let data = load_data(input, config)?;
    let tables = extract_topics(&hier, &data)?;
    let meta = metadata("topics", config, json!({ "model": model, "input": inputs(input) }));
    let text = match format {
        Format::Json => serde_json::to_string_pretty(&json!({
            "metadata": meta,
            "hierarchy": topic_tree(&tables, &hier),
            "topics": tables,
        }))
        .expect("topics serialize"),
        Format::Html => format!("<!-- {meta} -->\n{}", export_hierarchy(&tables, &hier, ExportFormat::Html)),
        Format::Text => {
            let mut s = String::from_utf8(header_line(&meta)).expect("utf-8");
            s.push_str(&export_hierarchy(&tables, &hier, ExportFormat::Text));
            for t in &tables {
                s.push('\n');
                s.push_str(&t.to_text());
            }
            s
        }
    };
    write(out, text.as_bytes())
}

fn cluster(
    model: &Path,
    input: &DataArgs,
    latent: Option<&str>,
    out: &Path,
    profiles: Option<&Path>,
    config: &RunConfig,
) -> Outcome<()> {
    let (m, _) = load_model(model)?;
    let data = load_data(input, config)?;
    let which = match latent {
        Some(l) => PartitionSelection::Designated(l.to_string()),
        None => PartitionSelection::All,
    };
    let parts = extract_partitions(&m, &data, &which)?;
    let meta = metadata("cluster", config, json!({ "model": model, "input": inputs(input), "latent": latent }));
    let mut buf = header_line(&meta);
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(parts.iter().map(|p| p.source.as_str())).map_err(Error::from)?;
        let labels: Vec<Vec<usize>> = parts.iter().map(|p| p.record_labels()).collect();
        for r in 0..labels.first().map_or(0, Vec::len) {
            w.write_record(labels.iter().map(|l| l[r].to_string())).map_err(Error::from)?;
        }
        w.flush().map_err(|e| Failure::Data(e.to_string()))?;
    }
    write(out, &buf)?;
    if let Some(path) = profiles {
        let mut text = String::from_utf8(header_line(&meta)).expect("utf-8");
        for p in &parts {
            text.push_str(&describe_partition(&m, &p.source, 10)?.to_text());
            text.push('\n');
        }
        write(path, text.as_bytes())?;
    }
    Ok(())
}

fn read_labels(path: &Path, column: Option<&str>) -> Outcome<Vec<usize>> {
    let file = std::fs::File::open(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(file);
    let headers = rdr.headers().map_err(Error::from)?.clone();
    let col = match column {
        Some(c) => headers
            .iter()
            .position(|h| h == c)
            .ok_or_else(|| Failure::Data(format!("no column `{c}` in {}", path.display())))?,
        None => 0,
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(Error::from)?;
        let cell = rec.get(col).unwrap_or("");
        out.push(
            cell.parse()
                .map_err(|_| Failure::Data(format!("label `{cell}` in {} is not a non-negative integer", path.display())))?,
        );
    }
    Ok(out)
}

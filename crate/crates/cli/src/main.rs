// SPDX-License-Identifier: MIT OR Apache-2.0

//! `arcjsd`: attribute responses to context sentences, localize the heads and
//! MLPs involved, and benchmark against the surrogate baseline.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use arcjsd::attribution::{attribute, AttributionConfig};
use arcjsd::backend::remote::{serve, serve_tcp, RemoteBackend};
use arcjsd::backend::Backend;
use arcjsd::consensus::{attn_layer_scores, consensus_fusion, mlp_layer_scores, topn_overlap_rho};
use arcjsd::harness::{
    benchmark, evaluate, load_dataset, render_heatmap, render_report, subsample, synthetic_suite, DatasetFormat,
    EvalOptions, Method, QaSample, ReportStyle, MAX_SAMPLES,
};
use arcjsd::mech::{analyze_components, rank_components, Heatmap};
use arcjsd::mini_lm::{MiniBackend, MiniLm, ModelConfig, Params};
use arcjsd::segmenter::{ContextDoc, SegmentedContext};
use arcjsd::semantic_gain::gains;
use arcjsd::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "arcjsd", version, about = "Context attribution by ablation and Jensen-Shannon divergence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// `mini`, `bridge:<host:port>` or `stdio:<command>`
    #[arg(long, default_value = "mini")]
    backend: String,
    /// Parameter file for the mini model (defaults to a seeded initialization)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Seed for the mini model, masks and subsampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct InputArgs {
    /// Dataset file
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Dataset format: generic, tydi, hotpot or musique
    #[arg(long, default_value = "generic")]
    format: String,
    /// Inline context (alternative to --dataset)
    #[arg(long, conflicts_with = "dataset")]
    context: Option<String>,
    /// Query for --context
    #[arg(long, requires = "context")]
    query: Option<String>,
    /// Fixed response to attribute instead of generating one
    #[arg(long)]
    response: Option<String>,
    /// Evaluate at most this many samples (seeded subsample)
    #[arg(long, default_value_t = MAX_SAMPLES)]
    limit: usize,
    #[arg(long, default_value_t = 32)]
    max_new_tokens: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Score every context sentence; one report for --context, JSONL records for --dataset
    Attribute {
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        /// terminal or html
        #[arg(long, default_value = "terminal")]
        report: String,
        /// arc-jsd or surrogate (dataset mode)
        #[arg(long, default_value = "arc-jsd")]
        method: String,
        #[arg(long, default_value_t = 256)]
        n_masks: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep wall times in JSONL output
        #[arg(long)]
        timing: bool,
        /// Samples attributed concurrently
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Per-head and per-MLP JSD against the top-1 sentence ablation
    AnalyzeComponents {
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 10)]
        top_n: usize,
        #[arg(long, default_value = "terminal")]
        report: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Layer-wise semantic gains and the logit-lens table
    SemanticGain {
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 3)]
        top_n: usize,
        /// Write the logit-lens table (TSV) here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spearman agreement between layer metrics and the consensus ranking
    VerifyConsensus {
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 3)]
        top_n: usize,
    },
    /// Calls and wall time of attribution against the surrogate baseline
    Bench {
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 256)]
        n_masks: usize,
        /// Synthetic samples when no dataset is given
        #[arg(long, default_value_t = 5)]
        samples: usize,
        /// Sentences per synthetic sample
        #[arg(long, default_value_t = 10)]
        sentences: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Host the mini model over the wire protocol (stdio unless --listen)
    ServeMini {
        #[arg(long)]
        listen: Option<String>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the seeded parameters to this file and exit
        #[arg(long)]
        save: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Eval(String),
    Backend(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Backend(b) => Failure::Backend(b.to_string()),
            e @ (Error::InvalidArgument(_) | Error::Format { .. } | Error::Io(_) | Error::TemplateMismatch { .. }) => {
                Failure::Config(e.to_string())
            }
            e => Failure::Eval(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn mini_model(model: Option<&PathBuf>, seed: u64) -> CliResult<MiniLm> {
    let params = match model {
        Some(path) => Params::load(path)?,
        None => Params::init(ModelConfig::default().with_seed(seed))?,
    };
    Ok(MiniLm::new(params))
}

fn open_backend(args: &BackendArgs) -> CliResult<Box<dyn Backend>> {
    let target = args.backend.as_str();
    if target == "mini" {
        return Ok(Box::new(MiniBackend::new(mini_model(args.model.as_ref(), args.seed)?)));
    }
    if let Some(addr) = target.strip_prefix("bridge:") {
        return RemoteBackend::connect_tcp(addr)
            .map(|b| Box::new(b) as Box<dyn Backend>)
            .map_err(|e| Failure::Backend(e.to_string()));
    }
    if let Some(cmd) = target.strip_prefix("stdio:") {
        return RemoteBackend::spawn_stdio(cmd)
            .map(|b| Box::new(b) as Box<dyn Backend>)
            .map_err(|e| Failure::Backend(e.to_string()));
    }
    Err(Failure::Config(format!("unknown backend {target:?}")))
}

fn load_samples(input: &InputArgs, seed: u64) -> CliResult<Vec<QaSample>> {
    if let Some(context) = &input.context {
        let query = input
            .query
            .clone()
            .ok_or_else(|| Failure::Config("--context needs --query".into()))?;
        return Ok(vec![QaSample {
            id: "inline".into(),
            docs: vec![ContextDoc::untitled(context.clone())],
            query,
            gold_answer: String::new(),
            gold_support: Vec::new(),
        }]);
    }
    let path = input
        .dataset
        .as_ref()
        .ok_or_else(|| Failure::Config("give --dataset or --context".into()))?;
    let format: DatasetFormat = input.format.parse()?;
    Ok(subsample(load_dataset(path, format)?, input.limit, seed))
}

fn write_output(out: Option<&PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn attribution_config(input: &InputArgs) -> AttributionConfig {
    AttributionConfig {
        max_new_tokens: input.max_new_tokens,
        parallelism: None,
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Attribute {
            backend,
            input,
            top_k,
            report,
            method,
            n_masks,
            out,
            timing,
            workers,
        } => {
            let style: ReportStyle = report.parse()?;
            let b = open_backend(&backend)?;
            let samples = load_samples(&input, backend.seed)?;
            if input.context.is_some() {
                let s = &samples[0];
                let ctx = SegmentedContext::new(s.docs.clone())?;
                let r = attribute(&b, &ctx, &s.query, input.response.as_deref(), &attribution_config(&input))?;
                return write_output(out.as_ref(), &render_report(&ctx, &r, top_k, style)?);
            }
            let opts = EvalOptions {
                max_new_tokens: input.max_new_tokens,
                n_masks,
                seed: backend.seed,
                workers,
                ..Default::default()
            };
            let method: Method = method.parse()?;
            let report = evaluate(&samples, &[method], &b, &opts)?;
            let mut buf = Vec::new();
            report.write_jsonl(&mut buf, timing)?;
            write_output(out.as_ref(), &String::from_utf8_lossy(&buf))?;
            let s = report.summary(method);
            eprintln!(
                "{}: {} samples, accuracy {:.4}, mean calls {:.2}",
                method.as_str(),
                s.map_or(0, |s| s.samples),
                report.accuracy(method),
                s.map_or(0.0, |s| s.mean_calls)
            );
            if report.incomplete {
                return Err(Failure::Backend(format!(
                    "run incomplete: {}",
                    report.error.unwrap_or_default()
                )));
            }
            Ok(())
        }
        Command::AnalyzeComponents {
            backend,
            input,
            top_n,
            report,
            out,
        } => {
            let style: ReportStyle = report.parse()?;
            let b = open_backend(&backend)?;
            let info = b.info().clone();
            let mut maps = Vec::new();
            let mut all_scores = Vec::new();
            for s in load_samples(&input, backend.seed)? {
                let ctx = SegmentedContext::new(s.docs.clone())?;
                let r = attribute(&b, &ctx, &s.query, input.response.as_deref(), &attribution_config(&input))?;
                let scores = analyze_components(&b, &ctx, &r)?;
                maps.push(Heatmap::from_scores(info.layers, info.heads, &scores)?);
                all_scores.push(scores);
            }
            let mean = Heatmap::mean(&maps)?;
            let mut text = render_heatmap(&mean, style);
            let mut averaged = all_scores[0].clone();
            for (k, c) in averaged.iter_mut().enumerate() {
                c.score = all_scores.iter().map(|s| s[k].score).sum::<f64>() / all_scores.len() as f64;
            }
            let ranking = rank_components(&averaged, top_n.min(averaged.len()))?;
            text.push_str(&format!("\ntop {} components:\n", ranking.top_n));
            for (i, c) in ranking.top().iter().enumerate() {
                text.push_str(&format!("{:>3}. {} {:.6}\n", i + 1, c.selector, c.score));
            }
            write_output(out.as_ref(), &text)
        }
        Command::SemanticGain {
            backend,
            input,
            top_n,
            out,
        } => {
            let b = open_backend(&backend)?;
            let s = load_samples(&input, backend.seed)?.remove(0);
            let ctx = SegmentedContext::new(s.docs.clone())?;
            let r = attribute(&b, &ctx, &s.query, input.response.as_deref(), &attribution_config(&input))?;
            let prompt = b.tokenize(&ctx.render_full(&s.query)?.rendered).map_err(Error::from)?;
            let profile = gains(&b, &prompt, &r.response_tokens)?;
            let (attn, mlp) = arcjsd::semantic_gain::rank_gains(&profile, top_n);
            println!("layer\tattn_gain\tmlp_gain");
            for (l, (a, m)) in profile.attn_gain.iter().zip(&profile.mlp_gain).enumerate() {
                println!("{l}\t{a:.6}\t{m:.6}");
            }
            println!("top attention layers: {attn:?}");
            println!("top MLP layers: {mlp:?}");
            if let Some(path) = out {
                let table = profile.lens_table(|t| {
                    b.detokenize(&[t]).map(|s| format!("{s:?}")).unwrap_or_else(|_| t.to_string())
                });
                std::fs::write(path, table)?;
            }
            Ok(())
        }
        Command::VerifyConsensus { backend, input, top_n } => {
            let b = open_backend(&backend)?;
            let info = b.info().clone();
            let (mut j_attn, mut j_mlp, mut g_attn, mut g_mlp) = (
                vec![0.0; info.layers],
                vec![0.0; info.layers],
                vec![0.0; info.layers],
                vec![0.0; info.layers],
            );
            let samples = load_samples(&input, backend.seed)?;
            for s in &samples {
                let ctx = SegmentedContext::new(s.docs.clone())?;
                let r = attribute(&b, &ctx, &s.query, input.response.as_deref(), &attribution_config(&input))?;
                let scores = analyze_components(&b, &ctx, &r)?;
                let prompt = b.tokenize(&ctx.render_full(&s.query)?.rendered).map_err(Error::from)?;
                let profile = gains(&b, &prompt, &r.response_tokens)?;
                let add = |acc: &mut Vec<f64>, v: &[f64]| acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
                add(&mut j_attn, &attn_layer_scores(info.layers, info.heads, &scores)?);
                add(&mut j_mlp, &mlp_layer_scores(info.layers, &scores)?);
                add(&mut g_attn, &profile.attn_gain);
                add(&mut g_mlp, &profile.mlp_gain);
            }
            println!("component\tmetric\trho\tp_value\tsignificance\tlayers");
            for (name, j, g) in [("attention", &j_attn, &g_attn), ("mlp", &j_mlp, &g_mlp)] {
                let cons = consensus_fusion(j, g)?;
                for (metric, raw) in [("J", j), ("G", g)] {
                    match topn_overlap_rho(raw, &cons, top_n.min(info.layers)) {
                        Ok(o) => println!(
                            "{name}\t{metric}\t{:.4}\t{:.4}\t{}\t{:?}",
                            o.spearman.rho,
                            o.spearman.p_value,
                            o.significance.marker(),
                            o.layers
                        ),
                        Err(e) => println!("{name}\t{metric}\t-\t-\t-\t{e}"),
                    }
                }
            }
            Ok(())
        }
        Command::Bench {
            backend,
            input,
            n_masks,
            samples,
            sentences,
            out,
        } => {
            let b = open_backend(&backend)?;
            let data = if input.dataset.is_some() || input.context.is_some() {
                load_samples(&input, backend.seed)?
            } else {
                synthetic_suite(samples, sentences, None, backend.seed)
            };
            let opts = EvalOptions {
                max_new_tokens: input.max_new_tokens,
                n_masks,
                seed: backend.seed,
                ..Default::default()
            };
            let bench = benchmark(&data, &b, &opts)?;
            println!("method\tsamples\taccuracy\tmean_calls\ttotal_ms");
            for s in &bench.report.summaries {
                println!(
                    "{}\t{}\t{:.4}\t{:.2}\t{:.1}",
                    s.method.as_str(),
                    s.samples,
                    s.accuracy,
                    s.mean_calls,
                    s.total_ms
                );
            }
            println!("call ratio (surrogate / arc-jsd): {:.3}", bench.call_ratio);
            println!("time ratio (surrogate / arc-jsd): {:.3}", bench.time_ratio);
            if let Some(path) = out {
                let mut f = std::fs::File::create(path)?;
                bench.report.write_jsonl(&mut f, true)?;
            }
            Ok(())
        }
        Command::ServeMini {
            listen,
            model,
            seed,
            save,
        } => {
            let m = mini_model(model.as_ref(), seed)?;
            if let Some(path) = save {
                m.params().save(path)?;
                return Ok(());
            }
            let backend = MiniBackend::new(m);
            match listen {
                Some(addr) => {
                    let listener = std::net::TcpListener::bind(&addr)?;
                    eprintln!("serving on {}", listener.local_addr()?);
                    serve_tcp(Arc::new(backend), listener).map_err(|e| Failure::Backend(e.to_string()))
                }
                None => serve(&backend, std::io::stdin().lock(), std::io::stdout().lock())
                    .map_err(|e| Failure::Backend(e.to_string())),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, kind, msg) = match f {
                Failure::Eval(m) => (1, "evaluation error", m),
                Failure::Config(m) => (2, "configuration error", m),
                Failure::Backend(m) => (3, "backend error", m),
            };
            eprintln!("arcjsd: {kind}: {msg}");
            ExitCode::from(code)
        }
    }
}

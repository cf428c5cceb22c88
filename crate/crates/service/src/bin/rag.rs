use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rag_core::eval::{run_sweep, SweepConfig};
use rag_service::remote::DEFAULT_GENERATION_TIMEOUT;
use rag_service::{
    http, EmbedderSelector, GenerationConfig, QueryOverrides, Service, ServiceConfig, ServiceError,
    VectorizeRequest,
};

#[derive(Parser)]
#[command(name = "rag", version, about = "Self-hosted retrieval-augmented generation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Directory holding corpora and sessions.
    #[arg(long, global = true, env = "RAG_DATA_DIR", default_value = "rag-data")]
    data_dir: PathBuf,
    /// Chat endpoint for answer generation; the extractive stub is used when unset.
    #[arg(long, global = true, env = "RAG_LLM_ENDPOINT")]
    llm_endpoint: Option<String>,
    /// Model name sent to the chat endpoint.
    #[arg(long, global = true, env = "RAG_LLM_MODEL", default_value = "default")]
    llm_model: String,
    /// Generation timeout in seconds.
    #[arg(long, global = true, default_value_t = DEFAULT_GENERATION_TIMEOUT.as_secs())]
    llm_timeout: u64,
    /// Default embedder: ref-tfidf-v1[:DIM] or remote:MODEL@URL.
    #[arg(long, global = true, env = "RAG_EMBEDDER", default_value = "ref-tfidf-v1")]
    embedder: String,
    /// Context window of the generation model, in tokens.
    #[arg(long, global = true, default_value_t = rag_core::engine::DEFAULT_CONTEXT_WINDOW)]
    context_window: usize,
    /// Tokens kept free for the answer.
    #[arg(long, global = true, default_value_t = rag_core::engine::DEFAULT_ANSWER_RESERVE)]
    answer_reserve: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Shared bearer token required on every request.
        #[arg(long, env = "RAG_AUTH_TOKEN", hide_env_values = true)]
        auth_token: Option<String>,
        /// Delay between streamed stub tokens, in milliseconds.
        #[arg(long, hide = true)]
        stub_token_delay_ms: Option<u64>,
    },
    /// Add the documents of a JSONL manifest to a corpus, creating it if needed.
    Ingest {
        #[arg(long)]
        corpus: String,
        /// Manifest file; document paths resolve against its directory.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Chunk, embed and index a corpus.
    Vectorize {
        #[arg(long)]
        corpus: String,
        #[arg(long)]
        chunk_size: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
    },
    /// Answer one question and print its sources.
    Query {
        #[arg(long)]
        corpus: String,
        #[arg(long)]
        text: String,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        min_score: Option<f64>,
        /// Metadata filter as a JSON array of {key, op, value} clauses.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Sweep chunking and prompt parameters on a synthetic needle corpus.
    Eval(EvalArgs),
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, default_value_t = 100)]
    docs: usize,
    #[arg(long, default_value_t = 500)]
    doc_tokens: usize,
    #[arg(long, default_value_t = 100)]
    needles: usize,
    #[arg(long, value_delimiter = ',', default_value = "256")]
    chunk_sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "32")]
    overlaps: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "4")]
    top_ns: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "4096")]
    context_windows: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = rag_core::embed::DEFAULT_REFERENCE_DIM)]
    dim: usize,
    /// Answer reserve used for every window in the sweep.
    #[arg(long, default_value_t = 256)]
    reserve: usize,
    /// CSV report; a JSON copy is written next to it.
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Eval(args) => eval(args),
        Command::Serve {
            port,
            ref host,
            ref auth_token,
            stub_token_delay_ms,
        } => {
            let delay = stub_token_delay_ms.map(Duration::from_millis);
            let service = open(&cli.global, delay)?;
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .with_context(|| format!("invalid listen address {host}:{port}"))?;
            serve(service, addr, auth_token.clone())
        }
        Command::Ingest {
            ref corpus,
            ref manifest,
        } => {
            let service = open(&cli.global, None)?;
            match service.create_corpus(corpus) {
                Ok(_) | Err(ServiceError::CorpusExists(_)) => {}
                Err(e) => return Err(e.into()),
            }
            let bytes = std::fs::read(manifest).with_context(|| format!("reading {}", manifest.display()))?;
            let base = manifest.parent().unwrap_or(Path::new("."));
            let summary = service.add_documents(corpus, &bytes, base, false)?;
            println!("added {} document(s) to {corpus}", summary.added.len());
            for f in &summary.errors {
                println!("  {}: {} ({})", f.id, f.code, f.message);
            }
            println!("corpus {corpus}: {} documents, {}", summary.corpus.document_count, summary.corpus.state);
            if summary.added.is_empty() && !summary.errors.is_empty() {
                bail!("no documents were ingested");
            }
            Ok(())
        }
        Command::Vectorize {
            ref corpus,
            chunk_size,
            overlap,
        } => {
            let service = open(&cli.global, None)?;
            let meta = service.vectorize(
                corpus,
                &VectorizeRequest {
                    chunk_size,
                    overlap,
                    embedder: Some(cli.global.embedder.clone()),
                },
            )?;
            println!(
                "vectorized {corpus}: {} chunks, embedder {} (dim {}), chunk size {} overlap {}",
                meta.count,
                meta.embedder.id,
                meta.dim,
                meta.chunk_params.chunk_size(),
                meta.chunk_params.overlap()
            );
            Ok(())
        }
        Command::Query {
            ref corpus,
            ref text,
            top_n,
            min_score,
            ref filter,
        } => {
            let service = open(&cli.global, None)?;
            let filter = filter
                .as_deref()
                .map(serde_json::from_str)
                .transpose()
                .context("parsing --filter")?;
            let overrides = QueryOverrides {
                top_n,
                min_score,
                filter,
                use_ann: None,
            };
            let mut stdout = std::io::stdout().lock();
            let outcome = service.one_shot(corpus, text, &overrides, &mut |delta| {
                let _ = stdout.write_all(delta.as_bytes());
                let _ = stdout.flush();
            })?;
            writeln!(stdout)?;
            writeln!(stdout, "\nSources:")?;
            for hit in &outcome.answer.sources {
                writeln!(
                    stdout,
                    "[{}] score={:.4} metadata={}",
                    hit.chunk.label(),
                    hit.score,
                    serde_json::to_string(&hit.chunk.metadata)?
                )?;
            }
            Ok(())
        }
    }
}

fn open(g: &Global, stub_delay: Option<Duration>) -> anyhow::Result<Service> {
    let default_embedder: EmbedderSelector = g.embedder.parse()?;
    let generation = match &g.llm_endpoint {
        Some(url) if !url.is_empty() => GenerationConfig::Remote {
            endpoint: url.clone(),
            model: g.llm_model.clone(),
            timeout: Duration::from_secs(g.llm_timeout),
        },
        _ => GenerationConfig::Stub {
            token_delay: stub_delay,
        },
    };
    let config = ServiceConfig {
        default_embedder,
        generation,
        context_window: g.context_window,
        answer_reserve: g.answer_reserve,
        ..ServiceConfig::new(&g.data_dir)
    };
    Ok(Service::open(config)?)
}

fn serve(service: Service, addr: SocketAddr, auth_token: Option<String>) -> anyhow::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        tracing::info!(%addr, backend = service.backend_id(), auth = auth_token.is_some(), "listening");
        axum::serve(listener, http::router(service, auth_token))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let config = SweepConfig {
        n_docs: args.docs,
        doc_tokens: args.doc_tokens,
        n_needles: args.needles,
        chunk_sizes: args.chunk_sizes,
        overlaps: args.overlaps,
        top_ns: args.top_ns,
        context_windows: args.context_windows,
        trials: args.trials,
        seed: args.seed,
        dim: args.dim,
        answer_reserve: args.reserve,
    };
    tracing::info!(rows = config.grid_size(), "running sweep");
    let result = run_sweep(&config)?;
    std::fs::write(&args.out, result.to_csv()?).with_context(|| format!("writing {}", args.out.display()))?;
    let json_path = args.out.with_extension("json");
    std::fs::write(&json_path, result.to_json()?)?;
    println!(
        "{} row(s) written to {} and {}",
        result.rows.len(),
        args.out.display(),
        json_path.display()
    );
    Ok(())
}

//! Subcommand bodies.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use hybridrag_core::harness::dataset::{prepare_training_triplets, write_triplets};
use hybridrag_core::harness::sim::{read_trace, run_trace_mode, RunMetrics, SimMode, Simulation};
use hybridrag_core::harness::sweep::{threshold_sweep, write_sweep_csv};
use hybridrag_core::retriever::{read_corpus_file, Embedder};
use hybridrag_net::{CloudClient, CloudService, EngineState, LocalCloud, MemoryTransport, ServiceConfig};
use hybridrag_net::config::AUTH_TOKEN_ENV;
use tokio::net::TcpListener;
use tracing::{error, info};

use crate::settings::{read_prompts, Settings};
use crate::{EngineArgs, ModeArg, PrepareArgs, ServeArgs, SimRunArgs, SimSweepArgs};

/// Version of the layout written by `sim run`.
pub const METRICS_CSV_VERSION: u32 = 1;

pub const METRICS_CSV_HEADER: &str = "version,mode,events,requests_issued,responses_applied,stale_responses,\
failed_requests,suggestions,suggestion_failures,skipped_events,mean_latency_ms,mean_staleness,mean_gleu,mean_perplexity";

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub fn write_metrics_csv<W: Write>(mut w: W, events: usize, runs: &[(SimMode, RunMetrics)]) -> Result<()> {
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    for (mode, m) in runs {
        let mode = match mode {
            SimMode::Async => "async",
            SimMode::Sync => "sync",
        };
        writeln!(
            w,
            "{METRICS_CSV_VERSION},{mode},{events},{},{},{},{},{},{},{},{},{},{},{}",
            m.requests_issued,
            m.responses_applied,
            m.stale_responses,
            m.failed_requests,
            m.suggestions_completed,
            m.suggestion_failures,
            m.skipped_events,
            opt(m.mean_latency_ms()),
            opt(m.mean_staleness()),
            opt(m.mean_gleu()),
            opt(m.mean_perplexity()),
        )?;
    }
    Ok(())
}

pub fn sim_run(a: SimRunArgs) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    let file = File::open(&a.trace).with_context(|| format!("opening {}", a.trace.display()))?;
    let trace = read_trace(BufReader::new(file)).with_context(|| format!("reading trace {}", a.trace.display()))?;
    let retriever = match a.corpus.as_deref().or(s.corpus_path.as_deref()) {
        Some(_) => Some(s.retriever(&s.documents(a.corpus.as_deref())?)?),
        None => None,
    };
    let (client, cloud) = (s.client_backend()?, s.cloud_backend()?);
    let sim = Simulation {
        engine: &s.engine,
        latency: &s.latency,
        retriever: retriever.as_ref(),
        client: client.as_ref(),
        cloud: cloud.as_ref(),
        seed: s.seed,
    };
    let modes: &[SimMode] = match a.mode {
        ModeArg::Async => &[SimMode::Async],
        ModeArg::Sync => &[SimMode::Sync],
        ModeArg::Both => &[SimMode::Sync, SimMode::Async],
    };
    let mut runs = Vec::new();
    for &mode in modes {
        let m = run_trace_mode(&trace, &sim, mode)?;
        info!(?mode, requests = m.requests_issued, mean_latency_ms = ?m.mean_latency_ms(), "run finished");
        runs.push((mode, m));
    }
    let mut out = create(&a.out)?;
    write_metrics_csv(&mut out, trace.len(), &runs)?;
    out.flush()?;
    if let Some(path) = &a.metrics_json {
        let all: Vec<&RunMetrics> = runs.iter().map(|(_, m)| m).collect();
        serde_json::to_writer_pretty(create(path)?, &all)?;
    }
    if let [(_, sync), (_, asy)] = &runs[..] {
        if let (Some(s), Some(x)) = (sync.mean_latency_ms(), asy.mean_latency_ms()) {
            if x > 0.0 {
                println!("speedup {:.1}x (sync {s:.1} ms, async {x:.1} ms)", s / x);
            }
        }
    }
    Ok(())
}

pub fn sim_sweep(a: SimSweepArgs) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    let prompts = read_prompts(&a.prompts)?;
    let retriever = s.retriever(&s.documents(a.corpus.as_deref())?)?;
    let (client, cloud) = (s.client_backend()?, s.cloud_backend()?);
    let sim = Simulation {
        engine: &s.engine,
        latency: &s.latency,
        retriever: Some(&retriever),
        client: client.as_ref(),
        cloud: cloud.as_ref(),
        seed: s.seed,
    };
    let rows = threshold_sweep(&prompts, &a.tau, &sim, a.interval_ms)?;
    let mut out = create(&a.out)?;
    write_sweep_csv(&mut out, &rows)?;
    out.flush()?;
    info!(rows = rows.len(), out = %a.out.display(), "sweep written");
    Ok(())
}

pub fn data_prepare(a: PrepareArgs) -> Result<()> {
    let s = Settings::load(a.config.as_deref())?;
    let docs = s.documents(Some(&a.corpus))?;
    s.embedder()?;
    let make = || -> Box<dyn Embedder> { s.embedder().expect("embedder id was checked") };
    let cloud = s.cloud_backend()?;
    let data = prepare_training_triplets(&docs, &make, cloud.as_ref(), &s.engine, a.seed)?;
    let mut out = create(&a.out)?;
    write_triplets(&mut out, data.triplets())?;
    out.flush()?;
    info!(triplets = data.records.len(), skipped = data.skipped.len(), "triplets written");
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => ServiceConfig::load(p)?,
        None => {
            let mut c = ServiceConfig::default();
            c.apply_env(|k| std::env::var(k).ok());
            c
        }
    };
    if let Some(l) = a.listen {
        cfg.listen_address = l;
    }
    if let Some(c) = a.corpus {
        cfg.corpus_path = Some(c);
    }
    let corpus = cfg.corpus_path.clone().context("no corpus given; pass --corpus or set corpus_path")?;
    let svc = CloudService::new(&cfg, cfg.build_backend()?)?;
    runtime()?.block_on(async move {
        let listener = TcpListener::bind(&cfg.listen_address)
            .await
            .with_context(|| format!("binding {}", cfg.listen_address))?;
        info!(addr = %listener.local_addr()?, "cloud service listening");
        let ingest = svc.clone();
        tokio::task::spawn_blocking(move || {
            let result = read_corpus_file(&corpus)
                .map_err(anyhow::Error::from)
                .and_then(|docs| Ok(ingest.ingest(&docs)?));
            if let Err(e) = result {
                error!(error = %e, corpus = %corpus.display(), "ingest failed");
            }
        });
        svc.serve(listener).await?;
        Ok(())
    })
}

pub fn engine(a: EngineArgs) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    if let Some(tau) = a.tau {
        s.engine.tau = tau;
    }
    let cloud: Arc<dyn MemoryTransport> = match &a.cloud {
        Some(url) => Arc::new(CloudClient::new(
            url.clone(),
            std::env::var(AUTH_TOKEN_ENV).ok(),
            std::time::Duration::from_millis(a.timeout_ms),
        )),
        None => {
            let docs = s.documents(a.corpus.as_deref())?;
            Arc::new(LocalCloud::new(s.retriever(&docs)?, s.cloud_backend()?, s.engine.clone()))
        }
    };
    let state = EngineState::new(s.engine.clone(), s.client_backend()?, cloud)?;
    runtime()?.block_on(async move {
        let listener = TcpListener::bind(a.listen).await.with_context(|| format!("binding {}", a.listen))?;
        info!(addr = %listener.local_addr()?, "engine socket at /v1/session");
        state.serve(listener).await?;
        Ok(())
    })
}

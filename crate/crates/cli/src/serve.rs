use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use activemix_service::{serve, Registry};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::settings::{resolve, write_run_json};

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ServeCmd {
    /// TOML file with default values for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Address to bind [default: 127.0.0.1].
    #[arg(long)]
    pub host: Option<String>,
    /// Port to listen on; 0 picks a free one [default: 8080].
    #[arg(long)]
    pub port: Option<u16>,
    /// Where corpora and sessions are kept [default: activemix-data].
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

pub fn run(cmd: ServeCmd) -> CliResult<()> {
    let a: ServeCmd = resolve(&cmd, cmd.config.as_deref(), &["data_dir"])?;
    let host = a.host.clone().unwrap_or_else(|| "127.0.0.1".into());
    let port = a.port.unwrap_or(8080);
    let data_dir = a.data_dir.clone().unwrap_or_else(|| PathBuf::from("activemix-data"));
    let registry = Arc::new(Registry::open(&data_dir)?);
    write_run_json(&data_dir, "serve", &a)?;

    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::runtime(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host.as_str(), port))
            .await
            .map_err(|e| CliError::runtime(format!("cannot bind {host}:{port}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::runtime(e.to_string()))?;
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        eprintln!("{} sessions restored from {}", registry.session_ids().len(), data_dir.display());
        for (id, reason) in registry.skipped() {
            eprintln!("warning: session {id} not restored: {reason}");
        }
        serve(listener, registry, shutdown_signal())
            .await
            .map_err(|e| CliError::runtime(format!("server error: {e}")))
    })
}

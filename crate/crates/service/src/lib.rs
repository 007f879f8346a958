//! HTTP+JSON front end for voucher redemption, booking, lab actions, and
//! result lookup, with lab authentication, per-client rate limiting, and a
//! background retention sweeper.

pub mod api;
pub mod auth;
pub mod config;
pub mod rate_limit;

use std::net::SocketAddr;
use std::time::Instant;

use acdc_core::{CodePolicy, Deployment, FlowError, StoreError};
use chrono::{DateTime, Utc};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use api::{router, AppState};
pub use auth::LabCredentials;
pub use config::{ConfigError, ServiceConfig};
pub use rate_limit::{RateDecision, RateLimiter};

#[derive(Debug, Error)]
pub enum StartError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot open store: {0}")]
    Store(#[from] StoreError),
    #[error(transparent)]
    Credentials(#[from] auth::CredentialError),
    #[error("address {0} is already in use")]
    AddressInUse(SocketAddr),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
}

/// Records erased by one sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepReport {
    pub vouchers: usize,
    pub confirmations: usize,
}

impl AppState {
    pub fn sweep(&self, now: DateTime<Utc>) -> Result<SweepReport, FlowError> {
        let vouchers = self
            .ledger
            .sweep_expired(now, self.config.exhausted_grace())
            .map_err(FlowError::from)?;
        let confirmations = self
            .flow
            .sweep_confirmations(now, self.config.retention())?;
        self.limiter.prune(Instant::now());
        Ok(SweepReport {
            vouchers,
            confirmations,
        })
    }
}

/// Opens the stores named in `config` (or memory stores) and loads lab
/// credentials.
pub fn open_state(config: ServiceConfig) -> Result<AppState, StartError> {
    config.validate()?;
    let deployment = match &config.store_dir {
        Some(dir) => Deployment::open(dir, CodePolicy::default())?,
        None => Deployment::in_memory(CodePolicy::default()),
    };
    let labs = match config.credentials_path() {
        Some(path) => LabCredentials::load(&path)?,
        None => LabCredentials::new(),
    };
    Ok(AppState::new(config, deployment, labs))
}

pub struct RunningService {
    addr: SocketAddr,
    state: AppState,
    shutdown: Option<oneshot::Sender<()>>,
    server: JoinHandle<std::io::Result<()>>,
    sweeper: JoinHandle<()>,
}

impl RunningService {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn state(&self) -> &AppState {
        &self.state
    }

    /// Stops accepting connections and waits for in-flight requests. Every
    /// store write is already durable when its request returns.
    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.sweeper.abort();
        self.server.await.map_err(std::io::Error::other)?
    }
}

pub async fn start(config: ServiceConfig) -> Result<RunningService, StartError> {
    let state = open_state(config)?;
    start_with_state(state).await
}

pub async fn start_with_state(state: AppState) -> Result<RunningService, StartError> {
    let addr = state.config.bind;
    let listener = TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => StartError::AddressInUse(addr),
        _ => StartError::Bind { addr, source: e },
    })?;
    let addr = listener
        .local_addr()
        .map_err(|e| StartError::Bind { addr, source: e })?;

    let (tx, rx) = oneshot::channel::<()>();
    let app = router(state.clone()).into_make_service_with_connect_info::<SocketAddr>();
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    let sweeper = tokio::spawn(sweep_loop(state.clone()));
    tracing::info!(%addr, "listening");
    Ok(RunningService {
        addr,
        state,
        shutdown: Some(tx),
        server,
        sweeper,
    })
}

async fn sweep_loop(state: AppState) {
    let mut ticker = tokio::time::interval(state.config.sweep_interval());
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        ticker.tick().await;
        let s = state.clone();
        match tokio::task::spawn_blocking(move || s.sweep(Utc::now())).await {
            Ok(Ok(report)) if report != SweepReport::default() => {
                tracing::info!(
                    vouchers = report.vouchers,
                    confirmations = report.confirmations,
                    "swept"
                );
            }
            Ok(Ok(_)) => {}
            Ok(Err(e)) => tracing::warn!("sweep failed: {e}"),
            Err(e) => tracing::warn!("sweep task failed: {e}"),
        }
    }
}

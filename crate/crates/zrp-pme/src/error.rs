use thiserror::Error;

/// Errors surfaced by the simulation and numerics layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid site index {index} (site count {site_count})")]
    InvalidSite { index: usize, site_count: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("all jump rates vanished (absorbing state) at t = {t}")]
    AbsorbingState { t: f64 },

    #[error("per-site jump rate exceeded 1e300 at site {site} (k = {count})")]
    RateOverflow { site: usize, count: u64 },

    #[error("mollifier kernel under-resolved: r*N = {rn} < 2")]
    KernelUnderResolved { rn: f64 },

    #[error("observable `{0}` was not registered on this run")]
    MissingObservable(String),

    #[error("jump ledger absent: run was not tilted or ledger disabled")]
    MissingLedger,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

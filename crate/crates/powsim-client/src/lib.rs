//! Async client for the powsim HTTP service.

use powsim::api::{BenchOutput, BenchRequest, RunOutput, SweepOutput, SweepRequest, ValidateOutput, ValidateRequest};
use powsim::config::Config;
use powsim_service::{ErrorBody, ErrorKind};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service could not be reached or answered with garbage.
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    /// The service rejected the request.
    #[error("{}", .0.message)]
    Service(ErrorBody),
}

impl ClientError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            ClientError::Transport(_) => ErrorKind::Io,
            ClientError::Service(b) => b.kind,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        Client { base, http: reqwest::Client::new() }
    }

    async fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, ClientError> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(body).send().await?;
        if resp.status().is_success() {
            Ok(resp.json().await?)
        } else {
            Err(ClientError::Service(resp.json().await?))
        }
    }

    pub async fn health(&self) -> Result<(), ClientError> {
        self.http.get(format!("{}/health", self.base)).send().await?.error_for_status()?;
        Ok(())
    }

    pub async fn run(&self, config: &Config) -> Result<RunOutput, ClientError> {
        self.post("/run", config).await
    }

    pub async fn sweep(&self, req: &SweepRequest) -> Result<SweepOutput, ClientError> {
        self.post("/sweep", req).await
    }

    pub async fn validate(&self, req: &ValidateRequest) -> Result<ValidateOutput, ClientError> {
        self.post("/validate", req).await
    }

    pub async fn bench_puzzle(&self, req: &BenchRequest) -> Result<BenchOutput, ClientError> {
        self.post("/bench-puzzle", req).await
    }
}

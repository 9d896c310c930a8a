//! Prediction provider backed by a remote service.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use graphmark::graph::{Graph, GraphFile};
use graphmark::verify::PredictionProvider;
use graphmark::{Error, Matrix, Result};

use crate::server::PredictResponse;

pub struct RemoteProvider {
    endpoint: String,
    client: reqwest::blocking::Client,
    calls: AtomicUsize,
}

impl RemoteProvider {
    /// `base_url` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base_url: &str) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self { endpoint: format!("{}/predict", base_url.trim_end_matches('/')), client, calls: AtomicUsize::new(0) })
    }

    /// Number of POST requests issued so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl PredictionProvider for RemoteProvider {
    fn predict(&self, g: &Graph) -> Result<Matrix> {
        let body = serde_json::to_vec(&GraphFile::from(&g.without_labels()))?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let resp = self
            .client
            .post(&self.endpoint)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body)
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::Protocol(format!("service answered {status}: {text}")));
        }
        let parsed: PredictResponse =
            serde_json::from_str(&text).map_err(|e| Error::Protocol(format!("malformed response: {e}")))?;
        let rows = parsed.probabilities;
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::Protocol(format!("response row {i} has {} entries, row 0 has {cols}", rows[i].len())));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }
}

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingProvider};
use crate::linalg;

const BATCH: usize = 256;

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

/// Client for an external encoder speaking `POST /embed`
/// `{"texts": [...]}` -> `{"dim": n, "vectors": [[...], ...]}`.
///
/// Returned vectors are re-normalized so every provider honors the
/// unit-norm contract.
pub struct RemoteProvider {
    url: String,
    dim: usize,
    agent: ureq::Agent,
    gate: Gate,
}

impl RemoteProvider {
    pub fn new(endpoint: impl Into<String>, dim: usize, max_in_flight: usize) -> Self {
        let endpoint = endpoint.into();
        let url = format!("{}/embed", endpoint.trim_end_matches('/'));
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        RemoteProvider {
            url,
            dim,
            agent,
            gate: Gate::new(max_in_flight.max(1)),
        }
    }

    fn request(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let _permit = self.gate.acquire();
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(EmbedRequest { texts })
            .map_err(|e| EmbedError::ProviderUnavailable(format!("{}: {e}", self.url)))?;
        let body: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::ProviderUnavailable(format!("{}: bad response: {e}", self.url)))?;
        if body.dim != self.dim {
            return Err(EmbedError::DimMismatch {
                expected: self.dim,
                found: body.dim,
            });
        }
        if body.vectors.len() != texts.len() {
            return Err(EmbedError::ProviderUnavailable(format!(
                "{}: asked for {} vectors, got {}",
                self.url,
                texts.len(),
                body.vectors.len()
            )));
        }
        body.vectors
            .into_iter()
            .map(|mut v| {
                if v.len() != self.dim {
                    return Err(EmbedError::DimMismatch {
                        expected: self.dim,
                        found: v.len(),
                    });
                }
                linalg::normalize(&mut v);
                Ok(v)
            })
            .collect()
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(BATCH) {
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// One-shot HTTP server answering every request with `status` and `body`.
    fn serve(status: u16, body: &'static str, requests: usize) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for stream in listener.incoming().take(requests) {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                let resp = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        format!("http://{addr}")
    }

    #[test]
    fn embeds_and_normalizes() {
        let url = serve(200, r#"{"dim": 2, "vectors": [[3.0, 4.0]]}"#, 1);
        let p = RemoteProvider::new(url, 2, 8);
        let v = p.embed_text("hello").unwrap();
        assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn wrong_dim() {
        let url = serve(200, r#"{"dim": 3, "vectors": [[1.0, 0.0, 0.0]]}"#, 1);
        let p = RemoteProvider::new(url, 2, 8);
        assert!(matches!(
            p.embed_text("x"),
            Err(EmbedError::DimMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn non_200_is_unavailable() {
        let url = serve(500, "{}", 1);
        let p = RemoteProvider::new(url, 2, 8);
        assert!(matches!(p.embed_text("x"), Err(EmbedError::ProviderUnavailable(_))));
    }

    #[test]
    fn unreachable() {
        // Bind then drop to get a port with nothing listening.
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let p = RemoteProvider::new(format!("http://127.0.0.1:{port}"), 2, 8);
        assert!(matches!(p.embed_text("x"), Err(EmbedError::ProviderUnavailable(_))));
    }
}

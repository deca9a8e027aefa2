//! Joint image–text embedding backends.
//!
//! Wire format of the HTTP backend: the request body is either PNG bytes
//! (`Content-Type: image/png`) or UTF-8 text (`Content-Type: text/plain`),
//! POSTed to the configured URL. The response body is a little-endian `u32`
//! dimension `D` followed by `D` little-endian `f32` values.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use super::{DistributionProvider, PromptSet, ScoringError};
use crate::raster::{encode_png_thumbnail, ImageBuffer};

pub trait EmbeddingBackend: Send + Sync {
    fn embed_image(&self, img: &ImageBuffer) -> Result<Vec<f32>, ScoringError>;
    fn embed_text(&self, text: &str) -> Result<Vec<f32>, ScoringError>;
}

/// Length-prefixed little-endian `f32` vector.
pub fn encode_embedding(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * values.len());
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_embedding(bytes: &[u8]) -> Result<Vec<f32>, ScoringError> {
    let header: [u8; 4] = bytes
        .get(..4)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| ScoringError::Backend("embedding response shorter than its length prefix".into()))?;
    let dim = u32::from_le_bytes(header) as usize;
    let body = &bytes[4..];
    if dim == 0 || body.len() != dim * 4 {
        return Err(ScoringError::Backend(format!(
            "embedding response declares {dim} values but carries {} bytes",
            body.len()
        )));
    }
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ScoringError::Backend("embedding contains non-finite values".into()));
    }
    Ok(values)
}

/// Talks to an embedding server over HTTP.
pub struct HttpEmbeddingBackend {
    url: String,
    agent: ureq::Agent,
    max_side: usize,
}

impl HttpEmbeddingBackend {
    /// `max_side` caps the longest side of images sent to the server (0 = no cap).
    pub fn new(url: impl Into<String>, timeout: Duration, max_side: usize) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().new_agent();
        HttpEmbeddingBackend { url: url.into(), agent, max_side }
    }

    fn post(&self, content_type: &str, body: &[u8]) -> Result<Vec<f32>, ScoringError> {
        let mut response = self
            .agent
            .post(&self.url)
            .header("Content-Type", content_type)
            .send(body)
            .map_err(|e| ScoringError::Backend(format!("{}: {e}", self.url)))?;
        let bytes = response
            .body_mut()
            .with_config()
            .limit(64 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| ScoringError::Backend(e.to_string()))?;
        decode_embedding(&bytes)
    }
}

impl EmbeddingBackend for HttpEmbeddingBackend {
    fn embed_image(&self, img: &ImageBuffer) -> Result<Vec<f32>, ScoringError> {
        let png = encode_png_thumbnail(img, self.max_side).map_err(|e| ScoringError::Backend(e.to_string()))?;
        self.post("image/png", &png)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>, ScoringError> {
        self.post("text/plain; charset=utf-8", text.as_bytes())
    }
}

/// Logits `⟨v(x), e_k⟩` from an embedding backend; text embeddings are cached.
pub struct EmbeddingProvider<B> {
    backend: B,
    text_cache: Mutex<HashMap<String, Vec<f32>>>,
}

impl<B: EmbeddingBackend> EmbeddingProvider<B> {
    pub fn new(backend: B) -> Self {
        EmbeddingProvider { backend, text_cache: Mutex::new(HashMap::new()) }
    }

    fn text_embedding(&self, prompt: &str) -> Result<Vec<f32>, ScoringError> {
        if let Some(e) = self.text_cache.lock().unwrap().get(prompt) {
            return Ok(e.clone());
        }
        let e = self.backend.embed_text(prompt)?;
        self.text_cache.lock().unwrap().insert(prompt.to_string(), e.clone());
        Ok(e)
    }
}

impl<B: EmbeddingBackend> DistributionProvider for EmbeddingProvider<B> {
    fn logits(&self, img: &ImageBuffer, prompts: &PromptSet) -> Result<Vec<f64>, ScoringError> {
        let v = self.backend.embed_image(img)?;
        prompts
            .prompts
            .iter()
            .map(|p| {
                let e = self.text_embedding(p)?;
                if e.len() != v.len() {
                    return Err(ScoringError::Backend(format!(
                        "image embedding has {} dims, text embedding {}",
                        v.len(),
                        e.len()
                    )));
                }
                Ok(v.iter().zip(&e).map(|(a, b)| *a as f64 * *b as f64).sum())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn wire_round_trip_and_errors() {
        let v = vec![0.5f32, -1.25, 3.0];
        assert_eq!(decode_embedding(&encode_embedding(&v)).unwrap(), v);
        assert!(decode_embedding(&[1, 0]).is_err());
        assert!(decode_embedding(&[2, 0, 0, 0, 0, 0, 0, 0]).is_err());
        assert!(decode_embedding(&encode_embedding(&[])).is_err());
        assert!(decode_embedding(&encode_embedding(&[f32::NAN])).is_err());
    }

    struct Toy {
        text_calls: AtomicUsize,
    }

    impl EmbeddingBackend for Toy {
        fn embed_image(&self, img: &ImageBuffer) -> Result<Vec<f32>, ScoringError> {
            let m = img.data().iter().sum::<f32>() / img.data().len() as f32;
            Ok(vec![m, 1.0 - m])
        }
        fn embed_text(&self, text: &str) -> Result<Vec<f32>, ScoringError> {
            self.text_calls.fetch_add(1, Ordering::SeqCst);
            Ok(if text.contains("bright") { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
        }
    }

    #[test]
    fn logits_are_inner_products_and_texts_are_cached() {
        let provider = EmbeddingProvider::new(Toy { text_calls: AtomicUsize::new(0) });
        let prompts = PromptSet::global();
        let img = ImageBuffer::uniform(2, 2, [0.8; 3]).unwrap();
        let logits = provider.logits(&img, &prompts).unwrap();
        assert!((logits[0] - 0.2).abs() < 1e-6); // "a dark light photo"
        assert!((logits[1] - 0.8).abs() < 1e-6); // "a bright light photo"
        provider.logits(&img, &prompts).unwrap();
        assert_eq!(provider.backend.text_calls.load(Ordering::SeqCst), 8);
    }

    /// Minimal one-shot-per-connection HTTP server answering with fixed embeddings.
    fn serve(requests: usize) -> (String, std::thread::JoinHandle<Vec<(String, usize)>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/embed", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for stream in listener.incoming().take(requests) {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let (mut content_type, mut len) = (String::new(), 0usize);
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end().to_string();
                    if line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-type:") {
                        content_type = v.trim().to_string();
                    }
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                let reply = if content_type.starts_with("image/png") {
                    encode_embedding(&[0.25, 0.75])
                } else {
                    encode_embedding(&[1.0, 2.0])
                };
                write!(
                    stream,
                    "HTTP/1.1 200 OK\r\nContent-Type: application/octet-stream\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                    reply.len()
                )
                .unwrap();
                stream.write_all(&reply).unwrap();
                seen.push((content_type, len));
            }
            seen
        });
        (url, handle)
    }

    #[test]
    fn http_backend_speaks_the_wire_format() {
        let (url, handle) = serve(2);
        let backend = HttpEmbeddingBackend::new(url, Duration::from_secs(5), 16);
        let img = ImageBuffer::uniform(40, 20, [0.5; 3]).unwrap();
        assert_eq!(backend.embed_image(&img).unwrap(), vec![0.25, 0.75]);
        assert_eq!(backend.embed_text("a sharp photo").unwrap(), vec![1.0, 2.0]);
        let seen = handle.join().unwrap();
        assert!(seen[0].0.starts_with("image/png"));
        assert!(seen[1].0.starts_with("text/plain"));
        assert_eq!(seen[1].1, "a sharp photo".len());
    }

    #[test]
    fn unreachable_backend_surfaces_error() {
        let backend = HttpEmbeddingBackend::new("http://127.0.0.1:9/none", Duration::from_millis(500), 0);
        let provider = EmbeddingProvider::new(backend);
        let img = ImageBuffer::uniform(1, 1, [0.5; 3]).unwrap();
        assert!(matches!(provider.logits(&img, &PromptSet::global()), Err(ScoringError::Backend(_))));
    }
}

//! Optional online mode: a thin chat-completion client.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use super::{AugmentationRequest, AugmentationResponse};
use crate::error::{Error, Result};

pub const ENV_URL: &str = "CORPUSFORGE_INFER_URL";
pub const ENV_KEY: &str = "CORPUSFORGE_INFER_KEY";

#[derive(Debug, Clone)]
pub struct InferenceClient {
    pub url: String,
    pub key: Option<String>,
    pub model: Option<String>,
    pub max_attempts: u32,
    pub base_backoff: Duration,
    pub timeout: Duration,
}

impl InferenceClient {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            key: None,
            model: None,
            max_attempts: 3,
            base_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
        }
    }

    pub fn from_env() -> Result<Self> {
        let url = std::env::var(ENV_URL)
            .map_err(|_| Error::invalid(format!("{ENV_URL} is not set")))?;
        let mut client = Self::new(url);
        client.key = std::env::var(ENV_KEY).ok().filter(|k| !k.is_empty());
        Ok(client)
    }

    fn body(&self, prompt: &str) -> Value {
        let mut body = json!({
            "messages": [{"role": "user", "content": prompt}],
        });
        if let Some(model) = &self.model {
            body["model"] = json!(model);
        }
        body
    }

    /// POST one request. Transport errors, 5xx and 429 are retried with
    /// exponential backoff; other statuses fail immediately.
    pub fn call(&self, request: &AugmentationRequest) -> Result<AugmentationResponse> {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(self.timeout))
            .build();
        let agent = ureq::Agent::new_with_config(config);
        let body = self.body(&request.prompt);

        let attempts = self.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.base_backoff * 2u32.pow(attempt - 1));
            }
            let mut req = agent.post(&self.url).header("Content-Type", "application/json");
            if let Some(key) = &self.key {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            let mut resp = match req.send_json(&body) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("{}: attempt {} failed: {e}", request.request_id, attempt + 1);
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status().as_u16();
            let text = resp
                .body_mut()
                .read_to_string()
                .map_err(|e| Error::Http(e.to_string()))?;
            if (200..300).contains(&status) {
                return Ok(AugmentationResponse {
                    request_id: request.request_id.clone(),
                    text: extract_content(&text)?,
                });
            }
            last = format!("status {status}");
            if status < 500 && status != 429 {
                break;
            }
            log::warn!("{}: attempt {} got {status}", request.request_id, attempt + 1);
        }
        Err(Error::Http(format!("{}: {last}", request.request_id)))
    }
}

fn extract_content(body: &str) -> Result<String> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| Error::MalformedResponse(e.to_string()))?;
    value
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.pointer("/message/content"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::MalformedResponse("missing choices[0].message.content".into()))
}

/// Call every request with at most `parallelism` in flight. Output order
/// follows the input order.
pub fn run_online(
    client: &InferenceClient,
    requests: &[AugmentationRequest],
    parallelism: usize,
) -> Result<Vec<AugmentationResponse>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<AugmentationResponse>>>> =
        Mutex::new((0..requests.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..parallelism.clamp(1, requests.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(req) = requests.get(i) else { break };
                let r = client.call(req);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every request visited"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{AugmentKind, RequestMetadata};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves `count` connections, answering each with `reply(body)`.
    fn serve(count: usize, reply: impl Fn(&str) -> (u16, String) + Send + 'static) -> (String, std::thread::JoinHandle<usize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut served = 0;
            for stream in listener.incoming().take(count) {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
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
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let (status, text) = reply(std::str::from_utf8(&body).unwrap());
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                )
                .unwrap();
                served += 1;
            }
            served
        });
        (url, handle)
    }

    fn request(prompt: &str) -> AugmentationRequest {
        AugmentationRequest {
            request_id: "cot:s1".into(),
            sample_id: "s1".into(),
            kind: AugmentKind::Cot,
            prompt: prompt.into(),
            metadata: RequestMetadata {
                question: "q".into(),
                answer: "a".into(),
                new_answer: None,
            },
        }
    }

    fn client(url: String) -> InferenceClient {
        let mut c = InferenceClient::new(url);
        c.base_backoff = Duration::from_millis(1);
        c.timeout = Duration::from_secs(5);
        c
    }

    #[test]
    fn echo() {
        let (url, h) = serve(1, |body| {
            let v: Value = serde_json::from_str(body).unwrap();
            let prompt = v["messages"][0]["content"].clone();
            (200, json!({"choices": [{"message": {"content": prompt}}]}).to_string())
        });
        let resp = client(url).call(&request("hello\nworld ✓")).unwrap();
        assert_eq!(resp.text, "hello\nworld ✓");
        assert_eq!(resp.request_id, "cot:s1");
        assert_eq!(h.join().unwrap(), 1);
    }

    #[test]
    fn server_error_retried_three_times() {
        let (url, h) = serve(3, |_| (500, "{}".into()));
        let err = client(url).call(&request("p")).unwrap_err();
        assert!(matches!(err, Error::Http(_)));
        assert_eq!(h.join().unwrap(), 3);
    }

    #[test]
    fn missing_choices() {
        let (url, _h) = serve(1, |_| (200, "{\"id\":1}".into()));
        let err = client(url).call(&request("p")).unwrap_err();
        assert!(matches!(err, Error::MalformedResponse(_)));
    }

    #[test]
    fn parallel_keeps_order() {
        let (url, _h) = serve(4, |body| {
            let v: Value = serde_json::from_str(body).unwrap();
            let prompt = v["messages"][0]["content"].clone();
            (200, json!({"choices": [{"message": {"content": prompt}}]}).to_string())
        });
        let reqs: Vec<_> = (0..4)
            .map(|i| {
                let mut r = request(&format!("p{i}"));
                r.request_id = format!("cot:s{i}");
                r
            })
            .collect();
        let out = run_online(&client(url), &reqs, 2).unwrap();
        for (i, r) in out.iter().enumerate() {
            assert_eq!(r.text, format!("p{i}"));
            assert_eq!(r.request_id, format!("cot:s{i}"));
        }
    }
}

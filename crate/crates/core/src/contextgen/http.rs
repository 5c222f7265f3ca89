//! Blocking client for hosted text-generation endpoints.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{GenerationError, GenerationRequest, GenerativeLmClient};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiFlavor {
    /// `POST {prompt, n, max_tokens, …}` → `{choices: [{text}]}`.
    OpenaiCompletions,
    /// `POST {inputs, parameters}` → `{generated_text}`, one call per sample.
    Tgi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpClientConfig {
    pub endpoint: String,
    pub api: ApiFlavor,
    pub model: Option<String>,
    /// Environment variable holding the bearer token, if any.
    pub token_env: String,
    pub timeout_secs: u64,
    pub retries: usize,
    pub backoff_ms: u64,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080/v1/completions".into(),
            api: ApiFlavor::OpenaiCompletions,
            model: None,
            token_env: "GENLM_API_TOKEN".into(),
            timeout_secs: 60,
            retries: 3,
            backoff_ms: 500,
        }
    }
}

pub struct HttpClient {
    config: HttpClientConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

enum Attempt {
    Retry(String),
    Fatal(GenerationError),
}

impl HttpClient {
    pub fn new(config: HttpClientConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        Self { config, agent, token }
    }

    fn post_once(&self, body: &Value) -> Result<Value, Attempt> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| Attempt::Fatal(GenerationError::Protocol(format!("invalid json: {e}")))),
            429 | 500..=599 => Attempt::Retry(format!("HTTP {status}: {text}")).into_err(),
            _ => Err(Attempt::Fatal(GenerationError::Http { status, body: text })),
        }
    }

    /// Posts with exponential backoff on transport failures, 429 and 5xx.
    fn post(&self, body: &Value) -> Result<Value, GenerationError> {
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.post_once(body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("generation request attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                    if attempt + 1 < attempts {
                        thread::sleep(Duration::from_millis(self.config.backoff_ms << attempt));
                    }
                }
            }
        }
        Err(GenerationError::Transport {
            attempts,
            message: last,
        })
    }
}

impl Attempt {
    fn into_err<T>(self) -> Result<T, Attempt> {
        Err(self)
    }
}

fn protocol(msg: &str, v: &Value) -> GenerationError {
    GenerationError::Protocol(format!("{msg}: {v}"))
}

impl GenerativeLmClient for HttpClient {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, GenerationError> {
        req.validate()?;
        match self.config.api {
            ApiFlavor::OpenaiCompletions => {
                let mut body = json!({
                    "prompt": req.prompt,
                    "temperature": req.temperature,
                    "max_tokens": req.max_new_tokens,
                    "n": req.num_samples,
                    "stop": ["\n"],
                    "seed": req.seed,
                });
                if let Some(m) = &self.config.model {
                    body["model"] = json!(m);
                }
                let v = self.post(&body)?;
                let choices = v
                    .get("choices")
                    .and_then(Value::as_array)
                    .ok_or_else(|| protocol("missing `choices`", &v))?;
                choices
                    .iter()
                    .map(|c| {
                        c.get("text")
                            .and_then(Value::as_str)
                            .map(str::to_string)
                            .ok_or_else(|| protocol("choice without `text`", c))
                    })
                    .collect()
            }
            ApiFlavor::Tgi => (0..req.num_samples)
                .map(|i| {
                    let body = json!({
                        "inputs": req.prompt,
                        "parameters": {
                            "temperature": req.temperature,
                            "max_new_tokens": req.max_new_tokens,
                            "do_sample": true,
                            "stop": ["\n"],
                            "seed": req.seed.wrapping_add(i as u64),
                            "return_full_text": false,
                        }
                    });
                    let v = self.post(&body)?;
                    let obj = match &v {
                        Value::Array(items) => items.first().cloned().unwrap_or(Value::Null),
                        other => other.clone(),
                    };
                    obj.get("generated_text")
                        .and_then(Value::as_str)
                        .map(str::to_string)
                        .ok_or_else(|| protocol("missing `generated_text`", &v))
                })
                .collect(),
        }
    }

    fn describe(&self) -> String {
        format!("http({:?} {})", self.config.api, self.config.endpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contextgen::StopRule;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Serves the canned `(status, body)` responses in order, recording request bodies.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>, thread::JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        let handle = thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
                stream.flush().unwrap();
            }
        });
        (format!("http://{addr}/v1/completions"), seen, handle)
    }

    fn request(n: usize) -> GenerationRequest {
        GenerationRequest {
            prompt: "1. hi\n2.".into(),
            temperature: 0.8,
            max_new_tokens: 8,
            num_samples: n,
            stop: StopRule::FirstNewline,
            seed: 5,
        }
    }

    fn client(endpoint: String, api: ApiFlavor, retries: usize) -> HttpClient {
        HttpClient::new(HttpClientConfig {
            endpoint,
            api,
            retries,
            backoff_ms: 5,
            timeout_secs: 5,
            token_env: "FEWSHOT_TEST_UNSET_TOKEN".into(),
            ..Default::default()
        })
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let ok = r#"{"choices":[{"text":" hello\n"},{"text":" there"}]}"#.to_string();
        let (url, seen, h) = serve(vec![(503, "busy".into()), (200, ok)]);
        let out = client(url, ApiFlavor::OpenaiCompletions, 2).generate(&request(2)).unwrap();
        h.join().unwrap();
        assert_eq!(out, vec![" hello\n", " there"]);
        let bodies = seen.lock().unwrap();
        assert_eq!(bodies.len(), 2);
        let sent: Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(sent["n"], 2);
        assert_eq!(sent["stop"][0], "\n");
    }

    #[test]
    fn gives_up_after_retry_budget() {
        let (url, _, h) = serve(vec![(500, "a".into()), (502, "b".into())]);
        let err = client(url, ApiFlavor::OpenaiCompletions, 1).generate(&request(1)).unwrap_err();
        h.join().unwrap();
        assert!(matches!(err, GenerationError::Transport { attempts: 2, .. }), "{err}");
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, seen, h) = serve(vec![(400, "bad".into())]);
        let err = client(url, ApiFlavor::OpenaiCompletions, 3).generate(&request(1)).unwrap_err();
        h.join().unwrap();
        assert!(matches!(err, GenerationError::Http { status: 400, .. }));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn tgi_flavor_issues_one_call_per_sample() {
        let (url, seen, h) = serve(vec![
            (200, r#"{"generated_text":" one"}"#.into()),
            (200, r#"[{"generated_text":" two"}]"#.into()),
        ]);
        let out = client(url, ApiFlavor::Tgi, 0).generate(&request(2)).unwrap();
        h.join().unwrap();
        assert_eq!(out, vec![" one", " two"]);
        let first: Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
        assert_eq!(first["parameters"]["max_new_tokens"], 8);
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let err = client(format!("http://{addr}/x"), ApiFlavor::OpenaiCompletions, 1)
            .generate(&request(1))
            .unwrap_err();
        assert!(matches!(err, GenerationError::Transport { .. }));
    }
}

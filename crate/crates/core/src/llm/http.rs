use std::env;
use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendConfig, BackendError, Completion, TokenUsage};
use crate::prompting::PromptRequest;

/// Chat-completion backend for OpenAI-compatible HTTP endpoints.
///
/// The API token is read from the environment variable named in the config
/// when the backend is built; it is never taken from the command line.
pub struct HttpBackend {
    config: BackendConfig,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let token = env::var(&config.api_key_env).ok().filter(|t| !t.trim().is_empty());
        if token.is_none() {
            log::warn!("{} is not set; sending requests without a token", config.api_key_env);
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpBackend { config, token, client })
    }

    fn body(&self, prompt: &str) -> Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        })
    }
}

fn parse_response(body: &Value) -> Result<Completion, BackendError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Transport("response has no choices[0].message.content".into()))?;
    let usage = body.get("usage").and_then(|u| {
        Some(TokenUsage::new(
            u.get("prompt_tokens")?.as_u64()?,
            u.get("completion_tokens")?.as_u64()?,
        ))
    });
    Ok(Completion {
        text: text.to_string(),
        usage,
    })
}

impl Backend for HttpBackend {
    fn complete(&self, prompt: &PromptRequest) -> Result<Completion, BackendError> {
        let mut req = self.client.post(&self.config.endpoint).json(&self.body(&prompt.text));
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(e.to_string())
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(e.to_string())
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        if !status.is_success() {
            let mut body = text;
            body.truncate(500);
            return Err(BackendError::from_status(status.as_u16(), body));
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Transport(format!("response is not JSON: {e}")))?;
        parse_response(&value)
    }

    fn name(&self) -> &str {
        "http"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::PromptKind;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    /// Serve one canned HTTP response and hand back the raw request.
    fn one_shot(status: &str, body: &str) -> (String, thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let response = format!(
            "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        );
        let handle = thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let mut stream = stream;
            stream.write_all(response.as_bytes()).unwrap();
            head + &String::from_utf8(body).unwrap()
        });
        (format!("http://{addr}/v1/chat/completions"), handle)
    }

    fn prompt() -> PromptRequest {
        PromptRequest {
            kind: PromptKind::LabelerHunk,
            key: "labeler-hunk-1".into(),
            text: "label this".into(),
            covered_hunks: vec![1],
            covered_labels: vec![],
        }
    }

    fn config(endpoint: String, key_env: &str) -> BackendConfig {
        BackendConfig {
            endpoint,
            model: "test-model".into(),
            api_key_env: key_env.into(),
            timeout_secs: 5,
            ..BackendConfig::default()
        }
    }

    #[test]
    fn successful_completion_with_usage() {
        let (url, server) = one_shot(
            "200 OK",
            r#"{"choices":[{"message":{"role":"assistant","content":"<json>{}</json>"}}],"usage":{"prompt_tokens":12,"completion_tokens":4}}"#,
        );
        std::env::set_var("HUNKMARK_TEST_KEY_OK", "sekrit");
        let backend = HttpBackend::new(config(url, "HUNKMARK_TEST_KEY_OK")).unwrap();
        let c = backend.complete(&prompt()).unwrap();
        assert_eq!(c.text, "<json>{}</json>");
        assert_eq!(c.usage, Some(TokenUsage::new(12, 4)));
        let request = server.join().unwrap();
        assert!(request.to_ascii_lowercase().contains("authorization: bearer sekrit"));
        assert!(request.contains("\"model\":\"test-model\""));
        assert!(request.contains("label this"));
        assert!(!format!("{backend:?}").contains("sekrit"));
    }

    #[test]
    fn unauthorized_maps_to_auth() {
        let (url, server) = one_shot("401 Unauthorized", r#"{"error":"bad key"}"#);
        let backend = HttpBackend::new(config(url, "HUNKMARK_TEST_KEY_UNSET")).unwrap();
        assert!(matches!(backend.complete(&prompt()), Err(BackendError::Auth(_))));
        server.join().unwrap();
    }

    #[test]
    fn server_error_is_transient_status() {
        let (url, server) = one_shot("503 Service Unavailable", "busy");
        let backend = HttpBackend::new(config(url, "HUNKMARK_TEST_KEY_UNSET")).unwrap();
        let err = backend.complete(&prompt()).unwrap_err();
        assert!(err.is_transient());
        server.join().unwrap();
    }

    #[test]
    fn connection_refused_is_transport() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        drop(listener);
        let backend = HttpBackend::new(config(url, "HUNKMARK_TEST_KEY_UNSET")).unwrap();
        assert!(matches!(backend.complete(&prompt()), Err(BackendError::Transport(_))));
    }

    #[test]
    fn missing_content_is_an_error() {
        assert!(parse_response(&json!({"choices": []})).is_err());
        let c = parse_response(&json!({"choices": [{"message": {"content": "x"}}]})).unwrap();
        assert_eq!(c.usage, None);
    }
}

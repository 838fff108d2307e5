//! Client for OpenAI-compatible `/chat/completions` endpoints.

use std::time::Duration;

use serde_json::{json, Value as Json};

use super::{
    estimate_tokens, CompletionRequest, CompletionResponse, GatewayError, LlmBackend, TokenAlternative,
    TokenLogprob, Usage,
};

#[derive(Debug, Clone, PartialEq)]
pub struct OpenAiConfig {
    /// Base URL up to and including the version segment, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl OpenAiConfig {
    /// Reads `MAPSMITH_BASE_URL`, `MAPSMITH_MODEL`, `MAPSMITH_API_KEY` (falling
    /// back to `OPENAI_API_KEY`) and `MAPSMITH_TIMEOUT_SECS`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let base_url = var("MAPSMITH_BASE_URL")
            .ok_or_else(|| GatewayError::Config("MAPSMITH_BASE_URL is not set".into()))?;
        let model = var("MAPSMITH_MODEL").ok_or_else(|| GatewayError::Config("MAPSMITH_MODEL is not set".into()))?;
        let timeout = match var("MAPSMITH_TIMEOUT_SECS") {
            Some(s) => Duration::from_secs(
                s.parse()
                    .map_err(|_| GatewayError::Config(format!("MAPSMITH_TIMEOUT_SECS={s} is not a number")))?,
            ),
            None => Duration::from_secs(120),
        };
        Ok(Self {
            base_url,
            model,
            api_key: var("MAPSMITH_API_KEY").or_else(|| var("OPENAI_API_KEY")),
            timeout,
        })
    }
}

pub struct OpenAiBackend {
    config: OpenAiConfig,
    client: reqwest::blocking::Client,
}

impl OpenAiBackend {
    pub fn new(config: OpenAiConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

impl LlmBackend for OpenAiBackend {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        if request.want_logprobs {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(request.top_logprobs.max(1));
        }
        let mut call = self.client.post(self.url()).json(&body);
        if let Some(key) = &self.config.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(classify_failure(status.as_u16(), &text));
        }
        let doc: Json = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Transport(format!("malformed response body: {e}")))?;
        parse_completion(&doc, &request.prompt)
    }
}

fn classify_failure(status: u16, body: &str) -> GatewayError {
    let lower = body.to_ascii_lowercase();
    if lower.contains("context_length_exceeded")
        || lower.contains("maximum context length")
        || lower.contains("context window")
        || status == 413
    {
        return GatewayError::ContextOverflow(body.to_string());
    }
    match status {
        408 | 409 | 429 | 500..=599 => GatewayError::Transport(format!("HTTP {status}: {body}")),
        _ => GatewayError::Refused(format!("HTTP {status}: {body}")),
    }
}

fn parse_completion(doc: &Json, prompt: &str) -> Result<CompletionResponse, GatewayError> {
    let choice = &doc["choices"][0];
    let text = choice["message"]["content"]
        .as_str()
        .ok_or_else(|| GatewayError::Transport("response has no message content".into()))?
        .to_string();
    let finish_reason = choice["finish_reason"].as_str().unwrap_or("stop").to_string();
    if finish_reason == "content_filter" {
        return Err(GatewayError::Refused("content filter".into()));
    }
    if finish_reason == "length" && text.trim().is_empty() {
        return Err(GatewayError::ContextOverflow("no room left for output".into()));
    }
    let usage = match (
        doc["usage"]["prompt_tokens"].as_u64(),
        doc["usage"]["completion_tokens"].as_u64(),
    ) {
        (Some(i), Some(o)) => Usage {
            input_tokens: i,
            output_tokens: o,
            estimated: false,
        },
        _ => Usage {
            input_tokens: estimate_tokens(prompt),
            output_tokens: estimate_tokens(&text),
            estimated: true,
        },
    };
    let logprobs = choice["logprobs"]["content"].as_array().map(|tokens| {
        tokens
            .iter()
            .map(|t| TokenLogprob {
                token: t["token"].as_str().unwrap_or_default().to_string(),
                logprob: t["logprob"].as_f64().unwrap_or(f64::NEG_INFINITY),
                top: t["top_logprobs"]
                    .as_array()
                    .map(|alts| {
                        alts.iter()
                            .map(|a| TokenAlternative {
                                token: a["token"].as_str().unwrap_or_default().to_string(),
                                logprob: a["logprob"].as_f64().unwrap_or(f64::NEG_INFINITY),
                            })
                            .collect()
                    })
                    .unwrap_or_default(),
            })
            .collect()
    });
    Ok(CompletionResponse {
        text,
        finish_reason,
        usage,
        logprobs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one canned HTTP response and returns the request body it saw.
    fn serve_once(status: &'static str, body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
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
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            write!(
                stream,
                "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            String::from_utf8(buf).unwrap()
        });
        (format!("http://{addr}/v1"), handle)
    }

    fn backend(url: String) -> OpenAiBackend {
        OpenAiBackend::new(OpenAiConfig {
            base_url: url,
            model: "test-model".into(),
            api_key: Some("k".into()),
            timeout: Duration::from_secs(5),
        })
        .unwrap()
    }

    #[test]
    fn parses_text_usage_and_logprobs() {
        let (url, h) = serve_once(
            "200 OK",
            r#"{"choices":[{"message":{"content":"Answer: A"},"finish_reason":"stop",
               "logprobs":{"content":[{"token":"Answer","logprob":-0.01,"top_logprobs":[]},
               {"token":":","logprob":0.0,"top_logprobs":[]},
               {"token":" A","logprob":-0.51,"top_logprobs":[{"token":" A","logprob":-0.51},{"token":" B","logprob":-1.61}]}]}}],
               "usage":{"prompt_tokens":12,"completion_tokens":3}}"#,
        );
        let req = CompletionRequest::new("pick").with_seed(7).with_logprobs(5);
        let r = backend(url).complete(&req).unwrap();
        let sent: Json = serde_json::from_str(&h.join().unwrap()).unwrap();
        assert_eq!(sent["seed"], 7);
        assert_eq!(sent["logprobs"], true);
        assert_eq!(sent["top_logprobs"], 5);
        assert_eq!(r.text, "Answer: A");
        assert_eq!(r.usage, Usage { input_tokens: 12, output_tokens: 3, estimated: false });
        assert_eq!(r.logprobs.unwrap()[2].top[1].logprob, -1.61);
    }

    #[test]
    fn context_overflow_is_distinct() {
        let (url, h) = serve_once(
            "400 Bad Request",
            r#"{"error":{"message":"This model's maximum context length is 8192 tokens","code":"context_length_exceeded"}}"#,
        );
        let err = backend(url).complete(&CompletionRequest::new("long")).unwrap_err();
        h.join().unwrap();
        assert!(matches!(err, GatewayError::ContextOverflow(_)));
    }

    #[test]
    fn failures_classified() {
        assert!(classify_failure(503, "busy").is_transient());
        assert!(classify_failure(429, "slow down").is_transient());
        assert!(matches!(classify_failure(401, "bad key"), GatewayError::Refused(_)));
    }

    #[test]
    fn missing_usage_is_estimated() {
        let doc = json!({"choices":[{"message":{"content":"abcdefgh"},"finish_reason":"stop"}]});
        let r = parse_completion(&doc, "abcd").unwrap();
        assert_eq!(r.usage, Usage { input_tokens: 1, output_tokens: 2, estimated: true });
        assert!(r.logprobs.is_none());
    }

    #[test]
    fn unreachable_server_is_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        drop(listener);
        let err = backend(url).complete(&CompletionRequest::new("x")).unwrap_err();
        assert!(err.is_transient(), "{err:?}");
    }
}

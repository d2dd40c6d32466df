//! HTTP backend speaking the completion-with-logprobs wire format.
//!
//! Works against servers exposing an OpenAI-style `completions` endpoint:
//! generation asks for `logprobs` on sampled tokens, and attribute scoring
//! uses the echo trick — append the word to the prompt, request zero new
//! tokens with echoed logprobs, and sum the log-probabilities of the tokens
//! that cover the appended word. Transient failures (transport errors and
//! 5xx statuses) are retried with a short backoff; 4xx responses fail fast.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backends::{
    AttributeDistribution, Backend, BackendDescriptor, BackendError, BackendKind,
    GenerationRecord, TokenLogprob,
};
use crate::decoding::DecodeConfig;
use crate::lexicon::AttributeLexicon;

const MAX_ATTEMPTS: u32 = 3;
const DEFAULT_BACKOFF_MS: u64 = 500;
/// Response bodies quoted in error messages are clipped to this many bytes.
const ERROR_BODY_LIMIT: usize = 400;

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    top_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_k: Option<u32>,
    logprobs: u32,
    echo: bool,
    seed: u64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    logprobs: Option<Logprobs>,
}

#[derive(Deserialize)]
struct Logprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    text_offset: Vec<usize>,
}

/// Client for one remote model.
pub struct HttpBackend {
    endpoint: String,
    model: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
    id: String,
    backoff_ms: u64,
}

impl HttpBackend {
    /// `auth_env` names an environment variable holding a bearer token; the
    /// variable must exist at construction so a missing credential fails
    /// before any probe runs.
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        auth_env: Option<&str>,
    ) -> Result<Self, BackendError> {
        let endpoint = endpoint.into();
        let model = model.into();
        let token = match auth_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| BackendError::AuthEnvMissing(var.to_string()))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| BackendError::Transport {
                url: endpoint.clone(),
                attempts: 0,
                reason: e.to_string(),
            })?;
        let id = format!("http:{model}");
        Ok(HttpBackend { endpoint, model, token, client, id, backoff_ms: DEFAULT_BACKOFF_MS })
    }

    pub fn from_descriptor(descriptor: &BackendDescriptor) -> Result<Self, BackendError> {
        if descriptor.kind != BackendKind::Http {
            return Err(BackendError::Protocol(format!(
                "descriptor kind {:?} is not http",
                descriptor.kind
            )));
        }
        let endpoint = descriptor
            .endpoint
            .as_deref()
            .ok_or_else(|| BackendError::Protocol("http descriptor needs an endpoint".into()))?;
        let model = descriptor
            .model
            .as_deref()
            .ok_or_else(|| BackendError::Protocol("http descriptor needs a model".into()))?;
        Self::new(endpoint, model, descriptor.auth_env.as_deref())
    }

    /// Shrinks the retry backoff; test servers should not wait out real
    /// delays.
    pub fn with_backoff_ms(mut self, ms: u64) -> Self {
        self.backoff_ms = ms;
        self
    }

    fn post(&self, body: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let mut last_reason = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            if attempt > 1 {
                std::thread::sleep(Duration::from_millis(self.backoff_ms * (attempt - 1) as u64));
            }
            let mut request = self.client.post(&self.endpoint).json(body);
            if let Some(token) = &self.token {
                request = request.bearer_auth(token);
            }
            match request.send() {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        return response
                            .json::<CompletionResponse>()
                            .map_err(|e| BackendError::Protocol(e.to_string()));
                    }
                    let body_text: String = response
                        .text()
                        .unwrap_or_default()
                        .chars()
                        .take(ERROR_BODY_LIMIT)
                        .collect();
                    if status.is_server_error() && attempt < MAX_ATTEMPTS {
                        last_reason = format!("status {status}");
                        continue;
                    }
                    return Err(BackendError::Status {
                        status: status.as_u16(),
                        url: self.endpoint.clone(),
                        body: body_text,
                    });
                }
                Err(e) => last_reason = e.to_string(),
            }
        }
        Err(BackendError::Transport {
            url: self.endpoint.clone(),
            attempts: MAX_ATTEMPTS,
            reason: last_reason,
        })
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, prompt: &str, decode: &DecodeConfig) -> Result<GenerationRecord, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        decode.validate().map_err(BackendError::Decode)?;
        let body = CompletionRequest {
            model: &self.model,
            prompt,
            max_tokens: decode.max_new_tokens,
            temperature: decode.temperature,
            top_p: decode.top_p,
            top_k: (decode.top_k > 0).then_some(decode.top_k),
            logprobs: 1,
            echo: false,
            seed: decode.seed,
        };
        let response = self.post(&body)?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("response carried no choices".into()))?;
        let lp = choice.logprobs.ok_or(BackendError::MissingLogprobs)?;
        if lp.tokens.len() != lp.token_logprobs.len() {
            return Err(BackendError::Protocol(format!(
                "{} tokens but {} token_logprobs",
                lp.tokens.len(),
                lp.token_logprobs.len()
            )));
        }
        let tokens = lp
            .tokens
            .into_iter()
            .zip(lp.token_logprobs)
            .map(|(token, logprob)| {
                logprob
                    .map(|logprob| TokenLogprob { token, logprob })
                    .ok_or(BackendError::MissingLogprobs)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GenerationRecord {
            probe_id: String::new(),
            prompt: prompt.to_string(),
            continuation: choice.text,
            tokens,
            decode: decode.clone(),
            backend_id: self.id.clone(),
            // Temperature zero is greedy and therefore replayable; anything
            // else depends on server-side sampling state we cannot pin.
            reproducible: decode.temperature == 0.0,
        })
    }

    /// Scores P(word | prompt) by echoing `prompt + " " + word` through the
    /// model with zero new tokens and summing the logprobs of the tokens
    /// that extend past the original prompt.
    fn score_attribute_words(
        &self,
        prompt: &str,
        lexicon: &AttributeLexicon,
    ) -> Result<AttributeDistribution, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let score = |word: &str| -> Result<f64, BackendError> {
            let stitched = format!("{prompt} {word}");
            let body = CompletionRequest {
                model: &self.model,
                prompt: &stitched,
                max_tokens: 0,
                temperature: 1.0,
                top_p: 1.0,
                top_k: None,
                logprobs: 1,
                echo: true,
                seed: 0,
            };
            let response = self.post(&body)?;
            let choice = response
                .choices
                .into_iter()
                .next()
                .ok_or_else(|| BackendError::Protocol("response carried no choices".into()))?;
            let lp = choice.logprobs.ok_or(BackendError::MissingLogprobs)?;
            if lp.text_offset.len() != lp.tokens.len()
                || lp.token_logprobs.len() != lp.tokens.len()
            {
                return Err(BackendError::Protocol(
                    "echoed logprobs need aligned tokens, token_logprobs and text_offset".into(),
                ));
            }
            let boundary = prompt.len();
            let mut sum = 0.0;
            let mut covered = false;
            for ((token, logprob), offset) in
                lp.tokens.iter().zip(&lp.token_logprobs).zip(&lp.text_offset)
            {
                if offset + token.len() <= boundary {
                    continue;
                }
                covered = true;
                match logprob {
                    Some(l) => sum += l,
                    None => {
                        return Err(BackendError::UnscorableWord {
                            word: word.to_string(),
                            reason: format!("token {token:?} in the word region has no logprob"),
                        })
                    }
                }
            }
            if !covered {
                return Err(BackendError::UnscorableWord {
                    word: word.to_string(),
                    reason: "no echoed token extends past the prompt".into(),
                });
            }
            Ok(sum.exp().min(1.0))
        };

        let mut pf = Vec::with_capacity(lexicon.len());
        let mut pm = Vec::with_capacity(lexicon.len());
        for pair in lexicon.pairs() {
            pf.push(score(&pair.female)?);
            pm.push(score(&pair.male)?);
        }
        Ok(AttributeDistribution { probe_id: String::new(), pf, pm })
    }
}

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{build_prompt, PromptSpec, RealizeError, ShotBank, TemplateLibrary, GENERATION_CUE};
use crate::flow::{Skeleton, SkeletonTurn};
use crate::model::{DealState, Dialogue, NegotiationConfig, Speaker};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextSource {
    External,
    /// The endpoint failed and the template realizer was used.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Realized {
    pub text: String,
    pub source: TextSource,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

/// A text-generation endpoint speaking `{"prompt", "max_tokens"}` in and
/// `{"text"}` out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalGenerator {
    pub endpoint: String,
    pub timeout: Duration,
    pub max_tokens: usize,
}

impl ExternalGenerator {
    pub fn new(endpoint: impl Into<String>) -> Self {
        ExternalGenerator {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
            max_tokens: 50,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Raw completion for `prompt`, trimmed to one utterance.
    pub fn complete(&self, prompt: &PromptSpec) -> Result<String, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let rendered = prompt.render();
        let body = CompletionRequest {
            prompt: &rendered,
            max_tokens: self.max_tokens,
        };
        let reply: CompletionResponse = agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| e.to_string())?
            .into_body()
            .read_json()
            .map_err(|e| e.to_string())?;
        let text = trim_completion(&reply.text);
        if text.is_empty() {
            return Err("empty completion".into());
        }
        Ok(text)
    }

    /// Endpoint text for `turn`, or the template realization if the call
    /// fails for any reason.
    pub fn realize<R: Rng + ?Sized>(
        &self,
        prompt: &PromptSpec,
        turn: &SkeletonTurn,
        templates: &TemplateLibrary,
        rng: &mut R,
    ) -> Result<Realized, RealizeError> {
        match self.complete(prompt) {
            Ok(text) => Ok(Realized {
                text,
                source: TextSource::External,
            }),
            Err(err) => {
                tracing::warn!(endpoint = %self.endpoint, %err, "external generation failed, using templates");
                Ok(Realized {
                    text: templates.realize(turn, rng)?,
                    source: TextSource::Fallback,
                })
            }
        }
    }
}

/// Realizes whole skeletons through an endpoint. After `max_failures`
/// consecutive failed calls the endpoint is abandoned and every remaining
/// turn uses templates.
#[derive(Debug, Clone)]
pub struct ExternalRealizer {
    pub generator: ExternalGenerator,
    pub bank: ShotBank,
    pub max_failures: usize,
    failures: usize,
    /// Turns realized by templates instead of the endpoint.
    pub fallbacks: usize,
    pub external: usize,
}

impl ExternalRealizer {
    pub fn new(generator: ExternalGenerator, bank: ShotBank) -> Self {
        ExternalRealizer {
            generator,
            bank,
            max_failures: 3,
            failures: 0,
            fallbacks: 0,
            external: 0,
        }
    }

    pub fn disabled(&self) -> bool {
        self.failures >= self.max_failures
    }

    pub fn realize_skeleton<R: Rng + ?Sized>(
        &mut self,
        sk: &Skeleton,
        config: &NegotiationConfig,
        templates: &TemplateLibrary,
        rng: &mut R,
    ) -> Result<Dialogue, RealizeError> {
        let mut state = DealState::open(sk.bundle.clone(), config, sk.setup.buyer_open, sk.setup.seller_min)
            .map_err(|e| RealizeError::Malformed(e.to_string()))?;
        let mut texts = Vec::with_capacity(sk.turns.len());
        for turn in &sk.turns {
            let prompt = if self.disabled() {
                None
            } else {
                build_prompt(turn, &state, &state.bundle, &self.bank, None).ok()
            };
            let text = match prompt {
                Some(p) => {
                    let r = self.generator.realize(&p, turn, templates, rng)?;
                    match r.source {
                        TextSource::External => {
                            self.failures = 0;
                            self.external += 1;
                        }
                        TextSource::Fallback => {
                            self.failures += 1;
                            self.fallbacks += 1;
                            if self.disabled() {
                                tracing::warn!(
                                    endpoint = %self.generator.endpoint,
                                    "endpoint keeps failing; using templates for the rest of the run"
                                );
                            }
                        }
                    }
                    r.text
                }
                None => {
                    self.fallbacks += 1;
                    templates.realize(turn, rng)?
                }
            };
            texts.push(text);
            for op in &turn.bundle_ops {
                if let Ok(next) = state.bundle.apply(op) {
                    state.bundle = next;
                }
            }
            if let Some(p) = turn.price_offer {
                match turn.speaker {
                    Speaker::Agent => state.seller_price = p,
                    Speaker::Customer => state.buyer_price = p,
                }
            }
        }
        Ok(sk.clone().into_dialogue(texts))
    }
}

/// Cuts a completion down to the first utterance: drops a leading cue, stops
/// at the first newline or the next cue.
pub fn trim_completion(raw: &str) -> String {
    let mut s = raw.trim_start();
    if let Some(rest) = s.strip_prefix(GENERATION_CUE) {
        s = rest;
    }
    if let Some(i) = s.find('\n') {
        s = &s[..i];
    }
    if let Some(i) = s.find(GENERATION_CUE) {
        s = &s[..i];
    }
    s.trim().to_string()
}

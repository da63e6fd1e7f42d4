use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    cassette_key, BackendError, Cassette, ChatBackend, ChatRequest, LlmConfig, LlmError, PromptEnvelope, SYSTEM_PROMPT,
};

/// One sampled completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelAnswer {
    pub raw_text: String,
    pub sample_index: u32,
    pub latency_ms: u64,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BridgeMode {
    Live,
    Record,
    Replay,
}

/// Counting semaphore bounding concurrent asks.
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
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Sends envelopes to a backend, or replays them from a cassette.
pub struct Bridge {
    cfg: LlmConfig,
    mode: BridgeMode,
    backend: Option<Arc<dyn ChatBackend>>,
    cassette: Option<Arc<Mutex<Cassette>>>,
    calls: AtomicU64,
    gate: Gate,
}

impl Bridge {
    pub fn live(cfg: LlmConfig, backend: Arc<dyn ChatBackend>) -> Result<Self, LlmError> {
        Self::build(cfg, BridgeMode::Live, Some(backend), None)
    }

    /// Live calls whose answers are written to `cassette` after every ask.
    pub fn recording(cfg: LlmConfig, backend: Arc<dyn ChatBackend>, cassette: Cassette) -> Result<Self, LlmError> {
        Self::recording_shared(cfg, backend, Arc::new(Mutex::new(cassette)))
    }

    /// As [`recording`](Self::recording), for a cassette shared by several
    /// bridges (one per model or temperature).
    pub fn recording_shared(
        cfg: LlmConfig,
        backend: Arc<dyn ChatBackend>,
        cassette: Arc<Mutex<Cassette>>,
    ) -> Result<Self, LlmError> {
        Self::build(cfg, BridgeMode::Record, Some(backend), Some(cassette))
    }

    /// Answers come only from `cassette`; no backend exists.
    pub fn replay(cfg: LlmConfig, cassette: Cassette) -> Result<Self, LlmError> {
        Self::replay_shared(cfg, Arc::new(Mutex::new(cassette)))
    }

    pub fn replay_shared(cfg: LlmConfig, cassette: Arc<Mutex<Cassette>>) -> Result<Self, LlmError> {
        Self::build(cfg, BridgeMode::Replay, None, Some(cassette))
    }

    fn build(
        cfg: LlmConfig,
        mode: BridgeMode,
        backend: Option<Arc<dyn ChatBackend>>,
        cassette: Option<Arc<Mutex<Cassette>>>,
    ) -> Result<Self, LlmError> {
        cfg.validate()?;
        Ok(Bridge {
            gate: Gate::new(cfg.max_in_flight),
            cfg,
            mode,
            backend,
            cassette,
            calls: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.cfg
    }

    pub fn mode(&self) -> BridgeMode {
        self.mode
    }

    /// Backend requests issued so far, retries included.
    pub fn backend_calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Key under which this envelope's answers are cassetted.
    pub fn key_for(&self, env: &PromptEnvelope) -> String {
        cassette_key(&self.cfg.model, self.cfg.temperature, &env.to_json())
    }

    /// `cfg.samples` answers, issued one after another.
    pub fn ask(&self, env: &PromptEnvelope) -> Result<Vec<ModelAnswer>, LlmError> {
        let user = env.to_json();
        let estimated = (user.len() as u64 + SYSTEM_PROMPT.len() as u64).div_ceil(4);
        if estimated > self.cfg.context_limit_tokens {
            return Err(LlmError::ContextLimit {
                estimated,
                limit: self.cfg.context_limit_tokens,
            });
        }
        let key = cassette_key(&self.cfg.model, self.cfg.temperature, &user);
        let _permit = self.gate.acquire();

        if self.mode == BridgeMode::Replay {
            let cassette = self
                .cassette
                .as_ref()
                .expect("replay bridge has a cassette")
                .lock()
                .expect("cassette lock");
            return (0..self.cfg.samples)
                .map(|i| {
                    let text = cassette.get(&key, i as usize).ok_or_else(|| LlmError::CassetteMiss {
                        hash: format!("{key}[{i}]"),
                    })?;
                    Ok(ModelAnswer {
                        raw_text: text.to_string(),
                        sample_index: i,
                        latency_ms: 0,
                        prompt_tokens: None,
                        completion_tokens: None,
                    })
                })
                .collect();
        }

        let backend = self.backend.as_ref().expect("live bridge has a backend");
        let req = ChatRequest {
            model: self.cfg.model.clone(),
            temperature: self.cfg.temperature,
            max_output_tokens: self.cfg.max_output_tokens,
            system: SYSTEM_PROMPT.to_string(),
            user,
            options: self.cfg.options.clone(),
        };
        let mut answers = Vec::with_capacity(self.cfg.samples as usize);
        for i in 0..self.cfg.samples {
            answers.push(self.sample(backend.as_ref(), &req, i, estimated)?);
        }
        if let Some(cassette) = &self.cassette {
            let mut cassette = cassette.lock().expect("cassette lock");
            for a in &answers {
                cassette.put(&key, a.sample_index as usize, &a.raw_text);
            }
            cassette.save()?;
        }
        Ok(answers)
    }

    fn sample(
        &self,
        backend: &dyn ChatBackend,
        req: &ChatRequest,
        index: u32,
        estimated: u64,
    ) -> Result<ModelAnswer, LlmError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.calls.fetch_add(1, Ordering::SeqCst);
            let started = Instant::now();
            match backend.complete(req) {
                Ok(resp) => {
                    return Ok(ModelAnswer {
                        raw_text: resp.text,
                        sample_index: index,
                        latency_ms: started.elapsed().as_millis() as u64,
                        prompt_tokens: resp.prompt_tokens,
                        completion_tokens: resp.completion_tokens,
                    })
                }
                Err(BackendError::Credential(m)) => return Err(LlmError::Credential(m)),
                Err(BackendError::ContextLimit(_)) => {
                    return Err(LlmError::ContextLimit {
                        estimated,
                        limit: self.cfg.context_limit_tokens,
                    })
                }
                Err(BackendError::Fatal { status, message }) => {
                    return Err(LlmError::Transport {
                        status,
                        attempts: attempt,
                        message,
                    })
                }
                Err(BackendError::Transient { status, message }) => {
                    if attempt >= self.cfg.max_attempts {
                        return Err(LlmError::Transport {
                            status,
                            attempts: attempt,
                            message,
                        });
                    }
                    std::thread::sleep(Duration::from_millis(self.cfg.retry_backoff_ms * attempt as u64));
                }
            }
        }
    }

    /// Snapshot of the cassette, if any.
    pub fn cassette(&self) -> Option<Cassette> {
        self.cassette.as_ref().map(|c| c.lock().expect("cassette lock").clone())
    }
}

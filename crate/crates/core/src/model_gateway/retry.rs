use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatModel, Embedder, ModelError, ModelRequest, ModelResponse};

/// Exponential backoff: attempt `n` (1-based) waits `backoff_s * 2^(n-1)` before
/// attempt `n + 1`. Only rate-limit and transport errors are retried.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_s: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_s: 1.0,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_attempts: 1,
            backoff_s: 0.0,
        }
    }

    pub fn delay_after(&self, attempt: u32) -> Duration {
        let secs = self.backoff_s * 2f64.powi(attempt.saturating_sub(1) as i32);
        Duration::from_secs_f64(secs.max(0.0))
    }

    pub fn run<T>(&self, mut call: impl FnMut() -> Result<T, ModelError>) -> Result<T, ModelError> {
        let max = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match call() {
                Err(e) if e.is_retryable() && attempt < max => {
                    tracing::debug!(attempt, error = %e, "retrying model call");
                    std::thread::sleep(self.delay_after(attempt));
                    attempt += 1;
                }
                Err(ModelError::RateLimited { .. }) => {
                    return Err(ModelError::RateLimited { attempts: attempt })
                }
                other => return other,
            }
        }
    }
}

pub struct Retrying<T: ?Sized> {
    inner: Arc<T>,
    policy: RetryPolicy,
}

impl<T: ?Sized> Retrying<T> {
    pub fn new(inner: Arc<T>, policy: RetryPolicy) -> Self {
        Retrying { inner, policy }
    }
}

impl ChatModel for Retrying<dyn ChatModel> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn supports_vision(&self) -> bool {
        self.inner.supports_vision()
    }

    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, ModelError> {
        self.policy.run(|| self.inner.complete(req))
    }
}

impl Embedder for Retrying<dyn Embedder> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ModelError> {
        self.policy.run(|| self.inner.embed(texts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        calls: AtomicU32,
        error: ModelError,
        succeed_on: u32,
    }

    impl ChatModel for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }
        fn complete(&self, _: &ModelRequest) -> Result<ModelResponse, ModelError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
            if n >= self.succeed_on {
                Ok(ModelResponse::text("ok"))
            } else {
                Err(self.error.clone())
            }
        }
    }

    fn wrapped(error: ModelError, succeed_on: u32, max_attempts: u32) -> (Arc<Flaky>, Retrying<dyn ChatModel>) {
        let flaky = Arc::new(Flaky { calls: AtomicU32::new(0), error, succeed_on });
        let inner: Arc<dyn ChatModel> = flaky.clone();
        (flaky, Retrying::new(inner, RetryPolicy { max_attempts, backoff_s: 0.0 }))
    }

    fn req() -> ModelRequest {
        ModelRequest::new("flaky", vec![super::super::Message::user("x")])
    }

    #[test]
    fn transport_errors_are_retried() {
        let (flaky, model) = wrapped(ModelError::Transport("reset".into()), 3, 3);
        assert_eq!(model.complete(&req()).unwrap().text, "ok");
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn rate_limit_exhaustion_reports_attempts() {
        let (flaky, model) = wrapped(ModelError::RateLimited { attempts: 1 }, 99, 4);
        assert_eq!(model.complete(&req()), Err(ModelError::RateLimited { attempts: 4 }));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn content_filter_is_never_retried() {
        let (flaky, model) = wrapped(ModelError::ContentFiltered("blocked".into()), 2, 5);
        assert!(matches!(model.complete(&req()), Err(ModelError::ContentFiltered(_))));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy { max_attempts: 5, backoff_s: 0.5 };
        assert_eq!(p.delay_after(1), Duration::from_millis(500));
        assert_eq!(p.delay_after(2), Duration::from_millis(1000));
        assert_eq!(p.delay_after(3), Duration::from_millis(2000));
    }
}

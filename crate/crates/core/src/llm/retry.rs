use std::sync::{Condvar, Mutex};
use std::time::Duration;

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Sleep before attempt `attempt + 1` (attempts are 1-based).
    pub fn backoff_after(&self, attempt: u32) -> Duration {
        let factor = self.multiplier.powi(attempt.saturating_sub(1) as i32);
        self.initial_backoff.mul_f64(factor)
    }
}

/// Retries retryable failures with exponential backoff.
pub struct RetryingBackend<B> {
    inner: B,
    policy: RetryPolicy,
}

impl<B: ChatBackend> RetryingBackend<B> {
    pub fn new(inner: B, policy: RetryPolicy) -> Self {
        RetryingBackend { inner, policy }
    }
}

impl<B: ChatBackend> ChatBackend for RetryingBackend<B> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let max = self.policy.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match self.inner.complete(req) {
                Ok(r) => return Ok(r),
                Err(e) if e.is_retryable() && attempt < max => {
                    let wait = self.policy.backoff_after(attempt);
                    tracing::warn!(attempt, ?wait, "retrying after error: {e}");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) if e.is_retryable() => {
                    return Err(LlmError::RetriesExhausted {
                        attempts: attempt,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Caps the number of requests in flight across threads.
pub struct ConcurrencyLimited<B> {
    inner: B,
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl<B: ChatBackend> ConcurrencyLimited<B> {
    pub fn new(inner: B, limit: usize) -> Self {
        ConcurrencyLimited {
            inner,
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }
}

struct Permit<'a> {
    in_flight: &'a Mutex<usize>,
    freed: &'a Condvar,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.in_flight.lock().unwrap() -= 1;
        self.freed.notify_one();
    }
}

impl<B: ChatBackend> ChatBackend for ConcurrencyLimited<B> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let _permit = {
            let mut n = self.in_flight.lock().unwrap();
            while *n >= self.limit {
                n = self.freed.wait(n).unwrap();
            }
            *n += 1;
            Permit {
                in_flight: &self.in_flight,
                freed: &self.freed,
            }
        };
        self.inner.complete(req)
    }
}

use std::collections::BTreeSet;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, ErrorClass};

/// Exponential backoff: the delay before retry `i` (1-based) is
/// `base_delay * multiplier^(i-1)`, scaled by a uniform factor in
/// `[1 - jitter, 1 + jitter]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub multiplier: f64,
    pub jitter_fraction: f64,
    pub retry_on: BTreeSet<ErrorClass>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 500,
            multiplier: 2.0,
            jitter_fraction: 0.2,
            retry_on: ErrorClass::default_retryable(),
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_attempts < 1 {
            return Err("retry.max_attempts must be >= 1".into());
        }
        if !(self.multiplier >= 1.0) {
            return Err("retry.multiplier must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.jitter_fraction) {
            return Err("retry.jitter_fraction must be in [0, 1]".into());
        }
        Ok(())
    }

    /// Nominal (jitter-free) delay before retry number `retry` (1-based).
    pub fn nominal_delay(&self, retry: u32) -> Duration {
        let exp = retry.saturating_sub(1) as i32;
        let ms = self.base_delay_ms as f64 * self.multiplier.powi(exp);
        Duration::from_secs_f64((ms / 1000.0).min(3600.0))
    }

    pub fn delay<R: Rng>(&self, retry: u32, rng: &mut R) -> Duration {
        let nominal = self.nominal_delay(retry);
        if self.jitter_fraction == 0.0 {
            return nominal;
        }
        let u: f64 = rng.gen_range(-1.0..=1.0);
        nominal.mul_f64((1.0 + u * self.jitter_fraction).max(0.0))
    }

    pub fn should_retry(&self, class: ErrorClass) -> bool {
        self.retry_on.contains(&class)
    }
}

/// Counting semaphore bounding concurrent backend requests.
#[derive(Clone)]
pub struct InFlightLimiter {
    inner: Arc<(Mutex<usize>, Condvar)>,
    capacity: usize,
}

impl InFlightLimiter {
    pub fn new(capacity: usize) -> Self {
        InFlightLimiter {
            inner: Arc::new((Mutex::new(0), Condvar::new())),
            capacity: capacity.max(1),
        }
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let (lock, cv) = &*self.inner;
        let mut used = lock.lock().expect("limiter poisoned");
        while *used >= self.capacity {
            used = cv.wait(used).expect("limiter poisoned");
        }
        *used += 1;
        InFlightPermit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.inner.0.lock().expect("limiter poisoned")
    }
}

pub struct InFlightPermit<'a> {
    limiter: &'a InFlightLimiter,
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        let (lock, cv) = &*self.limiter.inner;
        *lock.lock().expect("limiter poisoned") -= 1;
        cv.notify_one();
    }
}

/// Runs `call` under the policy. The permit is held only for the attempt
/// itself, never across a backoff sleep. Returns the value and the number
/// of attempts used.
pub fn retry_call<T, F>(
    policy: &RetryPolicy,
    limiter: &InFlightLimiter,
    mut call: F,
) -> Result<(T, u32), BackendError>
where
    F: FnMut() -> Result<T, BackendError>,
{
    let mut rng = rand::thread_rng();
    let max = policy.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        let result = {
            let _permit = limiter.acquire();
            call()
        };
        match result {
            Ok(v) => return Ok((v, attempt)),
            Err(mut e) => {
                if attempt >= max || !policy.should_retry(e.class) {
                    e.attempts = attempt;
                    return Err(e);
                }
                log::debug!("attempt {attempt} failed ({}); backing off", e.class);
                let d = policy.delay(attempt, &mut rng);
                if !d.is_zero() {
                    std::thread::sleep(d);
                }
            }
        }
    }
}

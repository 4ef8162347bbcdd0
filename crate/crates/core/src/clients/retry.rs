//! Retry accounting and an in-flight request cap.

use std::sync::{Condvar, Mutex};

use super::{ClientError, ClientResult};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attempted<T> {
    pub value: T,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{error} (after {attempts} attempts)")]
pub struct RetryFailure {
    pub error: ClientError,
    pub attempts: u32,
}

/// Calls `f` until it succeeds, returns a non-retryable error, or has been
/// tried `max_retries + 1` times. No sleeping: backoff belongs to the
/// transport, and mocks must stay fast and deterministic.
pub fn with_retries<T>(
    max_retries: u32,
    mut f: impl FnMut(u32) -> ClientResult<T>,
) -> Result<Attempted<T>, RetryFailure> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match f(attempt) {
            Ok(value) => {
                return Ok(Attempted {
                    value,
                    attempts: attempt,
                })
            }
            Err(e) if e.is_retryable() && attempt <= max_retries => continue,
            Err(error) => {
                return Err(RetryFailure {
                    error,
                    attempts: attempt,
                })
            }
        }
    }
}

/// Counting semaphore limiting concurrent requests.
#[derive(Debug)]
pub struct InflightLimiter {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a InflightLimiter,
}

impl InflightLimiter {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    /// Blocks until a slot is free.
    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.current.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.current.lock().unwrap()
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.current.lock().unwrap();
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

//! Interfaces to the four external services the pipeline consumes, with
//! deterministic offline mocks and JSON-over-HTTP implementations.

pub mod http;
pub mod mock;
pub mod retry;

use serde::{Deserialize, Serialize};

use crate::raster::RgbImage;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("server returned status {0}")]
    Status(u16),
    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl ClientError {
    /// Timeouts, transport failures, malformed bodies, throttling and 5xx
    /// responses are retried; everything else is final.
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Timeout(_) | ClientError::Transport(_) | ClientError::MalformedResponse(_) => true,
            ClientError::Status(s) => *s == 429 || *s >= 500,
            ClientError::MissingCredential(_) | ClientError::InvalidRequest(_) => false,
        }
    }
}

pub type ClientResult<T> = Result<T, ClientError>;

/// Produces background descriptions.
pub trait TextModel: Send + Sync {
    fn generate(&self, prompt: &str) -> ClientResult<String>;
}

/// Produces a two-panel image from a diptych prompt.
pub trait ImageModel: Send + Sync {
    fn generate_diptych(&self, prompt: &str, rng_seed: u64) -> ClientResult<RgbImage>;
}

/// Compares a winner/loser pair and answers in the labeled-line format.
pub trait Verifier: Send + Sync {
    fn verify(&self, image_w: &RgbImage, image_l: &RgbImage, prompt: &str) -> ClientResult<String>;
}

pub trait Ocr: Send + Sync {
    fn read(&self, image: &RgbImage) -> ClientResult<String>;
}

/// Connection settings for one service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub max_inflight: usize,
    pub mock: bool,
    pub mock_seed: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            api_key_env: String::new(),
            timeout_s: 60.0,
            max_retries: 3,
            max_inflight: 4,
            mock: true,
            mock_seed: 0,
        }
    }
}

impl ClientConfig {
    pub fn with_env(api_key_env: &str) -> Self {
        Self {
            api_key_env: api_key_env.to_string(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(format!("timeout_s must be positive, got {}", self.timeout_s));
        }
        if self.max_inflight == 0 {
            return Err("max_inflight must be at least 1".into());
        }
        if !self.mock && self.endpoint.is_empty() {
            return Err("endpoint is required when mock = false".into());
        }
        Ok(())
    }
}

pub const TEXT_API_KEY_ENV: &str = "DI3PO_TEXT_API_KEY";
pub const IMAGE_API_KEY_ENV: &str = "DI3PO_IMAGE_API_KEY";
pub const VERIFIER_API_KEY_ENV: &str = "DI3PO_VERIFIER_API_KEY";
pub const OCR_API_KEY_ENV: &str = "DI3PO_OCR_API_KEY";

impl<T: TextModel + ?Sized> TextModel for Box<T> {
    fn generate(&self, prompt: &str) -> ClientResult<String> {
        (**self).generate(prompt)
    }
}

impl<T: ImageModel + ?Sized> ImageModel for Box<T> {
    fn generate_diptych(&self, prompt: &str, rng_seed: u64) -> ClientResult<RgbImage> {
        (**self).generate_diptych(prompt, rng_seed)
    }
}

impl<T: Verifier + ?Sized> Verifier for Box<T> {
    fn verify(&self, image_w: &RgbImage, image_l: &RgbImage, prompt: &str) -> ClientResult<String> {
        (**self).verify(image_w, image_l, prompt)
    }
}

impl<T: Ocr + ?Sized> Ocr for Box<T> {
    fn read(&self, image: &RgbImage) -> ClientResult<String> {
        (**self).read(image)
    }
}

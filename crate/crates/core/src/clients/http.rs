//! JSON-over-HTTP clients.
//!
//! Every call is a `POST` to the configured endpoint with a JSON body and
//! an `Authorization: Bearer <key>` header, the key read from the
//! environment variable named in [`ClientConfig::api_key_env`]. Images
//! travel as base64-encoded PNG.
//!
//! | service  | request body                                              | response body              |
//! |----------|-----------------------------------------------------------|----------------------------|
//! | text     | `{"prompt"}`                                              | `{"text"}`                 |
//! | image    | `{"prompt", "seed"}`                                      | `{"image_png_base64"}`     |
//! | verifier | `{"prompt", "image_w_png_base64", "image_l_png_base64"}`  | `{"text"}`                 |
//! | ocr      | `{"image_png_base64"}`                                    | `{"text"}`                 |

use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::retry::{with_retries, InflightLimiter};
use super::{ClientConfig, ClientError, ClientResult, ImageModel, Ocr, TextModel, Verifier};
use crate::raster::RgbImage;

#[derive(Debug, Serialize, Deserialize)]
pub struct TextRequest {
    pub prompt: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImageRequest {
    pub prompt: String,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerifyRequest {
    pub prompt: String,
    pub image_w_png_base64: String,
    pub image_l_png_base64: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OcrRequest {
    pub image_png_base64: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TextResponse {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImageResponse {
    pub image_png_base64: String,
}

/// Shared transport: agent, credentials, retries and in-flight cap.
#[derive(Debug)]
pub struct HttpClient {
    config: ClientConfig,
    agent: ureq::Agent,
    limiter: InflightLimiter,
}

fn map_error(e: ureq::Error) -> ClientError {
    match e {
        ureq::Error::StatusCode(s) => ClientError::Status(s),
        ureq::Error::Timeout(t) => ClientError::Timeout(t.to_string()),
        ureq::Error::Json(e) => ClientError::MalformedResponse(e.to_string()),
        ureq::Error::BadUri(u) => ClientError::InvalidRequest(format!("bad uri {u}")),
        other => ClientError::Transport(other.to_string()),
    }
}

pub fn encode_png(img: &RgbImage) -> ClientResult<String> {
    img.to_png_bytes()
        .map(|b| STANDARD.encode(b))
        .map_err(|e| ClientError::InvalidRequest(e.to_string()))
}

pub fn decode_png(b64: &str) -> ClientResult<RgbImage> {
    let bytes = STANDARD
        .decode(b64.trim())
        .map_err(|e| ClientError::MalformedResponse(format!("base64: {e}")))?;
    RgbImage::from_png_bytes(&bytes).map_err(|e| ClientError::MalformedResponse(e.to_string()))
}

impl HttpClient {
    pub fn new(config: ClientConfig) -> Result<Self, ClientError> {
        config.validate().map_err(ClientError::InvalidRequest)?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .http_status_as_error(true)
            .build()
            .into();
        let limiter = InflightLimiter::new(config.max_inflight);
        Ok(Self {
            config,
            agent,
            limiter,
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    fn api_key(&self) -> ClientResult<String> {
        std::env::var(&self.config.api_key_env)
            .map_err(|_| ClientError::MissingCredential(self.config.api_key_env.clone()))
    }

    /// Posts `body` and decodes the JSON response, with retries.
    pub fn post_json<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> ClientResult<R> {
        let key = self.api_key()?;
        with_retries(self.config.max_retries, |_| {
            let _permit = self.limiter.acquire();
            let mut resp = self
                .agent
                .post(&self.config.endpoint)
                .header("Authorization", &format!("Bearer {key}"))
                .send_json(body)
                .map_err(map_error)?;
            resp.body_mut().read_json::<R>().map_err(map_error)
        })
        .map(|a| a.value)
        .map_err(|f| f.error)
    }
}

#[derive(Debug)]
pub struct HttpTextModel(pub HttpClient);

#[derive(Debug)]
pub struct HttpImageModel(pub HttpClient);

#[derive(Debug)]
pub struct HttpVerifier(pub HttpClient);

#[derive(Debug)]
pub struct HttpOcr(pub HttpClient);

impl TextModel for HttpTextModel {
    fn generate(&self, prompt: &str) -> ClientResult<String> {
        let r: TextResponse = self.0.post_json(&TextRequest {
            prompt: prompt.to_string(),
        })?;
        Ok(r.text)
    }
}

impl ImageModel for HttpImageModel {
    fn generate_diptych(&self, prompt: &str, rng_seed: u64) -> ClientResult<RgbImage> {
        let r: ImageResponse = self.0.post_json(&ImageRequest {
            prompt: prompt.to_string(),
            seed: rng_seed,
        })?;
        decode_png(&r.image_png_base64)
    }
}

impl Verifier for HttpVerifier {
    fn verify(&self, image_w: &RgbImage, image_l: &RgbImage, prompt: &str) -> ClientResult<String> {
        let r: TextResponse = self.0.post_json(&VerifyRequest {
            prompt: prompt.to_string(),
            image_w_png_base64: encode_png(image_w)?,
            image_l_png_base64: encode_png(image_l)?,
        })?;
        Ok(r.text)
    }
}

impl Ocr for HttpOcr {
    fn read(&self, image: &RgbImage) -> ClientResult<String> {
        let r: TextResponse = self.0.post_json(&OcrRequest {
            image_png_base64: encode_png(image)?,
        })?;
        Ok(r.text)
    }
}

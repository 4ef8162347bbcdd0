pub mod denoiser;
pub mod diffusion;
pub mod dpo;
pub mod fsutil;
pub mod seed;
pub mod font;
pub mod raster;
pub mod pairgen;
pub mod clients;
pub mod clock;
pub mod filter;
pub mod metrics;
pub mod experiments;
pub mod pipeline;

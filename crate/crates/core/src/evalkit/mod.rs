//! Quantitative evaluation: Sim(3)-aligned trajectory error, PSNR and SSIM
//! image quality, and report emission for tables and plots.

mod ate;
mod psnr;
mod report;
mod ssim;

pub use ate::{ate_rmse, ASSOC_TOL};
pub use psnr::psnr;
pub use report::{config_hash, EvalReport, SequenceMetrics};
pub use ssim::{ssim, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};

//! Transient-robust scene reconstruction on a differentiable 2.5D Gaussian
//! splatting backbone.
//!
//! The pipeline runs in two reconstruction passes. A conservative first pass
//! trains under instance-level residual screening so view-inconsistent
//! content surfaces as localized failures instead of being absorbed into
//! geometry. Those failures are consolidated into object-level pseudo-masks
//! from feature similarity and photometric residuals, and a second pass
//! reconstructs under the masks while a small per-pixel network refines them
//! online, shifting from prior supervision to self-consistency as geometry
//! stabilizes.
//!
//! Module map:
//! - [`raster`]: image/mask/feature/depth containers, metrics and file IO
//! - [`splat`]: the differentiable renderer, optimizer and densification
//! - [`scenegen`]: deterministic synthetic datasets with exact ground truth
//! - [`providers`]: pluggable feature/instance/depth sources
//! - [`stage1`]: failure-exposure training with adaptive screening
//! - [`priorbuild`]: pseudo-mask construction from first-pass failures
//! - [`stage2`]: prior-guided reconstruction with online mask refinement
//! - [`evalkit`]: mask metrics, stratified reports and the ablation grid
//! - [`config`], [`pipeline`], [`plot`]: orchestration and reporting

pub mod config;
pub mod evalkit;
pub mod pipeline;
pub mod plot;
pub mod priorbuild;
pub mod providers;
pub mod raster;
pub mod recon;
pub mod scenegen;
pub mod splat;
pub mod stage1;
pub mod stage2;

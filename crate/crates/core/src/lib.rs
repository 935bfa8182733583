//! Joint analysis of Cine and Delayed-Enhancement cardiac MR volumes.
//!
//! The processing chain: cine/DE synchronization and scan alignment
//! ([`sync`]), refined rigid registration ([`registration`]), endo/epi
//! contour extraction ([`segmentation`]), myocardial sector labeling
//! ([`sectors`]), infarct extent scoring ([`mie`]), per-pixel contraction
//! modeling and the amplitude-to-time ratio ([`pamm`]), agreement and ANOVA
//! statistics ([`stats`]). [`phantom`] generates synthetic studies with known
//! ground truth and [`pipeline`] runs the stages over on-disk artifacts.

pub mod geometry;
pub mod mie;
pub mod optimize;
pub mod pamm;
pub mod phantom;
pub mod pipeline;
pub mod registration;
pub mod sectors;
pub mod segmentation;
pub mod stats;
pub mod sync;
pub mod volume;

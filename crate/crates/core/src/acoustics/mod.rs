//! Ground-truth acoustic propagation: sound-speed profiles, ray tracing and
//! transmission-loss fields, plus an analytic reference for the ideal waveguide.

pub mod field;
pub mod images;
mod kernel;
pub mod rays;
pub mod ssp;

pub use field::{compute_tl_field, OracleConfig, Summation, TLField};
pub use images::{comparison_mask, image_source_reference, image_source_tl, ApertureWeighting, ImageConfig};
pub use rays::{trace_rays, Heading, RayEvent, RayPath, RayPoint, SourceSpec, TraceConfig};
pub use ssp::{discretize_profile, LayeredMedium, ProfileKind, SoundSpeedProfile};

//! Benchmark toolkit for biplanar X-ray to 3D bone reconstruction.
//!
//! The crate curates CT segmentation datasets into standardized
//! volume/mask pairs, renders biplanar radiographs from CT, scores predicted
//! masks with overlap and surface-distance metrics, extracts clinical
//! morphometry from femur, pelvis and vertebra masks, and aggregates runs into
//! reports, domain-shift deltas and bootstrap ranking stability.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod edt;
pub mod metrics;
pub mod volume;
pub mod drr;
pub mod geometry;
pub mod morph;
pub mod phantom;
pub mod ingest;
pub mod harness;

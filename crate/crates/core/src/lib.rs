//! strata: a non-destructive layered image engine.
//!
//! Every editing operation produces a new layer on top of a [`LayerStack`];
//! source layers are never touched. Neural tools are described as typed
//! task contracts ([`backend::TaskKind`]) that can be satisfied in-process
//! by the deterministic [`backend::StubBackend`] or delegated to an external
//! worker over a small framed binary protocol ([`backend::wire`]).
//!
//! Module map:
//!
//! - [`raster`]: pixel buffers, layers, stacks, compositing, tensor bridge
//! - [`ops`]: classical operations (k-means, blur, color adjustments, ...)
//! - [`maps`]: trimaps, color hints, label maps, disparity and relighting
//! - [`backend`]: task registry, device policy, stub backend, wire protocol
//! - [`pipeline`]: declarative multi-step workflows and built-in recipes
//! - [`project`]: on-disk layered project format and PNG helpers

pub mod backend;
pub mod maps;
pub mod ops;
pub mod pipeline;
pub mod project;
pub mod raster;

pub use crate::raster::{composite, ImageBuffer, ImageError, Layer, LayerStack, Tensor};

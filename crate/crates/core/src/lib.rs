//! Conformal curvature engine: jets, a metric DSL, the curvature pipeline,
//! Weyl-kernel frames and conformally-Einstein detection.

pub mod expr;
pub mod jet;
pub mod metric;
pub mod linalg;
pub mod curvature;
pub mod sample;
pub mod frame;
pub mod corpus;
pub mod detect;
pub mod selftest;

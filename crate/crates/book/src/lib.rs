//! Compiles the guide's code blocks as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/expressions.md")]
pub mod expressions {}
#[doc = include_str!("../../../book/src/trees.md")]
pub mod trees {}
#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}
#[doc = include_str!("../../../book/src/moduli.md")]
pub mod moduli {}
#[doc = include_str!("../../../book/src/linearized.md")]
pub mod linearized {}
#[doc = include_str!("../../../book/src/disk.md")]
pub mod disk {}
#[doc = include_str!("../../../book/src/configuration.md")]
pub mod configuration {}
#[doc = include_str!("../../../book/src/file-formats.md")]
pub mod file_formats {}
#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}

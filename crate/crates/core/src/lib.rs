//! Closed-loop EEG rhythm biofeedback.

pub mod codec;
pub mod commands;
pub mod config;
pub mod dqn;
pub mod env;
pub mod experiment;
pub mod labels;
pub mod lod;
pub mod nn;
pub mod session;
pub mod signal;
pub mod store;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/codec.md")]
    mod codec {}
    #[doc = include_str!("../../../book/src/sessions.md")]
    mod sessions {}
    #[doc = include_str!("../../../book/src/lod.md")]
    mod lod {}
    #[doc = include_str!("../../../book/src/classifier.md")]
    mod classifier {}
    #[doc = include_str!("../../../book/src/subject.md")]
    mod subject {}
    #[doc = include_str!("../../../book/src/guidance.md")]
    mod guidance {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}

//! Reflective cognitive-cycle engine for chat-completion language models.

pub mod backends;
pub mod cognition;
pub mod model;
pub mod persona;
pub mod prompt;
pub mod tagparse;
pub mod replay;
pub mod session;
pub mod store;

// The guide's Rust snippets run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/strategy-tables.md")]
    mod strategy_tables {}
    #[doc = include_str!("../../../book/src/cognitive-cycle.md")]
    mod cognitive_cycle {}
    #[doc = include_str!("../../../book/src/tag-format.md")]
    mod tag_format {}
    #[doc = include_str!("../../../book/src/personas.md")]
    mod personas {}
    #[doc = include_str!("../../../book/src/backends.md")]
    mod backends {}
    #[doc = include_str!("../../../book/src/session-log.md")]
    mod session_log {}
    #[doc = include_str!("../../../book/src/service-api.md")]
    mod service_api {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

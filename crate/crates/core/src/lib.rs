pub mod experiments;
pub mod harmony;
pub mod index;
pub mod ingest;
pub mod labeler;
pub mod metrics;
pub mod planner;
pub mod prompt;
pub mod retriever;
pub mod rng;
pub mod song;
pub mod synth;

#[cfg(test)]
mod testutil;

/// Book chapters, compiled so their listings run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/songs.md")]
    mod songs {}
    #[doc = include_str!("../../../book/src/harmony.md")]
    mod harmony {}
    #[doc = include_str!("../../../book/src/style-labels.md")]
    mod style_labels {}
    #[doc = include_str!("../../../book/src/index.md")]
    mod index {}
    #[doc = include_str!("../../../book/src/keywords.md")]
    mod keywords {}
    #[doc = include_str!("../../../book/src/planner.md")]
    mod planner {}
    #[doc = include_str!("../../../book/src/retriever.md")]
    mod retriever {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

pub mod config;
pub mod folds;
pub mod metrics;
pub mod patchset;
pub mod pipeline;
pub mod raster;
pub mod runlog;
pub mod sr;
pub mod stats;
pub mod synth;
pub mod transform;

// The guide's code blocks run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/getting-started.md")]
    mod getting_started {}
    #[doc = include_str!("../../../book/src/rasters.md")]
    mod rasters {}
    #[doc = include_str!("../../../book/src/transform.md")]
    mod transform {}
    #[doc = include_str!("../../../book/src/patches.md")]
    mod patches {}
    #[doc = include_str!("../../../book/src/folds.md")]
    mod folds {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}

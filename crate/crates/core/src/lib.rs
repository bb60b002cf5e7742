pub mod baselines;
pub mod boosting;
pub mod data;
pub mod dgp;
pub mod error;
pub mod format;
pub mod learners;
pub mod linalg;
pub mod postprocess;
pub mod rng;
pub mod selection;
pub mod sieve;

pub use baselines::{npiv_fit, npiv_predict, NPIVModel, SieveSpec};
pub use boosting::{fit_crossfit, fit_naive, BoostConfig, BoostIVModel};
pub use data::{partition, Dataset, FoldAssignment};
pub use postprocess::{fit_post, predict_post, PostBoostModel};
pub use error::{Error, Result};
pub use rng::RngSeed;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/boosting.md")]
    mod boosting {}
    #[doc = include_str!("../../../book/src/instruments.md")]
    mod instruments {}
    #[doc = include_str!("../../../book/src/postprocess.md")]
    mod postprocess {}
    #[doc = include_str!("../../../book/src/tuning.md")]
    mod tuning {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/simulations.md")]
    mod simulations {}
    #[doc = include_str!("../../../book/src/format.md")]
    mod format {}
}

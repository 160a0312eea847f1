pub mod error;
pub mod gibbs;
pub mod io;
pub mod linalg;
pub mod model;
pub mod posterior;
pub mod rng;
pub mod simulate;
pub mod spectrum;
pub mod subspace;
pub mod timeseries;
pub mod vb;

pub use error::{Error, Result};
pub use gibbs::{run_gibbs, GibbsChain, GibbsConfig};
pub use linalg::SymPosDef;
pub use model::{default_priors, ModelState, PriorHyper, PriorSpec, StackedData};
pub use posterior::{ModalPosterior, ModalSample, StabilisationData};
pub use rng::Rng;
pub use simulate::BenchmarkConfig;
pub use spectrum::{welch_psd, WelchParams, WelchSpectrum};
pub use subspace::{ModalSet, Mode};
pub use timeseries::TimeSeries;
pub use vb::{run_vb, VbConfig, VbPosterior};

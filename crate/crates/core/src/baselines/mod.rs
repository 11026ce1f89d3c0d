//! Parametric competitors: GARCH(1,1) and Markov-switching GARCH, each
//! mapped to an implied time-varying spectrum.

mod garch;
mod msgarch;
pub mod simplex;

pub use garch::{fit_garch, fit_garch_with, garch_implied_tvspectrum, garch_loglik, GarchFit};
pub use msgarch::{
    fit_msgarch, hamilton_filter, hamilton_filter_with, kim_smoother, msgarch_implied_tvspectrum,
    MsGarchFit, MsGarchOptions, MsGarchParams, RegimeProbs, VarianceCarry,
};

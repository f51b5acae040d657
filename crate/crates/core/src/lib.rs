pub mod config;
pub mod covariate;
pub mod data;
pub mod error;
pub mod io;
pub mod mcmc;
pub mod oracle;
pub mod postprocess;
pub mod response;
pub mod run;
pub mod spatial;

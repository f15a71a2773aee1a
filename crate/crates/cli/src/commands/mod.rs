pub mod convergence;
pub mod pod;
pub mod run;
pub mod stats;

pub mod cli;
pub mod counterexample;
pub mod douglas;
pub mod error;
pub mod heat;
pub mod instances;
pub mod io;
pub mod linop;
pub mod suite;

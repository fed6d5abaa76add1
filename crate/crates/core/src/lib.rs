pub mod lattice;
pub mod rates;
pub mod kmc;
pub mod master;
pub mod rd;
pub mod analysis;
pub mod entropy;
pub mod experiment;

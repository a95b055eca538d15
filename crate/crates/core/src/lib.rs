pub mod coverage;
pub mod digest;
pub mod eigen;
pub mod elicit;
pub mod embed;
pub mod evalscore;
pub mod fixtures;
pub mod label_store;
pub mod pipeline;
pub mod simdist;
pub mod stats;

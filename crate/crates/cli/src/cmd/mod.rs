pub mod codec;
pub mod optimize;
pub mod rd;
pub mod stats;

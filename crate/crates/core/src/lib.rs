pub mod abstraction;
pub mod dynamics;
pub mod exact;
pub mod fhocp;
pub mod geometry;
pub mod linalg;
pub mod mitl;
pub mod navigator;
pub mod pipeline;
pub mod scenario;
pub mod synthesis;
pub mod tube;
pub mod workspace;

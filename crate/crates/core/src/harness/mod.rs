pub mod dataset;
pub mod evaluate;
pub mod pipeline;
pub mod template;

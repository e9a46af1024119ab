pub mod data;
pub mod eval;
pub mod encoder;
pub mod heads;
pub mod numeric;
pub mod tokenizer;
pub mod tracker;
pub mod training;

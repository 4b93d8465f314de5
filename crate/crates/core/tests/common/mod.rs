#![allow(dead_code)]
pub mod retrieval_oracle;

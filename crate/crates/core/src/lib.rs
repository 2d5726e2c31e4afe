pub mod analyzer;
pub mod challenge;
pub mod config;
pub mod dedup;
pub mod evaluate;
pub mod extract;
pub mod fsutil;
pub mod gateway;
pub mod instruct;
pub mod metrics;
pub mod prompts;
pub mod pysyntax;
pub mod rag;
pub mod retrieval;
pub mod sandbox;
pub mod stages;
pub mod verify;

pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod extraction;
pub mod llm;
pub mod prompts;
pub mod representation;
pub mod rerank;
pub mod retrieval;
pub mod text;

//! Translation and embedding evaluation.

pub mod bleu;
pub mod bli;
pub mod cosine;
pub mod export;

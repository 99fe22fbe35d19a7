//! Triple relevance scoring for knowledge-graph relations.
//!
//! A person's relevance to a relation value (a profession, a nationality) is
//! predicted from the activities that person shares with the value's other
//! holders. Activities are ranked by how popular and how focused they are
//! among those holders; the top ones become features of a learned 0-7 scorer.

pub mod error;
pub mod evaluation;
pub mod features;
pub mod kg_store;
pub mod learners;
pub mod pertinence;
pub mod pipeline;
pub mod text_features;

pub use error::{Error, Result};

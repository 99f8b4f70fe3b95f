pub mod corpus;
pub mod eval;
pub mod protocol;
pub mod attention;
pub mod cloze;
pub mod records;

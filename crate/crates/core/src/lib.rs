//! Dubrovin–Zhang tau functions of Drinfeld–Sokolov hierarchies via exact loop-algebra computations.

pub mod exactnum;
pub mod gradedseries;
pub mod kacmoody;
pub mod stringeq;
pub mod botau;
pub mod tables;
pub mod correlators;

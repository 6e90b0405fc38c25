pub mod adversary;
pub mod dynamics;
pub mod graph;
pub mod harness;
pub mod paillier;
pub mod protocol;
pub mod real;

//! Federated self-supervised learning simulator for vehicular networks.

pub mod cli;
pub mod data;
pub mod eval;
pub mod federation;
pub mod imaging;
pub mod mobility;
pub mod numerics;
pub mod ssl;

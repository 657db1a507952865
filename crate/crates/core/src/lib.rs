//! Gas-cost modeling and simulation for three ways of executing Ether
//! transfers on an Ethereum-like chain:
//!
//! * **Dedicated** — every transfer is its own transaction at the base fee.
//! * **Batched** — transfers are aggregated off-chain and unpacked by an
//!   on-chain dispatcher, amortizing the base fee.
//! * **Off-chain** — recipient balances live in an authenticated off-chain
//!   state; credits are posted as delta leaves to a hash log whose digest is
//!   mirrored on-chain, and spends settle with Merkle proofs.
//!
//! The crate has two independent routes to every cost figure: closed-form
//! calculators over exact rationals ([`gas_model`]) and a deterministic
//! block-by-block simulator with an itemized gas meter ([`chain_sim`]).
//! Workload tooling ([`workload`]) classifies institutional-sender traces
//! and generates synthetic ones, and [`policy`] evaluates dynamic
//! upload/delay policies on top of the simulator.

pub mod auth_state;
pub mod chain_sim;
pub mod gas_model;
pub mod meter;
pub mod policy;
pub mod rational;
pub mod workload;

pub use gas_model::{GasSchedule, Mode, WorkloadShape};
pub use rational::Rat;

//! Mask-based multi-agent imitation learning.
//!
//! A transformer reads the recent `L` global states of all `N` units as
//! `L·N` tokens. Attention masks switch the same network between
//! centralized and decentralized execution, and a pairwise action head
//! emits `K_intr + N` logits per agent so one parameter set covers any
//! unit count. The [`arena`] module provides a small deterministic grid
//! battle environment and a scripted expert to learn from.

pub mod numeric;
pub mod action;
pub mod arena;
pub mod masks;
pub mod model;
pub mod data;
pub mod training;
pub mod eval;
pub mod experiments;

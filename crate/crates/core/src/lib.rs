//! Deterministic, time-stepped simulation of a small team of agents that
//! split work, talk over chat, email and meetings, and get faster as their
//! understanding of a task improves.

pub mod adapter;
pub mod alignment;
pub mod comm;
pub mod commands;
pub mod config;
pub mod metrics;
pub mod model;
pub mod planner;
pub mod policy;
pub mod prompts;
pub mod registry;
pub mod scheduler;
pub mod task_graph;
pub mod trace;

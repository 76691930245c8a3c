// SPDX-License-Identifier: Apache-2.0

pub mod alloc;
pub mod analysis;
pub mod blkparse;
pub mod block;
pub mod cache;
pub mod config;
pub mod device;
pub mod error;
pub mod replay;
pub mod run;
pub mod stack;
pub mod study;
pub mod trace;
pub mod workload;

pub use error::{Error, Result};

//! Distributed arrays over a process grid, and a STREAM memory bandwidth
//! benchmark built on them.
//!
//! A [`dmap::Map`] says which process owns which part of a global array;
//! [`darray::DArray`] holds one process's part and hands out its local view.
//! The [`runtime`] launches processes and lets them meet through files in a
//! shared directory. [`stream`] runs the kernels on local views, [`bench`]
//! ties one process's run together and [`report`] turns rank results into
//! aggregate reports and scaling tables.

pub mod bench;
pub mod cli;
pub mod config;
pub mod darray;
pub mod dmap;
pub mod fsum;
pub mod report;
pub mod runtime;
pub mod selfcheck;
pub mod stream;
pub mod team;

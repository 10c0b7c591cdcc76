//! Execution-mode switch for the embarrassingly parallel inner loops.
//!
//! Monte-Carlo evaluation maps a function over independent rows (one row =
//! one fading frame). Each row writes only its own output slot and all
//! reductions afterwards are sequential and compensated, so the parallel
//! and sequential modes produce bitwise-identical results — the mode only
//! changes wall-clock time.

use serde::{Deserialize, Serialize};
use std::str::FromStr;

/// How to run row-mapped workloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    /// Plain sequential loop.
    Sequential,
    /// Rayon work-stealing loop (falls back to sequential when the crate is
    /// built without the `parallel` feature).
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

impl FromStr for ExecMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(ExecMode::Sequential),
            "parallel" => Ok(ExecMode::Parallel),
            other => Err(format!("unknown exec mode {other:?} (want sequential|parallel)")),
        }
    }
}

/// Apply `f` to every (input row, output row) pair. Rows are independent;
/// the output layout does not depend on the mode.
pub fn map_rows<F>(
    mode: ExecMode,
    input: &[f64],
    in_stride: usize,
    out: &mut [f64],
    out_stride: usize,
    f: F,
) where
    F: Fn(&[f64], &mut [f64]) + Sync + Send,
{
    assert!(in_stride > 0 && out_stride > 0);
    assert_eq!(input.len() % in_stride, 0, "ragged input block");
    assert_eq!(out.len() % out_stride, 0, "ragged output block");
    assert_eq!(
        input.len() / in_stride,
        out.len() / out_stride,
        "row count mismatch"
    );
    match mode {
        ExecMode::Sequential => {
            input
                .chunks(in_stride)
                .zip(out.chunks_mut(out_stride))
                .for_each(|(i, o)| f(i, o));
        }
        ExecMode::Parallel => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                input
                    .par_chunks(in_stride)
                    .zip(out.par_chunks_mut(out_stride))
                    .for_each(|(i, o)| f(i, o));
            }
            #[cfg(not(feature = "parallel"))]
            {
                input
                    .chunks(in_stride)
                    .zip(out.chunks_mut(out_stride))
                    .for_each(|(i, o)| f(i, o));
            }
        }
    }
}

use std::io::Write;

use crate::error::{Error, Result};
use crate::integrator::TimeGrid;

/// `N` simulated paths on a common grid, with one log-weight per path.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub(crate) grid: TimeGrid,
    pub(crate) dim: usize,
    pub(crate) n_paths: usize,
    /// Path-major: `states[(n·(L+1) + ℓ)·d + i]`.
    pub(crate) states: Vec<f64>,
    pub(crate) log_weights: Vec<f64>,
    pub(crate) seed: u64,
}

impl TrajectoryBatch {
    pub fn from_parts(grid: TimeGrid, dim: usize, states: Vec<f64>, log_weights: Vec<f64>, seed: u64) -> Result<Self> {
        let n_paths = log_weights.len();
        let expected = n_paths * (grid.steps() + 1) * dim;
        if states.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "trajectory states",
                expected,
                actual: states.len(),
            });
        }
        Ok(Self {
            grid,
            dim,
            n_paths,
            states,
            log_weights,
            seed,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_empty(&self) -> bool {
        self.n_paths == 0
    }

    fn path_stride(&self) -> usize {
        (self.grid.steps() + 1) * self.dim
    }

    /// State of path `n` at node `step`.
    pub fn state(&self, n: usize, step: usize) -> &[f64] {
        let start = n * self.path_stride() + step * self.dim;
        &self.states[start..start + self.dim]
    }

    pub(crate) fn state_mut(&mut self, n: usize, step: usize) -> &mut [f64] {
        let start = n * self.path_stride() + step * self.dim;
        &mut self.states[start..start + self.dim]
    }

    /// Whole path `n` as a flat `(L+1) × d` slice.
    pub fn path(&self, n: usize) -> &[f64] {
        let stride = self.path_stride();
        &self.states[n * stride..(n + 1) * stride]
    }

    pub fn final_state(&self, n: usize) -> &[f64] {
        self.state(n, self.grid.steps())
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Writes `path,step,t,x_0..x_{d-1},log_weight`, one row per node.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        self.write_csv_offset(&mut out, 0, true)
    }

    /// Like [`write_csv`](Self::write_csv) with path indices shifted by
    /// `path_offset`, optionally without the header; used to concatenate
    /// several batches into one file.
    pub fn write_csv_offset<W: Write>(&self, out: &mut W, path_offset: usize, header: bool) -> Result<()> {
        if header {
            write!(out, "path,step,t")?;
            for i in 0..self.dim {
                write!(out, ",x_{i}")?;
            }
            writeln!(out, ",log_weight")?;
        }
        for n in 0..self.n_paths {
            let lw = self.log_weights[n];
            for (step, t) in self.grid.nodes().enumerate() {
                write!(out, "{},{},{}", n + path_offset, step, t)?;
                for v in self.state(n, step) {
                    write!(out, ",{v}")?;
                }
                writeln!(out, ",{lw}")?;
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}

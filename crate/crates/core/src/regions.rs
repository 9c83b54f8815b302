//! Feasible-region classification: where the universal formula certifies
//! decrease of `W_c` (`X_phi`) and where some box vertex does (`X_L`).

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clbf::{universal_terms_from, ClbfAssembly, InputBox};
use crate::error::Result;
use crate::sde::{AffineSdeSystem, ScalarField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFlags {
    pub in_d: bool,
    pub in_d_relaxed: bool,
    /// Per obstacle: inside the barrier's active set.
    pub in_x: Vec<bool>,
    pub in_x_phi: bool,
    pub in_x_l: bool,
}

pub fn region_membership(assembly: &ClbfAssembly, sys: &AffineSdeSystem, input_box: &InputBox, x: &DVector<f64>) -> RegionFlags {
    let sample = assembly.sample(x);
    let terms = universal_terms_from(assembly, sys, input_box, x, &sample);
    let vertex = input_box.minimizing_vertex(&terms.split.gain);
    let in_d = assembly.in_unsafe(x);
    RegionFlags {
        in_d,
        in_d_relaxed: sample.value > 0.0,
        in_x: assembly.barriers().iter().map(|b| b.spec().in_active(x)).collect(),
        // decrease is only demanded outside W_c > 0, which contains every D_i
        in_x_phi: !in_d && sample.value <= 0.0 && terms.certifies(),
        in_x_l: terms.split.at(&vertex) < 0.0,
    }
}

/// Cell-centred `(x, y)` grid; each cell is evaluated at every heading in
/// `thetas`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    pub thetas: Vec<f64>,
}

impl GridSpec {
    /// `n` equally spaced headings over one turn.
    pub fn uniform_thetas(n: usize) -> Vec<f64> {
        (0..n).map(|k| 2.0 * std::f64::consts::PI * k as f64 / n as f64).collect()
    }

    /// 240 x 200 cells over `[-10, 110] x [-10, 90]`, 8 headings.
    pub fn scene() -> Self {
        Self {
            x_range: (-10.0, 110.0),
            y_range: (-10.0, 90.0),
            nx: 240,
            ny: 200,
            thetas: Self::uniform_thetas(8),
        }
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (
            (self.x_range.1 - self.x_range.0) / self.nx as f64,
            (self.y_range.1 - self.y_range.0) / self.ny as f64,
        )
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        let (dx, dy) = self.cell_size();
        (
            self.x_range.0 + (ix as f64 + 0.5) * dx,
            self.y_range.0 + (iy as f64 + 0.5) * dy,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellFlags {
    pub x: f64,
    pub y: f64,
    pub in_d: bool,
    /// Some sampled heading has `W_c > 0`.
    pub in_d_relaxed: bool,
    /// Every sampled heading is in `X_phi`.
    pub in_x_phi: bool,
    /// Every sampled heading is in `X_L`.
    pub in_x_l: bool,
}

/// Row-major raster: `cells[iy * nx + ix]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRaster {
    pub grid: GridSpec,
    pub cells: Vec<CellFlags>,
}

impl RegionRaster {
    pub fn cell(&self, ix: usize, iy: usize) -> &CellFlags {
        &self.cells[iy * self.grid.nx + ix]
    }

    pub fn count(&self, pred: impl Fn(&CellFlags) -> bool) -> usize {
        self.cells.iter().filter(|c| pred(c)).count()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# x,y,in_D,in_D_relaxed,in_X_phi,in_X_L")?;
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                c.x, c.y, c.in_d as u8, c.in_d_relaxed as u8, c.in_x_phi as u8, c.in_x_l as u8
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(file)
    }
}

pub fn region_grid_scan(assembly: &ClbfAssembly, sys: &AffineSdeSystem, input_box: &InputBox, grid: &GridSpec) -> RegionRaster {
    let cells = (0..grid.ny)
        .into_par_iter()
        .flat_map_iter(|iy| {
            (0..grid.nx).map(move |ix| {
                let (x, y) = grid.cell_center(ix, iy);
                let mut cell = CellFlags {
                    x,
                    y,
                    in_d: false,
                    in_d_relaxed: false,
                    in_x_phi: true,
                    in_x_l: true,
                };
                for (k, th) in grid.thetas.iter().enumerate() {
                    let flags = region_membership(assembly, sys, input_box, &DVector::from_vec(vec![x, y, *th]));
                    if k == 0 {
                        cell.in_d = flags.in_d;
                    }
                    cell.in_d_relaxed |= flags.in_d_relaxed;
                    cell.in_x_phi &= flags.in_x_phi;
                    cell.in_x_l &= flags.in_x_l;
                }
                cell
            })
        })
        .collect();
    RegionRaster { grid: grid.clone(), cells }
}

//! Classifies the scene into the universal-formula region `X_phi` and the
//! vertex-feasible region `X_L`, prints a coarse ASCII map and writes the raster.
//!
//! cargo run --release --example feasible_regions -- [out.csv]

use clbf_smpc::barrier::BarrierSpec;
use clbf_smpc::clbf::{ClbfAssembly, InputBox};
use clbf_smpc::clf::ClfParams;
use clbf_smpc::regions::{region_grid_scan, GridSpec};
use clbf_smpc::sde::{unicycle_system, UnicycleParams};

fn main() -> clbf_smpc::Result<()> {
    let barriers = [
        BarrierSpec::with_defaults([30.0, 25.0], 25.0, 36.0),
        BarrierSpec::with_defaults([50.0, 50.0], 25.0, 36.0),
        BarrierSpec::with_defaults([68.0, 30.0], 56.25, 90.25),
        BarrierSpec::with_defaults([80.0, 60.0], 56.25, 90.25),
    ];
    let assembly = ClbfAssembly::new(
        ClfParams::default(),
        &barriers,
        8.5,
        None,
        &[100000.0, 80000.0, 100000.0, 80000.0],
        0.005,
    )?;
    let sys = unicycle_system(UnicycleParams::default());
    let input_box = InputBox::unicycle_default();
    let raster = region_grid_scan(&assembly, &sys, &input_box, &GridSpec::scene());

    println!(
        "cells: {}  in D: {}  outside X_phi: {}  outside X_L: {}",
        raster.cells.len(),
        raster.count(|c| c.in_d),
        raster.count(|c| !c.in_x_phi),
        raster.count(|c| !c.in_x_l),
    );
    // one character per 4 x 4 block: '#' unsafe, 'o' outside X_L, '.' outside X_phi only
    let g = &raster.grid;
    for by in (0..g.ny / 4).rev() {
        let line: String = (0..g.nx / 4)
            .map(|bx| {
                let block = (0..16).map(|k| raster.cell(bx * 4 + k % 4, by * 4 + k / 4));
                let (mut d, mut l, mut p) = (false, false, false);
                for c in block {
                    d |= c.in_d;
                    l |= !c.in_x_l;
                    p |= !c.in_x_phi;
                }
                if d {
                    '#'
                } else if l {
                    'o'
                } else if p {
                    '.'
                } else {
                    ' '
                }
            })
            .collect();
        println!("|{line}|");
    }
    if let Some(path) = std::env::args().nth(1) {
        raster.save_csv(std::path::Path::new(&path))?;
        println!("raster written to {path}");
    }
    Ok(())
}

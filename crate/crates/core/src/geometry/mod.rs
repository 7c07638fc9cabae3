//! Surface grids, the pressure integration operator and grid-to-grid transfer.

mod grid;
mod interp;
mod operator;

pub use grid::{
    build_airfoil_grid, build_wing_grid, naca4, naca4_point, Point, Reference, Section, SurfaceGrid, Topology,
};
pub use interp::{impute_missing, interpolate_to_common_grid, COINCIDENT, NEIGHBOURS};
pub use operator::{apply_forward, build_output_operator, OutputOperator, Qoi, RANK_TOL};

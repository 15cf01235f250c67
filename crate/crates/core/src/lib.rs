pub mod geom;
pub mod model;
pub mod sim;
pub mod mech;
pub mod ekf;
pub mod meas;
pub mod fusion;
pub mod eval;
pub mod cli;

pub mod cli;
pub mod config;
pub mod error;
pub mod flow;
pub mod grid;
pub mod initial;
pub mod kernel;
pub mod maxflow;
pub mod perimeter;
pub mod quadrature;
pub mod scalar;
pub mod step;
pub mod weights;

pub use error::{Error, Result};

pub type Grid = grid::TorusGrid<f64>;
pub type Height = grid::HeightField<f64>;
pub type Slab = grid::SlabSet<f64>;
pub type Perimeter = perimeter::PerimeterFunctional<f64>;
pub type Trace = flow::FlowTrace<f64>;
pub type Step = step::StepResult<f64>;

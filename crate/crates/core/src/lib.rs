pub mod analysis;
pub mod control_problem;
pub mod levy_measure;
pub mod linalg;
pub mod mesh;
pub mod quadrature;
pub mod scheme;

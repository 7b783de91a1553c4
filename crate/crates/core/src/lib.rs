pub mod attitude;
pub mod camera;
pub mod cli;
pub mod error;
pub mod eval;
pub mod keyvalue;
pub mod predictor;
pub mod rng;
pub mod rotations;
pub mod scene;
pub mod solver;
pub mod toy;
pub mod wireframe;

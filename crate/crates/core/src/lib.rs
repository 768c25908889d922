pub mod config;
pub mod geometry;
pub mod mpcc;
pub mod risk;
pub mod sim;
pub mod solver;
pub mod uncertainty;

pub type Point = nalgebra::Vector2<f64>;

pub mod action;
pub mod assignment;
pub mod baselines;
pub mod cli;
pub mod dirichlet;
pub mod error;
pub mod legendre;
mod linalg;
pub mod optim;
pub mod potential;
pub mod quadrature;
pub mod sampling;
pub mod search;
pub mod torus;

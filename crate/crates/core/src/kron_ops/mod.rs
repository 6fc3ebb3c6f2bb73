//! Sparse and Kronecker-structured linear algebra.

pub mod banded;
pub mod kron;
pub mod saddle;
pub mod solve;
pub mod sparse;
pub mod spectral;

pub use banded::{BandedCholesky, BandedLu};
pub use kron::{kron_matvec, KronSum, KronTerm, SpaceTimeVector};
pub use saddle::{solve_saddle, solve_saddle_direct, solve_saddle_schur, BlockSaddleOperator, SaddleSolution};
pub use solve::{
    pcg, solve_spd, IdentityPreconditioner, KronBlockJacobi, KronDiagonalSolver, KronSpdSolver, LinearOperator,
    LinearSolver, Preconditioner, SaddleMethod, SolveMethod, SolveStats, SolverOptions, SolverPreconditioner,
    SpdOperator, DEFAULT_TOL,
};
pub use sparse::CsrMatrix;
pub use spectral::{SpectralBasis, SpectralKronSolver, SpectralTerm};

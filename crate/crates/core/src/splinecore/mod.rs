//! B-spline bases, difference penalties, the orthogonalised P-spline basis and
//! curvature Gram matrices.

mod bspline;
mod family;
mod gram;
mod ortho;
mod penalty;

pub use bspline::{eval_basis, KnotConfig, BOUNDARY_PADDING};
pub use family::{CurvatureTable, SplineFamily};
pub use gram::{curvature_gram, gram_between, CurvatureGram, PiecewiseLinearCurvature};
pub use ortho::{build_ortho_basis, OrthoBasis, DEFAULT_ORTHO_GRID, PINV_THRESHOLD};
pub(crate) use ortho::sorted_eigen;
pub use penalty::{difference_matrix, PenaltyMatrix, DEFAULT_RIDGE};

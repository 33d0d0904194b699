//! Multivariate normal rectangle probabilities and the quantiles the
//! multiple-comparison procedures need.

pub mod normal;
pub mod qmc;
pub mod quantile;

pub use normal::{
    std_normal_cdf, std_normal_log_cdf, std_normal_pdf, std_normal_quantile, two_sided_p_value,
};
pub use qmc::{mvn_rectangle_prob, CorrelationMatrix, ProbEstimate, QmcConfig};
pub use quantile::{
    chi_square_cdf, chi_square_quantile, equicoordinate_quantile, equicoordinate_quantile_detailed,
    studentized_range_cdf, studentized_range_quantile, EquicoordinateQuantile, QUANTILE_PROB_TOL,
};

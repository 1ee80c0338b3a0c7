//! Shared domain types.

mod correlation;
mod link;
mod panel;
mod params;
pub(crate) mod spec;

pub use correlation::{CorrelationKind, WorkingCorrelation};
pub use link::{expit, logit, variance_fn, LinkState};
pub use panel::BinaryPanel;
pub use params::{
    build_g_matrix, matrix_to_theta, n_pairs, pair_index, pairs, theta_to_matrix,
    vec_column_major, ParamLayout, PsiVector, QebdParams,
};
pub use spec::{Covariates, Family, InteractionKernel, KernelFn, ModelSpec};

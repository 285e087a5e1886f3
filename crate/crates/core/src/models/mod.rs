//! Experiment targets: the bimodal mixture, GP regression on a grid and
//! Bayesian logistic regression.

pub mod gp;
pub mod logreg;

use serde::{Deserialize, Serialize};

use crate::distributions::IsotropicPairMixture;
use crate::error::{Error, Result};

pub use gp::{
    gp_analytic_posterior, gp_diagonalized_reference, gp_generate, gp_joint_predictive, rbf_kernel, GpSpec,
    GpTarget,
};
pub use logreg::{load_dataset, DatasetSchema, LabelColumn, LogRegSpec};

/// Equal mixture of N(0, s²I) and N(1, s²I).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BimodalSpec {
    pub d: usize,
    pub component_std: f64,
}

impl BimodalSpec {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("bimodal dimension must be at least 1".into()));
        }
        Ok(Self { d, component_std: 0.25 })
    }

    pub fn target(&self) -> Result<IsotropicPairMixture> {
        IsotropicPairMixture::new(self.d, self.component_std)
    }
}

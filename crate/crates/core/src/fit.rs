//! Estimation results shared by both estimators.

use serde::{Deserialize, Serialize};

use crate::numopt::StopReason;
use crate::variogram::{FgfParams, FldParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// Continuum field at scattered sites, dense likelihood.
    Fgf,
    /// Lattice field, matrix-free REML.
    Fld,
}

/// Four parameters on the natural scale. The continuum model reports
/// `sigma2`, the lattice model `lambda`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamValues {
    pub tau: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<f64>,
    pub nu: f64,
    pub alpha: f64,
}

impl ParamValues {
    /// The scale parameter, whichever model it belongs to.
    pub fn scale(&self) -> f64 {
        self.sigma2.or(self.lambda).unwrap_or(f64::NAN)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.tau, self.scale(), self.nu, self.alpha]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: Model,
    pub estimates: ParamValues,
    /// Delta-method standard errors; `None` when the curvature matrix is not
    /// positive definite.
    pub se: Option<ParamValues>,
    /// Optimum in the unconstrained coordinates.
    pub transformed_optimum: [f64; 4],
    pub converged: bool,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub evaluations: usize,
    /// Number of observations (sites or observed pixels).
    pub n_obs: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub neg_loglik: Option<f64>,
    /// `‖g‖∞` of the score at the returned point.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gradient_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub probes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn fgf_params(&self) -> Option<FgfParams> {
        (self.model == Model::Fgf).then(|| {
            FgfParams::new(
                self.estimates.tau,
                self.estimates.scale(),
                self.estimates.nu,
                self.estimates.alpha,
            )
        })
    }

    pub fn fld_params(&self) -> Option<FldParams> {
        (self.model == Model::Fld).then(|| {
            FldParams::new(
                self.estimates.tau,
                self.estimates.scale(),
                self.estimates.nu,
                self.estimates.alpha,
            )
            .with_kappa(self.kappa.unwrap_or(0.0))
        })
    }

    /// `estimate ± z·se` for each of the four parameters.
    pub fn intervals(&self, z: f64) -> Option<[(f64, f64); 4]> {
        let se = self.se?.as_array();
        let est = self.estimates.as_array();
        Some(std::array::from_fn(|i| {
            (est[i] - z * se[i], est[i] + z * se[i])
        }))
    }

    /// One-line summary, `name = estimate (se)`.
    pub fn summary(&self) -> String {
        let names = match self.model {
            Model::Fgf => ["tau", "sigma2", "nu", "alpha"],
            Model::Fld => ["tau", "lambda", "nu", "alpha"],
        };
        let est = self.estimates.as_array();
        let se = self.se.map(|s| s.as_array());
        let parts: Vec<String> = (0..4)
            .map(|i| match se {
                Some(s) => format!("{} = {:.4} ({:.4})", names[i], est[i], s[i]),
                None => format!("{} = {:.4} (n/a)", names[i], est[i]),
            })
            .collect();
        let status = if self.converged {
            "converged"
        } else {
            "NOT converged"
        };
        format!(
            "{}: {} [{status}, {} iterations]",
            match self.model {
                Model::Fgf => "fgf",
                Model::Fld => "fld",
            },
            parts.join(", "),
            self.iterations
        )
    }
}

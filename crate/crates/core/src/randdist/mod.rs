//! Chi-squared tails, log-gamma, and seeded samplers for the innovation laws.

mod special;
mod stream;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

pub use special::{chisq_isf, chisq_pdf, chisq_sf, log_gamma, normal_two_sided_p};
pub(crate) use special::{chisq_sf_unchecked, ln_gamma_unchecked};
pub use stream::{derive_stream_id, fnv1a, mix64, SeededStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LawKind {
    StandardNormal,
    StudentT5,
    Exp1,
    Gamma22,
}

impl LawKind {
    pub fn label(self) -> &'static str {
        match self {
            LawKind::StandardNormal => "N(0,1)",
            LawKind::StudentT5 => "t(5)",
            LawKind::Exp1 => "Exp(1)",
            LawKind::Gamma22 => "Gamma(2,2)",
        }
    }
}

/// Distribution of the i.i.d. innovations. Centering subtracts the theoretical
/// mean; the variance is left as is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnovationLaw {
    pub kind: LawKind,
    #[serde(default = "default_centered")]
    pub centered: bool,
}

fn default_centered() -> bool {
    true
}

impl InnovationLaw {
    pub const NORMAL: InnovationLaw = InnovationLaw { kind: LawKind::StandardNormal, centered: true };

    pub fn new(kind: LawKind) -> Self {
        Self { kind, centered: true }
    }

    pub fn raw_mean(&self) -> f64 {
        match self.kind {
            LawKind::StandardNormal | LawKind::StudentT5 => 0.0,
            LawKind::Exp1 => 1.0,
            LawKind::Gamma22 => 4.0,
        }
    }

    pub fn mean(&self) -> f64 {
        if self.centered {
            0.0
        } else {
            self.raw_mean()
        }
    }

    pub fn variance(&self) -> f64 {
        match self.kind {
            LawKind::StandardNormal => 1.0,
            LawKind::StudentT5 => 5.0 / 3.0,
            LawKind::Exp1 => 1.0,
            LawKind::Gamma22 => 8.0,
        }
    }

    /// Fills `out` with i.i.d. draws.
    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let shift = if self.centered { self.raw_mean() } else { 0.0 };
        match self.kind {
            LawKind::StandardNormal => {
                for v in out.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
            }
            LawKind::StudentT5 => {
                let chi = ChiSquared::new(5.0).expect("valid degrees of freedom");
                for v in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    let c: f64 = chi.sample(rng);
                    *v = z / (c / 5.0).sqrt();
                }
            }
            LawKind::Exp1 => {
                for v in out.iter_mut() {
                    let e: f64 = Exp1.sample(rng);
                    *v = e - shift;
                }
            }
            LawKind::Gamma22 => {
                let g = Gamma::new(2.0, 2.0).expect("valid gamma parameters");
                for v in out.iter_mut() {
                    *v = g.sample(rng) - shift;
                }
            }
        }
    }
}

/// `count` draws from `law` taken from the start of `stream`.
pub fn sample(law: InnovationLaw, stream: SeededStream, count: usize) -> Vec<f64> {
    let mut out = vec![0.0; count];
    law.fill(&mut stream.rng(), &mut out);
    out
}

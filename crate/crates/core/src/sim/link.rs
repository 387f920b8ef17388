use rand::Rng;
use rand_distr::{Distribution, LogNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::Millis;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkClass {
    /// Same domain: bounded delay.
    Intra,
    /// Across domains or to public nodes: heavy-tailed, unbounded delay.
    Inter,
}

/// Per-class delay distributions.
///
/// Intra-domain delays are uniform in `[intra_min_ms, intra_max_ms]`, so they
/// never exceed the synchrony bound. Inter-domain delays are lognormal with
/// the given median and log-space sigma and have no upper bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkModel {
    pub intra_min_ms: Millis,
    pub intra_max_ms: Millis,
    pub inter_median_ms: f64,
    pub inter_sigma: f64,
    pub intra_drop: f64,
    pub inter_drop: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            intra_min_ms: 10,
            intra_max_ms: 200,
            inter_median_ms: 200.0,
            inter_sigma: 1.0,
            intra_drop: 0.0,
            inter_drop: 0.0,
        }
    }
}

impl LinkModel {
    /// Mean one-way inter-domain delay, `median * exp(sigma^2 / 2)`.
    pub fn inter_mean_ms(&self) -> f64 {
        self.inter_median_ms * (self.inter_sigma * self.inter_sigma / 2.0).exp()
    }

    /// `None` when the message is dropped.
    pub fn sample(&self, class: LinkClass, rng: &mut impl Rng) -> Option<Millis> {
        match class {
            LinkClass::Intra => {
                if self.intra_drop > 0.0 && rng.gen::<f64>() < self.intra_drop {
                    return None;
                }
                let hi = self.intra_max_ms.max(self.intra_min_ms);
                Some(Uniform::new_inclusive(self.intra_min_ms, hi).sample(rng))
            }
            LinkClass::Inter => {
                if self.inter_drop > 0.0 && rng.gen::<f64>() < self.inter_drop {
                    return None;
                }
                let dist = LogNormal::new(self.inter_median_ms.max(1e-9).ln(), self.inter_sigma)
                    .expect("sigma is finite and non-negative");
                Some(dist.sample(rng).round() as Millis)
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.intra_min_ms > self.intra_max_ms {
            return Err("intra_min_ms exceeds intra_max_ms".into());
        }
        if !(self.inter_median_ms > 0.0 && self.inter_sigma >= 0.0 && self.inter_sigma.is_finite())
        {
            return Err("inter delay needs a positive median and finite sigma".into());
        }
        for p in [self.intra_drop, self.inter_drop] {
            if !(0.0..1.0).contains(&p) {
                return Err("drop probability must lie in [0, 1)".into());
            }
        }
        Ok(())
    }
}

//! Synthetic multilingual corpus generation.
//!
//! A "language" is a Markov chain over a handful of spectral phone templates;
//! a "domain" perturbs rendered frames with additive noise, per-dimension
//! channel gains, and a speaking-rate multiplier. This gives controllable
//! seen/unseen-language and matched/shifted-domain conditions at desk scale.

mod benchmark;
mod manifest;
mod store;

pub use benchmark::{
    build_benchmark, BenchmarkConfig, ChannelKind, DomainConfig, GeneratedBenchmark,
};
pub use manifest::{Manifest, ManifestRecord, ManifestRole, Split};
pub use store::{read_features, write_features, AuditedReader, FeatureStore, LoadedUtterance};

use crate::error::{Result, SaptError};
use crate::rng::{derive_seed, rng_from_seed};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// A synthetic language: phone templates plus a phone Markov chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub id: String,
    /// P templates of dimension F, each unit L2 norm.
    pub phone_templates: Vec<Vec<f64>>,
    /// P x P row-stochastic transition matrix.
    pub transition: Vec<Vec<f64>>,
    /// Frames per phone before the domain rate multiplier.
    pub duration_mean: usize,
    pub group: String,
}

impl LanguageSpec {
    pub fn validate(&self) -> Result<()> {
        let p = self.phone_templates.len();
        if p < 2 {
            return Err(SaptError::Contract(format!("language {}: needs >= 2 phones", self.id)));
        }
        if self.phone_templates.iter().any(|t| t.len() < 2) {
            return Err(SaptError::Contract(format!(
                "language {}: feat_dim must be >= 2",
                self.id
            )));
        }
        if self.duration_mean < 1 {
            return Err(SaptError::Contract(format!(
                "language {}: duration_mean must be >= 1",
                self.id
            )));
        }
        if self.transition.len() != p {
            return Err(SaptError::Contract(format!(
                "language {}: transition must be PxP",
                self.id
            )));
        }
        for row in &self.transition {
            if row.len() != p {
                return Err(SaptError::Contract(format!(
                    "language {}: transition must be PxP",
                    self.id
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(SaptError::Contract(format!(
                    "language {}: transition row sums to {s}, expected 1",
                    self.id
                )));
            }
        }
        for i in 0..p {
            for j in (i + 1)..p {
                let d: f64 = self.phone_templates[i]
                    .iter()
                    .zip(&self.phone_templates[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if d <= 0.0 {
                    return Err(SaptError::Contract(format!(
                        "language {}: phones {i} and {j} coincide",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A rendering domain: acoustic noise, channel coloration, speaking rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub id: String,
    pub noise_sigma: f64,
    /// Per-dimension multiplicative gains, all strictly positive.
    pub channel_gain: Vec<f64>,
    /// Speaking-rate multiplier in [0.25, 4].
    pub rate: f64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.noise_sigma < 0.0 {
            return Err(SaptError::Contract(format!("domain {}: noise_sigma < 0", self.id)));
        }
        if self.channel_gain.iter().any(|&g| g <= 0.0) {
            return Err(SaptError::Contract(format!(
                "domain {}: channel gains must be > 0",
                self.id
            )));
        }
        if !(0.25..=4.0).contains(&self.rate) {
            return Err(SaptError::Contract(format!(
                "domain {}: rate {} outside [0.25, 4]",
                self.id, self.rate
            )));
        }
        Ok(())
    }

    pub fn unit(id: &str, feat_dim: usize) -> Self {
        DomainSpec {
            id: id.to_string(),
            noise_sigma: 0.0,
            channel_gain: vec![1.0; feat_dim],
            rate: 1.0,
        }
    }
}

/// One rendered sample: a T x F frame-feature matrix plus metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// Row-major T x F.
    pub features: Vec<f64>,
    pub num_frames: usize,
    pub feat_dim: usize,
    pub label: String,
    pub domain: String,
    pub split: Split,
}

const MIN_TEMPLATE_DIST: f64 = 0.5;
const MAX_TEMPLATE_RETRIES: usize = 1000;

/// Deterministically generate a language spec. Templates are unit-norm and
/// reject-resampled until pairwise Euclidean distance >= 0.5.
pub fn make_language_spec(
    id: &str,
    seed: u64,
    num_phones: usize,
    feat_dim: usize,
    group: &str,
) -> Result<LanguageSpec> {
    if num_phones < 2 || feat_dim < 2 {
        return Err(SaptError::Contract(
            "make_language_spec: num_phones and feat_dim must be >= 2".into(),
        ));
    }
    let mut rng = rng_from_seed(derive_seed(seed, "lang-templates", &[]));
    let mut templates: Vec<Vec<f64>> = Vec::with_capacity(num_phones);
    let mut retries = 0usize;
    while templates.len() < num_phones {
        let mut t: Vec<f64> = (0..feat_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = crate::math::norm(&t);
        if n < 1e-12 {
            retries += 1;
            continue;
        }
        for v in t.iter_mut() {
            *v /= n;
        }
        let ok = templates.iter().all(|u| {
            let d: f64 = u.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            d >= MIN_TEMPLATE_DIST
        });
        if ok {
            templates.push(t);
        } else {
            retries += 1;
            if retries > MAX_TEMPLATE_RETRIES {
                return Err(SaptError::Generation(format!(
                    "template rejection loop exceeded {MAX_TEMPLATE_RETRIES} retries for seed {seed}"
                )));
            }
        }
    }

    let mut rng = rng_from_seed(derive_seed(seed, "lang-transition", &[]));
    let mut transition = Vec::with_capacity(num_phones);
    for _ in 0..num_phones {
        let mut row: Vec<f64> = (0..num_phones).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= s;
        }
        transition.push(row);
    }

    let mut rng = rng_from_seed(derive_seed(seed, "lang-duration", &[]));
    let duration_mean = rng.gen_range(5..=8usize);

    let spec = LanguageSpec {
        id: id.to_string(),
        phone_templates: templates,
        transition,
        duration_mean,
        group: group.to_string(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Render one utterance: walk the phone chain, hold each phone for
/// round(duration_mean * rate) frames (min 1), apply channel gain and
/// additive Gaussian noise, and cut to exactly `target_frames`.
pub fn render_utterance(
    lang: &LanguageSpec,
    domain: &DomainSpec,
    target_frames: usize,
    seed: u64,
    id: &str,
    split: Split,
) -> Result<Utterance> {
    lang.validate()?;
    domain.validate()?;
    let feat_dim = lang.phone_templates[0].len();
    if domain.channel_gain.len() != feat_dim {
        return Err(SaptError::Contract(format!(
            "domain {} channel dim {} != language feat dim {feat_dim}",
            domain.id,
            domain.channel_gain.len()
        )));
    }
    if target_frames == 0 {
        return Err(SaptError::Contract("render_utterance: target_frames must be >= 1".into()));
    }

    let dur = ((lang.duration_mean as f64 * domain.rate).round() as usize).max(1);
    let p = lang.phone_templates.len();

    let mut chain_rng = rng_from_seed(derive_seed(seed, "utt-chain", &[]));
    let mut noise_rng = rng_from_seed(derive_seed(seed, "utt-noise", &[]));

    let mut phone = chain_rng.gen_range(0..p);
    let mut features = Vec::with_capacity(target_frames * feat_dim);
    let mut frames = 0usize;
    while frames < target_frames {
        for _ in 0..dur {
            if frames == target_frames {
                break;
            }
            let template = &lang.phone_templates[phone];
            for f in 0..feat_dim {
                let eps: f64 = if domain.noise_sigma > 0.0 {
                    let n: f64 = StandardNormal.sample(&mut noise_rng);
                    n * domain.noise_sigma
                } else {
                    0.0
                };
                features.push(domain.channel_gain[f] * template[f] + eps);
            }
            frames += 1;
        }
        // next phone from the Markov chain
        let u: f64 = chain_rng.gen();
        let row = &lang.transition[phone];
        let mut acc = 0.0;
        let mut next = p - 1;
        for (j, &pr) in row.iter().enumerate() {
            acc += pr;
            if u < acc {
                next = j;
                break;
            }
        }
        phone = next;
    }

    if features.iter().any(|v| !v.is_finite()) {
        return Err(SaptError::Numerical(format!("non-finite feature in rendered utterance {id}")));
    }

    Ok(Utterance {
        id: id.to_string(),
        features,
        num_frames: target_frames,
        feat_dim,
        label: lang.id.clone(),
        domain: domain.id.clone(),
        split,
    })
}

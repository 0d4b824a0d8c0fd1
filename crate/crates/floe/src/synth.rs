//! Synthetic benchmark generation: a Gaussian mixture of "normal"
//! environments plus several families of perturbed samples standing in for
//! anomaly types, from subtle to prominent.
//!
//! Generation is a pure function of the spec (including its seed): draws
//! come from ChaCha8 streams and the Box-Muller transform, so the same spec
//! reproduces the same file anywhere.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledSample};
use crate::error::{Error, Result};
use crate::linalg::cholesky;
use crate::rng::{derive_seed, seeded_rng, standard_normal, standard_normal_vec};

/// Covariance of one mixture component: per-coordinate variances, or a full
/// symmetric positive-definite matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: Covariance,
}

/// One anomaly family: mixture draws perturbed by a mean shift of fixed
/// magnitude along a random (but seed-fixed) subspace, plus optional
/// isotropic noise. Small shifts give anomalies that overlap the normal
/// data heavily.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyFamily {
    pub tag: String,
    #[serde(default)]
    pub description: String,
    pub count: usize,
    pub shift_magnitude: f64,
    #[serde(default = "default_subspace_dim")]
    pub subspace_dim: usize,
    #[serde(default)]
    pub noise_scale: f64,
}

fn default_subspace_dim() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dimension: usize,
    pub seed: u64,
    pub normal_count: usize,
    pub components: Vec<MixtureComponent>,
    #[serde(default)]
    pub anomaly_families: Vec<AnomalyFamily>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::usage("synthetic spec: dimension must be positive"));
        }
        if self.components.is_empty() {
            return Err(Error::usage("synthetic spec: at least one mixture component"));
        }
        let weight_sum: f64 = self.components.iter().map(|c| c.weight).sum();
        if (weight_sum - 1.0).abs() > 1e-9 {
            return Err(Error::usage(format!(
                "synthetic spec: component weights sum to {weight_sum}, expected 1"
            )));
        }
        for (i, c) in self.components.iter().enumerate() {
            if c.weight <= 0.0 {
                return Err(Error::usage(format!("component {i}: weight must be positive")));
            }
            if c.mean.len() != self.dimension {
                return Err(Error::shape(format!("component {i} mean"), self.dimension, c.mean.len()));
            }
            match &c.covariance {
                Covariance::Diagonal(v) => {
                    if v.len() != self.dimension {
                        return Err(Error::shape(
                            format!("component {i} variances"),
                            self.dimension,
                            v.len(),
                        ));
                    }
                    if v.iter().any(|&x| x <= 0.0) {
                        return Err(Error::usage(format!("component {i}: variances must be positive")));
                    }
                }
                Covariance::Full(rows) => {
                    if rows.len() != self.dimension
                        || rows.iter().any(|r| r.len() != self.dimension)
                    {
                        return Err(Error::usage(format!(
                            "component {i}: covariance must be {d} x {d}",
                            d = self.dimension
                        )));
                    }
                }
            }
        }
        for (i, f) in self.anomaly_families.iter().enumerate() {
            if f.subspace_dim == 0 || f.subspace_dim > self.dimension {
                return Err(Error::usage(format!(
                    "anomaly family {i}: subspace_dim must be in 1..={}",
                    self.dimension
                )));
            }
            if f.shift_magnitude < 0.0 || f.noise_scale < 0.0 {
                return Err(Error::usage(format!(
                    "anomaly family {i}: magnitudes must be non-negative"
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("synthetic spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SyntheticSpec = toml::from_str(text).map_err(|e| Error::Format {
            path: "synthetic spec".into(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    /// The default desk-scale benchmark: 16 dimensions, three overlapping
    /// "environment" components sharing a mildly anisotropic diagonal
    /// covariance, and eight anomaly families spanning subtle to prominent.
    /// Each family combines a sign-symmetric mean shift along its own fixed
    /// subspace with an isotropic noise halo, so anomalies surround the
    /// normal data rather than forming one separable cluster. Sized so that
    /// full training sweeps run in minutes.
    pub fn default_benchmark(seed: u64) -> Self {
        let dimension = 16;
        let mut mean_rng = seeded_rng(derive_seed(seed, 101));
        let variances: Vec<f64> = (0..dimension)
            .map(|j| {
                let sd = 1.3 * 0.93f64.powi(j as i32) + 0.2;
                sd * sd
            })
            .collect();
        let mut component = |weight: f64, spread: f64| MixtureComponent {
            weight,
            mean: standard_normal_vec(&mut mean_rng, dimension)
                .into_iter()
                .map(|v| v * spread)
                .collect(),
            covariance: Covariance::Diagonal(variances.clone()),
        };
        let components = vec![component(0.5, 0.5), component(0.3, 0.5), component(0.2, 0.5)];

        let shifts = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0];
        let anomaly_families = shifts
            .iter()
            .enumerate()
            .map(|(i, &delta)| AnomalyFamily {
                tag: format!("shift{:02}", (delta * 10.0) as u32),
                description: format!(
                    "mean shift of {delta} sd along a fixed random subspace plus an isotropic halo"
                ),
                count: 100,
                shift_magnitude: delta,
                subspace_dim: 1 + i % 3,
                noise_scale: 0.25 + 0.05 * i as f64,
            })
            .collect();

        SyntheticSpec {
            dimension,
            seed,
            normal_count: 5000,
            components,
            anomaly_families,
        }
    }
}

/// Scale factor per component: Cholesky factor of the covariance (diagonal
/// shortcut for diagonal covariances).
enum Factor {
    Diagonal(Vec<f64>),
    Full(Vec<f64>, usize),
}

impl Factor {
    fn build(cov: &Covariance, d: usize) -> Result<Factor> {
        match cov {
            Covariance::Diagonal(v) => Ok(Factor::Diagonal(v.iter().map(|x| x.sqrt()).collect())),
            Covariance::Full(rows) => {
                let mut flat = Vec::with_capacity(d * d);
                for r in rows {
                    flat.extend_from_slice(r);
                }
                // Symmetry check before factorization.
                for i in 0..d {
                    for j in 0..i {
                        if (flat[i * d + j] - flat[j * d + i]).abs() > 1e-9 {
                            return Err(Error::usage("covariance matrix is not symmetric"));
                        }
                    }
                }
                Ok(Factor::Full(cholesky(&flat, d)?, d))
            }
        }
    }

    fn apply(&self, z: &[f64], out: &mut [f64]) {
        match self {
            Factor::Diagonal(sd) => {
                for ((o, s), v) in out.iter_mut().zip(sd).zip(z) {
                    *o = s * v;
                }
            }
            Factor::Full(l, d) => {
                for i in 0..*d {
                    let mut sum = 0.0;
                    for k in 0..=i {
                        sum += l[i * d + k] * z[k];
                    }
                    out[i] = sum;
                }
            }
        }
    }
}

/// Generates the dataset described by `spec`: `normal_count` mixture draws,
/// then each anomaly family's perturbed draws, in spec order.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.dimension;
    let factors: Vec<Factor> = spec
        .components
        .iter()
        .map(|c| Factor::build(&c.covariance, d))
        .collect::<Result<_>>()?;

    // Per-family orthonormal subspace bases, from their own seed streams.
    let bases: Vec<Vec<Vec<f64>>> = spec
        .anomaly_families
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut rng = seeded_rng(derive_seed(spec.seed, 1000 + i as u64));
            orthonormal_basis(&mut rng, d, f.subspace_dim)
        })
        .collect();

    let mut rng = seeded_rng(derive_seed(spec.seed, 0));
    let draw_base = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let u: f64 = rand::Rng::random(rng);
        let mut acc = 0.0;
        let mut pick = spec.components.len() - 1;
        for (i, c) in spec.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = i;
                break;
            }
        }
        let z = standard_normal_vec(rng, d);
        let mut x = vec![0.0; d];
        factors[pick].apply(&z, &mut x);
        for (xi, mi) in x.iter_mut().zip(&spec.components[pick].mean) {
            *xi += mi;
        }
        x
    };

    let mut samples = Vec::with_capacity(
        spec.normal_count + spec.anomaly_families.iter().map(|f| f.count).sum::<usize>(),
    );
    for _ in 0..spec.normal_count {
        samples.push(LabeledSample::normal(draw_base(&mut rng)));
    }
    for (family, basis) in spec.anomaly_families.iter().zip(&bases) {
        for _ in 0..family.count {
            let mut x = draw_base(&mut rng);
            if family.shift_magnitude > 0.0 {
                // Random direction within the family subspace, length delta.
                let mut coeffs;
                loop {
                    coeffs = standard_normal_vec(&mut rng, family.subspace_dim);
                    let norm: f64 = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
                    if norm > 1e-12 {
                        for c in &mut coeffs {
                            *c /= norm;
                        }
                        break;
                    }
                }
                for (k, c) in coeffs.iter().enumerate() {
                    for (xi, bi) in x.iter_mut().zip(&basis[k]) {
                        *xi += family.shift_magnitude * c * bi;
                    }
                }
            }
            if family.noise_scale > 0.0 {
                for xi in x.iter_mut() {
                    *xi += family.noise_scale * standard_normal(&mut rng);
                }
            }
            samples.push(LabeledSample::anomaly(family.tag.clone(), x));
        }
    }

    let registry = spec
        .anomaly_families
        .iter()
        .map(|f| (f.tag.clone(), f.description.clone()))
        .collect();
    Dataset::with_registry(samples, d, registry)
}

/// Gram-Schmidt over standard-normal draws.
fn orthonormal_basis<R: rand::Rng>(rng: &mut R, d: usize, k: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v = standard_normal_vec(rng, d);
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for vi in &mut v {
                *vi /= norm;
            }
            basis.push(v);
        }
    }
    basis
}

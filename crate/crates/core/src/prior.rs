//! Learned product-of-experts prior over 2×2 image patches.
//!
//! The prior is built in three stages:
//!
//! 1. [`learn_filters`] runs PCA on mean-centered patches, discards the
//!    dominant component (for natural images this is the flat "DC"
//!    direction, which says nothing about structure) and keeps the remaining
//!    unit-norm eigenvectors as linear filters.
//! 2. [`fit_gmm_em`] fits a one-dimensional Gaussian mixture to the scalar
//!    responses `⟨J_f, x⟩` of each filter, seeded by [`kmeans_init`].
//! 3. [`lift_1d`] turns each 1-D mixture component into a rank-one
//!    four-dimensional canonical Gaussian whose density along the filter
//!    direction reproduces the 1-D bell curve exactly, and
//!    [`build_clique_potential`] multiplies the lifted experts into a single
//!    mixture usable as a clique potential.
//!
//! Every expert's density is the unnormalized
//! `Σ_j w_j · exp(−(r − μ_j)² / (2σ_j²))` with the weights `w_j` summing to
//! one per expert; the same convention flows through the lift, so the clique
//! potential's density is (in exact weight mode) the pointwise product of
//! the experts evaluated at the patch's filter responses.
//!
//! Models persist to a small line-based text file (magic `mixprior v1`)
//! with every float printed to 17 fractional digits, which round-trips
//! `f64` values exactly; saving the same model twice produces byte-identical
//! files.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

use crate::gaussmix::{GaussianComponent, GaussianMixture, MixCtx, MixError, VarSet};

/// Patch side length the prior is built for.
pub const PATCH_SIZE: u32 = 2;
/// Smallest standard deviation a mixture component may report.
pub const SIGMA_FLOOR: f64 = 1e-3;
/// Default number of mixture components per expert.
pub const DEFAULT_COMPONENTS: usize = 3;
/// Default EM convergence threshold on mean per-sample log-likelihood gain.
pub const DEFAULT_EM_TOL: f64 = 1e-6;
/// Default EM iteration cap.
pub const DEFAULT_EM_MAX_ITERS: usize = 500;
/// |cosine| below which the dominant eigenvector draws a warning for not
/// looking like the flat DC direction.
const DC_COSINE_WARN: f64 = 0.95;

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("no patches supplied")]
    EmptyPatches,
    #[error("patch has {got} pixels, expected {expected}")]
    WrongPatchSize { expected: usize, got: usize },
    #[error("need at least {needed} samples, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },
    #[error("component count must be at least 1")]
    InvalidComponentCount,
    #[error("expert component is invalid: {0}")]
    InvalidExpert(String),
    #[error("model file version {found:?} is not supported (expected \"mixprior v1\")")]
    VersionMismatch { found: String },
    #[error("malformed model file: {0}")]
    MalformedModel(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mix(#[from] MixError),
}

/// One component of a univariate Gaussian mixture with density contribution
/// `w · exp(−(r − μ)² / (2σ²))` (unnormalized by convention).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian1D {
    pub weight: f64,
    pub mean: f64,
    pub sigma: f64,
}

/// Output of the PCA stage.
#[derive(Debug, Clone)]
pub struct LearnedFilters {
    /// Kept unit-norm filters, by descending eigenvalue.
    pub filters: Vec<Vec<f64>>,
    /// The discarded dominant eigenvector.
    pub dropped: Vec<f64>,
    /// All eigenvalues of the sample covariance, descending; `eigenvalues[0]`
    /// belongs to `dropped`.
    pub eigenvalues: Vec<f64>,
}

/// A complete learned prior: filters plus one response mixture per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel {
    pub patch_size: u32,
    pub filters: Vec<Vec<f64>>,
    pub dropped_filter: Option<Vec<f64>>,
    /// `experts[f]` is the response mixture for `filters[f]`.
    pub experts: Vec<Vec<Gaussian1D>>,
    pub meta: ModelMeta,
}

/// Provenance counters recorded alongside a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModelMeta {
    /// Patches used for filter learning.
    pub patches: u64,
    /// Patches used to fit the response mixtures.
    pub em_samples: u64,
    /// Seed the learning run was started with.
    pub seed: u64,
}

/// Learns patch filters by PCA over mean-centered patches.
///
/// The sample covariance (1/(N−1) normalization) is eigendecomposed; the
/// eigenvector with the largest eigenvalue is dropped and the rest are
/// returned in descending eigenvalue order. If the dropped vector is not
/// close to the flat direction (|cosine| ≥ 0.95 against the normalized
/// all-ones vector) a warning is logged, since that usually means the
/// training patches are not natural-image-like.
///
/// Sign convention: each kept filter is flipped, if necessary, so that its
/// largest-magnitude entry (lowest index on ties) is positive.
pub fn learn_filters(patches: &[Vec<f64>]) -> Result<LearnedFilters, PriorError> {
    let dim = (PATCH_SIZE * PATCH_SIZE) as usize;
    if patches.is_empty() {
        return Err(PriorError::EmptyPatches);
    }
    for p in patches {
        if p.len() != dim {
            return Err(PriorError::WrongPatchSize { expected: dim, got: p.len() });
        }
    }
    if patches.len() < 2 {
        return Err(PriorError::NotEnoughSamples { needed: 2, got: patches.len() });
    }
    let n = patches.len() as f64;
    let mut mean = vec![0.0f64; dim];
    for p in patches {
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for p in patches {
        let centered: Vec<f64> = p.iter().zip(&mean).map(|(&v, &m)| v - m).collect();
        for i in 0..dim {
            for j in 0..dim {
                cov[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    cov /= n - 1.0;

    let eigen = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b].partial_cmp(&eigen.eigenvalues[a]).unwrap()
    });

    let extract = |col: usize| -> Vec<f64> {
        let v = eigen.eigenvectors.column(col);
        let norm = v.norm();
        v.iter().map(|&x| x / norm).collect()
    };

    let dropped = extract(order[0]);
    let flat = 1.0 / (dim as f64).sqrt();
    let cos: f64 = dropped.iter().map(|&v| v * flat).sum();
    if cos.abs() < DC_COSINE_WARN {
        log::warn!(
            "dominant patch component is not flat-field-like (|cos| = {:.3}); \
             training data may not resemble natural images",
            cos.abs()
        );
    }

    let mut filters = Vec::with_capacity(dim - 1);
    for &col in &order[1..] {
        let mut f = extract(col);
        let mut p = 0usize;
        for (i, &v) in f.iter().enumerate() {
            if v.abs() > f[p].abs() {
                p = i;
            }
        }
        if f[p] < 0.0 {
            for v in &mut f {
                *v = -*v;
            }
        }
        filters.push(f);
    }
    let eigenvalues = order.iter().map(|&i| eigen.eigenvalues[i]).collect();
    Ok(LearnedFilters { filters, dropped, eigenvalues })
}

/// Scalar responses `⟨J, x⟩` of one filter over a set of patches.
pub fn filter_responses(patches: &[Vec<f64>], filter: &[f64]) -> Result<Vec<f64>, PriorError> {
    let mut out = Vec::with_capacity(patches.len());
    for p in patches {
        if p.len() != filter.len() {
            return Err(PriorError::WrongPatchSize { expected: filter.len(), got: p.len() });
        }
        out.push(p.iter().zip(filter).map(|(&a, &b)| a * b).sum());
    }
    Ok(out)
}

/// Excess kurtosis `m₄/m₂² − 3` of a sample (0 for a Gaussian; positive for
/// the heavy-tailed responses natural images produce).
pub fn excess_kurtosis(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|&v| (v - mean).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

/// Seeds a 1-D mixture by Lloyd's algorithm (at most 100 iterations).
///
/// Initial centers are `k` distinct *values* drawn without replacement from
/// the sample's unique values when there are at least `k` of them, and `k`
/// distinct *indices* otherwise; both draws use a ChaCha stream seeded by
/// `seed`. Assignment ties go to the lower cluster index and the algorithm
/// stops when assignments no longer change. Cluster standard deviations are
/// population standard deviations floored at [`SIGMA_FLOOR`]; a cluster that
/// ends up empty reports weight 0, its current center as mean, and the
/// floor as sigma.
pub fn kmeans_init(values: &[f64], k: usize, seed: u64) -> Result<Vec<Gaussian1D>, PriorError> {
    if k == 0 {
        return Err(PriorError::InvalidComponentCount);
    }
    if values.len() < k {
        return Err(PriorError::NotEnoughSamples { needed: k, got: values.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();

    let mut centers: Vec<f64> = if distinct.len() >= k {
        sample_distinct(&mut rng, distinct.len(), k).into_iter().map(|i| distinct[i]).collect()
    } else {
        sample_distinct(&mut rng, values.len(), k).into_iter().map(|i| values[i]).collect()
    };

    let mut assignment = vec![usize::MAX; values.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, &v) in values.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = (v - centers[0]).abs();
            for (c, &center) in centers.iter().enumerate().skip(1) {
                let d = (v - center).abs();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<f64> = values
                .iter()
                .zip(&assignment)
                .filter(|&(_, &a)| a == c)
                .map(|(&v, _)| v)
                .collect();
            if !members.is_empty() {
                *center = members.iter().sum::<f64>() / members.len() as f64;
            }
        }
    }

    let n = values.len() as f64;
    let mut out = Vec::with_capacity(k);
    for (c, &center) in centers.iter().enumerate() {
        let members: Vec<f64> = values
            .iter()
            .zip(&assignment)
            .filter(|&(_, &a)| a == c)
            .map(|(&v, _)| v)
            .collect();
        if members.is_empty() {
            out.push(Gaussian1D { weight: 0.0, mean: center, sigma: SIGMA_FLOOR });
        } else {
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            let var = members.iter().map(|&v| (v - mean).powi(2)).sum::<f64>()
                / members.len() as f64;
            out.push(Gaussian1D {
                weight: members.len() as f64 / n,
                mean,
                sigma: var.sqrt().max(SIGMA_FLOOR),
            });
        }
    }
    Ok(out)
}

/// Draws `k` distinct indices from `0..n` by partial Fisher–Yates.
fn sample_distinct(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + (rng.next_u64() % (n - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Fits a `k`-component Gaussian mixture to scalar samples by
/// expectation–maximization, seeded with [`kmeans_init`].
///
/// Responsibilities use properly normalized Gaussian densities evaluated in
/// log space (log-sum-exp), so the returned trace is the true data
/// log-likelihood after each E step and is non-decreasing up to round-off.
/// Iteration stops when the mean per-sample improvement drops below `tol`
/// or after `max_iters` EM steps. M-step variances are population variances
/// under the responsibilities, floored at [`SIGMA_FLOOR`]; a component whose
/// total responsibility collapses below 1e-12 keeps its previous parameters.
/// Initial weights are floored at 1e-8 and renormalized so empty seed
/// clusters stay usable.
pub fn fit_gmm_em(
    values: &[f64],
    k: usize,
    seed: u64,
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<Gaussian1D>, Vec<f64>), PriorError> {
    if k == 0 {
        return Err(PriorError::InvalidComponentCount);
    }
    if values.len() < k {
        return Err(PriorError::NotEnoughSamples { needed: k, got: values.len() });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PriorError::InvalidExpert("samples must be finite".into()));
    }
    let mut comps = kmeans_init(values, k, seed)?;
    let weight_sum: f64 = comps.iter().map(|c| c.weight.max(1e-8)).sum();
    for c in &mut comps {
        c.weight = c.weight.max(1e-8) / weight_sum;
    }

    let n = values.len();
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut trace = Vec::new();
    let mut resp = vec![0.0f64; n * k];

    for _ in 0..max_iters {
        // E step: responsibilities from normalized log densities.
        let mut ll = 0.0;
        for (i, &x) in values.iter().enumerate() {
            let mut terms = Vec::with_capacity(k);
            for c in &comps {
                let z = (x - c.mean) / c.sigma;
                terms.push(c.weight.ln() - c.sigma.ln() - half_ln_2pi - 0.5 * z * z);
            }
            let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
            let log_px = max + sum.ln();
            ll += log_px;
            for (j, &t) in terms.iter().enumerate() {
                resp[i * k + j] = (t - log_px).exp();
            }
        }
        let improved = trace.last().map(|&prev| (ll - prev) / n as f64);
        trace.push(ll);
        if let Some(delta) = improved {
            if delta < tol {
                break;
            }
        }

        // M step.
        for (j, comp) in comps.iter_mut().enumerate() {
            let total: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            if total < 1e-12 {
                continue; // collapsed component keeps its parameters
            }
            let mean = (0..n).map(|i| resp[i * k + j] * values[i]).sum::<f64>() / total;
            let var =
                (0..n).map(|i| resp[i * k + j] * (values[i] - mean).powi(2)).sum::<f64>() / total;
            comp.weight = total / n as f64;
            comp.mean = mean;
            comp.sigma = var.sqrt().max(SIGMA_FLOOR);
        }
    }
    Ok((comps, trace))
}

/// Lifts a 1-D response component into a four-dimensional canonical
/// Gaussian over patch pixels: `Λ = J·Jᵀ/(2σ²)`, `η = μ·J/(2σ²)`, and a
/// mean representative `(μ/J_p)·e_p` along the filter's largest-magnitude
/// coordinate `p`. By construction the lifted component's density at a
/// patch `x` equals `w · exp(−(⟨J, x⟩ − μ)² / (2σ²))` exactly.
pub fn lift_1d(filter: &[f64], component: &Gaussian1D) -> Result<GaussianComponent, PriorError> {
    if component.weight <= 0.0 || !component.weight.is_finite() {
        return Err(PriorError::InvalidExpert(format!(
            "component weight {} must be positive",
            component.weight
        )));
    }
    if component.sigma <= 0.0 || !component.sigma.is_finite() {
        return Err(PriorError::InvalidExpert(format!(
            "component sigma {} must be positive",
            component.sigma
        )));
    }
    let dim = filter.len();
    let denom = 2.0 * component.sigma * component.sigma;
    let mut precision = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            precision[(i, j)] = filter[i] * filter[j] / denom;
        }
    }
    let info = DVector::from_iterator(dim, filter.iter().map(|&j| component.mean * j / denom));
    let mut p = 0usize;
    for (i, &v) in filter.iter().enumerate() {
        if v.abs() > filter[p].abs() {
            p = i;
        }
    }
    if filter[p] == 0.0 {
        return Err(PriorError::InvalidExpert("filter is identically zero".into()));
    }
    let mut mean_rep = DVector::zeros(dim);
    mean_rep[p] = component.mean / filter[p];
    Ok(GaussianComponent::from_parts(component.weight.ln(), precision, info, mean_rep))
}

/// Multiplies a model's lifted experts into one mixture over the placeholder
/// patch variables `{0, 1, 2, 3}` (row-major within the patch). With `k`
/// components per expert the result has `k^3` components — 27 with the
/// defaults.
pub fn build_clique_potential(
    model: &PriorModel,
    ctx: &MixCtx,
) -> Result<GaussianMixture, PriorError> {
    if model.filters.len() != model.experts.len() {
        return Err(PriorError::MalformedModel(format!(
            "{} filters but {} experts",
            model.filters.len(),
            model.experts.len()
        )));
    }
    if model.filters.is_empty() {
        return Err(PriorError::MalformedModel("model has no filters".into()));
    }
    let dim = (model.patch_size * model.patch_size) as usize;
    let vars = VarSet::new((0..dim as u32).collect())?;
    let mut result: Option<GaussianMixture> = None;
    for (filter, expert) in model.filters.iter().zip(&model.experts) {
        if expert.is_empty() {
            return Err(PriorError::MalformedModel("expert has no components".into()));
        }
        let comps = expert
            .iter()
            .map(|c| lift_1d(filter, c))
            .collect::<Result<Vec<_>, _>>()?;
        let mixture = GaussianMixture::new(vars.clone(), comps)?;
        result = Some(match result {
            None => mixture,
            Some(acc) => acc.product(&mixture, ctx)?,
        });
    }
    Ok(result.expect("at least one expert checked above"))
}

impl PriorModel {
    /// Serializes the model to its line-based text form. Floats are printed
    /// with 17 fractional digits in scientific notation, which round-trips
    /// `f64` exactly; equal models serialize to identical bytes.
    pub fn to_text(&self) -> String {
        let fmt = |v: f64| format!("{v:.17e}");
        let mut out = String::from("mixprior v1\n");
        out.push_str(&format!("patch_size {}\n", self.patch_size));
        for filter in &self.filters {
            out.push_str("filter");
            for &v in filter {
                out.push(' ');
                out.push_str(&fmt(v));
            }
            out.push('\n');
        }
        if let Some(dropped) = &self.dropped_filter {
            out.push_str("dropped");
            for &v in dropped {
                out.push(' ');
                out.push_str(&fmt(v));
            }
            out.push('\n');
        }
        let k = self.experts.first().map_or(0, Vec::len);
        out.push_str(&format!("experts {} {}\n", self.experts.len(), k));
        for (f, expert) in self.experts.iter().enumerate() {
            for c in expert {
                out.push_str(&format!(
                    "component {f} {} {} {}\n",
                    fmt(c.weight),
                    fmt(c.mean),
                    fmt(c.sigma)
                ));
            }
        }
        out.push_str(&format!("meta patches {}\n", self.meta.patches));
        out.push_str(&format!("meta em_samples {}\n", self.meta.em_samples));
        out.push_str(&format!("meta seed {}\n", self.meta.seed));
        out
    }

    /// Parses the text form produced by [`Self::to_text`].
    pub fn from_text(text: &str) -> Result<Self, PriorError> {
        let mut lines = text.lines();
        match lines.next() {
            Some("mixprior v1") => {}
            Some(first) if first.starts_with("mixprior ") => {
                return Err(PriorError::VersionMismatch { found: first.to_string() });
            }
            other => {
                return Err(PriorError::MalformedModel(format!(
                    "missing magic line, found {other:?}"
                )));
            }
        }

        let mut patch_size: Option<u32> = None;
        let mut filters: Vec<Vec<f64>> = Vec::new();
        let mut dropped: Option<Vec<f64>> = None;
        let mut expert_counts: Option<(usize, usize)> = None;
        let mut experts: Vec<Vec<Gaussian1D>> = Vec::new();
        let mut meta = ModelMeta::default();

        for line in lines {
            let mut tokens = line.split_whitespace();
            let Some(directive) = tokens.next() else { continue };
            let rest: Vec<&str> = tokens.collect();
            match directive {
                "patch_size" => {
                    let v = parse_one::<u32>(&rest, "patch_size")?;
                    if v != PATCH_SIZE {
                        return Err(PriorError::MalformedModel(format!(
                            "unsupported patch size {v}; only {PATCH_SIZE} is supported"
                        )));
                    }
                    patch_size = Some(v);
                }
                "filter" => filters.push(parse_floats(&rest, "filter")?),
                "dropped" => dropped = Some(parse_floats(&rest, "dropped")?),
                "experts" => {
                    if rest.len() != 2 {
                        return Err(PriorError::MalformedModel(
                            "experts line needs two counts".into(),
                        ));
                    }
                    let n = parse_one::<usize>(&rest[..1], "expert count")?;
                    let k = parse_one::<usize>(&rest[1..], "component count")?;
                    expert_counts = Some((n, k));
                    experts = vec![Vec::new(); n];
                }
                "component" => {
                    if rest.len() != 4 {
                        return Err(PriorError::MalformedModel(
                            "component line needs expert index, weight, mean, sigma".into(),
                        ));
                    }
                    let f = parse_one::<usize>(&rest[..1], "expert index")?;
                    let vals = parse_floats(&rest[1..], "component")?;
                    let expert = experts.get_mut(f).ok_or_else(|| {
                        PriorError::MalformedModel(format!("component for unknown expert {f}"))
                    })?;
                    expert.push(Gaussian1D { weight: vals[0], mean: vals[1], sigma: vals[2] });
                }
                "meta" => {
                    if rest.len() != 2 {
                        return Err(PriorError::MalformedModel("meta line needs key and value".into()));
                    }
                    let value = parse_one::<u64>(&rest[1..], rest[0])?;
                    match rest[0] {
                        "patches" => meta.patches = value,
                        "em_samples" => meta.em_samples = value,
                        "seed" => meta.seed = value,
                        other => {
                            return Err(PriorError::MalformedModel(format!(
                                "unknown meta key {other:?}"
                            )));
                        }
                    }
                }
                other => {
                    return Err(PriorError::MalformedModel(format!(
                        "unknown directive {other:?}"
                    )));
                }
            }
        }

        let patch_size = patch_size
            .ok_or_else(|| PriorError::MalformedModel("missing patch_size".into()))?;
        let dim = (patch_size * patch_size) as usize;
        let (n_experts, k) = expert_counts
            .ok_or_else(|| PriorError::MalformedModel("missing experts line".into()))?;
        if filters.len() != n_experts {
            return Err(PriorError::MalformedModel(format!(
                "{} filter lines but {} experts declared",
                filters.len(),
                n_experts
            )));
        }
        for f in filters.iter().chain(dropped.as_ref()) {
            if f.len() != dim {
                return Err(PriorError::MalformedModel(format!(
                    "filter has {} entries, expected {dim}",
                    f.len()
                )));
            }
        }
        for (f, expert) in experts.iter().enumerate() {
            if expert.len() != k {
                return Err(PriorError::MalformedModel(format!(
                    "expert {f} has {} components, expected {k}",
                    expert.len()
                )));
            }
        }
        Ok(PriorModel { patch_size, filters, dropped_filter: dropped, experts, meta })
    }

    pub fn save(&self, path: &Path) -> Result<(), PriorError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PriorError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn parse_one<T: std::str::FromStr>(tokens: &[&str], what: &str) -> Result<T, PriorError> {
    tokens
        .first()
        .and_then(|t| t.parse::<T>().ok())
        .ok_or_else(|| PriorError::MalformedModel(format!("invalid {what} field")))
}

fn parse_floats(tokens: &[&str], what: &str) -> Result<Vec<f64>, PriorError> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>().map_err(|_| {
                PriorError::MalformedModel(format!("invalid float {t:?} in {what} line"))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
        let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + u * (hi - lo)
    }

    /// Standard normal via Box–Muller.
    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        let u1 = uniform(rng, f64::MIN_POSITIVE, 1.0);
        let u2 = uniform(rng, 0.0, 1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Orthonormal basis used to build patches with a known covariance
    /// eigenstructure. u0 is the flat direction.
    const BASIS: [[f64; 4]; 4] = [
        [0.5, 0.5, 0.5, 0.5],
        [0.5, 0.5, -0.5, -0.5],
        [0.5, -0.5, 0.5, -0.5],
        [0.5, -0.5, -0.5, 0.5],
    ];

    /// Full-factorial coefficients give an empirical covariance that is
    /// exactly diagonal in the basis, with variances (16/15)·{9, 4, 1, 1/4}.
    fn factorial_patches() -> Vec<Vec<f64>> {
        let mut patches = Vec::new();
        for &a in &[-3.0, 3.0] {
            for &b in &[-2.0, 2.0] {
                for &c in &[-1.0, 1.0] {
                    for &d in &[-0.5, 0.5] {
                        let coef = [a, b, c, d];
                        let mut p = vec![0.0; 4];
                        for (k, &w) in coef.iter().enumerate() {
                            for i in 0..4 {
                                p[i] += w * BASIS[k][i];
                            }
                        }
                        patches.push(p);
                    }
                }
            }
        }
        patches
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(&x, &y)| x * y).sum()
    }

    #[test]
    fn learn_filters_recovers_known_eigenstructure() {
        let learned = learn_filters(&factorial_patches()).unwrap();
        assert_eq!(learned.filters.len(), 3);
        // The dominant direction is the flat basis vector and gets dropped.
        assert!(
            dot(&learned.dropped, &BASIS[0]).abs() > 1.0 - 1e-10,
            "dropped vector should be the flat direction"
        );
        // Remaining filters come out in descending eigenvalue order.
        for (f, expected) in learned.filters.iter().zip(&BASIS[1..]) {
            assert!(
                dot(f, expected).abs() > 1.0 - 1e-10,
                "filter {f:?} should match basis vector {expected:?}"
            );
        }
        let scale = 16.0 / 15.0;
        let expected_eigs = [9.0 * scale, 4.0 * scale, scale, 0.25 * scale];
        for (got, want) in learned.eigenvalues.iter().zip(expected_eigs) {
            assert!((got - want).abs() < 1e-9, "eigenvalue {got} should be {want}");
        }
    }

    #[test]
    fn learned_filters_are_orthonormal_with_positive_peak() {
        let learned = learn_filters(&factorial_patches()).unwrap();
        for (i, f) in learned.filters.iter().enumerate() {
            assert!((dot(f, f) - 1.0).abs() < 1e-10, "filter {i} is not unit norm");
            let mut p = 0;
            for (j, &v) in f.iter().enumerate() {
                if v.abs() > f[p].abs() {
                    p = j;
                }
            }
            assert!(f[p] > 0.0, "filter {i} violates the sign convention");
            for g in &learned.filters[i + 1..] {
                assert!(dot(f, g).abs() < 1e-10, "filters are not mutually orthogonal");
            }
        }
    }

    #[test]
    fn learn_filters_validates_input() {
        assert!(matches!(learn_filters(&[]), Err(PriorError::EmptyPatches)));
        assert!(matches!(
            learn_filters(&[vec![1.0; 3]]),
            Err(PriorError::WrongPatchSize { expected: 4, got: 3 })
        ));
        assert!(matches!(
            learn_filters(&[vec![1.0; 4]]),
            Err(PriorError::NotEnoughSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn filter_responses_are_plain_dot_products() {
        let patches = vec![vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 0.0, 1.0, 0.0]];
        let filter = [0.5, -0.5, 0.5, -0.5];
        let r = filter_responses(&patches, &filter).unwrap();
        assert_eq!(r, vec![-1.0, 0.5]);
    }

    #[test]
    fn excess_kurtosis_is_zeroish_for_gaussian_and_high_for_spikes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gauss: Vec<f64> = (0..20000).map(|_| normal(&mut rng)).collect();
        let k_gauss = excess_kurtosis(&gauss);
        assert!(k_gauss.abs() < 0.2, "Gaussian sample kurtosis {k_gauss} should be near 0");
        // A sparse spike train is strongly leptokurtic.
        let spiky: Vec<f64> =
            (0..2000).map(|i| if i % 100 == 0 { 50.0 } else { 0.0 }).collect();
        assert!(excess_kurtosis(&spiky) > 10.0);
    }

    #[test]
    fn kmeans_splits_two_obvious_clusters() {
        let values = [0.0, 0.1, 0.2, 10.0, 10.1];
        let mut comps = kmeans_init(&values, 2, 7).unwrap();
        comps.sort_by(|a, b| a.mean.partial_cmp(&b.mean).unwrap());
        assert!((comps[0].mean - 0.1).abs() < 1e-12);
        assert!((comps[1].mean - 10.05).abs() < 1e-12);
        assert!((comps[0].weight - 0.6).abs() < 1e-12);
        assert!((comps[1].weight - 0.4).abs() < 1e-12);
        // Population standard deviations of the two clusters.
        assert!((comps[0].sigma - (0.02f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((comps[1].sigma - 0.05).abs() < 1e-12);
    }

    #[test]
    fn kmeans_is_deterministic_and_floors_sigma() {
        let values: Vec<f64> = (0..50).map(|i| (i % 5) as f64).collect();
        let a = kmeans_init(&values, 3, 123).unwrap();
        let b = kmeans_init(&values, 3, 123).unwrap();
        assert_eq!(a, b, "same seed must reproduce the same clustering");
        let constant = [4.2; 10];
        let comps = kmeans_init(&constant, 2, 0).unwrap();
        for c in &comps {
            assert_eq!(c.sigma, SIGMA_FLOOR, "degenerate clusters must floor sigma");
        }
    }

    #[test]
    fn kmeans_handles_fewer_distinct_values_than_clusters() {
        let values = [1.0, 1.0, 1.0, 2.0];
        let comps = kmeans_init(&values, 3, 9).unwrap();
        assert_eq!(comps.len(), 3);
        let weight_sum: f64 = comps.iter().map(|c| c.weight).sum();
        assert!((weight_sum - 1.0).abs() < 1e-12);
        assert!(comps.iter().all(|c| c.sigma >= SIGMA_FLOOR && c.mean.is_finite()));
    }

    #[test]
    fn em_recovers_well_separated_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut values = Vec::with_capacity(4000);
        for _ in 0..2000 {
            values.push(-5.0 + 0.7 * normal(&mut rng));
        }
        for _ in 0..2000 {
            values.push(4.0 + 1.2 * normal(&mut rng));
        }
        let (mut comps, trace) = fit_gmm_em(&values, 2, 1, DEFAULT_EM_TOL, DEFAULT_EM_MAX_ITERS)
            .unwrap();
        comps.sort_by(|a, b| a.mean.partial_cmp(&b.mean).unwrap());
        assert!((comps[0].mean + 5.0).abs() < 0.1, "low mean {} should be near -5", comps[0].mean);
        assert!((comps[1].mean - 4.0).abs() < 0.1, "high mean {} should be near 4", comps[1].mean);
        assert!((comps[0].sigma - 0.7).abs() < 0.1);
        assert!((comps[1].sigma - 1.2).abs() < 0.15);
        assert!((comps[0].weight - 0.5).abs() < 0.05);
        assert!(trace.len() >= 2);
        assert!(
            trace.last().unwrap() > trace.first().unwrap(),
            "likelihood should improve from the k-means start"
        );
    }

    #[test]
    fn em_log_likelihood_never_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let values: Vec<f64> = (0..1500)
            .map(|i| if i % 3 == 0 { 2.0 * normal(&mut rng) } else { 0.3 * normal(&mut rng) })
            .collect();
        let (_, trace) = fit_gmm_em(&values, 3, 5, DEFAULT_EM_TOL, DEFAULT_EM_MAX_ITERS).unwrap();
        for w in trace.windows(2) {
            assert!(
                w[1] - w[0] >= -1e-9,
                "log-likelihood decreased from {} to {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn em_survives_degenerate_data() {
        let values = [3.0; 40];
        let (comps, trace) = fit_gmm_em(&values, 2, 0, DEFAULT_EM_TOL, 50).unwrap();
        for c in &comps {
            assert!(c.sigma >= SIGMA_FLOOR);
            assert!(c.mean.is_finite() && c.weight.is_finite());
        }
        assert!(trace.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn lift_reproduces_response_density_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        // A non-axis-aligned unit filter.
        let mut filter = [0.3, -0.8, 0.5, 0.1];
        let norm = dot(&filter, &filter).sqrt();
        for v in &mut filter {
            *v /= norm;
        }
        let comp = Gaussian1D { weight: 0.37, mean: 12.5, sigma: 7.25 };
        let lifted = lift_1d(&filter, &comp).unwrap();
        for _ in 0..50 {
            let x = DVector::from_fn(4, |_, _| uniform(&mut rng, 0.0, 255.0));
            let r = filter.iter().zip(x.iter()).map(|(&j, &v)| j * v).sum::<f64>();
            let want = comp.weight.ln() - (r - comp.mean).powi(2) / (2.0 * comp.sigma * comp.sigma);
            let got = lifted.log_density_at(&x);
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                "lifted log-density {got} deviates from 1-D form {want}"
            );
        }
    }

    #[test]
    fn lift_rejects_degenerate_components() {
        let filter = [1.0, 0.0, 0.0, 0.0];
        let bad_w = Gaussian1D { weight: 0.0, mean: 0.0, sigma: 1.0 };
        assert!(matches!(lift_1d(&filter, &bad_w), Err(PriorError::InvalidExpert(_))));
        let bad_s = Gaussian1D { weight: 0.5, mean: 0.0, sigma: 0.0 };
        assert!(matches!(lift_1d(&filter, &bad_s), Err(PriorError::InvalidExpert(_))));
        let zero = [0.0; 4];
        let ok = Gaussian1D { weight: 0.5, mean: 0.0, sigma: 1.0 };
        assert!(matches!(lift_1d(&zero, &ok), Err(PriorError::InvalidExpert(_))));
    }

    fn tiny_model() -> PriorModel {
        let learned = learn_filters(&factorial_patches()).unwrap();
        let experts = vec![
            vec![
                Gaussian1D { weight: 0.6, mean: -1.0, sigma: 0.8 },
                Gaussian1D { weight: 0.3, mean: 0.5, sigma: 2.0 },
                Gaussian1D { weight: 0.1, mean: 3.0, sigma: 5.0 },
            ];
            3
        ];
        PriorModel {
            patch_size: 2,
            filters: learned.filters,
            dropped_filter: Some(learned.dropped),
            experts,
            meta: ModelMeta { patches: 16, em_samples: 16, seed: 9 },
        }
    }

    #[test]
    fn clique_potential_is_product_of_expert_densities() {
        let model = tiny_model();
        let ctx = MixCtx::exact();
        let potential = build_clique_potential(&model, &ctx).unwrap();
        assert_eq!(potential.component_count(), 27);
        assert_eq!(potential.vars().as_slice(), &[0, 1, 2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..40 {
            let x = DVector::from_fn(4, |_, _| uniform(&mut rng, 0.0, 255.0));
            // Independent evaluation straight from the 1-D expert formulas.
            let mut want_log = 0.0;
            for (filter, expert) in model.filters.iter().zip(&model.experts) {
                let r: f64 = filter.iter().zip(x.iter()).map(|(&j, &v)| j * v).sum();
                let val: f64 = expert
                    .iter()
                    .map(|c| c.weight * (-(r - c.mean).powi(2) / (2.0 * c.sigma * c.sigma)).exp())
                    .sum();
                want_log += val.ln();
            }
            let got = potential.log_density(&x).unwrap();
            assert!(
                (got - want_log).abs() <= 1e-10 * want_log.abs().max(1.0),
                "potential log-density {got} deviates from expert product {want_log}"
            );
        }
    }

    #[test]
    fn model_text_round_trips_exactly() {
        let model = tiny_model();
        let text = model.to_text();
        let back = PriorModel::from_text(&text).unwrap();
        assert_eq!(back, model, "parse(serialize(m)) must reproduce every field bit-for-bit");
        assert_eq!(back.to_text(), text, "re-serialization must be byte-identical");
    }

    #[test]
    fn model_file_round_trips_via_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prior.model");
        let model = tiny_model();
        model.save(&path).unwrap();
        let back = PriorModel::load(&path).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn model_parser_rejects_bad_input() {
        assert!(matches!(
            PriorModel::from_text("not a model\n"),
            Err(PriorError::MalformedModel(_))
        ));
        assert!(matches!(
            PriorModel::from_text("mixprior v9\npatch_size 2\n"),
            Err(PriorError::VersionMismatch { .. })
        ));
        let mut text = tiny_model().to_text();
        text.push_str("mystery 1 2 3\n");
        assert!(matches!(PriorModel::from_text(&text), Err(PriorError::MalformedModel(_))));
        // Dropping an expert's component lines breaks the count check.
        let full = tiny_model().to_text();
        let cut = full
            .lines()
            .filter(|l| !l.starts_with("component 2 "))
            .collect::<Vec<_>>()
            .join("\n");
        assert!(matches!(PriorModel::from_text(&cut), Err(PriorError::MalformedModel(_))));
    }

    #[test]
    fn model_parser_rejects_unsupported_patch_size() {
        let text = "mixprior v1\npatch_size 3\nexperts 0 0\n";
        assert!(matches!(PriorModel::from_text(text), Err(PriorError::MalformedModel(_))));
    }
}

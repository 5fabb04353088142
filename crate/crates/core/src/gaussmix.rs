//! Multivariate Gaussian mixtures in canonical (information) form.
//!
//! A mixture component stores a log-weight `log β`, a precision matrix `Λ`
//! (the inverse of the covariance) and an information vector `η = Λ·μ̲`. Its
//! density is
//!
//! ```text
//! f(x) = β · exp(−(x − μ̲)ᵀ Λ (x − μ̲))
//! ```
//!
//! Note the exponent carries no 1/2 factor; a one-dimensional component with
//! `Λ = 1/(2σ²)` therefore matches the familiar `exp(−(x−μ)²/(2σ²))` bell
//! curve. Components are unnormalized by design: mixtures play the role of
//! clique potentials and messages, not probability distributions.
//!
//! The canonical form is what makes the propagation algebra cheap: products
//! of components add precisions and information vectors, zero-padding over
//! the union of their variable sets, so factors over partially overlapping
//! cliques combine without any inversion. Precisions are allowed to be
//! singular; a flat (all-zero) component is the multiplicative identity and
//! serves as the uniform message initializer.
//!
//! Mixture weights across the operations follow one of two conventions,
//! selected by [`WeightMode`]:
//!
//! - [`WeightMode::PaperFaithful`] multiplies weights through products and
//!   leaves them unchanged by marginalization.
//! - [`WeightMode::Exact`] additionally carries the displacement and
//!   integral factors, so that the density of a product is the pointwise
//!   product of densities and the density of a marginal is the integral of
//!   the joint.
//!
//! All operations are pure functions of their inputs. The [`MixCtx`] bundles
//! the weight mode, the ridge used before near-singular inversions, and an
//! operation tally ([`OpCounter`]); it is cheap to create one per thread.

use std::collections::BTreeMap;
use std::sync::Mutex;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Default ridge added to a precision matrix whose smallest eigenvalue falls
/// below it, keeping moment-form conversions finite.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Relative tolerance for the symmetry check on input matrices.
const SYMMETRY_REL_TOL: f64 = 1e-10;

/// Most negative eigenvalue accepted as positive semidefinite round-off.
const PSD_EIG_FLOOR: f64 = -1e-9;

/// Relative eigenvalue cutoff below which a pseudo-inverse treats a
/// direction as flat.
const PINV_REL_CUTOFF: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MixError {
    #[error("variable {0} appears more than once in the variable set")]
    DuplicateVariable(u32),
    #[error("variable set is empty")]
    EmptyVariableSet,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not symmetric within tolerance")]
    AsymmetricMatrix,
    #[error("precision has eigenvalue {min_eigenvalue:.3e} below the PSD tolerance")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    #[error("information vector lies outside the range of the precision (residual {residual:.3e})")]
    InfoOutsideRange { residual: f64 },
    #[error("covariance matrix is singular")]
    SingularCovariance,
    #[error("matrix inversion failed during marginalization")]
    SingularMatrix,
    #[error("mixture has no components")]
    EmptyMixture,
    #[error("kept variables are not a subset of the mixture's variables")]
    NotSubset,
    #[error("cannot marginalize onto an empty variable set")]
    EmptyKeep,
    #[error("conditioning on every variable would leave an empty variable set")]
    AllObserved,
    #[error("observed variables are not a subset of the mixture's variables")]
    ObservedNotSubset,
    #[error("mode_scan requires a univariate mixture, got {dim} variables")]
    NotUnivariate { dim: usize },
    #[error("prune cap must be at least 1")]
    ZeroCap,
    #[error("relabeling requires exactly {expected} variables, got {got}")]
    RelabelMismatch { expected: usize, got: usize },
}

/// Weight bookkeeping convention for products and marginals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    /// Weights carry displacement and integral factors so component
    /// densities compose exactly: the product's density is the pointwise
    /// product, the marginal's density is the integral of the joint.
    #[default]
    Exact,
    /// Products multiply weights (`β' = β_a · β_b`) and marginalization
    /// leaves weights unchanged, reproducing the original formulation's
    /// importance bookkeeping.
    PaperFaithful,
}

/// Tally of matrix operations, keyed by dimension.
///
/// Two kinds of events are recorded, mirroring how propagation cost is
/// usually reported for this algorithm family:
///
/// - **mat_vecs**: matrix–vector products; a rectangular `r×c · c×1` product
///   is tallied under `max(r, c)`.
/// - **inversions**: `n×n` matrix inversions, including pseudo-inverses and
///   the ridged moment-form conversions.
///
/// Only `product`, `marginalize` and `condition` record operations; additions,
/// permutations, determinants and the mode scan are not tallied.
#[derive(Debug, Default)]
pub struct OpCounter {
    inner: Mutex<BTreeMap<usize, OpCounts>>,
}

/// Operation counts for a single dimension.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub mat_vecs: u64,
    pub inversions: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    fn record_mat_vec(&self, n: usize) {
        self.inner.lock().unwrap().entry(n).or_default().mat_vecs += 1;
    }

    fn record_inversion(&self, n: usize) {
        self.inner.lock().unwrap().entry(n).or_default().inversions += 1;
    }

    /// Current totals by dimension.
    pub fn snapshot(&self) -> BTreeMap<usize, OpCounts> {
        self.inner.lock().unwrap().clone()
    }

    pub fn reset(&self) {
        self.inner.lock().unwrap().clear();
    }
}

/// Bundled operation context: weight mode, ridge and operation tally.
#[derive(Debug, Default)]
pub struct MixCtx {
    pub mode: WeightMode,
    pub ridge: f64,
    pub ops: OpCounter,
}

impl MixCtx {
    pub fn new(mode: WeightMode, ridge: f64) -> Self {
        Self { mode, ridge, ops: OpCounter::new() }
    }

    /// Exact weight bookkeeping with the default ridge.
    pub fn exact() -> Self {
        Self::new(WeightMode::Exact, DEFAULT_RIDGE)
    }

    /// Original-formulation weight bookkeeping with the default ridge.
    pub fn paper_faithful() -> Self {
        Self::new(WeightMode::PaperFaithful, DEFAULT_RIDGE)
    }

    /// Counted matrix–vector product.
    fn mat_vec(&self, m: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.ops.record_mat_vec(m.nrows().max(m.ncols()));
        m * v
    }

    /// Counted pseudo-inverse of a symmetric PSD matrix.
    fn pinv(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.ops.record_inversion(m.nrows());
        pinv_raw(m)
    }

    /// Counted moment-form conversion: returns `(Σ, M)` where `M` is the
    /// precision after the conditional ridge and `Σ = M⁻¹`.
    fn invert_ridged(&self, precision: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = precision.nrows();
        self.ops.record_inversion(n);
        let eigen = SymmetricEigen::new(precision.clone());
        let min_eig = eigen.eigenvalues.min();
        let shift = if min_eig < self.ridge { self.ridge } else { 0.0 };
        let mut ridged = precision.clone();
        for i in 0..n {
            ridged[(i, i)] += shift;
        }
        let mut scaled = eigen.eigenvectors.clone();
        for (j, lambda) in eigen.eigenvalues.iter().enumerate() {
            let inv = 1.0 / (lambda + shift);
            for i in 0..n {
                scaled[(i, j)] *= inv;
            }
        }
        let cov = sym_part(&(scaled * eigen.eigenvectors.transpose()));
        (cov, ridged)
    }
}

/// Ordered set of variable identifiers (canonical ascending order, no
/// duplicates). Variables are pixel indices in the inpainting application
/// but the algebra does not care what they denote.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VarSet(Vec<u32>);

impl VarSet {
    /// Builds a variable set from identifiers in any order.
    pub fn new(mut ids: Vec<u32>) -> Result<Self, MixError> {
        ids.sort_unstable();
        for pair in ids.windows(2) {
            if pair[0] == pair[1] {
                return Err(MixError::DuplicateVariable(pair[0]));
            }
        }
        Ok(Self(ids))
    }

    /// Single-variable set.
    pub fn singleton(id: u32) -> Self {
        Self(vec![id])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    /// Index of `id` in canonical order.
    pub fn position(&self, id: u32) -> Option<usize> {
        self.0.binary_search(&id).ok()
    }

    pub fn is_subset(&self, other: &VarSet) -> bool {
        self.0.iter().all(|&id| other.contains(id))
    }

    pub fn union(&self, other: &VarSet) -> VarSet {
        let mut ids: Vec<u32> = self.0.iter().chain(other.0.iter()).copied().collect();
        ids.sort_unstable();
        ids.dedup();
        VarSet(ids)
    }

    pub fn intersection(&self, other: &VarSet) -> VarSet {
        VarSet(self.0.iter().copied().filter(|&id| other.contains(id)).collect())
    }

    pub fn difference(&self, other: &VarSet) -> VarSet {
        VarSet(self.0.iter().copied().filter(|&id| !other.contains(id)).collect())
    }
}

/// One weighted Gaussian in canonical form.
///
/// Alongside the defining triple `(log β, Λ, η)` the component caches a
/// representative mean `μ̲`: any solution of `Λ·μ̲ = η` (the minimum-norm one
/// when `Λ` is singular). The density and the exact weight bookkeeping only
/// ever use `μ̲` through expressions that are invariant to which solution was
/// picked.
#[derive(Debug, Clone)]
pub struct GaussianComponent {
    log_weight: f64,
    precision: DMatrix<f64>,
    info: DVector<f64>,
    mean_rep: DVector<f64>,
}

impl GaussianComponent {
    /// Builds a component from canonical parameters, validating that the
    /// precision is symmetric PSD and that `η` is reachable as `Λ·μ̲`.
    pub fn from_canonical(
        log_weight: f64,
        precision: DMatrix<f64>,
        info: DVector<f64>,
    ) -> Result<Self, MixError> {
        let n = precision.nrows();
        if precision.ncols() != n {
            return Err(MixError::DimensionMismatch { expected: n, got: precision.ncols() });
        }
        if info.len() != n {
            return Err(MixError::DimensionMismatch { expected: n, got: info.len() });
        }
        check_symmetric(&precision)?;
        let precision = sym_part(&precision);
        check_psd(&precision)?;
        let mean_rep = pinv_raw(&precision) * &info;
        let residual = (&precision * &mean_rep - &info).norm();
        if residual > 1e-8 * (1.0 + info.norm()) {
            return Err(MixError::InfoOutsideRange { residual });
        }
        Ok(Self { log_weight, precision, info, mean_rep })
    }

    /// Builds a component from moment parameters (mean and covariance).
    /// Remember the convention: the density is `β·exp(−(x−μ)ᵀΣ⁻¹(x−μ))`
    /// without a 1/2, so `Σ` here is half the usual covariance of a
    /// normalized Gaussian.
    pub fn from_moment(
        log_weight: f64,
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
    ) -> Result<Self, MixError> {
        let n = covariance.nrows();
        if covariance.ncols() != n {
            return Err(MixError::DimensionMismatch { expected: n, got: covariance.ncols() });
        }
        if mean.len() != n {
            return Err(MixError::DimensionMismatch { expected: n, got: mean.len() });
        }
        check_symmetric(&covariance)?;
        let precision = sym_part(&covariance)
            .try_inverse()
            .ok_or(MixError::SingularCovariance)?;
        let precision = sym_part(&precision);
        check_psd(&precision)?;
        let info = &precision * &mean;
        Ok(Self { log_weight, precision, info, mean_rep: mean })
    }

    /// Internal constructor for operation results whose mean representative
    /// is already known; skips the validation solve.
    pub(crate) fn from_parts(
        log_weight: f64,
        precision: DMatrix<f64>,
        info: DVector<f64>,
        mean_rep: DVector<f64>,
    ) -> Self {
        debug_assert!(
            (&precision * &mean_rep - &info).norm() <= 1e-6 * (1.0 + info.norm()),
            "mean representative inconsistent with canonical parameters"
        );
        Self { log_weight, precision, info, mean_rep }
    }

    pub fn log_weight(&self) -> f64 {
        self.log_weight
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn info(&self) -> &DVector<f64> {
        &self.info
    }

    /// Representative mean: the unique mean when the precision is
    /// invertible, otherwise the minimum-norm solution of `Λ·μ̲ = η`.
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean_rep
    }

    pub fn dim(&self) -> usize {
        self.info.len()
    }

    /// `μ̲ᵀη`, the constant of the expanded exponent; invariant to the choice
    /// of mean representative.
    fn mean_dot_info(&self) -> f64 {
        self.mean_rep.dot(&self.info)
    }

    /// Log of this component's (unnormalized) density at `x`.
    pub fn log_density_at(&self, x: &DVector<f64>) -> f64 {
        let centered = x - &self.mean_rep;
        self.log_weight - quad_form(&self.precision, &centered)
    }

    fn is_flat(&self) -> bool {
        self.log_weight == 0.0
            && self.precision.iter().all(|&v| v == 0.0)
            && self.info.iter().all(|&v| v == 0.0)
    }
}

/// Weighted sum of canonical-form Gaussians over a common variable set.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    vars: VarSet,
    components: Vec<GaussianComponent>,
}

impl GaussianMixture {
    pub fn new(vars: VarSet, components: Vec<GaussianComponent>) -> Result<Self, MixError> {
        if vars.is_empty() {
            return Err(MixError::EmptyVariableSet);
        }
        if components.is_empty() {
            return Err(MixError::EmptyMixture);
        }
        for c in &components {
            if c.dim() != vars.len() {
                return Err(MixError::DimensionMismatch { expected: vars.len(), got: c.dim() });
            }
        }
        Ok(Self { vars, components })
    }

    /// The uniform (flat) mixture over `vars`: one component with zero
    /// precision, zero information and log-weight 0. It is the identity
    /// element of `product` and the initial value of every message.
    pub fn uniform(vars: VarSet) -> Result<Self, MixError> {
        if vars.is_empty() {
            return Err(MixError::EmptyVariableSet);
        }
        let n = vars.len();
        let comp = GaussianComponent::from_parts(
            0.0,
            DMatrix::zeros(n, n),
            DVector::zeros(n),
            DVector::zeros(n),
        );
        Ok(Self { vars, components: vec![comp] })
    }

    pub fn vars(&self) -> &VarSet {
        &self.vars
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    /// True when the mixture is exactly the uniform identity element.
    pub fn is_vacuous(&self) -> bool {
        self.components.len() == 1 && self.components[0].is_flat()
    }

    /// Log-density of the mixture at `x`, evaluated by log-sum-exp over the
    /// per-component exponents.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64, MixError> {
        if x.len() != self.vars.len() {
            return Err(MixError::DimensionMismatch { expected: self.vars.len(), got: x.len() });
        }
        let terms: Vec<f64> = self.components.iter().map(|c| c.log_density_at(x)).collect();
        Ok(log_sum_exp(&terms))
    }

    /// Density of the mixture at `x`. Prefer [`Self::log_density`] when the
    /// value may underflow.
    pub fn density(&self, x: &DVector<f64>) -> Result<f64, MixError> {
        Ok(self.log_density(x)?.exp())
    }

    /// Pointwise product of two mixtures over the union of their variable
    /// sets; operands are zero-padded onto missing variables. The result has
    /// one component per pair, ordered with `self`'s component index major.
    ///
    /// Weights follow `ctx.mode`: in `PaperFaithful` mode log-weights add; in
    /// `Exact` mode the displacement constant is subtracted so that
    /// `density(product) = density(a) · density(b)` pointwise.
    pub fn product(&self, other: &GaussianMixture, ctx: &MixCtx) -> Result<GaussianMixture, MixError> {
        let union = self.vars.union(&other.vars);
        let n = union.len();
        let embed_a = embedding(&self.vars, &union);
        let embed_b = embedding(&other.vars, &union);

        let padded_a: Vec<(DMatrix<f64>, DVector<f64>)> = self
            .components
            .iter()
            .map(|c| embed_component(c, &embed_a, n))
            .collect();
        let padded_b: Vec<(DMatrix<f64>, DVector<f64>)> = other
            .components
            .iter()
            .map(|c| embed_component(c, &embed_b, n))
            .collect();

        let mut components = Vec::with_capacity(self.components.len() * other.components.len());
        for (ca, (prec_a, info_a)) in self.components.iter().zip(&padded_a) {
            for (cb, (prec_b, info_b)) in other.components.iter().zip(&padded_b) {
                let precision = prec_a + prec_b;
                let info = info_a + info_b;
                let mean_rep = ctx.mat_vec(&ctx.pinv(&precision), &info);
                let log_weight = match ctx.mode {
                    WeightMode::PaperFaithful => ca.log_weight + cb.log_weight,
                    WeightMode::Exact => {
                        // Displacement constant c = μ̲ₐᵀηₐ + μ̲ᵦᵀηᵦ − μ̲'ᵀη';
                        // zero-padding leaves the operand dot products as in
                        // their native coordinates.
                        let c = ca.mean_dot_info() + cb.mean_dot_info() - mean_rep.dot(&info);
                        ca.log_weight + cb.log_weight - c
                    }
                };
                components.push(GaussianComponent::from_parts(log_weight, precision, info, mean_rep));
            }
        }
        GaussianMixture::new(union, components)
    }

    /// Marginalizes the mixture onto `keep ⊆ vars`, per component via moment
    /// form: the precision is inverted (ridged first when its smallest
    /// eigenvalue falls below `ctx.ridge`), the kept sub-blocks are extracted
    /// and converted back to canonical form.
    ///
    /// `keep == vars` returns the mixture unchanged (both modes, no
    /// operations tallied). In `Exact` mode the log of the analytic integral
    /// over the eliminated variables, `(m/2)·ln π − ½·ln det Λₑₑ`, is added
    /// to each log-weight; `PaperFaithful` leaves weights unchanged.
    pub fn marginalize(&self, keep: &VarSet, ctx: &MixCtx) -> Result<GaussianMixture, MixError> {
        if keep.is_empty() {
            return Err(MixError::EmptyKeep);
        }
        if !keep.is_subset(&self.vars) {
            return Err(MixError::NotSubset);
        }
        if keep.len() == self.vars.len() {
            return Ok(self.clone());
        }
        let keep_idx: Vec<usize> = keep.iter().map(|v| self.vars.position(v).unwrap()).collect();
        let drop_idx: Vec<usize> =
            (0..self.vars.len()).filter(|i| !keep_idx.contains(i)).collect();
        let eliminated = drop_idx.len();

        let mut components = Vec::with_capacity(self.components.len());
        for comp in &self.components {
            let (cov, ridged) = ctx.invert_ridged(&comp.precision);
            let mean = ctx.mat_vec(&cov, &comp.info);

            let cov_kk = cov.select_rows(keep_idx.iter()).select_columns(keep_idx.iter());
            let mean_k = mean.select_rows(keep_idx.iter());
            let precision = sym_part(&cov_kk)
                .try_inverse()
                .ok_or(MixError::SingularMatrix)?;
            ctx.ops.record_inversion(keep_idx.len());
            let precision = sym_part(&precision);
            let info = ctx.mat_vec(&precision, &mean_k);

            let log_weight = match ctx.mode {
                WeightMode::PaperFaithful => comp.log_weight,
                WeightMode::Exact => {
                    let ridged_ee =
                        ridged.select_rows(drop_idx.iter()).select_columns(drop_idx.iter());
                    comp.log_weight
                        + 0.5 * eliminated as f64 * std::f64::consts::PI.ln()
                        - 0.5 * log_det_spd(&ridged_ee).ok_or(MixError::SingularMatrix)?
                }
            };
            components.push(GaussianComponent::from_parts(log_weight, precision, info, mean_k));
        }
        GaussianMixture::new(keep.clone(), components)
    }

    /// Conditions the mixture on observed variable values, in canonical form:
    /// `Λ' = Λᵤᵤ` and `η' = ηᵤ − Λᵤₒ·xₒ` over the unobserved variables `u`.
    /// Each log-weight absorbs the exact restriction of the joint exponent at
    /// the observed values, so the result is the slice of the joint (not a
    /// renormalized conditional) in both weight modes.
    ///
    /// `observed` must be a proper subset of the variables; conditioning on
    /// nothing returns the mixture unchanged.
    pub fn condition(
        &self,
        observed: &VarSet,
        values: &DVector<f64>,
        ctx: &MixCtx,
    ) -> Result<GaussianMixture, MixError> {
        if !observed.is_subset(&self.vars) {
            return Err(MixError::ObservedNotSubset);
        }
        if values.len() != observed.len() {
            return Err(MixError::DimensionMismatch { expected: observed.len(), got: values.len() });
        }
        if observed.is_empty() {
            return Ok(self.clone());
        }
        if observed.len() == self.vars.len() {
            return Err(MixError::AllObserved);
        }
        let unknown = self.vars.difference(observed);
        let u_idx: Vec<usize> = unknown.iter().map(|v| self.vars.position(v).unwrap()).collect();
        let o_idx: Vec<usize> = observed.iter().map(|v| self.vars.position(v).unwrap()).collect();

        let mut components = Vec::with_capacity(self.components.len());
        for comp in &self.components {
            let prec_uu = sym_part(
                &comp.precision.select_rows(u_idx.iter()).select_columns(u_idx.iter()),
            );
            let prec_uo = comp.precision.select_rows(u_idx.iter()).select_columns(o_idx.iter());
            let prec_oo = comp.precision.select_rows(o_idx.iter()).select_columns(o_idx.iter());
            let info_u = comp.info.select_rows(u_idx.iter());
            let info_o = comp.info.select_rows(o_idx.iter());

            let info = &info_u - ctx.mat_vec(&prec_uo, values);
            let mean_rep = ctx.mat_vec(&ctx.pinv(&prec_uu), &info);
            // Exact restriction of the exponent: the terms that the slice at
            // x_o contributes beyond the new canonical pair.
            let oo_term = values.dot(&ctx.mat_vec(&prec_oo, values));
            let log_weight = comp.log_weight + mean_rep.dot(&info) - comp.mean_dot_info()
                - oo_term
                + 2.0 * values.dot(&info_o);
            components.push(GaussianComponent::from_parts(log_weight, prec_uu, info, mean_rep));
        }
        GaussianMixture::new(unknown, components)
    }

    /// Keeps the `max_components` components with the highest log-weights
    /// (stable on ties: the earlier index wins), preserving their original
    /// order, then normalizes so the maximum log-weight is 0.
    pub fn prune(&self, max_components: usize) -> Result<GaussianMixture, MixError> {
        if max_components == 0 {
            return Err(MixError::ZeroCap);
        }
        let mut order: Vec<usize> = (0..self.components.len()).collect();
        // Stable sort by descending log-weight keeps earlier indices first
        // among ties.
        order.sort_by(|&a, &b| {
            self.components[b]
                .log_weight
                .partial_cmp(&self.components[a].log_weight)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        order.truncate(max_components);
        order.sort_unstable();
        let components: Vec<GaussianComponent> =
            order.iter().map(|&i| self.components[i].clone()).collect();
        let mut pruned = GaussianMixture { vars: self.vars.clone(), components };
        pruned.normalize();
        Ok(pruned)
    }

    /// Shifts all log-weights so the maximum is exactly 0.
    pub fn normalize(&mut self) {
        let max = self
            .components
            .iter()
            .map(|c| c.log_weight)
            .fold(f64::NEG_INFINITY, f64::max);
        if max.is_finite() {
            for c in &mut self.components {
                c.log_weight -= max;
            }
        }
    }

    /// Most likely gray level of a univariate mixture.
    ///
    /// With a single invertible component the mode is its mean, rounded to
    /// the nearest integer and clamped to `[0, 255]`. Otherwise the density
    /// is evaluated at every integer gray level and the argmax is returned,
    /// lowest level winning ties.
    pub fn mode_scan(&self) -> Result<u8, MixError> {
        if self.vars.len() != 1 {
            return Err(MixError::NotUnivariate { dim: self.vars.len() });
        }
        if self.components.len() == 1 && self.components[0].precision[(0, 0)] > 0.0 {
            let mean = self.components[0].mean_rep[0];
            return Ok(mean.round().clamp(0.0, 255.0) as u8);
        }
        let mut best_level = 0u8;
        let mut best = f64::NEG_INFINITY;
        let mut x = DVector::zeros(1);
        for level in 0u16..=255 {
            x[0] = level as f64;
            let log_d = self.log_density(&x)?;
            if log_d > best {
                best = log_d;
                best_level = level as u8;
            }
        }
        Ok(best_level)
    }

    /// Re-labels the mixture's variables. `new_vars[i]` replaces the i-th
    /// variable in canonical order; rows and columns are permuted so the
    /// result is canonical over the new identifiers.
    pub fn relabel(&self, new_vars: &[u32]) -> Result<GaussianMixture, MixError> {
        if new_vars.len() != self.vars.len() {
            return Err(MixError::RelabelMismatch { expected: self.vars.len(), got: new_vars.len() });
        }
        let target = VarSet::new(new_vars.to_vec())?;
        // perm[k] = index (in the old order) of the variable that lands at
        // canonical position k of the target set.
        let mut perm: Vec<usize> = (0..new_vars.len()).collect();
        perm.sort_by_key(|&i| new_vars[i]);
        let components = self
            .components
            .iter()
            .map(|c| {
                let precision = c.precision.select_rows(perm.iter()).select_columns(perm.iter());
                let info = c.info.select_rows(perm.iter());
                let mean_rep = c.mean_rep.select_rows(perm.iter());
                GaussianComponent::from_parts(c.log_weight, precision, info, mean_rep)
            })
            .collect();
        GaussianMixture::new(target, components)
    }
}

/// `xᵀ M x` for symmetric `M`.
fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
    max + sum.ln()
}

fn sym_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<(), MixError> {
    let scale = m.iter().fold(0.0f64, |acc, &v| acc.max(v.abs())).max(1e-300);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_REL_TOL * scale {
                return Err(MixError::AsymmetricMatrix);
            }
        }
    }
    Ok(())
}

fn check_psd(m: &DMatrix<f64>) -> Result<(), MixError> {
    let eigen = SymmetricEigen::new(m.clone());
    let min_eigenvalue = eigen.eigenvalues.min();
    if min_eigenvalue < PSD_EIG_FLOOR {
        return Err(MixError::NotPositiveSemidefinite { min_eigenvalue });
    }
    Ok(())
}

/// Pseudo-inverse of a symmetric PSD matrix by eigendecomposition;
/// eigenvalues below a relative cutoff count as zero.
fn pinv_raw(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let eigen = SymmetricEigen::new(m.clone());
    let max_eig = eigen.eigenvalues.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let cutoff = (max_eig * PINV_REL_CUTOFF).max(1e-300);
    let mut scaled = eigen.eigenvectors.clone();
    for (j, lambda) in eigen.eigenvalues.iter().enumerate() {
        let inv = if lambda.abs() > cutoff { 1.0 / lambda } else { 0.0 };
        for i in 0..n {
            scaled[(i, j)] *= inv;
        }
    }
    sym_part(&(scaled * eigen.eigenvectors.transpose()))
}

/// Log-determinant of a symmetric positive definite matrix.
fn log_det_spd(m: &DMatrix<f64>) -> Option<f64> {
    if m.nrows() == 0 {
        return Some(0.0);
    }
    if let Some(chol) = Cholesky::new(m.clone()) {
        let l = chol.l();
        return Some(2.0 * (0..m.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>());
    }
    // Near the PD boundary Cholesky can fail where the eigendecomposition
    // still gives a usable answer.
    let eigen = SymmetricEigen::new(m.clone());
    if eigen.eigenvalues.iter().any(|&v| v <= 0.0) {
        return None;
    }
    Some(eigen.eigenvalues.iter().map(|v| v.ln()).sum())
}

/// Positions of `vars` inside `union`.
fn embedding(vars: &VarSet, union: &VarSet) -> Vec<usize> {
    vars.iter().map(|v| union.position(v).unwrap()).collect()
}

/// Zero-pads a component's canonical parameters onto the union coordinates.
fn embed_component(
    comp: &GaussianComponent,
    map: &[usize],
    union_len: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut precision = DMatrix::zeros(union_len, union_len);
    let mut info = DVector::zeros(union_len);
    for (a, &ia) in map.iter().enumerate() {
        info[ia] = comp.info[a];
        for (b, &ib) in map.iter().enumerate() {
            precision[(ia, ib)] = comp.precision[(a, b)];
        }
    }
    (precision, info)
}

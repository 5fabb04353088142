//! Belief propagation over the clique graph: the inpainting engine.
//!
//! A run proceeds in stages:
//!
//! 1. The learned clique potential (a Gaussian mixture over the placeholder
//!    patch variables `{0,1,2,3}`) is relabeled onto every clique's pixel
//!    ids and conditioned on the clique's known pixels, leaving a mixture
//!    over just its unknown pixels.
//! 2. Messages — mixtures over edge separators — start uniform and are
//!    updated along the schedule. A message `i → j` multiplies clique `i`'s
//!    conditioned potential with the incoming messages from all other
//!    neighbors, then marginalizes onto the separator with `j`.
//! 3. After each iteration every unknown pixel is estimated from a clique
//!    belief (potential × all incoming messages) marginalized down to that
//!    pixel, taking the most likely gray level.
//!
//! Mixture growth is controlled by pruning to `max_components` after every
//! pairwise product rather than once per message: a clique potential alone
//! has `k³` components, so deferring the prune would multiply mixture sizes
//! per neighbor and make anything beyond tiny caps intractable. Beliefs use
//! their own (larger) cap, `belief_cap`; with the default caps the belief
//! products never exceed it, so belief pruning only engages for large
//! `max_components`. Messages still at their uniform initial value are
//! skipped as exact multiplicative identities, which makes the first sweep
//! of a run noticeably cheaper.
//!
//! Every matrix inversion and matrix–vector product performed by the
//! mixture algebra is tallied per dimension; [`RunStats`] carries the
//! per-iteration tables, per-iteration wall-clock timings, pixel estimates
//! and change summaries. The text export ([`RunStats::write_text`])
//! deliberately omits wall-clock values so identical runs write identical
//! bytes.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DVector;
use thiserror::Error;

use crate::gaussmix::{GaussianMixture, MixCtx, MixError, OpCounts, VarSet, WeightMode};
use crate::graph::{
    build_graph, make_schedule, CliqueGraph, GraphError, Schedule, ScheduleKind, ScheduleMode,
};
use crate::imageio::{GrayImage, InpaintMask};
use crate::prior::{build_clique_potential, PriorError, PriorModel};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("image is {0}x{1} but mask is {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("clique {0} does not span a full window, cannot apply the patch potential")]
    NonWindowClique(u32),
    #[error("pixel {0} is not covered by any clique")]
    UncoveredPixel(u32),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("prior model is unusable: {0}")]
    Prior(#[from] PriorError),
    #[error("numerical failure during propagation: {0}")]
    Numerical(#[from] MixError),
}

/// How a pixel covered by several cliques gets its estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PixelEstimate {
    /// Use the belief of the lowest-id clique covering the pixel.
    #[default]
    LowestClique,
    /// Average the modes reported by every covering clique.
    AverageModes,
}

/// Whether messages computed within an iteration see each other.
///
/// Two-pass schedules always run in place — the sweeps are sequential by
/// construction — so this setting only affects loopy propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateOrder {
    /// Each message immediately replaces the previous one.
    #[default]
    InPlace,
    /// All messages of an iteration are computed from the values the
    /// iteration started with.
    Synchronous,
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The largest estimate change fell below the convergence threshold.
    Converged,
    /// The iteration budget ran out first.
    IterationCap,
    /// The mask had no unknown pixels.
    NoWork,
    /// A two-pass sweep finished; its result is exact, so iterating further
    /// would change nothing.
    TwoPassComplete,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Converged => "converged",
            StopReason::IterationCap => "iteration_cap",
            StopReason::NoWork => "no_work",
            StopReason::TwoPassComplete => "two_pass_complete",
        })
    }
}

/// Propagation settings. `Default` gives the standard configuration:
/// exact weights, single-component messages, three iterations, convergence
/// threshold 0.1 gray levels, ridge 1e-6, automatic schedule, lowest-clique
/// estimates, in-place updates and a belief cap of 81 components.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub weight_mode: WeightMode,
    /// Component cap applied to messages and to every intermediate product.
    pub max_components: usize,
    /// Maximum number of iterations (a two-pass sweep needs only one).
    pub iterations: usize,
    /// Stop once no pixel estimate moved by at least this many gray levels.
    pub convergence_tol: f64,
    /// Ridge added to near-singular precisions during marginalization.
    pub ridge: f64,
    pub schedule: ScheduleMode,
    pub pixel_estimate: PixelEstimate,
    pub update_order: UpdateOrder,
    /// Component cap for belief products (messages use `max_components`).
    pub belief_cap: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            weight_mode: WeightMode::Exact,
            max_components: 1,
            iterations: 3,
            convergence_tol: 0.1,
            ridge: crate::gaussmix::DEFAULT_RIDGE,
            schedule: ScheduleMode::Auto,
            pixel_estimate: PixelEstimate::LowestClique,
            update_order: UpdateOrder::InPlace,
            belief_cap: 81,
        }
    }
}

impl EngineConfig {
    fn validate(&self) -> Result<(), EngineError> {
        if self.max_components == 0 {
            return Err(EngineError::InvalidConfig("max_components must be at least 1".into()));
        }
        if self.belief_cap == 0 {
            return Err(EngineError::InvalidConfig("belief_cap must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(EngineError::InvalidConfig("iterations must be at least 1".into()));
        }
        if self.convergence_tol <= 0.0 || !self.convergence_tol.is_finite() {
            return Err(EngineError::InvalidConfig(
                "convergence_tol must be positive and finite".into(),
            ));
        }
        if self.ridge < 0.0 || !self.ridge.is_finite() {
            return Err(EngineError::InvalidConfig("ridge must be non-negative and finite".into()));
        }
        Ok(())
    }
}

/// Per-iteration observations.
#[derive(Debug, Clone)]
pub struct IterationStats {
    /// Mean absolute estimate change against the previous iteration (the
    /// input image's values for iteration 1).
    pub mean_change: f64,
    /// Largest absolute estimate change.
    pub max_change: f64,
    /// Wall-clock seconds the iteration took (message passes plus
    /// estimation).
    pub wall_seconds: f64,
    /// Matrix operations tallied during this iteration, by dimension.
    pub ops: BTreeMap<usize, OpCounts>,
    /// Pixel estimates, parallel to [`RunStats::unknown_pixels`].
    pub estimates: Vec<f64>,
}

/// Everything a run reports besides the image itself.
#[derive(Debug, Clone)]
pub struct RunStats {
    /// Row-major ids of the unknown pixels, ascending.
    pub unknown_pixels: Vec<u32>,
    /// Matrix operations spent conditioning the clique potentials, before
    /// the first iteration.
    pub setup_ops: BTreeMap<usize, OpCounts>,
    pub iterations: Vec<IterationStats>,
    pub stop: StopReason,
}

impl RunStats {
    /// Total operation table: setup plus every iteration, by dimension.
    pub fn count_ops(&self) -> BTreeMap<usize, OpCounts> {
        let mut total = self.setup_ops.clone();
        for it in &self.iterations {
            for (&n, &c) in &it.ops {
                let e = total.entry(n).or_default();
                e.mat_vecs += c.mat_vecs;
                e.inversions += c.inversions;
            }
        }
        total
    }

    /// Renders the stats as a deterministic text report:
    ///
    /// ```text
    /// inpaint-stats v1
    /// unknown_pixels <count>
    /// pixels <id> <id> …
    /// stop <reason>
    /// setup dim <n> mat_vecs <m> inversions <k>      (one line per dimension)
    /// iteration <t> mean_change <v> max_change <v>
    /// iteration <t> ops dim <n> mat_vecs <m> inversions <k>
    /// iteration <t> estimates <v> <v> …
    /// ```
    ///
    /// Floats use Rust's shortest round-trip formatting. Wall-clock timings
    /// are intentionally not included: two runs with identical inputs must
    /// produce byte-identical reports.
    pub fn write_text(&self) -> String {
        let mut out = String::from("inpaint-stats v1\n");
        out.push_str(&format!("unknown_pixels {}\n", self.unknown_pixels.len()));
        let ids: Vec<String> = self.unknown_pixels.iter().map(u32::to_string).collect();
        out.push_str(&format!("pixels {}\n", ids.join(" ")));
        out.push_str(&format!("stop {}\n", self.stop));
        for (n, c) in &self.setup_ops {
            out.push_str(&format!(
                "setup dim {n} mat_vecs {} inversions {}\n",
                c.mat_vecs, c.inversions
            ));
        }
        for (idx, it) in self.iterations.iter().enumerate() {
            let t = idx + 1;
            out.push_str(&format!(
                "iteration {t} mean_change {} max_change {}\n",
                it.mean_change, it.max_change
            ));
            for (n, c) in &it.ops {
                out.push_str(&format!(
                    "iteration {t} ops dim {n} mat_vecs {} inversions {}\n",
                    c.mat_vecs, c.inversions
                ));
            }
            let est: Vec<String> = it.estimates.iter().map(f64::to_string).collect();
            out.push_str(&format!("iteration {t} estimates {}\n", est.join(" ")));
        }
        out
    }
}

/// Messages keyed by directed edge `(source, target)`.
pub type MessageMap = BTreeMap<(u32, u32), GaussianMixture>;

/// Relabels the patch potential onto every clique and conditions it on the
/// clique's known pixels, leaving one mixture per clique over its unknown
/// pixels. The patch potential's placeholder variables `{0,1,2,3}` map to
/// the window's pixels row-major (top-left, top-right, bottom-left,
/// bottom-right), which for a 2×2 window is exactly ascending id order.
pub fn condition_potentials(
    graph: &CliqueGraph,
    image: &GrayImage,
    base: &GaussianMixture,
    ctx: &MixCtx,
) -> Result<Vec<GaussianMixture>, EngineError> {
    let mut out = Vec::with_capacity(graph.len());
    for (id, clique) in graph.cliques().iter().enumerate() {
        if clique.vars.len() != base.vars().len() {
            return Err(EngineError::NonWindowClique(id as u32));
        }
        let relabeled = base.relabel(clique.vars.as_slice())?;
        let known = clique.vars.difference(&clique.unknown);
        if known.is_empty() {
            out.push(relabeled);
            continue;
        }
        let values = DVector::from_iterator(
            known.len(),
            known.iter().map(|pid| {
                let x = pid % image.width();
                let y = pid / image.width();
                image.get(x, y)
            }),
        );
        out.push(relabeled.condition(&known, &values, ctx)?);
    }
    Ok(out)
}

/// Uniform starting messages for both directions of every edge.
pub fn init_messages(graph: &CliqueGraph) -> Result<MessageMap, EngineError> {
    let mut messages = MessageMap::new();
    for &(a, b) in graph.edges() {
        let sep = graph.separator(a, b);
        messages.insert((a, b), GaussianMixture::uniform(sep.clone())?);
        messages.insert((b, a), GaussianMixture::uniform(sep)?);
    }
    Ok(messages)
}

/// Computes the message `source → target` from `source`'s potential and the
/// incoming messages of its other neighbors (ascending id order), pruning
/// to `max_components` after every pairwise product and after the final
/// marginalization onto the separator.
fn compute_message(
    graph: &CliqueGraph,
    potentials: &[GaussianMixture],
    incoming: &MessageMap,
    source: u32,
    target: u32,
    max_components: usize,
    ctx: &MixCtx,
) -> Result<GaussianMixture, EngineError> {
    let mut acc = potentials[source as usize].clone();
    for &k in graph.neighbors(source) {
        if k == target {
            continue;
        }
        let msg = &incoming[&(k, source)];
        if msg.is_vacuous() {
            continue;
        }
        acc = acc.product(msg, ctx)?.prune(max_components)?;
    }
    let sep = graph.separator(source, target);
    Ok(acc.marginalize(&sep, ctx)?.prune(max_components)?)
}

/// Runs one iteration of the schedule over the messages. Loopy schedules
/// honor `update_order`; two-pass schedules always update in place, since
/// the outward sweep must see the inward results.
pub fn run_iteration(
    graph: &CliqueGraph,
    potentials: &[GaussianMixture],
    messages: &mut MessageMap,
    schedule: &Schedule,
    config: &EngineConfig,
    ctx: &MixCtx,
) -> Result<(), EngineError> {
    let synchronous = config.update_order == UpdateOrder::Synchronous
        && schedule.kind == ScheduleKind::Loopy;
    if synchronous {
        let frozen = messages.clone();
        for pass in &schedule.passes {
            for &(i, j) in pass {
                let m =
                    compute_message(graph, potentials, &frozen, i, j, config.max_components, ctx)?;
                messages.insert((i, j), m);
            }
        }
    } else {
        for pass in &schedule.passes {
            for &(i, j) in pass {
                let m = compute_message(
                    graph,
                    potentials,
                    messages,
                    i,
                    j,
                    config.max_components,
                    ctx,
                )?;
                messages.insert((i, j), m);
            }
        }
    }
    Ok(())
}

/// Belief of one clique: its potential times every incoming message, pruned
/// to `belief_cap` after each product.
pub fn clique_belief(
    graph: &CliqueGraph,
    potentials: &[GaussianMixture],
    messages: &MessageMap,
    id: u32,
    belief_cap: usize,
    ctx: &MixCtx,
) -> Result<GaussianMixture, EngineError> {
    let mut acc = potentials[id as usize].clone();
    for &k in graph.neighbors(id) {
        let msg = &messages[&(k, id)];
        if msg.is_vacuous() {
            continue;
        }
        acc = acc.product(msg, ctx)?.prune(belief_cap)?;
    }
    Ok(acc)
}

/// Estimates every pixel in `unknown_pixels` from the current messages.
/// Returns estimates parallel to the input list.
pub fn compute_estimates(
    graph: &CliqueGraph,
    potentials: &[GaussianMixture],
    messages: &MessageMap,
    unknown_pixels: &[u32],
    config: &EngineConfig,
    ctx: &MixCtx,
) -> Result<Vec<f64>, EngineError> {
    // Which cliques cover each pixel, ascending by clique id.
    let mut covering: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (id, clique) in graph.cliques().iter().enumerate() {
        for pid in clique.unknown.iter() {
            covering.entry(pid).or_default().push(id as u32);
        }
    }
    let mut beliefs: BTreeMap<u32, GaussianMixture> = BTreeMap::new();
    let belief_of = |id: u32,
                     beliefs: &mut BTreeMap<u32, GaussianMixture>|
     -> Result<GaussianMixture, EngineError> {
        if let Some(b) = beliefs.get(&id) {
            return Ok(b.clone());
        }
        let b = clique_belief(graph, potentials, messages, id, config.belief_cap, ctx)?;
        beliefs.insert(id, b.clone());
        Ok(b)
    };

    let mut estimates = Vec::with_capacity(unknown_pixels.len());
    for &pid in unknown_pixels {
        let cliques = covering.get(&pid).ok_or(EngineError::UncoveredPixel(pid))?;
        let estimate = match config.pixel_estimate {
            PixelEstimate::LowestClique => {
                let belief = belief_of(cliques[0], &mut beliefs)?;
                let marginal = belief.marginalize(&VarSet::singleton(pid), ctx)?;
                f64::from(marginal.mode_scan()?)
            }
            PixelEstimate::AverageModes => {
                let mut sum = 0.0;
                for &cid in cliques {
                    let belief = belief_of(cid, &mut beliefs)?;
                    let marginal = belief.marginalize(&VarSet::singleton(pid), ctx)?;
                    sum += f64::from(marginal.mode_scan()?);
                }
                sum / cliques.len() as f64
            }
        };
        estimates.push(estimate);
    }
    Ok(estimates)
}

fn ops_delta(
    now: &BTreeMap<usize, OpCounts>,
    before: &BTreeMap<usize, OpCounts>,
) -> BTreeMap<usize, OpCounts> {
    let mut out = BTreeMap::new();
    for (&n, &c) in now {
        let b = before.get(&n).copied().unwrap_or_default();
        let d = OpCounts {
            mat_vecs: c.mat_vecs - b.mat_vecs,
            inversions: c.inversions - b.inversions,
        };
        if d != OpCounts::default() {
            out.insert(n, d);
        }
    }
    out
}

/// Inpaints the image's masked pixels. Returns the completed image and the
/// run's statistics; pixels outside the mask are passed through untouched.
///
/// Stops early when the largest estimate change drops below
/// `convergence_tol`, or immediately after a two-pass sweep (whose result
/// is already exact). A mask without unknown pixels returns the input
/// unchanged with [`StopReason::NoWork`]. Estimate changes are expected to
/// shrink as iterations proceed; if the maximum change grows instead, a
/// warning is logged but the run continues.
pub fn run(
    image: &GrayImage,
    mask: &InpaintMask,
    model: &PriorModel,
    config: &EngineConfig,
) -> Result<(GrayImage, RunStats), EngineError> {
    config.validate()?;
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(EngineError::DimensionMismatch(
            image.width(),
            image.height(),
            mask.width(),
            mask.height(),
        ));
    }
    let unknown_pixels: Vec<u32> = mask
        .unknown()
        .iter()
        .enumerate()
        .filter(|&(_, &u)| u)
        .map(|(i, _)| i as u32)
        .collect();
    if unknown_pixels.is_empty() {
        let stats = RunStats {
            unknown_pixels,
            setup_ops: BTreeMap::new(),
            iterations: Vec::new(),
            stop: StopReason::NoWork,
        };
        return Ok((image.clone(), stats));
    }

    let graph = build_graph(mask)?;
    let schedule = make_schedule(&graph, config.schedule)?;
    let ctx = MixCtx::new(config.weight_mode, config.ridge);
    // The one-time potential assembly is not part of propagation cost, so
    // it runs on a scratch tally.
    let scratch = MixCtx::new(config.weight_mode, config.ridge);
    let base = build_clique_potential(model, &scratch)?;
    let potentials = condition_potentials(&graph, image, &base, &ctx)?;
    let setup_ops = ctx.ops.snapshot();

    let mut messages = init_messages(&graph)?;
    let mut previous: Vec<f64> = unknown_pixels
        .iter()
        .map(|&pid| image.get(pid % image.width(), pid / image.width()))
        .collect();
    let mut iterations = Vec::new();
    let mut stop = StopReason::IterationCap;
    let mut prev_max_change: Option<f64> = None;
    let mut ops_before = setup_ops.clone();

    for iter in 1..=config.iterations {
        let started = Instant::now();
        run_iteration(&graph, &potentials, &mut messages, &schedule, config, &ctx)?;
        let estimates =
            compute_estimates(&graph, &potentials, &messages, &unknown_pixels, config, &ctx)?;
        let wall_seconds = started.elapsed().as_secs_f64();

        let mut max_change = 0.0f64;
        let mut sum_change = 0.0f64;
        for (&now, &was) in estimates.iter().zip(&previous) {
            let d = (now - was).abs();
            sum_change += d;
            max_change = max_change.max(d);
        }
        let mean_change = sum_change / estimates.len() as f64;

        let snapshot = ctx.ops.snapshot();
        let ops = ops_delta(&snapshot, &ops_before);
        ops_before = snapshot;

        iterations.push(IterationStats {
            mean_change,
            max_change,
            wall_seconds,
            ops,
            estimates: estimates.clone(),
        });
        if let Some(pm) = prev_max_change {
            if max_change > pm + 1e-12 {
                log::warn!(
                    "iteration {iter}: max estimate change grew from {pm:.4} to \
                     {max_change:.4}; propagation may be oscillating"
                );
            }
        }
        prev_max_change = Some(max_change);
        previous = estimates;

        if schedule.kind == ScheduleKind::TwoPass {
            stop = StopReason::TwoPassComplete;
            break;
        }
        if max_change < config.convergence_tol {
            stop = StopReason::Converged;
            break;
        }
    }

    let mut out = image.clone();
    for (&pid, &value) in unknown_pixels.iter().zip(&previous) {
        out.data_mut()[pid as usize] = value;
    }
    Ok((out, RunStats { unknown_pixels, setup_ops, iterations, stop }))
}

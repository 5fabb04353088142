//! Clique graph construction and message schedules.
//!
//! Inpainting runs belief propagation over a graph whose nodes are 2×2
//! image windows ("cliques") that contain at least one unknown pixel. Pixel
//! variables are numbered row-major (`id = y·width + x`). Two cliques are
//! connected whenever they share an unknown pixel; the shared unknowns form
//! the edge's separator, which is what messages are defined over.
//!
//! Every unknown pixel must be coverable by fully-inside windows on all
//! sides, so masks that mark pixels on the outermost row or column are
//! rejected. A consequence worth knowing: an interior unknown pixel lies in
//! exactly four windows which all share it pairwise, so graphs built from
//! real masks always contain cycles. Acyclic ("forest") graphs — on which a
//! single inward/outward sweep is exact — only arise from hand-picked
//! clique subsets, which [`CliqueGraph::from_cliques`] exists to build.
//!
//! Schedules list directed edges `(source, target)` in the order messages
//! should be sent:
//!
//! - [`ScheduleMode::TwoPass`] (forests only) sweeps leaves-to-root, then
//!   root-to-leaves; per connected component the root is the lowest clique
//!   id. Both sweeps together form one engine iteration, after which the
//!   result is exact.
//! - [`ScheduleMode::Loopy`] sends every directed edge once per iteration,
//!   ascending by `(source, target)`.
//! - [`ScheduleMode::Auto`] picks two-pass when the graph is a forest and
//!   loopy otherwise.

use std::collections::VecDeque;

use thiserror::Error;

use crate::gaussmix::VarSet;
use crate::imageio::InpaintMask;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error(
        "mask marks {} unknown pixel(s) on the image border, which propagation cannot cover: {}",
        .pixels.len(),
        format_pixels(.pixels)
    )]
    UncoverableMask { pixels: Vec<(u32, u32)> },
    #[error("two-pass schedules require an acyclic clique graph")]
    NotAForest,
    #[error("clique's unknown variables must be a subset of its variables")]
    UnknownNotInVars,
}

fn format_pixels(pixels: &[(u32, u32)]) -> String {
    const SHOWN: usize = 8;
    let mut s = pixels
        .iter()
        .take(SHOWN)
        .map(|(x, y)| format!("({x}, {y})"))
        .collect::<Vec<_>>()
        .join(", ");
    if pixels.len() > SHOWN {
        s.push_str(&format!(", … {} more", pixels.len() - SHOWN));
    }
    s
}

/// One 2×2 window of the image, with its variable ids and the subset that
/// is unknown.
#[derive(Debug, Clone)]
pub struct Clique {
    /// Top-left corner of the window.
    pub x: u32,
    pub y: u32,
    /// All pixel variables in the window, canonical ascending order.
    pub vars: VarSet,
    /// The unknown pixel variables, a subset of `vars`.
    pub unknown: VarSet,
}

impl Clique {
    pub fn new(x: u32, y: u32, vars: VarSet, unknown: VarSet) -> Result<Self, GraphError> {
        if !unknown.is_subset(&vars) {
            return Err(GraphError::UnknownNotInVars);
        }
        Ok(Self { x, y, vars, unknown })
    }

    /// Builds the clique for the window with top-left `(x, y)` against a
    /// mask; the window must lie fully inside the mask.
    pub fn from_window(x: u32, y: u32, mask: &InpaintMask) -> Self {
        let w = mask.width();
        let ids = [y * w + x, y * w + x + 1, (y + 1) * w + x, (y + 1) * w + x + 1];
        let unknown: Vec<u32> = [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)]
            .iter()
            .filter(|&&(px, py)| mask.is_unknown(px, py))
            .map(|&(px, py)| py * w + px)
            .collect();
        Self {
            x,
            y,
            vars: VarSet::new(ids.to_vec()).expect("window pixel ids are distinct"),
            unknown: VarSet::new(unknown).expect("window pixel ids are distinct"),
        }
    }
}

/// Graph of cliques connected by shared unknown pixels. Clique ids are
/// indices into the clique list.
#[derive(Debug, Clone)]
pub struct CliqueGraph {
    cliques: Vec<Clique>,
    /// Undirected edges `(a, b)` with `a < b`, sorted.
    edges: Vec<(u32, u32)>,
    /// Sorted neighbor lists, indexed by clique id.
    adjacency: Vec<Vec<u32>>,
}

impl CliqueGraph {
    /// Builds a graph from an explicit clique list (ids follow input
    /// order), connecting every pair that shares an unknown variable. This
    /// is how acyclic graphs are constructed for exactness studies; masks
    /// go through [`build_graph`] instead.
    pub fn from_cliques(cliques: Vec<Clique>) -> Self {
        let mut edges = Vec::new();
        for i in 0..cliques.len() {
            for j in (i + 1)..cliques.len() {
                if !cliques[i].unknown.intersection(&cliques[j].unknown).is_empty() {
                    edges.push((i as u32, j as u32));
                }
            }
        }
        Self::assemble(cliques, edges)
    }

    fn assemble(cliques: Vec<Clique>, mut edges: Vec<(u32, u32)>) -> Self {
        edges.sort_unstable();
        let mut adjacency = vec![Vec::new(); cliques.len()];
        for &(a, b) in &edges {
            adjacency[a as usize].push(b);
            adjacency[b as usize].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Self { cliques, edges, adjacency }
    }

    pub fn cliques(&self) -> &[Clique] {
        &self.cliques
    }

    pub fn clique(&self, id: u32) -> &Clique {
        &self.cliques[id as usize]
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn neighbors(&self, id: u32) -> &[u32] {
        &self.adjacency[id as usize]
    }

    pub fn len(&self) -> usize {
        self.cliques.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cliques.is_empty()
    }

    /// Shared unknown variables of two cliques — the message domain of the
    /// edge between them.
    pub fn separator(&self, a: u32, b: u32) -> VarSet {
        self.cliques[a as usize].unknown.intersection(&self.cliques[b as usize].unknown)
    }

    /// Human-readable listing of cliques and edges, used by graph dumps.
    pub fn dump_text(&self) -> String {
        let fmt_vars = |v: &VarSet| {
            v.iter().map(|id| id.to_string()).collect::<Vec<_>>().join(" ")
        };
        let mut out = format!("cliques {}\n", self.cliques.len());
        for (id, c) in self.cliques.iter().enumerate() {
            out.push_str(&format!(
                "clique {id} window ({}, {}) vars [{}] unknown [{}]\n",
                c.x,
                c.y,
                fmt_vars(&c.vars),
                fmt_vars(&c.unknown)
            ));
        }
        out.push_str(&format!("edges {}\n", self.edges.len()));
        for &(a, b) in &self.edges {
            out.push_str(&format!(
                "edge {a} {b} separator [{}]\n",
                fmt_vars(&self.separator(a, b))
            ));
        }
        out
    }
}

/// Builds the clique graph for a mask: every fully-inside 2×2 window that
/// contains an unknown pixel becomes a clique (ids row-major by top-left
/// corner), and cliques sharing an unknown pixel are connected.
///
/// Unknown pixels on the outermost row or column are rejected with
/// [`GraphError::UncoverableMask`]. A mask with no unknown pixels yields an
/// empty graph.
pub fn build_graph(mask: &InpaintMask) -> Result<CliqueGraph, GraphError> {
    let (w, h) = (mask.width(), mask.height());
    let mut border = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.is_unknown(x, y) && (x == 0 || y == 0 || x == w - 1 || y == h - 1) {
                border.push((x, y));
            }
        }
    }
    if !border.is_empty() {
        return Err(GraphError::UncoverableMask { pixels: border });
    }
    if w < 2 || h < 2 {
        return Ok(CliqueGraph::assemble(Vec::new(), Vec::new()));
    }

    let mut cliques = Vec::new();
    let mut id_at = vec![u32::MAX; ((w - 1) as usize) * ((h - 1) as usize)];
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let clique = Clique::from_window(x, y, mask);
            if !clique.unknown.is_empty() {
                id_at[(y * (w - 1) + x) as usize] = cliques.len() as u32;
                cliques.push(clique);
            }
        }
    }

    // Windows further than one step apart share no pixels, so scanning the
    // eight surrounding windows finds exactly the pairs the all-pairs rule
    // would.
    let mut edges = Vec::new();
    for (i, c) in cliques.iter().enumerate() {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let nx = c.x as i64 + dx;
                let ny = c.y as i64 + dy;
                if nx < 0 || ny < 0 || nx > (w - 2) as i64 || ny > (h - 2) as i64 {
                    continue;
                }
                let j = id_at[(ny as u32 * (w - 1) + nx as u32) as usize];
                if j == u32::MAX || j as usize <= i {
                    continue;
                }
                if !c.unknown.intersection(&cliques[j as usize].unknown).is_empty() {
                    edges.push((i as u32, j));
                }
            }
        }
    }
    Ok(CliqueGraph::assemble(cliques, edges))
}

/// True when the graph contains no cycles (checked with union–find).
pub fn detect_tree(graph: &CliqueGraph) -> bool {
    let mut parent: Vec<usize> = (0..graph.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for &(a, b) in graph.edges() {
        let ra = find(&mut parent, a as usize);
        let rb = find(&mut parent, b as usize);
        if ra == rb {
            return false;
        }
        parent[ra] = rb;
    }
    true
}

/// How messages are scheduled over the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleMode {
    /// Two-pass on forests, loopy otherwise.
    #[default]
    Auto,
    /// Inward/outward sweep; errors on cyclic graphs.
    TwoPass,
    /// Repeated full sweeps of all directed edges.
    Loopy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    TwoPass,
    Loopy,
}

/// Ordered directed edges for one engine iteration. Two-pass schedules hold
/// two passes (inward then outward) and are exact after a single iteration;
/// loopy schedules hold one pass that the engine repeats.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub kind: ScheduleKind,
    /// Each pass is a list of `(source, target)` clique ids.
    pub passes: Vec<Vec<(u32, u32)>>,
}

/// Builds the message schedule for a graph.
pub fn make_schedule(graph: &CliqueGraph, mode: ScheduleMode) -> Result<Schedule, GraphError> {
    match mode {
        ScheduleMode::Loopy => Ok(loopy_schedule(graph)),
        ScheduleMode::TwoPass => {
            if !detect_tree(graph) {
                return Err(GraphError::NotAForest);
            }
            Ok(two_pass_schedule(graph))
        }
        ScheduleMode::Auto => {
            if detect_tree(graph) {
                Ok(two_pass_schedule(graph))
            } else {
                Ok(loopy_schedule(graph))
            }
        }
    }
}

/// Leaves-to-root then root-to-leaves sweep. Per component the root is the
/// lowest clique id; BFS over sorted neighbor lists assigns depths. The
/// inward pass sends child→parent edges ordered by descending child depth
/// (child id breaking ties), the outward pass sends parent→child ordered by
/// ascending child depth (then child id).
fn two_pass_schedule(graph: &CliqueGraph) -> Schedule {
    let n = graph.len();
    let mut depth = vec![usize::MAX; n];
    let mut parent = vec![u32::MAX; n];
    for root in 0..n {
        if depth[root] != usize::MAX {
            continue;
        }
        depth[root] = 0;
        let mut queue = VecDeque::from([root as u32]);
        while let Some(c) = queue.pop_front() {
            for &nb in graph.neighbors(c) {
                if depth[nb as usize] == usize::MAX {
                    depth[nb as usize] = depth[c as usize] + 1;
                    parent[nb as usize] = c;
                    queue.push_back(nb);
                }
            }
        }
    }
    let mut children: Vec<u32> =
        (0..n as u32).filter(|&c| parent[c as usize] != u32::MAX).collect();
    children.sort_by_key(|&c| (std::cmp::Reverse(depth[c as usize]), c));
    let inward: Vec<(u32, u32)> = children.iter().map(|&c| (c, parent[c as usize])).collect();
    children.sort_by_key(|&c| (depth[c as usize], c));
    let outward: Vec<(u32, u32)> = children.iter().map(|&c| (parent[c as usize], c)).collect();
    Schedule { kind: ScheduleKind::TwoPass, passes: vec![inward, outward] }
}

/// One pass over every directed edge, ascending by `(source, target)`.
fn loopy_schedule(graph: &CliqueGraph) -> Schedule {
    let mut pass = Vec::with_capacity(graph.edges().len() * 2);
    for &(a, b) in graph.edges() {
        pass.push((a, b));
        pass.push((b, a));
    }
    pass.sort_unstable();
    Schedule { kind: ScheduleKind::Loopy, passes: vec![pass] }
}

//! Hierarchical correspondence filtering on the micro-structure graphs.
//!
//! Two tiers run in sequence. The node tier scores every correspondence by
//! how many others preserve its pairwise distances and keeps the top
//! `k_opt`. The edge tier anchors edges at the best node, scores them with
//! the loose projection constraint, and verifies the winner with the tight
//! rotation-about-edge constraint solved by interval stabbing over `theta`.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{rotation_about_axis, rotation_between, Point3};

/// Edges shorter than this cannot define a direction.
const MIN_EDGE_LENGTH: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    /// Putative matches.
    C1,
    /// Maximal consensus after outlier removal.
    C2,
    /// Inliers re-selected with the coarse pose.
    C3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Point in the reference cloud `P`.
    pub p: Point3,
    /// Point in the moving cloud `Q`.
    pub q: Point3,
    /// Position in the original `C1` list.
    pub source_index: usize,
}

impl Correspondence {
    pub fn new(p: Point3, q: Point3, source_index: usize) -> Self {
        Self { p, q, source_index }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
    pub stage: Stage,
}

impl CorrespondenceSet {
    pub fn initial(pairs: Vec<Correspondence>) -> Self {
        Self {
            pairs,
            stage: Stage::C1,
        }
    }

    /// Builds a `C1` set from coordinate pairs, numbering them in order.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Point3, Point3)>) -> Self {
        Self::initial(
            pairs
                .into_iter()
                .enumerate()
                .map(|(i, (p, q))| Correspondence::new(p, q, i))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn source_indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|c| c.source_index).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.pairs {
            if c.p.iter().chain(c.q.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "correspondence {} has a non-finite coordinate",
                    c.source_index
                )));
            }
        }
        Ok(())
    }
}

/// Settings of the two-tier filter.
#[derive(Debug, Clone, PartialEq)]
pub struct RemovalParams {
    /// Voxel resolution `l` (meters).
    pub ell: f64,
    /// Inlier tolerance, `2 l`.
    pub epsilon: f64,
    /// Number of nodes kept by the node tier.
    pub k_opt: usize,
    /// When set, each node's reliability is estimated from this many random
    /// partners instead of all of them.
    pub sampled_partners: Option<usize>,
    /// Seed for the sampled estimate.
    pub seed: u64,
    /// How many of the most reliable nodes are tried as edge anchors. The
    /// anchor whose verified edge gathers the largest consensus wins.
    pub anchors: usize,
}

/// Default number of anchor nodes tried by [`remove_outliers`].
pub const DEFAULT_ANCHORS: usize = 8;

impl RemovalParams {
    pub fn new(ell: f64, k_opt: usize) -> Self {
        Self {
            ell,
            epsilon: 2.0 * ell,
            k_opt,
            sampled_partners: None,
            seed: 0,
            anchors: DEFAULT_ANCHORS,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.ell > 0.0 && self.ell.is_finite()) {
            return Err(Error::NonPositiveResolution(self.ell));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.k_opt < 3 {
            return Err(Error::InvalidParameter(format!(
                "k_opt must be at least 3, got {}",
                self.k_opt
            )));
        }
        if self.anchors == 0 {
            return Err(Error::InvalidParameter("anchors must be at least 1".into()));
        }
        Ok(())
    }
}

/// Node weight `exp(-x^2 / (0.6 l))`, with `x` and `l` both in meters.
pub fn node_weight(delta_d: f64, ell: f64) -> f64 {
    (-(delta_d * delta_d) / (0.6 * ell)).exp()
}

/// Length mismatch between edge `ij` in `P` and its counterpart in `Q`.
pub fn edge_length_mismatch(a: &Correspondence, b: &Correspondence) -> f64 {
    ((a.p - b.p).norm() - (a.q - b.q).norm()).abs()
}

fn adjacency(a: &Correspondence, b: &Correspondence, params: &RemovalParams) -> f64 {
    let dd = edge_length_mismatch(a, b);
    if dd <= params.epsilon {
        node_weight(dd, params.ell)
    } else {
        0.0
    }
}

/// Reliability of every node: the row sums of the weighted adjacency matrix.
///
/// Each row is summed over partners in ascending order, so the result does
/// not depend on the thread count.
pub fn node_reliabilities(corr: &CorrespondenceSet, params: &RemovalParams) -> Result<Vec<f64>> {
    let n = corr.len();
    if n < 2 {
        return Err(Error::TooFewCorrespondences { needed: 2, got: n });
    }
    let pairs = &corr.pairs;
    let scores = match params.sampled_partners {
        Some(m) if m < n - 1 => (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut sum = 0.0;
                for _ in 0..m {
                    let mut j = rng.random_range(0..n - 1);
                    if j >= i {
                        j += 1;
                    }
                    sum += adjacency(&pairs[i], &pairs[j], params);
                }
                sum * (n - 1) as f64 / m as f64
            })
            .collect(),
        _ => (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| adjacency(&pairs[i], &pairs[j], params))
                    .sum()
            })
            .collect(),
    };
    Ok(scores)
}

/// Orders nodes by reliability, highest first, ties by lower source index.
fn rank_order(corr: &CorrespondenceSet, reliabilities: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..corr.len()).collect();
    order.sort_by(|&a, &b| {
        reliabilities[b]
            .total_cmp(&reliabilities[a])
            .then(corr.pairs[a].source_index.cmp(&corr.pairs[b].source_index))
    });
    order
}

/// The `k_opt` most reliable correspondences, most reliable first.
pub fn select_top_nodes(
    corr: &CorrespondenceSet,
    reliabilities: &[f64],
    k_opt: usize,
) -> CorrespondenceSet {
    assert_eq!(corr.len(), reliabilities.len());
    let pairs = rank_order(corr, reliabilities)
        .into_iter()
        .take(k_opt)
        .map(|i| corr.pairs[i])
        .collect();
    CorrespondenceSet {
        pairs,
        stage: corr.stage,
    }
}

/// A pair of corresponding edges `(E_ij^P, E_ij^Q)`.
#[derive(Debug, Clone, Copy)]
pub struct EdgePair<'a> {
    pub i: &'a Correspondence,
    pub j: &'a Correspondence,
}

impl<'a> EdgePair<'a> {
    pub fn new(i: &'a Correspondence, j: &'a Correspondence) -> Self {
        Self { i, j }
    }

    fn degenerate(&self) -> Error {
        Error::DegenerateEdge {
            i: self.i.source_index,
            j: self.j.source_index,
        }
    }

    fn directions(&self) -> Result<(Vector3<f64>, Vector3<f64>)> {
        let ep = self.j.p - self.i.p;
        let eq = self.j.q - self.i.q;
        let (lp, lq) = (ep.norm(), eq.norm());
        if lp <= MIN_EDGE_LENGTH || lq <= MIN_EDGE_LENGTH {
            return Err(self.degenerate());
        }
        Ok((ep / lp, eq / lq))
    }
}

/// Loose constraint: difference of the projection lengths of `E_ik` onto
/// `E_ij` in both graphs, minus `epsilon`. Negative means consistent.
pub fn loose_constraint_f1(edge: &EdgePair, node_k: &Correspondence, epsilon: f64) -> Result<f64> {
    let dirs = edge.directions()?;
    Ok(loose_value(edge.i, &dirs, node_k, epsilon))
}

/// [`loose_constraint_f1`] with the unit edge directions already known.
fn loose_value(
    i: &Correspondence,
    (up, uq): &(Vector3<f64>, Vector3<f64>),
    node_k: &Correspondence,
    epsilon: f64,
) -> f64 {
    let lp = (node_k.p - i.p).dot(up).abs();
    let lq = (node_k.q - i.q).dot(uq).abs();
    (lp - lq).abs() - epsilon
}

/// Both graphs expressed around node `i`, with the `Q` edge rotated onto the
/// `P` edge. The only freedom left is a rotation `theta` about `axis`.
#[derive(Debug, Clone)]
pub struct EdgeFrame {
    pub axis: Vector3<f64>,
    align: Matrix3<f64>,
    origin_p: Point3,
    origin_q: Point3,
    basis: (Vector3<f64>, Vector3<f64>),
}

impl EdgeFrame {
    pub fn new(edge: &EdgePair) -> Result<Self> {
        let (up, uq) = edge.directions()?;
        let helper = if up.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let e1 = up.cross(&helper).normalize();
        let e2 = up.cross(&e1);
        Ok(Self {
            axis: up,
            align: rotation_between(&uq, &up),
            origin_p: edge.i.p,
            origin_q: edge.i.q,
            basis: (e1, e2),
        })
    }

    /// Node `k` in the edge frame: `(a, b)` with `a` from `P` and `b` from
    /// `Q` after alignment.
    pub fn local(&self, node_k: &Correspondence) -> (Vector3<f64>, Vector3<f64>) {
        (
            node_k.p - self.origin_p,
            self.align * (node_k.q - self.origin_q),
        )
    }

    fn polar(&self, v: &Vector3<f64>) -> (f64, f64, f64) {
        let h = v.dot(&self.axis);
        let x = v.dot(&self.basis.0);
        let y = v.dot(&self.basis.1);
        (h, x.hypot(y), y.atan2(x))
    }

    /// Set of `theta` for which node `k` satisfies the tight constraint.
    pub fn feasible_set(&self, node_k: &Correspondence, epsilon: f64) -> Feasible {
        let (a, b) = self.local(node_k);
        let (ha, ra, ang_a) = self.polar(&a);
        let (hb, rb, ang_b) = self.polar(&b);
        let h = ha - hb;
        let base = h * h + ra * ra + rb * rb - epsilon * epsilon;
        let scale = 2.0 * ra * rb;
        if scale <= f64::MIN_POSITIVE {
            return if base <= 0.0 {
                Feasible::Always
            } else {
                Feasible::Never
            };
        }
        let c = base / scale;
        if c <= -1.0 {
            Feasible::Always
        } else if c > 1.0 {
            Feasible::Never
        } else {
            Feasible::Arc {
                center: wrap_angle(ang_a - ang_b),
                half_width: c.acos(),
            }
        }
    }
}

/// Tight constraint: `||N_k^P - R(theta, E_ij) N_k^Q|| - epsilon` in the
/// edge frame. Negative means consistent.
pub fn tight_constraint_f2(
    edge: &EdgePair,
    node_k: &Correspondence,
    theta: f64,
    epsilon: f64,
) -> Result<f64> {
    let frame = EdgeFrame::new(edge)?;
    Ok(tight_residual(&frame, node_k, theta) - epsilon)
}

fn tight_residual(frame: &EdgeFrame, node_k: &Correspondence, theta: f64) -> f64 {
    let (a, b) = frame.local(node_k);
    // The axis is unit by construction.
    let r = rotation_about_axis(theta, &frame.axis).expect("unit axis");
    (a - r * b).norm()
}

/// Wraps into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Feasible {
    Never,
    Always,
    /// Closed arc `[center - half_width, center + half_width]`.
    Arc { center: f64, half_width: f64 },
}

impl Feasible {
    pub fn contains(&self, theta: f64) -> bool {
        match *self {
            Feasible::Never => false,
            Feasible::Always => true,
            Feasible::Arc { center, half_width } => {
                wrap_angle(theta - center).abs() <= half_width + 1e-12
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaConsensus {
    /// Rotation about the edge axis, in `(-pi, pi]`.
    pub theta: f64,
    /// Indices into the candidate slice, ascending.
    pub members: Vec<usize>,
}

/// Finds the `theta` stabbing the most feasible arcs.
///
/// Arcs are laid twice on `[0, 4 pi)` so that wrapping arcs need no special
/// case; the maximum over the doubled line equals the maximum on the circle.
/// The returned angle is the midpoint of the first maximal region.
pub fn theta_consensus(
    edge: &EdgePair,
    candidates: &[Correspondence],
    epsilon: f64,
) -> Result<ThetaConsensus> {
    let frame = EdgeFrame::new(edge)?;
    let sets: Vec<Feasible> = candidates
        .iter()
        .map(|c| frame.feasible_set(c, epsilon))
        .collect();

    let always = sets.iter().filter(|s| matches!(s, Feasible::Always)).count();
    let mut events: Vec<(f64, i32)> = Vec::new();
    for s in &sets {
        if let Feasible::Arc { center, half_width } = *s {
            let start = (center - half_width).rem_euclid(TAU);
            let end = start + 2.0 * half_width;
            events.extend([(start, 1), (end, -1), (start + TAU, 1), (end + TAU, -1)]);
        }
    }
    if events.is_empty() && always == 0 {
        return Err(Error::NoFeasibleNode);
    }
    // Openings before closings at equal positions: closed arcs that touch
    // overlap.
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));

    let mut theta = 0.0;
    let mut best = 0i32;
    let mut count = 0i32;
    for (idx, &(pos, delta)) in events.iter().enumerate() {
        count += delta;
        if delta > 0 && count > best {
            let next = events.get(idx + 1).map_or(pos, |e| e.0);
            best = count;
            theta = 0.5 * (pos + next);
        }
    }
    let theta = wrap_angle(theta);
    let members = sets
        .iter()
        .enumerate()
        .filter(|(_, s)| s.contains(theta))
        .map(|(i, _)| i)
        .collect();
    Ok(ThetaConsensus { theta, members })
}

/// Diagnostics of one filtering run.
#[derive(Debug, Clone)]
pub struct RemovalOutcome {
    /// The maximal consensus set, sorted by source index.
    pub consensus: CorrespondenceSet,
    /// Nodes kept by the node tier (after clamping to `|C1|`).
    pub k_opt: usize,
    /// Node reliabilities of `C1`, in input order.
    pub reliabilities: Vec<f64>,
    /// Source indices of the verified edge.
    pub edge: (usize, usize),
    /// Loose-constraint reliability of the verified edge.
    pub edge_reliability: usize,
    pub theta: f64,
}

/// Refines `C1` into the maximal consensus set `C2`.
pub fn remove_outliers(corr: &CorrespondenceSet, params: &RemovalParams) -> Result<RemovalOutcome> {
    params.validate()?;
    corr.validate()?;
    if corr.len() < 3 {
        return Err(Error::TooFewCorrespondences {
            needed: 3,
            got: corr.len(),
        });
    }
    let k_opt = params.k_opt.min(corr.len());
    let reliabilities = node_reliabilities(corr, params)?;
    let top = select_top_nodes(corr, &reliabilities, k_opt);
    let nodes = &top.pairs;
    let anchors = params.anchors.clamp(1, nodes.len());

    let mut best: Option<AnchorConsensus> = None;
    for a in 0..anchors {
        let Some(found) = anchor_consensus(nodes, a, params.epsilon)? else {
            continue;
        };
        if best.as_ref().is_none_or(|b| found.members.len() > b.members.len()) {
            best = Some(found);
        }
    }
    let best = best.ok_or(Error::ConsensusTooSmall(1))?;
    if best.members.len() < 3 {
        return Err(Error::ConsensusTooSmall(best.members.len()));
    }
    let mut consensus = best.members;
    consensus.sort_by_key(|c| c.source_index);
    Ok(RemovalOutcome {
        consensus: CorrespondenceSet {
            pairs: consensus,
            stage: Stage::C2,
        },
        k_opt,
        reliabilities,
        edge: best.edge,
        edge_reliability: best.edge_reliability,
        theta: best.theta,
    })
}

struct AnchorConsensus {
    members: Vec<Correspondence>,
    edge: (usize, usize),
    edge_reliability: usize,
    theta: f64,
}

/// Best edge anchored at `nodes[a]` under the loose constraint, verified
/// under the tight one. `None` when every anchored edge is degenerate.
fn anchor_consensus(nodes: &[Correspondence], a: usize, eps: f64) -> Result<Option<AnchorConsensus>> {
    let anchor = &nodes[a];
    let scores: Vec<Option<usize>> = (0..nodes.len())
        .into_par_iter()
        .map(|j| {
            if j == a {
                return None;
            }
            let dirs = EdgePair::new(anchor, &nodes[j]).directions().ok()?;
            let count = nodes
                .iter()
                .enumerate()
                .filter(|&(k, node)| k != a && k != j && loose_value(anchor, &dirs, node, eps) < 0.0)
                .count();
            Some(count)
        })
        .collect();

    let Some(best_j) = scores
        .iter()
        .enumerate()
        .filter_map(|(j, s)| s.map(|s| (j, s)))
        .max_by(|x, y| {
            x.1.cmp(&y.1)
                .then(nodes[y.0].source_index.cmp(&nodes[x.0].source_index))
        })
        .map(|(j, _)| j)
    else {
        return Ok(None);
    };
    let edge = EdgePair::new(anchor, &nodes[best_j]);

    let candidates: Vec<Correspondence> = nodes
        .iter()
        .enumerate()
        .filter(|&(k, node)| {
            k != a && k != best_j && loose_constraint_f1(&edge, node, eps).is_ok_and(|v| v < 0.0)
        })
        .map(|(_, node)| *node)
        .collect();

    let mut members = vec![*anchor, nodes[best_j]];
    let mut theta = 0.0;
    if !candidates.is_empty() {
        match theta_consensus(&edge, &candidates, eps) {
            Ok(tc) => {
                theta = tc.theta;
                members.extend(tc.members.iter().map(|&m| candidates[m]));
            }
            Err(Error::NoFeasibleNode) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(Some(AnchorConsensus {
        members,
        edge: (anchor.source_index, nodes[best_j].source_index),
        edge_reliability: candidates.len(),
        theta,
    }))
}

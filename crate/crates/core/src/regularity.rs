//! Shape analysis for tensor filtrations.
//!
//! Two numbers summarize how wild a filtration is. The length ratio `gamma`
//! compares touching B-spline supports within one stage: refine one region
//! much faster than a neighboring one and `gamma` blows up. The direction
//! parameter `beta` measures for how long a support in one direction can
//! survive unrefined while atoms keep shrinking through splits elsewhere;
//! chains of strictly nested atoms below a persistent support are the
//! obstruction, and `beta` is one more than the longest such chain.
//!
//! The module also builds dyadic extension schedules, a stress family whose
//! ratio stays below 2 for one order but degenerates for the next smaller
//! one, and audit routines for order reduction and for nested atom chains
//! at fixed rectangle distance.

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::partition::{Filtration1D, Partition1D, Split, TensorFiltration, TensorStep};
use crate::tensor_system::TensorSystem;

/// Consecutive atoms carrying one order-`r` B-spline of a factor stage.
///
/// Interior supports span exactly `r` atoms; near the interval ends the
/// clamped basis produces shorter ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SupportWindow {
    pub dir: usize,
    pub step: usize,
    pub first_atom: usize,
    pub last_atom: usize,
}

/// Atom index ranges `(first, last)` of all distinct order-`r` supports.
pub fn support_windows(part: &Partition1D, r: usize) -> Vec<(usize, usize)> {
    let atoms = part.atom_count();
    if r == 0 {
        return Vec::new();
    }
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(atoms + r - 1);
    for i in 0..atoms + r - 1 {
        let w = (i.saturating_sub(r - 1), i.min(atoms - 1));
        if out.last() != Some(&w) {
            out.push(w);
        }
    }
    out
}

/// Supports of order `orders[dir]` in direction `dir` after `step` global steps.
pub fn stage_support_windows(
    filt: &TensorFiltration,
    step: usize,
    dir: usize,
    r: usize,
) -> Result<Vec<SupportWindow>> {
    let part = filt.factor_stage(step, dir)?;
    Ok(support_windows(part, r)
        .into_iter()
        .map(|(first_atom, last_atom)| SupportWindow {
            dir,
            step,
            first_atom,
            last_atom,
        })
        .collect())
}

fn edge_position(part: &Partition1D, x: f64) -> Option<usize> {
    part.edges()
        .binary_search_by(|e| e.partial_cmp(&x).unwrap())
        .ok()
}

/// Whether the interval `(a, b)` is an order-`r` support of `part`.
///
/// Both endpoints must be edges. A contiguous run of `count` atoms is a
/// support when `count == r`, or when it is shorter but pinned to one of
/// the interval ends.
fn is_support_window(part: &Partition1D, r: usize, a: f64, b: f64) -> bool {
    let (Some(pa), Some(pb)) = (edge_position(part, a), edge_position(part, b)) else {
        return false;
    };
    let count = pb - pa;
    count == r || (count < r && (pa == 0 || pb == part.edges().len() - 1))
}

fn check_orders(filt: &TensorFiltration, orders: &[usize]) -> Result<()> {
    if orders.len() != filt.dim() {
        return Err(Error::DimensionMismatch {
            got: orders.len(),
            expected: filt.dim(),
        });
    }
    if orders.iter().any(|&r| r == 0) {
        return Err(Error::InvalidParameter("orders must be positive".into()));
    }
    Ok(())
}

/// Worst touching support pair: atom ranges `a` and `b` at one step.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GammaWitness {
    pub step: usize,
    pub dir: usize,
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaReport {
    pub per_direction: Vec<f64>,
    pub overall: f64,
    pub witness: Option<GammaWitness>,
}

fn scan_stage_dir(part: &Partition1D, r: usize) -> Option<((usize, usize), (usize, usize), f64)> {
    let ws = support_windows(part, r);
    let edges = part.edges();
    let len = |w: (usize, usize)| edges[w.1 + 1] - edges[w.0];
    let mut best: Option<((usize, usize), (usize, usize), f64)> = None;
    for (i, &wa) in ws.iter().enumerate() {
        for &wb in &ws[i + 1..] {
            // Touching or overlapping ranges; distinct windows only.
            if wb.0 > wa.1 + 1 || wa.0 > wb.1 + 1 {
                continue;
            }
            let (la, lb) = (len(wa), len(wb));
            let ratio = (la / lb).max(lb / la);
            if best.map_or(true, |(_, _, r0)| ratio > r0) {
                best = Some((wa, wb, ratio));
            }
        }
    }
    best
}

/// Largest length ratio of touching order-`orders[dir]` supports at one step,
/// maximized over directions.
pub fn stage_regularity(filt: &TensorFiltration, orders: &[usize], step: usize) -> Result<f64> {
    check_orders(filt, orders)?;
    let mut out = 1.0f64;
    for dir in 0..filt.dim() {
        let part = filt.factor_stage(step, dir)?;
        if let Some((_, _, r)) = scan_stage_dir(part, orders[dir]) {
            out = out.max(r);
        }
    }
    Ok(out)
}

/// Exact maximum length ratio of touching supports over all steps and
/// directions, with the worst pair as witness.
pub fn regularity_parameter(filt: &TensorFiltration, orders: &[usize]) -> Result<GammaReport> {
    check_orders(filt, orders)?;
    let mut per_direction = vec![1.0f64; filt.dim()];
    let mut witness: Option<GammaWitness> = None;
    for step in 0..=filt.len() {
        for dir in 0..filt.dim() {
            let part = filt.factor_stage(step, dir)?;
            if let Some((a, b, ratio)) = scan_stage_dir(part, orders[dir]) {
                per_direction[dir] = per_direction[dir].max(ratio);
                if witness.map_or(true, |w| ratio > w.ratio) {
                    witness = Some(GammaWitness {
                        step,
                        dir,
                        a,
                        b,
                        ratio,
                    });
                }
            }
        }
    }
    let overall = per_direction.iter().cloned().fold(1.0, f64::max);
    Ok(GammaReport {
        per_direction,
        overall,
        witness,
    })
}

/// Direction parameter, or a lower bound when the chain search hit the cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaResult {
    Finite(usize),
    CapExceeded { cap: usize },
}

impl BetaResult {
    pub fn is_finite(&self) -> bool {
        matches!(self, BetaResult::Finite(_))
    }

    pub fn value(&self) -> Option<usize> {
        match self {
            BetaResult::Finite(b) => Some(*b),
            BetaResult::CapExceeded { .. } => None,
        }
    }
}

impl Serialize for BetaResult {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BetaResult::Finite(b) => s.serialize_u64(*b as u64),
            BetaResult::CapExceeded { .. } => s.serialize_str("cap_exceeded"),
        }
    }
}

/// One atom of the chain: the step where it appears and its box.
#[derive(Debug, Clone, Serialize)]
pub struct ChainLink {
    pub step: usize,
    pub atom: Vec<(f64, f64)>,
}

/// Longest strictly nested atom chain found below a persistent support.
#[derive(Debug, Clone, Serialize)]
pub struct BetaWitness {
    pub dir: usize,
    pub start_step: usize,
    pub window: (f64, f64),
    pub window_atoms: (usize, usize),
    pub chain: Vec<ChainLink>,
}

/// Per direction, the global steps that split it, with the split points.
fn split_events(filt: &TensorFiltration) -> Result<Vec<Vec<(usize, f64)>>> {
    let mut events: Vec<Vec<(usize, f64)>> = vec![Vec::new(); filt.dim()];
    for t in 1..=filt.len() {
        let dir = filt.split_dir(t)?;
        let idx = filt.factor_steps(t)?[dir];
        let split = filt.factor(dir).splits()[idx - 1];
        events[dir].push((t, split.x));
    }
    Ok(events)
}

/// Earliest split strictly inside the box at a step `<= s_max`.
fn first_split_inside(
    events: &[Vec<(usize, f64)>],
    bx: &[(f64, f64)],
    s_max: usize,
) -> Option<(usize, usize, f64)> {
    let mut first: Option<(usize, usize, f64)> = None;
    for (dir, evs) in events.iter().enumerate() {
        let (a, b) = bx[dir];
        for &(t, x) in evs {
            if t > s_max {
                break;
            }
            if x > a && x < b {
                if first.map_or(true, |(t0, _, _)| t < t0) {
                    first = Some((t, dir, x));
                }
                break;
            }
        }
    }
    first
}

/// Chain length starting at the box (counting the box itself), together
/// with the links below it. A box dies when the first split lands inside
/// it; both halves are atoms from that step on, and the longer branch wins.
fn longest_chain(
    events: &[Vec<(usize, f64)>],
    bx: &[(f64, f64)],
    s_max: usize,
    limit: usize,
) -> (usize, Vec<ChainLink>) {
    if limit <= 1 {
        return (1, Vec::new());
    }
    let Some((t, dir, x)) = first_split_inside(events, bx, s_max) else {
        return (1, Vec::new());
    };
    let mut left = bx.to_vec();
    left[dir].1 = x;
    let mut right = bx.to_vec();
    right[dir].0 = x;
    let (dl, cl) = longest_chain(events, &left, s_max, limit - 1);
    let (dr, cr) = longest_chain(events, &right, s_max, limit - 1);
    let (d, child, tail) = if dl >= dr {
        (dl, left, cl)
    } else {
        (dr, right, cr)
    };
    let mut chain = Vec::with_capacity(tail.len() + 1);
    chain.push(ChainLink {
        step: t,
        atom: child,
    });
    chain.extend(tail);
    (1 + d, chain)
}

/// Smallest `beta` such that no support persists below a strictly nested
/// atom chain of length `beta`.
///
/// For every direction, starting step, and support window the search takes
/// the persistence horizon of the window, then walks the refinement tree of
/// every atom whose component lies inside the window. `beta` is one more
/// than the longest chain found; a chain of length `cap` stops the search
/// and only the lower bound is reported.
pub fn direction_regularity_parameter(
    filt: &TensorFiltration,
    orders: &[usize],
    cap: usize,
) -> Result<(BetaResult, Option<BetaWitness>)> {
    check_orders(filt, orders)?;
    if cap < 2 {
        return Err(Error::InvalidParameter(
            "chain search cap must be at least 2".into(),
        ));
    }
    let dim = filt.dim();
    let n_steps = filt.len();
    let events = split_events(filt)?;
    let mut best_len = 0usize;
    let mut best: Option<BetaWitness> = None;

    'all: for delta in 0..dim {
        let r = orders[delta];
        for n1 in 0..=n_steps {
            let part = filt.factor_stage(n1, delta)?;
            let edges = part.edges().to_vec();
            let counts = filt.atom_counts(n1)?;
            for (wlo, whi) in support_windows(part, r) {
                let (a, b) = (edges[wlo], edges[whi + 1]);
                let mut s_max = n1;
                while s_max < n_steps
                    && is_support_window(filt.factor_stage(s_max + 1, delta)?, r, a, b)
                {
                    s_max += 1;
                }
                let lo_of = |d: usize| if d == delta { wlo } else { 0 };
                let hi_of = |d: usize| if d == delta { whi } else { counts[d] - 1 };
                let mut idx: Vec<usize> = (0..dim).map(lo_of).collect();
                'boxes: loop {
                    let bx: Vec<(f64, f64)> = (0..dim)
                        .map(|d| filt.factor_stage(n1, d)?.atom(idx[d]))
                        .collect::<Result<_>>()?;
                    let (len, tail) = longest_chain(&events, &bx, s_max, cap);
                    if len > best_len {
                        best_len = len;
                        let mut chain = vec![ChainLink {
                            step: n1,
                            atom: bx,
                        }];
                        chain.extend(tail);
                        best = Some(BetaWitness {
                            dir: delta,
                            start_step: n1,
                            window: (a, b),
                            window_atoms: (wlo, whi),
                            chain,
                        });
                        if best_len >= cap {
                            break 'all;
                        }
                    }
                    let mut d = dim;
                    while d > 0 {
                        d -= 1;
                        if idx[d] < hi_of(d) {
                            idx[d] += 1;
                            for dd in d + 1..dim {
                                idx[dd] = lo_of(dd);
                            }
                            continue 'boxes;
                        }
                    }
                    break;
                }
            }
        }
    }
    let beta = if best_len >= cap {
        BetaResult::CapExceeded { cap }
    } else {
        BetaResult::Finite(best_len + 1)
    };
    Ok((beta, best))
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportWitness {
    pub gamma: Option<GammaWitness>,
    pub beta: Option<BetaWitness>,
}

/// Combined shape report for one filtration and one order vector.
#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub format_version: u32,
    pub orders: Vec<usize>,
    pub gamma: Vec<f64>,
    pub gamma_overall: f64,
    pub beta: BetaResult,
    pub beta_cap: usize,
    pub witness: ReportWitness,
}

pub fn regularity_report(
    filt: &TensorFiltration,
    orders: &[usize],
    cap: usize,
) -> Result<RegularityReport> {
    let g = regularity_parameter(filt, orders)?;
    let (beta, bw) = direction_regularity_parameter(filt, orders, cap)?;
    Ok(RegularityReport {
        format_version: 1,
        orders: orders.to_vec(),
        gamma: g.per_direction,
        gamma_overall: g.overall,
        beta,
        beta_cap: cap,
        witness: ReportWitness {
            gamma: g.witness,
            beta: bw,
        },
    })
}

impl RegularityReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Where to cut an atom during a dyadic extension level.
#[derive(Debug, Clone, Copy)]
pub enum SplitRule {
    Midpoint,
    /// Cut at `lo + f * (hi - lo)`; `f` must lie strictly between 0 and 1.
    Fraction(f64),
}

/// Extends the final stage of `base` by `levels` full splitting levels.
///
/// One level visits the directions round robin and splits every atom of the
/// visited factor once, in left-to-right order, so the per-direction level
/// counts never differ by more than one. The midpoint rule halves each
/// atom; after each complete level a factor's atom count has doubled.
pub fn dyadic_extension(
    base: &TensorFiltration,
    levels: usize,
    rule: SplitRule,
) -> Result<TensorFiltration> {
    let f = match rule {
        SplitRule::Midpoint => 0.5,
        SplitRule::Fraction(f) => {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "split fraction {f} must lie strictly between 0 and 1"
                )));
            }
            f
        }
    };
    dyadic_extension_with(base, levels, |_, _, (lo, hi)| lo + f * (hi - lo))
}

/// Like [`dyadic_extension`] with an arbitrary split point per atom.
///
/// The callback receives the direction, the ordinal of the atom within the
/// level sweep, and the atom; a returned point outside the open atom fails
/// the step.
pub fn dyadic_extension_with(
    base: &TensorFiltration,
    levels: usize,
    mut split_at: impl FnMut(usize, usize, (f64, f64)) -> f64,
) -> Result<TensorFiltration> {
    if levels == 0 {
        return Err(Error::InvalidParameter(
            "need at least one extension level".into(),
        ));
    }
    let mut out = base.clone();
    for _ in 0..levels {
        for dir in 0..out.dim() {
            let m = out.factor_stage(out.len(), dir)?.atom_count();
            for j in 0..m {
                // Splitting atom 2j keeps the not-yet-visited original
                // atoms at even positions.
                let idx = 2 * j;
                let bounds = out.factor_stage(out.len(), dir)?.atom(idx)?;
                let x = split_at(dir, j, bounds);
                out.push_step(TensorStep { dir, atom: idx, x })?;
            }
        }
    }
    Ok(out)
}

/// The stress family on `[-1, 1)`: a base partition with two long outer
/// atoms and a schedule cutting each outer atom into a descending run
/// toward the short middle atoms.
#[derive(Debug, Clone)]
pub struct ExampleFamily {
    pub epsilon: f64,
    /// Order whose touching ratio the schedule keeps below 2.
    pub order: usize,
    pub middle_atoms: usize,
    pub base: Partition1D,
    pub schedule: Vec<Split>,
    /// Cuts applied to each outer atom.
    pub rounds: usize,
}

/// Whether every stage of the replayed schedule keeps the touching ratio
/// strictly below 2. A schedule the partition itself rejects counts as
/// failed rather than an error.
fn schedule_stays_tame(base: &Partition1D, splits: &[Split], r: usize) -> bool {
    let Ok(filt) = Filtration1D::from_splits(base.clone(), splits) else {
        return false;
    };
    for t in 0..=filt.len() {
        let part = filt.stage(t).expect("stage within range");
        if let Some((_, _, ratio)) = scan_stage_dir(part, r) {
            if ratio >= 2.0 - 1e-9 {
                return false;
            }
        }
    }
    true
}

/// Candidate cut positions within an atom, as fractions of its length.
const CUT_FRACTIONS: [f64; 31] = [
    0.5, 0.52, 0.48, 0.54, 0.46, 0.56, 0.44, 0.58, 0.42, 0.6, 0.4, 0.62,
    0.38, 0.65, 0.35, 0.7, 0.3, 0.75, 0.25, 0.8, 0.2, 0.85, 0.15, 0.88,
    0.12, 0.92, 0.08, 0.95, 0.05, 0.97, 0.03,
];

/// Cut positions for an atom: the fraction grid plus positions anchored at
/// the scale `eps`, which matter when the feasible band for a cut is only
/// about `eps` wide.
fn cut_positions(a: f64, b: f64, eps: f64) -> Vec<f64> {
    let len = b - a;
    let mid = 0.5 * (a + b);
    let mut xs: Vec<f64> = CUT_FRACTIONS.iter().map(|&f| a + f * len).collect();
    for c in [0.25, 0.5, 0.75, 0.9] {
        xs.push(mid + c * eps);
        xs.push(mid - c * eps);
    }
    xs.extend([a + 0.5 * eps, a + eps, b - eps, b - 0.5 * eps]);
    xs.retain(|&x| x > a + 1e-3 * eps && x < b - 1e-3 * eps);
    xs
}

/// Worst touching ratio of the partition, or zero when no pair touches.
fn worst_touching_ratio(part: &Partition1D, r: usize) -> f64 {
    scan_stage_dir(part, r).map_or(0.0, |(_, _, ratio)| ratio)
}

/// Searches for the next left cut and its mirror so that both intermediate
/// stages keep the touching ratio below 2, then recurses on the remaining
/// rounds. Candidates are tried best margin first and the node budget
/// bounds the total work.
fn extend_schedule(
    cur: &Partition1D,
    eps: f64,
    r: usize,
    rounds_left: usize,
    schedule: &mut Vec<Split>,
    budget: &mut usize,
) -> bool {
    if rounds_left == 0 {
        return true;
    }
    if *budget == 0 {
        return false;
    }
    *budget -= 1;

    let limit = 2.0 - 1e-6;
    let mut candidates: Vec<(f64, usize, f64, Partition1D, usize, f64, Partition1D)> = Vec::new();
    for atom in 0..part_left_atoms(cur, eps) {
        let (a, b) = cur.atom(atom).expect("atom in range");
        for x in cut_positions(a, b, eps) {
            let Ok(after_left) = cur.refine(atom, x) else {
                continue;
            };
            let g1 = worst_touching_ratio(&after_left, r);
            if g1 >= limit {
                continue;
            }
            let xr = -x;
            let Ok(atom_r) = after_left.atom_of(xr) else {
                continue;
            };
            let Ok(after_both) = after_left.refine(atom_r, xr) else {
                continue;
            };
            let g2 = worst_touching_ratio(&after_both, r);
            if g2 >= limit {
                continue;
            }
            candidates.push((g1.max(g2), atom, x, after_left, atom_r, xr, after_both));
        }
    }
    candidates.sort_by(|p, q| p.0.total_cmp(&q.0));
    candidates.truncate(12);

    for (_, atom, x, _, atom_r, xr, after_both) in candidates {
        schedule.push(Split { atom, x });
        schedule.push(Split { atom: atom_r, x: xr });
        if extend_schedule(&after_both, eps, r, rounds_left - 1, schedule, budget) {
            return true;
        }
        schedule.pop();
        schedule.pop();
    }
    false
}

/// Number of leading atoms lying inside `[-1, -eps)`.
fn part_left_atoms(part: &Partition1D, eps: f64) -> usize {
    (0..part.atom_count())
        .take_while(|&i| {
            let (_, b) = part.atom(i).expect("atom in range");
            b <= -eps + 1e-12
        })
        .count()
}

/// Builds the family member with `epsilon = 1/ell` and `order - 1` equal
/// middle atoms.
///
/// The base atoms are `[-1, -eps)`, the middles, and `[eps, 1)`. The
/// schedule cuts each outer atom `max(1, floor(ln ell))` times, keeping
/// the two sides mirror images of each other. Cut positions come from a
/// bounded search that only accepts a cut when the touching ratio of
/// order `order` stays strictly below 2 at both intermediate stages, so
/// the finished schedule is tame by construction while the ratio for
/// windows one order shorter is about `ell / 2` already on the base.
pub fn make_example_filtration(ell: usize, order: usize) -> Result<ExampleFamily> {
    if ell < 2 {
        return Err(Error::InvalidParameter(format!(
            "ell = {ell} must be at least 2"
        )));
    }
    if order < 2 {
        return Err(Error::InvalidParameter(format!(
            "order = {order} leaves no middle atoms"
        )));
    }
    let eps = 1.0 / ell as f64;
    let m = order - 1;
    let mut breaks = vec![-eps];
    for j in 1..m {
        breaks.push(-eps + 2.0 * eps * j as f64 / m as f64);
    }
    breaks.push(eps);
    let base = Partition1D::new(-1.0, 1.0, &breaks)?;

    let rounds = ((ell as f64).ln().floor() as usize).max(1);
    let mut schedule = Vec::with_capacity(2 * rounds);
    let mut budget = 200_000usize;
    if !extend_schedule(&base, eps, order, rounds, &mut schedule, &mut budget)
        || !schedule_stays_tame(&base, &schedule, order)
    {
        return Err(Error::Degenerate(format!(
            "no outer refinement schedule with touching ratio below 2 found \
             for ell = {ell}, order = {order}"
        )));
    }
    Ok(ExampleFamily {
        epsilon: eps,
        order,
        middle_atoms: m,
        base,
        schedule,
        rounds,
    })
}

impl ExampleFamily {
    /// The schedule replayed on the base partition.
    pub fn to_filtration(&self) -> Result<Filtration1D> {
        Filtration1D::from_splits(self.base.clone(), &self.schedule)
    }

    /// Splits that first build the base from the trivial partition of
    /// `[-1, 1)` and then run the schedule.
    pub fn trivial_rooted_splits(&self) -> Result<Vec<Split>> {
        let mut cur = Partition1D::trivial(-1.0, 1.0)?;
        let mut splits = Vec::new();
        for &e in self.base.breakpoints() {
            let atom = cur.atom_of(e)?;
            splits.push(Split { atom, x: e });
            cur = cur.refine(atom, e)?;
        }
        splits.extend_from_slice(&self.schedule);
        Ok(splits)
    }

    /// Number of splits spent on base construction in the trivial-rooted
    /// replay.
    pub fn base_split_count(&self) -> usize {
        self.base.breakpoints().len()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReducedBeta {
    pub dir: usize,
    pub orders: Vec<usize>,
    pub beta: BetaResult,
}

/// Outcome of lowering one order component by one.
#[derive(Debug, Clone, Serialize)]
pub struct OrderReductionReport {
    pub gamma: f64,
    pub beta: BetaResult,
    pub reduced: Vec<ReducedBeta>,
    pub skipped: Option<String>,
}

/// Checks that the direction parameter stays finite after lowering the
/// order in each direction where `m` strictly exceeds `k`.
///
/// `gamma` is computed for `k` and the direction parameters for `m` and for
/// each reduced vector `m - e_i`. When no direction can be reduced, or the
/// parameter for `m` already hits the cap, the reduction is skipped with a
/// reason instead of reporting vacuous numbers.
pub fn validate_lemma_dir(
    filt: &TensorFiltration,
    k: &[usize],
    m: &[usize],
    cap: usize,
) -> Result<OrderReductionReport> {
    check_orders(filt, k)?;
    check_orders(filt, m)?;
    let gamma = regularity_parameter(filt, k)?.overall;
    let (beta, _) = direction_regularity_parameter(filt, m, cap)?;
    let mut reduced = Vec::new();
    let mut skipped = None;
    if !beta.is_finite() {
        skipped = Some("direction parameter for the full orders hit the search cap".into());
    } else {
        let dirs: Vec<usize> = (0..filt.dim()).filter(|&i| m[i] > k[i]).collect();
        if dirs.is_empty() {
            skipped = Some("no direction has a strictly larger order to reduce".into());
        }
        for i in dirs {
            let mut mp = m.to_vec();
            mp[i] -= 1;
            let (bp, _) = direction_regularity_parameter(filt, &mp, cap)?;
            reduced.push(ReducedBeta {
                dir: i,
                orders: mp,
                beta: bp,
            });
        }
    }
    Ok(OrderReductionReport {
        gamma,
        beta,
        reduced,
        skipped,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CombWitness {
    pub dir: usize,
    pub s: Vec<i64>,
    /// Indices into the system's function list, in chain order.
    pub members: Vec<usize>,
    pub bound_sum: usize,
}

/// Longest nested chains of atoms at fixed index distance from the
/// characteristic rectangles.
#[derive(Debug, Clone)]
pub struct CombReport {
    /// Distance vectors examined after the transverse-gap guard.
    pub searched: usize,
    pub max_card: usize,
    /// Largest chain cardinality divided by the off-direction distance sum.
    pub max_ratio: f64,
    pub witness: Option<CombWitness>,
}

impl Serialize for CombReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("CombReport", 4)?;
        st.serialize_field("searched", &self.searched)?;
        st.serialize_field("max_card", &self.max_card)?;
        st.serialize_field("max_ratio", &self.max_ratio)?;
        st.serialize_field("witness", &self.witness)?;
        st.end()
    }
}

fn iv_contains(outer: (f64, f64), inner: (f64, f64)) -> bool {
    inner.0 >= outer.0 && inner.1 <= outer.1
}

fn box_contains(outer: &[(f64, f64)], inner: &[(f64, f64)]) -> bool {
    outer.iter().zip(inner).all(|(o, i)| iv_contains(*o, *i))
}

/// Enumerates chains of functions whose shadow atoms, at constant index
/// distance `s` from the characteristic rectangles, decrease, while the
/// rectangle component in the chain direction is nested.
///
/// Only distance vectors with a gap of more than the order in the chain
/// direction are eligible; smaller gaps admit no chains by construction.
/// `cap` bounds the per-component distance range of the enumeration. The
/// reported ratio divides each chain's cardinality by
/// `sum over other directions of (1 + |s_j|)`; for one-dimensional systems
/// the raw cardinality is reported.
pub fn lemma_comb_audit(system: &TensorSystem, cap: usize) -> Result<CombReport> {
    let filt = system.filtration.as_ref();
    let dim = filt.dim();
    let final_counts = filt.atom_counts(filt.len())?;
    let mut searched = 0usize;
    let mut max_card = 0usize;
    let mut max_ratio = 0.0f64;
    let mut witness: Option<CombWitness> = None;

    struct Node {
        l: usize,
        c_box: Vec<(f64, f64)>,
        j_iv: (f64, f64),
    }

    for delta in 0..dim {
        let kd = system.orders[delta];
        let limits: Vec<i64> = final_counts
            .iter()
            .map(|&c| (c as i64 - 1).min(cap as i64))
            .collect();
        let mut s: Vec<i64> = limits.iter().map(|&l| -l).collect();
        'distances: loop {
            if s[delta].unsigned_abs() as usize > kd {
                searched += 1;
                let mut nodes: Vec<Node> = Vec::new();
                for (l, f) in system.functions.iter().enumerate() {
                    let counts = filt.atom_counts(f.step)?;
                    let mut cidx = vec![0usize; dim];
                    let mut ok = true;
                    for j in 0..dim {
                        let c = f.j_rect.0[j] as i64 - s[j];
                        if c < 0 || c >= counts[j] as i64 {
                            ok = false;
                            break;
                        }
                        cidx[j] = c as usize;
                    }
                    if !ok {
                        continue;
                    }
                    let c_box: Vec<(f64, f64)> = (0..dim)
                        .map(|j| filt.factor_stage(f.step, j)?.atom(cidx[j]))
                        .collect::<Result<_>>()?;
                    let j_iv = filt.factor_stage(f.step, delta)?.atom(f.j_rect.0[delta])?;
                    nodes.push(Node { l, c_box, j_iv });
                }
                // Functions come in block order, so steps never decrease.
                let mut dp = vec![1usize; nodes.len()];
                let mut prev = vec![usize::MAX; nodes.len()];
                for i in 0..nodes.len() {
                    for j in 0..i {
                        if dp[j] + 1 > dp[i]
                            && box_contains(&nodes[j].c_box, &nodes[i].c_box)
                            && iv_contains(nodes[j].j_iv, nodes[i].j_iv)
                        {
                            dp[i] = dp[j] + 1;
                            prev[i] = j;
                        }
                    }
                }
                if let Some((i_best, &card)) = dp.iter().enumerate().max_by_key(|&(_, &v)| v) {
                    let bound_sum: usize = (0..dim)
                        .filter(|&j| j != delta)
                        .map(|j| 1 + s[j].unsigned_abs() as usize)
                        .sum();
                    let ratio = if bound_sum > 0 {
                        card as f64 / bound_sum as f64
                    } else {
                        card as f64
                    };
                    max_card = max_card.max(card);
                    if ratio > max_ratio {
                        max_ratio = ratio;
                        let mut members = Vec::with_capacity(card);
                        let mut at = i_best;
                        while at != usize::MAX {
                            members.push(nodes[at].l);
                            at = prev[at];
                        }
                        members.reverse();
                        witness = Some(CombWitness {
                            dir: delta,
                            s: s.clone(),
                            members,
                            bound_sum,
                        });
                    }
                }
            }
            let mut d = dim;
            while d > 0 {
                d -= 1;
                if s[d] < limits[d] {
                    s[d] += 1;
                    for dd in d + 1..dim {
                        s[dd] = -limits[dd];
                    }
                    continue 'distances;
                }
            }
            break;
        }
    }
    Ok(CombReport {
        searched,
        max_card,
        max_ratio,
        witness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::BSplineBasis;
    use crate::tensor_system::LeftToRight;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_tensor_filtration(
        seed: u64,
        intervals: &[(f64, f64)],
        steps: usize,
    ) -> TensorFiltration {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut filt = TensorFiltration::new(intervals).unwrap();
        for _ in 0..steps {
            let dir = rng.gen_range(0..intervals.len());
            let stage = filt.factor_stage(filt.len(), dir).unwrap();
            let atom = rng.gen_range(0..stage.atom_count());
            let (lo, hi) = stage.atom(atom).unwrap();
            let x = lo + (hi - lo) * rng.gen_range(0.25..0.75);
            filt.push_step(TensorStep { dir, atom, x }).unwrap();
        }
        filt
    }

    fn stress_tensor(ell: usize, order: usize) -> (TensorFiltration, usize) {
        let fam = make_example_filtration(ell, order).unwrap();
        let splits = fam.trivial_rooted_splits().unwrap();
        let steps: Vec<TensorStep> = splits
            .iter()
            .map(|s| TensorStep {
                dir: 0,
                atom: s.atom,
                x: s.x,
            })
            .collect();
        let filt = TensorFiltration::from_steps(&[(-1.0, 1.0)], &steps).unwrap();
        (filt, fam.base_split_count())
    }

    #[test]
    fn windows_match_the_clamped_basis_supports() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..8 {
            let n = rng.gen_range(1..6);
            let mut breaks: Vec<f64> = (1..n).map(|_| rng.gen_range(0.05..0.95)).collect();
            breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
            breaks.dedup_by(|a, b| (*a - *b).abs() < 0.02);
            let part = Partition1D::new(0.0, 1.0, &breaks).unwrap();
            for r in 1..=4usize {
                let basis = BSplineBasis::new(part.clone(), r).unwrap();
                let mut oracle: Vec<(usize, usize)> = (0..basis.dim())
                    .map(|i| basis.support_atoms(i).unwrap())
                    .collect();
                oracle.dedup();
                assert_eq!(support_windows(&part, r), oracle, "r = {r}");
            }
        }
    }

    #[test]
    fn dyadic_sweep_ratio_is_two() {
        let base = TensorFiltration::new(&[(0.0, 1.0)]).unwrap();
        let filt = dyadic_extension(&base, 3, SplitRule::Midpoint).unwrap();
        let report = regularity_parameter(&filt, &[1]).unwrap();
        assert!((report.overall - 2.0).abs() <= 1e-12, "{}", report.overall);
        // After a completed level all atoms are equal again.
        for step in [0usize, 1, 3, 7] {
            let g = stage_regularity(&filt, &[1], step).unwrap();
            assert!((g - 1.0).abs() <= 1e-12, "step {step}: {g}");
        }
        let w = report.witness.unwrap();
        assert!((w.ratio - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn raised_orders_keep_the_ratio_finite() {
        let filt = random_tensor_filtration(31, &[(0.0, 1.0), (0.0, 1.0)], 14);
        let g2 = regularity_parameter(&filt, &[2, 2]).unwrap().overall;
        let g3 = regularity_parameter(&filt, &[3, 3]).unwrap().overall;
        assert!(g2.is_finite() && g2 >= 1.0);
        assert!(g3.is_finite() && g3 >= 1.0);
    }

    #[test]
    fn ratio_grows_along_prefixes() {
        let filt = random_tensor_filtration(7, &[(0.0, 1.0)], 15);
        let intervals = filt.intervals();
        let mut last = 0.0f64;
        for t in 0..=filt.len() {
            let prefix =
                TensorFiltration::from_steps(&intervals, &filt.steps()[..t]).unwrap();
            let g = regularity_parameter(&prefix, &[2]).unwrap().overall;
            assert!(
                g >= last - 1e-12,
                "prefix {t} dropped the ratio: {g} < {last}"
            );
            last = g;
        }
    }

    #[test]
    fn one_dimensional_parameter_is_order_plus_one_at_most() {
        for seed in [3u64, 17, 40] {
            let filt = random_tensor_filtration(seed, &[(0.0, 1.0)], 12);
            for r in 1..=3usize {
                let (beta, _) = direction_regularity_parameter(&filt, &[r], 12).unwrap();
                let b = beta.value().expect("1d parameter must resolve");
                assert!(b <= r + 1, "seed {seed}, r {r}: beta {b}");
            }
        }
        // Midpoint levels attain the bound exactly.
        let base = TensorFiltration::new(&[(0.0, 1.0)]).unwrap();
        let filt = dyadic_extension(&base, 3, SplitRule::Midpoint).unwrap();
        for r in 1..=3usize {
            let (beta, _) = direction_regularity_parameter(&filt, &[r], 12).unwrap();
            assert_eq!(beta, BetaResult::Finite(r + 1), "r = {r}");
        }
    }

    #[test]
    fn quasidyadic_has_small_direction_parameter() {
        let base = TensorFiltration::new(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let filt = dyadic_extension(&base, 3, SplitRule::Fraction(0.4)).unwrap();
        let (beta, _) = direction_regularity_parameter(&filt, &[1, 1], 10).unwrap();
        let b = beta.value().expect("quasidyadic parameter must be finite");
        assert!(b <= 5, "beta {b}");
    }

    #[test]
    fn persistent_transverse_support_exceeds_the_cap() {
        let mut filt = TensorFiltration::new(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let stage = filt.factor_stage(filt.len(), 0).unwrap();
            let atom = rng.gen_range(0..stage.atom_count());
            let (lo, hi) = stage.atom(atom).unwrap();
            filt.push_step(TensorStep {
                dir: 0,
                atom,
                x: 0.5 * (lo + hi),
            })
            .unwrap();
        }
        let (beta, witness) = direction_regularity_parameter(&filt, &[1, 1], 6).unwrap();
        assert_eq!(beta, BetaResult::CapExceeded { cap: 6 });
        let w = witness.unwrap();
        assert_eq!(w.dir, 1, "the untouched direction carries the support");
        assert_eq!(w.chain.len(), 6);
        // The chain is strictly nested and stays inside the window.
        for pair in w.chain.windows(2) {
            assert!(box_contains(&pair[0].atom, &pair[1].atom));
        }
    }

    #[test]
    fn midpoint_levels_quarter_the_interval() {
        let base = TensorFiltration::new(&[(0.0, 1.0)]).unwrap();
        let filt = dyadic_extension(&base, 2, SplitRule::Midpoint).unwrap();
        assert_eq!(filt.len(), 3);
        let part = filt.factor_stage(3, 0).unwrap();
        assert_eq!(part.edges(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn extension_replays_the_direct_split_sets() {
        let mut base = TensorFiltration::new(&[(0.0, 1.0)]).unwrap();
        for (atom, x) in [(0usize, 0.3f64), (1, 0.7)] {
            base.push_step(TensorStep { dir: 0, atom, x }).unwrap();
        }
        let filt = dyadic_extension(&base, 1, SplitRule::Midpoint).unwrap();
        // Splitting the first j atoms of {[0,.3), [.3,.7), [.7,1)} in order.
        let oracle: [&[f64]; 3] = [
            &[0.0, 0.15, 0.3, 0.7, 1.0],
            &[0.0, 0.15, 0.3, 0.5, 0.7, 1.0],
            &[0.0, 0.15, 0.3, 0.5, 0.7, 0.85, 1.0],
        ];
        for (j, want) in oracle.iter().enumerate() {
            let got = filt.factor_stage(base.len() + j + 1, 0).unwrap().edges();
            assert_eq!(&got, want, "level sweep position {j}");
        }
    }

    #[test]
    fn level_skew_stays_within_one() {
        let base = TensorFiltration::new(&[(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)]).unwrap();
        let filt = dyadic_extension(&base, 3, SplitRule::Midpoint).unwrap();
        for t in 0..=filt.len() {
            let splits = filt.factor_steps(t).unwrap();
            let levels: Vec<usize> = splits
                .iter()
                .map(|&s| {
                    let mut nu = 0usize;
                    while (1usize << (nu + 1)) - 1 <= s {
                        nu += 1;
                    }
                    nu
                })
                .collect();
            let (lo, hi) = (
                *levels.iter().min().unwrap(),
                *levels.iter().max().unwrap(),
            );
            assert!(hi - lo <= 1, "step {t}: completed levels {levels:?}");
        }
    }

    #[test]
    fn rejects_bad_split_rules() {
        let base = TensorFiltration::new(&[(0.0, 1.0)]).unwrap();
        assert!(matches!(
            dyadic_extension(&base, 1, SplitRule::Fraction(1.2)),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            dyadic_extension_with(&base, 1, |_, _, (_, hi)| hi + 1.0),
            Err(Error::InvalidSplit { .. })
        ));
        assert!(matches!(
            dyadic_extension(&base, 0, SplitRule::Midpoint),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn stress_family_keeps_matched_order_below_two() {
        let fam = make_example_filtration(4, 2).unwrap();
        assert_eq!(fam.base.edges(), &[-1.0, -0.25, 0.25, 1.0]);
        for ell in [4usize, 8, 16] {
            for order in [2usize, 3] {
                let (filt, base_steps) = stress_tensor(ell, order);
                for step in base_steps..=filt.len() {
                    let g = stage_regularity(&filt, &[order], step).unwrap();
                    assert!(
                        g < 2.0,
                        "ell {ell}, order {order}, step {step}: ratio {g}"
                    );
                }
            }
        }
    }

    #[test]
    fn stress_family_smaller_order_ratio_grows_linearly() {
        let mut ratios = Vec::new();
        for ell in [8usize, 16, 32] {
            let (filt, base_steps) = stress_tensor(ell, 3);
            let mut worst = 1.0f64;
            for step in base_steps..=filt.len() {
                worst = worst.max(stage_regularity(&filt, &[2], step).unwrap());
            }
            assert!(worst >= ell as f64 / 4.0, "ell {ell}: ratio {worst}");
            ratios.push(worst);
        }
        for pair in ratios.windows(2) {
            let growth = pair[1] / pair[0];
            assert!(
                growth > 1.5 && growth < 2.5,
                "doubling ell changed the ratio by {growth}"
            );
        }
    }

    #[test]
    fn rearranged_stages_share_the_ratio() {
        let filt = Arc::new(random_tensor_filtration(23, &[(0.0, 1.0), (0.0, 1.0)], 6));
        let mut policy = LeftToRight;
        let sys = TensorSystem::build(filt.clone(), &[2, 1], &mut policy).unwrap();
        let mut seen = vec![false; filt.len() + 1];
        let mut over_functions = 1.0f64;
        for l in 0..sys.len() {
            let n = sys.sigma_step(l).unwrap();
            seen[n] = true;
            over_functions = over_functions.max(stage_regularity(&filt, &[2, 1], n).unwrap());
        }
        assert!(seen.iter().all(|&s| s), "every stage must recur");
        let direct = regularity_parameter(&filt, &[2, 1]).unwrap().overall;
        assert!((over_functions - direct).abs() <= 1e-12);
    }

    #[test]
    fn order_reduction_keeps_the_parameter_finite() {
        let base = TensorFiltration::new(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let filt = dyadic_extension(&base, 2, SplitRule::Midpoint).unwrap();
        let report = validate_lemma_dir(&filt, &[1, 1], &[2, 2], 10).unwrap();
        assert!(report.skipped.is_none());
        assert!(report.beta.is_finite());
        assert_eq!(report.reduced.len(), 2);
        for red in &report.reduced {
            assert!(red.beta.is_finite(), "direction {}", red.dir);
        }

        let oned = random_tensor_filtration(12, &[(0.0, 1.0)], 10);
        let r1 = validate_lemma_dir(&oned, &[2], &[3], 12).unwrap();
        assert!(r1.skipped.is_none());
        assert!(r1.reduced[0].beta.is_finite());

        let (stress, _) = stress_tensor(8, 3);
        let skipped = validate_lemma_dir(&stress, &[3], &[2], 12).unwrap();
        assert!(skipped.skipped.is_some(), "m < k must be refused");
        assert!(skipped.reduced.is_empty());
    }

    #[test]
    fn chain_counts_respect_the_distance_sum() {
        let base = TensorFiltration::new(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let filt = Arc::new(dyadic_extension(&base, 2, SplitRule::Midpoint).unwrap());
        let mut policy = LeftToRight;
        let sys = TensorSystem::build(filt, &[2, 2], &mut policy).unwrap();
        let report = lemma_comb_audit(&sys, 6).unwrap();
        assert!(report.searched > 0);
        assert!(report.max_card >= 1, "eligible single-node chains exist");
        assert!(
            report.max_ratio <= 8.0,
            "ratio {} with witness {:?}",
            report.max_ratio,
            report.witness
        );
        // Functions sharing a step and rectangle are bounded by the order
        // product.
        let mut mult = std::collections::HashMap::new();
        for f in &sys.functions {
            *mult.entry((f.step, f.j_rect.clone())).or_insert(0usize) += 1;
        }
        assert!(mult.values().all(|&c| c <= 4));
    }

    #[test]
    fn single_step_system_has_no_eligible_chains() {
        let mut filt = TensorFiltration::new(&[(0.0, 1.0)]).unwrap();
        filt.push_step(TensorStep {
            dir: 0,
            atom: 0,
            x: 0.5,
        })
        .unwrap();
        let mut policy = LeftToRight;
        let sys = TensorSystem::build(Arc::new(filt), &[2], &mut policy).unwrap();
        let report = lemma_comb_audit(&sys, 6).unwrap();
        assert_eq!(report.max_card, 0, "two atoms cannot leave a gap of 3");
    }

    #[test]
    fn report_serializes_both_beta_branches() {
        let base = TensorFiltration::new(&[(0.0, 1.0)]).unwrap();
        let filt = dyadic_extension(&base, 2, SplitRule::Midpoint).unwrap();
        let report = regularity_report(&filt, &[1], 10).unwrap();
        let v: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["beta"], 2);
        assert!(v["gamma"][0].as_f64().unwrap() >= 1.0);
        assert!(v["witness"]["gamma"].is_object());

        let mut skewed = TensorFiltration::new(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        for _ in 0..6 {
            let stage = skewed.factor_stage(skewed.len(), 0).unwrap();
            let (lo, hi) = stage.atom(0).unwrap();
            skewed
                .push_step(TensorStep {
                    dir: 0,
                    atom: 0,
                    x: 0.5 * (lo + hi),
                })
                .unwrap();
        }
        let capped = regularity_report(&skewed, &[1, 1], 4).unwrap();
        let v: serde_json::Value = serde_json::from_str(&capped.to_json().unwrap()).unwrap();
        assert_eq!(v["beta"], "cap_exceeded");
        assert_eq!(v["beta_cap"], 4);
    }
}

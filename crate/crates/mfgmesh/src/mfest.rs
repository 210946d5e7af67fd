//! Decentralised estimation of the empirical mean-field distribution.
//!
//! Two pipelines produce, for every agent, an estimate `μ̃̂` of the exact
//! empirical distribution `μ̂` from strictly local information:
//!
//! * general mode: agents have unique IDs in `0..N` and observe the
//!   (state, ID) of agents adjacent in an agent observation graph. Count
//!   vectors hold per-state ID sets; gossip unions them. IDs exist so the
//!   same agent reported along two paths is never double counted.
//! * visibility mode: an agent obtains the exact occupancy count of every
//!   state visible from its own state. Count vectors hold per-state
//!   integers or a NO_COUNT marker; gossip copies counts into NO_COUNT
//!   slots. Since every count of a state is the true occupancy, two
//!   received counts for one slot can never disagree; a disagreement is
//!   reported as an error because it means the inputs were inconsistent.
//!
//! Both modes finish by distributing the `uncounted = N - counted` agents
//! uniformly: in general mode across all `|S|` slots (counted slots get
//! the uniform share too), in visibility mode across the still-unseen
//! slots only, because a slot seen to hold `c` agents holds exactly `c`.
//!
//! Gossip rounds are synchronous and double-buffered: round `r` reads only
//! round `r-1` vectors. An agent always counts itself, so `counted >= 1`
//! and the estimates are well defined even with no edges anywhere.

use crate::env::EmpiricalDistribution;
use crate::graphs::{AgentGraph, StateVisGraph};
use thiserror::Error;

/// A local estimate of the empirical distribution.
pub type MeanFieldEstimate = EmpiricalDistribution;

#[derive(Debug, Error, PartialEq)]
pub enum MfestError {
    #[error("states ({states}) and ids ({ids}) must have one entry per agent")]
    LengthMismatch { states: usize, ids: usize },
    #[error("agent id {0} appears twice")]
    DuplicateId(usize),
    #[error("agent id {id} outside 0..{n}")]
    IdOutOfRange { id: usize, n: usize },
    #[error("state {state} outside 0..{n_states}")]
    StateOutOfRange { state: usize, n_states: usize },
    #[error("agent index {index} outside 0..{n}")]
    AgentOutOfRange { index: usize, n: usize },
    #[error("conflicting counts {a} and {b} for state {state}: inputs were inconsistent")]
    ConflictingCounts { state: usize, a: u32, b: u32 },
    #[error("counted {counted} agents but the population is {n}")]
    CountExceedsPopulation { counted: usize, n: usize },
    #[error("{uncounted} agents uncounted yet every state was seen")]
    UncountedWithoutUnseen { uncounted: usize },
    #[error(transparent)]
    BadEstimate(#[from] crate::env::EnvError),
}

/// Set of agent IDs drawn from `0..universe`, stored as a bitmask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdSet {
    words: Vec<u64>,
}

impl IdSet {
    fn new(universe: usize) -> IdSet {
        IdSet { words: vec![0; universe.div_ceil(64)] }
    }

    fn insert(&mut self, id: usize) {
        self.words[id / 64] |= 1 << (id % 64);
    }

    pub fn contains(&self, id: usize) -> bool {
        self.words[id / 64] & (1 << (id % 64)) != 0
    }

    fn union_with(&mut self, other: &IdSet) {
        for (w, o) in self.words.iter_mut().zip(&other.words) {
            *w |= o;
        }
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// IDs in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            (0..64).filter(move |b| w & (1 << b) != 0).map(move |b| wi * 64 + b)
        })
    }
}

/// General-mode count vector: one ID set per state. An empty set is the
/// initial marker; there is no seen-empty notion because agents report
/// only positive evidence (their own location).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneralCount {
    n_agents: usize,
    slots: Vec<IdSet>,
}

impl GeneralCount {
    pub fn n_states(&self) -> usize {
        self.slots.len()
    }

    /// Sorted IDs counted at `state`.
    pub fn ids_at(&self, state: usize) -> Vec<usize> {
        self.slots[state].iter().collect()
    }

    pub fn count_at(&self, state: usize) -> usize {
        self.slots[state].len()
    }

    pub fn total_counted(&self) -> usize {
        self.slots.iter().map(IdSet::len).sum()
    }
}

/// Visibility-mode count vector: exact occupancy per seen state, NO_COUNT
/// (`None`) for unseen states. Seen-empty (`Some(0)`) is informative and
/// distinct from NO_COUNT.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityCount {
    n_agents: usize,
    slots: Vec<Option<u32>>,
}

impl VisibilityCount {
    pub fn n_states(&self) -> usize {
        self.slots.len()
    }

    pub fn count_at(&self, state: usize) -> Option<usize> {
        self.slots[state].map(|c| c as usize)
    }

    pub fn total_counted(&self) -> usize {
        self.slots.iter().flatten().map(|&c| c as usize).sum()
    }
}

fn check_states(states: &[usize], n_states: usize) -> Result<(), MfestError> {
    for &s in states {
        if s >= n_states {
            return Err(MfestError::StateOutOfRange { state: s, n_states });
        }
    }
    Ok(())
}

/// Agent `i`'s initial count vector in general mode: the states and IDs of
/// itself and of every agent adjacent in the observation graph.
pub fn local_count_general(
    i: usize,
    states: &[usize],
    ids: &[usize],
    obs: &AgentGraph,
    n_states: usize,
) -> Result<GeneralCount, MfestError> {
    let n = states.len();
    if ids.len() != n {
        return Err(MfestError::LengthMismatch { states: n, ids: ids.len() });
    }
    if i >= n {
        return Err(MfestError::AgentOutOfRange { index: i, n });
    }
    check_states(states, n_states)?;
    let mut seen = IdSet::new(n);
    for &id in ids {
        if id >= n {
            return Err(MfestError::IdOutOfRange { id, n });
        }
        if seen.contains(id) {
            return Err(MfestError::DuplicateId(id));
        }
        seen.insert(id);
    }
    let mut slots = vec![IdSet::new(n); n_states];
    slots[states[i]].insert(ids[i]);
    for &j in obs.neighbors(i) {
        slots[states[j]].insert(ids[j]);
    }
    Ok(GeneralCount { n_agents: n, slots })
}

/// Agent `i`'s initial count vector in visibility mode: the exact
/// occupancy of every state visible from its own state (its own state is
/// always visible), NO_COUNT elsewhere.
pub fn local_count_visibility(
    i: usize,
    states: &[usize],
    vis: &StateVisGraph,
) -> Result<VisibilityCount, MfestError> {
    let n = states.len();
    if i >= n {
        return Err(MfestError::AgentOutOfRange { index: i, n });
    }
    let n_states = vis.n_states();
    check_states(states, n_states)?;
    let mut occupancy = vec![0u32; n_states];
    for &s in states {
        occupancy[s] += 1;
    }
    let mut slots = vec![None; n_states];
    for &s in vis.visible_from(states[i]) {
        slots[s] = Some(occupancy[s]);
    }
    Ok(VisibilityCount { n_agents: n, slots })
}

/// One synchronous gossip round in general mode: each agent unions every
/// neighbour's round-start slots into its own.
pub fn gossip_round_general(counts: &[GeneralCount], comm: &AgentGraph) -> Vec<GeneralCount> {
    let mut next = counts.to_vec();
    for (i, out) in next.iter_mut().enumerate() {
        for &j in comm.neighbors(i) {
            for (slot, other) in out.slots.iter_mut().zip(&counts[j].slots) {
                slot.union_with(other);
            }
        }
    }
    next
}

/// One synchronous gossip round in visibility mode: each agent fills its
/// NO_COUNT slots from neighbours' round-start vectors. Two different
/// counts for one slot cannot arise from consistent inputs and error out.
pub fn gossip_round_visibility(
    counts: &[VisibilityCount],
    comm: &AgentGraph,
) -> Result<Vec<VisibilityCount>, MfestError> {
    let mut next = counts.to_vec();
    for (i, out) in next.iter_mut().enumerate() {
        for &j in comm.neighbors(i) {
            for (s, (slot, other)) in out.slots.iter_mut().zip(&counts[j].slots).enumerate() {
                match (*slot, *other) {
                    (None, Some(c)) => *slot = Some(c),
                    (Some(a), Some(b)) if a != b => {
                        return Err(MfestError::ConflictingCounts { state: s, a, b })
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(next)
}

/// Converts a general-mode count vector into a distribution estimate:
/// every slot receives `uncounted / (N · |S|)`, then each counted slot
/// adds `|IDs| / N` on top.
pub fn finalize_estimate_general(count: &GeneralCount) -> Result<MeanFieldEstimate, MfestError> {
    let n = count.n_agents;
    let counted = count.total_counted();
    if counted > n {
        return Err(MfestError::CountExceedsPopulation { counted, n });
    }
    let uncounted = (n - counted) as f64;
    let base = uncounted / (n as f64 * count.n_states() as f64);
    let probs = count
        .slots
        .iter()
        .map(|slot| base + slot.len() as f64 / n as f64)
        .collect();
    Ok(MeanFieldEstimate::from_probs(probs)?)
}

/// Converts a visibility-mode count vector into a distribution estimate:
/// seen slots keep their exact `count / N` (a seen-empty slot stays 0);
/// the uncounted agents are spread uniformly over the unseen slots only.
pub fn finalize_estimate_visibility(
    count: &VisibilityCount,
) -> Result<MeanFieldEstimate, MfestError> {
    let n = count.n_agents;
    let counted = count.total_counted();
    if counted > n {
        return Err(MfestError::CountExceedsPopulation { counted, n });
    }
    let uncounted = n - counted;
    let unseen = count.slots.iter().filter(|s| s.is_none()).count();
    if unseen == 0 && uncounted > 0 {
        return Err(MfestError::UncountedWithoutUnseen { uncounted });
    }
    let fill = if unseen == 0 { 0.0 } else { uncounted as f64 / (n as f64 * unseen as f64) };
    let probs = count
        .slots
        .iter()
        .map(|slot| match slot {
            Some(c) => *c as f64 / n as f64,
            None => fill,
        })
        .collect();
    Ok(MeanFieldEstimate::from_probs(probs)?)
}

/// Full general-mode pipeline: local counts, `c_e` gossip rounds, one
/// estimate per agent.
pub fn estimate_all_general(
    states: &[usize],
    ids: &[usize],
    comm: &AgentGraph,
    obs: &AgentGraph,
    c_e: usize,
    n_states: usize,
) -> Result<Vec<MeanFieldEstimate>, MfestError> {
    let mut counts = (0..states.len())
        .map(|i| local_count_general(i, states, ids, obs, n_states))
        .collect::<Result<Vec<_>, _>>()?;
    for _ in 0..c_e {
        counts = gossip_round_general(&counts, comm);
    }
    counts.iter().map(finalize_estimate_general).collect()
}

/// Full visibility-mode pipeline: local counts, `c_e` gossip rounds, one
/// estimate per agent.
pub fn estimate_all_visibility(
    states: &[usize],
    comm: &AgentGraph,
    vis: &StateVisGraph,
    c_e: usize,
) -> Result<Vec<MeanFieldEstimate>, MfestError> {
    let mut counts = (0..states.len())
        .map(|i| local_count_visibility(i, states, vis))
        .collect::<Result<Vec<_>, _>>()?;
    for _ in 0..c_e {
        counts = gossip_round_visibility(&counts, comm)?;
    }
    counts.iter().map(finalize_estimate_visibility).collect()
}

//! Grid-world environment: task definitions, dynamics, rewards and
//! observation encoding.
//!
//! A population of `N` agents lives on a `width × height` grid. Agents move
//! in the four cardinal directions or stay in place; moves that would leave
//! the grid are clamped (the agent stays put). The population is summarised
//! by its empirical state distribution `μ̂`, a categorical vector over the
//! `width · height` cells in row-major order.
//!
//! Rewards are task-specific raw scores mapped affinely into `[0, 1]` using
//! fixed analytic bounds, so normalisation is stationary and deterministic:
//!
//! | task             | raw score                                            | raw bounds                |
//! |------------------|------------------------------------------------------|---------------------------|
//! | cluster          | `ln μ̂(s)`                                            | `[ln(1/N), 0]`            |
//! | target agreement | `r_targ(r_collab(μ̂(s)))`                             | `[-1, 1]`                 |
//! | evade shark      | `d_h + d_v + norm(ln μ̂(s))`                          | `[0, 2·D]`                |
//! | push object      | `(D - d(agent, obj)) + (D - d(obj, nearest edge))`    | `[0, 2·D]`                |
//! | disperse         | `-μ̂(s)` if stationary else `-1`                      | `[-1, 0]`                 |
//!
//! where `D = (width-1) + (height-1)` is the maximum combined
//! horizontal+vertical distance on the grid.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from environment construction and queries.
#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("grid must be at least 2x2 with at least 2 agents (got {width}x{height}, n={n_agents})")]
    BadGrid {
        width: usize,
        height: usize,
        n_agents: usize,
    },
    #[error("target agreement requires a nonempty target list; other tasks must not set targets")]
    BadTargets,
    #[error("cell ({row},{col}) lies outside the {width}x{height} grid")]
    OutOfGrid {
        row: usize,
        col: usize,
        width: usize,
        height: usize,
    },
    #[error("shark_noise_prob must lie in [0,1], got {0}")]
    BadNoise(f64),
    #[error("task {0:?} has no moving entity")]
    NoEntity(TaskKind),
    #[error("task {0:?} requires an entity position in the environment state")]
    MissingEntity(TaskKind),
    #[error("observation requires a mean-field vector of length {expected}, got {got}")]
    BadMeanFieldLen { expected: usize, got: usize },
    #[error("distribution entries must sum to 1 (got {0})")]
    BadDistributionSum(f64),
    #[error("distribution entries must be nonnegative")]
    NegativeProbability,
}

/// The five grid-world games.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Cluster,
    TargetAgreement,
    EvadeShark,
    PushObject,
    Disperse,
}

impl TaskKind {
    /// Tasks whose state carries an extra moving entity (shark / object).
    pub fn has_entity(self) -> bool {
        matches!(self, TaskKind::EvadeShark | TaskKind::PushObject)
    }
}

/// The five grid actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

/// Number of actions, identical in every task.
pub const N_ACTIONS: usize = 5;

impl Action {
    pub const ALL: [Action; N_ACTIONS] =
        [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];

    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
            Action::Stay => 4,
        }
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }
}

/// What the policy observes besides the agent's own position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObservationMode {
    /// Position one-hots only.
    LocalOnly,
    /// Position one-hots plus the exact empirical distribution.
    GlobalMeanField,
    /// Position one-hots plus a locally estimated distribution.
    EstimatedMeanField,
}

impl ObservationMode {
    /// Whether observations include a distribution block.
    pub fn population_dependent(self) -> bool {
        !matches!(self, ObservationMode::LocalOnly)
    }
}

/// A grid cell, `row` before `col`, both zero-based from the top-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Cell {
        Cell { row, col }
    }
}

/// Static description of one experiment's world.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub task: TaskKind,
    pub n_agents: usize,
    /// Gathering points for the target-agreement task; empty otherwise.
    pub targets: Vec<Cell>,
    /// Probability of a uniformly random shark step (evade-shark only).
    pub shark_noise_prob: f64,
}

impl GridConfig {
    /// Builds a world description. The target-agreement task starts with
    /// the default targets, one in each grid corner; replace them with
    /// [`GridConfig::with_targets`].
    pub fn new(
        width: usize,
        height: usize,
        task: TaskKind,
        n_agents: usize,
    ) -> Result<GridConfig, EnvError> {
        let targets = if task == TaskKind::TargetAgreement && width >= 2 && height >= 2 {
            vec![
                Cell::new(0, 0),
                Cell::new(0, width - 1),
                Cell::new(height - 1, 0),
                Cell::new(height - 1, width - 1),
            ]
        } else {
            Vec::new()
        };
        let cfg = GridConfig { width, height, task, n_agents, targets, shark_noise_prob: 0.01 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_targets(mut self, targets: Vec<Cell>) -> Result<GridConfig, EnvError> {
        self.targets = targets;
        self.validate()?;
        Ok(self)
    }

    pub fn with_shark_noise(mut self, prob: f64) -> Result<GridConfig, EnvError> {
        self.shark_noise_prob = prob;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.width < 2 || self.height < 2 || self.n_agents < 2 {
            return Err(EnvError::BadGrid {
                width: self.width,
                height: self.height,
                n_agents: self.n_agents,
            });
        }
        if (self.task == TaskKind::TargetAgreement) == self.targets.is_empty() {
            return Err(EnvError::BadTargets);
        }
        for &t in &self.targets {
            self.check_inside(t)?;
        }
        if !(0.0..=1.0).contains(&self.shark_noise_prob) {
            return Err(EnvError::BadNoise(self.shark_noise_prob));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    /// Row-major flat index of a cell.
    pub fn cell_index(&self, cell: Cell) -> usize {
        cell.row * self.width + cell.col
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index / self.width, index % self.width)
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.row < self.height && cell.col < self.width
    }

    fn check_inside(&self, cell: Cell) -> Result<(), EnvError> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(EnvError::OutOfGrid {
                row: cell.row,
                col: cell.col,
                width: self.width,
                height: self.height,
            })
        }
    }

    /// Squared diagonal length, the normaliser for radius fractions.
    pub fn diag_sq(&self) -> f64 {
        let w = (self.width - 1) as f64;
        let h = (self.height - 1) as f64;
        w * w + h * h
    }

    /// Maximum combined horizontal+vertical distance on the grid.
    pub fn max_l1(&self) -> f64 {
        ((self.width - 1) + (self.height - 1)) as f64
    }

    /// Cell drawn uniformly at random.
    pub fn random_cell<R: Rng>(&self, rng: &mut R) -> Cell {
        Cell::new(rng.gen_range(0..self.height), rng.gen_range(0..self.width))
    }
}

/// Full world state: one position per agent, an optional entity, and the
/// global step counter of the single non-episodic run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub agents: Vec<Cell>,
    pub entity: Option<Cell>,
    pub time: u64,
}

impl EnvState {
    /// Uniformly random initial placement (agents and entity, when any).
    pub fn random<R: Rng>(grid: &GridConfig, rng: &mut R) -> EnvState {
        let agents = (0..grid.n_agents).map(|_| grid.random_cell(rng)).collect();
        let entity = grid.task.has_entity().then(|| grid.random_cell(rng));
        EnvState { agents, entity, time: 0 }
    }

    pub fn with_positions(
        grid: &GridConfig,
        agents: Vec<Cell>,
        entity: Option<Cell>,
    ) -> Result<EnvState, EnvError> {
        for &a in &agents {
            grid.check_inside(a)?;
        }
        if let Some(e) = entity {
            grid.check_inside(e)?;
        }
        if grid.task.has_entity() && entity.is_none() {
            return Err(EnvError::MissingEntity(grid.task));
        }
        if !grid.task.has_entity() && entity.is_some() {
            return Err(EnvError::NoEntity(grid.task));
        }
        Ok(EnvState { agents, entity, time: 0 })
    }
}

/// Categorical distribution over grid cells (row-major). Holds both the
/// exact empirical distribution `μ̂` and local estimates of it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    probs: Vec<f64>,
}

impl EmpiricalDistribution {
    /// Wraps a probability vector, checking nonnegativity and unit sum.
    pub fn from_probs(probs: Vec<f64>) -> Result<EmpiricalDistribution, EnvError> {
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(EnvError::NegativeProbability);
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(EnvError::BadDistributionSum(sum));
        }
        Ok(EmpiricalDistribution { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, state: usize) -> f64 {
        self.probs[state]
    }

    /// Flat index of the most likely state; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Moves one agent. Off-grid moves clamp: the agent keeps its position.
pub fn step_agent(pos: Cell, action: Action, grid: &GridConfig) -> Cell {
    let (row, col) = (pos.row, pos.col);
    match action {
        Action::Up => Cell::new(row.saturating_sub(1), col),
        Action::Down => Cell::new((row + 1).min(grid.height - 1), col),
        Action::Left => Cell::new(row, col.saturating_sub(1)),
        Action::Right => Cell::new(row, (col + 1).min(grid.width - 1)),
        Action::Stay => pos,
    }
}

/// Exact empirical state distribution of the given positions:
/// `probs[s] = (#agents at s) / N`.
pub fn empirical_distribution(agents: &[Cell], grid: &GridConfig) -> EmpiricalDistribution {
    let mut probs = vec![0.0; grid.n_states()];
    let n = agents.len() as f64;
    for &a in agents {
        probs[grid.cell_index(a)] += 1.0;
    }
    for p in &mut probs {
        *p /= n;
    }
    EmpiricalDistribution { probs }
}

fn l1_parts(a: Cell, b: Cell) -> (f64, f64) {
    let dh = a.col.abs_diff(b.col) as f64;
    let dv = a.row.abs_diff(b.row) as f64;
    (dh, dv)
}

/// Distance from a cell to the nearest grid edge (perpendicular).
fn edge_distance(cell: Cell, grid: &GridConfig) -> f64 {
    let to_top = cell.row;
    let to_bottom = grid.height - 1 - cell.row;
    let to_left = cell.col;
    let to_right = grid.width - 1 - cell.col;
    to_top.min(to_bottom).min(to_left).min(to_right) as f64
}

/// Reward for agent `i`, normalised into `[0, 1]`.
///
/// `mu` is the empirical distribution the environment evaluates rewards
/// against (the exact `μ̂` in the training loop; local estimates only ever
/// enter observations, never rewards).
pub fn compute_reward(
    i: usize,
    env: &EnvState,
    action: Action,
    mu: &EmpiricalDistribution,
    grid: &GridConfig,
) -> Result<f64, EnvError> {
    let pos = env.agents[i];
    let occupancy = mu.prob(grid.cell_index(pos));
    let n = grid.n_agents as f64;
    let (raw, raw_min, raw_max) = match grid.task {
        TaskKind::Cluster => ((occupancy.max(1.0 / n)).ln(), (1.0 / n).ln(), 0.0),
        TaskKind::TargetAgreement => {
            if grid.targets.is_empty() {
                return Err(EnvError::BadTargets);
            }
            let collab = if occupancy > 1.0 / n { occupancy } else { -1.0 };
            let raw = if grid.targets.contains(&pos) { collab } else { -1.0 };
            (raw, -1.0, 1.0)
        }
        TaskKind::EvadeShark => {
            let shark = env.entity.ok_or(EnvError::MissingEntity(grid.task))?;
            let (dh, dv) = l1_parts(shark, pos);
            let d_max = grid.max_l1();
            let log_min = (1.0 / n).ln();
            // Crowding term rescaled to share the distance terms' range.
            let crowd = ((occupancy.max(1.0 / n)).ln() - log_min) / -log_min * d_max;
            (dh + dv + crowd, 0.0, 2.0 * d_max)
        }
        TaskKind::PushObject => {
            let object = env.entity.ok_or(EnvError::MissingEntity(grid.task))?;
            let (dh, dv) = l1_parts(object, pos);
            let d_max = grid.max_l1();
            let near_object = d_max - (dh + dv);
            let near_edge = d_max - edge_distance(object, grid);
            (near_object + near_edge, 0.0, 2.0 * d_max)
        }
        TaskKind::Disperse => {
            let raw = if action == Action::Stay { -occupancy } else { -1.0 };
            (raw, -1.0, 0.0)
        }
    };
    Ok(((raw - raw_min) / (raw_max - raw_min)).clamp(0.0, 1.0))
}

/// Moves the task entity one step and returns its new position.
///
/// The shark steps towards the most populated cell (ties broken by lowest
/// flat index), horizontally when the horizontal gap is at least the
/// vertical one; with probability `shark_noise_prob` the step is replaced
/// by a uniformly random cardinal move. The pushed object samples a
/// cardinal direction with weight `1 + (#agents in the adjacent cell on
/// the opposite side)`, so agents push it away from themselves.
pub fn advance_entity<R: Rng>(
    env: &EnvState,
    mu: &EmpiricalDistribution,
    grid: &GridConfig,
    rng: &mut R,
) -> Result<Cell, EnvError> {
    let entity = env.entity.ok_or(EnvError::NoEntity(grid.task))?;
    match grid.task {
        TaskKind::EvadeShark => {
            if rng.gen_bool(grid.shark_noise_prob) {
                let dir = Action::ALL[rng.gen_range(0..4)];
                return Ok(step_agent(entity, dir, grid));
            }
            let target = grid.cell_at(mu.argmax());
            let (dh, dv) = l1_parts(entity, target);
            let action = if dh >= dv {
                match target.col.cmp(&entity.col) {
                    std::cmp::Ordering::Greater => Action::Right,
                    std::cmp::Ordering::Less => Action::Left,
                    std::cmp::Ordering::Equal => Action::Stay,
                }
            } else {
                match target.row.cmp(&entity.row) {
                    std::cmp::Ordering::Greater => Action::Down,
                    std::cmp::Ordering::Less => Action::Up,
                    std::cmp::Ordering::Equal => Action::Stay,
                }
            };
            Ok(step_agent(entity, action, grid))
        }
        TaskKind::PushObject => {
            // Weight for moving in direction d counts agents on the side
            // opposite d; the +1 keeps the field proper when nobody is
            // adjacent.
            let side = |action: Action| -> f64 {
                let opposite = match action {
                    Action::Up => Action::Down,
                    Action::Down => Action::Up,
                    Action::Left => Action::Right,
                    Action::Right => Action::Left,
                    Action::Stay => unreachable!(),
                };
                let cell = step_agent(entity, opposite, grid);
                if cell == entity {
                    return 1.0; // opposite side is off-grid
                }
                1.0 + env.agents.iter().filter(|&&a| a == cell).count() as f64
            };
            let dirs = [Action::Up, Action::Down, Action::Left, Action::Right];
            let weights: Vec<f64> = dirs.iter().map(|&d| side(d)).collect();
            let total: f64 = weights.iter().sum();
            let mut draw = rng.gen::<f64>() * total;
            let mut chosen = dirs[3];
            for (d, w) in dirs.iter().zip(&weights) {
                if draw < *w {
                    chosen = *d;
                    break;
                }
                draw -= w;
            }
            Ok(step_agent(entity, chosen, grid))
        }
        _ => Err(EnvError::NoEntity(grid.task)),
    }
}

/// Input length of the Q-network observation for this grid and mode.
pub fn obs_len(grid: &GridConfig, mode: ObservationMode) -> usize {
    let mut len = grid.height + grid.width;
    if grid.task.has_entity() {
        len += grid.height + grid.width;
    }
    if mode.population_dependent() {
        len += grid.n_states();
    }
    len
}

/// Encodes the observation feature vector:
/// one-hot(agent row) ∥ one-hot(agent col), then for entity tasks
/// one-hot(entity row) ∥ one-hot(entity col), then the distribution vector
/// in population-dependent modes.
pub fn encode_observation(
    agent: Cell,
    env: &EnvState,
    mf: Option<&EmpiricalDistribution>,
    grid: &GridConfig,
    mode: ObservationMode,
) -> Result<Vec<f64>, EnvError> {
    let mut obs = Vec::with_capacity(obs_len(grid, mode));
    let one_hot = |cell: Cell, obs: &mut Vec<f64>| {
        let row_base = obs.len();
        obs.resize(row_base + grid.height + grid.width, 0.0);
        obs[row_base + cell.row] = 1.0;
        obs[row_base + grid.height + cell.col] = 1.0;
    };
    one_hot(agent, &mut obs);
    if grid.task.has_entity() {
        let entity = env.entity.ok_or(EnvError::MissingEntity(grid.task))?;
        one_hot(entity, &mut obs);
    }
    if mode.population_dependent() {
        let mf = mf.ok_or(EnvError::BadMeanFieldLen { expected: grid.n_states(), got: 0 })?;
        if mf.len() != grid.n_states() {
            return Err(EnvError::BadMeanFieldLen {
                expected: grid.n_states(),
                got: mf.len(),
            });
        }
        obs.extend_from_slice(mf.as_slice());
    }
    Ok(obs)
}

//! Differential pruning-budget allocation.
//!
//! Given a per-component density map and a global retention target ρ, this
//! module decides how much of each component to keep:
//!
//! * **ceilings** — density caps each component's retention at
//!   `ρ_min + (ρ_max − ρ_min)·φ(δ)`;
//! * **CGC-L** — closed-form density-proportional retention, clipped to the
//!   ceilings and water-filled onto a discrete level grid until the global
//!   budget is met;
//! * **CGC-F** — an elitist evolutionary refinement of an initial
//!   allocation under a caller-supplied fitness oracle, mutating by
//!   budget-preserving level switches and rejecting ceiling violations;
//! * **uniform** and **inverted** — the capability-blind baseline (same
//!   retention everywhere, ceilings deliberately ignored) and the
//!   adversarial control (densities mirrored about their midrange).
//!
//! All allocations land on the grid, respect `Σ ξ·size ≤ ρ·Σ size`, and are
//! deterministic given the problem and seeds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::tinylm::{apply_prune, mean_nll, Checkpoint, ComponentId, PruneSpec};

const GRID_EPS: f64 = 1e-9;

/// Transfer function φ applied to density before it scales the ceiling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Transfer {
    /// φ(δ) = δ^{1/γ}; concave for γ > 1, generous to mid-density heads.
    Concave { gamma: f64 },
    /// φ(δ) = δ.
    Linear,
}

impl Default for Transfer {
    fn default() -> Self {
        Transfer::Concave { gamma: 2.0 }
    }
}

impl Transfer {
    pub fn apply(self, delta: f64) -> f64 {
        let d = delta.clamp(0.0, 1.0);
        match self {
            Transfer::Concave { gamma } => d.powf(1.0 / gamma),
            Transfer::Linear => d,
        }
    }

    fn validate(self) -> Result<()> {
        if let Transfer::Concave { gamma } = self {
            if !(gamma >= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "transfer gamma must be >= 1, got {gamma}"
                )));
            }
        }
        Ok(())
    }
}

/// Discrete retention levels an allocation may use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Grid {
    levels: Vec<f64>,
}

impl Grid {
    /// Multiples of 1/16 from 0 to 1 — the default grid.
    pub fn sixteenths() -> Grid {
        Grid {
            levels: (0..=16).map(|i| i as f64 / 16.0).collect(),
        }
    }

    /// Multiples of 1/n from 0 to 1.
    pub fn uniform(n: usize) -> Result<Grid> {
        if n == 0 {
            return Err(Error::InvalidConfig("grid needs at least one step".into()));
        }
        Grid::new((0..=n).map(|i| i as f64 / n as f64).collect())
    }

    pub fn new(levels: Vec<f64>) -> Result<Grid> {
        if levels.is_empty() {
            return Err(Error::InvalidConfig("grid must not be empty".into()));
        }
        for w in levels.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidConfig(
                    "grid levels must be strictly ascending".into(),
                ));
            }
        }
        if levels[0] < 0.0 || *levels.last().unwrap() > 1.0 + GRID_EPS {
            return Err(Error::InvalidConfig(
                "grid levels must lie in [0, 1]".into(),
            ));
        }
        if (levels.last().unwrap() - 1.0).abs() > GRID_EPS {
            return Err(Error::InvalidConfig(
                "grid must contain the level 1.0".into(),
            ));
        }
        Ok(Grid { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Index of the largest level not exceeding `x` (within a hair), or
    /// `None` when `x` lies below the whole grid.
    pub fn snap_down(&self, x: f64) -> Option<usize> {
        let mut best = None;
        for (i, &l) in self.levels.iter().enumerate() {
            if l <= x + GRID_EPS {
                best = Some(i);
            } else {
                break;
            }
        }
        best
    }

    /// Largest gap between adjacent levels.
    pub fn max_gap(&self) -> f64 {
        self.levels
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

/// One allocation problem: components with sizes and densities, a global
/// retention target, ceiling bounds and the level grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AllocationProblem {
    /// (component, weight count of its prunable slice, density), sorted by
    /// component.
    pub components: Vec<(ComponentId, usize, f64)>,
    /// Global retention target ρ.
    pub rho: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub grid: Grid,
    pub transfer: Transfer,
}

impl AllocationProblem {
    pub fn new(
        mut components: Vec<(ComponentId, usize, f64)>,
        rho: f64,
        rho_min: f64,
        rho_max: f64,
        grid: Grid,
        transfer: Transfer,
    ) -> Result<AllocationProblem> {
        components.sort_by_key(|(id, _, _)| *id);
        let problem = AllocationProblem {
            components,
            rho,
            rho_min,
            rho_max,
            grid,
            transfer,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidConfig("no components to allocate".into()));
        }
        for w in self.components.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::InvalidConfig(
                    "components must be sorted and unique".into(),
                ));
            }
        }
        for (id, size, delta) in &self.components {
            if *size == 0 {
                return Err(Error::InvalidConfig(format!("component {id} has size 0")));
            }
            if !(0.0..=1.0).contains(delta) {
                return Err(Error::InvalidConfig(format!(
                    "component {id} density {delta} outside [0, 1]"
                )));
            }
        }
        if !(0.0 <= self.rho_min && self.rho_min < self.rho_max && self.rho_max <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= rho_min < rho_max <= 1, got {} and {}",
                self.rho_min, self.rho_max
            )));
        }
        if !(self.rho > self.rho_min && self.rho < self.rho_max) {
            return Err(Error::InvalidConfig(format!(
                "rho {} must lie strictly between rho_min {} and rho_max {}",
                self.rho, self.rho_min, self.rho_max
            )));
        }
        self.transfer.validate()?;
        // Re-run the grid checks (fields may have been built directly).
        Grid::new(self.grid.levels.clone())?;
        if self.grid.levels[0] > self.rho_min + GRID_EPS {
            return Err(Error::InvalidConfig(format!(
                "grid minimum {} exceeds rho_min {}; ceilings could not be snapped",
                self.grid.levels[0], self.rho_min
            )));
        }
        Ok(())
    }

    pub fn total_size(&self) -> usize {
        self.components.iter().map(|(_, s, _)| *s).sum()
    }

    /// Target retained mass ρ·Σ|θ^(c)|.
    pub fn target_mass(&self) -> f64 {
        self.rho * self.total_size() as f64
    }

    /// The largest mass a single grid step can move — the resolution to
    /// which budgets are met.
    pub fn step_slack(&self) -> f64 {
        let max_size = self
            .components
            .iter()
            .map(|(_, s, _)| *s)
            .max()
            .unwrap_or(0) as f64;
        max_size * self.grid.max_gap()
    }
}

/// Density-induced retention ceiling for one component.
pub fn budget_ceiling(delta: f64, problem: &AllocationProblem) -> f64 {
    problem.rho_min + (problem.rho_max - problem.rho_min) * problem.transfer.apply(delta)
}

/// How an allocation was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocMethod {
    Uniform,
    CgcL,
    CgcF,
    Inverted,
}

impl std::fmt::Display for AllocMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AllocMethod::Uniform => "uniform",
            AllocMethod::CgcL => "cgc-l",
            AllocMethod::CgcF => "cgc-f",
            AllocMethod::Inverted => "inverted",
        };
        f.write_str(s)
    }
}

/// One component's allocated retention.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AllocationEntry {
    pub component: ComponentId,
    pub size: usize,
    pub density: f64,
    /// Real-valued ceiling before snapping.
    pub ceiling: f64,
    /// Largest grid level not exceeding the ceiling.
    pub ceiling_level: f64,
    /// Allocated retention ratio; always a grid level.
    pub xi: f64,
}

/// A complete allocation: per-component retentions plus bookkeeping.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Allocation {
    pub method: AllocMethod,
    pub rho: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub transfer: Transfer,
    pub grid: Grid,
    pub entries: Vec<AllocationEntry>,
    /// Σ ξ·size / Σ size.
    pub achieved_ratio: f64,
    /// False when ceilings kept the retained mass more than one grid step
    /// short of the target.
    pub budget_met: bool,
    /// Best fitness after each generation (evolutionary method only).
    pub fitness_trace: Vec<f64>,
}

impl Allocation {
    pub fn xi_for(&self, id: ComponentId) -> Result<f64> {
        self.entries
            .iter()
            .find(|e| e.component == id)
            .map(|e| e.xi)
            .ok_or_else(|| Error::MissingComponent(id.to_string(), "allocation"))
    }

    /// Retained mass Σ ξ·size.
    pub fn mass(&self) -> f64 {
        self.entries.iter().map(|e| e.xi * e.size as f64).sum()
    }

    pub fn to_prune_spec(&self) -> PruneSpec {
        PruneSpec {
            keep: self.entries.iter().map(|e| (e.component, e.xi)).collect(),
        }
    }

    /// Fitness trace as CSV (generation, best fitness).
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("generation,best_fitness\n");
        for (g, f) in self.fitness_trace.iter().enumerate() {
            out.push_str(&format!("{g},{f:.9}\n"));
        }
        out
    }
}

/// Shared water-filling solver.
///
/// `weights` drives both the proportional start and the raise/lower
/// priority order; `ceiling_deltas` drives the ceilings, which are only
/// enforced when `enforce_ceilings` is set (the uniform baseline reports
/// them but ignores them).
struct WaterFill {
    levels: Vec<usize>,
    ceilings: Vec<f64>,
    ceiling_idx: Vec<usize>,
    budget_met: bool,
}

fn water_fill(
    problem: &AllocationProblem,
    weights: &[f64],
    ceiling_deltas: &[f64],
    enforce_ceilings: bool,
) -> Result<WaterFill> {
    problem.validate()?;
    let n = problem.components.len();
    let grid = &problem.grid;
    let sizes: Vec<f64> = problem
        .components
        .iter()
        .map(|(_, s, _)| *s as f64)
        .collect();
    let total: f64 = sizes.iter().sum();
    let target = problem.rho * total;

    let ceilings: Vec<f64> = ceiling_deltas
        .iter()
        .map(|&d| budget_ceiling(d, problem))
        .collect();
    let ceiling_idx: Vec<usize> = ceilings
        .iter()
        .map(|&c| {
            grid.snap_down(c)
                .expect("validated grids reach below every ceiling")
        })
        .collect();
    let cap_idx: Vec<usize> = if enforce_ceilings {
        ceiling_idx.clone()
    } else {
        vec![grid.len() - 1; n]
    };

    // Proportional start: ξ_raw = ρ·w/w̄ with w̄ the size-weighted mean, so
    // the raw profile carries exactly the target mass before clipping.
    let w_bar: f64 = weights.iter().zip(&sizes).map(|(w, s)| w * s).sum::<f64>() / total;
    let mut levels: Vec<usize> = (0..n)
        .map(|c| {
            let raw = if w_bar > 0.0 {
                problem.rho * weights[c] / w_bar
            } else {
                problem.rho
            };
            let capped = raw.min(grid.levels[cap_idx[c]]).max(grid.levels[0]);
            grid.snap_down(capped)
                .expect("capped value is at least the grid minimum")
                .min(cap_idx[c])
        })
        .collect();

    let mass = |lv: &[usize]| -> f64 {
        lv.iter()
            .zip(&sizes)
            .map(|(&l, s)| grid.levels[l] * s)
            .sum()
    };

    // Phase 1 — over budget: walk the lowest-weight components down first.
    let mut current = mass(&levels);
    while current > target + GRID_EPS {
        let victim = (0..n).filter(|&c| levels[c] > 0).min_by(|&a, &b| {
            weights[a]
                .total_cmp(&weights[b])
                .then(problem.components[a].0.cmp(&problem.components[b].0))
        });
        let Some(c) = victim else {
            return Err(Error::Infeasible(format!(
                "target mass {target} lies below the grid-minimum mass {current}"
            )));
        };
        current -= (grid.levels[levels[c]] - grid.levels[levels[c] - 1]) * sizes[c];
        levels[c] -= 1;
    }

    // Phase 2 — under budget: raise the highest-weight components that
    // still fit under both their cap and the remaining budget.
    loop {
        let candidate = (0..n)
            .filter(|&c| levels[c] < cap_idx[c])
            .filter(|&c| {
                let gain = (grid.levels[levels[c] + 1] - grid.levels[levels[c]]) * sizes[c];
                current + gain <= target + GRID_EPS
            })
            .max_by(|&a, &b| {
                weights[a]
                    .total_cmp(&weights[b])
                    .then(problem.components[b].0.cmp(&problem.components[a].0))
            });
        let Some(c) = candidate else { break };
        current += (grid.levels[levels[c] + 1] - grid.levels[levels[c]]) * sizes[c];
        levels[c] += 1;
    }

    let budget_met = target - current <= problem.step_slack() + GRID_EPS;
    Ok(WaterFill {
        levels,
        ceilings,
        ceiling_idx,
        budget_met,
    })
}

fn build_allocation(
    problem: &AllocationProblem,
    method: AllocMethod,
    wf: &WaterFill,
    fitness_trace: Vec<f64>,
) -> Allocation {
    let entries: Vec<AllocationEntry> = problem
        .components
        .iter()
        .enumerate()
        .map(|(c, (id, size, delta))| AllocationEntry {
            component: *id,
            size: *size,
            density: *delta,
            ceiling: wf.ceilings[c],
            ceiling_level: problem.grid.levels[wf.ceiling_idx[c]],
            xi: problem.grid.levels[wf.levels[c]],
        })
        .collect();
    let total: f64 = entries.iter().map(|e| e.size as f64).sum();
    let achieved = entries.iter().map(|e| e.xi * e.size as f64).sum::<f64>() / total;
    Allocation {
        method,
        rho: problem.rho,
        rho_min: problem.rho_min,
        rho_max: problem.rho_max,
        transfer: problem.transfer,
        grid: problem.grid.clone(),
        entries,
        achieved_ratio: achieved,
        budget_met: wf.budget_met,
        fitness_trace,
    }
}

/// Density-proportional allocation with ceiling clipping and water-filling.
pub fn cgc_l(problem: &AllocationProblem) -> Result<Allocation> {
    let deltas: Vec<f64> = problem.components.iter().map(|(_, _, d)| *d).collect();
    let wf = water_fill(problem, &deltas, &deltas, true)?;
    Ok(build_allocation(
        problem,
        AllocMethod::CgcL,
        &wf,
        Vec::new(),
    ))
}

/// The capability-blind baseline: every component keeps exactly the target
/// ratio ρ.
///
/// Neither the ceilings nor the level grid apply here — this reproduces
/// the reference uniform-sparsity baseline verbatim, so its retention may
/// sit off-grid when ρ does. Ceilings are still reported for comparison.
pub fn uniform_alloc(problem: &AllocationProblem) -> Result<Allocation> {
    problem.validate()?;
    let entries: Vec<AllocationEntry> = problem
        .components
        .iter()
        .map(|(id, size, delta)| {
            let ceiling = budget_ceiling(*delta, problem);
            let ceiling_level = problem.grid.levels[problem
                .grid
                .snap_down(ceiling)
                .expect("grid reaches rho_min")];
            AllocationEntry {
                component: *id,
                size: *size,
                density: *delta,
                ceiling,
                ceiling_level,
                xi: problem.rho,
            }
        })
        .collect();
    Ok(Allocation {
        method: AllocMethod::Uniform,
        rho: problem.rho,
        rho_min: problem.rho_min,
        rho_max: problem.rho_max,
        transfer: problem.transfer,
        grid: problem.grid.clone(),
        entries,
        achieved_ratio: problem.rho,
        budget_met: true,
        fitness_trace: Vec::new(),
    })
}

/// The adversarial control: densities mirrored about their midrange, so
/// high-density components are pruned hardest; ceilings follow the
/// mirrored densities.
pub fn inverted_alloc(problem: &AllocationProblem) -> Result<Allocation> {
    let deltas: Vec<f64> = problem.components.iter().map(|(_, _, d)| *d).collect();
    let (lo, hi) = deltas
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| {
            (lo.min(d), hi.max(d))
        });
    let mirrored: Vec<f64> = deltas.iter().map(|&d| hi + lo - d).collect();
    let wf = water_fill(problem, &mirrored, &mirrored, true)?;
    Ok(build_allocation(
        problem,
        AllocMethod::Inverted,
        &wf,
        Vec::new(),
    ))
}

/// Hyperparameters for the evolutionary refinement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvoConfig {
    pub population: usize,
    pub generations: usize,
    /// Level-switch mutations applied per offspring.
    pub mutations: usize,
    /// Calibration sequences the production fitness oracle samples.
    pub fitness_sample: usize,
    /// Individuals carried over unchanged each generation.
    pub elite: usize,
    pub seed: u64,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            population: 16,
            generations: 50,
            mutations: 2,
            fitness_sample: 8,
            elite: 2,
            seed: 1337,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::InvalidConfig(
                "evolutionary population must be at least 2".into(),
            ));
        }
        if self.elite == 0 || self.elite >= self.population {
            return Err(Error::InvalidConfig(format!(
                "elite count must lie in 1..population, got {}",
                self.elite
            )));
        }
        if self.mutations == 0 {
            return Err(Error::InvalidConfig(
                "offspring need at least one mutation".into(),
            ));
        }
        Ok(())
    }
}

/// One level-switch: raise component `a` one grid level, then lower
/// component `b` until the mass fits the budget again. Returns false (and
/// leaves `levels` untouched) when the switch is impossible.
#[allow(clippy::too_many_arguments)]
fn try_switch(
    levels: &mut [usize],
    a: usize,
    b: usize,
    sizes: &[f64],
    grid: &Grid,
    cap_idx: &[usize],
    target: f64,
    current: &mut f64,
) -> bool {
    if a == b || levels[a] >= cap_idx[a] {
        return false;
    }
    let saved_b = levels[b];
    let saved_mass = *current;
    *current += (grid.levels[levels[a] + 1] - grid.levels[levels[a]]) * sizes[a];
    levels[a] += 1;
    while *current > target + GRID_EPS {
        if levels[b] == 0 {
            // Cannot restore the budget: roll back.
            levels[a] -= 1;
            levels[b] = saved_b;
            *current = saved_mass;
            return false;
        }
        *current -= (grid.levels[levels[b]] - grid.levels[levels[b] - 1]) * sizes[b];
        levels[b] -= 1;
    }
    true
}

/// Evolutionary refinement of an initial allocation.
///
/// (μ+λ)-style elitist search: each generation keeps the `elite` best
/// individuals unchanged and fills the rest of the population with mutated
/// copies of uniformly chosen parents. Mutations are level switches that
/// keep every candidate inside its ceiling and the global budget, so every
/// allocation the fitness oracle sees is feasible. Returns the best
/// individual ever evaluated; its fitness never exceeds the initial
/// allocation's.
pub fn cgc_f(
    problem: &AllocationProblem,
    init: &Allocation,
    evo: &EvoConfig,
    fitness: &mut dyn FnMut(&Allocation) -> Result<f64>,
) -> Result<Allocation> {
    problem.validate()?;
    evo.validate()?;
    let n = problem.components.len();
    let grid = &problem.grid;
    let sizes: Vec<f64> = problem
        .components
        .iter()
        .map(|(_, s, _)| *s as f64)
        .collect();
    let target = problem.target_mass();
    let deltas: Vec<f64> = problem.components.iter().map(|(_, _, d)| *d).collect();
    let ceilings: Vec<f64> = deltas.iter().map(|&d| budget_ceiling(d, problem)).collect();
    let cap_idx: Vec<usize> = ceilings
        .iter()
        .map(|&c| {
            grid.snap_down(c)
                .expect("validated grids reach below every ceiling")
        })
        .collect();

    // Recover the initial level indices and check feasibility.
    let mut init_levels = vec![0usize; n];
    for (c, (id, _, _)) in problem.components.iter().enumerate() {
        let xi = init.xi_for(*id)?;
        let idx = grid
            .levels
            .iter()
            .position(|&l| (l - xi).abs() <= GRID_EPS)
            .ok_or_else(|| {
                Error::InvalidConfig(format!("initial retention {xi} for {id} is off-grid"))
            })?;
        if idx > cap_idx[c] {
            return Err(Error::Infeasible(format!(
                "initial retention {xi} for {id} exceeds its ceiling level"
            )));
        }
        init_levels[c] = idx;
    }
    let mass = |lv: &[usize]| -> f64 {
        lv.iter()
            .zip(&sizes)
            .map(|(&l, s)| grid.levels[l] * s)
            .sum()
    };
    if mass(&init_levels) > target + GRID_EPS {
        return Err(Error::Infeasible(
            "initial allocation exceeds the global budget".into(),
        ));
    }

    let eval = |levels: &[usize], fitness: &mut dyn FnMut(&Allocation) -> Result<f64>| {
        let wf = WaterFill {
            levels: levels.to_vec(),
            ceilings: ceilings.clone(),
            ceiling_idx: cap_idx.clone(),
            budget_met: true,
        };
        let alloc = build_allocation(problem, AllocMethod::CgcF, &wf, Vec::new());
        let f = fitness(&alloc)?;
        if !f.is_finite() {
            return Err(Error::NonFinite {
                what: "fitness",
                step: 0,
            });
        }
        Ok(f)
    };

    let init_fit = eval(&init_levels, fitness)?;
    let mut best: (Vec<usize>, f64) = (init_levels.clone(), init_fit);
    let mut trace = vec![init_fit];

    if evo.generations > 0 {
        let mut rng = rng_from(evo.seed);
        let mutate = |parent: &[usize], rng: &mut crate::rng::Rng| -> Vec<usize> {
            let mut child = parent.to_vec();
            let mut current = mass(&child);
            for _ in 0..evo.mutations {
                for _attempt in 0..16 {
                    let a = rand::Rng::gen_range(rng, 0..n);
                    let b = rand::Rng::gen_range(rng, 0..n);
                    if try_switch(
                        &mut child,
                        a,
                        b,
                        &sizes,
                        grid,
                        &cap_idx,
                        target,
                        &mut current,
                    ) {
                        break;
                    }
                }
            }
            child
        };

        // Seed population: the initial allocation plus mutated copies.
        let mut pop: Vec<(Vec<usize>, f64)> = Vec::with_capacity(evo.population);
        pop.push((init_levels.clone(), init_fit));
        for _ in 1..evo.population {
            let child = mutate(&init_levels, &mut rng);
            let f = eval(&child, fitness)?;
            pop.push((child, f));
        }
        let better = |x: &(Vec<usize>, f64), y: &(Vec<usize>, f64)| {
            x.1.total_cmp(&y.1).then_with(|| x.0.cmp(&y.0))
        };
        for ind in &pop {
            if better(ind, &best).is_lt() {
                best = ind.clone();
            }
        }

        for _gen in 0..evo.generations {
            pop.sort_by(better);
            let mut next: Vec<(Vec<usize>, f64)> = pop[..evo.elite].to_vec();
            for _ in evo.elite..evo.population {
                let parent = rand::Rng::gen_range(&mut rng, 0..pop.len());
                let child = mutate(&pop[parent].0, &mut rng);
                let f = eval(&child, fitness)?;
                next.push((child, f));
            }
            pop = next;
            for ind in &pop {
                if better(ind, &best).is_lt() {
                    best = ind.clone();
                }
            }
            trace.push(best.1);
        }
    }

    let wf = WaterFill {
        budget_met: target - mass(&best.0) <= problem.step_slack() + GRID_EPS,
        levels: best.0,
        ceilings,
        ceiling_idx: cap_idx,
    };
    Ok(build_allocation(problem, AllocMethod::CgcF, &wf, trace))
}

/// The production fitness oracle: mean next-byte NLL of the pruned model
/// on a fixed calibration sample.
pub fn calibration_fitness<'a>(
    ckpt: &'a Checkpoint,
    sequences: &'a [Vec<u8>],
) -> impl FnMut(&Allocation) -> Result<f64> + 'a {
    move |alloc: &Allocation| {
        let pruned = apply_prune(ckpt, &alloc.to_prune_spec())?;
        mean_nll(&pruned, sequences)
    }
}

//! Pipeline orchestration: blocks → extremal block energies → cost
//! equations → closed-form bound functions, plus budget verdicts and the
//! deviation reporting used by the benchmark tables.

use std::collections::BTreeMap;

use num_rational::BigRational;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cfg::{extract_blocks, harness_program, Cfg, HarnessId, HarnessMap};
use crate::energy::Energy;
use crate::evo::{
    optimize_harness_block, BlockBound, Direction, EaCache, EaConfig,
};
use crate::hcir::{
    setup_cost_equations, to_hcir, BlockCosts, ClauseSystem, HcirError, MetricSpec,
};
use crate::isa::Program;
use crate::simkernel::{
    exhaustive_extrema, max_feasible_bit_width, run_program_profile, EnergyModelParams,
    EnergyTrace, RunOptions, SimError,
};
use crate::solver::{solve_with_horizon, SolveResult};

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error("block modeling stage: {0}")]
    Modeling(#[from] SimError),
    #[error("equation stage: {0}")]
    Equations(#[from] HcirError),
    #[error("bound invariant violated: {0}")]
    Invariant(String),
}

/// Where per-block bounds come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSource {
    /// Evolutionary search over full 32-bit inputs.
    Ea,
    /// Exhaustive ground truth over a restricted domain: each input ranges
    /// over `max_bits` bits, shrunk per block so the domain stays within
    /// 2^24 points.
    Exhaustive { max_bits: u32 },
}

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub ea: EaConfig,
    pub metrics: BTreeMap<String, MetricSpec>,
    pub bound_source: BoundSource,
    /// Multiplies upper block bounds before composition; 1.0 disables it.
    pub safety_margin: f64,
    /// Table horizon and pointwise-check range for solved bounds.
    pub horizon: u64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            ea: EaConfig::default(),
            metrics: BTreeMap::new(),
            bound_source: BoundSource::Ea,
            safety_margin: 1.0,
            horizon: 30,
        }
    }
}

/// Upper and lower bound for one harness part.
#[derive(Debug, Clone, Serialize)]
pub struct PartBounds {
    pub upper: BlockBound,
    pub lower: BlockBound,
}

/// The solved bound functions for one entry function.
#[derive(Debug, Clone)]
pub struct EnergyFunctionPair {
    pub function: String,
    pub metric: MetricSpec,
    pub ub: SolveResult,
    pub lb: SolveResult,
    pub model_hash: String,
    pub ea_config_hash: String,
}

impl EnergyFunctionPair {
    pub fn ub_at(&self, n: u64) -> Option<BigRational> {
        self.ub.eval(n)
    }

    pub fn lb_at(&self, n: u64) -> Option<BigRational> {
        self.lb.eval(n)
    }
}

/// Everything the pipeline produced for one program.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub cfg: Cfg,
    pub harness: HarnessMap,
    pub system: ClauseSystem,
    pub block_bounds: BTreeMap<HarnessId, PartBounds>,
    pub pair: EnergyFunctionPair,
}

/// Runs per-block searches for both directions, consulting the cache.
pub fn compute_block_bounds(
    harness: &HarnessMap,
    model: &EnergyModelParams,
    options: &AnalyzeOptions,
    cache: &mut EaCache,
) -> Result<BTreeMap<HarnessId, PartBounds>, SimError> {
    let config_hash = match options.bound_source {
        BoundSource::Ea => options.ea.hash_hex(),
        BoundSource::Exhaustive { max_bits } => format!("exhaustive-{max_bits}"),
    };
    let mut todo = Vec::new();
    let mut done: BTreeMap<HarnessId, PartBounds> = BTreeMap::new();
    for (id, part) in &harness.parts {
        let hit = |direction| {
            cache
                .lookup(part, model, direction, &config_hash)
                .map(|c| BlockBound {
                    block: *id,
                    direction,
                    value: c.value,
                    witness: c.witness.clone(),
                    generations_run: c.generations_run,
                    evaluations: c.evaluations,
                    best_history: Vec::new(),
                })
        };
        match (hit(Direction::Upper), hit(Direction::Lower)) {
            (Some(upper), Some(lower)) => {
                done.insert(*id, PartBounds { upper, lower });
            }
            _ => todo.push(part.clone()),
        }
    }

    let computed: Vec<Result<(HarnessId, PartBounds), SimError>> = todo
        .par_iter()
        .map(|part| {
            let (upper, lower) = match options.bound_source {
                BoundSource::Ea => (
                    optimize_harness_block(part, Direction::Upper, &options.ea, model)?,
                    optimize_harness_block(part, Direction::Lower, &options.ea, model)?,
                ),
                BoundSource::Exhaustive { max_bits } => {
                    let bw = max_feasible_bit_width(part.inputs.len()).min(max_bits.clamp(1, 12));
                    let ex = exhaustive_extrema(part, bw, model)?;
                    let mk = |direction, value, witness: Vec<u32>| BlockBound {
                        block: part.id,
                        direction,
                        value,
                        witness,
                        generations_run: 0,
                        evaluations: 1u64 << (bw as usize * part.inputs.len()),
                        best_history: Vec::new(),
                    };
                    (
                        mk(Direction::Upper, ex.max, ex.witness_max),
                        mk(Direction::Lower, ex.min, ex.witness_min),
                    )
                }
            };
            Ok((part.id, PartBounds { upper, lower }))
        })
        .collect();
    for item in computed {
        let (id, bounds) = item?;
        let part = harness.part(id);
        cache.insert(part, model, &config_hash, &bounds.upper);
        cache.insert(part, model, &config_hash, &bounds.lower);
        done.insert(id, bounds);
    }
    Ok(done)
}

/// Full pipeline for one program: blocks, per-block extrema in both
/// directions, Horn clauses, cost equations, closed forms.
pub fn analyze(
    program: &Program,
    model: &EnergyModelParams,
    options: &AnalyzeOptions,
    cache: &mut EaCache,
) -> Result<Analysis, AnalyzeError> {
    let cfg = extract_blocks(program);
    let harness = harness_program(&cfg);
    let system = to_hcir(&cfg, &harness, &options.metrics)?;
    let block_bounds = compute_block_bounds(&harness, model, options, cache)?;

    let mut upper_values: BTreeMap<HarnessId, Energy> = BTreeMap::new();
    let mut lower_values: BTreeMap<HarnessId, Energy> = BTreeMap::new();
    for (id, b) in &block_bounds {
        let up = if options.safety_margin > 1.0 {
            b.upper.value.saturating_mul_factor(options.safety_margin)
        } else {
            b.upper.value
        };
        upper_values.insert(*id, up);
        lower_values.insert(*id, b.lower.value);
    }
    let ub_eqs = setup_cost_equations(
        &system,
        &BlockCosts::from_model_tags(upper_values, model),
        Direction::Upper,
    )?;
    let lb_eqs = setup_cost_equations(
        &system,
        &BlockCosts::from_model_tags(lower_values, model),
        Direction::Lower,
    )?;
    let ub = solve_with_horizon(&ub_eqs, options.horizon);
    let lb = solve_with_horizon(&lb_eqs, options.horizon);

    // pointwise sanity over the checked range
    let from = ub.valid_from.max(lb.valid_from);
    for n in from..=options.horizon {
        if let (Some(u), Some(l)) = (ub.eval(n), lb.eval(n)) {
            if u < l {
                return Err(AnalyzeError::Invariant(format!(
                    "ub(n) < lb(n) at n = {n}"
                )));
            }
        }
    }

    let pair = EnergyFunctionPair {
        function: cfg.program.entry.clone(),
        metric: ub_eqs.metric,
        ub,
        lb,
        model_hash: model.hash_hex(),
        ea_config_hash: options.ea.hash_hex(),
    };
    Ok(Analysis {
        cfg,
        harness,
        system,
        block_bounds,
        pair,
    })
}

/// Budget verdicts, the trichotomy of the verification story.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Decision {
    /// `ub(n) <= budget`: the program runs within the budget.
    Accept,
    /// `lb(n) <= budget < ub(n)`: completion cannot be guaranteed.
    Unknown,
    /// `budget < lb(n)`: the energy runs out before completion.
    Reject,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub decision: Decision,
    pub lb: BigRational,
    pub ub: BigRational,
    pub budget: BigRational,
}

#[derive(Debug, Error, PartialEq)]
pub enum BoundsError {
    #[error("size {0} is outside the solved domain")]
    OutsideDomain(u64),
    #[error("harmonic difference requires positive energies, got {0}")]
    NonPositive(f64),
}

/// Exactly one of Accept / Unknown / Reject per query.
pub fn verify_budget(
    pair: &EnergyFunctionPair,
    n: u64,
    budget: Energy,
) -> Result<Verdict, BoundsError> {
    let ub = pair.ub_at(n).ok_or(BoundsError::OutsideDomain(n))?;
    let lb = pair.lb_at(n).ok_or(BoundsError::OutsideDomain(n))?;
    let budget = budget.to_rational();
    let decision = if ub <= budget {
        Decision::Accept
    } else if budget < lb {
        Decision::Reject
    } else {
        Decision::Unknown
    };
    Ok(Verdict {
        decision,
        lb,
        ub,
        budget,
    })
}

/// Relative harmonic difference between an estimate and an observation,
/// in percent: `((est - obs) * (1/est + 1/obs)) / 2 * 100`.
pub fn rel_harmonic_diff(est: f64, obs: f64) -> Result<f64, BoundsError> {
    if est <= 0.0 || obs <= 0.0 {
        return Err(BoundsError::NonPositive(est.min(obs)));
    }
    Ok((est - obs) * (1.0 / est + 1.0 / obs) / 2.0 * 100.0)
}

/// The model-only estimate of a run: per-part execution counts times the
/// per-part bounds, plus tag costs at their sites. Assumes the analysis
/// counted blocks perfectly, so any deviation left is modeling error.
pub fn profile_estimate_with_program(
    cfg: &Cfg,
    trace: &EnergyTrace,
    bounds: &BTreeMap<HarnessId, PartBounds>,
    model: &EnergyModelParams,
    direction: Direction,
) -> Energy {
    let mut total = Energy::ZERO;
    for (id, count) in &trace.part_counts {
        if let Some(b) = bounds.get(id) {
            let v = match direction {
                Direction::Upper => b.upper.value,
                Direction::Lower => b.lower.value,
            };
            total += Energy(v.0 * count);
        }
    }
    for ((func, index), count) in &trace.tag_counts {
        let op = cfg.program.functions[*func].instructions[*index].opcode;
        total += Energy(model.base_cost(op).0 * count);
    }
    total
}

/// One row of the accuracy table: estimate vs profile-estimate vs observed.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct DeviationRow {
    pub program: String,
    pub n: u64,
    pub direction: Direction,
    /// Which input produced the observation: `random`, `worst`, `best`.
    pub data: String,
    /// Bound function evaluated at n, in pJ.
    pub est_pj: f64,
    /// Block bounds times profiled counts, in pJ.
    pub prof_pj: f64,
    /// Simulated energy of the run, in pJ.
    pub obs_pj: f64,
    /// rhd(est, obs), percent.
    pub d_pct: f64,
    /// rhd(prof, obs), percent.
    pub prd_pct: f64,
}

/// A labelled program input: argument registers plus the memory image.
#[derive(Debug, Clone)]
pub struct LabelledInput {
    pub label: String,
    pub args: Vec<u32>,
    pub image: Vec<u32>,
}

/// Builds the accuracy rows for one analyzed program over the given sizes.
pub fn deviation_rows(
    analysis: &Analysis,
    model: &EnergyModelParams,
    sizes: &[u64],
    inputs_for: &dyn Fn(u64) -> Vec<LabelledInput>,
) -> Result<Vec<DeviationRow>, AnalyzeError> {
    let mut rows = Vec::new();
    for &n in sizes {
        for input in inputs_for(n) {
            let trace = run_program_profile(
                &analysis.cfg,
                &analysis.harness,
                &input.args,
                &input.image,
                model,
                &RunOptions::default(),
            )?;
            let obs = trace.total;
            for direction in [Direction::Lower, Direction::Upper] {
                let est = match direction {
                    Direction::Upper => analysis.pair.ub_at(n),
                    Direction::Lower => analysis.pair.lb_at(n),
                };
                let est = est.ok_or(AnalyzeError::Invariant(format!(
                    "size {n} outside the solved domain"
                )))?;
                let est_pj = rational_to_f64(&est);
                let prof = profile_estimate_with_program(
                    &analysis.cfg,
                    &trace,
                    &analysis.block_bounds,
                    model,
                    direction,
                );
                let d_pct = rel_harmonic_diff(est_pj, obs.as_pj()).unwrap_or(f64::NAN);
                let prd_pct = rel_harmonic_diff(prof.as_pj(), obs.as_pj()).unwrap_or(f64::NAN);
                rows.push(DeviationRow {
                    program: analysis.pair.function.clone(),
                    n,
                    direction,
                    data: input.label.clone(),
                    est_pj,
                    prof_pj: prof.as_pj(),
                    obs_pj: obs.as_pj(),
                    d_pct,
                    prd_pct,
                });
            }
        }
    }
    Ok(rows)
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}

//! Evolutionary search for per-block maximal and minimal energies.
//!
//! An individual is an array of 32-bit input values, one per gen-set
//! location. The initial population is random except for a handful of corner
//! cases known to pin extreme energies (all zeros, all ones, alternating bit
//! patterns, per-gene corners). Crossover is even-odd; mutation XORs each
//! gene with a fresh random mask. The loop runs for at most
//! `max_generations` and stops once the best fitness has not improved for
//! `stagnation_limit` consecutive generations.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cfg::{HarnessBlock, HarnessId};
use crate::energy::Energy;
use crate::simkernel::{run_block, EnergyModelParams, SimError};

/// Which extremum a search targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Upper,
    Lower,
}

impl Direction {
    /// True if `a` is strictly better than `b` for this direction.
    fn improves(self, a: Energy, b: Energy) -> bool {
        match self {
            Direction::Upper => a > b,
            Direction::Lower => a < b,
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Upper => "upper",
            Direction::Lower => "lower",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Individual {
    pub genes: Vec<u32>,
    pub fitness: Option<Energy>,
}

impl Individual {
    pub fn new(genes: Vec<u32>) -> Individual {
        Individual {
            genes,
            fitness: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EaConfig {
    pub population_size: usize,
    pub max_generations: u32,
    pub stagnation_limit: u32,
    pub crossover_rate: f64,
    /// Probability that an offspring individual is mutated.
    pub mutation_rate: f64,
    pub tournament_size: usize,
    pub elitism_count: usize,
    pub rng_seed: u64,
    /// Restrict genes to the low `gene_bits` bits, for comparisons against
    /// exhaustive oracles over the same domain. `None` means full 32-bit.
    pub gene_bits: Option<u32>,
}

impl Default for EaConfig {
    fn default() -> Self {
        EaConfig {
            population_size: 64,
            max_generations: 20,
            stagnation_limit: 4,
            crossover_rate: 0.9,
            mutation_rate: 0.3,
            tournament_size: 3,
            elitism_count: 2,
            rng_seed: 0,
            gene_bits: None,
        }
    }
}

impl EaConfig {
    pub fn validate(&self) {
        assert!(self.population_size >= 2, "population_size must be >= 2");
        assert!(self.max_generations >= 1);
        assert!(self.stagnation_limit >= 1);
        assert!(self.tournament_size >= 1);
    }

    fn gene_mask(&self) -> u32 {
        match self.gene_bits {
            Some(b) if b < 32 => (1u32 << b) - 1,
            _ => u32::MAX,
        }
    }

    pub fn hash_hex(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        );
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// An extremal energy found for one harness block, with its witness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockBound {
    pub block: HarnessId,
    pub direction: Direction,
    pub value: Energy,
    /// Inputs that reproduce `value` exactly.
    pub witness: Vec<u32>,
    pub generations_run: u32,
    pub evaluations: u64,
    /// Best fitness after each generation, for stopping-rule checks.
    pub best_history: Vec<Energy>,
}

/// Seeds the initial population: corner cases first, the rest random.
pub fn seed_population(n_inputs: usize, cfg: &EaConfig, rng: &mut ChaCha8Rng) -> Vec<Individual> {
    cfg.validate();
    let mask = cfg.gene_mask();
    let mut population: Vec<Individual> = Vec::with_capacity(cfg.population_size);
    let push = |genes: Vec<u32>, population: &mut Vec<Individual>| {
        if population.len() < cfg.population_size {
            let genes: Vec<u32> = genes.into_iter().map(|g| g & mask).collect();
            if !population.iter().any(|i| i.genes == genes) {
                population.push(Individual::new(genes));
            }
        }
    };
    push(vec![0u32; n_inputs], &mut population);
    push(vec![u32::MAX; n_inputs], &mut population);
    push(
        (0..n_inputs)
            .map(|i| if i % 2 == 0 { 0xAAAA_AAAA } else { 0x5555_5555 })
            .collect(),
        &mut population,
    );
    push(
        (0..n_inputs)
            .map(|i| if i % 2 == 0 { 0x5555_5555 } else { 0xAAAA_AAAA })
            .collect(),
        &mut population,
    );
    // per-gene single-corner mixes
    for i in 0..n_inputs {
        let mut ones_at = vec![0u32; n_inputs];
        ones_at[i] = u32::MAX;
        push(ones_at, &mut population);
        let mut zero_at = vec![u32::MAX; n_inputs];
        zero_at[i] = 0;
        push(zero_at, &mut population);
    }
    while population.len() < cfg.population_size {
        let genes: Vec<u32> = (0..n_inputs).map(|_| rng.gen::<u32>() & mask).collect();
        population.push(Individual::new(genes));
    }
    population
}

/// Even-odd crossover: `c1` takes `p1`'s even-index genes and `p2`'s
/// odd-index genes; `c2` is the complement.
pub fn crossover_even_odd(p1: &Individual, p2: &Individual) -> (Individual, Individual) {
    assert_eq!(p1.genes.len(), p2.genes.len(), "parent length mismatch");
    let mut c1 = Vec::with_capacity(p1.genes.len());
    let mut c2 = Vec::with_capacity(p1.genes.len());
    for i in 0..p1.genes.len() {
        if i % 2 == 0 {
            c1.push(p1.genes[i]);
            c2.push(p2.genes[i]);
        } else {
            c1.push(p2.genes[i]);
            c2.push(p1.genes[i]);
        }
    }
    (Individual::new(c1), Individual::new(c2))
}

/// XOR-mask mutation: every gene is XORed with a fresh random 32-bit mask.
pub fn mutate_xor(ind: &Individual, rng: &mut ChaCha8Rng) -> Individual {
    Individual::new(ind.genes.iter().map(|g| g ^ rng.gen::<u32>()).collect())
}

fn better_index(population: &[Individual], a: usize, b: usize, direction: Direction) -> usize {
    let fa = population[a].fitness.expect("evaluated");
    let fb = population[b].fitness.expect("evaluated");
    if direction.improves(fb, fa) {
        b
    } else {
        a // ties keep the lower index
    }
}

/// Runs the generational loop for one block and direction.
///
/// The oracle must be a deterministic map from inputs to energy; block
/// energies from [`run_block`] are. Always returns the best found so far.
pub fn optimize_block<F>(
    block_id: HarnessId,
    n_inputs: usize,
    direction: Direction,
    cfg: &EaConfig,
    oracle: F,
) -> Result<BlockBound, SimError>
where
    F: Fn(&[u32]) -> Result<Energy, SimError>,
{
    cfg.validate();
    let mask = cfg.gene_mask();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut evaluations: u64 = 0;

    // an input-free block has constant fitness: one evaluation settles it
    if n_inputs == 0 {
        let value = oracle(&[])?;
        return Ok(BlockBound {
            block: block_id,
            direction,
            value,
            witness: Vec::new(),
            generations_run: 1,
            evaluations: 1,
            best_history: vec![value],
        });
    }

    let mut population = seed_population(n_inputs, cfg, &mut rng);
    for ind in &mut population {
        ind.fitness = Some(oracle(&ind.genes)?);
        evaluations += 1;
    }
    let mut best_idx =
        (1..population.len()).fold(0, |acc, i| better_index(&population, acc, i, direction));
    let mut best = population[best_idx].clone();
    let mut best_history = vec![best.fitness.unwrap()];
    let mut generations_run: u32 = 1;
    let mut stagnant: u32 = 0;

    while generations_run < cfg.max_generations && stagnant < cfg.stagnation_limit {
        // elitism: the best individuals carry over unchanged
        let mut ranked: Vec<usize> = (0..population.len()).collect();
        ranked.sort_by(|&a, &b| {
            let fa = population[a].fitness.unwrap();
            let fb = population[b].fitness.unwrap();
            match direction {
                Direction::Upper => fb.cmp(&fa).then(a.cmp(&b)),
                Direction::Lower => fa.cmp(&fb).then(a.cmp(&b)),
            }
        });
        let mut next: Vec<Individual> = ranked
            .iter()
            .take(cfg.elitism_count.min(population.len()))
            .map(|&i| population[i].clone())
            .collect();

        while next.len() < cfg.population_size {
            let p1 = tournament(&population, cfg, direction, &mut rng);
            let p2 = tournament(&population, cfg, direction, &mut rng);
            let (mut c1, mut c2) = if rng.gen::<f64>() < cfg.crossover_rate {
                crossover_even_odd(&population[p1], &population[p2])
            } else {
                (
                    Individual::new(population[p1].genes.clone()),
                    Individual::new(population[p2].genes.clone()),
                )
            };
            for child in [&mut c1, &mut c2] {
                if rng.gen::<f64>() < cfg.mutation_rate {
                    *child = mutate_xor(child, &mut rng);
                    for g in &mut child.genes {
                        *g &= mask;
                    }
                }
            }
            next.push(c1);
            if next.len() < cfg.population_size {
                next.push(c2);
            }
        }

        population = next;
        for ind in &mut population {
            if ind.fitness.is_none() {
                ind.fitness = Some(oracle(&ind.genes)?);
                evaluations += 1;
            }
        }
        generations_run += 1;

        best_idx =
            (1..population.len()).fold(0, |acc, i| better_index(&population, acc, i, direction));
        let gen_best = &population[best_idx];
        if direction.improves(gen_best.fitness.unwrap(), best.fitness.unwrap()) {
            best = gen_best.clone();
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        best_history.push(best.fitness.unwrap());
    }

    Ok(BlockBound {
        block: block_id,
        direction,
        value: best.fitness.unwrap(),
        witness: best.genes,
        generations_run,
        evaluations,
        best_history,
    })
}

fn tournament(
    population: &[Individual],
    cfg: &EaConfig,
    direction: Direction,
    rng: &mut ChaCha8Rng,
) -> usize {
    let mut winner = rng.gen_range(0..population.len());
    for _ in 1..cfg.tournament_size {
        let challenger = rng.gen_range(0..population.len());
        // compare lowest index first so ties resolve by index order
        let (a, b) = (winner.min(challenger), winner.max(challenger));
        winner = better_index(population, a, b, direction);
    }
    winner
}

/// Optimizes a harness block against the simulator. The RNG seed is derived
/// from the master seed, the block's canonical text, and the direction, so
/// per-block searches are order-independent and reproducible.
pub fn optimize_harness_block(
    block: &HarnessBlock,
    direction: Direction,
    cfg: &EaConfig,
    model: &EnergyModelParams,
) -> Result<BlockBound, SimError> {
    let mut cfg = cfg.clone();
    cfg.rng_seed = derive_seed(cfg.rng_seed, &block.canonical(), direction);
    optimize_block(block.id, block.inputs.len(), direction, &cfg, |inputs| {
        run_block(block, inputs, model)
    })
}

fn derive_seed(master: u64, canonical: &str, direction: Direction) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(canonical.as_bytes());
    h.update([direction as u8]);
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

/// One direction's cached result for a block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedBound {
    pub value: Energy,
    pub witness: Vec<u32>,
    pub generations_run: u32,
    pub evaluations: u64,
    /// Config the entry was computed with; a mismatch forces recomputation.
    pub config_hash: String,
}

/// EA result cache keyed by (block instruction hash, model hash, direction).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EaCache {
    pub entries: BTreeMap<String, CachedBound>,
}

impl EaCache {
    pub fn key(block: &HarnessBlock, model: &EnergyModelParams, direction: Direction) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(block.canonical().as_bytes());
        h.update(model.hash_hex().as_bytes());
        h.update([direction as u8]);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn lookup(
        &self,
        block: &HarnessBlock,
        model: &EnergyModelParams,
        direction: Direction,
        config_hash: &str,
    ) -> Option<&CachedBound> {
        self.entries
            .get(&Self::key(block, model, direction))
            .filter(|e| e.config_hash == config_hash)
    }

    pub fn insert(
        &mut self,
        block: &HarnessBlock,
        model: &EnergyModelParams,
        config_hash: &str,
        bound: &BlockBound,
    ) {
        self.entries.insert(
            Self::key(block, model, bound.direction),
            CachedBound {
                value: bound.value,
                witness: bound.witness.clone(),
                generations_run: bound.generations_run,
                evaluations: bound.evaluations,
                config_hash: config_hash.to_string(),
            },
        );
    }

    pub fn from_json(text: &str) -> Result<EaCache, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cache serializes")
    }
}

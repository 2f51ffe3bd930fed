//! Command implementations. Each command returns its stdout text; `main`
//! maps errors to exit codes (64 usage, 1 analysis, verify's verdict codes).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ebound::bounds::{
    analyze, deviation_rows, verify_budget, Analysis, AnalyzeOptions, BoundSource, Decision,
    LabelledInput,
};
use ebound::cfg;
use ebound::energy::Energy;
use ebound::evo::{Direction, EaCache, EaConfig};
use ebound::hcir::{MetricSpec, SizeMetric};
use ebound::isa::parse_program;
use ebound::simkernel::{
    exhaustive_extrema, run_program_profile, EnergyModelParams, RunOptions,
};
use ebound::solver::render_rational;

use crate::corpus;
use crate::report;

#[derive(Parser)]
#[command(
    name = "ebound",
    version,
    about = "Parametric energy-bound analysis for a small toy ISA",
    disable_help_subcommand = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Infer closed-form upper/lower energy bound functions for a program.
    Analyze {
        file: PathBuf,
        #[command(flatten)]
        flags: AnalyzeFlags,
        /// Which bound functions to print.
        #[arg(long, value_enum, default_value = "both")]
        direction: DirectionArg,
        #[arg(long)]
        json: bool,
    },
    /// Show per-block extremal energies (the low-level energy model).
    ModelBlocks {
        file: PathBuf,
        #[command(flatten)]
        flags: AnalyzeFlags,
        /// Also show exhaustive oracle extrema at this bit width (1..=12)
        /// for blocks whose domain fits 2^24 points.
        #[arg(long)]
        bitwidth: Option<u32>,
        #[arg(long)]
        json: bool,
    },
    /// Execute a program on concrete inputs and profile its energy.
    Simulate {
        file: PathBuf,
        /// Argument registers r0, r1, ... as comma-separated words.
        #[arg(long, value_delimiter = ',', num_args = 0.., default_value = "")]
        args: Vec<String>,
        /// Initial data memory words (arrays), comma-separated.
        #[arg(long, value_delimiter = ',', num_args = 0.., default_value = "")]
        image: Vec<String>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000_000)]
        step_limit: u64,
        #[arg(long)]
        json: bool,
    },
    /// Check a program against an energy budget at a given input size.
    /// Exit code: 0 accept, 2 unknown, 3 reject.
    Verify {
        file: PathBuf,
        #[command(flatten)]
        flags: AnalyzeFlags,
        /// Input size to evaluate the bound functions at.
        #[arg(long)]
        n: u64,
        /// Energy budget in picojoules.
        #[arg(long)]
        budget: f64,
    },
    /// Analyze the benchmark corpus and report estimate/profile/observed
    /// accuracy rows.
    Bench {
        /// Benchmark names (default: the whole corpus).
        #[arg(long, value_delimiter = ',')]
        programs: Vec<String>,
        /// Input sizes.
        #[arg(long, value_delimiter = ',', default_values_t = vec![5u64, 15, 25])]
        sizes: Vec<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Render a previously saved `--json` document as text.
    Report { file: PathBuf },
}

#[derive(Args, Clone)]
pub struct AnalyzeFlags {
    /// Energy model JSON file (default: the built-in model).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Master RNG seed; all randomness derives from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "ea-pop", default_value_t = 64)]
    pub ea_pop: usize,
    #[arg(long = "ea-gens", default_value_t = 20)]
    pub ea_gens: u32,
    #[arg(long = "ea-stagnation", default_value_t = 4)]
    pub ea_stagnation: u32,
    /// Inflate upper block bounds by this factor before composition.
    #[arg(long, default_value_t = 1.0)]
    pub safety_margin: f64,
    /// EA result cache file (JSON), read and updated.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Solve/validate bounds for sizes up to this horizon.
    #[arg(long, default_value_t = 30)]
    pub horizon: u64,
    /// Size metric of the entry function's r0 argument.
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Upper,
    Lower,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    IntValue,
    ArrayLength,
}

fn load_model(path: &Option<PathBuf>) -> Result<EnergyModelParams> {
    match path {
        None => Ok(EnergyModelParams::default_model()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading model file {}", p.display()))?;
            Ok(EnergyModelParams::from_json(&text)?)
        }
    }
}

fn load_cache(path: &Option<PathBuf>) -> Result<EaCache> {
    match path {
        Some(p) if p.exists() => {
            let text = fs::read_to_string(p)?;
            Ok(EaCache::from_json(&text)?)
        }
        _ => Ok(EaCache::default()),
    }
}

fn save_cache(path: &Option<PathBuf>, cache: &EaCache) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, cache.to_json())?;
    }
    Ok(())
}

fn parse_word(text: &str) -> Result<u32> {
    let t = text.trim();
    if let Some(hex) = t.strip_prefix("0x") {
        return Ok(u32::from_str_radix(hex, 16)?);
    }
    Ok(t.parse()?)
}

fn parse_words(items: &[String]) -> Result<Vec<u32>> {
    items
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_word(s))
        .collect()
}

fn metrics_for(file: &Path, flag: Option<MetricArg>) -> BTreeMap<String, MetricSpec> {
    let stem = file
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    let mut metrics = BTreeMap::new();
    let spec = match flag {
        Some(MetricArg::IntValue) => Some(MetricSpec {
            metric: SizeMetric::IntValue,
            register: 0,
        }),
        Some(MetricArg::ArrayLength) => Some(MetricSpec {
            metric: SizeMetric::ArrayLength,
            register: 0,
        }),
        None => corpus::by_name(stem).map(|p| p.metric),
    };
    if let Some(spec) = spec {
        metrics.insert(stem.to_string(), spec);
    }
    metrics
}

fn analysis_for(file: &Path, flags: &AnalyzeFlags) -> Result<(Analysis, EnergyModelParams)> {
    let source =
        fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let program = parse_program(&source)?;
    let model = load_model(&flags.model)?;
    let mut cache = load_cache(&flags.cache)?;
    let options = AnalyzeOptions {
        ea: EaConfig {
            population_size: flags.ea_pop,
            max_generations: flags.ea_gens,
            stagnation_limit: flags.ea_stagnation,
            rng_seed: flags.seed,
            ..EaConfig::default()
        },
        metrics: metrics_for(file, flags.metric),
        bound_source: BoundSource::Ea,
        safety_margin: flags.safety_margin,
        horizon: flags.horizon,
    };
    let analysis = analyze(&program, &model, &options, &mut cache)?;
    save_cache(&flags.cache, &cache)?;
    Ok((analysis, model))
}

pub fn run(cli: Cli) -> Result<(String, i32)> {
    match cli.cmd {
        Cmd::Analyze {
            file,
            flags,
            direction,
            json,
        } => {
            let (analysis, _) = analysis_for(&file, &flags)?;
            let text = if json {
                format!("{:#}\n", report::analyze_json(&analysis))
            } else {
                let dir = match direction {
                    DirectionArg::Upper => Some(Direction::Upper),
                    DirectionArg::Lower => Some(Direction::Lower),
                    DirectionArg::Both => None,
                };
                report::analyze_text(&analysis, dir)
            };
            Ok((text, 0))
        }
        Cmd::ModelBlocks {
            file,
            flags,
            bitwidth,
            json,
        } => {
            let (analysis, model) = analysis_for(&file, &flags)?;
            let mut oracle = BTreeMap::new();
            if let Some(bw) = bitwidth {
                if !(1..=12).contains(&bw) {
                    bail!("--bitwidth must be within 1..=12");
                }
                for (id, part) in &analysis.harness.parts {
                    if part.inputs.len() * bw as usize <= 24 {
                        let ex = exhaustive_extrema(part, bw, &model)?;
                        oracle.insert(*id, (format!("{}", ex.min), format!("{}", ex.max)));
                    }
                }
            }
            let rows = report::block_rows(&analysis, &oracle);
            let text = if json {
                let doc = report::blocks_json(
                    &rows,
                    cfg::to_json(&analysis.cfg, &analysis.harness),
                );
                format!("{doc:#}\n")
            } else {
                report::blocks_text(&rows)
            };
            Ok((text, 0))
        }
        Cmd::Simulate {
            file,
            args,
            image,
            model,
            step_limit,
            json,
        } => {
            let source =
                fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let program = parse_program(&source)?;
            let model = load_model(&model)?;
            let graph = cfg::extract_blocks(&program);
            let harness = cfg::harness_program(&graph);
            let trace = run_program_profile(
                &graph,
                &harness,
                &parse_words(&args)?,
                &parse_words(&image)?,
                &model,
                &RunOptions {
                    step_limit,
                    ..RunOptions::default()
                },
            )?;
            let block_names: Vec<(usize, String)> = graph
                .blocks
                .iter()
                .map(|b| {
                    (
                        b.id.0,
                        format!("{}/{}", graph.functions[b.function].name, b.name),
                    )
                })
                .collect();
            let text = if json {
                format!("{:#}\n", report::simulate_json(&trace, &block_names))
            } else {
                report::simulate_text(&trace, &block_names)
            };
            Ok((text, 0))
        }
        Cmd::Verify {
            file,
            mut flags,
            n,
            budget,
        } => {
            if budget < 0.0 || !budget.is_finite() {
                bail!("--budget must be a non-negative energy in pJ");
            }
            flags.horizon = flags.horizon.max(n);
            let (analysis, _) = analysis_for(&file, &flags)?;
            let verdict = verify_budget(&analysis.pair, n, Energy::from_pj(budget))?;
            let text = format!(
                "verdict: {:?}\nlb({n}) = {} pJ\nub({n}) = {} pJ\nbudget  = {} pJ\n",
                verdict.decision,
                render_rational(&verdict.lb),
                render_rational(&verdict.ub),
                render_rational(&verdict.budget),
            );
            let code = match verdict.decision {
                Decision::Accept => 0,
                Decision::Unknown => 2,
                Decision::Reject => 3,
            };
            Ok((text, code))
        }
        Cmd::Bench {
            programs,
            sizes,
            seed,
            model,
            cache,
            json,
        } => {
            let model = load_model(&model)?;
            let mut ea_cache = load_cache(&cache)?;
            let selected: Vec<corpus::CorpusProgram> = if programs.is_empty() {
                corpus::all()
            } else {
                programs
                    .iter()
                    .map(|name| {
                        corpus::by_name(name)
                            .with_context(|| format!("unknown benchmark '{name}'"))
                    })
                    .collect::<Result<_>>()?
            };
            let mut functions = Vec::new();
            let mut rows = Vec::new();
            let horizon = sizes.iter().copied().max().unwrap_or(0).max(30);
            for program in &selected {
                let parsed = program.parse();
                let options = AnalyzeOptions {
                    ea: EaConfig {
                        rng_seed: seed,
                        ..EaConfig::default()
                    },
                    metrics: [(program.name.to_string(), program.metric)].into(),
                    bound_source: BoundSource::Ea,
                    safety_margin: 1.0,
                    horizon,
                };
                let analysis = analyze(&parsed, &model, &options, &mut ea_cache)?;
                functions.push(report::FunctionBoundsOut {
                    program: program.name.to_string(),
                    metric: report::metric_text(program.metric.metric).to_string(),
                    ub: analysis.pair.ub.render(),
                    lb: analysis.pair.lb.render(),
                });
                let inputs_for = |n: u64| -> Vec<LabelledInput> {
                    let mut inputs = Vec::new();
                    if program.is_array() {
                        inputs.push(program.random_input(n, seed ^ n.wrapping_mul(0x9E37)));
                    }
                    inputs.push(program.worst_input(n));
                    inputs.push(program.best_input(n));
                    inputs
                };
                rows.extend(deviation_rows(&analysis, &model, &sizes, &inputs_for)?);
            }
            save_cache(&cache, &ea_cache)?;
            let text = if json {
                format!(
                    "{:#}\n",
                    report::bench_json(seed, &model.hash_hex(), &functions, &rows)
                )
            } else {
                report::bench_text(seed, &model.hash_hex(), &functions, &rows)
            };
            Ok((text, 0))
        }
        Cmd::Report { file } => {
            let text =
                fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let doc: serde_json::Value = serde_json::from_str(&text)?;
            Ok((report::render_saved(&doc), 0))
        }
    }
}

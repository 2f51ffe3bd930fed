//! The benchmark corpus: six toy-ISA programs with their size metrics and
//! worst/best/random input generators.

use ebound::bounds::LabelledInput;
use ebound::hcir::{MetricSpec, SizeMetric};
use ebound::isa::{parse_program, Program};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FACT: &str = include_str!("../corpus/fact.toyisa");
pub const FIB: &str = include_str!("../corpus/fib.toyisa");
pub const REVERSE: &str = include_str!("../corpus/reverse.toyisa");
pub const FIND_MAX: &str = include_str!("../corpus/findMax.toyisa");
pub const SELECTION_SORT: &str = include_str!("../corpus/selectionSort.toyisa");
pub const FIR: &str = include_str!("../corpus/fir.toyisa");

/// How a program consumes an input of size n.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    /// The size itself is the single argument (fact, fib).
    IntArg,
    /// r0 = n and the data array sits at the bottom of memory.
    Array {
        /// Extra zeroed words reserved after the array (reverse's output).
        scratch_factor: usize,
    },
}

#[derive(Debug, Clone)]
pub struct CorpusProgram {
    pub name: &'static str,
    pub source: &'static str,
    pub metric: MetricSpec,
    pub kind: InputKind,
}

impl CorpusProgram {
    pub fn parse(&self) -> Program {
        parse_program(self.source).expect("corpus programs parse")
    }

    fn array_input(&self, label: &str, n: u64, data: Vec<u32>) -> LabelledInput {
        match self.kind {
            InputKind::IntArg => LabelledInput {
                label: label.to_string(),
                args: vec![n as u32],
                image: Vec::new(),
            },
            InputKind::Array { scratch_factor } => {
                let mut image = data;
                image.resize(n as usize * (1 + scratch_factor), 0);
                LabelledInput {
                    label: label.to_string(),
                    args: vec![n as u32],
                    image,
                }
            }
        }
    }

    /// The input expected to maximize energy at size n.
    pub fn worst_input(&self, n: u64) -> LabelledInput {
        let data = match self.name {
            // ascending data updates findMax's running maximum every step
            "findMax" => (1..=n as u32).collect(),
            // descending data makes the eager-swap sort exchange every step
            "selectionSort" => (1..=n as u32).rev().collect(),
            _ => vec![0xFF; n as usize],
        };
        self.array_input("worst", n, data)
    }

    /// The input expected to minimize energy at size n.
    pub fn best_input(&self, n: u64) -> LabelledInput {
        let data = match self.name {
            "findMax" => (1..=n as u32).rev().collect(),
            "selectionSort" => (1..=n as u32).collect(),
            _ => vec![0; n as usize],
        };
        self.array_input("best", n, data)
    }

    /// A seeded random input with 8-bit elements.
    pub fn random_input(&self, n: u64, seed: u64) -> LabelledInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n).map(|_| rng.gen::<u32>() & 0xFF).collect();
        self.array_input("random", n, data)
    }

    pub fn is_array(&self) -> bool {
        matches!(self.kind, InputKind::Array { .. })
    }
}

pub fn all() -> Vec<CorpusProgram> {
    let int_metric = MetricSpec {
        metric: SizeMetric::IntValue,
        register: 0,
    };
    let len_metric = MetricSpec {
        metric: SizeMetric::ArrayLength,
        register: 0,
    };
    vec![
        CorpusProgram {
            name: "fact",
            source: FACT,
            metric: int_metric,
            kind: InputKind::IntArg,
        },
        CorpusProgram {
            name: "fib",
            source: FIB,
            metric: int_metric,
            kind: InputKind::IntArg,
        },
        CorpusProgram {
            name: "reverse",
            source: REVERSE,
            metric: len_metric,
            kind: InputKind::Array { scratch_factor: 1 },
        },
        CorpusProgram {
            name: "findMax",
            source: FIND_MAX,
            metric: len_metric,
            kind: InputKind::Array { scratch_factor: 0 },
        },
        CorpusProgram {
            name: "selectionSort",
            source: SELECTION_SORT,
            metric: len_metric,
            kind: InputKind::Array { scratch_factor: 0 },
        },
        CorpusProgram {
            name: "fir",
            source: FIR,
            metric: len_metric,
            kind: InputKind::Array { scratch_factor: 0 },
        },
    ]
}

pub fn by_name(name: &str) -> Option<CorpusProgram> {
    all().into_iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ebound::cfg::{extract_blocks, harness_program};
    use ebound::simkernel::{
        run_program_profile, EnergyModelParams, RunOptions, DEFAULT_STEP_LIMIT,
    };

    fn run(program: &CorpusProgram, input: &LabelledInput) -> ebound::simkernel::EnergyTrace {
        let p = program.parse();
        let cfg = extract_blocks(&p);
        let harness = harness_program(&cfg);
        run_program_profile(
            &cfg,
            &harness,
            &input.args,
            &input.image,
            &EnergyModelParams::default_model(),
            &RunOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn all_programs_parse_and_roundtrip() {
        for p in all() {
            let parsed = p.parse();
            let printed = parsed.to_string();
            assert_eq!(parse_program(&printed).unwrap(), parsed, "{}", p.name);
        }
    }

    #[test]
    fn fact_matches_its_functional_spec() {
        let p = by_name("fact").unwrap();
        for (n, expected) in [(0, 1), (1, 1), (5, 120), (7, 5040)] {
            let t = run(&p, &p.worst_input(n));
            assert_eq!(t.result, expected, "fact({n})");
        }
    }

    #[test]
    fn fib_matches_its_functional_spec() {
        let p = by_name("fib").unwrap();
        for (n, expected) in [(0, 0), (1, 1), (2, 1), (10, 55), (12, 144)] {
            let t = run(&p, &p.worst_input(n));
            assert_eq!(t.result, expected, "fib({n})");
        }
    }

    fn run_with_memory(p: &CorpusProgram, input: &LabelledInput) -> Vec<u32> {
        let parsed = p.parse();
        let cfg = extract_blocks(&parsed);
        let harness = harness_program(&cfg);
        let t = run_program_profile(
            &cfg,
            &harness,
            &input.args,
            &input.image,
            &EnergyModelParams::default_model(),
            &RunOptions {
                record_memory: true,
                ..RunOptions::default()
            },
        )
        .unwrap();
        t.final_memory.unwrap()
    }

    #[test]
    fn reverse_reverses_into_the_scratch_region() {
        let p = by_name("reverse").unwrap();
        let input = LabelledInput {
            label: "test".into(),
            args: vec![4],
            image: vec![10, 20, 30, 40, 0, 0, 0, 0],
        };
        let memory = run_with_memory(&p, &input);
        assert_eq!(&memory[..4], &[10, 20, 30, 40], "source untouched");
        assert_eq!(&memory[4..8], &[40, 30, 20, 10], "reversed copy");
        // empty input degenerates cleanly
        let empty = run_with_memory(&p, &p.worst_input(0));
        assert!(empty.iter().all(|w| *w == 0 || *w == 0xFF));
    }

    #[test]
    fn find_max_matches_its_functional_spec() {
        let p = by_name("findMax").unwrap();
        let input = LabelledInput {
            label: "test".into(),
            args: vec![5],
            image: vec![17, 250, 3, 90, 41],
        };
        assert_eq!(run(&p, &input).result, 250);
        assert_eq!(run(&p, &p.worst_input(6)).result, 6, "ascending 1..=6");
        assert_eq!(run(&p, &p.best_input(6)).result, 6, "descending 6..=1");
    }

    #[test]
    fn fir_matches_its_functional_spec() {
        let p = by_name("fir").unwrap();
        let input = LabelledInput {
            label: "test".into(),
            args: vec![3],
            image: vec![1, 2, 3],
        };
        assert_eq!(run(&p, &input).result, (0x35 * 6) % 256);
        let rnd = p.random_input(9, 4242);
        let sum: u32 = rnd.image.iter().sum();
        assert_eq!(run(&p, &rnd).result, (0x35 * sum) % 256);
    }

    #[test]
    fn selection_sort_sorts() {
        let p = by_name("selectionSort").unwrap();
        for data in [
            vec![5u32, 1, 4, 2, 3],
            vec![3, 1, 2],
            vec![9],
            vec![],
            vec![200, 200, 7, 255, 0, 7],
        ] {
            let mut expected = data.clone();
            expected.sort_unstable();
            let input = LabelledInput {
                label: "test".into(),
                args: vec![data.len() as u32],
                image: data.clone(),
            };
            let memory = run_with_memory(&p, &input);
            assert_eq!(&memory[..data.len()], &expected[..], "input {data:?}");
        }
    }

    #[test]
    fn iterative_programs_terminate_at_size_64() {
        for p in all() {
            if p.name == "fib" {
                continue; // double recursion exceeds the step budget well below 64
            }
            let input = p.worst_input(64);
            let parsed = p.parse();
            let cfg = extract_blocks(&parsed);
            let harness = harness_program(&cfg);
            let t = run_program_profile(
                &cfg,
                &harness,
                &input.args,
                &input.image,
                &EnergyModelParams::default_model(),
                &RunOptions::default(),
            )
            .unwrap();
            assert!(t.instruction_count < DEFAULT_STEP_LIMIT, "{}", p.name);
        }
        // fib stays within the limit for the sizes the analyses use
        let fib = by_name("fib").unwrap();
        let parsed = fib.parse();
        let cfg = extract_blocks(&parsed);
        let harness = harness_program(&cfg);
        let t = run_program_profile(
            &cfg,
            &harness,
            &[20],
            &[],
            &EnergyModelParams::default_model(),
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(t.result, 6765);
    }

    /// Every corpus harness block keeps its gen set at three locations or
    /// fewer, so the 8-bit exhaustive oracle stays within its 2^24 budget.
    #[test]
    fn corpus_blocks_have_small_gen_sets() {
        for p in all() {
            let parsed = p.parse();
            let cfg = extract_blocks(&parsed);
            let harness = harness_program(&cfg);
            for part in harness.parts.values() {
                assert!(
                    part.inputs.len() <= 3,
                    "{}: part {} has {} inputs",
                    p.name,
                    part.name,
                    part.inputs.len()
                );
            }
        }
    }

    /// Executing any corpus block after initializing only its gen locations
    /// never trips the uninitialized-read trap.
    #[test]
    fn gen_sets_are_sound_on_random_inputs() {
        use ebound::simkernel::run_block;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for p in all() {
            let parsed = p.parse();
            let cfg = extract_blocks(&parsed);
            let harness = harness_program(&cfg);
            for part in harness.parts.values() {
                for _ in 0..50 {
                    let inputs: Vec<u32> =
                        (0..part.inputs.len()).map(|_| rng.gen()).collect();
                    run_block(part, &inputs, &EnergyModelParams::default_model())
                        .unwrap_or_else(|e| panic!("{}/{}: {e}", p.name, part.name));
                }
            }
        }
    }
}

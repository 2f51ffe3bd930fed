//! Deterministic virtual chip: executes harness blocks and whole programs,
//! charging energy per instruction.
//!
//! Per-instruction energy is
//!
//! ```text
//! base(opcode)
//!   + switch_weight    * hamming(previous operand bus, current operand bus)
//!   + mul_data_weight  * (popcount(srcA) + popcount(srcB))      [mul only]
//!   + mem_addr_weight  * popcount(addr XOR previous addr)       [ldw/stw only]
//! ```
//!
//! The operand bus is the instruction's two register/memory source values
//! concatenated into 64 bits; missing sources are zero and immediates do not
//! travel the bus. A load puts the fetched word first on the bus; indexed
//! accesses also put the index register on it. The address used by the
//! memory term is the frame-relative offset for `sp[k]` and the index
//! register's value for `[rN]`, so a harness part and the same part inside a
//! whole-program run charge identical energy as a function of the part's
//! inputs.
//!
//! Switching state (bus and previous address) resets to zero at every part
//! boundary: block entry, and resumption after a call. Cost-tag opcodes
//! (`entsp`, `retsp`, `bl`) charge their base cost only and leave the
//! switching state untouched, which keeps their cost constant.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfg::{Cfg, HarnessAddr, HarnessBlock, HarnessId, HarnessMap};
use crate::energy::Energy;
use crate::isa::{Instruction, Location, Opcode, Operand, FRAME_LIMIT};

/// Words of data/stack memory visible to a program run.
pub const STACK_WORDS: usize = 4096;
/// Default execution step limit, a non-termination guard.
pub const DEFAULT_STEP_LIMIT: u64 = 10_000_000;

/// Energy model parameters, quantized to 1/1000 pJ on entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnergyModelParams {
    base: BTreeMap<Opcode, Energy>,
    pub switch_weight: Energy,
    pub mul_data_weight: Energy,
    pub mem_addr_weight: Energy,
}

/// On-disk form: plain picojoule numbers keyed by mnemonic.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    base_pj: BTreeMap<String, f64>,
    switch_weight_pj_per_bit: f64,
    mul_data_weight_pj_per_bit: f64,
    mem_addr_weight_pj_per_bit: f64,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed energy model: {0}")]
    Json(#[from] serde_json::Error),
    #[error("energy model: unknown opcode '{0}'")]
    UnknownOpcode(String),
    #[error("energy model: negative value for '{0}'")]
    Negative(String),
}

impl EnergyModelParams {
    /// The built-in default model.
    ///
    /// base: ldc/mkmsk/bu/bf/bt 2 pJ; ALU/compare/shift 3 pJ; ldw/stw 5 pJ;
    /// mul 6 pJ; entsp/retsp/bl 4 pJ. Weights: switch 0.02, mul data 0.05,
    /// mem addr 0.02 pJ/bit.
    pub fn default_model() -> EnergyModelParams {
        use Opcode::*;
        let mut base = BTreeMap::new();
        for op in [Ldc, Mkmsk, Bu, Bf, Bt] {
            base.insert(op, Energy(2000));
        }
        for op in [Add, Sub, And, Or, Xor, Not, Neg, Shl, Shr, Lss, Leq, Eq] {
            base.insert(op, Energy(3000));
        }
        for op in [Ldw, Stw] {
            base.insert(op, Energy(5000));
        }
        base.insert(Mul, Energy(6000));
        for op in [Entsp, Retsp, Bl] {
            base.insert(op, Energy(4000));
        }
        EnergyModelParams {
            base,
            switch_weight: Energy(20),
            mul_data_weight: Energy(50),
            mem_addr_weight: Energy(20),
        }
    }

    /// A model with every constant zero; any program costs nothing under it.
    pub fn zero_model() -> EnergyModelParams {
        EnergyModelParams {
            base: BTreeMap::new(),
            switch_weight: Energy::ZERO,
            mul_data_weight: Energy::ZERO,
            mem_addr_weight: Energy::ZERO,
        }
    }

    pub fn from_json(text: &str) -> Result<EnergyModelParams, ModelError> {
        let file: ModelFile = serde_json::from_str(text)?;
        let mut base = BTreeMap::new();
        for (name, pj) in &file.base_pj {
            let op = opcode_by_name(name).ok_or_else(|| ModelError::UnknownOpcode(name.clone()))?;
            if *pj < 0.0 {
                return Err(ModelError::Negative(name.clone()));
            }
            base.insert(op, Energy::from_pj(*pj));
        }
        for (name, w) in [
            ("switch_weight", file.switch_weight_pj_per_bit),
            ("mul_data_weight", file.mul_data_weight_pj_per_bit),
            ("mem_addr_weight", file.mem_addr_weight_pj_per_bit),
        ] {
            if w < 0.0 {
                return Err(ModelError::Negative(name.into()));
            }
        }
        Ok(EnergyModelParams {
            base,
            switch_weight: Energy::from_pj(file.switch_weight_pj_per_bit),
            mul_data_weight: Energy::from_pj(file.mul_data_weight_pj_per_bit),
            mem_addr_weight: Energy::from_pj(file.mem_addr_weight_pj_per_bit),
        })
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            base_pj: self
                .base
                .iter()
                .map(|(op, e)| (op.mnemonic().to_string(), e.as_pj()))
                .collect(),
            switch_weight_pj_per_bit: self.switch_weight.as_pj(),
            mul_data_weight_pj_per_bit: self.mul_data_weight.as_pj(),
            mem_addr_weight_pj_per_bit: self.mem_addr_weight.as_pj(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn base_cost(&self, op: Opcode) -> Energy {
        self.base.get(&op).copied().unwrap_or(Energy::ZERO)
    }

    /// Stable identity of the model, used in cache keys.
    pub fn hash_hex(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.to_json().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn opcode_by_name(name: &str) -> Option<Opcode> {
    use Opcode::*;
    [
        Entsp, Retsp, Stw, Ldw, Ldc, Add, Sub, Mul, Lss, Leq, Eq, And, Or, Xor, Not, Neg, Shl,
        Shr, Mkmsk, Bf, Bt, Bu, Bl,
    ]
    .into_iter()
    .find(|op| op.mnemonic() == name)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("read of uninitialized location {0} (gen-set bug)")]
    UninitializedRead(String),
    #[error("stack access out of bounds at word {0:#x}")]
    OutOfBounds(u64),
    #[error("step limit {0} exceeded; program may not terminate")]
    StepLimit(u64),
    #[error("input count {got} does not match gen-set size {expected}")]
    InputArity { expected: usize, got: usize },
    #[error("call into unknown function '{0}'")]
    UnknownFunction(String),
    #[error("exhaustive domain too large: {bits} input bits exceeds 24")]
    DomainTooLarge { bits: usize },
}

/// Machine state for whole-program interpretation.
#[derive(Debug, Clone)]
pub struct MachineState {
    pub regs: [u32; 12],
    pub stack: Vec<u32>,
    pub pc: usize,
    /// Last instruction's two source values, concatenated.
    pub prev_bus: u64,
    /// Last memory access's energy-model address.
    pub prev_addr: u32,
    /// Return points pushed by `bl`: (function index, resume pc).
    pub call_stack: Vec<(usize, usize)>,
}

impl MachineState {
    pub fn zeroed() -> MachineState {
        MachineState {
            regs: [0; 12],
            stack: vec![0; STACK_WORDS],
            pc: 0,
            prev_bus: 0,
            prev_addr: 0,
            call_stack: Vec::new(),
        }
    }
}

/// Up to two bus source values, stack-allocated for the hot paths.
#[derive(Debug, Clone, Copy, Default)]
struct Bus {
    vals: [u32; 2],
    len: u8,
}

impl Bus {
    fn push(&mut self, v: u32) {
        if (self.len as usize) < 2 {
            self.vals[self.len as usize] = v;
            self.len += 1;
        }
    }
}

struct EnergyMeter<'m> {
    model: &'m EnergyModelParams,
}

impl EnergyMeter<'_> {
    /// Charges one instruction given its resolved source values, updating
    /// the switching state in place.
    fn charge(
        &self,
        op: Opcode,
        sources: Bus,
        mem_addr: Option<u32>,
        prev_bus: &mut u64,
        prev_addr: &mut u32,
    ) -> Energy {
        let mut energy = self.model.base_cost(op);
        if op.is_cost_tag() {
            return energy;
        }
        let src_a = sources.vals[0];
        let src_b = sources.vals[1];
        let bus = ((src_a as u64) << 32) | src_b as u64;
        energy += Energy(self.model.switch_weight.0 * (bus ^ *prev_bus).count_ones() as u64);
        if op == Opcode::Mul {
            energy += Energy(
                self.model.mul_data_weight.0 * (src_a.count_ones() + src_b.count_ones()) as u64,
            );
        }
        if let Some(addr) = mem_addr {
            energy +=
                Energy(self.model.mem_addr_weight.0 * (addr ^ *prev_addr).count_ones() as u64);
            *prev_addr = addr;
        }
        *prev_bus = bus;
        energy
    }
}

/// Energy a single instruction would charge in the given state.
pub fn instruction_energy(
    instr: &Instruction,
    state: &MachineState,
    model: &EnergyModelParams,
) -> Energy {
    let meter = EnergyMeter { model };
    let mut bus = state.prev_bus;
    let mut addr = state.prev_addr;
    let (sources, mem_addr) = peek_sources(instr, state);
    let mut b = Bus::default();
    for v in sources {
        b.push(v);
    }
    meter.charge(instr.opcode, b, mem_addr, &mut bus, &mut addr)
}

/// Bus sources and energy-model memory address of `instr` in `state`,
/// without side effects. Loads read the currently addressed word.
fn peek_sources(instr: &Instruction, state: &MachineState) -> (Vec<u32>, Option<u32>) {
    use Opcode::*;
    let reg = |r: u8| state.regs[r as usize];
    match instr.opcode {
        Entsp | Retsp | Bl | Bu => (vec![], None),
        Ldc => (vec![], None),
        Bf | Bt => match &instr.operands[0] {
            Operand::Register(r) => (vec![reg(*r)], None),
            _ => (vec![], None),
        },
        Mkmsk | Not | Neg => match &instr.operands[1] {
            Operand::Register(r) => (vec![reg(*r)], None),
            _ => (vec![], None),
        },
        Ldw => match &instr.operands[1] {
            Operand::StackSlot(k) => {
                let word = state.stack.get(*k as usize).copied().unwrap_or(0);
                (vec![word], Some(*k))
            }
            Operand::Indexed(r) => {
                let idx = reg(*r);
                let word = state.stack.get(idx as usize).copied().unwrap_or(0);
                (vec![word, idx], Some(idx))
            }
            _ => (vec![], None),
        },
        Stw => {
            let value = match &instr.operands[0] {
                Operand::Register(r) => reg(*r),
                _ => 0,
            };
            match &instr.operands[1] {
                Operand::StackSlot(k) => (vec![value], Some(*k)),
                Operand::Indexed(r) => (vec![value, reg(*r)], Some(reg(*r))),
                _ => (vec![value], None),
            }
        }
        _ => {
            let mut srcs = Vec::new();
            for op in &instr.operands[1..] {
                if let Operand::Register(r) = op {
                    srcs.push(reg(*r));
                }
            }
            (srcs, None)
        }
    }
}

fn alu(op: Opcode, a: u32, b: u32) -> u32 {
    use Opcode::*;
    match op {
        Add => a.wrapping_add(b),
        Sub => a.wrapping_sub(b),
        Mul => a.wrapping_mul(b),
        Lss => ((a as i32) < (b as i32)) as u32,
        Leq => ((a as i32) <= (b as i32)) as u32,
        Eq => (a == b) as u32,
        And => a & b,
        Or => a | b,
        Xor => a ^ b,
        Shl => {
            if b >= 32 {
                0
            } else {
                a << b
            }
        }
        Shr => {
            if b >= 32 {
                0
            } else {
                a >> b
            }
        }
        _ => unreachable!("not a binary ALU opcode"),
    }
}

fn mask_low(width: u32) -> u32 {
    if width >= 32 {
        u32::MAX
    } else {
        (1u32 << width) - 1
    }
}

/// Executes a harness block on the given inputs and returns its energy.
///
/// Gen locations are initialized from `inputs` in order; everything else
/// starts uninitialized. Execution is straight-line: branch instructions are
/// energy-charged no-ops. Reading a location that is neither a gen input nor
/// previously written traps, signalling a gen-set bug.
pub fn run_block(
    block: &HarnessBlock,
    inputs: &[u32],
    model: &EnergyModelParams,
) -> Result<Energy, SimError> {
    if inputs.len() != block.inputs.len() {
        return Err(SimError::InputArity {
            expected: block.inputs.len(),
            got: inputs.len(),
        });
    }
    let mut regs = [0u32; 12];
    let mut reg_init = [false; 12];
    let mut slots = [0u32; FRAME_LIMIT as usize];
    let mut slot_init = [false; FRAME_LIMIT as usize];
    for (loc, value) in block.inputs.iter().zip(inputs) {
        match loc {
            Location::Register(r) => {
                regs[*r as usize] = *value;
                reg_init[*r as usize] = true;
            }
            Location::Slot(k) => {
                slots[*k as usize] = *value;
                slot_init[*k as usize] = true;
            }
        }
    }

    let meter = EnergyMeter { model };
    let mut prev_bus = 0u64;
    let mut prev_addr = 0u32;
    let mut total = Energy::ZERO;

    macro_rules! read_reg {
        ($r:expr) => {{
            let r = $r as usize;
            if !reg_init[r] {
                return Err(SimError::UninitializedRead(format!("r{}", r)));
            }
            regs[r]
        }};
    }
    macro_rules! src_val {
        ($op:expr) => {
            match $op {
                Operand::Register(r) => read_reg!(*r),
                Operand::Immediate(v) => *v,
                _ => unreachable!("memory operands handled separately"),
            }
        };
    }

    for hi in &block.instructions {
        use Opcode::*;
        let instr = &hi.instr;
        let op = instr.opcode;
        debug_assert!(!op.is_cost_tag(), "tags are stripped from harness blocks");
        let mut sources = Bus::default();
        let mut mem_addr: Option<u32> = None;
        let mut write_reg: Option<(u8, u32)> = None;
        match op {
            Ldw => {
                let m = hi.mem.expect("load has a memory operand");
                let addr = match m.addr {
                    HarnessAddr::FrameOffset(k) => k,
                    HarnessAddr::IndexReg(r) => read_reg!(r),
                };
                if !slot_init[m.data_slot as usize] {
                    return Err(SimError::UninitializedRead(format!(
                        "sp[{:#x}]",
                        m.data_slot
                    )));
                }
                let word = slots[m.data_slot as usize];
                sources.push(word);
                if let HarnessAddr::IndexReg(r) = m.addr {
                    sources.push(regs[r as usize]);
                }
                mem_addr = Some(addr);
                write_reg = Some((reg_index(&instr.operands[0]), word));
            }
            Stw => {
                let m = hi.mem.expect("store has a memory operand");
                let value = src_val!(&instr.operands[0]);
                sources.push(value);
                let addr = match m.addr {
                    HarnessAddr::FrameOffset(k) => k,
                    HarnessAddr::IndexReg(r) => {
                        let v = read_reg!(r);
                        sources.push(v);
                        v
                    }
                };
                mem_addr = Some(addr);
                slots[m.data_slot as usize] = value;
                slot_init[m.data_slot as usize] = true;
            }
            Ldc => {
                write_reg = Some((reg_index(&instr.operands[0]), imm_of(&instr.operands[1])));
            }
            Mkmsk => {
                let w = src_val!(&instr.operands[1]);
                if matches!(&instr.operands[1], Operand::Register(_)) {
                    sources.push(w);
                }
                write_reg = Some((reg_index(&instr.operands[0]), mask_low(w)));
            }
            Not | Neg => {
                let a = src_val!(&instr.operands[1]);
                if matches!(&instr.operands[1], Operand::Register(_)) {
                    sources.push(a);
                }
                let v = if op == Not { !a } else { 0u32.wrapping_sub(a) };
                write_reg = Some((reg_index(&instr.operands[0]), v));
            }
            Bf | Bt => {
                sources.push(src_val!(&instr.operands[0]));
            }
            Bu => {}
            Entsp | Retsp | Bl => unreachable!("stripped"),
            _ => {
                let a = src_val!(&instr.operands[1]);
                let b = src_val!(&instr.operands[2]);
                if matches!(&instr.operands[1], Operand::Register(_)) {
                    sources.push(a);
                }
                if matches!(&instr.operands[2], Operand::Register(_)) {
                    sources.push(b);
                }
                write_reg = Some((reg_index(&instr.operands[0]) as u8, alu(op, a, b)));
            }
        }
        total += meter.charge(op, sources, mem_addr, &mut prev_bus, &mut prev_addr);
        if let Some((r, v)) = write_reg {
            regs[r as usize] = v;
            reg_init[r as usize] = true;
        }
    }
    Ok(total)
}

fn imm_of(op: &Operand) -> u32 {
    match op {
        Operand::Immediate(v) => *v,
        _ => unreachable!("expected immediate"),
    }
}

fn reg_index(op: &Operand) -> u8 {
    match op {
        Operand::Register(r) => *r,
        _ => unreachable!("expected register"),
    }
}

/// Energy and counts from one profiled program run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub total: Energy,
    /// Executions per basic block (by block index), counted at block entry.
    pub block_counts: BTreeMap<usize, u64>,
    /// Executions per harness part.
    pub part_counts: BTreeMap<HarnessId, u64>,
    /// Executions per cost-tag site: (function index, instruction index).
    pub tag_counts: BTreeMap<(usize, usize), u64>,
    pub instruction_count: u64,
    /// r0 when the entry function returned.
    pub result: u32,
    /// Fine-grained event log, recorded only on request.
    pub events: Option<Vec<TraceEvent>>,
    /// Final data memory, recorded only on request.
    pub final_memory: Option<Vec<u32>>,
}

/// One step of a recorded run, in execution order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEvent {
    /// An instruction executed: owning function, instruction index, energy.
    Instr {
        function: usize,
        index: usize,
        energy: Energy,
    },
    /// A conditional branch read its condition register.
    Branch { value: bool },
}

/// Options for [`run_program_profile`].
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub step_limit: u64,
    /// Record per-instruction and branch events for equation replay.
    pub record_events: bool,
    /// Capture the final data memory in the trace.
    pub record_memory: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            step_limit: DEFAULT_STEP_LIMIT,
            record_events: false,
            record_memory: false,
        }
    }
}

/// Interprets the whole program with calls and branches taken for real.
///
/// `args` populate `r0..`; `image` is copied to the bottom of data memory
/// (arrays live there) and stack frames are allocated above it. Per-block
/// and per-part execution counts are recorded; omitted-cost tags are charged
/// at their original sites.
pub fn run_program_profile(
    cfg: &Cfg,
    harness: &HarnessMap,
    args: &[u32],
    image: &[u32],
    model: &EnergyModelParams,
    options: &RunOptions,
) -> Result<EnergyTrace, SimError> {
    let program = &cfg.program;
    let meter = EnergyMeter { model };
    let mut state = MachineState::zeroed();
    for (i, arg) in args.iter().enumerate() {
        state.regs[i] = *arg;
    }
    if image.len() > STACK_WORDS {
        return Err(SimError::OutOfBounds(image.len() as u64));
    }
    state.stack[..image.len()].copy_from_slice(image);

    let fn_index: BTreeMap<&str, usize> = program
        .functions
        .iter()
        .enumerate()
        .map(|(i, f)| (f.name.as_str(), i))
        .collect();
    let addr_maps: Vec<BTreeMap<&str, usize>> = program
        .functions
        .iter()
        .map(|f| {
            f.instructions
                .iter()
                .enumerate()
                .map(|(i, ins)| (ins.address.as_str(), i))
                .collect()
        })
        .collect();
    // per function, per instruction: the part starting there (if any), the
    // owning block, and whether the instruction opens its block
    let mut part_start: Vec<BTreeMap<usize, HarnessId>> =
        vec![BTreeMap::new(); program.functions.len()];
    for part in harness.parts.values() {
        if let Some(first) = part.instructions.first() {
            let fi = cfg.block(part.id.block).function;
            let idx = cfg.block(part.id.block).start
                + cfg.block(part.id.block)
                    .instructions
                    .iter()
                    .position(|i| i.address == first.instr.address)
                    .unwrap();
            part_start[fi].insert(idx, part.id);
        }
    }
    let mut block_start: Vec<BTreeMap<usize, usize>> =
        vec![BTreeMap::new(); program.functions.len()];
    for b in &cfg.blocks {
        block_start[b.function].insert(b.start, b.id.0);
    }

    let mut trace = EnergyTrace {
        total: Energy::ZERO,
        block_counts: BTreeMap::new(),
        part_counts: BTreeMap::new(),
        tag_counts: BTreeMap::new(),
        instruction_count: 0,
        result: 0,
        events: options.record_events.then(Vec::new),
        final_memory: None,
    };

    let mut cur_fn = fn_index[program.entry.as_str()];
    let mut frame_base: u32 = image.len() as u32;
    let mut stack_top: u32 = image.len() as u32;
    let mut frame_stack: Vec<u32> = Vec::new();
    let mut steps: u64 = 0;

    enum Flow {
        Next,
        Jump(usize),
        Call(usize),
        Return,
    }

    loop {
        let func = &program.functions[cur_fn];
        if state.pc >= func.instructions.len() {
            break; // fell off the end of a function: halt
        }
        steps += 1;
        if steps > options.step_limit {
            return Err(SimError::StepLimit(options.step_limit));
        }
        let instr = &func.instructions[state.pc];

        if let Some(&block_idx) = block_start[cur_fn].get(&state.pc) {
            *trace.block_counts.entry(block_idx).or_insert(0) += 1;
        }
        if let Some(&part_id) = part_start[cur_fn].get(&state.pc) {
            *trace.part_counts.entry(part_id).or_insert(0) += 1;
            state.prev_bus = 0;
            state.prev_addr = 0;
        }

        use Opcode::*;
        let mut sources = Bus::default();
        let mut mem_addr: Option<u32> = None;
        let mut flow = Flow::Next;
        let mut branch_value: Option<bool> = None;
        match instr.opcode {
            Entsp => {
                let k = imm_of(&instr.operands[0]);
                frame_stack.push(frame_base);
                frame_base = stack_top;
                stack_top = stack_top
                    .checked_add(k)
                    .filter(|&t| (t as usize) <= STACK_WORDS)
                    .ok_or(SimError::OutOfBounds(stack_top as u64 + k as u64))?;
                *trace.tag_counts.entry((cur_fn, state.pc)).or_insert(0) += 1;
            }
            Retsp => {
                stack_top = frame_base;
                frame_base = frame_stack.pop().unwrap_or(0);
                *trace.tag_counts.entry((cur_fn, state.pc)).or_insert(0) += 1;
                flow = Flow::Return;
            }
            Bl => {
                let callee = instr.target().unwrap();
                let &target = fn_index
                    .get(callee)
                    .ok_or_else(|| SimError::UnknownFunction(callee.to_string()))?;
                *trace.tag_counts.entry((cur_fn, state.pc)).or_insert(0) += 1;
                flow = Flow::Call(target);
            }
            Bu => {
                flow = Flow::Jump(addr_maps[cur_fn][instr.target().unwrap()]);
            }
            Bf | Bt => {
                let c = state.regs[reg_index(&instr.operands[0]) as usize];
                sources.push(c);
                branch_value = Some(c != 0);
                let taken = if instr.opcode == Bf { c == 0 } else { c != 0 };
                if taken {
                    flow = Flow::Jump(addr_maps[cur_fn][instr.target().unwrap()]);
                }
            }
            Ldw => {
                let (energy_addr, abs) = resolve_mem(&instr.operands[1], &state.regs, frame_base)?;
                let word = state.stack[abs as usize];
                sources.push(word);
                if let Operand::Indexed(r) = &instr.operands[1] {
                    sources.push(state.regs[*r as usize]);
                }
                mem_addr = Some(energy_addr);
                state.regs[reg_index(&instr.operands[0]) as usize] = word;
            }
            Stw => {
                let value = state.regs[reg_index(&instr.operands[0]) as usize];
                sources.push(value);
                let (energy_addr, abs) = resolve_mem(&instr.operands[1], &state.regs, frame_base)?;
                if let Operand::Indexed(r) = &instr.operands[1] {
                    sources.push(state.regs[*r as usize]);
                }
                mem_addr = Some(energy_addr);
                state.stack[abs as usize] = value;
            }
            Ldc => {
                state.regs[reg_index(&instr.operands[0]) as usize] = imm_of(&instr.operands[1]);
            }
            Mkmsk => {
                let w = operand_value(&instr.operands[1], &state.regs, &mut sources);
                state.regs[reg_index(&instr.operands[0]) as usize] = mask_low(w);
            }
            Not | Neg => {
                let a = operand_value(&instr.operands[1], &state.regs, &mut sources);
                state.regs[reg_index(&instr.operands[0]) as usize] = if instr.opcode == Not {
                    !a
                } else {
                    0u32.wrapping_sub(a)
                };
            }
            _ => {
                let a = operand_value(&instr.operands[1], &state.regs, &mut sources);
                let b = operand_value(&instr.operands[2], &state.regs, &mut sources);
                state.regs[reg_index(&instr.operands[0]) as usize] = alu(instr.opcode, a, b);
            }
        }

        let energy = meter.charge(
            instr.opcode,
            sources,
            mem_addr,
            &mut state.prev_bus,
            &mut state.prev_addr,
        );
        trace.total += energy;
        trace.instruction_count += 1;
        if let Some(events) = trace.events.as_mut() {
            events.push(TraceEvent::Instr {
                function: cur_fn,
                index: state.pc,
                energy,
            });
            if let Some(value) = branch_value {
                events.push(TraceEvent::Branch { value });
            }
        }

        match flow {
            Flow::Next => state.pc += 1,
            Flow::Jump(pc) => state.pc = pc,
            Flow::Call(target) => {
                state.call_stack.push((cur_fn, state.pc + 1));
                cur_fn = target;
                state.pc = 0;
            }
            Flow::Return => match state.call_stack.pop() {
                Some((rf, rpc)) => {
                    cur_fn = rf;
                    state.pc = rpc;
                }
                None => break,
            },
        }
    }
    trace.result = state.regs[0];
    if options.record_memory {
        trace.final_memory = Some(state.stack.clone());
    }
    Ok(trace)
}

fn resolve_mem(op: &Operand, regs: &[u32; 12], frame_base: u32) -> Result<(u32, u64), SimError> {
    let (energy_addr, abs) = match op {
        Operand::StackSlot(k) => (*k, frame_base as u64 + *k as u64),
        Operand::Indexed(r) => {
            let idx = regs[*r as usize];
            (idx, idx as u64)
        }
        _ => unreachable!("memory operand expected"),
    };
    if abs >= STACK_WORDS as u64 {
        return Err(SimError::OutOfBounds(abs));
    }
    Ok((energy_addr, abs))
}

fn operand_value(op: &Operand, regs: &[u32; 12], sources: &mut Bus) -> u32 {
    match op {
        Operand::Register(r) => {
            let v = regs[*r as usize];
            sources.push(v);
            v
        }
        Operand::Immediate(v) => *v,
        _ => unreachable!("memory operands handled by ldw/stw"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extrema {
    pub min: Energy,
    pub max: Energy,
    pub witness_min: Vec<u32>,
    pub witness_max: Vec<u32>,
}

/// Ground-truth extrema of a harness block over a restricted input domain.
///
/// Inputs range over the low-`bit_width`-bit words; ties keep the first
/// point in odometer order. The domain is capped at 2^24 points.
pub fn exhaustive_extrema(
    block: &HarnessBlock,
    bit_width: u32,
    model: &EnergyModelParams,
) -> Result<Extrema, SimError> {
    assert!((1..=12).contains(&bit_width), "bit_width must be 1..=12");
    let k = block.inputs.len();
    if bit_width as usize * k > 24 {
        return Err(SimError::DomainTooLarge {
            bits: bit_width as usize * k,
        });
    }
    let mask = mask_low(bit_width);
    let mut inputs = vec![0u32; k];
    let first = run_block(block, &inputs, model)?;
    let mut best = Extrema {
        min: first,
        max: first,
        witness_min: inputs.clone(),
        witness_max: inputs.clone(),
    };
    loop {
        // odometer increment over the masked domain; done on wraparound
        let mut pos = k;
        loop {
            if pos == 0 {
                return Ok(best);
            }
            pos -= 1;
            inputs[pos] = (inputs[pos] + 1) & mask;
            if inputs[pos] != 0 {
                break;
            }
        }
        let e = run_block(block, &inputs, model)?;
        if e < best.min {
            best.min = e;
            best.witness_min = inputs.clone();
        }
        if e > best.max {
            best.max = e;
            best.witness_max = inputs.clone();
        }
    }
}

/// The largest feasible oracle bit width for a block: 12 bits, shrunk so the
/// domain stays within 2^24 points. Input-free blocks report 1.
pub fn max_feasible_bit_width(input_count: usize) -> u32 {
    if input_count == 0 {
        return 1;
    }
    (24 / input_count).clamp(1, 12) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::{extract_blocks, harness_program};
    use crate::isa::{parse_program, FACT};

    fn fact_setup() -> (Cfg, HarnessMap) {
        let cfg = extract_blocks(&parse_program(FACT).unwrap());
        let harness = harness_program(&cfg);
        (cfg, harness)
    }

    fn part<'h>(harness: &'h HarnessMap, name: &str) -> &'h HarnessBlock {
        harness
            .parts
            .values()
            .find(|p| p.name == name)
            .unwrap_or_else(|| panic!("part {name}"))
    }

    #[test]
    fn ldc_from_zeroed_state_costs_base_only() {
        let p = parse_program("<f>:\n01: ldc r0, 0x0\n").unwrap();
        let state = MachineState::zeroed();
        let e = instruction_energy(
            &p.functions[0].instructions[0],
            &state,
            &EnergyModelParams::default_model(),
        );
        assert_eq!(e, Energy(2000), "2.0 pJ: base 2, all deltas 0");
    }

    #[test]
    fn mul_with_all_ones_operands_and_bus() {
        let p = parse_program("<f>:\n01: mul r0, r1, r2\n").unwrap();
        let mut state = MachineState::zeroed();
        state.regs[1] = 0xFFFF_FFFF;
        state.regs[2] = 0xFFFF_FFFF;
        state.prev_bus = u64::MAX;
        let e = instruction_energy(
            &p.functions[0].instructions[0],
            &state,
            &EnergyModelParams::default_model(),
        );
        // 6 + 0.05 * (32 + 32) = 9.2 pJ
        assert_eq!(e, Energy(9200));
    }

    #[test]
    fn zero_model_costs_nothing() {
        let p = parse_program("<f>:\n01: mul r0, r1, r2\n").unwrap();
        let mut state = MachineState::zeroed();
        state.regs[1] = 0xDEAD_BEEF;
        state.prev_bus = 12345;
        let e = instruction_energy(
            &p.functions[0].instructions[0],
            &state,
            &EnergyModelParams::zero_model(),
        );
        assert_eq!(e, Energy::ZERO);
    }

    #[test]
    fn fact_b3_harness_is_exactly_mkmsk_base() {
        let (_, harness) = fact_setup();
        let b3 = part(&harness, "B3");
        assert_eq!(b3.instructions.len(), 1, "retsp stripped");
        assert!(b3.inputs.is_empty());
        let e = run_block(b3, &[], &EnergyModelParams::default_model()).unwrap();
        assert_eq!(e, Energy(2000), "base_pJ(mkmsk) = 2.0 pJ");
    }

    #[test]
    fn any_block_under_zero_model_is_free() {
        let (_, harness) = fact_setup();
        for p in harness.parts.values() {
            let inputs = vec![0xABu32; p.inputs.len()];
            assert_eq!(
                run_block(p, &inputs, &EnergyModelParams::zero_model()).unwrap(),
                Energy::ZERO
            );
        }
    }

    #[test]
    fn fact_b2_2_all_ones_strictly_exceeds_ones() {
        let (_, harness) = fact_setup();
        let b22 = part(&harness, "B2_2");
        let model = EnergyModelParams::default_model();
        let small = run_block(b22, &[1, 1], &model).unwrap();
        let large = run_block(b22, &[0xFFFF_FFFF, 0xFFFF_FFFF], &model).unwrap();
        assert!(
            large > small,
            "mul data term dominates: {large} vs {small}"
        );
    }

    #[test]
    fn run_block_determinism() {
        let (_, harness) = fact_setup();
        let b22 = part(&harness, "B2_2");
        let model = EnergyModelParams::default_model();
        let a = run_block(b22, &[7, 99], &model).unwrap();
        let b = run_block(b22, &[7, 99], &model).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uninitialized_read_traps() {
        // block reads r2 which is not in gen if we lie about inputs
        let p = parse_program("<f>:\n01: add r0, r1, r2\n").unwrap();
        let cfg = extract_blocks(&p);
        let harness = harness_program(&cfg);
        let mut blk = harness.parts.values().next().unwrap().clone();
        blk.inputs = vec![Location::Register(1)]; // drop r2 from gen
        let err = run_block(&blk, &[5], &EnergyModelParams::default_model()).unwrap_err();
        assert!(matches!(err, SimError::UninitializedRead(_)));
    }

    #[test]
    fn fact_profile_counts_match_hand_trace() {
        let (cfg, harness) = fact_setup();
        let model = EnergyModelParams::default_model();
        let trace = run_program_profile(
            &cfg,
            &harness,
            &[3],
            &[],
            &model,
            &RunOptions::default(),
        )
        .unwrap();
        // fact(3): B1 runs for N=3,2,1,0; B2 for N=3,2,1; B3 once
        assert_eq!(trace.block_counts[&0], 4);
        assert_eq!(trace.block_counts[&1], 3);
        assert_eq!(trace.block_counts[&2], 1);
        assert_eq!(trace.result, 6, "fact(3) = 6");
    }

    #[test]
    fn fact_profile_base_case() {
        let (cfg, harness) = fact_setup();
        let model = EnergyModelParams::default_model();
        let trace = run_program_profile(
            &cfg,
            &harness,
            &[0],
            &[],
            &model,
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(trace.block_counts[&0], 1);
        assert_eq!(trace.block_counts.get(&1), None);
        assert_eq!(trace.block_counts[&2], 1);
        assert_eq!(trace.result, 1, "fact(0) = 1");
    }

    #[test]
    fn profile_under_zero_model_is_free() {
        let (cfg, harness) = fact_setup();
        let trace = run_program_profile(
            &cfg,
            &harness,
            &[5],
            &[],
            &EnergyModelParams::zero_model(),
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(trace.total, Energy::ZERO);
        assert_eq!(trace.result, 120, "fact(5) = 120");
    }

    #[test]
    fn step_limit_guards_nontermination() {
        let p = parse_program("<f>:\n01: bu <01>\n").unwrap();
        let cfg = extract_blocks(&p);
        let harness = harness_program(&cfg);
        let err = run_program_profile(
            &cfg,
            &harness,
            &[],
            &[],
            &EnergyModelParams::default_model(),
            &RunOptions {
                step_limit: 1000,
                ..RunOptions::default()
            },
        )
        .unwrap_err();
        assert_eq!(err, SimError::StepLimit(1000));
    }

    #[test]
    fn singleton_domain_extrema() {
        let p = parse_program("<f>:\n01: ldc r0, 0x1\n").unwrap();
        let cfg = extract_blocks(&p);
        let harness = harness_program(&cfg);
        let blk = harness.parts.values().next().unwrap();
        let model = EnergyModelParams::default_model();
        let ex = exhaustive_extrema(blk, 8, &model).unwrap();
        let direct = run_block(blk, &[], &model).unwrap();
        assert_eq!(ex.min, direct);
        assert_eq!(ex.max, direct);
    }

    #[test]
    fn extrema_under_zero_model_are_zero_with_first_witnesses() {
        let (_, harness) = fact_setup();
        let b22 = part(&harness, "B2_2");
        let ex = exhaustive_extrema(b22, 4, &EnergyModelParams::zero_model()).unwrap();
        assert_eq!(ex.min, Energy::ZERO);
        assert_eq!(ex.max, Energy::ZERO);
        assert_eq!(ex.witness_min, vec![0, 0]);
        assert_eq!(ex.witness_max, vec![0, 0]);
    }

    /// Independent oracle: a plain nested loop over the raw input space must
    /// agree with the odometer-based implementation.
    #[test]
    fn extrema_cross_checked_against_independent_loops() {
        let (_, harness) = fact_setup();
        let b22 = part(&harness, "B2_2");
        let model = EnergyModelParams::default_model();
        let bw = 6; // keep the brute force quick
        let ex = exhaustive_extrema(b22, bw, &model).unwrap();
        let mut min = None;
        let mut max = None;
        for a in 0..(1u32 << bw) {
            for b in 0..(1u32 << bw) {
                let e = run_block(b22, &[a, b], &model).unwrap();
                min = Some(min.map_or(e, |m: Energy| m.min(e)));
                max = Some(max.map_or(e, |m: Energy| m.max(e)));
            }
        }
        assert_eq!(ex.min, min.unwrap());
        assert_eq!(ex.max, max.unwrap());
    }

    #[test]
    fn witness_reproducibility() {
        let (_, harness) = fact_setup();
        let model = EnergyModelParams::default_model();
        for p in harness.parts.values() {
            if p.inputs.len() * 8 > 24 {
                continue;
            }
            let ex = exhaustive_extrema(p, 8, &model).unwrap();
            assert_eq!(run_block(p, &ex.witness_max, &model).unwrap(), ex.max);
            assert_eq!(run_block(p, &ex.witness_min, &model).unwrap(), ex.min);
        }
    }

    #[test]
    fn domain_too_large_is_an_error() {
        let p = parse_program("<f>:\n01: add r0, r1, r2\n02: add r3, r4, r5\n").unwrap();
        let cfg = extract_blocks(&p);
        let harness = harness_program(&cfg);
        let blk = harness.parts.values().next().unwrap();
        assert_eq!(blk.inputs.len(), 4);
        let err = exhaustive_extrema(blk, 8, &EnergyModelParams::default_model()).unwrap_err();
        assert!(matches!(err, SimError::DomainTooLarge { .. }));
    }

    /// Raising any model weight never decreases any block energy.
    #[test]
    fn monotone_model_sanity() {
        let (_, harness) = fact_setup();
        let base = EnergyModelParams::default_model();
        let mut bumped = [base.clone(), base.clone(), base.clone()];
        bumped[0].switch_weight = Energy(base.switch_weight.0 + 10);
        bumped[1].mul_data_weight = Energy(base.mul_data_weight.0 + 10);
        bumped[2].mem_addr_weight = Energy(base.mem_addr_weight.0 + 10);
        let samples: [&[u32]; 3] = [&[0, 0], &[0xFF, 0x3C], &[0xFFFF_FFFF, 0x1234_5678]];
        for p in harness.parts.values() {
            for s in samples {
                let inputs: Vec<u32> = s.iter().cycle().take(p.inputs.len()).copied().collect();
                let e0 = run_block(p, &inputs, &base).unwrap();
                for m in &bumped {
                    assert!(run_block(p, &inputs, m).unwrap() >= e0);
                }
            }
        }
    }

    #[test]
    fn model_json_roundtrip_and_hash_stability() {
        let model = EnergyModelParams::default_model();
        let text = model.to_json();
        let back = EnergyModelParams::from_json(&text).unwrap();
        assert_eq!(model, back);
        assert_eq!(model.hash_hex(), back.hash_hex());
        assert_ne!(
            model.hash_hex(),
            EnergyModelParams::zero_model().hash_hex()
        );
    }
}

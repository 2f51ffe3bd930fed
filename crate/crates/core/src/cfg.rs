//! Control-flow graph construction, basic-block extraction, and the harness
//! transform that makes blocks runnable in isolation.
//!
//! A basic block is a maximal straight-line sequence with one entry (its
//! first instruction) and one exit (its last). Call instructions do not end
//! blocks; call/return edges are recorded separately from branch edges.
//! An unconditional branch to the textually next instruction is a trivial
//! jump and does not break a block.
//!
//! The harness transform applies three modifications so a block can execute
//! standalone:
//!
//! 1. a block with k calls is divided into k+1 parts, with the call
//!    instructions omitted;
//! 2. frame/call plumbing (`entsp`, `retsp`, `bl`) is stripped and recorded
//!    as constant cost tags;
//! 3. every memory operand is pinned to a harness-local slot: frame slots
//!    keep their offsets, dynamically indexed operands get fresh slots whose
//!    initial contents become block inputs (the index registers are still
//!    read, so address-switching energy stays a function of the inputs).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::isa::{Instruction, Location, Opcode, Operand, Program};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct BlockId(pub usize);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// How a block hands off control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminator {
    /// `retsp`, or the textual end of a function.
    Return,
    /// `bu <t>`.
    Jump(BlockId),
    /// `bf`/`bt`: the successor when the condition register is 1, and when 0.
    Cond { on_true: BlockId, on_false: BlockId },
    /// No branch; execution continues into the next block.
    FallThrough(BlockId),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasicBlock {
    pub id: BlockId,
    /// Index into `Cfg::program.functions`.
    pub function: usize,
    /// Display name within its function: `B1`, `B2`, ...
    pub name: String,
    /// Index of the first instruction within the function.
    pub start: usize,
    pub instructions: Vec<Instruction>,
    pub terminator: Terminator,
    pub successors: Vec<BlockId>,
    pub predecessors: Vec<BlockId>,
    pub reachable: bool,
}

impl BasicBlock {
    pub fn instr_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.start..self.start + self.instructions.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallEdge {
    pub from_block: BlockId,
    /// Instruction index within the calling function.
    pub instr_index: usize,
    pub callee: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionBlocks {
    pub name: String,
    pub entry: BlockId,
    /// Blocks in textual order.
    pub blocks: Vec<BlockId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cfg {
    pub program: Program,
    pub blocks: Vec<BasicBlock>,
    pub functions: Vec<FunctionBlocks>,
    /// Call/return edges, excluded from block successor edges.
    pub call_edges: Vec<CallEdge>,
}

impl Cfg {
    pub fn block(&self, id: BlockId) -> &BasicBlock {
        &self.blocks[id.0]
    }

    pub fn function_of(&self, id: BlockId) -> &FunctionBlocks {
        &self.functions[self.block(id).function]
    }

    pub fn entry_block(&self) -> BlockId {
        let entry_fn = self
            .functions
            .iter()
            .position(|f| f.name == self.program.entry)
            .expect("entry function present");
        self.functions[entry_fn].entry
    }

    /// Call targets made from a block, in instruction order.
    pub fn calls_from(&self, id: BlockId) -> Vec<&CallEdge> {
        let mut edges: Vec<&CallEdge> = self
            .call_edges
            .iter()
            .filter(|e| e.from_block == id)
            .collect();
        edges.sort_by_key(|e| e.instr_index);
        edges
    }
}

/// Builds the inter-procedural CFG and extracts basic blocks.
///
/// Unreachable blocks are kept and flagged via [`BasicBlock::reachable`],
/// never dropped.
pub fn extract_blocks(program: &Program) -> Cfg {
    let mut blocks: Vec<BasicBlock> = Vec::new();
    let mut functions: Vec<FunctionBlocks> = Vec::new();
    let mut call_edges: Vec<CallEdge> = Vec::new();

    for (func_idx, func) in program.functions.iter().enumerate() {
        let n = func.instructions.len();
        let addr_index: BTreeMap<&str, usize> = func
            .instructions
            .iter()
            .enumerate()
            .map(|(i, ins)| (ins.address.as_str(), i))
            .collect();
        let is_trivial_jump = |i: usize| -> bool {
            let ins = &func.instructions[i];
            ins.opcode == Opcode::Bu
                && ins
                    .target()
                    .and_then(|t| addr_index.get(t))
                    .is_some_and(|&t| t == i + 1)
        };

        let mut leaders: BTreeSet<usize> = BTreeSet::new();
        if n > 0 {
            leaders.insert(0);
        }
        for (i, ins) in func.instructions.iter().enumerate() {
            let splits_here = match ins.opcode {
                Opcode::Bf | Opcode::Bt | Opcode::Retsp => true,
                Opcode::Bu => !is_trivial_jump(i),
                _ => false,
            };
            if splits_here && i + 1 < n {
                leaders.insert(i + 1);
            }
            if ins.opcode.is_branch() && !is_trivial_jump(i) {
                let t = ins.target().expect("branch has target");
                leaders.insert(addr_index[t]);
            }
        }

        let starts: Vec<usize> = leaders.into_iter().collect();
        let first_block = BlockId(blocks.len());
        let mut block_of_instr: Vec<usize> = vec![0; n];
        for (bi, &start) in starts.iter().enumerate() {
            let end = starts.get(bi + 1).copied().unwrap_or(n);
            for slot in block_of_instr.iter_mut().take(end).skip(start) {
                *slot = first_block.0 + bi;
            }
            blocks.push(BasicBlock {
                id: BlockId(first_block.0 + bi),
                function: func_idx,
                name: format!("B{}", bi + 1),
                start,
                instructions: func.instructions[start..end].to_vec(),
                terminator: Terminator::Return, // patched below
                successors: Vec::new(),
                predecessors: Vec::new(),
                reachable: false,
            });
        }
        functions.push(FunctionBlocks {
            name: func.name.clone(),
            entry: first_block,
            blocks: (first_block.0..blocks.len()).map(BlockId).collect(),
        });

        // terminators and intra-procedural edges
        for bi in first_block.0..blocks.len() {
            let block = &blocks[bi];
            let last_idx = block.start + block.instructions.len() - 1;
            let last = &func.instructions[last_idx];
            let next_block = || -> Option<BlockId> {
                (last_idx + 1 < n).then(|| BlockId(first_block.0 + block_of_instr[last_idx + 1]))
            };
            let block_of_target = |t: &str| BlockId(first_block.0 + block_of_instr[addr_index[t]]);
            let terminator = match last.opcode {
                Opcode::Retsp => Terminator::Return,
                Opcode::Bu => Terminator::Jump(block_of_target(last.target().unwrap())),
                Opcode::Bf => Terminator::Cond {
                    on_true: next_block().expect("bf fallthrough exists"),
                    on_false: block_of_target(last.target().unwrap()),
                },
                Opcode::Bt => Terminator::Cond {
                    on_true: block_of_target(last.target().unwrap()),
                    on_false: next_block().expect("bt fallthrough exists"),
                },
                _ => match next_block() {
                    Some(next) => Terminator::FallThrough(next),
                    None => Terminator::Return,
                },
            };
            let successors = match terminator {
                Terminator::Return => vec![],
                Terminator::Jump(t) | Terminator::FallThrough(t) => vec![t],
                Terminator::Cond { on_true, on_false } => vec![on_true, on_false],
            };
            blocks[bi].terminator = terminator;
            blocks[bi].successors = successors;
        }

        for (i, ins) in func.instructions.iter().enumerate() {
            if ins.opcode == Opcode::Bl {
                call_edges.push(CallEdge {
                    from_block: BlockId(first_block.0 + block_of_instr[i]),
                    instr_index: i,
                    callee: ins.target().unwrap().to_string(),
                });
            }
        }
    }

    // predecessors
    let edges: Vec<(BlockId, BlockId)> = blocks
        .iter()
        .flat_map(|b| b.successors.iter().map(move |s| (b.id, *s)))
        .collect();
    for (from, to) in edges {
        blocks[to.0].predecessors.push(from);
    }

    // reachability from each function entry that is itself reachable from
    // the program entry (via call edges), plus the entry function
    let mut cfg = Cfg {
        program: program.clone(),
        blocks,
        functions,
        call_edges,
    };
    mark_reachable(&mut cfg);
    cfg
}

fn mark_reachable(cfg: &mut Cfg) {
    let mut reachable_fns: BTreeSet<usize> = BTreeSet::new();
    let entry_fn = cfg
        .functions
        .iter()
        .position(|f| f.name == cfg.program.entry)
        .expect("entry function present");
    let mut fn_stack = vec![entry_fn];
    while let Some(fi) = fn_stack.pop() {
        if !reachable_fns.insert(fi) {
            continue;
        }
        for edge in &cfg.call_edges {
            if cfg.blocks[edge.from_block.0].function == fi {
                if let Some(ci) = cfg.functions.iter().position(|f| f.name == edge.callee) {
                    fn_stack.push(ci);
                }
            }
        }
    }
    for fi in reachable_fns {
        let mut stack = vec![cfg.functions[fi].entry];
        while let Some(b) = stack.pop() {
            if cfg.blocks[b.0].reachable {
                continue;
            }
            cfg.blocks[b.0].reachable = true;
            stack.extend(cfg.blocks[b.0].successors.iter().copied());
        }
    }
}

/// A harness part's identity: the originating block and part index.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct HarnessId {
    pub block: BlockId,
    pub part: usize,
}

/// Where a rewritten memory access charges its address-switching energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HarnessAddr {
    /// `sp[k]`: the frame-relative offset, identical in harness and program.
    FrameOffset(u32),
    /// `[rN]`: the index register's runtime value.
    IndexReg(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarnessMem {
    /// Harness-local slot holding the accessed data.
    pub data_slot: u32,
    pub addr: HarnessAddr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarnessInstr {
    pub instr: Instruction,
    /// Present iff the instruction accesses memory.
    pub mem: Option<HarnessMem>,
}

impl HarnessInstr {
    /// Locations read, in read order (address registers before loaded data).
    pub fn reads(&self) -> Vec<Location> {
        match (self.instr.opcode, &self.mem) {
            (Opcode::Ldw, Some(m)) => {
                let mut r = Vec::new();
                if let HarnessAddr::IndexReg(reg) = m.addr {
                    r.push(Location::Register(reg));
                }
                r.push(Location::Slot(m.data_slot));
                r
            }
            (Opcode::Stw, Some(m)) => {
                let mut r = self.instr.ref_def().0;
                r.retain(|l| matches!(l, Location::Register(_)));
                if let HarnessAddr::IndexReg(reg) = m.addr {
                    let loc = Location::Register(reg);
                    if !r.contains(&loc) {
                        r.push(loc);
                    }
                }
                r
            }
            _ => self.instr.ref_def().0,
        }
    }

    pub fn writes(&self) -> Vec<Location> {
        match (self.instr.opcode, &self.mem) {
            (Opcode::Stw, Some(m)) => vec![Location::Slot(m.data_slot)],
            _ => self.instr.ref_def().1,
        }
    }

    /// Canonical text for cache keys: address labels and branch targets are
    /// normalized away, the memory rewrite is explicit.
    pub fn canonical(&self) -> String {
        let mut s = self.instr.opcode.mnemonic().to_string();
        for op in &self.instr.operands {
            match op {
                Operand::Target(_) => s.push_str(" <_>"),
                Operand::StackSlot(_) | Operand::Indexed(_) => {
                    let m = self.mem.expect("memory operand implies rewrite");
                    match m.addr {
                        HarnessAddr::FrameOffset(k) => s.push_str(&format!(" slot{k}")),
                        HarnessAddr::IndexReg(r) => {
                            s.push_str(&format!(" slot{}@r{r}", m.data_slot))
                        }
                    }
                }
                other => s.push_str(&format!(" {other}")),
            }
        }
        s
    }
}

/// An omitted instruction whose constant cost is charged alongside a part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostTag {
    pub opcode: Opcode,
    /// Instruction index within the function, for profile attribution.
    pub instr_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarnessBlock {
    pub id: HarnessId,
    /// `B1` for single-part blocks, `B2_1`-style otherwise.
    pub name: String,
    pub function: String,
    pub instructions: Vec<HarnessInstr>,
    /// The gen set: locations read before being defined, in first-read order.
    pub inputs: Vec<Location>,
    pub tags: Vec<CostTag>,
}

impl HarnessBlock {
    pub fn canonical(&self) -> String {
        self.instructions
            .iter()
            .map(|i| i.canonical())
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// The gen set of a harness instruction sequence: locations read without
/// being previously defined, ordered by first occurrence.
pub fn gen_set(instrs: &[HarnessInstr]) -> Vec<Location> {
    let mut defined: BTreeSet<Location> = BTreeSet::new();
    let mut gen: Vec<Location> = Vec::new();
    for hi in instrs {
        for loc in hi.reads() {
            if !defined.contains(&loc) && !gen.contains(&loc) {
                gen.push(loc);
            }
        }
        defined.extend(hi.writes());
    }
    gen
}

/// Applies the three block modifications, yielding k+1 parts for k calls.
pub fn harness_transform(cfg: &Cfg, block: &BasicBlock) -> Vec<HarnessBlock> {
    let function = &cfg.functions[block.function].name;
    let call_count = block
        .instructions
        .iter()
        .filter(|i| i.opcode == Opcode::Bl)
        .count();
    let multi = call_count > 0;

    let mut parts: Vec<(Vec<HarnessInstr>, Vec<CostTag>)> = vec![(Vec::new(), Vec::new())];
    let mut slot_map: BTreeMap<String, u32> = BTreeMap::new();
    // fresh slots for indexed operands sit above every frame slot the block uses
    let mut next_fresh: u32 = block
        .instructions
        .iter()
        .flat_map(|i| i.operands.iter())
        .filter_map(|op| match op {
            Operand::StackSlot(k) => Some(k + 1),
            _ => None,
        })
        .max()
        .unwrap_or(0);

    for (offset, instr) in block.instructions.iter().enumerate() {
        let instr_index = block.start + offset;
        if instr.opcode.is_cost_tag() {
            let tag = CostTag {
                opcode: instr.opcode,
                instr_index,
            };
            parts.last_mut().unwrap().1.push(tag);
            if instr.opcode == Opcode::Bl {
                parts.push((Vec::new(), Vec::new()));
            }
            continue;
        }
        let mem = instr.operands.iter().find_map(|op| match op {
            Operand::StackSlot(k) => Some(HarnessMem {
                data_slot: *k,
                addr: HarnessAddr::FrameOffset(*k),
            }),
            Operand::Indexed(r) => {
                let key = format!("[r{r}]");
                let slot = *slot_map.entry(key).or_insert_with(|| {
                    let s = next_fresh;
                    next_fresh += 1;
                    s
                });
                Some(HarnessMem {
                    data_slot: slot,
                    addr: HarnessAddr::IndexReg(*r),
                })
            }
            _ => None,
        });
        parts.last_mut().unwrap().0.push(HarnessInstr {
            instr: instr.clone(),
            mem,
        });
    }

    parts
        .into_iter()
        .enumerate()
        .map(|(pi, (instructions, tags))| {
            let inputs = gen_set(&instructions);
            HarnessBlock {
                id: HarnessId {
                    block: block.id,
                    part: pi,
                },
                name: if multi {
                    format!("{}_{}", block.name, pi + 1)
                } else {
                    block.name.clone()
                },
                function: function.clone(),
                instructions,
                inputs,
                tags,
            }
        })
        .collect()
}

/// What an original instruction contributes to: a part's body or a cost tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstrRole {
    Part(HarnessId),
    Tag(HarnessId),
}

impl InstrRole {
    pub fn part(self) -> HarnessId {
        match self {
            InstrRole::Part(id) | InstrRole::Tag(id) => id,
        }
    }
}

/// Harness decomposition of a whole program.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarnessMap {
    pub parts: BTreeMap<HarnessId, HarnessBlock>,
    /// Per function, per instruction index: which part/tag owns it.
    pub instr_roles: Vec<Vec<InstrRole>>,
}

impl HarnessMap {
    pub fn part(&self, id: HarnessId) -> &HarnessBlock {
        &self.parts[&id]
    }

    pub fn parts_of_block(&self, block: BlockId) -> impl Iterator<Item = &HarnessBlock> {
        self.parts
            .range(
                HarnessId { block, part: 0 }..=HarnessId {
                    block,
                    part: usize::MAX,
                },
            )
            .map(|(_, p)| p)
    }
}

/// Transforms every block of the program.
pub fn harness_program(cfg: &Cfg) -> HarnessMap {
    let mut parts = BTreeMap::new();
    let mut instr_roles: Vec<Vec<InstrRole>> = cfg
        .program
        .functions
        .iter()
        .map(|f| vec![InstrRole::Part(HarnessId::default()); f.instructions.len()])
        .collect();
    for block in &cfg.blocks {
        for hb in harness_transform(cfg, block) {
            for tag in &hb.tags {
                instr_roles[block.function][tag.instr_index] = InstrRole::Tag(hb.id);
            }
            for hi in &hb.instructions {
                let idx = block.start
                    + block
                        .instructions
                        .iter()
                        .position(|i| i.address == hi.instr.address)
                        .unwrap();
                instr_roles[block.function][idx] = InstrRole::Part(hb.id);
            }
            parts.insert(hb.id, hb);
        }
    }
    HarnessMap { parts, instr_roles }
}

/// CFG and block listing as a JSON document, for debugging and reports.
pub fn to_json(cfg: &Cfg, harness: &HarnessMap) -> serde_json::Value {
    let functions: Vec<serde_json::Value> = cfg
        .functions
        .iter()
        .map(|f| {
            let blocks: Vec<serde_json::Value> = f
                .blocks
                .iter()
                .map(|bid| {
                    let b = cfg.block(*bid);
                    let parts: Vec<serde_json::Value> = harness
                        .parts_of_block(*bid)
                        .map(|p| {
                            serde_json::json!({
                                "name": p.name,
                                "instructions": p.instructions.iter()
                                    .map(|i| i.instr.to_string()).collect::<Vec<_>>(),
                                "gen": p.inputs.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
                                "tags": p.tags.iter().map(|t| t.opcode.mnemonic()).collect::<Vec<_>>(),
                            })
                        })
                        .collect();
                    serde_json::json!({
                        "id": bid.0,
                        "name": b.name,
                        "instructions": b.instructions.iter().map(|i| i.to_string()).collect::<Vec<_>>(),
                        "successors": b.successors.iter().map(|s| s.0).collect::<Vec<_>>(),
                        "predecessors": b.predecessors.iter().map(|s| s.0).collect::<Vec<_>>(),
                        "reachable": b.reachable,
                        "parts": parts,
                    })
                })
                .collect();
            serde_json::json!({ "function": f.name, "blocks": blocks })
        })
        .collect();
    serde_json::json!({
        "functions": functions,
        "call_edges": cfg.call_edges.iter()
            .map(|e| serde_json::json!({
                "from_block": e.from_block.0,
                "instr_index": e.instr_index,
                "callee": e.callee,
            }))
            .collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{parse_program, FACT};

    fn fact_cfg() -> Cfg {
        extract_blocks(&parse_program(FACT).unwrap())
    }

    #[test]
    fn fact_has_three_blocks_matching_the_listing() {
        let cfg = fact_cfg();
        assert_eq!(cfg.blocks.len(), 3);
        let addrs = |b: &BasicBlock| {
            b.instructions
                .iter()
                .map(|i| i.address.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(addrs(&cfg.blocks[0]), ["01", "02", "03", "04", "05", "06"]);
        assert_eq!(
            addrs(&cfg.blocks[1]),
            ["07", "10", "11", "12", "13", "14", "15"]
        );
        assert_eq!(addrs(&cfg.blocks[2]), ["08", "09"]);
        // B1's bf: condition 1 falls through to B2, condition 0 jumps to B3
        assert_eq!(
            cfg.blocks[0].terminator,
            Terminator::Cond {
                on_true: BlockId(1),
                on_false: BlockId(2)
            }
        );
        assert!(cfg.blocks.iter().all(|b| b.reachable));
        assert_eq!(cfg.call_edges.len(), 1);
        assert_eq!(cfg.call_edges[0].callee, "fact");
    }

    #[test]
    fn straight_line_function_is_one_block() {
        let p = parse_program("<f>:\n01: ldc r0, 0x1\n02: add r0, r0, 0x2\n03: retsp 0x0\n")
            .unwrap();
        let cfg = extract_blocks(&p);
        assert_eq!(cfg.blocks.len(), 1);
        assert_eq!(cfg.blocks[0].terminator, Terminator::Return);
    }

    #[test]
    fn diamond_yields_four_blocks() {
        let p = parse_program(
            "<f>:\n\
             01: lss r2, r0, r1\n\
             02: bf r2, <05>\n\
             03: add r3, r0, 0x1\n\
             04: bu <06>\n\
             05: add r3, r1, 0x2\n\
             06: add r0, r3, 0x0\n\
             07: retsp 0x0\n",
        )
        .unwrap();
        let cfg = extract_blocks(&p);
        assert_eq!(cfg.blocks.len(), 4);
        assert_eq!(
            cfg.blocks[0].terminator,
            Terminator::Cond {
                on_true: BlockId(1),
                on_false: BlockId(2)
            }
        );
        assert_eq!(cfg.blocks[1].terminator, Terminator::Jump(BlockId(3)));
        assert_eq!(cfg.blocks[2].terminator, Terminator::FallThrough(BlockId(3)));
        assert_eq!(
            cfg.blocks[3].predecessors,
            vec![BlockId(1), BlockId(2)],
            "join has both arms as predecessors"
        );
    }

    #[test]
    fn every_instruction_is_in_exactly_one_block() {
        let cfg = fact_cfg();
        for (fi, func) in cfg.program.functions.iter().enumerate() {
            let mut seen = vec![0usize; func.instructions.len()];
            for b in cfg.blocks.iter().filter(|b| b.function == fi) {
                for i in b.instr_indices() {
                    seen[i] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1), "partition violated: {seen:?}");
        }
    }

    #[test]
    fn unreachable_block_is_kept_and_flagged() {
        let p = parse_program(
            "<f>:\n01: ldc r0, 0x1\n02: retsp 0x0\n03: ldc r1, 0x2\n04: retsp 0x0\n",
        )
        .unwrap();
        let cfg = extract_blocks(&p);
        assert_eq!(cfg.blocks.len(), 2);
        assert!(cfg.blocks[0].reachable);
        assert!(!cfg.blocks[1].reachable);
    }

    #[test]
    fn fact_harness_parts_match_the_modified_listing() {
        let cfg = fact_cfg();
        let b2 = &cfg.blocks[1];
        let parts = harness_transform(&cfg, b2);
        assert_eq!(parts.len(), 2, "one call yields two parts");
        assert_eq!(parts[0].name, "B2_1");
        assert_eq!(parts[1].name, "B2_2");
        let addrs = |p: &HarnessBlock| {
            p.instructions
                .iter()
                .map(|i| i.instr.address.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(addrs(&parts[0]), ["07", "10", "11"]);
        assert_eq!(addrs(&parts[1]), ["13", "14"]);
        assert_eq!(parts[0].tags.len(), 1, "bl omitted and tagged");
        assert_eq!(parts[0].tags[0].opcode, Opcode::Bl);
        assert_eq!(parts[1].tags.len(), 1, "retsp omitted and tagged");
        assert_eq!(parts[1].tags[0].opcode, Opcode::Retsp);
    }

    #[test]
    fn block_without_calls_is_a_single_identical_part() {
        let p = parse_program("<f>:\n01: add r0, r0, r1\n02: xor r2, r0, r1\n").unwrap();
        let cfg = extract_blocks(&p);
        let parts = harness_transform(&cfg, &cfg.blocks[0]);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].instructions.len(), 2);
        assert!(parts[0].tags.is_empty());
        assert_eq!(
            parts[0].instructions[0].instr,
            cfg.blocks[0].instructions[0]
        );
    }

    #[test]
    fn two_calls_yield_three_parts() {
        let p = parse_program(
            "<f>:\n01: add r0, r0, r1\n02: bl <f>\n03: add r0, r0, r1\n04: bl <f>\n05: add r0, r0, r1\n",
        )
        .unwrap();
        let cfg = extract_blocks(&p);
        let parts = harness_transform(&cfg, &cfg.blocks[0]);
        assert_eq!(parts.len(), 3);
        assert!(parts.iter().all(|p| p.instructions.len() == 1));
    }

    #[test]
    fn fact_gen_sets_match_the_dataflow_equations() {
        let cfg = fact_cfg();
        let harness = harness_program(&cfg);
        let by_name: BTreeMap<&str, &HarnessBlock> = harness
            .parts
            .values()
            .map(|p| (p.name.as_str(), p))
            .collect();
        assert_eq!(by_name["B1"].inputs, vec![Location::Register(0)]);
        assert_eq!(by_name["B2_1"].inputs, vec![Location::Slot(1)]);
        assert_eq!(
            by_name["B2_2"].inputs,
            vec![Location::Slot(1), Location::Register(0)]
        );
        assert_eq!(by_name["B3"].inputs, Vec::<Location>::new());
    }

    #[test]
    fn gen_of_empty_block_is_empty() {
        assert_eq!(gen_set(&[]), Vec::<Location>::new());
    }

    #[test]
    fn gen_skips_previously_defined_locations() {
        // ldc r0, 0x1 ; add r1, r0, r2  →  gen = {r2}
        let p = parse_program("<f>:\n01: ldc r0, 0x1\n02: add r1, r0, r2\n").unwrap();
        let cfg = extract_blocks(&p);
        let parts = harness_transform(&cfg, &cfg.blocks[0]);
        assert_eq!(parts[0].inputs, vec![Location::Register(2)]);
    }

    #[test]
    fn indexed_operands_get_fresh_slots_above_frame_slots() {
        let p = parse_program(
            "<f>:\n01: ldw r1, sp[0x2]\n02: ldw r3, [r0]\n03: stw r3, [r4]\n04: stw r3, [r0]\n",
        )
        .unwrap();
        let cfg = extract_blocks(&p);
        let parts = harness_transform(&cfg, &cfg.blocks[0]);
        let mems: Vec<HarnessMem> = parts[0]
            .instructions
            .iter()
            .map(|i| i.mem.unwrap())
            .collect();
        assert_eq!(mems[0].data_slot, 2);
        assert_eq!(mems[0].addr, HarnessAddr::FrameOffset(2));
        assert_eq!(mems[1].data_slot, 3, "first fresh slot above sp[0x2]");
        assert_eq!(mems[1].addr, HarnessAddr::IndexReg(0));
        assert_eq!(mems[2].data_slot, 4, "distinct operand, distinct slot");
        assert_eq!(mems[3].data_slot, 3, "same operand, same slot");
        // the stored value and index registers are inputs; the store's slot is not
        assert_eq!(
            parts[0].inputs,
            vec![
                Location::Slot(2),
                Location::Register(0),
                Location::Slot(3),
                Location::Register(4),
            ]
        );
    }

    #[test]
    fn cfg_json_lists_blocks_and_gen_sets() {
        let cfg = fact_cfg();
        let harness = harness_program(&cfg);
        let doc = to_json(&cfg, &harness);
        let blocks = doc["functions"][0]["blocks"].as_array().unwrap();
        assert_eq!(blocks.len(), 3);
        assert_eq!(blocks[1]["parts"][0]["name"], "B2_1");
        assert_eq!(blocks[1]["parts"][0]["gen"][0], "sp[0x1]");
    }
}

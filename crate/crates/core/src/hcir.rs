//! Horn-clause intermediate representation and cost-equation setup.
//!
//! Blocks become clauses and instructions become clause literals, in SSA
//! form. A conditional branch introduces an auxiliary predicate with two
//! guarded clauses (condition value 1 and 0); a natural loop becomes a
//! tail-recursive predicate; a `bl` becomes a call literal on top of its
//! cost-tag literal.
//!
//! Size relations are tracked symbolically: registers and frame slots carry
//! affine values over the enclosing region's parameters, a loop's exit test
//! defines its size variable, and every call literal records the callee's
//! size as an affine expression over the caller's parameters. Dynamically
//! indexed memory is anonymous to this analysis; frame slots never alias it
//! because frames sit above the array image.
//!
//! Cost equations are assembled per approximation direction: a clause
//! contributes the bounds of its block parts plus its omitted-instruction
//! tag costs; data-dependent conditionals (guard predicates without calls)
//! collapse to the max (upper) or min (lower) of their arms; structural
//! conditionals become the recursive/base cases of their region's equation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfg::{BlockId, Cfg, HarnessId, HarnessMap, InstrRole, Terminator};
use crate::energy::Energy;
use crate::evo::Direction;
use crate::isa::{Location, Opcode, Operand};
use crate::simkernel::{EnergyModelParams, EnergyTrace, TraceEvent};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HcirError {
    #[error("unsupported control shape: {0}")]
    UnsupportedShape(String),
    #[error("non-affine size relation: {0}")]
    NonAffine(String),
    #[error("missing block bound for part {0}")]
    MissingBound(String),
    #[error("profile replay mismatch: {0}")]
    ReplayMismatch(String),
}

// ---------------------------------------------------------------------------
// affine expressions over region parameters
// ---------------------------------------------------------------------------

/// Sum of `coeff * param` plus a constant, over a region's parameters.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Affine {
    pub coeffs: BTreeMap<usize, i64>,
    pub konst: i64,
}

impl Affine {
    pub fn konst(c: i64) -> Affine {
        Affine {
            coeffs: BTreeMap::new(),
            konst: c,
        }
    }

    pub fn param(p: usize) -> Affine {
        Affine {
            coeffs: [(p, 1)].into(),
            konst: 0,
        }
    }

    fn combine(&self, other: &Affine, sign: i64) -> Affine {
        let mut coeffs = self.coeffs.clone();
        for (p, c) in &other.coeffs {
            let e = coeffs.entry(*p).or_insert(0);
            *e += sign * c;
            if *e == 0 {
                coeffs.remove(p);
            }
        }
        Affine {
            coeffs,
            konst: self.konst + sign * other.konst,
        }
    }

    pub fn add(&self, other: &Affine) -> Affine {
        self.combine(other, 1)
    }

    pub fn sub(&self, other: &Affine) -> Affine {
        self.combine(other, -1)
    }

    /// Substitutes each parameter with its value in another space.
    fn subst(&self, value_of: &dyn Fn(usize) -> Option<Affine>) -> Option<Affine> {
        let mut out = Affine::konst(self.konst);
        for (p, c) in &self.coeffs {
            let v = value_of(*p)?;
            for (q, vc) in &v.coeffs {
                let e = out.coeffs.entry(*q).or_insert(0);
                *e += c * vc;
                if *e == 0 {
                    out.coeffs.remove(q);
                }
            }
            out.konst += c * v.konst;
        }
        Some(out)
    }

    /// Expresses `self` as `alpha * base + beta` with integer coefficients.
    fn express_in(&self, base: &Affine) -> Option<(i64, i64)> {
        if self.coeffs.is_empty() {
            return Some((0, self.konst));
        }
        let (p0, c0) = self.coeffs.iter().next()?;
        let b0 = base.coeffs.get(p0)?;
        if c0 % b0 != 0 {
            return None;
        }
        let alpha = c0 / b0;
        for (p, b) in &base.coeffs {
            if self.coeffs.get(p).copied().unwrap_or(0) != alpha * b {
                return None;
            }
        }
        for p in self.coeffs.keys() {
            if !base.coeffs.contains_key(p) {
                return None;
            }
        }
        Some((alpha, self.konst - alpha * base.konst))
    }
}

/// Symbolic value of a location during region construction.
#[derive(Debug, Clone, PartialEq, Eq)]
enum SymVal {
    Num(Affine),
    /// A 0/1 flag: value 1 iff `(expr > 0) == positive_means`.
    Flag { expr: Affine, positive_means: bool },
    Opaque,
}

impl SymVal {
    fn as_num(&self) -> Option<&Affine> {
        match self {
            SymVal::Num(a) => Some(a),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// clause system
// ---------------------------------------------------------------------------

pub type PredId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredKind {
    /// A program function; one clause.
    Function { func: usize },
    /// A natural loop, tail-recursive; one clause.
    Loop { header: BlockId },
    /// A two-clause conditional dispatched from `region`'s clause.
    Guard { region: PredId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostAtom {
    /// An instruction belonging to a harness part; `first` marks the literal
    /// that carries the part's bound.
    Part { id: HarnessId, first: bool },
    /// An omitted instruction charged as a constant tag.
    Tag { part: HarnessId, opcode: Opcode },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Literal {
    Instr {
        function: usize,
        index: usize,
        opcode: Opcode,
        text: String,
        /// SSA names bound by this literal.
        defs: Vec<String>,
        atom: CostAtom,
    },
    Call {
        callee: PredId,
        text: String,
        /// The callee's size variable at this call, over the owning
        /// region's parameters; `None` when untrackable.
        size_at_call: Option<Affine>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    /// `Some(value)` on guard-pred clauses, `None` otherwise.
    pub guard: Option<bool>,
    pub head_text: String,
    pub literals: Vec<Literal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardExpr {
    /// Condition value is 1 iff `(expr > 0) == positive_means`.
    pub expr: Affine,
    pub positive_means: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub name: String,
    pub kind: PredKind,
    pub head_arity: usize,
    /// Function args / loop live-ins; for guard preds, the locations the
    /// arms read (head display only).
    pub params: Vec<Location>,
    /// The predicate's size variable over its own parameters.
    pub size_expr: Option<Affine>,
    /// For guard preds: the dispatch condition over the parent region's
    /// parameters, when affine.
    pub dispatch_guard: Option<GuardExpr>,
    pub clauses: Vec<Clause>,
}

/// Which argument of a function carries its input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub metric: SizeMetric,
    /// Register holding the size (the integer itself, or the array length).
    pub register: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeMetric {
    IntValue,
    ArrayLength,
}

impl Default for MetricSpec {
    fn default() -> Self {
        MetricSpec {
            metric: SizeMetric::IntValue,
            register: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClauseSystem {
    pub predicates: Vec<Predicate>,
    /// Predicate of the program entry function.
    pub entry: PredId,
    pub metrics: BTreeMap<String, MetricSpec>,
}

impl ClauseSystem {
    pub fn by_name(&self, name: &str) -> Option<&Predicate> {
        self.predicates.iter().find(|p| p.name == name)
    }

    /// Clause text for the whole system.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for pred in &self.predicates {
            for clause in &pred.clauses {
                let _ = write!(out, "{} :-", clause.head_text);
                if clause.literals.is_empty() {
                    out.push_str(" true");
                }
                for (i, lit) in clause.literals.iter().enumerate() {
                    let text = match lit {
                        Literal::Instr { text, .. } => text,
                        Literal::Call { text, .. } => text,
                    };
                    let _ = write!(out, "\n   {text}");
                    if i + 1 < clause.literals.len() {
                        out.push(',');
                    }
                }
                out.push_str(".\n\n");
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// graph analyses (per function, over local block indices)
// ---------------------------------------------------------------------------

struct FnGraph {
    succs: Vec<Vec<usize>>,
    preds: Vec<Vec<usize>>,
    n: usize,
}

fn fn_graph(cfg: &Cfg, func: usize) -> (Vec<BlockId>, FnGraph) {
    let ids = cfg.functions[func].blocks.clone();
    let local: BTreeMap<BlockId, usize> = ids.iter().enumerate().map(|(i, b)| (*b, i)).collect();
    let n = ids.len();
    let mut succs = vec![Vec::new(); n];
    let mut preds = vec![Vec::new(); n];
    for (i, id) in ids.iter().enumerate() {
        for s in &cfg.block(*id).successors {
            succs[i].push(local[s]);
            preds[local[s]].push(i);
        }
    }
    (ids, FnGraph { succs, preds, n })
}

fn dominators(g: &FnGraph) -> Vec<BTreeSet<usize>> {
    let full: BTreeSet<usize> = (0..g.n).collect();
    let mut dom = vec![full; g.n];
    dom[0] = [0].into();
    let mut changed = true;
    while changed {
        changed = false;
        for b in 1..g.n {
            let mut new: Option<BTreeSet<usize>> = None;
            for &p in &g.preds[b] {
                new = Some(match new {
                    None => dom[p].clone(),
                    Some(acc) => acc.intersection(&dom[p]).copied().collect(),
                });
            }
            let mut new = new.unwrap_or_default();
            new.insert(b);
            if new != dom[b] {
                dom[b] = new;
                changed = true;
            }
        }
    }
    dom
}

/// Post-dominator sets over the graph extended with a virtual exit `g.n`.
fn postdominators(g: &FnGraph, returns: &[usize]) -> Vec<BTreeSet<usize>> {
    let exit = g.n;
    let full: BTreeSet<usize> = (0..=g.n).collect();
    let mut pdom = vec![full; g.n + 1];
    pdom[exit] = [exit].into();
    let mut rsuccs: Vec<Vec<usize>> = (0..g.n).map(|b| g.succs[b].clone()).collect();
    for &r in returns {
        rsuccs[r].push(exit);
    }
    let mut changed = true;
    while changed {
        changed = false;
        for b in (0..g.n).rev() {
            if rsuccs[b].is_empty() {
                continue;
            }
            let mut new: Option<BTreeSet<usize>> = None;
            for &s in &rsuccs[b] {
                new = Some(match new {
                    None => pdom[s].clone(),
                    Some(acc) => acc.intersection(&pdom[s]).copied().collect(),
                });
            }
            let mut new = new.unwrap();
            new.insert(b);
            if new != pdom[b] {
                pdom[b] = new;
                changed = true;
            }
        }
    }
    pdom
}

/// Nearest common post-dominator of two nodes (possibly the virtual exit).
fn join_point(pdom: &[BTreeSet<usize>], a: usize, b: usize) -> usize {
    if a == b {
        return a;
    }
    pdom[a]
        .intersection(&pdom[b])
        .copied()
        .max_by_key(|j| pdom[*j].len())
        .expect("the virtual exit is always common")
}

#[derive(Debug, Clone)]
struct NaturalLoop {
    header: usize,
    body: BTreeSet<usize>,
    /// The unique out-of-loop block its exit edges target.
    exit_target: usize,
}

fn natural_loops(g: &FnGraph, dom: &[BTreeSet<usize>]) -> Result<Vec<NaturalLoop>, HcirError> {
    let mut by_header: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for u in 0..g.n {
        for &h in &g.succs[u] {
            if dom[u].contains(&h) {
                let body = by_header.entry(h).or_insert_with(|| [h].into());
                let mut stack = vec![u];
                while let Some(x) = stack.pop() {
                    if x != h && body.insert(x) {
                        stack.extend(g.preds[x].iter().copied());
                    }
                }
            }
        }
    }
    let mut loops = Vec::new();
    for (header, body) in by_header {
        let mut exits: BTreeSet<usize> = BTreeSet::new();
        for &b in &body {
            for &s in &g.succs[b] {
                if !body.contains(&s) {
                    exits.insert(s);
                }
            }
        }
        if exits.len() != 1 {
            return Err(HcirError::UnsupportedShape(format!(
                "loop at local block {header} has {} exit targets",
                exits.len()
            )));
        }
        loops.push(NaturalLoop {
            header,
            body,
            exit_target: *exits.iter().next().unwrap(),
        });
    }
    Ok(loops)
}

/// Locations possibly read before definition within `scope`, entering at
/// `entry` with nothing defined, in first-read order.
fn read_before_def(
    cfg: &Cfg,
    ids: &[BlockId],
    g: &FnGraph,
    entry: usize,
    scope: &BTreeSet<usize>,
) -> Vec<Location> {
    let all: BTreeSet<Location> = scope
        .iter()
        .flat_map(|b| cfg.block(ids[*b]).instructions.iter())
        .flat_map(|i| {
            let (r, d) = i.ref_def();
            r.into_iter().chain(d)
        })
        .collect();
    let block_defs = |b: usize| -> BTreeSet<Location> {
        cfg.block(ids[b])
            .instructions
            .iter()
            .flat_map(|i| i.ref_def().1)
            .collect()
    };
    let mut defined_in: BTreeMap<usize, BTreeSet<Location>> = scope
        .iter()
        .map(|b| {
            (
                *b,
                if *b == entry {
                    BTreeSet::new()
                } else {
                    all.clone()
                },
            )
        })
        .collect();
    let mut changed = true;
    while changed {
        changed = false;
        for &b in scope {
            if b == entry {
                continue;
            }
            let mut new: Option<BTreeSet<Location>> = None;
            for &p in &g.preds[b] {
                if !scope.contains(&p) {
                    continue;
                }
                let out: BTreeSet<Location> =
                    defined_in[&p].union(&block_defs(p)).copied().collect();
                new = Some(match new {
                    None => out,
                    Some(acc) => acc.intersection(&out).copied().collect(),
                });
            }
            let new = new.unwrap_or_default();
            if new != defined_in[&b] {
                defined_in.insert(b, new);
                changed = true;
            }
        }
    }
    let mut result: Vec<Location> = Vec::new();
    for &b in scope {
        let mut defined = defined_in[&b].clone();
        for instr in &cfg.block(ids[b]).instructions {
            let (refs, defs) = instr.ref_def();
            for r in refs {
                if !defined.contains(&r) && !result.contains(&r) {
                    result.push(r);
                }
            }
            defined.extend(defs);
        }
    }
    result
}

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

struct FnAnalysis {
    ids: Vec<BlockId>,
    local: BTreeMap<BlockId, usize>,
    graph: FnGraph,
    pdom: Vec<BTreeSet<usize>>,
    loops: Vec<NaturalLoop>,
    /// Innermost loop index per block.
    loop_of: Vec<Option<usize>>,
}

fn analyze_function(cfg: &Cfg, func: usize) -> Result<FnAnalysis, HcirError> {
    let (ids, graph) = fn_graph(cfg, func);
    let dom = dominators(&graph);
    let returns: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|(_, id)| matches!(cfg.block(**id).terminator, Terminator::Return))
        .map(|(i, _)| i)
        .collect();
    let pdom = postdominators(&graph, &returns);
    let loops = natural_loops(&graph, &dom)?;
    let mut loop_of = vec![None; graph.n];
    for (b, slot) in loop_of.iter_mut().enumerate() {
        let mut best: Option<usize> = None;
        for (li, l) in loops.iter().enumerate() {
            if l.body.contains(&b)
                && best.is_none_or(|cur: usize| l.body.len() < loops[cur].body.len())
            {
                best = Some(li);
            }
        }
        *slot = best;
    }
    let local = ids.iter().enumerate().map(|(i, b)| (*b, i)).collect();
    Ok(FnAnalysis {
        ids,
        local,
        graph,
        pdom,
        loops,
        loop_of,
    })
}

/// Per-clause SSA naming: first use binds the bare location name, each
/// subsequent write appends a version suffix.
struct Names {
    bound: BTreeMap<Location, (String, u32)>,
}

impl Names {
    fn new() -> Names {
        Names {
            bound: BTreeMap::new(),
        }
    }

    fn base(loc: Location) -> String {
        match loc {
            Location::Register(r) => format!("R{r}"),
            Location::Slot(k) => format!("Sp{k:#x}"),
        }
    }

    fn read(&mut self, loc: Location) -> String {
        let base = Self::base(loc);
        self.bound.entry(loc).or_insert((base, 0)).0.clone()
    }

    fn write(&mut self, loc: Location) -> String {
        let base = Self::base(loc);
        match self.bound.get_mut(&loc) {
            None => {
                self.bound.insert(loc, (base.clone(), 0));
                base
            }
            Some(entry) => {
                entry.1 += 1;
                entry.0 = format!("{base}_{}", entry.1);
                entry.0.clone()
            }
        }
    }

    fn current(&self, loc: Location) -> Option<String> {
        self.bound.get(&loc).map(|(n, _)| n.clone())
    }
}

type Env = BTreeMap<Location, SymVal>;

struct ClauseCtx {
    names: Names,
    env: Env,
    literals: Vec<Literal>,
    reads_before_def: Vec<Location>,
    defined: BTreeSet<Location>,
}

impl ClauseCtx {
    fn new(env: Env) -> ClauseCtx {
        ClauseCtx {
            names: Names::new(),
            env,
            literals: Vec::new(),
            reads_before_def: Vec::new(),
            defined: BTreeSet::new(),
        }
    }

    fn note_read(&mut self, loc: Location) {
        if !self.defined.contains(&loc) && !self.reads_before_def.contains(&loc) {
            self.reads_before_def.push(loc);
        }
    }

    fn note_def(&mut self, loc: Location) {
        self.defined.insert(loc);
    }
}

struct Builder<'a> {
    cfg: &'a Cfg,
    harness: &'a HarnessMap,
    metrics: BTreeMap<String, MetricSpec>,
    predicates: Vec<Predicate>,
    fn_pred: BTreeMap<usize, PredId>,
    loop_pred: BTreeMap<(usize, usize), PredId>,
    /// Register/slot locations each loop predicate may write.
    loop_outs: BTreeMap<PredId, Vec<Location>>,
    opened_parts: BTreeSet<HarnessId>,
    aux_counter: BTreeMap<PredId, usize>,
}

fn loc_reg(op: &Operand) -> Location {
    match op {
        Operand::Register(r) => Location::Register(*r),
        _ => unreachable!("register operand expected"),
    }
}

fn imm_i64(op: &Operand) -> i64 {
    match op {
        Operand::Immediate(v) => *v as i64,
        _ => unreachable!("immediate expected"),
    }
}

impl Builder<'_> {
    /// Emits one instruction as a literal and applies its symbolic effect.
    fn apply_instr(&self, function: usize, index: usize, ctx: &mut ClauseCtx) {
        use Opcode::*;
        let instr = &self.cfg.program.functions[function].instructions[index];
        let role = self.harness.instr_roles[function][index];
        let atom = match role {
            InstrRole::Part(id) => CostAtom::Part { id, first: false },
            InstrRole::Tag(part) => CostAtom::Tag {
                part,
                opcode: instr.opcode,
            },
        };

        let (refs, defs_locs) = instr.ref_def();
        for r in &refs {
            ctx.note_read(*r);
        }

        let sym_of = |op: &Operand, env: &Env| -> SymVal {
            match op {
                Operand::Immediate(v) => SymVal::Num(Affine::konst(*v as i64)),
                Operand::Register(r) => env
                    .get(&Location::Register(*r))
                    .cloned()
                    .unwrap_or(SymVal::Opaque),
                _ => SymVal::Opaque,
            }
        };

        let mut args: Vec<String> = Vec::new();
        let mut defs: Vec<String> = Vec::new();
        match instr.opcode {
            Entsp | Retsp | Bu | Bl => {
                for op in &instr.operands {
                    match op {
                        Operand::Immediate(v) => args.push(format!("{v:#x}")),
                        Operand::Target(t) => args.push(t.clone()),
                        _ => {}
                    }
                }
            }
            Bf | Bt => {
                args.push(ctx.names.read(loc_reg(&instr.operands[0])));
                if let Some(t) = instr.target() {
                    args.push(t.to_string());
                }
            }
            Ldw => {
                let m = match &instr.operands[1] {
                    Operand::StackSlot(k) => ctx.names.read(Location::Slot(*k)),
                    Operand::Indexed(r) => {
                        format!("[{}]", ctx.names.read(Location::Register(*r)))
                    }
                    _ => unreachable!(),
                };
                let d = ctx.names.write(loc_reg(&instr.operands[0]));
                defs.push(d.clone());
                args.push(d);
                args.push(m);
            }
            Stw => {
                let v = ctx.names.read(loc_reg(&instr.operands[0]));
                let m = match &instr.operands[1] {
                    Operand::StackSlot(k) => {
                        let d = ctx.names.write(Location::Slot(*k));
                        defs.push(d.clone());
                        d
                    }
                    Operand::Indexed(r) => {
                        format!("[{}]", ctx.names.read(Location::Register(*r)))
                    }
                    _ => unreachable!(),
                };
                args.push(v);
                args.push(m);
            }
            _ => {
                let mut src_names: Vec<String> = Vec::new();
                for op in &instr.operands[1..] {
                    match op {
                        Operand::Register(r) => {
                            src_names.push(ctx.names.read(Location::Register(*r)))
                        }
                        Operand::Immediate(v) => src_names.push(format!("{v:#x}")),
                        _ => {}
                    }
                }
                let d = ctx.names.write(loc_reg(&instr.operands[0]));
                defs.push(d.clone());
                args.push(d);
                args.extend(src_names);
            }
        }
        let text = format!("{}({})", instr.opcode, args.join(","));

        match instr.opcode {
            Ldc => {
                ctx.env.insert(
                    loc_reg(&instr.operands[0]),
                    SymVal::Num(Affine::konst(imm_i64(&instr.operands[1]))),
                );
            }
            Add | Sub => {
                let a = sym_of(&instr.operands[1], &ctx.env);
                let b = sym_of(&instr.operands[2], &ctx.env);
                let v = match (a.as_num(), b.as_num()) {
                    (Some(x), Some(y)) if instr.opcode == Add => SymVal::Num(x.add(y)),
                    (Some(x), Some(y)) => SymVal::Num(x.sub(y)),
                    _ => SymVal::Opaque,
                };
                ctx.env.insert(loc_reg(&instr.operands[0]), v);
            }
            Lss => {
                let a = sym_of(&instr.operands[1], &ctx.env);
                let b = sym_of(&instr.operands[2], &ctx.env);
                // a < b  ⇔  b - a > 0
                let v = match (a.as_num(), b.as_num()) {
                    (Some(x), Some(y)) => SymVal::Flag {
                        expr: y.sub(x),
                        positive_means: true,
                    },
                    _ => SymVal::Opaque,
                };
                ctx.env.insert(loc_reg(&instr.operands[0]), v);
            }
            Eq => {
                // x == 0  ⇔  not (x > 0), for natural-valued counters
                let a = sym_of(&instr.operands[1], &ctx.env);
                let b = sym_of(&instr.operands[2], &ctx.env);
                let v = match (a.as_num(), b.as_num()) {
                    (Some(x), Some(z)) if z.coeffs.is_empty() && z.konst == 0 => SymVal::Flag {
                        expr: x.clone(),
                        positive_means: false,
                    },
                    _ => SymVal::Opaque,
                };
                ctx.env.insert(loc_reg(&instr.operands[0]), v);
            }
            Ldw => {
                let v = match &instr.operands[1] {
                    Operand::StackSlot(k) => ctx
                        .env
                        .get(&Location::Slot(*k))
                        .cloned()
                        .unwrap_or(SymVal::Opaque),
                    _ => SymVal::Opaque,
                };
                ctx.env.insert(loc_reg(&instr.operands[0]), v);
            }
            Stw => {
                if let Operand::StackSlot(k) = &instr.operands[1] {
                    let v = sym_of(&instr.operands[0], &ctx.env);
                    ctx.env.insert(Location::Slot(*k), v);
                }
            }
            Mul | And | Or | Xor | Shl | Shr | Not | Neg | Mkmsk | Leq => {
                ctx.env.insert(loc_reg(&instr.operands[0]), SymVal::Opaque);
            }
            Entsp | Retsp | Bl | Bu | Bf | Bt => {}
        }

        for d in &defs_locs {
            ctx.note_def(*d);
        }
        ctx.literals.push(Literal::Instr {
            function,
            index,
            opcode: instr.opcode,
            text,
            defs,
            atom,
        });
    }

    /// Emits a call literal to a function or loop predicate, updating names
    /// and clobbering the symbolic state the callee may touch.
    fn emit_call(&mut self, ctx: &mut ClauseCtx, callee: PredId) {
        let params = self.predicates[callee].params.clone();
        let mut args: Vec<String> = Vec::new();
        let mut param_values: Vec<Option<Affine>> = Vec::new();
        for loc in &params {
            ctx.note_read(*loc);
            args.push(ctx.names.read(*loc));
            param_values.push(ctx.env.get(loc).and_then(|v| v.as_num().cloned()));
        }
        let size_at_call = self.predicates[callee]
            .size_expr
            .clone()
            .and_then(|s| s.subst(&|p| param_values.get(p).cloned().flatten()));
        let out_locs: Vec<Location> = match self.predicates[callee].kind {
            PredKind::Function { .. } => vec![Location::Register(0)],
            PredKind::Loop { .. } => self.loop_outs[&callee].clone(),
            PredKind::Guard { .. } => unreachable!("guard calls are emitted by dispatch"),
        };
        for loc in &out_locs {
            args.push(ctx.names.write(*loc));
            ctx.note_def(*loc);
        }
        match self.predicates[callee].kind {
            // a function may clobber any register, but frames are private
            PredKind::Function { .. } => {
                let keys: Vec<Location> = ctx.env.keys().copied().collect();
                for loc in keys {
                    if matches!(loc, Location::Register(_)) {
                        ctx.env.insert(loc, SymVal::Opaque);
                    }
                }
            }
            // a loop shares our frame but its effect is exactly its def set
            PredKind::Loop { .. } => {
                for loc in &out_locs {
                    ctx.env.insert(*loc, SymVal::Opaque);
                }
            }
            PredKind::Guard { .. } => unreachable!(),
        }
        let text = format!("{}({})", self.predicates[callee].name, args.join(","));
        ctx.literals.push(Literal::Call {
            callee,
            text,
            size_at_call,
        });
    }

    fn mark_part_firsts(&mut self, literals: &mut [Literal]) {
        for lit in literals {
            if let Literal::Instr {
                atom: CostAtom::Part { id, first },
                ..
            } = lit
            {
                if self.opened_parts.insert(*id) {
                    *first = true;
                }
            }
        }
    }
}

/// Transforms the CFG into the Horn-clause system.
///
/// `metrics` names the size-carrying argument per function; absent entries
/// default to the integer value of `r0`.
pub fn to_hcir(
    cfg: &Cfg,
    harness: &HarnessMap,
    metrics: &BTreeMap<String, MetricSpec>,
) -> Result<ClauseSystem, HcirError> {
    let mut b = Builder {
        cfg,
        harness,
        metrics: metrics.clone(),
        predicates: Vec::new(),
        fn_pred: BTreeMap::new(),
        loop_pred: BTreeMap::new(),
        loop_outs: BTreeMap::new(),
        opened_parts: BTreeSet::new(),
        aux_counter: BTreeMap::new(),
    };

    // function signatures first, so calls resolve in any build order
    let analyses: Vec<FnAnalysis> = (0..cfg.program.functions.len())
        .map(|fi| analyze_function(cfg, fi))
        .collect::<Result<_, _>>()?;
    for (fi, func) in cfg.program.functions.iter().enumerate() {
        let fa = &analyses[fi];
        let scope: BTreeSet<usize> = (0..fa.graph.n).collect();
        let args: Vec<u8> = read_before_def(cfg, &fa.ids, &fa.graph, 0, &scope)
            .into_iter()
            .filter_map(|l| match l {
                Location::Register(r) => Some(r),
                Location::Slot(_) => None,
            })
            .collect::<BTreeSet<u8>>()
            .into_iter()
            .collect();
        let spec = b.metrics.get(&func.name).copied().unwrap_or_default();
        let size_expr = args
            .iter()
            .position(|r| *r == spec.register)
            .map(Affine::param);
        let params: Vec<Location> = args.iter().map(|r| Location::Register(*r)).collect();
        b.fn_pred.insert(fi, b.predicates.len());
        b.predicates.push(Predicate {
            name: func.name.clone(),
            kind: PredKind::Function { func: fi },
            head_arity: params.len() + 1,
            params,
            size_expr,
            dispatch_guard: None,
            clauses: Vec::new(),
        });
    }

    for fi in 0..cfg.program.functions.len() {
        let fa = &analyses[fi];
        // innermost loops first so enclosing bodies can call them
        let mut loop_order: Vec<usize> = (0..fa.loops.len()).collect();
        loop_order.sort_by_key(|&li| fa.loops[li].body.len());
        for li in loop_order {
            build_loop_pred(&mut b, fi, fa, li)?;
        }
        build_function_pred(&mut b, fi, fa)?;
    }

    let entry_fi = cfg
        .program
        .functions
        .iter()
        .position(|f| f.name == cfg.program.entry)
        .expect("entry function exists");
    Ok(ClauseSystem {
        entry: b.fn_pred[&entry_fi],
        predicates: b.predicates,
        metrics: b.metrics,
    })
}

fn param_env(params: &[Location]) -> Env {
    params
        .iter()
        .enumerate()
        .map(|(i, loc)| (*loc, SymVal::Num(Affine::param(i))))
        .collect()
}

fn build_loop_pred(
    b: &mut Builder<'_>,
    func: usize,
    fa: &FnAnalysis,
    li: usize,
) -> Result<(), HcirError> {
    let l = fa.loops[li].clone();
    let params = read_before_def(b.cfg, &fa.ids, &fa.graph, l.header, &l.body);
    let loops_before = b.loop_pred.keys().filter(|(f, _)| *f == func).count();
    let fn_name = &b.cfg.program.functions[func].name;
    let name = if loops_before == 0 {
        format!("{fn_name}_loop")
    } else {
        format!("{fn_name}_loop{}", loops_before + 1)
    };

    // size variable from the header's exit test: symbolically execute the
    // header alone and read the condition flag at its branch
    let mut probe = ClauseCtx::new(param_env(&params));
    let header_block_id = fa.ids[l.header];
    let header = b.cfg.block(header_block_id);
    for off in 0..header.instructions.len() {
        b.apply_instr(func, header.start + off, &mut probe);
    }
    b.opened_parts.retain(|id| id.block != header_block_id);
    let size_expr = match header.terminator {
        Terminator::Cond { on_true, on_false } => {
            let cond_reg = header
                .instructions
                .last()
                .map(|i| loc_reg(&i.operands[0]))
                .expect("conditional block ends with a branch");
            let t_in = fa.local.get(&on_true).is_some_and(|t| l.body.contains(t));
            let f_in = fa.local.get(&on_false).is_some_and(|f| l.body.contains(f));
            let stay_is_true = match (t_in, f_in) {
                (true, false) => Some(true),
                (false, true) => Some(false),
                _ => None, // the header's branch is not the loop's exit test
            };
            match (probe.env.get(&cond_reg), stay_is_true) {
                (
                    Some(SymVal::Flag {
                        expr,
                        positive_means,
                    }),
                    Some(stay),
                ) if *positive_means == stay => Some(expr.clone()),
                _ => None,
            }
        }
        _ => None,
    };
    let size_expr = size_expr.ok_or_else(|| {
        HcirError::NonAffine(format!("cannot derive a size variable for loop '{name}'"))
    })?;

    // locations the loop may write, for call-site outputs
    let mut written: BTreeSet<Location> = BTreeSet::new();
    for &lb in &l.body {
        for instr in &b.cfg.block(fa.ids[lb]).instructions {
            written.extend(instr.ref_def().1);
        }
    }
    let outs: Vec<Location> = written.into_iter().collect();

    let pred_id = b.predicates.len();
    b.loop_pred.insert((func, l.header), pred_id);
    b.loop_outs.insert(pred_id, outs.clone());
    b.predicates.push(Predicate {
        name,
        kind: PredKind::Loop {
            header: header_block_id,
        },
        head_arity: params.len() + outs.len(),
        params: params.clone(),
        size_expr: Some(size_expr),
        dispatch_guard: None,
        clauses: Vec::new(),
    });

    let mut ctx = ClauseCtx::new(param_env(&params));
    let head_params: Vec<String> = params.iter().map(|loc| ctx.names.read(*loc)).collect();
    emit_chain(b, func, fa, pred_id, Some(li), l.header, None, true, &mut ctx)?;
    let mut literals = ctx.literals;
    b.mark_part_firsts(&mut literals);
    let out_names: Vec<String> = outs
        .iter()
        .map(|loc| ctx.names.current(*loc).unwrap_or_else(|| Names::base(*loc)))
        .collect();
    let head_text = format!(
        "{}({})",
        b.predicates[pred_id].name,
        head_params
            .into_iter()
            .chain(out_names)
            .collect::<Vec<_>>()
            .join(",")
    );
    b.predicates[pred_id].clauses.push(Clause {
        guard: None,
        head_text,
        literals,
    });
    Ok(())
}

fn build_function_pred(b: &mut Builder<'_>, func: usize, fa: &FnAnalysis) -> Result<(), HcirError> {
    let pred_id = b.fn_pred[&func];
    let params = b.predicates[pred_id].params.clone();
    let mut ctx = ClauseCtx::new(param_env(&params));
    let head_params: Vec<String> = params.iter().map(|loc| ctx.names.read(*loc)).collect();
    emit_chain(b, func, fa, pred_id, None, 0, None, false, &mut ctx)?;
    let mut literals = ctx.literals;
    b.mark_part_firsts(&mut literals);
    let ret = ctx.names.write(Location::Register(0));
    let head_text = format!(
        "{}({})",
        b.predicates[pred_id].name,
        head_params
            .into_iter()
            .chain(std::iter::once(ret))
            .collect::<Vec<_>>()
            .join(",")
    );
    b.predicates[pred_id].clauses.push(Clause {
        guard: None,
        head_text,
        literals,
    });
    Ok(())
}

/// Emits literals starting at local block `start` until the clause closes
/// (return, tail call, or loop exit) or `stop_at` is reached.
#[allow(clippy::too_many_arguments)]
fn emit_chain(
    b: &mut Builder<'_>,
    func: usize,
    fa: &FnAnalysis,
    region: PredId,
    region_loop: Option<usize>,
    start: usize,
    stop_at: Option<usize>,
    mut at_region_header: bool,
    ctx: &mut ClauseCtx,
) -> Result<(), HcirError> {
    let mut current = start;
    loop {
        if Some(current) == stop_at {
            return Ok(());
        }
        if !at_region_header {
            // the region's own header again: tail call
            if let Some(rl) = region_loop {
                if fa.loops[rl].header == current {
                    b.emit_call(ctx, region);
                    return Ok(());
                }
            }
            // some other loop's header: call it, continue at its exit
            if let Some(li) = fa.loop_of[current].filter(|li| fa.loops[*li].header == current) {
                let callee = b.loop_pred[&(func, current)];
                b.emit_call(ctx, callee);
                current = fa.loops[li].exit_target;
                continue;
            }
        }
        at_region_header = false;

        let block_id = fa.ids[current];
        let (block_start, block_len, terminator) = {
            let blk = b.cfg.block(block_id);
            (blk.start, blk.instructions.len(), blk.terminator)
        };
        for off in 0..block_len {
            let index = block_start + off;
            b.apply_instr(func, index, ctx);
            let instr = &b.cfg.program.functions[func].instructions[index];
            if instr.opcode == Opcode::Bl {
                let callee_name = instr.target().unwrap();
                let callee_fi = b
                    .cfg
                    .program
                    .functions
                    .iter()
                    .position(|f| f.name == callee_name)
                    .expect("targets resolved at parse time");
                let callee = b.fn_pred[&callee_fi];
                b.emit_call(ctx, callee);
            }
        }

        match terminator {
            Terminator::Return => return Ok(()),
            Terminator::Jump(t) | Terminator::FallThrough(t) => {
                current = fa.local[&t];
            }
            Terminator::Cond { on_true, on_false } => {
                let t_local = fa.local[&on_true];
                let f_local = fa.local[&on_false];
                let cond_reg = {
                    let blk = b.cfg.block(block_id);
                    loc_reg(&blk.instructions.last().unwrap().operands[0])
                };
                let dispatch_guard = match ctx.env.get(&cond_reg) {
                    Some(SymVal::Flag {
                        expr,
                        positive_means,
                    }) => Some(GuardExpr {
                        expr: expr.clone(),
                        positive_means: *positive_means,
                    }),
                    _ => None,
                };

                let leaves_loop = |x: usize| region_loop.is_some_and(|rl| !fa.loops[rl].body.contains(&x));
                let is_loop_exit = leaves_loop(t_local) || leaves_loop(f_local);
                let join = if is_loop_exit {
                    None
                } else {
                    Some(join_point(&fa.pdom, t_local, f_local))
                };

                let count = b.aux_counter.entry(region).or_insert(0);
                *count += 1;
                let name = if *count == 1 {
                    format!("{}_aux", b.predicates[region].name)
                } else {
                    format!("{}_aux{}", b.predicates[region].name, *count)
                };
                let aux_id = b.predicates.len();
                b.predicates.push(Predicate {
                    name,
                    kind: PredKind::Guard { region },
                    head_arity: 0,
                    params: Vec::new(),
                    size_expr: None,
                    dispatch_guard,
                    clauses: Vec::new(),
                });

                let mut arms: Vec<(bool, ClauseCtx)> = Vec::new();
                for (value, arm_start) in [(true, t_local), (false, f_local)] {
                    let mut arm_ctx = ClauseCtx::new(ctx.env.clone());
                    if !leaves_loop(arm_start) {
                        emit_chain(
                            b,
                            func,
                            fa,
                            region,
                            region_loop,
                            arm_start,
                            join.filter(|j| *j < fa.graph.n),
                            false,
                            &mut arm_ctx,
                        )?;
                    }
                    arms.push((value, arm_ctx));
                }

                // aux head: guard value, then reads, then written registers
                let mut read_locs: Vec<Location> = Vec::new();
                let mut out_locs: BTreeSet<Location> = BTreeSet::new();
                for (_, arm) in &arms {
                    for loc in &arm.reads_before_def {
                        if !read_locs.contains(loc) {
                            read_locs.push(*loc);
                        }
                    }
                    out_locs.extend(arm.defined.iter().filter(|l| matches!(l, Location::Register(_))));
                }
                for (value, arm) in arms {
                    let mut head_args: Vec<String> = vec![format!("{}", value as u8)];
                    for loc in &read_locs {
                        head_args.push(Names::base(*loc));
                    }
                    for loc in &out_locs {
                        head_args
                            .push(arm.names.current(*loc).unwrap_or_else(|| Names::base(*loc)));
                    }
                    let mut literals = arm.literals;
                    b.mark_part_firsts(&mut literals);
                    let head_text =
                        format!("{}({})", b.predicates[aux_id].name, head_args.join(","));
                    b.predicates[aux_id].clauses.push(Clause {
                        guard: Some(value),
                        head_text,
                        literals,
                    });
                }
                b.predicates[aux_id].head_arity = 1 + read_locs.len() + out_locs.len();
                b.predicates[aux_id].params = read_locs;

                // the dispatch call in the parent clause
                let mut call_args: Vec<String> = vec![ctx.names.read(cond_reg)];
                for loc in b.predicates[aux_id].params.clone() {
                    ctx.note_read(loc);
                    call_args.push(ctx.names.read(loc));
                }
                for loc in &out_locs {
                    call_args.push(ctx.names.write(*loc));
                    ctx.note_def(*loc);
                    ctx.env.insert(*loc, SymVal::Opaque);
                }
                let text = format!("{}({})", b.predicates[aux_id].name, call_args.join(","));
                ctx.literals.push(Literal::Call {
                    callee: aux_id,
                    text,
                    size_at_call: None,
                });

                match join {
                    None => return Ok(()),
                    Some(j) if j >= fa.graph.n => return Ok(()),
                    Some(j) => {
                        current = j;
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// profile replay
// ---------------------------------------------------------------------------

/// Evaluates the clause system against a recorded run: every instruction
/// literal must match the next instruction event, guard dispatches consume
/// branch events, and the summed energies must reproduce the trace total.
pub fn eval_with_profile(system: &ClauseSystem, trace: &EnergyTrace) -> Result<Energy, HcirError> {
    let events = trace
        .events
        .as_ref()
        .ok_or_else(|| HcirError::ReplayMismatch("trace has no recorded events".into()))?;
    let mut cursor = 0usize;
    let mut total = Energy::ZERO;
    let entry = &system.predicates[system.entry];
    walk_clause(system, &entry.clauses[0], events, &mut cursor, &mut total, 0)?;
    if cursor != events.len() {
        return Err(HcirError::ReplayMismatch(format!(
            "{} trailing events not covered by the equations",
            events.len() - cursor
        )));
    }
    if total != trace.total {
        return Err(HcirError::ReplayMismatch(format!(
            "replayed total {total} != trace total {}",
            trace.total
        )));
    }
    Ok(total)
}

fn walk_clause(
    system: &ClauseSystem,
    clause: &Clause,
    events: &[TraceEvent],
    cursor: &mut usize,
    total: &mut Energy,
    depth: usize,
) -> Result<(), HcirError> {
    if depth > 200_000 {
        return Err(HcirError::ReplayMismatch("replay recursion too deep".into()));
    }
    for lit in &clause.literals {
        match lit {
            Literal::Instr {
                function, index, ..
            } => match events.get(*cursor) {
                Some(TraceEvent::Instr {
                    function: ef,
                    index: ei,
                    energy,
                }) if ef == function && ei == index => {
                    *total += *energy;
                    *cursor += 1;
                }
                other => {
                    return Err(HcirError::ReplayMismatch(format!(
                        "expected instruction f{function}:{index}, saw {other:?}"
                    )))
                }
            },
            Literal::Call { callee, .. } => {
                let pred = &system.predicates[*callee];
                if matches!(pred.kind, PredKind::Guard { .. }) {
                    let value = match events.get(*cursor) {
                        Some(TraceEvent::Branch { value }) => *value,
                        other => {
                            return Err(HcirError::ReplayMismatch(format!(
                                "expected a branch event for {}, saw {other:?}",
                                pred.name
                            )))
                        }
                    };
                    *cursor += 1;
                    let chosen = pred
                        .clauses
                        .iter()
                        .find(|c| c.guard == Some(value))
                        .ok_or_else(|| {
                            HcirError::ReplayMismatch(format!(
                                "{} lacks a guard-{} clause",
                                pred.name, value as u8
                            ))
                        })?;
                    walk_clause(system, chosen, events, cursor, total, depth + 1)?;
                } else {
                    walk_clause(system, &pred.clauses[0], events, cursor, total, depth + 1)?;
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// cost equations
// ---------------------------------------------------------------------------

/// Per-part bound values plus tag costs, feeding the equation constants.
#[derive(Debug, Clone)]
pub struct BlockCosts {
    pub part_values: BTreeMap<HarnessId, Energy>,
    pub tag_costs: BTreeMap<Opcode, Energy>,
}

impl BlockCosts {
    pub fn from_model_tags(
        part_values: BTreeMap<HarnessId, Energy>,
        model: &EnergyModelParams,
    ) -> BlockCosts {
        let tag_costs = [Opcode::Entsp, Opcode::Retsp, Opcode::Bl]
            .into_iter()
            .map(|op| (op, model.base_cost(op)))
            .collect();
        BlockCosts {
            part_values,
            tag_costs,
        }
    }

    /// Unit costs: 1 pJ charged on each block's first non-empty part, zero
    /// tag costs. Used for equation-structure checks.
    pub fn unit(harness: &HarnessMap) -> BlockCosts {
        let mut part_values = BTreeMap::new();
        let mut charged: BTreeSet<BlockId> = BTreeSet::new();
        for (id, part) in &harness.parts {
            if part.instructions.is_empty() {
                continue;
            }
            let value = if charged.insert(id.block) {
                Energy(1000)
            } else {
                Energy(0)
            };
            part_values.insert(*id, value);
        }
        BlockCosts {
            part_values,
            tag_costs: BTreeMap::new(),
        }
    }
}

/// One case of a predicate's cost equation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseEq {
    pub constant: Energy,
    pub calls: Vec<CallTerm>,
}

/// A call term: the callee invoked with size `alpha * n + beta`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallTerm {
    pub callee: String,
    pub alpha: i64,
    pub beta: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredEquations {
    /// No structural guard: one always-on case.
    Simple(CaseEq),
    /// Recursive for `n >= theta`, base below.
    Guarded {
        theta: u64,
        rec: CaseEq,
        base: CaseEq,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEquationSystem {
    pub direction: Direction,
    pub entry: String,
    pub metric: MetricSpec,
    pub preds: BTreeMap<String, PredEquations>,
}

struct RawCase {
    constant: Energy,
    calls: Vec<(PredId, Option<Affine>)>,
    guard_call: Option<PredId>,
}

fn raw_case(
    system: &ClauseSystem,
    clause: &Clause,
    costs: &BlockCosts,
) -> Result<RawCase, HcirError> {
    let mut constant = Energy::ZERO;
    let mut calls = Vec::new();
    let mut guard_call = None;
    for lit in &clause.literals {
        match lit {
            Literal::Instr { atom, .. } => match atom {
                CostAtom::Part { id, first } => {
                    if *first {
                        let v = costs
                            .part_values
                            .get(id)
                            .copied()
                            .ok_or_else(|| HcirError::MissingBound(format!("{id:?}")))?;
                        constant += v;
                    }
                }
                CostAtom::Tag { opcode, .. } => {
                    constant += costs.tag_costs.get(opcode).copied().unwrap_or(Energy::ZERO);
                }
            },
            Literal::Call {
                callee,
                size_at_call,
                ..
            } => {
                if matches!(system.predicates[*callee].kind, PredKind::Guard { .. }) {
                    if guard_call.is_some() {
                        return Err(HcirError::UnsupportedShape(
                            "clause dispatches more than one conditional".into(),
                        ));
                    }
                    guard_call = Some(*callee);
                } else {
                    calls.push((*callee, size_at_call.clone()));
                }
            }
        }
    }
    Ok(RawCase {
        constant,
        calls,
        guard_call,
    })
}

/// Sets up the cost equation system for one approximation direction.
///
/// Requires a bound for every block part reached by the clause system and
/// affine size relations on every call; data-dependent conditionals collapse
/// to the extremal arm for the direction.
pub fn setup_cost_equations(
    system: &ClauseSystem,
    costs: &BlockCosts,
    direction: Direction,
) -> Result<CostEquationSystem, HcirError> {
    enum Resolved {
        Data(Energy),
        Structural {
            guard: GuardExpr,
            true_case: RawCase,
            false_case: RawCase,
        },
    }
    let mut resolved: BTreeMap<PredId, Resolved> = BTreeMap::new();
    for (pid, pred) in system.predicates.iter().enumerate().rev() {
        if !matches!(pred.kind, PredKind::Guard { .. }) {
            continue;
        }
        let mut true_case = None;
        let mut false_case = None;
        for clause in &pred.clauses {
            let mut case = raw_case(system, clause, costs)?;
            if let Some(inner) = case.guard_call.take() {
                match resolved.get(&inner) {
                    Some(Resolved::Data(v)) => case.constant += *v,
                    _ => {
                        return Err(HcirError::UnsupportedShape(format!(
                            "conditional '{}' nests a recursive conditional",
                            system.predicates[inner].name
                        )))
                    }
                }
            }
            match clause.guard {
                Some(true) => true_case = Some(case),
                Some(false) => false_case = Some(case),
                None => unreachable!("guard clauses are tagged"),
            }
        }
        let t = true_case.ok_or_else(|| {
            HcirError::UnsupportedShape(format!("{} lacks a guard-1 clause", pred.name))
        })?;
        let f = false_case.ok_or_else(|| {
            HcirError::UnsupportedShape(format!("{} lacks a guard-0 clause", pred.name))
        })?;
        if t.calls.is_empty() && f.calls.is_empty() {
            let v = match direction {
                Direction::Upper => t.constant.max(f.constant),
                Direction::Lower => t.constant.min(f.constant),
            };
            resolved.insert(pid, Resolved::Data(v));
        } else {
            let guard = pred.dispatch_guard.clone().ok_or_else(|| {
                HcirError::NonAffine(format!(
                    "recursive conditional '{}' has a data-dependent guard",
                    pred.name
                ))
            })?;
            resolved.insert(
                pid,
                Resolved::Structural {
                    guard,
                    true_case: t,
                    false_case: f,
                },
            );
        }
    }

    let mut preds: BTreeMap<String, PredEquations> = BTreeMap::new();
    for (pid, pred) in system.predicates.iter().enumerate() {
        if matches!(pred.kind, PredKind::Guard { .. }) || pred.clauses.is_empty() {
            continue;
        }
        let main_case = raw_case(system, &pred.clauses[0], costs)?;
        let to_terms = |case: &RawCase, extra: Option<&RawCase>| -> Result<CaseEq, HcirError> {
            let mut constant = case.constant;
            let mut all_calls: Vec<(PredId, Option<Affine>)> = case.calls.clone();
            if let Some(e) = extra {
                constant += e.constant;
                all_calls.extend(e.calls.iter().cloned());
            }
            let mut terms = Vec::new();
            for (callee, size) in all_calls {
                if let Some(Resolved::Data(v)) = resolved.get(&callee) {
                    constant += *v;
                    continue;
                }
                let size_expr = pred.size_expr.as_ref().ok_or_else(|| {
                    HcirError::NonAffine(format!(
                        "predicate '{}' calls '{}' but has no size variable",
                        pred.name, system.predicates[callee].name
                    ))
                })?;
                let size = size.ok_or_else(|| {
                    HcirError::NonAffine(format!(
                        "call to '{}' from '{}' has no trackable size",
                        system.predicates[callee].name, pred.name
                    ))
                })?;
                let (alpha, beta) = size.express_in(size_expr).ok_or_else(|| {
                    HcirError::NonAffine(format!(
                        "size of call to '{}' is not affine in '{}'",
                        system.predicates[callee].name, pred.name
                    ))
                })?;
                terms.push(CallTerm {
                    callee: system.predicates[callee].name.clone(),
                    alpha,
                    beta,
                });
            }
            Ok(CaseEq {
                constant,
                calls: terms,
            })
        };

        let equations = match main_case.guard_call {
            None => PredEquations::Simple(to_terms(&main_case, None)?),
            Some(g) => match &resolved[&g] {
                Resolved::Data(v) => {
                    let mut eq = to_terms(&main_case, None)?;
                    eq.constant += *v;
                    PredEquations::Simple(eq)
                }
                Resolved::Structural {
                    guard,
                    true_case,
                    false_case,
                } => {
                    let self_calls = |c: &RawCase| c.calls.iter().any(|(id, _)| *id == pid);
                    let (rec_arm, base_arm, rec_value) = if self_calls(true_case) {
                        (true_case, false_case, true)
                    } else if self_calls(false_case) {
                        (false_case, true_case, false)
                    } else {
                        return Err(HcirError::UnsupportedShape(format!(
                            "conditional '{}' calls predicates but never recurses",
                            system.predicates[g].name
                        )));
                    };
                    // the recursive arm is active when its guard value
                    // holds: (expr > 0) == positive_means == rec_value.
                    // When the polarities disagree, recursion runs on
                    // expr <= 0, which over the integers is (1 - expr) > 0.
                    let rec_expr = if guard.positive_means == rec_value {
                        guard.expr.clone()
                    } else {
                        Affine::konst(1).sub(&guard.expr)
                    };
                    let size_expr = pred.size_expr.as_ref().ok_or_else(|| {
                        HcirError::NonAffine(format!(
                            "recursive predicate '{}' has no size variable",
                            pred.name
                        ))
                    })?;
                    let (alpha, beta) = rec_expr.express_in(size_expr).ok_or_else(|| {
                        HcirError::NonAffine(format!(
                            "guard of '{}' is not affine in its size variable",
                            pred.name
                        ))
                    })?;
                    if alpha != 1 {
                        return Err(HcirError::NonAffine(format!(
                            "guard of '{}' scales the size variable",
                            pred.name
                        )));
                    }
                    // rec active ⇔ n + beta > 0 ⇔ n >= 1 - beta
                    let theta = (1 - beta).max(0) as u64;
                    PredEquations::Guarded {
                        theta,
                        rec: to_terms(&main_case, Some(rec_arm))?,
                        base: to_terms(&main_case, Some(base_arm))?,
                    }
                }
            },
        };
        preds.insert(pred.name.clone(), equations);
    }

    let entry_name = system.predicates[system.entry].name.clone();
    let metric = system
        .metrics
        .get(&entry_name)
        .copied()
        .unwrap_or_default();
    Ok(CostEquationSystem {
        direction,
        entry: entry_name,
        metric,
        preds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::{extract_blocks, harness_program};
    use crate::isa::{parse_program, FACT};
    use crate::simkernel::{run_program_profile, RunOptions};

    pub(crate) const SUM_LOOP: &str = "\
<sum>:
01: entsp 0x1
02: add r1, r0, 0x0
03: ldc r2, 0x0
04: eq r3, r1, 0x0
05: bt r3, <10>
06: sub r1, r1, 0x1
07: ldw r4, [r1]
08: add r2, r2, r4
09: bu <04>
10: add r0, r2, 0x0
11: retsp 0x1
";

    fn build(text: &str) -> (Cfg, HarnessMap, ClauseSystem) {
        let cfg = extract_blocks(&parse_program(text).unwrap());
        let harness = harness_program(&cfg);
        let system = to_hcir(&cfg, &harness, &BTreeMap::new()).unwrap();
        (cfg, harness, system)
    }

    #[test]
    fn fact_yields_fact2_and_fact_aux4() {
        let (_, _, system) = build(FACT);
        let fact = system.by_name("fact").unwrap();
        assert_eq!(fact.head_arity, 2, "fact/2");
        assert_eq!(fact.clauses.len(), 1);
        let aux = system.by_name("fact_aux").unwrap();
        assert_eq!(aux.head_arity, 4, "fact_aux/4");
        let guards: Vec<Option<bool>> = aux.clauses.iter().map(|c| c.guard).collect();
        assert_eq!(guards, vec![Some(true), Some(false)]);
        let rendered = system.render();
        assert!(rendered.contains("fact_aux(1,Sp0x1,"), "{rendered}");
        assert!(rendered.contains("fact_aux(0,Sp0x1,"), "{rendered}");
        assert!(rendered.contains("mkmsk("), "{rendered}");
        assert!(rendered.contains("bl(fact)"), "{rendered}");
    }

    #[test]
    fn straight_line_gives_single_clause_no_aux() {
        let (_, _, system) = build("<f>:\n01: add r0, r0, 0x1\n02: retsp 0x0\n");
        assert_eq!(system.predicates.len(), 1);
        assert_eq!(system.predicates[0].clauses.len(), 1);
    }

    #[test]
    fn diamond_gives_one_aux_with_two_clauses_and_no_recursion() {
        let (_, _, system) = build(
            "<f>:\n\
             01: lss r2, r0, r1\n\
             02: bf r2, <05>\n\
             03: add r3, r0, 0x1\n\
             04: bu <06>\n\
             05: add r3, r1, 0x2\n\
             06: add r0, r3, 0x0\n\
             07: retsp 0x0\n",
        );
        let aux = system.by_name("f_aux").unwrap();
        assert_eq!(aux.clauses.len(), 2);
        for clause in &aux.clauses {
            assert!(clause
                .literals
                .iter()
                .all(|l| matches!(l, Literal::Instr { .. })));
        }
        // the join continues in the parent clause after the dispatch
        let f = system.by_name("f").unwrap();
        let texts: Vec<&str> = f.clauses[0]
            .literals
            .iter()
            .map(|l| match l {
                Literal::Instr { text, .. } => text.as_str(),
                Literal::Call { text, .. } => text.as_str(),
            })
            .collect();
        let aux_pos = texts.iter().position(|t| t.starts_with("f_aux(")).unwrap();
        assert!(
            texts[aux_pos + 1].starts_with("add("),
            "join continues after the dispatch: {texts:?}"
        );
    }

    #[test]
    fn loop_program_gets_a_tail_recursive_loop_predicate() {
        let (_, _, system) = build(SUM_LOOP);
        let lp = system.by_name("sum_loop").expect("loop predicate");
        assert!(matches!(lp.kind, PredKind::Loop { .. }));
        let aux = system.by_name("sum_loop_aux").unwrap();
        let rec_clause = aux.clauses.iter().find(|c| c.guard == Some(false)).unwrap();
        let tail = rec_clause.literals.last().unwrap();
        match tail {
            Literal::Call { callee, .. } => {
                assert_eq!(system.predicates[*callee].name, "sum_loop")
            }
            other => panic!("expected tail call, got {other:?}"),
        }
    }

    /// SSA: no name is bound twice within a clause.
    #[test]
    fn ssa_no_duplicate_defs_per_clause() {
        for text in [FACT, SUM_LOOP] {
            let (_, _, system) = build(text);
            for pred in &system.predicates {
                for clause in &pred.clauses {
                    let mut seen: BTreeSet<&str> = BTreeSet::new();
                    for lit in &clause.literals {
                        if let Literal::Instr { defs, .. } = lit {
                            for d in defs {
                                assert!(
                                    seen.insert(d.as_str()),
                                    "{}: name {d} bound twice",
                                    pred.name
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    /// Coverage: every non-empty harness part carries its bound exactly once.
    #[test]
    fn every_part_appears_exactly_once() {
        for text in [FACT, SUM_LOOP] {
            let (_, harness, system) = build(text);
            let mut firsts: BTreeMap<HarnessId, usize> = BTreeMap::new();
            let mut seen_instrs = 0usize;
            for pred in &system.predicates {
                for clause in &pred.clauses {
                    for lit in &clause.literals {
                        if let Literal::Instr { atom, .. } = lit {
                            seen_instrs += 1;
                            if let CostAtom::Part { id, first: true } = atom {
                                *firsts.entry(*id).or_insert(0) += 1;
                            }
                        }
                    }
                }
            }
            for (id, part) in &harness.parts {
                if !part.instructions.is_empty() {
                    assert_eq!(firsts.get(id), Some(&1), "part {id:?} coverage");
                }
            }
            let total_instrs: usize = harness
                .parts
                .values()
                .map(|p| p.instructions.len() + p.tags.len())
                .sum();
            assert_eq!(seen_instrs, total_instrs, "every instruction is a literal");
        }
    }

    #[test]
    fn unit_cost_fact_equations_match_the_displayed_form() {
        let (_, harness, system) = build(FACT);
        let costs = BlockCosts::unit(&harness);
        let eqs = setup_cost_equations(&system, &costs, Direction::Upper).unwrap();
        match &eqs.preds["fact"] {
            PredEquations::Guarded { theta, rec, base } => {
                assert_eq!(*theta, 1);
                // rec: B1 + B2 = 2; base: B1 + B3 = 2
                assert_eq!(rec.constant, Energy(2000));
                assert_eq!(base.constant, Energy(2000));
                assert_eq!(
                    rec.calls,
                    vec![CallTerm {
                        callee: "fact".into(),
                        alpha: 1,
                        beta: -1
                    }]
                );
                assert!(base.calls.is_empty());
            }
            other => panic!("expected guarded equations, got {other:?}"),
        }
    }

    #[test]
    fn sum_loop_equations() {
        let (_, harness, system) = build(SUM_LOOP);
        let costs = BlockCosts::unit(&harness);
        let eqs = setup_cost_equations(&system, &costs, Direction::Upper).unwrap();
        match &eqs.preds["sum"] {
            PredEquations::Simple(case) => {
                assert_eq!(
                    case.calls,
                    vec![CallTerm {
                        callee: "sum_loop".into(),
                        alpha: 1,
                        beta: 0
                    }]
                );
            }
            other => panic!("expected simple equations for sum, got {other:?}"),
        }
        match &eqs.preds["sum_loop"] {
            PredEquations::Guarded { theta, rec, .. } => {
                assert_eq!(*theta, 1);
                assert_eq!(
                    rec.calls,
                    vec![CallTerm {
                        callee: "sum_loop".into(),
                        alpha: 1,
                        beta: -1
                    }]
                );
            }
            other => panic!("expected guarded equations for the loop, got {other:?}"),
        }
    }

    #[test]
    fn data_guard_collapses_by_direction() {
        // if (r0 < r1) expensive(mul) else nothing, then return: the guard is
        // data-dependent so upper takes the mul arm, lower the empty arm
        let text = "\
<g>:
01: lss r2, r0, r1
02: bf r2, <05>
03: mul r3, r0, r1
04: bu <05>
05: add r0, r0, 0x0
06: retsp 0x0
";
        let (_, harness, system) = build(text);
        let costs = BlockCosts::unit(&harness);
        let upper = setup_cost_equations(&system, &costs, Direction::Upper).unwrap();
        let lower = setup_cost_equations(&system, &costs, Direction::Lower).unwrap();
        let constant = |eqs: &CostEquationSystem| match &eqs.preds["g"] {
            PredEquations::Simple(c) => c.constant,
            other => panic!("expected simple, got {other:?}"),
        };
        assert!(constant(&upper) > constant(&lower));
    }

    #[test]
    fn guard_exhaustiveness() {
        for text in [FACT, SUM_LOOP] {
            let (_, _, system) = build(text);
            for pred in &system.predicates {
                if matches!(pred.kind, PredKind::Guard { .. }) {
                    let g: BTreeSet<Option<bool>> =
                        pred.clauses.iter().map(|c| c.guard).collect();
                    assert_eq!(g, BTreeSet::from([Some(true), Some(false)]));
                }
            }
        }
    }

    #[test]
    fn replay_reproduces_fact_profile_totals() {
        let (cfg, harness, system) = build(FACT);
        let model = EnergyModelParams::default_model();
        for n in 0..=6 {
            let trace = run_program_profile(
                &cfg,
                &harness,
                &[n],
                &[],
                &model,
                &RunOptions {
                    record_events: true,
                    ..RunOptions::default()
                },
            )
            .unwrap();
            let replayed = eval_with_profile(&system, &trace).unwrap();
            assert_eq!(replayed, trace.total, "fact({n})");
        }
    }

    #[test]
    fn replay_reproduces_loop_profile_totals() {
        let (cfg, harness, system) = build(SUM_LOOP);
        let model = EnergyModelParams::default_model();
        for n in 0..=8u32 {
            let image: Vec<u32> = (0..n).map(|i| i * 3 + 1).collect();
            let trace = run_program_profile(
                &cfg,
                &harness,
                &[n],
                &image,
                &model,
                &RunOptions {
                    record_events: true,
                    ..RunOptions::default()
                },
            )
            .unwrap();
            let replayed = eval_with_profile(&system, &trace).unwrap();
            assert_eq!(replayed, trace.total, "sum over {n} elements");
        }
    }

    #[test]
    fn replay_reproduces_cross_function_calls() {
        let text = "\
<main>:
01: entsp 0x1
02: bl <twice>
03: bl <twice>
04: retsp 0x1
<twice>:
01: entsp 0x1
02: add r0, r0, r0
03: retsp 0x1
";
        let (cfg, harness, system) = build(text);
        let model = EnergyModelParams::default_model();
        let trace = run_program_profile(
            &cfg,
            &harness,
            &[5],
            &[],
            &model,
            &RunOptions {
                record_events: true,
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert_eq!(trace.result, 20);
        let replayed = eval_with_profile(&system, &trace).unwrap();
        assert_eq!(replayed, trace.total);
    }

    #[test]
    fn missing_bound_is_reported() {
        let (_, _, system) = build(FACT);
        let costs = BlockCosts {
            part_values: BTreeMap::new(),
            tag_costs: BTreeMap::new(),
        };
        let err = setup_cost_equations(&system, &costs, Direction::Upper).unwrap_err();
        assert!(matches!(err, HcirError::MissingBound(_)));
    }
}


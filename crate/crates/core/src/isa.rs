//! The toy instruction set: types, assembly parser, and ref/def sets.
//!
//! Semantics table (informal, one row per opcode; `d` destination, `a`/`b`
//! sources which may be registers or immediates unless noted):
//!
//! | opcode        | operands            | effect                                   | ref           | def    |
//! |---------------|---------------------|------------------------------------------|---------------|--------|
//! | `entsp k`     | imm                 | open a k-word stack frame                 | —             | —      |
//! | `retsp k`     | imm                 | drop the frame, return                    | —             | —      |
//! | `stw`         | `v, sp[k]`/`v, [i]` | store v to frame slot k / word index i    | v (, i)       | slot   |
//! | `ldw`         | `d, sp[k]`/`d, [i]` | load from frame slot k / word index i     | slot (, i)    | d      |
//! | `ldc`         | `d, imm`            | d = imm                                   | —             | d      |
//! | `add sub mul` | `d, a, b`           | wrapping 32-bit arithmetic                | a, b          | d      |
//! | `lss leq`     | `d, a, b`           | signed compare, d = 0/1                   | a, b          | d      |
//! | `eq`          | `d, a, b`           | d = (a == b)                              | a, b          | d      |
//! | `and or xor`  | `d, a, b`           | bitwise                                   | a, b          | d      |
//! | `shl shr`     | `d, a, b`           | logical shift, >=32 gives 0               | a, b          | d      |
//! | `not neg`     | `d, a`              | bitwise not / two's-complement negate     | a             | d      |
//! | `mkmsk`       | `d, k`              | d = word with low k bits set              | (k if reg)    | d      |
//! | `bf bt`       | `c, <t>`            | branch to t if c == 0 / c != 0            | c             | —      |
//! | `bu`          | `<t>`               | unconditional branch                      | —             | —      |
//! | `bl`          | `<f>`               | call function f                           | —             | —      |
//!
//! Memory operands: `sp[0xK]` is a fixed slot of the current frame; `[rN]` is
//! a dynamically indexed word of data memory (index taken from rN), the form
//! the array benchmarks use. Indexed cells are anonymous for ref/def purposes;
//! the harness transform pins them to concrete slots.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highest addressable register, `r0`..`r11`.
pub const MAX_REG: u8 = 11;
/// Frame slots must use an offset below this many words.
pub const FRAME_LIMIT: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Opcode {
    Entsp,
    Retsp,
    Stw,
    Ldw,
    Ldc,
    Add,
    Sub,
    Mul,
    Lss,
    Leq,
    Eq,
    And,
    Or,
    Xor,
    Not,
    Neg,
    Shl,
    Shr,
    Mkmsk,
    Bf,
    Bt,
    Bu,
    Bl,
}

impl Opcode {
    pub fn mnemonic(self) -> &'static str {
        use Opcode::*;
        match self {
            Entsp => "entsp",
            Retsp => "retsp",
            Stw => "stw",
            Ldw => "ldw",
            Ldc => "ldc",
            Add => "add",
            Sub => "sub",
            Mul => "mul",
            Lss => "lss",
            Leq => "leq",
            Eq => "eq",
            And => "and",
            Or => "or",
            Xor => "xor",
            Not => "not",
            Neg => "neg",
            Shl => "shl",
            Shr => "shr",
            Mkmsk => "mkmsk",
            Bf => "bf",
            Bt => "bt",
            Bu => "bu",
            Bl => "bl",
        }
    }

    fn from_mnemonic(s: &str) -> Option<Opcode> {
        use Opcode::*;
        Some(match s {
            "entsp" => Entsp,
            "retsp" => Retsp,
            "stw" => Stw,
            "ldw" => Ldw,
            "ldc" => Ldc,
            "add" => Add,
            "sub" => Sub,
            "mul" => Mul,
            "lss" => Lss,
            "leq" => Leq,
            "eq" => Eq,
            "and" => And,
            "or" => Or,
            "xor" => Xor,
            "not" => Not,
            "neg" => Neg,
            "shl" => Shl,
            "shr" => Shr,
            "mkmsk" => Mkmsk,
            "bf" => Bf,
            "bt" => Bt,
            "bu" => Bu,
            "bl" => Bl,
            _ => return None,
        })
    }

    /// Three-operand ALU ops with a destination and two sources.
    pub fn is_binary_alu(self) -> bool {
        use Opcode::*;
        matches!(
            self,
            Add | Sub | Mul | Lss | Leq | Eq | And | Or | Xor | Shl | Shr
        )
    }

    pub fn is_branch(self) -> bool {
        matches!(self, Opcode::Bf | Opcode::Bt | Opcode::Bu)
    }

    pub fn is_conditional_branch(self) -> bool {
        matches!(self, Opcode::Bf | Opcode::Bt)
    }

    /// Frame/call plumbing omitted from harness blocks and charged as
    /// separate constant cost tags.
    pub fn is_cost_tag(self) -> bool {
        matches!(self, Opcode::Entsp | Opcode::Retsp | Opcode::Bl)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Operand {
    /// `rN`, N in 0..=11.
    Register(u8),
    /// `sp[0xK]`: word K of the current stack frame.
    StackSlot(u32),
    /// `[rN]`: data-memory word whose index is the value of rN.
    Indexed(u8),
    /// `0xK`: 32-bit immediate.
    Immediate(u32),
    /// `<label>`: branch or call target.
    Target(String),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Register(r) => write!(f, "r{r}"),
            Operand::StackSlot(k) => write!(f, "sp[{k:#x}]"),
            Operand::Indexed(r) => write!(f, "[r{r}]"),
            Operand::Immediate(v) => write!(f, "{v:#x}"),
            Operand::Target(t) => write!(f, "<{t}>"),
        }
    }
}

/// A storage location named by an instruction operand.
///
/// Dynamically indexed memory has no static name; `ref_def` reports only the
/// index register for those operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Location {
    Register(u8),
    /// A frame slot (`sp[k]`), or a harness-local slot after rewriting.
    Slot(u32),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Register(r) => write!(f, "r{r}"),
            Location::Slot(k) => write!(f, "sp[{k:#x}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    /// Address label, unique within its function. Labels carry no ordering
    /// semantics; fallthrough is textual order.
    pub address: String,
    pub opcode: Opcode,
    pub operands: Vec<Operand>,
}

impl Instruction {
    pub fn target(&self) -> Option<&str> {
        self.operands.iter().find_map(|op| match op {
            Operand::Target(t) => Some(t.as_str()),
            _ => None,
        })
    }

    /// Locations read before any write (`ref`) and locations written (`def`).
    ///
    /// Branch targets and immediates are neither. For indexed memory operands
    /// the index register is a ref; the anonymous cell itself is not a
    /// `Location`.
    pub fn ref_def(&self) -> (Vec<Location>, Vec<Location>) {
        use Opcode::*;
        let mut refs: Vec<Location> = Vec::new();
        let mut defs: Vec<Location> = Vec::new();
        let add_ref = |loc: Location, refs: &mut Vec<Location>| {
            if !refs.contains(&loc) {
                refs.push(loc);
            }
        };
        let src = |op: &Operand, refs: &mut Vec<Location>| match op {
            Operand::Register(r) => add_ref(Location::Register(*r), refs),
            Operand::Immediate(_) | Operand::Target(_) => {}
            Operand::StackSlot(_) | Operand::Indexed(_) => unreachable!("memory source"),
        };
        match self.opcode {
            Entsp | Retsp | Bu | Bl => {}
            Bf | Bt => src(&self.operands[0], &mut refs),
            Ldc => defs.push(loc_of(&self.operands[0])),
            Not | Neg => {
                src(&self.operands[1], &mut refs);
                defs.push(loc_of(&self.operands[0]));
            }
            Mkmsk => {
                src(&self.operands[1], &mut refs);
                defs.push(loc_of(&self.operands[0]));
            }
            Ldw => {
                // address register first, then the named cell if it has a name
                match &self.operands[1] {
                    Operand::StackSlot(k) => refs.push(Location::Slot(*k)),
                    Operand::Indexed(r) => refs.push(Location::Register(*r)),
                    _ => unreachable!(),
                }
                defs.push(loc_of(&self.operands[0]));
            }
            Stw => {
                src(&self.operands[0], &mut refs);
                match &self.operands[1] {
                    Operand::StackSlot(k) => defs.push(Location::Slot(*k)),
                    Operand::Indexed(r) => add_ref(Location::Register(*r), &mut refs),
                    _ => unreachable!(),
                }
            }
            _ => {
                // binary ALU: d, a, b
                src(&self.operands[1], &mut refs);
                src(&self.operands[2], &mut refs);
                defs.push(loc_of(&self.operands[0]));
            }
        }
        (refs, defs)
    }
}

fn loc_of(op: &Operand) -> Location {
    match op {
        Operand::Register(r) => Location::Register(*r),
        Operand::StackSlot(k) => Location::Slot(*k),
        _ => unreachable!("destination must be register or slot"),
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.address, self.opcode)?;
        for (i, op) in self.operands.iter().enumerate() {
            if i == 0 {
                write!(f, " {op}")?;
            } else {
                write!(f, ", {op}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Function {
    pub name: String,
    pub instructions: Vec<Instruction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    /// Functions in source order; the entry function is the first one.
    pub functions: Vec<Function>,
    pub entry: String,
}

impl Program {
    pub fn entry_function(&self) -> &Function {
        self.function(&self.entry).expect("entry resolves")
    }

    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, func) in self.functions.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            writeln!(f, "<{}>:", func.name)?;
            for instr in &func.instructions {
                writeln!(f, "{instr}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {opcode} expects {expected}, got {got} operands")]
    Arity {
        line: usize,
        opcode: Opcode,
        expected: &'static str,
        got: usize,
    },
    #[error("line {line}: register index {index} out of range (max {MAX_REG})")]
    RegisterRange { line: usize, index: u32 },
    #[error("line {line}: stack offset {offset:#x} exceeds frame limit {FRAME_LIMIT:#x}")]
    FrameLimit { line: usize, offset: u32 },
    #[error("line {line}: duplicate address '{address}' in function '{function}'")]
    DuplicateAddress {
        line: usize,
        address: String,
        function: String,
    },
    #[error("unresolved target '<{target}>' in function '{function}'")]
    UnresolvedTarget { target: String, function: String },
    #[error("no entry function")]
    NoEntryFunction,
}

/// Parses assembly text into a typed [`Program`].
///
/// One instruction or label per line. `<name>:` opens a function,
/// `ADDR: OPCODE op1, op2, ...` adds an instruction, `#` starts a comment.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut functions: Vec<Function> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let code = raw.split('#').next().unwrap_or("").trim();
        if code.is_empty() {
            continue;
        }
        if let Some(name) = code.strip_prefix('<') {
            let name = name.strip_suffix(">:").ok_or_else(|| ParseError::Syntax {
                line,
                msg: format!("malformed function label '{code}'"),
            })?;
            if name.is_empty() {
                return Err(ParseError::Syntax {
                    line,
                    msg: "empty function name".into(),
                });
            }
            functions.push(Function {
                name: name.to_string(),
                instructions: Vec::new(),
            });
            continue;
        }
        let func = functions.last_mut().ok_or_else(|| ParseError::Syntax {
            line,
            msg: "instruction before any function label".into(),
        })?;
        let instr = parse_instruction(code, line)?;
        if func.instructions.iter().any(|i| i.address == instr.address) {
            return Err(ParseError::DuplicateAddress {
                line,
                address: instr.address,
                function: func.name.clone(),
            });
        }
        func.instructions.push(instr);
    }
    if functions.is_empty() {
        return Err(ParseError::NoEntryFunction);
    }
    let program = Program {
        entry: functions[0].name.clone(),
        functions,
    };
    resolve_targets(&program)?;
    Ok(program)
}

fn parse_instruction(code: &str, line: usize) -> Result<Instruction, ParseError> {
    let (address, rest) = code.split_once(':').ok_or_else(|| ParseError::Syntax {
        line,
        msg: format!("expected 'ADDR: OPCODE ...', got '{code}'"),
    })?;
    let address = address.trim().to_string();
    if address.is_empty() || address.contains(char::is_whitespace) {
        return Err(ParseError::Syntax {
            line,
            msg: format!("malformed address '{address}'"),
        });
    }
    let rest = rest.trim();
    let (mnemonic, ops_text) = match rest.split_once(char::is_whitespace) {
        Some((m, o)) => (m, o.trim()),
        None => (rest, ""),
    };
    let opcode = Opcode::from_mnemonic(mnemonic).ok_or_else(|| ParseError::Syntax {
        line,
        msg: format!("unknown opcode '{mnemonic}'"),
    })?;
    let mut operands = Vec::new();
    if !ops_text.is_empty() {
        for part in ops_text.split(',') {
            operands.push(parse_operand(part.trim(), line)?);
        }
    }
    check_operands(opcode, &operands, line)?;
    Ok(Instruction {
        address,
        opcode,
        operands,
    })
}

fn parse_operand(text: &str, line: usize) -> Result<Operand, ParseError> {
    let syntax = |msg: String| ParseError::Syntax { line, msg };
    if let Some(rest) = text.strip_prefix("sp[") {
        let inner = rest
            .strip_suffix(']')
            .ok_or_else(|| syntax(format!("malformed stack slot '{text}'")))?;
        let offset = parse_hex(inner)
            .ok_or_else(|| syntax(format!("malformed stack offset '{inner}'")))?;
        if offset >= FRAME_LIMIT {
            return Err(ParseError::FrameLimit { line, offset });
        }
        return Ok(Operand::StackSlot(offset));
    }
    if let Some(rest) = text.strip_prefix('[') {
        let inner = rest
            .strip_suffix(']')
            .ok_or_else(|| syntax(format!("malformed indexed operand '{text}'")))?;
        let reg = parse_register(inner, line)?;
        return Ok(Operand::Indexed(reg));
    }
    if let Some(rest) = text.strip_prefix('<') {
        let name = rest
            .strip_suffix('>')
            .ok_or_else(|| syntax(format!("malformed target '{text}'")))?;
        if name.is_empty() {
            return Err(syntax("empty target".into()));
        }
        return Ok(Operand::Target(name.to_string()));
    }
    if text.starts_with('r') && text[1..].chars().all(|c| c.is_ascii_digit()) {
        return Ok(Operand::Register(parse_register(text, line)?));
    }
    if let Some(v) = parse_hex(text) {
        return Ok(Operand::Immediate(v));
    }
    Err(syntax(format!("unrecognized operand '{text}'")))
}

fn parse_register(text: &str, line: usize) -> Result<u8, ParseError> {
    let index: u32 = text
        .strip_prefix('r')
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| ParseError::Syntax {
            line,
            msg: format!("malformed register '{text}'"),
        })?;
    if index > MAX_REG as u32 {
        return Err(ParseError::RegisterRange { line, index });
    }
    Ok(index as u8)
}

fn parse_hex(text: &str) -> Option<u32> {
    let digits = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X"))?;
    u32::from_str_radix(digits, 16).ok()
}

fn check_operands(opcode: Opcode, ops: &[Operand], line: usize) -> Result<(), ParseError> {
    use Opcode::*;
    let arity_err = |expected: &'static str| ParseError::Arity {
        line,
        opcode,
        expected,
        got: ops.len(),
    };
    let is_reg = |op: &Operand| matches!(op, Operand::Register(_));
    let is_src = |op: &Operand| matches!(op, Operand::Register(_) | Operand::Immediate(_));
    let is_mem = |op: &Operand| matches!(op, Operand::StackSlot(_) | Operand::Indexed(_));
    let is_imm = |op: &Operand| matches!(op, Operand::Immediate(_));
    let is_target = |op: &Operand| matches!(op, Operand::Target(_));
    let ok = match opcode {
        Entsp | Retsp => ops.len() == 1 && is_imm(&ops[0]),
        Stw => ops.len() == 2 && is_reg(&ops[0]) && is_mem(&ops[1]),
        Ldw => ops.len() == 2 && is_reg(&ops[0]) && is_mem(&ops[1]),
        Ldc => ops.len() == 2 && is_reg(&ops[0]) && is_imm(&ops[1]),
        Not | Neg => ops.len() == 2 && is_reg(&ops[0]) && is_src(&ops[1]),
        Mkmsk => ops.len() == 2 && is_reg(&ops[0]) && is_src(&ops[1]),
        Bf | Bt => ops.len() == 2 && is_reg(&ops[0]) && is_target(&ops[1]),
        Bu | Bl => ops.len() == 1 && is_target(&ops[0]),
        _ => ops.len() == 3 && is_reg(&ops[0]) && is_src(&ops[1]) && is_src(&ops[2]),
    };
    if ok {
        return Ok(());
    }
    Err(arity_err(match opcode {
        Entsp | Retsp => "1 immediate",
        Stw => "value register and memory operand",
        Ldw => "destination register and memory operand",
        Ldc => "destination register and immediate",
        Not | Neg | Mkmsk => "destination register and source",
        Bf | Bt => "condition register and target",
        Bu | Bl => "1 target",
        _ => "destination register and 2 sources",
    }))
}

fn resolve_targets(program: &Program) -> Result<(), ParseError> {
    let function_names: BTreeSet<&str> =
        program.functions.iter().map(|f| f.name.as_str()).collect();
    for func in &program.functions {
        let local: BTreeSet<&str> = func
            .instructions
            .iter()
            .map(|i| i.address.as_str())
            .collect();
        for instr in &func.instructions {
            if let Some(target) = instr.target() {
                let resolved = if instr.opcode == Opcode::Bl {
                    function_names.contains(target)
                } else {
                    local.contains(target)
                };
                if !resolved {
                    return Err(ParseError::UnresolvedTarget {
                        target: target.to_string(),
                        function: func.name.clone(),
                    });
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const FACT: &str = "\
<fact>:
01: entsp 0x2
02: stw   r0, sp[0x1]
03: ldw   r1, sp[0x1]
04: ldc   r0, 0x0
05: lss   r0, r0, r1
06: bf    r0, <08>
07: bu    <10>
10: ldw   r0, sp[0x1]
11: sub   r0, r0, 0x1
12: bl    <fact>
13: ldw   r1, sp[0x1]
14: mul   r0, r1, r0
15: retsp 0x2
08: mkmsk r0, 0x1
09: retsp 0x2
";

    #[test]
    fn parses_fact_listing() {
        let p = parse_program(FACT).unwrap();
        assert_eq!(p.functions.len(), 1);
        assert_eq!(p.entry, "fact");
        assert_eq!(p.functions[0].instructions.len(), 15);
        let first = &p.functions[0].instructions[0];
        assert_eq!(first.opcode, Opcode::Entsp);
        assert_eq!(first.operands, vec![Operand::Immediate(2)]);
    }

    #[test]
    fn empty_text_is_no_entry_function() {
        assert_eq!(parse_program(""), Err(ParseError::NoEntryFunction));
        assert_eq!(
            parse_program("# only comments\n\n"),
            Err(ParseError::NoEntryFunction)
        );
    }

    #[test]
    fn arity_error_carries_line_number() {
        let err = parse_program("<f>:\n01: lss r0, r0\n").unwrap_err();
        match err {
            ParseError::Arity { line, opcode, .. } => {
                assert_eq!(line, 2);
                assert_eq!(opcode, Opcode::Lss);
            }
            other => panic!("expected arity error, got {other:?}"),
        }
    }

    #[test]
    fn unresolved_target_is_rejected() {
        let err = parse_program("<f>:\n01: bu <99>\n").unwrap_err();
        assert!(matches!(err, ParseError::UnresolvedTarget { .. }));
        let err = parse_program("<f>:\n01: bl <nothere>\n02: retsp 0x0\n").unwrap_err();
        assert!(matches!(err, ParseError::UnresolvedTarget { .. }));
    }

    #[test]
    fn duplicate_address_is_rejected() {
        let err = parse_program("<f>:\n01: ldc r0, 0x1\n01: ldc r1, 0x2\n").unwrap_err();
        assert!(matches!(err, ParseError::DuplicateAddress { .. }));
    }

    #[test]
    fn frame_limit_enforced() {
        let err = parse_program("<f>:\n01: ldw r0, sp[0x100]\n").unwrap_err();
        assert!(matches!(err, ParseError::FrameLimit { offset: 256, .. }));
    }

    #[test]
    fn register_range_enforced() {
        let err = parse_program("<f>:\n01: ldc r12, 0x0\n").unwrap_err();
        assert!(matches!(err, ParseError::RegisterRange { index: 12, .. }));
    }

    fn instr(text: &str) -> Instruction {
        parse_instruction(text, 1).unwrap()
    }

    #[test]
    fn ref_def_lss_reads_both_sources() {
        let (r, d) = instr("05: lss r0, r0, r1").ref_def();
        assert_eq!(r, vec![Location::Register(0), Location::Register(1)]);
        assert_eq!(d, vec![Location::Register(0)]);
    }

    #[test]
    fn ref_def_ldc_reads_nothing() {
        let (r, d) = instr("04: ldc r0, 0x0").ref_def();
        assert!(r.is_empty());
        assert_eq!(d, vec![Location::Register(0)]);
    }

    #[test]
    fn ref_def_stw_defines_the_slot() {
        let (r, d) = instr("02: stw r0, sp[0x1]").ref_def();
        assert_eq!(r, vec![Location::Register(0)]);
        assert_eq!(d, vec![Location::Slot(1)]);
    }

    #[test]
    fn ref_def_indexed_load_reads_index_register() {
        let (r, d) = instr("07: ldw r3, [r1]").ref_def();
        assert_eq!(r, vec![Location::Register(1)]);
        assert_eq!(d, vec![Location::Register(3)]);
    }

    #[test]
    fn ref_def_indexed_store_reads_value_and_index() {
        let (r, d) = instr("13: stw r2, [r3]").ref_def();
        assert_eq!(r, vec![Location::Register(2), Location::Register(3)]);
        assert!(d.is_empty());
    }

    /// ref/def covers exactly the register-and-slot content of the operands.
    #[test]
    fn ref_def_covers_non_immediate_operands() {
        let samples = [
            "01: entsp 0x2",
            "02: stw r0, sp[0x1]",
            "03: ldw r1, sp[0x1]",
            "04: ldc r0, 0x0",
            "05: lss r0, r0, r1",
            "06: bf r0, <01>",
            "07: bu <01>",
            "08: mkmsk r0, 0x1",
            "09: retsp 0x2",
            "10: sub r0, r0, 0x1",
            "11: mul r0, r1, r0",
            "12: not r2, r3",
            "13: neg r2, r3",
            "14: shl r2, r3, 0x2",
            "15: ldw r3, [r1]",
            "16: stw r3, [r2]",
            "17: eq r5, r2, 0x0",
        ];
        for text in samples {
            let i = instr(text);
            let (refs, defs) = i.ref_def();
            let mut expected: BTreeSet<Location> = BTreeSet::new();
            for op in &i.operands {
                match op {
                    Operand::Register(r) => {
                        expected.insert(Location::Register(*r));
                    }
                    Operand::StackSlot(k) => {
                        expected.insert(Location::Slot(*k));
                    }
                    Operand::Indexed(r) => {
                        expected.insert(Location::Register(*r));
                    }
                    Operand::Immediate(_) | Operand::Target(_) => {}
                }
            }
            let got: BTreeSet<Location> = refs.iter().chain(defs.iter()).copied().collect();
            assert_eq!(got, expected, "coverage mismatch for '{text}'");
        }
    }

    #[test]
    fn pretty_print_reparses_identically() {
        let p = parse_program(FACT).unwrap();
        let printed = p.to_string();
        let reparsed = parse_program(&printed).unwrap();
        assert_eq!(p, reparsed);
    }

    proptest! {
        /// Render → parse is the identity on single instructions.
        #[test]
        fn operand_roundtrip(reg in 0u8..=11, slot in 0u32..256, imm in any::<u32>()) {
            let samples = vec![
                Instruction { address: "01".into(), opcode: Opcode::Lss,
                    operands: vec![Operand::Register(reg), Operand::Register(reg), Operand::Immediate(imm)] },
                Instruction { address: "02".into(), opcode: Opcode::Stw,
                    operands: vec![Operand::Register(reg), Operand::StackSlot(slot)] },
                Instruction { address: "03".into(), opcode: Opcode::Ldw,
                    operands: vec![Operand::Register(reg), Operand::Indexed(reg)] },
            ];
            for i in samples {
                let text = i.to_string();
                let parsed = parse_instruction(&text, 1).unwrap();
                prop_assert_eq!(parsed, i);
            }
        }
    }
}

#[cfg(test)]
pub(crate) use tests::FACT;

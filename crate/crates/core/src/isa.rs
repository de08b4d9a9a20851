//! Executable semantics of the instruction subset over the extended domain
//! D ∪ {⊥}, REF/DEF attribute computation, and trace-triple extraction.
//!
//! Memory outside the stack is modeled as constantly unknown: loads through a
//! non-sp base produce ⊥ and stores through one are discarded (their addresses
//! still appear in trace triples). Stack cells are tracked by absolute
//! word-aligned address; reads of unwritten cells return ⊥.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::listing::{
    AluOp, Body, CmpOp, Cond, LabeledInstruction, MemOffset, MultiMode, Op2, Reg, ShiftKind, PC,
    SP,
};

/// A 32-bit word or the unknown value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Known(u32),
    Bot,
}

impl Value {
    pub fn known(self) -> Option<u32> {
        match self {
            Value::Known(v) => Some(v),
            Value::Bot => None,
        }
    }

    pub fn is_bot(self) -> bool {
        matches!(self, Value::Bot)
    }

    fn map2(self, other: Value, f: impl Fn(u32, u32) -> u32) -> Value {
        match (self, other) {
            (Value::Known(a), Value::Known(b)) => Value::Known(f(a, b)),
            _ => Value::Bot,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Known(v) => write!(f, "{v}"),
            Value::Bot => write!(f, "⊥"),
        }
    }
}

/// A three-valued condition flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Trit {
    True,
    False,
    Bot,
}

impl Trit {
    pub fn from_bool(b: bool) -> Trit {
        if b {
            Trit::True
        } else {
            Trit::False
        }
    }

    pub fn known(self) -> Option<bool> {
        match self {
            Trit::True => Some(true),
            Trit::False => Some(false),
            Trit::Bot => None,
        }
    }
}

/// Condition flag names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Flag {
    N,
    Z,
    C,
    V,
}

/// A dataflow variable: register, flag, the coarse stack, or one stack cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    Reg(Reg),
    Flag(Flag),
    /// The whole stack, before sp-value analysis refines it.
    Stack,
    /// One word-aligned stack cell at an absolute address.
    StackCell(u32),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Reg(r) => write!(f, "{r}"),
            Var::Flag(Flag::N) => write!(f, "N"),
            Var::Flag(Flag::Z) => write!(f, "Z"),
            Var::Flag(Flag::C) => write!(f, "C"),
            Var::Flag(Flag::V) => write!(f, "V"),
            Var::Stack => write!(f, "stack"),
            Var::StackCell(k) => write!(f, "stack_{k}"),
        }
    }
}

/// Valuation of registers, flags, and tracked stack cells.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SymState {
    pub regs: [Value; 16],
    /// N, Z, C, V.
    pub flags: [Trit; 4],
    /// Absolute word-aligned address -> value; absent keys read as ⊥.
    pub stack: BTreeMap<u32, Value>,
}

impl SymState {
    /// All registers and flags known-zero; empty (all-⊥) stack.
    pub fn new() -> SymState {
        SymState {
            regs: [Value::Known(0); 16],
            flags: [Trit::False; 4],
            stack: BTreeMap::new(),
        }
    }

    pub fn reg(&self, r: Reg) -> Value {
        self.regs[r.0 as usize]
    }

    pub fn set_reg(&mut self, r: Reg, v: Value) {
        self.regs[r.0 as usize] = v;
    }

    pub fn pc(&self) -> Value {
        self.regs[15]
    }

    pub fn set_pc(&mut self, v: Value) {
        self.regs[15] = v;
    }

    pub fn flag(&self, f: Flag) -> Trit {
        self.flags[f as usize]
    }

    pub fn set_flag(&mut self, f: Flag, t: Trit) {
        self.flags[f as usize] = t;
    }

    /// Value a register contributes as an operand. pc reads as address + 8.
    fn operand_reg(&self, r: Reg, at: u32) -> Value {
        if r == PC {
            Value::Known(at.wrapping_add(8))
        } else {
            self.reg(r)
        }
    }

    pub fn stack_read(&self, addr: u32) -> Value {
        self.stack.get(&addr).copied().unwrap_or(Value::Bot)
    }

    pub fn stack_write(&mut self, addr: u32, v: Value) {
        self.stack.insert(addr, v);
    }
}

impl Default for SymState {
    fn default() -> Self {
        SymState::new()
    }
}

/// One element of the trace alphabet fed to the hardware model.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TraceTriple {
    pub instr: LabeledInstruction,
    pub addrs: BTreeSet<u32>,
    pub executed: bool,
}

/// Per-instruction referenced and defined variable sets.
///
/// `weak_defs` are defs that may leave the previous value of the same variable
/// live (the coarse stack, and stack cells written under a non-singleton sp
/// set); reaching-definition analysis does not kill through them.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RefDef {
    pub refs: BTreeSet<Var>,
    pub defs: BTreeSet<Var>,
    pub weak_defs: BTreeSet<Var>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StepError {
    /// A load/store whose effective address is ⊥ (violates A3).
    #[error("instruction {0}: effective memory address is unknown")]
    UndefinedMemoryBase(u32),
    /// pc left the program through a condition the caller must resolve.
    #[error("instruction {0}: condition is unknown; caller must resolve the fork")]
    UnresolvedCondition(u32),
}

/// Flags read by a condition.
pub fn cond_flags(cond: Cond) -> &'static [Flag] {
    match cond {
        Cond::Al => &[],
        Cond::Eq | Cond::Ne => &[Flag::Z],
        Cond::Le | Cond::Gt => &[Flag::Z, Flag::N, Flag::V],
        Cond::Ge | Cond::Lt => &[Flag::N, Flag::V],
    }
}

/// Standard ARM condition decoding over three-valued flags.
///
/// The result is ⊥ iff any flag the condition reads is ⊥.
pub fn eval_cond(flags: &[Trit; 4], cond: Cond) -> Trit {
    if cond == Cond::Al {
        return Trit::True;
    }
    for f in cond_flags(cond) {
        if flags[*f as usize] == Trit::Bot {
            return Trit::Bot;
        }
    }
    let n = flags[Flag::N as usize] == Trit::True;
    let z = flags[Flag::Z as usize] == Trit::True;
    let v = flags[Flag::V as usize] == Trit::True;
    let b = match cond {
        Cond::Al => true,
        Cond::Eq => z,
        Cond::Ne => !z,
        Cond::Le => z || (n != v),
        Cond::Gt => !z && (n == v),
        Cond::Ge => n == v,
        Cond::Lt => n != v,
    };
    Trit::from_bool(b)
}

fn op2_regs(op2: &Op2) -> Vec<Reg> {
    match op2 {
        Op2::Imm(_) => vec![],
        Op2::Reg(r) => vec![*r],
        Op2::ShiftedReg(r, _, _) => vec![*r],
    }
}

fn offset_regs(off: &MemOffset) -> Vec<Reg> {
    match off {
        MemOffset::Imm(_) => vec![],
        MemOffset::Reg(r) => vec![*r],
        MemOffset::ShiftedReg(r, _, _) => vec![*r],
    }
}

/// Registers that determine the effective addresses of a memory instruction.
pub fn address_regs(i: &LabeledInstruction) -> Vec<Reg> {
    match &i.body {
        Body::Ldr { base, offset, .. } | Body::Str { base, offset, .. } => {
            let mut v = vec![*base];
            v.extend(offset_regs(offset));
            v
        }
        Body::Multi { base, .. } => vec![*base],
        _ => vec![],
    }
}

/// True if the instruction reads or writes memory.
pub fn is_memory(i: &LabeledInstruction) -> bool {
    matches!(i.body, Body::Ldr { .. } | Body::Str { .. } | Body::Multi { .. })
}

/// True if the instruction accesses memory through sp (a stack reference).
pub fn is_stack_ref(i: &LabeledInstruction) -> bool {
    match &i.body {
        Body::Ldr { base, .. } | Body::Str { base, .. } => *base == SP,
        Body::Multi { base, .. } => *base == SP,
        _ => false,
    }
}

/// REF/DEF attribute computation with the coarse `stack` variable.
pub fn ref_def(i: &LabeledInstruction) -> RefDef {
    let mut refs: BTreeSet<Var> = BTreeSet::new();
    let mut defs: BTreeSet<Var> = BTreeSet::new();
    let mut weak: BTreeSet<Var> = BTreeSet::new();
    let r = |r: Reg| Var::Reg(r);
    match &i.body {
        Body::Mov { rd, op2 } | Body::Mvn { rd, op2 } => {
            refs.extend(op2_regs(op2).into_iter().map(r));
            defs.insert(r(*rd));
        }
        Body::Alu { rd, rn, op2, .. } => {
            refs.insert(r(*rn));
            refs.extend(op2_regs(op2).into_iter().map(r));
            defs.insert(r(*rd));
        }
        Body::Cmp { rn, op2, .. } => {
            refs.insert(r(*rn));
            refs.extend(op2_regs(op2).into_iter().map(r));
        }
        Body::Mul { rd, rm, rs } => {
            refs.insert(r(*rm));
            refs.insert(r(*rs));
            defs.insert(r(*rd));
        }
        Body::Mla { rd, rm, rs, rn } => {
            refs.extend([r(*rm), r(*rs), r(*rn)]);
            defs.insert(r(*rd));
        }
        Body::Smull { rdlo, rdhi, rm, rs } => {
            refs.insert(r(*rm));
            refs.insert(r(*rs));
            defs.insert(r(*rdlo));
            defs.insert(r(*rdhi));
        }
        Body::Ldr { rd, base, offset } => {
            refs.insert(r(*base));
            refs.extend(offset_regs(offset).into_iter().map(r));
            if *base == SP {
                refs.insert(Var::Stack);
            }
            defs.insert(r(*rd));
        }
        Body::Str { rd, base, offset } => {
            refs.insert(r(*rd));
            refs.insert(r(*base));
            refs.extend(offset_regs(offset).into_iter().map(r));
            if *base == SP {
                defs.insert(Var::Stack);
                weak.insert(Var::Stack);
            }
        }
        Body::Multi { load, base, writeback, regs, .. } => {
            refs.insert(r(*base));
            if *load {
                if *base == SP {
                    refs.insert(Var::Stack);
                }
                defs.extend(regs.iter().map(|x| r(*x)));
            } else {
                refs.extend(regs.iter().map(|x| r(*x)));
                if *base == SP {
                    defs.insert(Var::Stack);
                    weak.insert(Var::Stack);
                }
            }
            if *writeback {
                defs.insert(r(*base));
            }
        }
        Body::B { link, .. } => {
            if *link {
                defs.insert(r(crate::listing::LR));
            }
        }
        Body::Bx { rm } => {
            refs.insert(r(*rm));
        }
    }
    for f in cond_flags(i.cond) {
        refs.insert(Var::Flag(*f));
    }
    let sets_flags = i.sets_flags || matches!(i.body, Body::Cmp { .. });
    if sets_flags {
        defs.extend([
            Var::Flag(Flag::N),
            Var::Flag(Flag::Z),
            Var::Flag(Flag::C),
            Var::Flag(Flag::V),
        ]);
    }
    // Every instruction assigns pc.
    defs.insert(r(PC));
    RefDef { refs, defs, weak_defs: weak }
}

/// Result of executing one instruction body (pc excluded).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecOutcome {
    pub pc: PcEffect,
    /// Byte addresses of the words read or written.
    pub addrs: BTreeSet<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcEffect {
    Sequential,
    Jump(u32),
    Indirect(Value),
}

fn eval_op2(s: &SymState, at: u32, op2: &Op2) -> (Value, Option<Trit>) {
    match op2 {
        Op2::Imm(v) => (Value::Known(*v), None),
        Op2::Reg(r) => (s.operand_reg(*r, at), None),
        Op2::ShiftedReg(r, k, n) => {
            let v = s.operand_reg(*r, at);
            (shift_value(v, *k, *n), shift_carry(v, *k, *n))
        }
    }
}

fn shift_value(v: Value, k: ShiftKind, n: u8) -> Value {
    let Some(x) = v.known() else { return Value::Bot };
    let n = n as u32;
    Value::Known(match k {
        ShiftKind::Lsl => {
            if n >= 32 {
                0
            } else {
                x << n
            }
        }
        ShiftKind::Lsr => {
            if n >= 32 {
                0
            } else {
                x >> n
            }
        }
        ShiftKind::Asr => {
            let sh = n.min(31);
            ((x as i32) >> sh) as u32
        }
    })
}

fn shift_carry(v: Value, k: ShiftKind, n: u8) -> Option<Trit> {
    if n == 0 {
        return None;
    }
    let Some(x) = v.known() else { return Some(Trit::Bot) };
    let n = n as u32;
    let bit = match k {
        ShiftKind::Lsl => {
            if n > 32 {
                false
            } else {
                (x >> (32 - n)) & 1 == 1
            }
        }
        ShiftKind::Lsr => {
            if n > 32 {
                false
            } else {
                (x >> (n - 1)) & 1 == 1
            }
        }
        ShiftKind::Asr => {
            let sh = n.min(32);
            ((x as i32) >> (sh - 1)) & 1 == 1
        }
    };
    Some(Trit::from_bool(bit))
}

fn eval_offset(s: &SymState, at: u32, off: &MemOffset) -> Value {
    match off {
        MemOffset::Imm(v) => Value::Known(*v as u32),
        MemOffset::Reg(r) => s.operand_reg(*r, at),
        MemOffset::ShiftedReg(r, k, n) => shift_value(s.operand_reg(*r, at), *k, *n),
    }
}

fn set_nz(s: &mut SymState, v: Value) {
    match v {
        Value::Known(x) => {
            s.set_flag(Flag::N, Trit::from_bool(x & 0x8000_0000 != 0));
            s.set_flag(Flag::Z, Trit::from_bool(x == 0));
        }
        Value::Bot => {
            s.set_flag(Flag::N, Trit::Bot);
            s.set_flag(Flag::Z, Trit::Bot);
        }
    }
}

fn set_all_flags_bot(s: &mut SymState) {
    for f in [Flag::N, Flag::Z, Flag::C, Flag::V] {
        s.set_flag(f, Trit::Bot);
    }
}

/// N,Z,C,V from `a - b` (cmp / subs semantics). C is not-borrow.
fn flags_sub(s: &mut SymState, a: Value, b: Value) {
    match (a, b) {
        (Value::Known(x), Value::Known(y)) => {
            let r = x.wrapping_sub(y);
            s.set_flag(Flag::N, Trit::from_bool(r & 0x8000_0000 != 0));
            s.set_flag(Flag::Z, Trit::from_bool(r == 0));
            s.set_flag(Flag::C, Trit::from_bool(x >= y));
            let ov = ((x ^ y) & (x ^ r)) & 0x8000_0000 != 0;
            s.set_flag(Flag::V, Trit::from_bool(ov));
        }
        _ => set_all_flags_bot(s),
    }
}

/// N,Z,C,V from `a + b` (cmn / adds semantics).
fn flags_add(s: &mut SymState, a: Value, b: Value) {
    match (a, b) {
        (Value::Known(x), Value::Known(y)) => {
            let (r, carry) = x.overflowing_add(y);
            s.set_flag(Flag::N, Trit::from_bool(r & 0x8000_0000 != 0));
            s.set_flag(Flag::Z, Trit::from_bool(r == 0));
            s.set_flag(Flag::C, Trit::from_bool(carry));
            let ov = (!(x ^ y) & (x ^ r)) & 0x8000_0000 != 0;
            s.set_flag(Flag::V, Trit::from_bool(ov));
        }
        _ => set_all_flags_bot(s),
    }
}

/// Word addresses referenced by a multiple transfer with the given base value.
///
/// `Ia` runs upward from the base. `Db` ends one word below the base. `Da`
/// (bare `stm`) places the highest-numbered register at the base address and
/// the rest below it.
pub fn multi_addresses(mode: MultiMode, base: u32, count: u32) -> Vec<u32> {
    let lowest = match mode {
        MultiMode::Ia => base,
        MultiMode::Db => base.wrapping_sub(4 * count),
        MultiMode::Da => base.wrapping_sub(4 * (count - 1)),
    };
    (0..count).map(|k| lowest.wrapping_add(4 * k)).collect()
}

fn multi_writeback(mode: MultiMode, base: u32, count: u32) -> u32 {
    match mode {
        MultiMode::Ia => base.wrapping_add(4 * count),
        MultiMode::Db | MultiMode::Da => base.wrapping_sub(4 * count),
    }
}

/// Apply the register/flag/stack effect of an executed instruction.
///
/// pc is not assigned here; the returned [`PcEffect`] says how it moves.
pub fn exec_body(s: &mut SymState, i: &LabeledInstruction) -> Result<ExecOutcome, StepError> {
    let at = i.address;
    let mut addrs: BTreeSet<u32> = BTreeSet::new();
    let mut pc = PcEffect::Sequential;
    match &i.body {
        Body::Mov { rd, op2 } => {
            let (v, carry) = eval_op2(s, at, op2);
            if *rd == PC {
                pc = PcEffect::Indirect(v);
            } else {
                s.set_reg(*rd, v);
            }
            if i.sets_flags {
                set_nz(s, v);
                s.set_flag(Flag::C, carry.unwrap_or(Trit::Bot));
            }
        }
        Body::Mvn { rd, op2 } => {
            let (v, carry) = eval_op2(s, at, op2);
            let v = match v {
                Value::Known(x) => Value::Known(!x),
                Value::Bot => Value::Bot,
            };
            if *rd == PC {
                pc = PcEffect::Indirect(v);
            } else {
                s.set_reg(*rd, v);
            }
            if i.sets_flags {
                set_nz(s, v);
                s.set_flag(Flag::C, carry.unwrap_or(Trit::Bot));
            }
        }
        Body::Alu { op, rd, rn, op2 } => {
            let a = s.operand_reg(*rn, at);
            let (b, carry) = eval_op2(s, at, op2);
            let v = match op {
                AluOp::Add => a.map2(b, u32::wrapping_add),
                AluOp::Sub => a.map2(b, u32::wrapping_sub),
                AluOp::Rsb => b.map2(a, u32::wrapping_sub),
                AluOp::And => a.map2(b, |x, y| x & y),
                AluOp::Orr => a.map2(b, |x, y| x | y),
                AluOp::Eor => a.map2(b, |x, y| x ^ y),
            };
            if i.sets_flags {
                match op {
                    AluOp::Add => flags_add(s, a, b),
                    AluOp::Sub => flags_sub(s, a, b),
                    AluOp::Rsb => flags_sub(s, b, a),
                    _ => {
                        set_nz(s, v);
                        s.set_flag(Flag::C, carry.unwrap_or(Trit::Bot));
                    }
                }
            }
            if *rd == PC {
                pc = PcEffect::Indirect(v);
            } else {
                s.set_reg(*rd, v);
            }
        }
        Body::Cmp { op, rn, op2 } => {
            let a = s.operand_reg(*rn, at);
            let (b, carry) = eval_op2(s, at, op2);
            match op {
                CmpOp::Cmp => flags_sub(s, a, b),
                CmpOp::Cmn => flags_add(s, a, b),
                CmpOp::Tst => {
                    let v = a.map2(b, |x, y| x & y);
                    set_nz(s, v);
                    if let Some(c) = carry {
                        s.set_flag(Flag::C, c);
                    }
                }
            }
        }
        Body::Mul { rd, rm, rs } => {
            let v = s.operand_reg(*rm, at).map2(s.operand_reg(*rs, at), u32::wrapping_mul);
            s.set_reg(*rd, v);
            if i.sets_flags {
                set_nz(s, v);
                s.set_flag(Flag::C, Trit::Bot);
            }
        }
        Body::Mla { rd, rm, rs, rn } => {
            let v = s
                .operand_reg(*rm, at)
                .map2(s.operand_reg(*rs, at), u32::wrapping_mul)
                .map2(s.operand_reg(*rn, at), u32::wrapping_add);
            s.set_reg(*rd, v);
            if i.sets_flags {
                set_nz(s, v);
                s.set_flag(Flag::C, Trit::Bot);
            }
        }
        Body::Smull { rdlo, rdhi, rm, rs } => {
            let (lo, hi) = match (s.operand_reg(*rm, at), s.operand_reg(*rs, at)) {
                (Value::Known(a), Value::Known(b)) => {
                    let p = (a as i32 as i64).wrapping_mul(b as i32 as i64) as u64;
                    (Value::Known(p as u32), Value::Known((p >> 32) as u32))
                }
                _ => (Value::Bot, Value::Bot),
            };
            s.set_reg(*rdlo, lo);
            s.set_reg(*rdhi, hi);
            if i.sets_flags {
                set_nz(s, hi);
                s.set_flag(Flag::C, Trit::Bot);
            }
        }
        Body::Ldr { rd, base, offset } => {
            let b = s.operand_reg(*base, at);
            let off = eval_offset(s, at, offset);
            let addr = b
                .map2(off, u32::wrapping_add)
                .known()
                .ok_or(StepError::UndefinedMemoryBase(at))?;
            addrs.insert(addr);
            let v = if *base == SP { s.stack_read(addr) } else { Value::Bot };
            if *rd == PC {
                pc = PcEffect::Indirect(v);
            } else {
                s.set_reg(*rd, v);
            }
        }
        Body::Str { rd, base, offset } => {
            let b = s.operand_reg(*base, at);
            let off = eval_offset(s, at, offset);
            let addr = b
                .map2(off, u32::wrapping_add)
                .known()
                .ok_or(StepError::UndefinedMemoryBase(at))?;
            addrs.insert(addr);
            if *base == SP {
                let v = s.operand_reg(*rd, at);
                s.stack_write(addr, v);
            }
            // Writes outside the stack are timing-relevant but value-irrelevant.
        }
        Body::Multi { load, mode, base, writeback, regs } => {
            let b = s
                .operand_reg(*base, at)
                .known()
                .ok_or(StepError::UndefinedMemoryBase(at))?;
            let n = regs.len() as u32;
            let list = multi_addresses(*mode, b, n);
            addrs.extend(list.iter().copied());
            if *load {
                let mut loaded_pc = None;
                for (r, a) in regs.iter().zip(&list) {
                    let v = if *base == SP { s.stack_read(*a) } else { Value::Bot };
                    if *r == PC {
                        loaded_pc = Some(v);
                    } else {
                        s.set_reg(*r, v);
                    }
                }
                if let Some(v) = loaded_pc {
                    pc = PcEffect::Indirect(v);
                }
            } else if *base == SP {
                for (r, a) in regs.iter().zip(&list) {
                    let v = s.operand_reg(*r, at);
                    s.stack_write(*a, v);
                }
            }
            if *writeback {
                s.set_reg(*base, Value::Known(multi_writeback(*mode, b, n)));
            }
        }
        Body::B { link, target } => {
            if *link {
                s.set_reg(crate::listing::LR, Value::Known(at.wrapping_add(4)));
            }
            pc = PcEffect::Jump(*target);
        }
        Body::Bx { rm } => {
            pc = PcEffect::Indirect(s.operand_reg(*rm, at));
        }
    }
    Ok(ExecOutcome { pc, addrs })
}

/// One step of the extended symbolic semantics.
///
/// Returns one successor for a resolved condition and two (taken then
/// not-taken) when the condition is ⊥. An indirect jump through ⊥ yields a
/// successor whose pc is ⊥, the end/error marker.
pub fn step(s: &SymState, i: &LabeledInstruction) -> Result<Vec<SymState>, StepError> {
    debug_assert_eq!(s.pc(), Value::Known(i.address));
    let fall = i.address.wrapping_add(4);
    let run = |executed: bool| -> Result<SymState, StepError> {
        let mut next = s.clone();
        if !executed {
            next.set_pc(Value::Known(fall));
            return Ok(next);
        }
        let out = exec_body(&mut next, i)?;
        match out.pc {
            PcEffect::Sequential => next.set_pc(Value::Known(fall)),
            PcEffect::Jump(t) => next.set_pc(Value::Known(t)),
            PcEffect::Indirect(v) => next.set_pc(v),
        }
        Ok(next)
    };
    match eval_cond(&s.flags, i.cond) {
        Trit::True => Ok(vec![run(true)?]),
        Trit::False => Ok(vec![run(false)?]),
        Trit::Bot => Ok(vec![run(true)?, run(false)?]),
    }
}

/// Addresses an executed instruction would reference in state `s`, without
/// mutating anything.
pub fn referenced_addrs(s: &SymState, i: &LabeledInstruction) -> Result<BTreeSet<u32>, StepError> {
    if !is_memory(i) {
        return Ok(BTreeSet::new());
    }
    let mut scratch = s.clone();
    Ok(exec_body(&mut scratch, i)?.addrs)
}

/// Trace triple for a resolved executed flag.
pub fn trace_triple_resolved(
    s: &SymState,
    i: &LabeledInstruction,
    executed: bool,
) -> Result<TraceTriple, StepError> {
    let addrs = if executed { referenced_addrs(s, i)? } else { BTreeSet::new() };
    Ok(TraceTriple { instr: i.clone(), addrs, executed })
}

/// Trace triple (ι, A, d) of instruction `i` in state `s`.
///
/// Errors with `UnresolvedCondition` when the condition evaluates to ⊥; the
/// simulators resolve the fork and call [`trace_triple_resolved`].
pub fn trace_triple(s: &SymState, i: &LabeledInstruction) -> Result<TraceTriple, StepError> {
    match eval_cond(&s.flags, i.cond) {
        Trit::True => trace_triple_resolved(s, i, true),
        Trit::False => trace_triple_resolved(s, i, false),
        Trit::Bot => Err(StepError::UnresolvedCondition(i.address)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::listing::parse_listing;

    fn instr(text: &str) -> LabeledInstruction {
        let listing = format!("00000000 <main>:\n0: {text}\n");
        parse_listing(&listing).unwrap().instr(0).unwrap().clone()
    }

    fn instr_at(addr: u32, text: &str) -> LabeledInstruction {
        let listing = format!("00000000 <main>:\n{addr}: {text}\n");
        parse_listing(&listing).unwrap().instr(addr).unwrap().clone()
    }

    #[test]
    fn eval_cond_examples() {
        let mut flags = [Trit::False; 4];
        flags[Flag::Z as usize] = Trit::True;
        assert_eq!(eval_cond(&flags, Cond::Eq), Trit::True);
        flags[Flag::Z as usize] = Trit::Bot;
        assert_eq!(eval_cond(&flags, Cond::Al), Trit::True);
        let mut flags = [Trit::False; 4];
        flags[Flag::N as usize] = Trit::Bot;
        assert_eq!(eval_cond(&flags, Cond::Ge), Trit::Bot);
    }

    #[test]
    fn ref_def_paper_cases() {
        let rd = ref_def(&instr("add r2,r1,#1"));
        assert_eq!(rd.refs, BTreeSet::from([Var::Reg(Reg(1))]));
        assert_eq!(rd.defs, BTreeSet::from([Var::Reg(Reg(2)), Var::Reg(PC)]));

        let rd = ref_def(&instr("push {r0,r1}"));
        assert_eq!(
            rd.refs,
            BTreeSet::from([Var::Reg(Reg(0)), Var::Reg(Reg(1)), Var::Reg(SP)])
        );
        assert_eq!(
            rd.defs,
            BTreeSet::from([Var::Reg(SP), Var::Stack, Var::Reg(PC)])
        );

        let rd = ref_def(&instr("str r2,[r1, r3 lsl #2]"));
        assert_eq!(
            rd.refs,
            BTreeSet::from([Var::Reg(Reg(1)), Var::Reg(Reg(2)), Var::Reg(Reg(3))])
        );
        assert_eq!(rd.defs, BTreeSet::from([Var::Reg(PC)]));
    }

    #[test]
    fn step_stack_load() {
        let mut s = SymState::new();
        s.set_reg(SP, Value::Known(12));
        s.stack_write(16, Value::Known(99));
        let succ = step(&s, &instr("ldr r0,[sp,#4]")).unwrap();
        assert_eq!(succ.len(), 1);
        assert_eq!(succ[0].reg(Reg(0)), Value::Known(99));
        assert_eq!(succ[0].pc(), Value::Known(4));
    }

    #[test]
    fn step_forks_on_bot_condition() {
        let i = instr_at(92, "ble 24");
        let mut s = SymState::new();
        s.set_pc(Value::Known(92));
        set_all_flags_bot(&mut s);
        let succ = step(&s, &i).unwrap();
        let pcs: BTreeSet<Value> = succ.iter().map(|x| x.pc()).collect();
        assert_eq!(pcs, BTreeSet::from([Value::Known(24), Value::Known(96)]));
    }

    #[test]
    fn bot_propagates_through_alu() {
        let mut s = SymState::new();
        s.set_reg(Reg(1), Value::Bot);
        let succ = step(&s, &instr("add r2,r1,#1")).unwrap();
        assert_eq!(succ.len(), 1);
        assert_eq!(succ[0].reg(Reg(2)), Value::Bot);
    }

    #[test]
    fn bx_bot_is_end_marker() {
        let mut s = SymState::new();
        s.set_reg(Reg(5), Value::Bot);
        let succ = step(&s, &instr("bx r5")).unwrap();
        assert_eq!(succ[0].pc(), Value::Bot);
    }

    #[test]
    fn trace_triple_stm_descends_from_base() {
        let mut s = SymState::new();
        s.set_reg(SP, Value::Known(12));
        let t = trace_triple(&s, &instr("stm sp,{r0,r1}")).unwrap();
        assert_eq!(t.addrs, BTreeSet::from([12, 8]));
        assert!(t.executed);
    }

    #[test]
    fn trace_triple_skipped_conditional_is_empty() {
        let i = instr_at(128, "addle r1,r1,#1");
        let mut s = SymState::new();
        s.set_pc(Value::Known(128));
        // gt context: N=V=0, Z=0 -> le false
        let t = trace_triple(&s, &i).unwrap();
        assert!(!t.executed);
        assert!(t.addrs.is_empty());

        let t = trace_triple(&s, &instr("mov r1,#30")).unwrap();
        assert!(t.executed);
        assert!(t.addrs.is_empty());
    }

    #[test]
    fn ldm_ascends_from_base() {
        let mut s = SymState::new();
        s.set_reg(SP, Value::Known(100));
        let t = trace_triple(&s, &instr("ldm sp,{r0,r1}")).unwrap();
        assert_eq!(t.addrs, BTreeSet::from([100, 104]));
    }

    #[test]
    fn pc_relative_load_reads_plus_eight() {
        let i = instr_at(12, "ldr r0,[pc,#4]");
        let mut s = SymState::new();
        s.set_pc(Value::Known(12));
        let t = trace_triple(&s, &i).unwrap();
        // pc reads as address + 8.
        assert_eq!(t.addrs, BTreeSet::from([24]));
        let succ = step(&s, &i).unwrap();
        assert_eq!(succ[0].reg(Reg(0)), Value::Bot);
    }

    #[test]
    fn undefined_memory_base_errors() {
        let mut s = SymState::new();
        s.set_reg(Reg(1), Value::Bot);
        assert_eq!(
            step(&s, &instr("ldr r0,[r1,#0]")),
            Err(StepError::UndefinedMemoryBase(0))
        );
    }

    #[test]
    fn push_writes_below_sp_and_decrements() {
        let mut s = SymState::new();
        s.set_reg(SP, Value::Known(4096));
        s.set_reg(crate::listing::LR, Value::Known(3));
        let succ = step(&s, &instr("push {lr}")).unwrap();
        assert_eq!(succ[0].reg(SP), Value::Known(4092));
        assert_eq!(succ[0].stack_read(4092), Value::Known(3));
    }
}

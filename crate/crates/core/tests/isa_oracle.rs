//! Property tests for the instruction semantics.
//!
//! The reference interpreter below evaluates instructions directly over plain
//! 32-bit integers and a flat memory map, independently of the symbolic
//! semantics; on fully known states the two must agree exactly.

use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use wcet_core::isa::{self, step, SymState, Trit, Value, Var};
use wcet_core::listing::{parse_listing, LabeledInstruction, Reg, SP};

/// Direct two's-complement interpreter over concrete words.
#[derive(Debug, Clone, PartialEq)]
struct Machine {
    regs: [u32; 16],
    n: bool,
    z: bool,
    c: bool,
    v: bool,
    mem: HashMap<u32, u32>,
}

impl Machine {
    fn reg(&self, r: Reg) -> u32 {
        if r == wcet_core::listing::PC {
            self.regs[15].wrapping_add(8)
        } else {
            self.regs[r.0 as usize]
        }
    }

    fn cond_true(&self, c: wcet_core::listing::Cond) -> bool {
        use wcet_core::listing::Cond::*;
        match c {
            Al => true,
            Eq => self.z,
            Ne => !self.z,
            Le => self.z || (self.n != self.v),
            Gt => !self.z && (self.n == self.v),
            Ge => self.n == self.v,
            Lt => self.n != self.v,
        }
    }

    fn nz(&mut self, x: u32) {
        self.n = x & 0x8000_0000 != 0;
        self.z = x == 0;
    }

    fn run(&mut self, i: &LabeledInstruction) {
        use wcet_core::listing::{AluOp, Body, CmpOp, MemOffset, MultiMode, Op2, ShiftKind};
        let at = i.address;
        assert_eq!(self.regs[15], at);
        if !self.cond_true(i.cond) {
            self.regs[15] = at.wrapping_add(4);
            return;
        }
        let op2 = |m: &Machine, o: &Op2| -> u32 {
            match o {
                Op2::Imm(v) => *v,
                Op2::Reg(r) => m.reg(*r),
                Op2::ShiftedReg(r, k, s) => {
                    let x = m.reg(*r);
                    match k {
                        ShiftKind::Lsl => {
                            if *s >= 32 {
                                0
                            } else {
                                x << s
                            }
                        }
                        ShiftKind::Lsr => {
                            if *s >= 32 {
                                0
                            } else {
                                x >> s
                            }
                        }
                        ShiftKind::Asr => ((x as i32) >> (*s).min(31)) as u32,
                    }
                }
            }
        };
        let mut next_pc = at.wrapping_add(4);
        match &i.body {
            Body::Mov { rd, op2: o } => {
                let v = op2(self, o);
                self.regs[rd.0 as usize] = v;
                if i.sets_flags {
                    self.nz(v);
                }
            }
            Body::Mvn { rd, op2: o } => {
                let v = !op2(self, o);
                self.regs[rd.0 as usize] = v;
                if i.sets_flags {
                    self.nz(v);
                }
            }
            Body::Alu { op, rd, rn, op2: o } => {
                let a = self.reg(*rn);
                let b = op2(self, o);
                let v = match op {
                    AluOp::Add => a.wrapping_add(b),
                    AluOp::Sub => a.wrapping_sub(b),
                    AluOp::Rsb => b.wrapping_sub(a),
                    AluOp::And => a & b,
                    AluOp::Orr => a | b,
                    AluOp::Eor => a ^ b,
                };
                if i.sets_flags {
                    match op {
                        AluOp::Add => {
                            self.nz(v);
                            self.c = (a as u64 + b as u64) > u32::MAX as u64;
                            self.v = (!(a ^ b) & (a ^ v)) & 0x8000_0000 != 0;
                        }
                        AluOp::Sub => {
                            self.nz(v);
                            self.c = a >= b;
                            self.v = ((a ^ b) & (a ^ v)) & 0x8000_0000 != 0;
                        }
                        AluOp::Rsb => {
                            self.nz(v);
                            self.c = b >= a;
                            self.v = ((b ^ a) & (b ^ v)) & 0x8000_0000 != 0;
                        }
                        _ => self.nz(v),
                    }
                }
                self.regs[rd.0 as usize] = v;
            }
            Body::Cmp { op, rn, op2: o } => {
                let a = self.reg(*rn);
                let b = op2(self, o);
                match op {
                    CmpOp::Cmp => {
                        let v = a.wrapping_sub(b);
                        self.nz(v);
                        self.c = a >= b;
                        self.v = ((a ^ b) & (a ^ v)) & 0x8000_0000 != 0;
                    }
                    CmpOp::Cmn => {
                        let v = a.wrapping_add(b);
                        self.nz(v);
                        self.c = (a as u64 + b as u64) > u32::MAX as u64;
                        self.v = (!(a ^ b) & (a ^ v)) & 0x8000_0000 != 0;
                    }
                    CmpOp::Tst => self.nz(a & b),
                }
            }
            Body::Mul { rd, rm, rs } => {
                let v = self.reg(*rm).wrapping_mul(self.reg(*rs));
                self.regs[rd.0 as usize] = v;
                if i.sets_flags {
                    self.nz(v);
                }
            }
            Body::Mla { rd, rm, rs, rn } => {
                let v = self
                    .reg(*rm)
                    .wrapping_mul(self.reg(*rs))
                    .wrapping_add(self.reg(*rn));
                self.regs[rd.0 as usize] = v;
                if i.sets_flags {
                    self.nz(v);
                }
            }
            Body::Smull { rdlo, rdhi, rm, rs } => {
                let p = (self.reg(*rm) as i32 as i64).wrapping_mul(self.reg(*rs) as i32 as i64)
                    as u64;
                self.regs[rdlo.0 as usize] = p as u32;
                self.regs[rdhi.0 as usize] = (p >> 32) as u32;
                if i.sets_flags {
                    self.nz((p >> 32) as u32);
                }
            }
            Body::Ldr { rd, base, offset } => {
                let off = match offset {
                    MemOffset::Imm(v) => *v as u32,
                    MemOffset::Reg(r) => self.reg(*r),
                    MemOffset::ShiftedReg(r, k, s) => {
                        op2(self, &Op2::ShiftedReg(*r, *k, *s))
                    }
                };
                let a = self.reg(*base).wrapping_add(off);
                self.regs[rd.0 as usize] = self.mem.get(&a).copied().unwrap_or(0);
            }
            Body::Str { rd, base, offset } => {
                let off = match offset {
                    MemOffset::Imm(v) => *v as u32,
                    MemOffset::Reg(r) => self.reg(*r),
                    MemOffset::ShiftedReg(r, k, s) => {
                        op2(self, &Op2::ShiftedReg(*r, *k, *s))
                    }
                };
                let a = self.reg(*base).wrapping_add(off);
                self.mem.insert(a, self.reg(*rd));
            }
            Body::Multi { load, mode, base, writeback, regs } => {
                let b = self.reg(*base);
                let n = regs.len() as u32;
                let lowest = match mode {
                    MultiMode::Ia => b,
                    MultiMode::Db => b.wrapping_sub(4 * n),
                    MultiMode::Da => b.wrapping_sub(4 * (n - 1)),
                };
                for (k, r) in regs.iter().enumerate() {
                    let a = lowest.wrapping_add(4 * k as u32);
                    if *load {
                        self.regs[r.0 as usize] = self.mem.get(&a).copied().unwrap_or(0);
                    } else {
                        self.mem.insert(a, self.reg(*r));
                    }
                }
                if *writeback {
                    let nb = match mode {
                        MultiMode::Ia => b.wrapping_add(4 * n),
                        _ => b.wrapping_sub(4 * n),
                    };
                    self.regs[base.0 as usize] = nb;
                }
            }
            Body::B { link, target } => {
                if *link {
                    self.regs[14] = at.wrapping_add(4);
                }
                next_pc = *target;
            }
            Body::Bx { rm } => {
                next_pc = self.reg(*rm);
            }
        }
        self.regs[15] = next_pc;
    }
}

/// Lines covering every instruction class; `{a}`/`{b}`/`{c}` are substituted
/// with small random values.
const TEMPLATES: &[&str] = &[
    "mov r{a},#{imm}",
    "movs r{a},r{b}",
    "mvn r{a},r{b} lsr #3",
    "add r{a},r{b},#{imm}",
    "adds r{a},r{b},r{c}",
    "subs r{a},r{b},r{c}",
    "rsbs r{a},r{b},#{imm}",
    "and r{a},r{b},r{c} lsl #2",
    "orr r{a},r{b},#{imm}",
    "eor r{a},r{b},r{c}",
    "cmp r{a},r{b}",
    "cmp r{a},#{imm}",
    "cmn r{a},r{b}",
    "tst r{a},#{imm}",
    "mul r{a},r{b},r{c}",
    "mla r{a},r{b},r{c},r{a}",
    "smull r{a},r{b},r{c},r{c}",
    "addeq r{a},r{b},#{imm}",
    "suble r{a},r{b},#{imm}",
    "movgt r{a},#{imm}",
    "ldr r{a},[sp,#{off}]",
    "str r{a},[sp,#{off}]",
    "ldm sp,{r{a},r{b2}}",
    "stm sp,{r{a},r{b2}}",
    "stmdb sp!,{r{a},r{b2}}",
    "ldmia sp!,{r{a},r{b2}}",
    "b 64",
    "bl 64",
    "bgt 64",
];

fn render(template: &str, a: u8, b: u8, c: u8, imm: u32, off: u32) -> String {
    let b2 = if b == a { (a + 1) % 10 } else { b };
    let (lo, hi) = if a.min(b2) == a { (a, b2) } else { (b2, a) };
    template
        .replace("{a}", &lo.to_string())
        .replace("{b2}", &hi.to_string())
        .replace("{b}", &b.to_string())
        .replace("{c}", &c.to_string())
        .replace("{imm}", &imm.to_string())
        .replace("{off}", &(off * 4).to_string())
}

fn parse_one(line: &str) -> LabeledInstruction {
    let listing = format!("00000000 <main>:\n0: {line}\n");
    parse_listing(&listing)
        .unwrap_or_else(|e| panic!("{line}: {e}"))
        .instr(0)
        .unwrap()
        .clone()
}

const SP_BASE: u32 = 0x400;

fn known_state(regs: &[u32; 10], flags: (bool, bool, bool, bool), cells: &[u32; 8]) -> SymState {
    let mut s = SymState::new();
    for (i, v) in regs.iter().enumerate() {
        s.set_reg(Reg(i as u8), Value::Known(*v));
    }
    s.set_reg(SP, Value::Known(SP_BASE));
    s.set_flag(isa::Flag::N, Trit::from_bool(flags.0));
    s.set_flag(isa::Flag::Z, Trit::from_bool(flags.1));
    s.set_flag(isa::Flag::C, Trit::from_bool(flags.2));
    s.set_flag(isa::Flag::V, Trit::from_bool(flags.3));
    for (k, v) in cells.iter().enumerate() {
        s.stack_write(SP_BASE - 16 + 4 * k as u32, Value::Known(*v));
    }
    s
}

fn machine_of(s: &SymState) -> Machine {
    let mut m = Machine {
        regs: [0; 16],
        n: s.flag(isa::Flag::N) == Trit::True,
        z: s.flag(isa::Flag::Z) == Trit::True,
        c: s.flag(isa::Flag::C) == Trit::True,
        v: s.flag(isa::Flag::V) == Trit::True,
        mem: HashMap::new(),
    };
    for i in 0..16 {
        m.regs[i] = s.regs[i].known().unwrap();
    }
    for (k, v) in &s.stack {
        m.mem.insert(*k, v.known().unwrap());
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    /// Concrete soundness: on fully known states the symbolic step agrees
    /// with the direct interpreter on every register, flag, and stack cell.
    #[test]
    fn step_matches_reference_interpreter(
        tidx in 0usize..TEMPLATES.len(),
        a in 0u8..10, b in 0u8..10, c in 0u8..10,
        imm in 0u32..64,
        off in 0u32..4,
        regs in proptest::array::uniform10(0u32..1_000_000),
        flags in (any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>()),
        cells in proptest::array::uniform8(0u32..1000),
    ) {
        let instr = parse_one(&render(TEMPLATES[tidx], a, b, c, imm, off));
        let s = known_state(&regs, flags, &cells);
        let mut m = machine_of(&s);
        let succ = step(&s, &instr).unwrap();
        prop_assert_eq!(succ.len(), 1, "known state must not fork");
        let s2 = &succ[0];
        m.run(&instr);
        for i in 0..16 {
            prop_assert_eq!(s2.regs[i], Value::Known(m.regs[i]), "r{} after {}", i, instr.text());
        }
        // Flags may be conservatively unknown only where the documented
        // carry shortcuts apply; known flags must agree.
        for (f, mv) in [(isa::Flag::N, m.n), (isa::Flag::Z, m.z), (isa::Flag::C, m.c), (isa::Flag::V, m.v)] {
            if let Some(x) = s2.flag(f).known() {
                prop_assert_eq!(x, mv, "flag {:?} after {}", f, instr.text());
            }
        }
        // N and Z are always precise on known inputs.
        prop_assert!(s2.flag(isa::Flag::N).known().is_some());
        prop_assert!(s2.flag(isa::Flag::Z).known().is_some());
        for (k, v) in &s2.stack {
            prop_assert_eq!(v.known().unwrap(), m.mem.get(k).copied().unwrap_or(0), "cell {}", k);
        }
    }

    /// ⊥-monotonicity (property π): degrading inputs to ⊥ only widens the
    /// successor set; every successor of the precise state is matched by a
    /// successor of the degraded state that agrees on all its known parts.
    #[test]
    fn step_is_bot_monotone(
        tidx in 0usize..TEMPLATES.len(),
        a in 0u8..10, b in 0u8..10, c in 0u8..10,
        imm in 0u32..64,
        off in 0u32..4,
        regs in proptest::array::uniform10(0u32..1_000_000),
        flags in (any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>()),
        cells in proptest::array::uniform8(0u32..1000),
        drop_regs in proptest::collection::vec(0usize..10, 0..4),
        drop_flags in proptest::collection::vec(0usize..4, 0..3),
        drop_cells in proptest::collection::vec(0usize..8, 0..4),
    ) {
        let instr = parse_one(&render(TEMPLATES[tidx], a, b, c, imm, off));
        let s = known_state(&regs, flags, &cells);
        let mut weak = s.clone();
        for r in drop_regs {
            // sp stays known: a ⊥ stack pointer is an A2 violation, not an input.
            weak.regs[r] = Value::Bot;
        }
        for f in drop_flags {
            weak.flags[f] = Trit::Bot;
        }
        for k in drop_cells {
            weak.stack.insert(SP_BASE - 16 + 4 * k as u32, Value::Bot);
        }
        let precise = step(&s, &instr).unwrap();
        let degraded = step(&weak, &instr).unwrap();
        for t in &precise {
            let matched = degraded.iter().any(|t2| {
                (0..16).all(|i| t2.regs[i].is_bot() || t2.regs[i] == t.regs[i])
                    && t2.flags.iter().zip(&t.flags).all(|(w, p)| *w == Trit::Bot || w == p)
                    && t2.stack.iter().all(|(k, v)| {
                        v.is_bot() || t.stack.get(k).map(|x| x == v).unwrap_or(false)
                    })
            });
            prop_assert!(matched, "{}: no degraded successor covers the precise one", instr.text());
        }
    }

    /// DEF adequacy: everything step changes is declared in defs. REF
    /// adequacy: mutating a component outside refs leaves the outputs and the
    /// branching structure untouched.
    #[test]
    fn ref_def_covers_the_semantics(
        tidx in 0usize..TEMPLATES.len(),
        a in 0u8..10, b in 0u8..10, c in 0u8..10,
        imm in 0u32..64,
        off in 0u32..4,
        regs in proptest::array::uniform10(0u32..1_000_000),
        flags in (any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>()),
        cells in proptest::array::uniform8(0u32..1000),
        probe in 0usize..14,
    ) {
        let instr = parse_one(&render(TEMPLATES[tidx], a, b, c, imm, off));
        let rd = isa::ref_def(&instr);
        let s = known_state(&regs, flags, &cells);
        let succ = step(&s, &instr).unwrap();
        let s2 = &succ[0];

        // defs cover the changes
        for i in 0..16 {
            if s2.regs[i] != s.regs[i] {
                prop_assert!(rd.defs.contains(&Var::Reg(Reg(i as u8))), "{}: r{} changed", instr.text(), i);
            }
        }
        for (fi, f) in [isa::Flag::N, isa::Flag::Z, isa::Flag::C, isa::Flag::V].iter().enumerate() {
            if s2.flags[fi] != s.flags[fi] {
                prop_assert!(rd.defs.contains(&Var::Flag(*f)), "{}: flag changed", instr.text());
            }
        }
        let stack_changed = s2.stack != s.stack;
        if stack_changed {
            prop_assert!(
                rd.defs.contains(&Var::Stack),
                "{}: stack changed without a stack def", instr.text()
            );
        }

        // refs cover the inputs: perturb one non-referenced register
        let reg = Reg((probe % 13) as u8);
        if !rd.refs.contains(&Var::Reg(reg)) && !rd.defs.contains(&Var::Reg(reg)) && reg != SP {
            let mut s3 = s.clone();
            s3.set_reg(reg, Value::Known(s.reg(reg).known().unwrap() ^ 0x5a5a));
            let succ3 = step(&s3, &instr).unwrap();
            prop_assert_eq!(succ3.len(), succ.len());
            // Outputs written by the instruction are unchanged.
            for d in &rd.defs {
                match d {
                    Var::Reg(r) => prop_assert_eq!(succ3[0].reg(*r), s2.reg(*r)),
                    Var::Flag(f) => prop_assert_eq!(succ3[0].flag(*f), s2.flag(*f)),
                    _ => {}
                }
            }
            prop_assert_eq!(&succ3[0].stack, &s2.stack);
        }
    }
}

#[test]
fn trace_triples_need_resolved_conditions() {
    let instr = parse_one("addle r1,r1,#1");
    let mut s = SymState::new();
    s.set_flag(isa::Flag::Z, Trit::Bot);
    assert!(matches!(
        isa::trace_triple(&s, &instr),
        Err(isa::StepError::UnresolvedCondition(0))
    ));
    let t = isa::trace_triple_resolved(&s, &instr, false).unwrap();
    assert!(!t.executed);
    assert_eq!(t.addrs, BTreeSet::new());
}

//! Parser for objdump-style disassembly listings.
//!
//! Two listing flavors are accepted:
//!
//! * objdump form: `ADDR:  HEX  MNEMONIC OPERANDS` with symbol lines
//!   `HEXADDR <name>:`. Addresses are decimal unless `0x`-prefixed. A machine
//!   code column (exactly 8 hex digits) is accepted and ignored; the mnemonic
//!   text is authoritative.
//! * assembler-source form: addressless instruction lines with `label:` lines;
//!   instructions are assigned sequential word addresses starting at 0 and
//!   symbolic branch targets resolve to label addresses.
//!
//! Branch targets followed by a `<sym+0xOFF>` annotation take their value from
//! the annotation (objdump prints those targets in hex).

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// A register index. 13 = sp, 14 = lr, 15 = pc.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Reg(pub u8);

pub const SP: Reg = Reg(13);
pub const LR: Reg = Reg(14);
pub const PC: Reg = Reg(15);

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            13 => write!(f, "sp"),
            14 => write!(f, "lr"),
            15 => write!(f, "pc"),
            n => write!(f, "r{n}"),
        }
    }
}

/// Condition code of an instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cond {
    Al,
    Eq,
    Ne,
    Le,
    Gt,
    Ge,
    Lt,
}

impl Cond {
    pub fn suffix(self) -> &'static str {
        match self {
            Cond::Al => "",
            Cond::Eq => "eq",
            Cond::Ne => "ne",
            Cond::Le => "le",
            Cond::Gt => "gt",
            Cond::Ge => "ge",
            Cond::Lt => "lt",
        }
    }
}

/// Barrel shifter kinds allowed in operands (immediate shift amounts only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ShiftKind {
    Lsl,
    Lsr,
    Asr,
}

impl fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShiftKind::Lsl => write!(f, "lsl"),
            ShiftKind::Lsr => write!(f, "lsr"),
            ShiftKind::Asr => write!(f, "asr"),
        }
    }
}

/// Flexible second operand of data-processing instructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op2 {
    Imm(u32),
    Reg(Reg),
    ShiftedReg(Reg, ShiftKind, u8),
}

impl fmt::Display for Op2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op2::Imm(v) => write!(f, "#{}", *v as i32),
            Op2::Reg(r) => write!(f, "{r}"),
            Op2::ShiftedReg(r, k, n) => write!(f, "{r} {k} #{n}"),
        }
    }
}

/// Offset part of a `[base, offset]` address expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemOffset {
    Imm(i32),
    Reg(Reg),
    ShiftedReg(Reg, ShiftKind, u8),
}

impl fmt::Display for MemOffset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MemOffset::Imm(v) => write!(f, "#{v}"),
            MemOffset::Reg(r) => write!(f, "{r}"),
            MemOffset::ShiftedReg(r, k, n) => write!(f, "{r} {k} #{n}"),
        }
    }
}

/// Addressing mode of a multiple load/store.
///
/// `Da` is the convention used for a bare `stm`: the highest-numbered register
/// is stored at the base address and the others below it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MultiMode {
    Ia,
    Db,
    Da,
}

/// Three-operand ALU opcodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    Rsb,
    And,
    Orr,
    Eor,
}

impl AluOp {
    pub fn name(self) -> &'static str {
        match self {
            AluOp::Add => "add",
            AluOp::Sub => "sub",
            AluOp::Rsb => "rsb",
            AluOp::And => "and",
            AluOp::Orr => "orr",
            AluOp::Eor => "eor",
        }
    }
}

/// Comparison opcodes (flag-setting, no destination).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Cmp,
    Cmn,
    Tst,
}

impl CmpOp {
    pub fn name(self) -> &'static str {
        match self {
            CmpOp::Cmp => "cmp",
            CmpOp::Cmn => "cmn",
            CmpOp::Tst => "tst",
        }
    }
}

/// Decoded instruction body.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Body {
    Mov { rd: Reg, op2: Op2 },
    Mvn { rd: Reg, op2: Op2 },
    Alu { op: AluOp, rd: Reg, rn: Reg, op2: Op2 },
    Cmp { op: CmpOp, rn: Reg, op2: Op2 },
    Mul { rd: Reg, rm: Reg, rs: Reg },
    Mla { rd: Reg, rm: Reg, rs: Reg, rn: Reg },
    Smull { rdlo: Reg, rdhi: Reg, rm: Reg, rs: Reg },
    Ldr { rd: Reg, base: Reg, offset: MemOffset },
    Str { rd: Reg, base: Reg, offset: MemOffset },
    Multi { load: bool, mode: MultiMode, base: Reg, writeback: bool, regs: Vec<Reg> },
    B { link: bool, target: u32 },
    Bx { rm: Reg },
}

/// One `(address, instruction)` pair of the program.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabeledInstruction {
    pub address: u32,
    pub cond: Cond,
    pub sets_flags: bool,
    pub body: Body,
    pub raw_text: String,
}

impl LabeledInstruction {
    /// Canonical text of the instruction, without address.
    pub fn text(&self) -> String {
        let c = self.cond.suffix();
        let s = if self.sets_flags { "s" } else { "" };
        match &self.body {
            Body::Mov { rd, op2 } => format!("mov{c}{s} {rd},{op2}"),
            Body::Mvn { rd, op2 } => format!("mvn{c}{s} {rd},{op2}"),
            Body::Alu { op, rd, rn, op2 } => format!("{}{c}{s} {rd},{rn},{op2}", op.name()),
            Body::Cmp { op, rn, op2 } => format!("{}{c} {rn},{op2}", op.name()),
            Body::Mul { rd, rm, rs } => format!("mul{c}{s} {rd},{rm},{rs}"),
            Body::Mla { rd, rm, rs, rn } => format!("mla{c}{s} {rd},{rm},{rs},{rn}"),
            Body::Smull { rdlo, rdhi, rm, rs } => format!("smull{c}{s} {rdlo},{rdhi},{rm},{rs}"),
            Body::Ldr { rd, base, offset } => format!("ldr{c} {rd},[{base},{offset}]"),
            Body::Str { rd, base, offset } => format!("str{c} {rd},[{base},{offset}]"),
            Body::Multi { load, mode, base, writeback, regs } => {
                let name = if *load { "ldm" } else { "stm" };
                let m = match (load, mode) {
                    (true, MultiMode::Ia) => "ia",
                    (false, MultiMode::Ia) => "ia",
                    (false, MultiMode::Db) => "db",
                    (false, MultiMode::Da) => "",
                    (true, MultiMode::Db) => "db",
                    (true, MultiMode::Da) => "",
                };
                let wb = if *writeback { "!" } else { "" };
                let list: Vec<String> = regs.iter().map(|r| r.to_string()).collect();
                format!("{name}{m}{c} {base}{wb},{{{}}}", list.join(","))
            }
            Body::B { link, target } => {
                format!("{}{c} {target}", if *link { "bl" } else { "b" })
            }
            Body::Bx { rm } => format!("bx{c} {rm}"),
        }
    }

    /// True if the instruction can write a non-sequential pc when executed.
    pub fn writes_pc_explicitly(&self) -> bool {
        match &self.body {
            Body::B { .. } | Body::Bx { .. } => true,
            Body::Mov { rd, .. } | Body::Mvn { rd, .. } => *rd == PC,
            Body::Alu { rd, .. } => *rd == PC,
            Body::Mul { rd, .. } | Body::Mla { rd, .. } => *rd == PC,
            Body::Smull { rdlo, rdhi, .. } => *rdlo == PC || *rdhi == PC,
            Body::Ldr { rd, .. } => *rd == PC,
            Body::Multi { load: true, regs, .. } => regs.contains(&PC),
            _ => false,
        }
    }
}

/// A parsed program: address-keyed instructions plus symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub instructions: BTreeMap<u32, LabeledInstruction>,
    pub symbols: BTreeMap<String, u32>,
    pub entry: u32,
}

impl Program {
    pub fn instr(&self, addr: u32) -> Option<&LabeledInstruction> {
        self.instructions.get(&addr)
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Canonical listing text: decimal addresses, normalized mnemonics.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut by_addr: BTreeMap<u32, &str> = BTreeMap::new();
        for (name, addr) in &self.symbols {
            by_addr.insert(*addr, name);
        }
        for (addr, instr) in &self.instructions {
            if let Some(name) = by_addr.get(addr) {
                out.push_str(&format!("{addr:08x} <{name}>:\n"));
            }
            out.push_str(&format!("{addr}: {}\n", instr.text()));
        }
        out
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {0}: malformed line")]
    MalformedLine(usize),
    #[error("line {0}: unsupported mnemonic `{1}`")]
    UnsupportedMnemonic(usize, String),
    #[error("duplicate address {0}")]
    DuplicateAddress(u32),
    #[error("non word-aligned address {0}")]
    NonAlignedAddress(u32),
}

/// A structural-assumption warning from [`validate_assumptions`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Warning {
    /// Memory access whose base register is neither sp nor pc: the analysis
    /// relies on such accesses never touching the stack and never feeding
    /// control flow.
    NonSpMemoryBase { addr: u32, base: Reg },
    /// A `bl` whose target is already on the static call chain.
    PossibleRecursion { addr: u32, target: u32 },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::NonSpMemoryBase { addr, base } => {
                write!(f, "{addr}: memory access through {base}; analysis assumes it does not alias the stack")
            }
            Warning::PossibleRecursion { addr, target } => {
                write!(f, "{addr}: bl {target} re-enters a function on the call chain (possible recursion)")
            }
        }
    }
}

struct LineParser<'a> {
    line_no: usize,
    toks: Vec<&'a str>,
    pos: usize,
}

fn is_hex_word(tok: &str) -> bool {
    tok.len() == 8 && tok.chars().all(|c| c.is_ascii_hexdigit())
}

fn strip_comments(line: &str) -> &str {
    let mut s = line;
    for marker in [";", "@", "//", "/*"] {
        if let Some(i) = s.find(marker) {
            s = &s[..i];
        }
    }
    s
}

fn parse_uint(tok: &str) -> Option<u32> {
    if let Some(hex) = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
        u32::from_str_radix(hex, 16).ok()
    } else {
        tok.parse::<u32>().ok()
    }
}

fn parse_int(tok: &str) -> Option<i64> {
    let (neg, t) = match tok.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, tok),
    };
    let v = parse_uint(t)? as i64;
    Some(if neg { -v } else { v })
}

fn parse_reg(tok: &str) -> Option<Reg> {
    match tok {
        "sp" => return Some(SP),
        "lr" => return Some(LR),
        "pc" => return Some(PC),
        _ => {}
    }
    let n: u8 = tok.strip_prefix('r')?.parse().ok()?;
    (n < 16).then_some(Reg(n))
}

fn parse_shift_kind(tok: &str) -> Option<ShiftKind> {
    match tok {
        "lsl" => Some(ShiftKind::Lsl),
        "lsr" => Some(ShiftKind::Lsr),
        "asr" => Some(ShiftKind::Asr),
        _ => None,
    }
}

impl<'a> LineParser<'a> {
    fn new(line_no: usize, operand_text: &'a str) -> Self {
        // Split on commas and whitespace but keep bracket/brace groups intact.
        let mut toks = Vec::new();
        let mut depth = 0usize;
        let mut start = None;
        let bytes = operand_text.as_bytes();
        for (i, &b) in bytes.iter().enumerate() {
            match b {
                b'[' | b'{' => {
                    if start.is_none() {
                        start = Some(i);
                    }
                    depth += 1;
                }
                b']' | b'}' => depth = depth.saturating_sub(1),
                b',' | b' ' | b'\t' if depth == 0 => {
                    if let Some(s) = start.take() {
                        toks.push(&operand_text[s..i]);
                    }
                    continue;
                }
                _ => {}
            }
            if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            toks.push(&operand_text[s..]);
        }
        LineParser { line_no, toks, pos: 0 }
    }

    fn err(&self) -> ParseError {
        ParseError::MalformedLine(self.line_no)
    }

    fn next(&mut self) -> Result<&'a str, ParseError> {
        let t = self.toks.get(self.pos).ok_or_else(|| self.err())?;
        self.pos += 1;
        Ok(t)
    }

    fn done(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn reg(&mut self) -> Result<Reg, ParseError> {
        let t = self.next()?;
        parse_reg(t).ok_or_else(|| self.err())
    }

    fn op2(&mut self) -> Result<Op2, ParseError> {
        let t = self.next()?;
        if let Some(imm) = t.strip_prefix('#') {
            let v = parse_int(imm).ok_or_else(|| self.err())?;
            return Ok(Op2::Imm(v as u32));
        }
        let r = parse_reg(t).ok_or_else(|| self.err())?;
        if !self.done() {
            if let Some(k) = parse_shift_kind(self.toks[self.pos]) {
                self.pos += 1;
                let amt = self.next()?;
                let amt = amt.strip_prefix('#').ok_or_else(|| self.err())?;
                let n: u8 = amt.parse().map_err(|_| self.err())?;
                return Ok(Op2::ShiftedReg(r, k, n));
            }
        }
        Ok(Op2::Reg(r))
    }

    /// Parse a `[base]`, `[base,#off]` or `[base, reg lsl #n]` group token.
    fn address(&mut self) -> Result<(Reg, MemOffset), ParseError> {
        let t = self.next()?;
        let inner = t
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| self.err())?;
        let mut sub = LineParser::new(self.line_no, inner);
        let base = sub.reg()?;
        if sub.done() {
            return Ok((base, MemOffset::Imm(0)));
        }
        let t = sub.next()?;
        if let Some(imm) = t.strip_prefix('#') {
            let v = parse_int(imm).ok_or_else(|| sub.err())?;
            if !sub.done() {
                return Err(sub.err());
            }
            return Ok((base, MemOffset::Imm(v as i32)));
        }
        let r = parse_reg(t).ok_or_else(|| sub.err())?;
        if sub.done() {
            return Ok((base, MemOffset::Reg(r)));
        }
        let k = parse_shift_kind(sub.next()?).ok_or_else(|| sub.err())?;
        let amt = sub.next()?.strip_prefix('#').ok_or_else(|| sub.err())?;
        let n: u8 = amt.parse().map_err(|_| sub.err())?;
        Ok((base, MemOffset::ShiftedReg(r, k, n)))
    }

    fn reg_list(&mut self) -> Result<Vec<Reg>, ParseError> {
        let t = self.next()?;
        let inner = t
            .strip_prefix('{')
            .and_then(|s| s.strip_suffix('}'))
            .ok_or_else(|| self.err())?;
        let mut regs = Vec::new();
        for part in inner.split(',') {
            let part = part.trim();
            if part.is_empty() {
                return Err(self.err());
            }
            regs.push(parse_reg(part).ok_or_else(|| self.err())?);
        }
        if regs.is_empty() {
            return Err(self.err());
        }
        regs.sort();
        regs.dedup();
        Ok(regs)
    }
}

/// Split `movs`/`addeq`/`ble` style mnemonics into (base, cond, s-flag, mode).
///
/// Tries every matching base so that `ble` resolves to `b`+`le` rather than
/// failing on the longer `bl` prefix.
fn split_mnemonic(tok: &str) -> Option<(&'static str, Cond, bool, Option<MultiMode>)> {
    const BASES: &[&str] = &[
        "smull", "ldmia", "stmdb", "stmia", "push", "pop", "mov", "mvn", "add", "sub", "rsb",
        "and", "orr", "eor", "cmp", "cmn", "tst", "mul", "mla", "ldr", "str", "ldm", "stm", "bl",
        "bx", "b",
    ];
    for &base in BASES {
        let Some(mut rest) = tok.strip_prefix(base) else { continue };
        let cond = if rest.len() >= 2 {
            let c = match &rest[..2] {
                "eq" => Some(Cond::Eq),
                "ne" => Some(Cond::Ne),
                "le" => Some(Cond::Le),
                "gt" => Some(Cond::Gt),
                "ge" => Some(Cond::Ge),
                "lt" => Some(Cond::Lt),
                "al" => Some(Cond::Al),
                _ => None,
            };
            match c {
                Some(c) => {
                    rest = &rest[2..];
                    c
                }
                None => Cond::Al,
            }
        } else {
            Cond::Al
        };
        let sets_flags = rest == "s";
        if sets_flags {
            rest = "";
        }
        if !rest.is_empty() {
            continue;
        }
        let mode = match base {
            "ldm" | "ldmia" | "pop" => Some(MultiMode::Ia),
            "stmia" => Some(MultiMode::Ia),
            "stmdb" | "push" => Some(MultiMode::Db),
            "stm" => Some(MultiMode::Da),
            _ => None,
        };
        return Some((base, cond, sets_flags, mode));
    }
    None
}

/// Branch-target operand: `24`, `0x18`, `label`, optionally followed by a
/// `<sym+0xOFF>` annotation which, when present, is authoritative.
fn parse_branch_target(
    toks: &[&str],
    labels: &BTreeMap<String, u32>,
    line_no: usize,
) -> Result<u32, ParseError> {
    let err = || ParseError::MalformedLine(line_no);
    let first = *toks.first().ok_or_else(err)?;
    for t in toks {
        if let Some(ann) = t.strip_prefix('<').and_then(|s| s.strip_suffix('>')) {
            let (sym, off) = match ann.split_once('+') {
                Some((s, o)) => (s, parse_uint(&format!("0x{}", o.trim_start_matches("0x"))).ok_or_else(err)?),
                None => (ann, 0),
            };
            let base = labels.get(sym).copied().ok_or_else(err)?;
            return Ok(base + off);
        }
    }
    if let Some(addr) = labels.get(first) {
        return Ok(*addr);
    }
    parse_uint(first).ok_or_else(err)
}

enum RawLine {
    Symbol { name: String, addr: Option<u32> },
    Instr { addr: Option<u32>, mnemonic: String, rest: String, line_no: usize },
}

fn scan_lines(text: &str) -> Result<Vec<RawLine>, ParseError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comments(raw).trim();
        if line.is_empty() || line.starts_with('.') {
            continue;
        }
        // Symbol lines: `00000078 <main>:` or bare `label:`.
        if let Some(stripped) = line.strip_suffix(':') {
            let parts: Vec<&str> = stripped.split_whitespace().collect();
            match parts.as_slice() {
                [one] => {
                    if let Some(name) = one.strip_prefix('<').and_then(|s| s.strip_suffix('>')) {
                        out.push(RawLine::Symbol { name: name.to_string(), addr: None });
                        continue;
                    }
                    if parse_reg(one).is_none() && parse_uint(one).is_none() {
                        out.push(RawLine::Symbol { name: one.to_string(), addr: None });
                        continue;
                    }
                }
                [addr, name] => {
                    if let Some(name) = name.strip_prefix('<').and_then(|s| s.strip_suffix('>')) {
                        // Symbol-line addresses are printed in hex by objdump.
                        let a = u32::from_str_radix(addr, 16)
                            .map_err(|_| ParseError::MalformedLine(line_no))?;
                        out.push(RawLine::Symbol { name: name.to_string(), addr: Some(a) });
                        continue;
                    }
                }
                _ => {}
            }
            return Err(ParseError::MalformedLine(line_no));
        }
        // Instruction lines: `[ADDR[:]] [HEXWORD] MNEMONIC OPERANDS`.
        let mut words = line.split_whitespace().peekable();
        let mut addr = None;
        if let Some(first) = words.peek() {
            let bare = first.trim_end_matches(':');
            // An address column is numeric; a mnemonic never is.
            if split_mnemonic(bare).is_none() {
                if let Some(a) = parse_uint(bare) {
                    addr = Some(a);
                    words.next();
                } else {
                    return Err(ParseError::MalformedLine(line_no));
                }
            }
        }
        if let Some(w) = words.peek() {
            if is_hex_word(w) && split_mnemonic(w).is_none() {
                words.next();
            }
        }
        let mnemonic = words.next().ok_or(ParseError::MalformedLine(line_no))?.to_string();
        let rest: Vec<&str> = words.collect();
        out.push(RawLine::Instr { addr, mnemonic, rest: rest.join(" "), line_no });
    }
    Ok(out)
}

/// Parse a disassembly listing into a typed [`Program`].
///
/// The entry point is the `main` symbol when present, else the lowest address.
pub fn parse_listing(text: &str) -> Result<Program, ParseError> {
    let lines = scan_lines(text)?;

    // First pass: assign addresses and record labels so symbolic branch
    // targets can resolve in the second pass.
    let mut labels: BTreeMap<String, u32> = BTreeMap::new();
    let mut next_addr: u32 = 0;
    let mut placed: Vec<(u32, &RawLine)> = Vec::new();
    for line in &lines {
        match line {
            RawLine::Symbol { name, addr } => {
                if let Some(a) = addr {
                    next_addr = *a;
                }
                labels.insert(name.clone(), next_addr);
            }
            RawLine::Instr { addr, line_no, .. } => {
                let a = addr.unwrap_or(next_addr);
                if a % 4 != 0 {
                    return Err(ParseError::NonAlignedAddress(a));
                }
                let _ = line_no;
                placed.push((a, line));
                next_addr = a + 4;
            }
        }
    }

    let mut instructions: BTreeMap<u32, LabeledInstruction> = BTreeMap::new();
    for (addr, line) in placed {
        let RawLine::Instr { mnemonic, rest, line_no, .. } = line else { unreachable!() };
        let (base, cond, sets_flags, mode) = split_mnemonic(mnemonic)
            .ok_or_else(|| ParseError::UnsupportedMnemonic(*line_no, mnemonic.clone()))?;
        let mut p = LineParser::new(*line_no, rest);
        let body = match base {
            "mov" => Body::Mov { rd: p.reg()?, op2: p.op2()? },
            "mvn" => Body::Mvn { rd: p.reg()?, op2: p.op2()? },
            "add" | "sub" | "rsb" | "and" | "orr" | "eor" => {
                let op = match base {
                    "add" => AluOp::Add,
                    "sub" => AluOp::Sub,
                    "rsb" => AluOp::Rsb,
                    "and" => AluOp::And,
                    "orr" => AluOp::Orr,
                    _ => AluOp::Eor,
                };
                Body::Alu { op, rd: p.reg()?, rn: p.reg()?, op2: p.op2()? }
            }
            "cmp" | "cmn" | "tst" => {
                let op = match base {
                    "cmp" => CmpOp::Cmp,
                    "cmn" => CmpOp::Cmn,
                    _ => CmpOp::Tst,
                };
                Body::Cmp { op, rn: p.reg()?, op2: p.op2()? }
            }
            "mul" => Body::Mul { rd: p.reg()?, rm: p.reg()?, rs: p.reg()? },
            "mla" => Body::Mla { rd: p.reg()?, rm: p.reg()?, rs: p.reg()?, rn: p.reg()? },
            "smull" => {
                Body::Smull { rdlo: p.reg()?, rdhi: p.reg()?, rm: p.reg()?, rs: p.reg()? }
            }
            "ldr" | "str" => {
                let rd = p.reg()?;
                let (bse, offset) = p.address()?;
                if base == "ldr" {
                    Body::Ldr { rd, base: bse, offset }
                } else {
                    Body::Str { rd, base: bse, offset }
                }
            }
            "push" => Body::Multi {
                load: false,
                mode: MultiMode::Db,
                base: SP,
                writeback: true,
                regs: p.reg_list()?,
            },
            "pop" => Body::Multi {
                load: true,
                mode: MultiMode::Ia,
                base: SP,
                writeback: true,
                regs: p.reg_list()?,
            },
            "ldm" | "ldmia" | "stm" | "stmia" | "stmdb" => {
                let bt = p.next()?;
                let (bt, writeback) = match bt.strip_suffix('!') {
                    Some(b) => (b, true),
                    None => (bt, false),
                };
                let b = parse_reg(bt).ok_or_else(|| p.err())?;
                Body::Multi {
                    load: base.starts_with("ldm"),
                    mode: mode.unwrap(),
                    base: b,
                    writeback,
                    regs: p.reg_list()?,
                }
            }
            "b" | "bl" => {
                let toks = &p.toks[p.pos..];
                let target = parse_branch_target(toks, &labels, *line_no)?;
                p.pos = p.toks.len();
                Body::B { link: base == "bl", target }
            }
            "bx" => Body::Bx { rm: p.reg()? },
            _ => unreachable!(),
        };
        // Branch operands may be followed by a <sym+off> annotation token.
        if !p.done() && !matches!(body, Body::B { .. }) {
            return Err(p.err());
        }
        let instr = LabeledInstruction {
            address: addr,
            cond,
            sets_flags,
            body,
            raw_text: format!("{mnemonic} {rest}").trim().to_string(),
        };
        if instructions.insert(addr, instr).is_some() {
            return Err(ParseError::DuplicateAddress(addr));
        }
    }

    if instructions.is_empty() {
        return Err(ParseError::MalformedLine(lines.len().max(1)));
    }
    let entry = labels
        .get("main")
        .copied()
        .unwrap_or_else(|| *instructions.keys().next().unwrap());
    Ok(Program { instructions, symbols: labels, entry })
}

/// Static checks for the analysis assumptions that are visible in the syntax.
///
/// Emits warnings only; hard violations surface during simulation.
pub fn validate_assumptions(p: &Program) -> Vec<Warning> {
    let mut warnings = Vec::new();
    for instr in p.instructions.values() {
        let base = match &instr.body {
            Body::Ldr { base, .. } | Body::Str { base, .. } => Some(*base),
            Body::Multi { base, .. } => Some(*base),
            _ => None,
        };
        if let Some(b) = base {
            if b != SP && b != PC {
                warnings.push(Warning::NonSpMemoryBase { addr: instr.address, base: b });
            }
        }
    }

    // Recursion heuristic over the symbol-level static call chain.
    let func_of = |addr: u32| -> u32 {
        p.symbols
            .values()
            .filter(|&&s| s <= addr)
            .max()
            .copied()
            .unwrap_or(0)
    };
    let calls: Vec<(u32, u32)> = p
        .instructions
        .values()
        .filter_map(|i| match i.body {
            Body::B { link: true, target } => Some((i.address, target)),
            _ => None,
        })
        .collect();
    fn visit(
        func: u32,
        chain: &mut Vec<u32>,
        calls: &[(u32, u32)],
        func_of: &dyn Fn(u32) -> u32,
        warnings: &mut Vec<Warning>,
    ) {
        chain.push(func);
        for &(site, target) in calls.iter().filter(|(s, _)| func_of(*s) == func) {
            let callee = func_of(target);
            if chain.contains(&callee) {
                warnings.push(Warning::PossibleRecursion { addr: site, target });
            } else {
                visit(callee, chain, calls, func_of, warnings);
            }
        }
        chain.pop();
    }
    let entry_func = func_of(p.entry);
    visit(entry_func, &mut Vec::new(), &calls, &func_of, &mut warnings);
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_mov() {
        let p = parse_listing("00000000 <main>:\n0: e3a0101e mov r1,#30\n").unwrap();
        assert_eq!(p.len(), 1);
        let i = p.instr(0).unwrap();
        assert_eq!(i.cond, Cond::Al);
        assert!(!i.sets_flags);
        assert_eq!(i.body, Body::Mov { rd: Reg(1), op2: Op2::Imm(30) });
    }

    #[test]
    fn empty_body_is_malformed() {
        assert!(matches!(
            parse_listing("00000000 <f>:\n"),
            Err(ParseError::MalformedLine(_))
        ));
    }

    #[test]
    fn rejects_unknown_mnemonic() {
        assert!(matches!(
            parse_listing("00000000 <main>:\n0: frob r1,#1\n"),
            Err(ParseError::UnsupportedMnemonic(2, _))
        ));
    }

    #[test]
    fn rejects_duplicates_and_misalignment() {
        assert!(matches!(
            parse_listing("00000000 <m>:\n0: mov r1,#1\n0: mov r1,#2\n"),
            Err(ParseError::DuplicateAddress(0))
        ));
        assert!(matches!(
            parse_listing("00000000 <m>:\n2: mov r1,#1\n"),
            Err(ParseError::NonAlignedAddress(2))
        ));
    }

    #[test]
    fn push_pop_normalize_to_multi() {
        let p = parse_listing("00000000 <m>:\n0: e52de004 push {lr}\n4: e49de004 pop {lr}\n")
            .unwrap();
        assert_eq!(
            p.instr(0).unwrap().body,
            Body::Multi { load: false, mode: MultiMode::Db, base: SP, writeback: true, regs: vec![LR] }
        );
        assert_eq!(
            p.instr(4).unwrap().body,
            Body::Multi { load: true, mode: MultiMode::Ia, base: SP, writeback: true, regs: vec![LR] }
        );
    }

    #[test]
    fn branch_annotation_is_authoritative() {
        // objdump prints branch targets in hex when a <sym+off> annotation follows.
        let text = "00000000 <fib>:\n0: mov r1,#1\n4: dafffff0 ble 24 <fib+0x24>\n";
        let p = parse_listing(text).unwrap();
        assert_eq!(p.instr(4).unwrap().body, Body::B { link: false, target: 0x24 });
    }

    #[test]
    fn shifted_register_operands() {
        let p = parse_listing("00000000 <m>:\n0: str r2,[r1, r3 lsl #2]\n").unwrap();
        assert_eq!(
            p.instr(0).unwrap().body,
            Body::Str { rd: Reg(2), base: Reg(1), offset: MemOffset::ShiftedReg(Reg(3), ShiftKind::Lsl, 2) }
        );
        let p = parse_listing("00000000 <m>:\n0: add r2,r1,r3 lsl #2\n").unwrap();
        assert_eq!(
            p.instr(0).unwrap().body,
            Body::Alu { op: AluOp::Add, rd: Reg(2), rn: Reg(1), op2: Op2::ShiftedReg(Reg(3), ShiftKind::Lsl, 2) }
        );
    }

    #[test]
    fn assembler_source_flavor() {
        let text = "\n.global f\nf:\n  mov r1,#1\nloop:\n  sub r1,r1,#1\n  bgt loop\n  bx lr\n";
        let p = parse_listing(text).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.symbols["loop"], 4);
        assert_eq!(p.instr(8).unwrap().body, Body::B { link: false, target: 4 });
        assert_eq!(p.instr(8).unwrap().cond, Cond::Gt);
    }

    #[test]
    fn self_call_warns_recursion() {
        let p = parse_listing("00000000 <main>:\n0: bl 0\n4: bx lr\n").unwrap();
        let w = validate_assumptions(&p);
        assert!(w.iter().any(|w| matches!(w, Warning::PossibleRecursion { addr: 0, target: 0 })));
    }

    #[test]
    fn non_sp_base_warns() {
        let p = parse_listing("00000000 <main>:\n0: str r2,[r1, r3 lsl #2]\n4: bx lr\n").unwrap();
        let w = validate_assumptions(&p);
        assert!(w.iter().any(|w| matches!(w, Warning::NonSpMemoryBase { addr: 0, base: Reg(1) })));
    }

    #[test]
    fn entry_prefers_main_symbol() {
        let text = "00000000 <fib>:\n0: bx lr\n00000004 <main>:\n4: bx lr\n";
        let p = parse_listing(text).unwrap();
        assert_eq!(p.entry, 4);
    }
}

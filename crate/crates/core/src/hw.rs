//! Discrete-cycle model of the ARM920T-like hardware: five-stage in-order
//! pipeline (F, D, E, M, W), instruction cache, data cache with a four-entry
//! half-line write buffer, and a serialized main memory.
//!
//! The model consumes trace elements (address, executed flag, referenced
//! addresses) one fetch at a time. Timing rules:
//!
//! * cache hit costs `cache_speed`, a miss adds `mainmem_trans` per line
//!   transfer (two transfers when a dirty write-back victim must be saved);
//! * an executed pc-writing instruction blocks fetch until its E stage
//!   completes (two bubbles for a taken branch behind a one-cycle E);
//! * a load result becomes available at the end of its M stage; a dependent
//!   instruction waits in D (one bubble in the back-to-back case);
//! * a load touching the set a store just touched stalls one extra cycle;
//! * stores go through the write buffer (no allocate on write miss); a full
//!   buffer stalls the M stage until an entry drains.

use std::collections::VecDeque;

use thiserror::Error;

use crate::isa::{self, TraceTriple};
use crate::listing::{Body, LabeledInstruction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WritePolicy {
    WriteThrough,
    WriteBack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Replacement {
    Fifo,
}

/// Hardware configuration. Defaults model the 16KB 8-way caches of the
/// ARM920T with a configurable main-memory transfer time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HwConfig {
    pub mainmem_trans: u32,
    pub cache_speed: u32,
    pub sets: u32,
    pub ways: u32,
    pub line_bytes: u32,
    pub replacement: Replacement,
    pub write_policy: WritePolicy,
    pub wb_entries: u32,
    pub wb_drain_cycles: u32,
    /// E-stage duration range per data-dependent instruction class.
    pub dur_mul: (u32, u32),
    pub dur_mla: (u32, u32),
    pub dur_smull: (u32, u32),
}

impl Default for HwConfig {
    fn default() -> Self {
        HwConfig {
            mainmem_trans: 10,
            cache_speed: 1,
            sets: 64,
            ways: 8,
            line_bytes: 32,
            replacement: Replacement::Fifo,
            write_policy: WritePolicy::WriteThrough,
            wb_entries: 4,
            wb_drain_cycles: 10,
            dur_mul: (3, 6),
            dur_mla: (3, 6),
            dur_smull: (4, 7),
        }
    }
}

impl HwConfig {
    pub fn validate(&self) -> Result<(), HwError> {
        if self.sets == 0 || self.ways == 0 || self.line_bytes < 8 {
            return Err(HwError::InvalidGeometry("cache geometry must be non-empty"));
        }
        if self.sets * self.ways * self.line_bytes != 16 * 1024 {
            return Err(HwError::InvalidGeometry("caches must total 16KB"));
        }
        if self.wb_entries * (self.line_bytes / 2 / 4) != 16 {
            return Err(HwError::InvalidGeometry("write buffer must hold 16 words"));
        }
        if self.mainmem_trans == 0 || self.cache_speed == 0 || self.wb_drain_cycles == 0 {
            return Err(HwError::InvalidGeometry("timings must be positive"));
        }
        for (lo, hi) in [self.dur_mul, self.dur_mla, self.dur_smull] {
            if lo == 0 || hi < lo {
                return Err(HwError::InvalidGeometry("bad duration range"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HwError {
    #[error("invalid hardware geometry: {0}")]
    InvalidGeometry(&'static str),
    #[error("hardware protocol violation: {0}")]
    ProtocolViolation(&'static str),
    /// The tick needs a duration choice the resolver declined to make.
    #[error("instruction {addr}: unresolved E-stage duration in [{min},{max}]")]
    NeedDuration { addr: u32, min: u32, max: u32 },
}

const INVALID_LINE: u32 = u32::MAX;

fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheArrays {
    /// Line index per slot; `INVALID_LINE` marks an empty way.
    tags: Vec<u32>,
    fifo_ptr: Vec<u8>,
    /// Two dirty bits per line, one per half-line.
    dirty: Vec<u8>,
}

/// Tag array of one cache with per-set FIFO insertion pointers. The data
/// cache additionally keeps two dirty bits per line (one per half-line).
///
/// The arrays are shared between cloned states and a fingerprint of their
/// content is maintained incrementally, so the explorer can hash and copy
/// configurations cheaply.
#[derive(Debug, Clone, Eq)]
pub struct CacheState {
    sets: u32,
    ways: u32,
    line_bytes: u32,
    data: std::sync::Arc<CacheArrays>,
    fp: u64,
}

impl PartialEq for CacheState {
    fn eq(&self, other: &Self) -> bool {
        self.sets == other.sets
            && self.ways == other.ways
            && self.line_bytes == other.line_bytes
            && self.fp == other.fp
            && (std::sync::Arc::ptr_eq(&self.data, &other.data) || self.data == other.data)
    }
}

impl std::hash::Hash for CacheState {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        state.write_u32(self.sets);
        state.write_u32(self.ways);
        state.write_u64(self.fp);
    }
}

impl CacheState {
    pub fn new(cfg: &HwConfig) -> CacheState {
        let n = (cfg.sets * cfg.ways) as usize;
        CacheState {
            sets: cfg.sets,
            ways: cfg.ways,
            line_bytes: cfg.line_bytes,
            data: std::sync::Arc::new(CacheArrays {
                tags: vec![INVALID_LINE; n],
                fifo_ptr: vec![0; cfg.sets as usize],
                dirty: vec![0; n],
            }),
            fp: 0,
        }
    }

    pub fn set_index(&self, addr: u32) -> u32 {
        (addr / self.line_bytes) % self.sets
    }

    fn line_of(&self, addr: u32) -> u32 {
        addr / self.line_bytes
    }

    fn slot_range(&self, set: u32) -> std::ops::Range<usize> {
        let base = (set * self.ways) as usize;
        base..base + self.ways as usize
    }

    /// All-empty slots and zero fifo pointers contribute nothing, so the
    /// fingerprint stays a pure function of the array contents.
    fn slot_fp(slot: usize, tag: u32, dirty: u8) -> u64 {
        if tag == INVALID_LINE && dirty == 0 {
            return 0;
        }
        mix64(((slot as u64) << 40) ^ ((tag as u64) << 8) ^ dirty as u64 ^ 0x5eed)
    }

    fn ptr_fp(set: usize, ptr: u8) -> u64 {
        if ptr == 0 {
            return 0;
        }
        mix64(((set as u64) << 16) ^ ptr as u64 ^ 0xf1f0_0000)
    }

    /// Hit/miss lookup; no state change.
    pub fn lookup(&self, addr: u32) -> bool {
        let line = self.line_of(addr);
        self.slot_range(self.set_index(addr))
            .any(|s| self.data.tags[s] == line)
    }

    /// Insert after a miss. The FIFO victim is replaced and the pointer
    /// advances. Returns the number of main-memory transfers: 2 when the
    /// victim line was dirty under write-back, else 1.
    pub fn insert(&mut self, addr: u32, write_back: bool) -> u32 {
        let set = self.set_index(addr);
        let line = self.line_of(addr);
        let ways = self.ways as usize;
        let base = set as usize * ways;
        let mut fp = self.fp;
        let data = std::sync::Arc::make_mut(&mut self.data);
        let way = data.fifo_ptr[set as usize] as usize;
        let slot = base + way;
        let transfers = if write_back && data.dirty[slot] != 0 { 2 } else { 1 };
        fp ^= Self::slot_fp(slot, data.tags[slot], data.dirty[slot]);
        data.tags[slot] = line;
        data.dirty[slot] = 0;
        fp ^= Self::slot_fp(slot, line, 0);
        let new_ptr = ((way + 1) % ways) as u8;
        fp ^= Self::ptr_fp(set as usize, data.fifo_ptr[set as usize]);
        data.fifo_ptr[set as usize] = new_ptr;
        fp ^= Self::ptr_fp(set as usize, new_ptr);
        self.fp = fp;
        transfers
    }

    /// Set the dirty bit of the half-line containing `addr` (write-back hit).
    pub fn mark_dirty(&mut self, addr: u32) {
        let line = self.line_of(addr);
        let half_bit = 1u8 << ((addr % self.line_bytes) / (self.line_bytes / 2));
        let slots: Vec<usize> = self
            .slot_range(self.set_index(addr))
            .filter(|&s| self.data.tags[s] == line)
            .collect();
        let mut fp = self.fp;
        let data = std::sync::Arc::make_mut(&mut self.data);
        for s in slots {
            fp ^= Self::slot_fp(s, data.tags[s], data.dirty[s]);
            data.dirty[s] |= half_bit;
            fp ^= Self::slot_fp(s, data.tags[s], data.dirty[s]);
        }
        self.fp = fp;
    }

    #[cfg(test)]
    fn resident_lines(&self, set: u32) -> Vec<u32> {
        self.slot_range(set)
            .map(|s| self.data.tags[s])
            .filter(|&t| t != INVALID_LINE)
            .collect()
    }

    #[cfg(test)]
    fn all_clean(&self) -> bool {
        self.data.dirty.iter().all(|&d| d == 0)
    }

    #[cfg(test)]
    fn slot_count(&self) -> usize {
        self.data.tags.len()
    }

    #[cfg(test)]
    fn all_invalid(&self) -> bool {
        self.data.tags.iter().all(|&t| t == INVALID_LINE)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct WbEntry {
    half_base: u32,
    words: Vec<u32>,
}

/// Four half-line entries draining to main memory in FIFO order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct WriteBuffer {
    entries: VecDeque<WbEntry>,
}

impl WriteBuffer {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Accept one word write. Merges into a queued entry for the same
    /// half-line unless that entry is already draining; otherwise allocates.
    /// Returns false when the buffer is full.
    fn try_put(&mut self, half_base: u32, word: u32, front_draining: bool, capacity: u32) -> bool {
        for (idx, e) in self.entries.iter_mut().enumerate() {
            if e.half_base == half_base && !(idx == 0 && front_draining) {
                if !e.words.contains(&word) {
                    e.words.push(word);
                    e.words.sort();
                }
                return true;
            }
        }
        if (self.entries.len() as u32) < capacity {
            self.entries.push_back(WbEntry { half_base, words: vec![word] });
            return true;
        }
        false
    }

    fn pop_front(&mut self) {
        self.entries.pop_front();
    }
}

/// Per-instruction facts the timing model needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InstrTiming {
    /// Registers read as operands.
    pub reads: u16,
    /// Registers written from memory by a load.
    pub load_dests: u16,
    pub writes_pc: bool,
    pub is_load: bool,
    pub is_store: bool,
    pub dur: DurClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DurClass {
    Unit,
    Mul,
    Mla,
    Smull,
}

impl InstrTiming {
    pub fn of(i: &LabeledInstruction) -> InstrTiming {
        let rd = isa::ref_def(i);
        let mut reads: u16 = 0;
        for v in &rd.refs {
            if let isa::Var::Reg(r) = v {
                reads |= 1 << r.0;
            }
        }
        let mut load_dests: u16 = 0;
        let (is_load, is_store) = match &i.body {
            Body::Ldr { rd, .. } => {
                load_dests |= 1 << rd.0;
                (true, false)
            }
            Body::Str { .. } => (false, true),
            Body::Multi { load, regs, .. } => {
                if *load {
                    for r in regs {
                        load_dests |= 1 << r.0;
                    }
                }
                (*load, !*load)
            }
            _ => (false, false),
        };
        let dur = match &i.body {
            Body::Mul { .. } => DurClass::Mul,
            Body::Mla { .. } => DurClass::Mla,
            Body::Smull { .. } => DurClass::Smull,
            _ => DurClass::Unit,
        };
        InstrTiming { reads, load_dests, writes_pc: i.writes_pc_explicitly(), is_load, is_store, dur }
    }
}

/// One trace element in the form the hardware consumes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HwInstr {
    pub addr: u32,
    pub executed: bool,
    pub is_last: bool,
    /// Referenced word addresses, ascending.
    pub addrs: Vec<u32>,
    pub timing: InstrTiming,
}

impl HwInstr {
    pub fn from_triple(t: &TraceTriple, is_last: bool) -> HwInstr {
        HwInstr {
            addr: t.instr.address,
            executed: t.executed,
            is_last,
            addrs: t.addrs.iter().copied().collect(),
            timing: InstrTiming::of(&t.instr),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum FetchPhase {
    WaitGrant,
    Fill,
    Deliver(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct FetchSlot {
    instr: HwInstr,
    phase: FetchPhase,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct DecodeSlot {
    instr: HwInstr,
    decoded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ExecSlot {
    instr: HwInstr,
    remaining: u32,
    blocks: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct MemOp {
    addr: u32,
    write: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum MemPhase {
    Start,
    SameSetStall,
    WaitGrant(u32),
    Fill,
    Access(u32),
    WbRetry,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct MemSlot {
    instr: HwInstr,
    ops: VecDeque<MemOp>,
    phase: MemPhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum MemOwner {
    DCache,
    ICache,
    Wb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
struct MemUnit {
    busy: u32,
    owner: Option<MemOwner>,
}

/// Complete hardware state. The elapsed cycle count lives with the caller so
/// that equal states are equal regardless of when they are reached.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HwState {
    f: Option<FetchSlot>,
    d: Option<DecodeSlot>,
    e: Option<ExecSlot>,
    m: Option<MemSlot>,
    w: Option<HwInstr>,
    pub icache: CacheState,
    pub dcache: CacheState,
    pub wb: WriteBuffer,
    mem: MemUnit,
    branch_block: bool,
    last_store_set: Option<u32>,
    pub completed: bool,
}

/// Events of one cycle, for witness recording.
#[derive(Debug, Clone, Default)]
pub struct TickOutcome {
    /// A trace element was consumed by F this cycle.
    pub consumed: Option<HwInstr>,
    /// (address, assigned duration) of an instruction entering E this cycle.
    pub entered_e: Option<(u32, u32)>,
    pub retired_last: bool,
}

impl HwState {
    /// Empty pipeline, all-invalid caches, empty write buffer.
    pub fn new(cfg: &HwConfig) -> Result<HwState, HwError> {
        cfg.validate()?;
        Ok(HwState {
            f: None,
            d: None,
            e: None,
            m: None,
            w: None,
            icache: CacheState::new(cfg),
            dcache: CacheState::new(cfg),
            wb: WriteBuffer::default(),
            mem: MemUnit::default(),
            branch_block: false,
            last_store_set: None,
            completed: false,
        })
    }

    pub fn pipeline_empty(&self) -> bool {
        self.f.is_none() && self.d.is_none() && self.e.is_none() && self.m.is_none() && self.w.is_none()
    }

    /// A fresh state that keeps the cache contents of `self` (for warm
    /// measurements). The write buffer and pipeline start empty.
    pub fn warm_copy(&self, cfg: &HwConfig) -> Result<HwState, HwError> {
        let mut s = HwState::new(cfg)?;
        s.icache = self.icache.clone();
        s.dcache = self.dcache.clone();
        Ok(s)
    }

    fn duration_of(
        cfg: &HwConfig,
        instr: &HwInstr,
        pick: &mut dyn FnMut(u32, u32, u32) -> Option<u32>,
    ) -> Result<u32, HwError> {
        if !instr.executed {
            return Ok(1);
        }
        let range = match instr.timing.dur {
            DurClass::Unit => return Ok(1),
            DurClass::Mul => cfg.dur_mul,
            DurClass::Mla => cfg.dur_mla,
            DurClass::Smull => cfg.dur_smull,
        };
        match pick(instr.addr, range.0, range.1) {
            Some(d) if d >= range.0 && d <= range.1 => Ok(d),
            Some(_) => Err(HwError::ProtocolViolation("duration outside range")),
            None => Err(HwError::NeedDuration { addr: instr.addr, min: range.0, max: range.1 }),
        }
    }

    /// Advance one processor cycle.
    ///
    /// `pending` supplies fetchable trace elements; `dur_pick` resolves the
    /// E-stage duration of data-dependent instructions (returning `None`
    /// aborts the tick with [`HwError::NeedDuration`], leaving the state
    /// partially advanced — callers fork on a clone).
    pub fn tick(
        &mut self,
        cfg: &HwConfig,
        pending: &mut VecDeque<HwInstr>,
        dur_pick: &mut dyn FnMut(u32, u32, u32) -> Option<u32>,
    ) -> Result<TickOutcome, HwError> {
        let mut out = TickOutcome::default();
        if self.completed {
            return Err(HwError::ProtocolViolation("tick after completion"));
        }

        // Main memory progress.
        if self.mem.busy > 0 {
            self.mem.busy -= 1;
            if self.mem.busy == 0 {
                match self.mem.owner.take() {
                    Some(MemOwner::DCache) => {
                        let m = self.m.as_mut().ok_or(HwError::ProtocolViolation("dcache fill without M op"))?;
                        debug_assert_eq!(m.phase, MemPhase::Fill);
                        m.phase = MemPhase::Access(cfg.cache_speed);
                    }
                    Some(MemOwner::ICache) => {
                        let f = self.f.as_mut().ok_or(HwError::ProtocolViolation("icache fill without fetch"))?;
                        debug_assert_eq!(f.phase, FetchPhase::Fill);
                        f.phase = FetchPhase::Deliver(cfg.cache_speed);
                    }
                    Some(MemOwner::Wb) => self.wb.pop_front(),
                    None => return Err(HwError::ProtocolViolation("busy memory without owner")),
                }
            }
        }

        // W: retire.
        if let Some(instr) = self.w.take() {
            if instr.is_last {
                self.completed = true;
                out.retired_last = true;
            }
        }

        // M: one cycle of the data-access protocol.
        if let Some(m) = self.m.as_mut() {
            let mut done = false;
            match m.phase {
                MemPhase::Start | MemPhase::SameSetStall | MemPhase::WbRetry => {
                    match m.ops.front().copied() {
                        None => done = true,
                        Some(op) => {
                            let set = self.dcache.set_index(op.addr);
                            if !op.write
                                && m.phase == MemPhase::Start
                                && self.last_store_set == Some(set)
                            {
                                self.last_store_set = None;
                                m.phase = MemPhase::SameSetStall;
                            } else {
                                // Begin the access proper.
                                if !op.write {
                                    self.last_store_set = None;
                                    if self.dcache.lookup(op.addr) {
                                        m.phase = MemPhase::Access(cfg.cache_speed);
                                    } else {
                                        let wb_mode = cfg.write_policy == WritePolicy::WriteBack;
                                        let transfers = self.dcache.insert(op.addr, wb_mode);
                                        m.phase = MemPhase::WaitGrant(transfers);
                                    }
                                } else {
                                    let hit = self.dcache.lookup(op.addr);
                                    if hit && cfg.write_policy == WritePolicy::WriteBack {
                                        self.dcache.mark_dirty(op.addr);
                                        self.last_store_set = Some(set);
                                        m.phase = MemPhase::Access(cfg.cache_speed);
                                    } else {
                                        // Buffered write (write-through, or any write miss).
                                        let half = cfg.line_bytes / 2;
                                        let half_base = op.addr / half * half;
                                        let draining = self.mem.owner == Some(MemOwner::Wb);
                                        if self.wb.try_put(half_base, op.addr & !3, draining, cfg.wb_entries) {
                                            self.last_store_set = Some(set);
                                            m.phase = MemPhase::Access(cfg.cache_speed);
                                        } else {
                                            m.phase = MemPhase::WbRetry;
                                        }
                                    }
                                }
                                // The cycle spent starting the access counts
                                // toward its cache_speed.
                                if let MemPhase::Access(k) = m.phase {
                                    let k = k - 1;
                                    if k == 0 {
                                        m.ops.pop_front();
                                        if m.ops.is_empty() {
                                            done = true;
                                        } else {
                                            m.phase = MemPhase::Start;
                                        }
                                    } else {
                                        m.phase = MemPhase::Access(k);
                                    }
                                }
                            }
                        }
                    }
                }
                MemPhase::WaitGrant(_) | MemPhase::Fill => {}
                MemPhase::Access(k) => {
                    let k = k - 1;
                    if k == 0 {
                        m.ops.pop_front();
                        if m.ops.is_empty() {
                            done = true;
                        } else {
                            m.phase = MemPhase::Start;
                        }
                    } else {
                        m.phase = MemPhase::Access(k);
                    }
                }
            }
            if m.phase == MemPhase::Start && m.ops.is_empty() {
                done = true;
            }
            if done && self.w.is_none() {
                let slot = self.m.take().unwrap();
                self.w = Some(slot.instr);
            }
        }

        // E: duration countdown; release the branch block when it hits zero.
        let mut release_branch = false;
        if let Some(e) = self.e.as_mut() {
            if e.remaining > 0 {
                e.remaining -= 1;
                if e.remaining == 0 && e.blocks {
                    release_branch = true;
                }
            }
            if e.remaining == 0 && self.m.is_none() {
                let slot = self.e.take().unwrap();
                let instr = slot.instr;
                let ops: VecDeque<MemOp> = if instr.executed
                    && (instr.timing.is_load || instr.timing.is_store)
                {
                    instr
                        .addrs
                        .iter()
                        .map(|&a| MemOp { addr: a, write: instr.timing.is_store })
                        .collect()
                } else {
                    VecDeque::new()
                };
                let phase = if ops.is_empty() { MemPhase::Access(1) } else { MemPhase::Start };
                self.m = Some(MemSlot { instr, ops, phase });
            }
        }

        // D: decode, then dispatch to E unless a load in flight produces an
        // operand (load-use interlock).
        if let Some(d) = self.d.as_mut() {
            if !d.decoded {
                d.decoded = true;
            }
            if d.decoded && self.e.is_none() {
                let reads = d.instr.timing.reads;
                let hazard = |slot_instr: &HwInstr| {
                    slot_instr.executed && slot_instr.timing.load_dests & reads != 0
                };
                let blocked = self.e.as_ref().map(|s| hazard(&s.instr)).unwrap_or(false)
                    || self.m.as_ref().map(|s| hazard(&s.instr)).unwrap_or(false);
                if !blocked {
                    let slot = self.d.take().unwrap();
                    let dur = Self::duration_of(cfg, &slot.instr, dur_pick)?;
                    out.entered_e = Some((slot.instr.addr, dur));
                    let blocks = slot.instr.executed && slot.instr.timing.writes_pc;
                    self.e = Some(ExecSlot { instr: slot.instr, remaining: dur, blocks });
                }
            }
        }

        // F: advance an in-flight fetch, then consume the next trace element.
        if let Some(f) = self.f.as_mut() {
            if let FetchPhase::Deliver(k) = f.phase {
                let k = k.saturating_sub(1);
                f.phase = FetchPhase::Deliver(k);
                if k == 0 && self.d.is_none() {
                    let slot = self.f.take().unwrap();
                    self.d = Some(DecodeSlot { instr: slot.instr, decoded: false });
                }
            }
        }
        if self.f.is_none() && !self.branch_block {
            if let Some(instr) = pending.pop_front() {
                out.consumed = Some(instr.clone());
                if instr.executed && instr.timing.writes_pc {
                    self.branch_block = true;
                }
                if self.icache.lookup(instr.addr) {
                    let k = cfg.cache_speed - 1;
                    if k == 0 && self.d.is_none() {
                        self.d = Some(DecodeSlot { instr, decoded: false });
                    } else {
                        self.f = Some(FetchSlot { instr, phase: FetchPhase::Deliver(k.max(1)) });
                    }
                } else {
                    self.icache.insert(instr.addr, false);
                    self.f = Some(FetchSlot { instr, phase: FetchPhase::WaitGrant });
                }
            }
        }

        // Memory arbitration: the M stage wins over fetch, the write buffer
        // drains only when nothing else wants the bus.
        if self.mem.busy == 0 {
            debug_assert!(self.mem.owner.is_none());
            if let Some(m) = self.m.as_mut() {
                if let MemPhase::WaitGrant(t) = m.phase {
                    self.mem.busy = t * cfg.mainmem_trans;
                    self.mem.owner = Some(MemOwner::DCache);
                    m.phase = MemPhase::Fill;
                }
            }
            if self.mem.owner.is_none() {
                if let Some(f) = self.f.as_mut() {
                    if f.phase == FetchPhase::WaitGrant {
                        self.mem.busy = cfg.mainmem_trans;
                        self.mem.owner = Some(MemOwner::ICache);
                        f.phase = FetchPhase::Fill;
                    }
                }
            }
            if self.mem.owner.is_none() && !self.wb.is_empty() {
                self.mem.busy = cfg.wb_drain_cycles;
                self.mem.owner = Some(MemOwner::Wb);
            }
        }

        if release_branch {
            self.branch_block = false;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DurationChoice {
    Min,
    Max,
}

/// Deterministic reference semantics: the cycles a fixed trace takes from a
/// given initial hardware state, with every data-dependent duration pinned to
/// the chosen end of its range.
pub fn run_trace_from(
    cfg: &HwConfig,
    state: &mut HwState,
    trace: &[TraceTriple],
    choice: DurationChoice,
) -> Result<u64, HwError> {
    let script: Vec<u32> = Vec::new();
    run_trace_inner(cfg, state, trace, Some(choice), &script)
}

/// Execution time of `trace` on a cold machine.
pub fn run_trace(cfg: &HwConfig, trace: &[TraceTriple], choice: DurationChoice) -> Result<u64, HwError> {
    let mut state = HwState::new(cfg)?;
    run_trace_from(cfg, &mut state, trace, choice)
}

/// Replay with explicit durations: the n-th data-dependent executed
/// instruction entering E takes `durations[n]` cycles.
pub fn run_trace_scripted(
    cfg: &HwConfig,
    trace: &[TraceTriple],
    durations: &[u32],
) -> Result<u64, HwError> {
    let mut state = HwState::new(cfg)?;
    run_trace_inner(cfg, &mut state, trace, None, durations)
}

fn run_trace_inner(
    cfg: &HwConfig,
    state: &mut HwState,
    trace: &[TraceTriple],
    choice: Option<DurationChoice>,
    script: &[u32],
) -> Result<u64, HwError> {
    if trace.is_empty() {
        return Ok(0);
    }
    let mut pending: VecDeque<HwInstr> = trace
        .iter()
        .enumerate()
        .map(|(i, t)| HwInstr::from_triple(t, i + 1 == trace.len()))
        .collect();
    let mut cursor = 0usize;
    let mut elapsed: u64 = 0;
    while !state.completed {
        let mut pick = |_addr: u32, min: u32, max: u32| -> Option<u32> {
            match choice {
                Some(DurationChoice::Min) => Some(min),
                Some(DurationChoice::Max) => Some(max),
                None => {
                    let d = script.get(cursor).copied();
                    cursor += 1;
                    d
                }
            }
        };
        state.tick(cfg, &mut pending, &mut pick)?;
        elapsed += 1;
        if elapsed > 2_000_000_000 {
            return Err(HwError::ProtocolViolation("trace runs beyond two billion cycles"));
        }
    }
    Ok(elapsed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::listing::parse_listing;
    use std::collections::BTreeSet;

    fn triple(addr: u32, text: &str, addrs: &[u32], executed: bool) -> TraceTriple {
        let listing = format!("00000000 <main>:\n{addr}: {text}\n");
        let prog = parse_listing(&listing).unwrap();
        TraceTriple {
            instr: prog.instr(addr).unwrap().clone(),
            addrs: BTreeSet::from_iter(addrs.iter().copied()),
            executed,
        }
    }

    #[test]
    fn default_geometry_valid() {
        let cfg = HwConfig::default();
        let s = HwState::new(&cfg).unwrap();
        assert_eq!(s.icache.slot_count(), 64 * 8);
        assert!(s.icache.all_invalid());
    }

    #[test]
    fn zero_wb_entries_invalid() {
        let cfg = HwConfig { wb_entries: 0, ..HwConfig::default() };
        assert!(matches!(HwState::new(&cfg), Err(HwError::InvalidGeometry(_))));
    }

    #[test]
    fn write_back_initial_state_clean() {
        let cfg = HwConfig { write_policy: WritePolicy::WriteBack, ..HwConfig::default() };
        let s = HwState::new(&cfg).unwrap();
        assert!(s.dcache.all_clean());
    }

    #[test]
    fn set_index_examples() {
        let cfg = HwConfig::default();
        let c = CacheState::new(&cfg);
        assert_ne!(c.set_index(0x8004d94), c.set_index(0x8004da4));
        assert_eq!(c.set_index(0x8004da4), c.set_index(0x8004db4));
        assert!(!c.lookup(0x8004d94));
    }

    #[test]
    fn fifo_evicts_oldest() {
        let cfg = HwConfig::default();
        let mut c = CacheState::new(&cfg);
        // Nine distinct lines mapping to set 0: stride = sets * line_bytes.
        let stride = cfg.sets * cfg.line_bytes;
        for k in 0..9 {
            let addr = k * stride;
            assert_eq!(c.insert(addr, false), 1);
        }
        let set0 = c.resident_lines(0);
        assert_eq!(set0.len(), 8);
        assert!(!c.lookup(0), "first inserted line evicted");
        assert!(c.lookup(8 * stride));
    }

    #[test]
    fn write_back_dirty_victim_needs_two_transfers() {
        let cfg = HwConfig { write_policy: WritePolicy::WriteBack, ..HwConfig::default() };
        let mut c = CacheState::new(&cfg);
        let stride = cfg.sets * cfg.line_bytes;
        for k in 0..8 {
            c.insert(k * stride, true);
        }
        c.mark_dirty(0);
        // Set is full; the FIFO victim is line 0, which is dirty.
        assert_eq!(c.insert(8 * stride, true), 2);
        // Clean victim afterwards.
        assert_eq!(c.insert(9 * stride, true), 1);
    }

    #[test]
    fn single_warm_op_takes_depth_cycles() {
        let cfg = HwConfig::default();
        let trace = vec![triple(0, "mov r1,#30", &[], true)];
        let cold = run_trace(&cfg, &trace, DurationChoice::Min).unwrap();
        // Cold: one icache line fill plus delivery, then the four remaining stages.
        assert_eq!(cold, (cfg.mainmem_trans + cfg.cache_speed + 4) as u64);
        let mut warm = HwState::new(&cfg).unwrap();
        warm.icache.insert(0, false);
        assert_eq!(run_trace_from(&cfg, &mut warm, &trace, DurationChoice::Min).unwrap(), 5);
    }

    #[test]
    fn empty_trace_is_zero_cycles() {
        let cfg = HwConfig::default();
        assert_eq!(run_trace(&cfg, &[], DurationChoice::Max).unwrap(), 0);
    }

    #[test]
    fn run_trace_is_deterministic() {
        let cfg = HwConfig::default();
        let trace = vec![
            triple(0, "mov r1,#2", &[], true),
            triple(4, "mul r3,r1,r1", &[], true),
            triple(8, "str r3,[r1,#0]", &[2], true),
            triple(12, "bx lr", &[], true),
        ];
        let a = run_trace(&cfg, &trace, DurationChoice::Max).unwrap();
        let b = run_trace(&cfg, &trace, DurationChoice::Max).unwrap();
        assert_eq!(a, b);
        let lo = run_trace(&cfg, &trace, DurationChoice::Min).unwrap();
        assert_eq!(a - lo, (cfg.dur_mul.1 - cfg.dur_mul.0) as u64);
    }
}

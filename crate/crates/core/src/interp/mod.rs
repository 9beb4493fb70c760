//! Deterministic execution of IR functions with single-bit fault injection.

mod memory;
mod sites;

use std::fmt;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

pub use memory::{ArraySpec, MemoryImage, Region, GUARD_GAP, ORIGIN};
pub use sites::{enumerate_sites, ErrorModel, Site, SiteMask};

use crate::ir::{BinOp, BlockId, CastOp, CmpPred, FBinOp, Function, InstKind, ValueId, ValueType};

/// One injection: flip `bit` of the destination of the `k`-th (1-based)
/// eligible dynamic instruction under `model`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FaultSpec {
    pub model: ErrorModel,
    pub k: u64,
    pub bit: u32,
}

impl std::str::FromStr for FaultSpec {
    type Err = String;

    /// Parses `em1:k:bit` / `em2:k:bit`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [model, k, bit] = parts.as_slice() else {
            return Err(format!("expected MODEL:K:BIT, got `{s}`"));
        };
        let model: ErrorModel = model.parse()?;
        let k: u64 = k.parse().map_err(|_| format!("bad dynamic ordinal `{k}`"))?;
        let bit: u32 = bit.parse().map_err(|_| format!("bad bit position `{bit}`"))?;
        if k == 0 {
            return Err("dynamic ordinal is 1-based".into());
        }
        if bit >= 64 {
            return Err(format!("bit {bit} is outside a 64-bit value"));
        }
        Ok(FaultSpec { model, k, bit })
    }
}

/// Argument for one parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arg {
    Int(i64),
    Float(f64),
    /// Base address of an array region.
    Addr(u64),
}

impl Arg {
    fn bits(self) -> u64 {
        match self {
            Arg::Int(v) => v as u64,
            Arg::Float(v) => v.to_bits(),
            Arg::Addr(v) => v,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArgError {
    #[error("function takes {expected} arguments, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("argument for %{param} has the wrong type")]
    Type { param: String },
    #[error("argument for %{param} is not the base of a mapped array")]
    NotAnArray { param: String },
    #[error("budget must be positive")]
    ZeroBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CrashReason {
    UnmappedLoad(u64),
    UnmappedStore(u64),
    DivisionByZero,
}

impl fmt::Display for CrashReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CrashReason::UnmappedLoad(a) => write!(f, "unmapped load at {a:#x}"),
            CrashReason::UnmappedStore(a) => write!(f, "unmapped store at {a:#x}"),
            CrashReason::DivisionByZero => f.write_str("integer division by zero"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Completed,
    Crash(CrashReason),
    Hang,
}

/// Final contents of one result array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArraySnapshot {
    pub param: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    /// Dynamic instruction count when the instruction retired.
    pub step: u64,
    pub value: ValueId,
    pub opcode: &'static str,
    pub bits: u64,
    pub detector: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecResult {
    pub status: Status,
    pub results: Vec<ArraySnapshot>,
    /// Dynamic instruction count, phis and terminators included.
    pub dic: u64,
    pub detect_count: u64,
    /// Dynamic instances of EM-I sites executed.
    pub em1_sites: u64,
    /// Dynamic instances of EM-II sites executed.
    pub em2_sites: u64,
    /// Whether the requested fault was actually injected.
    pub injected: bool,
    pub trace: Vec<TraceRecord>,
}

impl ExecResult {
    pub fn eligible(&self, model: ErrorModel) -> u64 {
        match model {
            ErrorModel::Em1 => self.em1_sites,
            ErrorModel::Em2 => self.em2_sites,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    /// Executions beyond this dynamic instruction count are a hang.
    pub budget: u64,
    pub fault: Option<FaultSpec>,
    pub trace: bool,
}

impl RunConfig {
    pub fn fault_free(budget: u64) -> Self {
        RunConfig {
            budget,
            fault: None,
            trace: false,
        }
    }
}

/// A function prepared for repeated execution.
pub struct Interpreter<'f> {
    f: &'f Function,
    em1: SiteMask,
    em2: SiteMask,
    phi_counts: Vec<usize>,
}

impl<'f> Interpreter<'f> {
    /// `f` must be valid; callers are expected to have run validation.
    pub fn new(f: &'f Function) -> Self {
        Interpreter {
            f,
            em1: SiteMask::new(f, ErrorModel::Em1),
            em2: SiteMask::new(f, ErrorModel::Em2),
            phi_counts: f.blocks.iter().map(|b| b.first_non_phi()).collect(),
        }
    }

    pub fn function(&self) -> &'f Function {
        self.f
    }

    fn check_args(&self, mem: &MemoryImage, args: &[Arg]) -> Result<(), ArgError> {
        let f = self.f;
        if args.len() != f.params.len() {
            return Err(ArgError::Arity {
                expected: f.params.len(),
                got: args.len(),
            });
        }
        for (p, a) in f.params.iter().zip(args) {
            let param = f.name_of(p.value).to_string();
            match (f.ty(p.value), a) {
                (ValueType::Int64, Arg::Int(_)) | (ValueType::Float64, Arg::Float(_)) => {}
                (ValueType::Addr, Arg::Addr(base)) => {
                    if !mem.regions().iter().any(|r| r.base == *base) {
                        return Err(ArgError::NotAnArray { param });
                    }
                }
                _ => return Err(ArgError::Type { param }),
            }
        }
        Ok(())
    }

    pub fn run(&self, mem: &MemoryImage, args: &[Arg], cfg: &RunConfig) -> Result<ExecResult, ArgError> {
        if cfg.budget == 0 {
            return Err(ArgError::ZeroBudget);
        }
        self.check_args(mem, args)?;
        Ok(Machine::new(self, mem.clone(), args, cfg).execute())
    }

    /// Eligible dynamic instance counts `(EM-I, EM-II)` of a fault-free run.
    pub fn profile(&self, mem: &MemoryImage, args: &[Arg], budget: u64) -> Result<(u64, u64), ArgError> {
        let r = self.run(mem, args, &RunConfig::fault_free(budget))?;
        Ok((r.em1_sites, r.em2_sites))
    }
}

/// Convenience wrapper around [`Interpreter::run`].
pub fn run(f: &Function, mem: &MemoryImage, args: &[Arg], cfg: &RunConfig) -> Result<ExecResult, ArgError> {
    Interpreter::new(f).run(mem, args, cfg)
}

struct Machine<'a, 'f> {
    it: &'a Interpreter<'f>,
    vals: Vec<u64>,
    mem: MemoryImage,
    cfg: &'a RunConfig,
    dic: u64,
    detect_count: u64,
    em1: u64,
    em2: u64,
    injected: bool,
    trace: Vec<TraceRecord>,
}

enum Flow {
    Next,
    Jump(BlockId),
    Return,
    Stop(Status),
}

impl<'a, 'f> Machine<'a, 'f> {
    fn new(it: &'a Interpreter<'f>, mem: MemoryImage, args: &[Arg], cfg: &'a RunConfig) -> Self {
        let f = it.f;
        let mut vals = vec![0u64; f.values.len()];
        for (p, a) in f.params.iter().zip(args) {
            vals[p.value.index()] = a.bits();
        }
        Machine {
            it,
            vals,
            mem,
            cfg,
            dic: 0,
            detect_count: 0,
            em1: 0,
            em2: 0,
            injected: false,
            trace: Vec::new(),
        }
    }

    /// Counts eligible instances and applies the fault to `bits` if this is
    /// the selected one.
    #[inline]
    fn retire(&mut self, block: BlockId, i: usize, result: ValueId, mut bits: u64) {
        if self.it.em1.get(block, i) {
            self.em1 += 1;
            if let Some(FaultSpec { model: ErrorModel::Em1, k, bit }) = self.cfg.fault {
                if k == self.em1 {
                    bits ^= 1u64 << bit;
                    self.injected = true;
                }
            }
        }
        if self.it.em2.get(block, i) {
            self.em2 += 1;
            if let Some(FaultSpec { model: ErrorModel::Em2, k, bit }) = self.cfg.fault {
                if k == self.em2 {
                    bits ^= 1u64 << bit;
                    self.injected = true;
                }
            }
        }
        self.vals[result.index()] = bits;
        if self.cfg.trace {
            let inst = &self.it.f.blocks[block.index()].insts[i];
            self.trace.push(TraceRecord {
                step: self.dic,
                value: result,
                opcode: inst.kind.opcode(),
                bits,
                detector: inst.detector,
            });
        }
    }

    fn execute(mut self) -> ExecResult {
        let f = self.it.f;
        let mut block = BlockId::ENTRY;
        let mut prev = BlockId::ENTRY;
        let mut phi_vals: Vec<u64> = Vec::new();
        let status = 'run: loop {
            let insts = &f.blocks[block.index()].insts;
            let nphi = self.it.phi_counts[block.index()];
            if nphi > 0 {
                // Phis read their inputs simultaneously.
                phi_vals.clear();
                for inst in &insts[..nphi] {
                    let InstKind::Phi(incoming) = &inst.kind else {
                        unreachable!()
                    };
                    let v = incoming
                        .iter()
                        .find(|(_, p)| *p == prev)
                        .map(|(v, _)| *v)
                        .expect("validated phi covers every predecessor");
                    phi_vals.push(self.vals[v.index()]);
                }
                for i in 0..nphi {
                    self.dic += 1;
                    if self.dic > self.cfg.budget {
                        break 'run Status::Hang;
                    }
                    let r = insts[i].result.expect("phi has a result");
                    self.retire(block, i, r, phi_vals[i]);
                }
            }
            for i in nphi..insts.len() {
                self.dic += 1;
                if self.dic > self.cfg.budget {
                    break 'run Status::Hang;
                }
                match self.step(block, i) {
                    Flow::Next => {}
                    Flow::Jump(to) => {
                        prev = block;
                        block = to;
                        continue 'run;
                    }
                    Flow::Return => break 'run Status::Completed,
                    Flow::Stop(s) => break 'run s,
                }
            }
            unreachable!("validated block ends in a terminator");
        };
        let results = f
            .results
            .iter()
            .map(|r| {
                let param = f.name_of(*r).to_string();
                let bytes = self
                    .mem
                    .region(&param)
                    .map(|reg| reg.bytes.clone())
                    .unwrap_or_default();
                ArraySnapshot { param, bytes }
            })
            .collect();
        ExecResult {
            status,
            results,
            dic: self.dic,
            detect_count: self.detect_count,
            em1_sites: self.em1,
            em2_sites: self.em2,
            injected: self.injected,
            trace: self.trace,
        }
    }

    #[inline]
    fn step(&mut self, block: BlockId, i: usize) -> Flow {
        let f = self.it.f;
        let inst = &f.blocks[block.index()].insts[i];
        let v = |id: ValueId| self.vals[id.index()];
        let bits = match &inst.kind {
            InstKind::Const(k) => k.bits(),
            InstKind::Bin(op, a, b) => {
                let (x, y) = (v(*a) as i64, v(*b) as i64);
                let r = match op {
                    BinOp::Add => x.wrapping_add(y),
                    BinOp::Sub => x.wrapping_sub(y),
                    BinOp::Mul => x.wrapping_mul(y),
                    BinOp::Div if y == 0 => return Flow::Stop(Status::Crash(CrashReason::DivisionByZero)),
                    BinOp::Div => x.wrapping_div(y),
                    BinOp::Rem if y == 0 => return Flow::Stop(Status::Crash(CrashReason::DivisionByZero)),
                    BinOp::Rem => x.wrapping_rem(y),
                };
                r as u64
            }
            InstKind::FBin(op, a, b) => {
                let (x, y) = (f64::from_bits(v(*a)), f64::from_bits(v(*b)));
                let r = match op {
                    FBinOp::Add => x + y,
                    FBinOp::Sub => x - y,
                    FBinOp::Mul => x * y,
                    FBinOp::Div => x / y,
                };
                r.to_bits()
            }
            InstKind::Icmp(pred, a, b) => {
                let (x, y) = (v(*a), v(*b));
                let ord = if f.ty(*a) == ValueType::Addr {
                    x.cmp(&y)
                } else {
                    (x as i64).cmp(&(y as i64))
                };
                let r = match pred {
                    CmpPred::Eq => ord.is_eq(),
                    CmpPred::Ne => ord.is_ne(),
                    CmpPred::Lt => ord.is_lt(),
                    CmpPred::Le => ord.is_le(),
                    CmpPred::Gt => ord.is_gt(),
                    CmpPred::Ge => ord.is_ge(),
                };
                r as u64
            }
            InstKind::Cast(CastOp::SiToFp, a) => ((v(*a) as i64) as f64).to_bits(),
            InstKind::Cast(CastOp::FpToSi, a) => (f64::from_bits(v(*a)) as i64) as u64,
            InstKind::Gep {
                base,
                index,
                elem_size,
            } => crate::address::fba_address(v(*base), *elem_size, v(*index) as i64),
            InstKind::Load { addr, .. } => {
                let a = v(*addr);
                match self.mem.load_u64(a) {
                    Some(x) => x,
                    None => return Flow::Stop(Status::Crash(CrashReason::UnmappedLoad(a))),
                }
            }
            InstKind::Store { value, addr } => {
                let (x, a) = (v(*value), v(*addr));
                if !self.mem.store_u64(a, x) {
                    return Flow::Stop(Status::Crash(CrashReason::UnmappedStore(a)));
                }
                return Flow::Next;
            }
            InstKind::Detect(c) => {
                if v(*c) != 0 {
                    self.detect_count += 1;
                }
                return Flow::Next;
            }
            InstKind::Br(t) => return Flow::Jump(*t),
            InstKind::CondBr {
                cond,
                then_bb,
                else_bb,
            } => {
                return Flow::Jump(if v(*cond) != 0 { *then_bb } else { *else_bb });
            }
            InstKind::Ret => return Flow::Return,
            InstKind::Phi(_) => unreachable!("phis are handled at block entry"),
        };
        let r = inst.result.expect("value instruction has a result");
        self.retire(block, i, r, bits);
        Flow::Next
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Sdc,
    Benign,
    Crash,
    Hang,
}

impl OutcomeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeKind::Sdc => "sdc",
            OutcomeKind::Benign => "benign",
            OutcomeKind::Crash => "crash",
            OutcomeKind::Hang => "hang",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Outcome {
    pub kind: OutcomeKind,
    /// A detector fired during a run that completed.
    pub detected: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClassifyError {
    #[error("fault-free run did not complete ({0:?}); inputs or budget are misconfigured")]
    FaultFreeNotCompleted(Status),
}

/// Compares a faulty run against the fault-free run on identical inputs.
/// Result arrays are compared bit for bit.
pub fn classify(fault_free: &ExecResult, faulty: &ExecResult) -> Result<Outcome, ClassifyError> {
    if fault_free.status != Status::Completed {
        return Err(ClassifyError::FaultFreeNotCompleted(fault_free.status));
    }
    let kind = match faulty.status {
        Status::Crash(_) => OutcomeKind::Crash,
        Status::Hang => OutcomeKind::Hang,
        Status::Completed if faulty.results != fault_free.results => OutcomeKind::Sdc,
        Status::Completed => OutcomeKind::Benign,
    };
    Ok(Outcome {
        kind,
        detected: faulty.status == Status::Completed && faulty.detect_count > 0,
    })
}

/// Renders a trace as CSV: `step,instruction,opcode,value`.
pub fn trace_csv(f: &Function, trace: &[TraceRecord]) -> String {
    let mut out = String::from("step,instruction,opcode,value\n");
    for r in trace {
        let _ = writeln!(
            out,
            "{},%{},{},{:#018x}",
            r.step,
            f.name_of(r.value),
            r.opcode,
            r.bits
        );
    }
    out
}

use std::collections::HashMap;
use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::graph;
use super::{BlockId, CastOp, DefSite, Function, InstKind, LenFactor, ValueId, ValueType};

/// Rule identifiers for structural diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DiagCode {
    Syntax,
    UnknownValue,
    UnknownBlock,
    DuplicateDef,
    DuplicateBlock,
    EmptyFunction,
    MultipleTerminators,
    MissingTerminator,
    PhiNotLeading,
    PhiEdgeMismatch,
    SsaDominance,
    TypeMismatch,
    MalformedInst,
    InvalidGep,
    MixedElementSize,
    EntryHasPreds,
    UnreachableBlock,
    InvalidResult,
    InvalidLength,
}

impl DiagCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagCode::Syntax => "SYNTAX",
            DiagCode::UnknownValue => "UNKNOWN_VALUE",
            DiagCode::UnknownBlock => "UNKNOWN_BLOCK",
            DiagCode::DuplicateDef => "DUPLICATE_DEF",
            DiagCode::DuplicateBlock => "DUPLICATE_BLOCK",
            DiagCode::EmptyFunction => "EMPTY_FUNCTION",
            DiagCode::MultipleTerminators => "MULTIPLE_TERMINATORS",
            DiagCode::MissingTerminator => "MISSING_TERMINATOR",
            DiagCode::PhiNotLeading => "PHI_NOT_LEADING",
            DiagCode::PhiEdgeMismatch => "PHI_EDGE_MISMATCH",
            DiagCode::SsaDominance => "SSA_DOMINANCE",
            DiagCode::TypeMismatch => "TYPE_MISMATCH",
            DiagCode::MalformedInst => "MALFORMED_INST",
            DiagCode::InvalidGep => "INVALID_GEP",
            DiagCode::MixedElementSize => "MIXED_ELEMENT_SIZE",
            DiagCode::EntryHasPreds => "ENTRY_HAS_PREDS",
            DiagCode::UnreachableBlock => "UNREACHABLE_BLOCK",
            DiagCode::InvalidResult => "INVALID_RESULT",
            DiagCode::InvalidLength => "INVALID_LENGTH",
        }
    }
}

impl fmt::Display for DiagCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: DiagCode,
    /// Block name, when the problem is inside a block.
    pub block: Option<String>,
    /// Instruction position within the block.
    pub inst: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code)?;
        match (&self.block, self.inst) {
            (Some(b), Some(i)) => write!(f, " at {b}#{i}")?,
            (Some(b), None) => write!(f, " at {b}")?,
            _ => {}
        }
        write!(f, ": {}", self.message)
    }
}

struct Collector<'f> {
    f: &'f Function,
    out: Vec<Diagnostic>,
}

impl Collector<'_> {
    fn func(&mut self, code: DiagCode, message: String) {
        self.out.push(Diagnostic {
            code,
            block: None,
            inst: None,
            message,
        });
    }

    fn at(&mut self, code: DiagCode, b: BlockId, inst: Option<usize>, message: String) {
        let block = self.f.blocks.get(b.index()).map(|bl| bl.name.clone());
        self.out.push(Diagnostic {
            code,
            block,
            inst,
            message,
        });
    }
}

/// Checks every structural invariant of `f`. An empty result means the
/// function is well formed.
pub fn validate(f: &Function) -> Vec<Diagnostic> {
    let mut c = Collector {
        f,
        out: Vec::new(),
    };
    if f.blocks.is_empty() {
        c.func(DiagCode::EmptyFunction, "function has no blocks".into());
        return c.out;
    }
    check_values(&mut c);
    check_params(&mut c);
    let refs_ok = check_refs(&mut c);
    check_block_shape(&mut c);
    if !refs_ok {
        return c.out;
    }
    check_types(&mut c);
    check_geps(&mut c);
    check_cfg_and_ssa(&mut c);
    c.out
}

fn check_values(c: &mut Collector) {
    let f = c.f;
    let mut names: HashSet<&str> = HashSet::new();
    for v in &f.values {
        if !names.insert(v.name.as_str()) {
            c.func(
                DiagCode::DuplicateDef,
                format!("value name %{} is used more than once", v.name),
            );
        }
    }
    let mut blocks: HashSet<&str> = HashSet::new();
    for (i, b) in f.blocks.iter().enumerate() {
        if !blocks.insert(b.name.as_str()) {
            c.at(
                DiagCode::DuplicateBlock,
                BlockId(i as u32),
                None,
                format!("label {} is declared more than once", b.name),
            );
        }
    }
    let mut defined = vec![0u32; f.values.len()];
    for p in &f.params {
        if let Some(d) = defined.get_mut(p.value.index()) {
            *d += 1;
        }
    }
    for b in f.block_ids() {
        for (idx, inst) in f.block(b).insts.iter().enumerate() {
            if let Some(r) = inst.result {
                match defined.get_mut(r.index()) {
                    Some(d) => *d += 1,
                    None => c.at(
                        DiagCode::UnknownValue,
                        b,
                        Some(idx),
                        format!("result v{} is not in the value table", r.0),
                    ),
                }
            }
        }
    }
    for (i, count) in defined.iter().enumerate() {
        if *count > 1 {
            c.func(
                DiagCode::DuplicateDef,
                format!("%{} is defined {} times", f.values[i].name, count),
            );
        }
    }
}

fn check_params(c: &mut Collector) {
    let f = c.f;
    for p in &f.params {
        if p.value.index() >= f.values.len() {
            c.func(DiagCode::UnknownValue, "parameter outside value table".into());
            continue;
        }
        let ty = f.ty(p.value);
        match (&p.array, ty) {
            (Some(decl), ValueType::Addr) => {
                if decl.elem == ValueType::Addr {
                    c.func(
                        DiagCode::TypeMismatch,
                        format!("array %{} cannot hold addresses", f.name_of(p.value)),
                    );
                }
                if let Some(len) = &decl.len {
                    if len.factors.is_empty() {
                        c.func(
                            DiagCode::InvalidLength,
                            format!("array %{} has an empty length", f.name_of(p.value)),
                        );
                    }
                    for factor in &len.factors {
                        let ok = match *factor {
                            LenFactor::Const(n) => n > 0,
                            LenFactor::Param(v) => {
                                f.param_index(v).is_some()
                                    && v.index() < f.values.len()
                                    && f.ty(v) == ValueType::Int64
                            }
                        };
                        if !ok {
                            c.func(
                                DiagCode::InvalidLength,
                                format!(
                                    "length of %{} must multiply positive literals and i64 parameters",
                                    f.name_of(p.value)
                                ),
                            );
                        }
                    }
                }
            }
            (None, ValueType::Addr) | (Some(_), _) => c.func(
                DiagCode::TypeMismatch,
                format!(
                    "parameter %{} must be declared as an array iff it is an address",
                    f.name_of(p.value)
                ),
            ),
            (None, _) => {}
        }
    }
    for r in &f.results {
        let is_array = f
            .params
            .iter()
            .any(|p| p.value == *r && p.array.is_some());
        if !is_array {
            let name = f
                .values
                .get(r.index())
                .map(|v| v.name.clone())
                .unwrap_or_default();
            c.func(
                DiagCode::InvalidResult,
                format!("result %{name} is not an array parameter"),
            );
        }
    }
}

/// Every operand and branch target must name something; returns false if not.
fn check_refs(c: &mut Collector) -> bool {
    let f = c.f;
    let nv = f.values.len();
    let nb = f.blocks.len();
    let mut ok = true;
    for b in f.block_ids() {
        for (idx, inst) in f.block(b).insts.iter().enumerate() {
            for v in inst.kind.operands() {
                if v.index() >= nv {
                    ok = false;
                    c.at(
                        DiagCode::UnknownValue,
                        b,
                        Some(idx),
                        format!("operand v{} does not exist", v.0),
                    );
                }
            }
            let mut targets = inst.kind.successors();
            if let InstKind::Phi(incoming) = &inst.kind {
                targets.extend(incoming.iter().map(|(_, p)| *p));
            }
            for t in targets {
                if t.index() >= nb {
                    ok = false;
                    c.at(
                        DiagCode::UnknownBlock,
                        b,
                        Some(idx),
                        format!("block b{} does not exist", t.0),
                    );
                }
            }
            if let Some(r) = inst.result {
                if r.index() >= nv {
                    ok = false;
                }
            }
            if inst.kind.has_result() != inst.result.is_some() {
                ok = false;
                c.at(
                    DiagCode::MalformedInst,
                    b,
                    Some(idx),
                    format!("`{}` result presence is wrong", inst.kind.opcode()),
                );
            }
        }
    }
    ok
}

fn check_block_shape(c: &mut Collector) {
    let f = c.f;
    for b in f.block_ids() {
        let block = f.block(b);
        let terms: Vec<usize> = block
            .insts
            .iter()
            .enumerate()
            .filter(|(_, i)| i.kind.is_terminator())
            .map(|(i, _)| i)
            .collect();
        match terms.as_slice() {
            [] => c.at(
                DiagCode::MissingTerminator,
                b,
                None,
                "block does not end in br, condbr or ret".into(),
            ),
            [t] if *t + 1 == block.insts.len() => {}
            [t] => c.at(
                DiagCode::MultipleTerminators,
                b,
                Some(*t),
                "terminator is followed by more instructions".into(),
            ),
            [_, second, ..] => c.at(
                DiagCode::MultipleTerminators,
                b,
                Some(*second),
                format!("block has {} terminators", terms.len()),
            ),
        }
        let lead = block.first_non_phi();
        for (idx, inst) in block.insts.iter().enumerate().skip(lead) {
            if inst.kind.is_phi() {
                c.at(
                    DiagCode::PhiNotLeading,
                    b,
                    Some(idx),
                    "phi after a non-phi instruction".into(),
                );
            }
        }
    }
}

fn check_types(c: &mut Collector) {
    use ValueType::*;
    let f = c.f;
    for b in f.block_ids() {
        for (idx, inst) in f.block(b).insts.iter().enumerate() {
            let ty = |v: ValueId| f.ty(v);
            let result_ty = inst.result.map(|r| f.ty(r));
            let (operands_ok, expected): (bool, Option<ValueType>) = match &inst.kind {
                InstKind::Const(k) => (true, Some(k.ty())),
                InstKind::Bin(_, a, b2) => (ty(*a) == Int64 && ty(*b2) == Int64, Some(Int64)),
                InstKind::FBin(_, a, b2) => {
                    (ty(*a) == Float64 && ty(*b2) == Float64, Some(Float64))
                }
                InstKind::Icmp(_, a, b2) => {
                    (ty(*a) == ty(*b2) && ty(*a) != Float64, Some(Int64))
                }
                InstKind::Cast(CastOp::SiToFp, a) => (ty(*a) == Int64, Some(Float64)),
                InstKind::Cast(CastOp::FpToSi, a) => (ty(*a) == Float64, Some(Int64)),
                InstKind::Gep { base, index, .. } => {
                    (ty(*base) == Addr && ty(*index) == Int64, Some(Addr))
                }
                InstKind::Load { addr, ty: lty } => (ty(*addr) == Addr && *lty != Addr, Some(*lty)),
                InstKind::Store { value, addr } => (ty(*addr) == Addr && ty(*value) != Addr, None),
                InstKind::Phi(incoming) => {
                    let rt = result_ty.unwrap_or(Int64);
                    (incoming.iter().all(|(v, _)| ty(*v) == rt), Some(rt))
                }
                InstKind::Detect(v) => (ty(*v) == Int64, None),
                InstKind::CondBr { cond, .. } => (ty(*cond) == Int64, None),
                InstKind::Br(_) | InstKind::Ret => (true, None),
            };
            if !operands_ok || (expected.is_some() && result_ty != expected) {
                c.at(
                    DiagCode::TypeMismatch,
                    b,
                    Some(idx),
                    format!("ill-typed `{}`", inst.kind.opcode()),
                );
            }
        }
    }
}

fn check_geps(c: &mut Collector) {
    let f = c.f;
    let mut sizes: HashMap<ValueId, u64> = HashMap::new();
    for p in f.array_params() {
        if let Some(decl) = &p.array {
            sizes.insert(p.value, decl.elem.byte_size());
        }
    }
    for b in f.block_ids() {
        for (idx, inst) in f.block(b).insts.iter().enumerate() {
            if let InstKind::Gep {
                base, elem_size, ..
            } = inst.kind
            {
                if elem_size == 0 {
                    c.at(
                        DiagCode::InvalidGep,
                        b,
                        Some(idx),
                        "element size must be positive".into(),
                    );
                    continue;
                }
                let known = *sizes.entry(base).or_insert(elem_size);
                if known != elem_size {
                    c.at(
                        DiagCode::MixedElementSize,
                        b,
                        Some(idx),
                        format!(
                            "base %{} is indexed with element sizes {known} and {elem_size}",
                            f.name_of(base)
                        ),
                    );
                }
            }
        }
    }
}

fn check_cfg_and_ssa(c: &mut Collector) {
    let f = c.f;
    let preds = graph::predecessors(f);
    let reachable = graph::reachable(f);
    if !preds[0].is_empty() {
        c.at(
            DiagCode::EntryHasPreds,
            BlockId::ENTRY,
            None,
            "entry block has predecessors".into(),
        );
    }
    for b in f.block_ids() {
        if !reachable[b.index()] {
            c.at(
                DiagCode::UnreachableBlock,
                b,
                None,
                "block is unreachable from entry".into(),
            );
        }
    }

    for b in f.block_ids() {
        for (idx, inst) in f.block(b).insts.iter().enumerate() {
            if let InstKind::Phi(incoming) = &inst.kind {
                let mut got: Vec<BlockId> = incoming.iter().map(|(_, p)| *p).collect();
                got.sort();
                let dup = got.windows(2).any(|w| w[0] == w[1]);
                if dup || got != preds[b.index()] {
                    c.at(
                        DiagCode::PhiEdgeMismatch,
                        b,
                        Some(idx),
                        format!(
                            "phi has {} incoming entries for {} predecessors",
                            incoming.len(),
                            preds[b.index()].len()
                        ),
                    );
                }
            }
        }
    }

    let idom = graph::immediate_dominators(f);
    let sites = f.def_sites();
    let visible_at_end = |v: ValueId, at: BlockId| match sites[v.index()] {
        Some(DefSite::Param(_)) => true,
        Some(DefSite::Inst(db, _)) => graph::dominates(&idom, db, at),
        None => false,
    };
    for b in f.block_ids() {
        if !reachable[b.index()] {
            continue;
        }
        for (idx, inst) in f.block(b).insts.iter().enumerate() {
            if let InstKind::Phi(incoming) = &inst.kind {
                for (v, p) in incoming {
                    if sites[v.index()].is_none() {
                        c.at(
                            DiagCode::UnknownValue,
                            b,
                            Some(idx),
                            format!("%{} is never defined", f.name_of(*v)),
                        );
                    } else if reachable[p.index()] && !visible_at_end(*v, *p) {
                        c.at(
                            DiagCode::SsaDominance,
                            b,
                            Some(idx),
                            format!(
                                "%{} does not dominate the end of {}",
                                f.name_of(*v),
                                f.block(*p).name
                            ),
                        );
                    }
                }
                continue;
            }
            for v in inst.kind.operands() {
                let ok = match sites[v.index()] {
                    None => {
                        c.at(
                            DiagCode::UnknownValue,
                            b,
                            Some(idx),
                            format!("%{} is never defined", f.name_of(v)),
                        );
                        continue;
                    }
                    Some(DefSite::Param(_)) => true,
                    Some(DefSite::Inst(db, di)) => {
                        if db == b {
                            di < idx
                        } else {
                            graph::dominates(&idom, db, b)
                        }
                    }
                };
                if !ok {
                    c.at(
                        DiagCode::SsaDominance,
                        b,
                        Some(idx),
                        format!("use of %{} is not dominated by its definition", f.name_of(v)),
                    );
                }
            }
        }
    }
}

//! A small SSA intermediate representation.
//!
//! Functions are lists of basic blocks; the first block is the entry. Values
//! are named (`%name`) and live in a per-function value table, so instructions
//! refer to them through [`ValueId`]. The only instruction that produces an
//! address is `gep`, which always takes a single index and a constant element
//! size. Together with array parameters this keeps every structured address
//! computation in the program visible as one instruction.

mod builder;
pub mod graph;
mod parse;
mod print;
mod validate;

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

pub use builder::FunctionBuilder;
pub use parse::{parse_ir, IrError, ParseError};
pub use print::print_ir;
pub use validate::{validate, DiagCode, Diagnostic};

/// Index into a function's value table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ValueId(pub u32);

impl ValueId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Index into a function's block list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct BlockId(pub u32);

impl BlockId {
    pub const ENTRY: BlockId = BlockId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ValueType {
    Int64,
    Float64,
    /// 64-bit unsigned byte address.
    Addr,
}

impl ValueType {
    pub fn keyword(self) -> &'static str {
        match self {
            ValueType::Int64 => "i64",
            ValueType::Float64 => "f64",
            ValueType::Addr => "addr",
        }
    }

    /// Size in bytes of an element of this type when stored in memory.
    pub fn byte_size(self) -> u64 {
        8
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueData {
    pub name: String,
    pub ty: ValueType,
}

/// One factor of an array length: a literal or a scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LenFactor {
    Const(u64),
    Param(ValueId),
}

/// Array length as a product of factors, e.g. `2*%n` or `%n*%m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LenExpr {
    pub factors: Vec<LenFactor>,
}

impl LenExpr {
    pub fn constant(n: u64) -> Self {
        LenExpr {
            factors: vec![LenFactor::Const(n)],
        }
    }

    pub fn param(v: ValueId) -> Self {
        LenExpr {
            factors: vec![LenFactor::Param(v)],
        }
    }

    pub fn times(mut self, factor: LenFactor) -> Self {
        self.factors.push(factor);
        self
    }

    /// Evaluates the product, looking scalar parameters up in `lookup`.
    /// Returns `None` if a parameter is missing, negative or the product
    /// overflows.
    pub fn eval(&self, lookup: impl Fn(ValueId) -> Option<i64>) -> Option<u64> {
        let mut acc: u64 = 1;
        for factor in &self.factors {
            let v = match *factor {
                LenFactor::Const(c) => c,
                LenFactor::Param(p) => u64::try_from(lookup(p)?).ok()?,
            };
            acc = acc.checked_mul(v)?;
        }
        Some(acc)
    }
}

/// Declared shape of an array parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayDecl {
    pub elem: ValueType,
    pub len: Option<LenExpr>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub value: ValueId,
    /// Present for `addr` parameters: they are the array bases.
    pub array: Option<ArrayDecl>,
}

#[derive(Debug, Clone, Copy)]
pub enum Constant {
    Int(i64),
    Float(f64),
}

impl Constant {
    pub fn ty(self) -> ValueType {
        match self {
            Constant::Int(_) => ValueType::Int64,
            Constant::Float(_) => ValueType::Float64,
        }
    }

    pub fn bits(self) -> u64 {
        match self {
            Constant::Int(v) => v as u64,
            Constant::Float(v) => v.to_bits(),
        }
    }
}

// Bitwise so that NaN constants compare equal to themselves.
impl PartialEq for Constant {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Constant::Int(a), Constant::Int(b)) => a == b,
            (Constant::Float(a), Constant::Float(b)) => a.to_bits() == b.to_bits(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FBinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpPred {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpPred {
    pub fn keyword(self) -> &'static str {
        match self {
            CmpPred::Eq => "eq",
            CmpPred::Ne => "ne",
            CmpPred::Lt => "lt",
            CmpPred::Le => "le",
            CmpPred::Gt => "gt",
            CmpPred::Ge => "ge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CastOp {
    /// i64 -> f64
    SiToFp,
    /// f64 -> i64, saturating
    FpToSi,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InstKind {
    Const(Constant),
    Bin(BinOp, ValueId, ValueId),
    FBin(FBinOp, ValueId, ValueId),
    Icmp(CmpPred, ValueId, ValueId),
    Cast(CastOp, ValueId),
    /// `base + elem_size * index` with 64-bit wraparound.
    Gep {
        base: ValueId,
        index: ValueId,
        elem_size: u64,
    },
    Load {
        addr: ValueId,
        ty: ValueType,
    },
    Store {
        value: ValueId,
        addr: ValueId,
    },
    Phi(Vec<(ValueId, BlockId)>),
    /// Bumps the run's detection counter when the operand is nonzero.
    Detect(ValueId),
    Br(BlockId),
    CondBr {
        cond: ValueId,
        then_bb: BlockId,
        else_bb: BlockId,
    },
    Ret,
}

impl InstKind {
    pub fn opcode(&self) -> &'static str {
        match self {
            InstKind::Const(_) => "const",
            InstKind::Bin(op, ..) => match op {
                BinOp::Add => "add",
                BinOp::Sub => "sub",
                BinOp::Mul => "mul",
                BinOp::Div => "div",
                BinOp::Rem => "rem",
            },
            InstKind::FBin(op, ..) => match op {
                FBinOp::Add => "fadd",
                FBinOp::Sub => "fsub",
                FBinOp::Mul => "fmul",
                FBinOp::Div => "fdiv",
            },
            InstKind::Icmp(..) => "icmp",
            InstKind::Cast(CastOp::SiToFp, _) => "sitofp",
            InstKind::Cast(CastOp::FpToSi, _) => "fptosi",
            InstKind::Gep { .. } => "gep",
            InstKind::Load { .. } => "load",
            InstKind::Store { .. } => "store",
            InstKind::Phi(_) => "phi",
            InstKind::Detect(_) => "detect",
            InstKind::Br(_) => "br",
            InstKind::CondBr { .. } => "condbr",
            InstKind::Ret => "ret",
        }
    }

    pub fn is_terminator(&self) -> bool {
        matches!(self, InstKind::Br(_) | InstKind::CondBr { .. } | InstKind::Ret)
    }

    pub fn is_phi(&self) -> bool {
        matches!(self, InstKind::Phi(_))
    }

    /// Whether the instruction defines a value.
    pub fn has_result(&self) -> bool {
        !matches!(
            self,
            InstKind::Store { .. }
                | InstKind::Detect(_)
                | InstKind::Br(_)
                | InstKind::CondBr { .. }
                | InstKind::Ret
        )
    }

    /// Value operands in textual order.
    pub fn operands(&self) -> Vec<ValueId> {
        match self {
            InstKind::Const(_) | InstKind::Br(_) | InstKind::Ret => Vec::new(),
            InstKind::Bin(_, a, b) | InstKind::FBin(_, a, b) | InstKind::Icmp(_, a, b) => {
                vec![*a, *b]
            }
            InstKind::Cast(_, a) | InstKind::Detect(a) => vec![*a],
            InstKind::Gep { base, index, .. } => vec![*base, *index],
            InstKind::Load { addr, .. } => vec![*addr],
            InstKind::Store { value, addr } => vec![*value, *addr],
            InstKind::Phi(incoming) => incoming.iter().map(|(v, _)| *v).collect(),
            InstKind::CondBr { cond, .. } => vec![*cond],
        }
    }

    pub fn for_each_operand_mut(&mut self, mut f: impl FnMut(&mut ValueId)) {
        match self {
            InstKind::Const(_) | InstKind::Br(_) | InstKind::Ret => {}
            InstKind::Bin(_, a, b) | InstKind::FBin(_, a, b) | InstKind::Icmp(_, a, b) => {
                f(a);
                f(b);
            }
            InstKind::Cast(_, a) | InstKind::Detect(a) => f(a),
            InstKind::Gep { base, index, .. } => {
                f(base);
                f(index);
            }
            InstKind::Load { addr, .. } => f(addr),
            InstKind::Store { value, addr } => {
                f(value);
                f(addr);
            }
            InstKind::Phi(incoming) => incoming.iter_mut().for_each(|(v, _)| f(v)),
            InstKind::CondBr { cond, .. } => f(cond),
        }
    }

    /// Successor blocks of a terminator, deduplicated, in textual order.
    pub fn successors(&self) -> Vec<BlockId> {
        match self {
            InstKind::Br(t) => vec![*t],
            InstKind::CondBr {
                then_bb, else_bb, ..
            } => {
                if then_bb == else_bb {
                    vec![*then_bb]
                } else {
                    vec![*then_bb, *else_bb]
                }
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inst {
    pub result: Option<ValueId>,
    pub kind: InstKind,
    /// Detector code is excluded from fault-site enumeration.
    pub detector: bool,
}

impl Inst {
    pub fn new(result: Option<ValueId>, kind: InstKind) -> Self {
        Inst {
            result,
            kind,
            detector: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub insts: Vec<Inst>,
}

impl Block {
    pub fn terminator(&self) -> Option<&Inst> {
        self.insts.last().filter(|i| i.kind.is_terminator())
    }

    pub fn successors(&self) -> Vec<BlockId> {
        self.terminator()
            .map(|t| t.kind.successors())
            .unwrap_or_default()
    }

    /// Index of the first non-phi instruction.
    pub fn first_non_phi(&self) -> usize {
        self.insts
            .iter()
            .position(|i| !i.kind.is_phi())
            .unwrap_or(self.insts.len())
    }
}

/// Where a value is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefSite {
    Param(usize),
    Inst(BlockId, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Function {
    pub name: String,
    pub values: Vec<ValueData>,
    pub params: Vec<Param>,
    pub blocks: Vec<Block>,
    /// Array parameters whose final contents are the program output.
    pub results: Vec<ValueId>,
}

impl Function {
    pub fn value(&self, v: ValueId) -> &ValueData {
        &self.values[v.index()]
    }

    pub fn name_of(&self, v: ValueId) -> &str {
        &self.values[v.index()].name
    }

    pub fn ty(&self, v: ValueId) -> ValueType {
        self.values[v.index()].ty
    }

    pub fn block(&self, b: BlockId) -> &Block {
        &self.blocks[b.index()]
    }

    pub fn block_ids(&self) -> impl Iterator<Item = BlockId> {
        (0..self.blocks.len() as u32).map(BlockId)
    }

    pub fn find_value(&self, name: &str) -> Option<ValueId> {
        self.values
            .iter()
            .position(|v| v.name == name)
            .map(|i| ValueId(i as u32))
    }

    pub fn find_block(&self, name: &str) -> Option<BlockId> {
        self.blocks
            .iter()
            .position(|b| b.name == name)
            .map(|i| BlockId(i as u32))
    }

    pub fn param_index(&self, v: ValueId) -> Option<usize> {
        self.params.iter().position(|p| p.value == v)
    }

    /// Array parameters, in declaration order.
    pub fn array_params(&self) -> impl Iterator<Item = &Param> {
        self.params.iter().filter(|p| p.array.is_some())
    }

    /// Definition site of every value; `None` for values with no definition.
    pub fn def_sites(&self) -> Vec<Option<DefSite>> {
        let mut sites = vec![None; self.values.len()];
        for (i, p) in self.params.iter().enumerate() {
            if let Some(slot) = sites.get_mut(p.value.index()) {
                *slot = Some(DefSite::Param(i));
            }
        }
        for b in self.block_ids() {
            for (idx, inst) in self.block(b).insts.iter().enumerate() {
                if let Some(r) = inst.result {
                    if let Some(slot) = sites.get_mut(r.index()) {
                        slot.get_or_insert(DefSite::Inst(b, idx));
                    }
                }
            }
        }
        sites
    }

    /// The instruction defining `v`, if any.
    pub fn def_inst(&self, v: ValueId) -> Option<&Inst> {
        self.blocks
            .iter()
            .flat_map(|b| b.insts.iter())
            .find(|i| i.result == Some(v))
    }

    pub fn count_insts(&self, pred: impl Fn(&Inst) -> bool) -> usize {
        self.blocks
            .iter()
            .flat_map(|b| b.insts.iter())
            .filter(|i| pred(i))
            .count()
    }

    /// Rewrites every use of `from` into `to`.
    pub fn replace_all_uses(&mut self, from: ValueId, to: ValueId) {
        for block in &mut self.blocks {
            for inst in &mut block.insts {
                inst.kind.for_each_operand_mut(|v| {
                    if *v == from {
                        *v = to;
                    }
                });
            }
        }
    }

    /// Appends a value to the table. The caller is responsible for the name
    /// being unique.
    pub fn push_value(&mut self, name: impl Into<String>, ty: ValueType) -> ValueId {
        let id = ValueId(self.values.len() as u32);
        self.values.push(ValueData {
            name: name.into(),
            ty,
        });
        id
    }

    /// Renumbers values into canonical order: parameters first, then
    /// definitions in block and instruction order. Values that are neither
    /// defined nor used are dropped.
    pub fn compact(&mut self) {
        let mut order: Vec<ValueId> = Vec::with_capacity(self.values.len());
        let mut seen = vec![false; self.values.len()];
        let mut visit = |v: ValueId, order: &mut Vec<ValueId>| {
            if let Some(s) = seen.get_mut(v.index()) {
                if !*s {
                    *s = true;
                    order.push(v);
                }
            }
        };
        for p in &self.params {
            visit(p.value, &mut order);
        }
        for block in &self.blocks {
            for inst in &block.insts {
                if let Some(r) = inst.result {
                    visit(r, &mut order);
                }
            }
        }
        // Values used but never defined keep a slot so validation can report them.
        for block in &self.blocks {
            for inst in &block.insts {
                for v in inst.kind.operands() {
                    visit(v, &mut order);
                }
            }
        }
        let mut remap: HashMap<ValueId, ValueId> = HashMap::with_capacity(order.len());
        let mut values = Vec::with_capacity(order.len());
        for (new, old) in order.iter().enumerate() {
            remap.insert(*old, ValueId(new as u32));
            values.push(self.values[old.index()].clone());
        }
        let map = |v: &mut ValueId| {
            if let Some(n) = remap.get(v) {
                *v = *n;
            }
        };
        for p in &mut self.params {
            map(&mut p.value);
            if let Some(ArrayDecl { len: Some(len), .. }) = &mut p.array {
                for factor in &mut len.factors {
                    if let LenFactor::Param(v) = factor {
                        map(v);
                    }
                }
            }
        }
        for block in &mut self.blocks {
            for inst in &mut block.insts {
                if let Some(r) = &mut inst.result {
                    map(r);
                }
                inst.kind.for_each_operand_mut(map);
            }
        }
        for r in &mut self.results {
            map(r);
        }
        self.values = values;
    }
}

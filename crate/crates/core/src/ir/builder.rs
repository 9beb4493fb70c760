use std::collections::HashSet;

use super::validate::{validate, Diagnostic};
use super::{
    ArrayDecl, BinOp, Block, BlockId, CastOp, CmpPred, Constant, FBinOp, Function, Inst, InstKind,
    LenExpr, Param, ValueId, ValueType,
};

/// Incremental construction of a [`Function`].
///
/// Instructions are appended to the current block. Value names are made
/// unique by suffixing a counter, so callers can reuse hints freely.
pub struct FunctionBuilder {
    f: Function,
    current: BlockId,
    value_names: HashSet<String>,
    block_names: HashSet<String>,
}

impl FunctionBuilder {
    /// Starts a function with an empty `entry` block selected.
    pub fn new(name: &str) -> Self {
        let mut b = FunctionBuilder {
            f: Function {
                name: name.to_string(),
                values: Vec::new(),
                params: Vec::new(),
                blocks: Vec::new(),
                results: Vec::new(),
            },
            current: BlockId::ENTRY,
            value_names: HashSet::new(),
            block_names: HashSet::new(),
        };
        let entry = b.new_block("entry");
        b.switch_to(entry);
        b
    }

    fn fresh_value(&mut self, hint: &str, ty: ValueType) -> ValueId {
        let name = unique(&mut self.value_names, hint);
        self.f.push_value(name, ty)
    }

    pub fn array_param(&mut self, name: &str, elem: ValueType, len: LenExpr) -> ValueId {
        let v = self.fresh_value(name, ValueType::Addr);
        self.f.params.push(Param {
            value: v,
            array: Some(ArrayDecl {
                elem,
                len: Some(len),
            }),
        });
        v
    }

    pub fn scalar_param(&mut self, name: &str, ty: ValueType) -> ValueId {
        let v = self.fresh_value(name, ty);
        self.f.params.push(Param {
            value: v,
            array: None,
        });
        v
    }

    pub fn mark_result(&mut self, array: ValueId) {
        self.f.results.push(array);
    }

    pub fn new_block(&mut self, hint: &str) -> BlockId {
        let name = unique(&mut self.block_names, hint);
        self.f.blocks.push(Block {
            name,
            insts: Vec::new(),
        });
        BlockId(self.f.blocks.len() as u32 - 1)
    }

    pub fn switch_to(&mut self, b: BlockId) {
        self.current = b;
    }

    pub fn current_block(&self) -> BlockId {
        self.current
    }

    /// Renames `v` to a unique name derived from `hint`.
    pub fn name(&mut self, v: ValueId, hint: &str) -> ValueId {
        let old = std::mem::take(&mut self.f.values[v.index()].name);
        self.value_names.remove(&old);
        self.f.values[v.index()].name = unique(&mut self.value_names, hint);
        v
    }

    fn push(&mut self, hint: &str, ty: Option<ValueType>, kind: InstKind) -> Option<ValueId> {
        let result = ty.map(|t| self.fresh_value(hint, t));
        self.f.blocks[self.current.index()]
            .insts
            .push(Inst::new(result, kind));
        result
    }

    fn push_value(&mut self, hint: &str, ty: ValueType, kind: InstKind) -> ValueId {
        self.push(hint, Some(ty), kind).expect("typed push")
    }

    pub fn iconst(&mut self, v: i64) -> ValueId {
        self.push_value("c", ValueType::Int64, InstKind::Const(Constant::Int(v)))
    }

    pub fn fconst(&mut self, v: f64) -> ValueId {
        self.push_value("k", ValueType::Float64, InstKind::Const(Constant::Float(v)))
    }

    pub fn bin(&mut self, op: BinOp, a: ValueId, b: ValueId) -> ValueId {
        self.push_value("t", ValueType::Int64, InstKind::Bin(op, a, b))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.bin(BinOp::Add, a, b)
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.bin(BinOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.bin(BinOp::Mul, a, b)
    }

    pub fn fbin(&mut self, op: FBinOp, a: ValueId, b: ValueId) -> ValueId {
        self.push_value("f", ValueType::Float64, InstKind::FBin(op, a, b))
    }

    pub fn fadd(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.fbin(FBinOp::Add, a, b)
    }

    pub fn fsub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.fbin(FBinOp::Sub, a, b)
    }

    pub fn fmul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.fbin(FBinOp::Mul, a, b)
    }

    pub fn fdiv(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.fbin(FBinOp::Div, a, b)
    }

    pub fn icmp(&mut self, pred: CmpPred, a: ValueId, b: ValueId) -> ValueId {
        self.push_value("cmp", ValueType::Int64, InstKind::Icmp(pred, a, b))
    }

    pub fn sitofp(&mut self, a: ValueId) -> ValueId {
        self.push_value("fp", ValueType::Float64, InstKind::Cast(CastOp::SiToFp, a))
    }

    pub fn fptosi(&mut self, a: ValueId) -> ValueId {
        self.push_value("si", ValueType::Int64, InstKind::Cast(CastOp::FpToSi, a))
    }

    pub fn gep(&mut self, base: ValueId, index: ValueId, elem_size: u64) -> ValueId {
        self.push_value(
            "p",
            ValueType::Addr,
            InstKind::Gep {
                base,
                index,
                elem_size,
            },
        )
    }

    pub fn load(&mut self, addr: ValueId, ty: ValueType) -> ValueId {
        self.push_value("v", ty, InstKind::Load { addr, ty })
    }

    pub fn store(&mut self, value: ValueId, addr: ValueId) {
        self.push("", None, InstKind::Store { value, addr });
    }

    /// Loads element `index` of an 8-byte-element array.
    pub fn load_elem(&mut self, base: ValueId, index: ValueId, ty: ValueType) -> ValueId {
        let p = self.gep(base, index, 8);
        self.load(p, ty)
    }

    pub fn store_elem(&mut self, value: ValueId, base: ValueId, index: ValueId) {
        let p = self.gep(base, index, 8);
        self.store(value, p);
    }

    pub fn phi(&mut self, hint: &str, ty: ValueType, incoming: Vec<(ValueId, BlockId)>) -> ValueId {
        self.push_value(hint, ty, InstKind::Phi(incoming))
    }

    /// Adds an incoming pair to an existing phi.
    pub fn add_incoming(&mut self, phi: ValueId, value: ValueId, pred: BlockId) {
        for block in &mut self.f.blocks {
            for inst in &mut block.insts {
                if inst.result == Some(phi) {
                    if let InstKind::Phi(incoming) = &mut inst.kind {
                        incoming.push((value, pred));
                        return;
                    }
                }
            }
        }
        panic!("add_incoming: v{} is not a phi", phi.0);
    }

    pub fn detect(&mut self, cond: ValueId) {
        self.push("", None, InstKind::Detect(cond));
    }

    pub fn br(&mut self, target: BlockId) {
        self.push("", None, InstKind::Br(target));
    }

    pub fn condbr(&mut self, cond: ValueId, then_bb: BlockId, else_bb: BlockId) {
        self.push(
            "",
            None,
            InstKind::CondBr {
                cond,
                then_bb,
                else_bb,
            },
        );
    }

    pub fn ret(&mut self) {
        self.push("", None, InstKind::Ret);
    }

    /// Emits `for (i = start; i < end; i++) body(i)` as a guarded,
    /// bottom-tested loop and leaves the builder in the loop's exit block.
    pub fn for_range(
        &mut self,
        hint: &str,
        start: ValueId,
        end: ValueId,
        body: impl FnOnce(&mut Self, ValueId),
    ) {
        let pre = self.current;
        let body_bb = self.new_block(&format!("{hint}.body"));
        let exit = self.new_block(&format!("{hint}.exit"));
        let guard = self.icmp(CmpPred::Lt, start, end);
        self.condbr(guard, body_bb, exit);

        self.switch_to(body_bb);
        let iv = self.phi(hint, ValueType::Int64, vec![(start, pre)]);
        body(self, iv);
        let one = self.iconst(1);
        let next = self.add(iv, one);
        self.name(next, &format!("{hint}.next"));
        let more = self.icmp(CmpPred::Lt, next, end);
        let latch = self.current;
        self.condbr(more, body_bb, exit);
        self.add_incoming(iv, next, latch);

        self.switch_to(exit);
    }

    /// Finishes construction: canonicalizes value numbering and validates.
    pub fn finish(self) -> Result<Function, Vec<Diagnostic>> {
        let mut f = self.f;
        f.compact();
        let diags = validate(&f);
        if diags.is_empty() {
            Ok(f)
        } else {
            Err(diags)
        }
    }

    /// Returns the function as built, without validation.
    pub fn into_function(self) -> Function {
        let mut f = self.f;
        f.compact();
        f
    }
}

fn unique(taken: &mut HashSet<String>, hint: &str) -> String {
    let base = if hint.is_empty() { "v" } else { hint };
    if taken.insert(base.to_string()) {
        return base.to_string();
    }
    let mut n = 1usize;
    loop {
        let candidate = format!("{base}{n}");
        if taken.insert(candidate.clone()) {
            return candidate;
        }
        n += 1;
    }
}

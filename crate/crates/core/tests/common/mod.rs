//! Random structured programs for property tests.
#![allow(dead_code)]

use presage::interp::{Arg, ArraySpec, MemoryImage};
use presage::ir::{CmpPred, Function, FunctionBuilder, LenExpr, ValueId, ValueType};
use proptest::prelude::*;

/// `(scale * var + offset) rem n`, always inside `[0, n)`.
#[derive(Debug, Clone)]
pub struct Idx {
    pub var: usize,
    pub scale: i64,
    pub offset: i64,
}

#[derive(Debug, Clone)]
pub enum Val {
    Iv(usize),
    Const(f64),
    Load(usize, Idx),
    Add(Box<Val>, Box<Val>),
}

#[derive(Debug, Clone)]
pub enum Stmt {
    Store(usize, Idx, Val),
    /// Store through a row pointer: `r = gep a, i1; gep r, i2 - i1`.
    RowStore(usize, Idx, Idx, Val),
    Loop(Vec<Stmt>),
    If(i64, Vec<Stmt>, Vec<Stmt>),
}

#[derive(Debug, Clone)]
pub struct Program {
    pub arrays: usize,
    pub body: Vec<Stmt>,
}

fn idx() -> impl Strategy<Value = Idx> {
    (0usize..4, 0i64..4, 0i64..16).prop_map(|(var, scale, offset)| Idx { var, scale, offset })
}

fn val() -> impl Strategy<Value = Val> {
    let leaf = prop_oneof![
        (0usize..4).prop_map(Val::Iv),
        (-4.0f64..4.0).prop_map(Val::Const),
        (0usize..3, idx()).prop_map(|(a, i)| Val::Load(a, i)),
    ];
    leaf.prop_recursive(2, 6, 2, |inner| {
        (inner.clone(), inner).prop_map(|(a, b)| Val::Add(Box::new(a), Box::new(b)))
    })
}

fn stmts(derived: bool) -> impl Strategy<Value = Vec<Stmt>> {
    let store = (0usize..3, idx(), val()).prop_map(|(a, i, v)| Stmt::Store(a, i, v));
    let leaf = if derived {
        prop_oneof![
            3 => store,
            1 => (0usize..3, idx(), idx(), val()).prop_map(|(a, i, j, v)| Stmt::RowStore(a, i, j, v)),
        ]
        .boxed()
    } else {
        store.boxed()
    };
    let stmt = leaf.prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 1..4).prop_map(Stmt::Loop),
            (
                2i64..4,
                prop::collection::vec(inner.clone(), 0..3),
                prop::collection::vec(inner, 0..3)
            )
                .prop_map(|(m, t, e)| Stmt::If(m, t, e)),
        ]
    });
    prop::collection::vec(stmt, 0..4)
}

/// Programs whose geps all use array parameters as bases.
pub fn program() -> impl Strategy<Value = Program> {
    (1usize..4, stmts(false)).prop_map(|(arrays, body)| Program { arrays, body })
}

/// Programs that may also address through derived row pointers.
pub fn program_with_derived() -> impl Strategy<Value = Program> {
    (1usize..4, stmts(true)).prop_map(|(arrays, body)| Program { arrays, body })
}

struct Ctx {
    n: ValueId,
    zero: ValueId,
    arrays: Vec<ValueId>,
    vars: Vec<ValueId>,
}

impl Ctx {
    fn var(&self, i: usize) -> ValueId {
        if self.vars.is_empty() {
            self.zero
        } else {
            self.vars[i % self.vars.len()]
        }
    }

    fn index(&self, b: &mut FunctionBuilder, i: &Idx) -> ValueId {
        let s = b.iconst(i.scale);
        let o = b.iconst(i.offset);
        let t = b.mul(s, self.var(i.var));
        let t = b.add(t, o);
        b.bin(presage::ir::BinOp::Rem, t, self.n)
    }

    fn array(&self, a: usize) -> ValueId {
        self.arrays[a % self.arrays.len()]
    }

    fn value(&self, b: &mut FunctionBuilder, v: &Val) -> ValueId {
        match v {
            Val::Iv(i) => {
                let x = self.var(*i);
                b.sitofp(x)
            }
            Val::Const(c) => b.fconst(*c),
            Val::Load(a, i) => {
                let idx = self.index(b, i);
                b.load_elem(self.array(*a), idx, ValueType::Float64)
            }
            Val::Add(x, y) => {
                let x = self.value(b, x);
                let y = self.value(b, y);
                b.fadd(x, y)
            }
        }
    }

    fn emit(&mut self, b: &mut FunctionBuilder, body: &[Stmt]) {
        for s in body {
            match s {
                Stmt::Store(a, i, v) => {
                    let x = self.value(b, v);
                    let idx = self.index(b, i);
                    b.store_elem(x, self.array(*a), idx);
                }
                Stmt::RowStore(a, i, j, v) => {
                    let x = self.value(b, v);
                    let i1 = self.index(b, i);
                    let i2 = self.index(b, j);
                    let row = b.gep(self.array(*a), i1, 8);
                    let rel = b.sub(i2, i1);
                    let p = b.gep(row, rel, 8);
                    b.store(x, p);
                }
                Stmt::Loop(inner) => {
                    let zero = self.zero;
                    let n = self.n;
                    b.for_range("l", zero, n, |b, iv| {
                        self.vars.push(iv);
                        self.emit(b, inner);
                        self.vars.pop();
                    });
                }
                Stmt::If(m, t, e) => {
                    let x = self.var(0);
                    let m = b.iconst(*m);
                    let r = b.bin(presage::ir::BinOp::Rem, x, m);
                    let c = b.icmp(CmpPred::Eq, r, self.zero);
                    let then_bb = b.new_block("then");
                    let else_bb = b.new_block("else");
                    let join = b.new_block("join");
                    b.condbr(c, then_bb, else_bb);
                    for (bb, stmts) in [(then_bb, t), (else_bb, e)] {
                        b.switch_to(bb);
                        self.emit(b, stmts);
                        b.br(join);
                    }
                    b.switch_to(join);
                }
            }
        }
    }
}

pub fn build(p: &Program) -> Function {
    let mut b = FunctionBuilder::new("gen");
    let n = b.scalar_param("n", ValueType::Int64);
    let arrays: Vec<ValueId> = (0..p.arrays)
        .map(|i| b.array_param(&format!("a{i}"), ValueType::Float64, LenExpr::param(n)))
        .collect();
    let zero = b.iconst(0);
    let mut ctx = Ctx {
        n,
        zero,
        arrays: arrays.clone(),
        vars: Vec::new(),
    };
    ctx.emit(&mut b, &p.body);
    b.ret();
    for a in arrays {
        b.mark_result(a);
    }
    b.finish().expect("generated program is valid")
}

/// Inputs for a generated program: `n` elements per array.
pub fn inputs(f: &Function, n: i64, fill: f64) -> (MemoryImage, Vec<Arg>) {
    let specs: Vec<ArraySpec> = f
        .array_params()
        .map(|p| ArraySpec::new(f.name_of(p.value), ValueType::Float64, n as u64))
        .collect();
    let mut mem = MemoryImage::layout(&specs);
    for (k, s) in specs.iter().enumerate() {
        let vals: Vec<u64> = (0..n).map(|i| (fill + (i as f64) * 0.5 - k as f64).to_bits()).collect();
        mem.fill(&s.param, vals);
    }
    let args = f
        .params
        .iter()
        .map(|p| match p.array {
            Some(_) => Arg::Addr(mem.base_of(f.name_of(p.value)).unwrap()),
            None => Arg::Int(n),
        })
        .collect();
    (mem, args)
}

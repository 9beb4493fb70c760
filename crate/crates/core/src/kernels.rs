//! Benchmark corpus: small PolyBench-style kernels over linearized `f64`
//! arrays, plus the two-function motivating pair `foo1`/`foo2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::interp::{Arg, ArraySpec, MemoryImage};
use crate::ir::{Function, FunctionBuilder, LenExpr, LenFactor, ValueId, ValueType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Motivating,
    Stencil,
    Blas,
    Solver,
}

/// Inclusive range for one integer parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamRange {
    pub name: &'static str,
    pub lo: i64,
    pub hi: i64,
}

#[derive(Clone, Serialize)]
pub struct KernelSpec {
    pub name: &'static str,
    pub description: &'static str,
    pub category: Category,
    pub params: Vec<ParamRange>,
    /// Some gep uses a base that is not an array parameter.
    pub has_derived_bases: bool,
    #[serde(skip)]
    builder: fn() -> FunctionBuilder,
}

impl std::fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelSpec")
            .field("name", &self.name)
            .field("category", &self.category)
            .field("params", &self.params)
            .field("has_derived_bases", &self.has_derived_bases)
            .finish()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KernelError {
    #[error("unknown kernel `{0}`")]
    Unknown(String),
}

/// Default cap on the fault-free dynamic instruction count of any input.
pub const DIC_CAP: u64 = 10_000_000;

impl KernelSpec {
    pub fn build(&self) -> Function {
        (self.builder)()
            .finish()
            .unwrap_or_else(|d| panic!("kernel {} is invalid: {d:?}", self.name))
    }

    pub fn range(&self, param: &str) -> Option<ParamRange> {
        self.params.iter().copied().find(|p| p.name == param)
    }
}

fn p(name: &'static str, lo: i64, hi: i64) -> ParamRange {
    ParamRange { name, lo, hi }
}

/// All kernels in listing order.
pub fn corpus() -> Vec<KernelSpec> {
    use Category::*;
    let k = |name, description, category, params, has_derived_bases, builder| KernelSpec {
        name,
        description,
        category,
        params,
        has_derived_bases,
        builder,
    };
    vec![
        k("foo1", "strided store loop, fixed-base addressing", Motivating, vec![p("n", 8, 32)], false, foo1 as fn() -> FunctionBuilder),
        k("foo2", "foo1 with a hand-written relative-base chain", Motivating, vec![p("n", 8, 32)], true, foo2),
        k("jacobi2d-mini", "2-D Jacobi 5-point stencil", Stencil, vec![p("n", 8, 16), p("tsteps", 1, 3)], false, jacobi2d),
        k("seidel2d-mini", "2-D Gauss-Seidel 9-point stencil", Stencil, vec![p("n", 8, 14), p("tsteps", 1, 3)], false, seidel2d),
        k("adi-mini", "alternating direction implicit solver", Stencil, vec![p("n", 8, 12), p("tsteps", 1, 2)], false, adi),
        k("fdtd2d-mini", "2-D finite-difference time-domain, row-pointer hz update", Stencil, vec![p("nx", 8, 12), p("ny", 8, 12), p("tmax", 1, 3)], true, fdtd2d),
        k("gesummv-mini", "scalar, vector and matrix multiplication", Blas, vec![p("n", 8, 16)], false, gesummv),
        k("atax-mini", "matrix transpose and vector multiplication", Blas, vec![p("m", 8, 16), p("n", 8, 16)], false, atax),
        k("bicg-mini", "BiCG sub-kernel of BiCGStab", Blas, vec![p("n", 8, 16), p("m", 8, 16)], false, bicg),
        k("trmm-mini", "triangular matrix multiply", Blas, vec![p("m", 8, 14), p("n", 8, 14)], false, trmm),
        k("lu-mini", "LU decomposition without pivoting", Solver, vec![p("n", 8, 14)], false, lu),
        k("cholesky-mini", "square-root-free Cholesky (LDL^T) decomposition", Solver, vec![p("n", 8, 14)], false, cholesky),
    ]
}

pub fn spec(name: &str) -> Result<KernelSpec, KernelError> {
    let name = if name == "fdtd-mini" { "fdtd2d-mini" } else { name };
    corpus()
        .into_iter()
        .find(|k| k.name == name)
        .ok_or_else(|| KernelError::Unknown(name.to_string()))
}

pub fn build(name: &str) -> Result<Function, KernelError> {
    spec(name).map(|s| s.build())
}

pub fn names() -> Vec<&'static str> {
    corpus().iter().map(|k| k.name).collect()
}

/// Draws scalar parameters uniformly from their ranges and fills every array
/// with uniform values in [-1, 1]. Deterministic in `(spec, seed)`.
pub fn gen_inputs(spec: &KernelSpec, seed: u64) -> (MemoryImage, Vec<Arg>) {
    gen_inputs_for(&spec.build(), spec, seed)
}

/// [`gen_inputs`] for an already built function; `f` must have the kernel's
/// parameter list (a transformed kernel does).
pub fn gen_inputs_for(f: &Function, spec: &KernelSpec, seed: u64) -> (MemoryImage, Vec<Arg>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scalars: Vec<Option<Arg>> = vec![None; f.values.len()];
    for param in f.params.iter().filter(|p| p.array.is_none()) {
        let name = f.name_of(param.value);
        let r = spec
            .range(name)
            .unwrap_or_else(|| panic!("kernel {} has no range for %{name}", spec.name));
        scalars[param.value.index()] = Some(Arg::Int(rng.gen_range(r.lo..=r.hi)));
    }
    layout_and_fill(f, &scalars, &mut rng).expect("kernel inputs are well formed")
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InputError {
    #[error("no value given for scalar parameter %{0}")]
    MissingScalar(String),
    #[error("%{0} is not a scalar parameter")]
    UnknownScalar(String),
    #[error("value for %{0} has the wrong type")]
    Type(String),
    #[error("array %{0} has no computable length; declare one like `addr[f64 x %n]`")]
    NoLength(String),
    #[error("array %{0} would be empty")]
    Empty(String),
}

/// Inputs for an arbitrary function: scalars are given by name, arrays are
/// sized from their declared lengths and filled from `seed` (floats uniform
/// in [-1, 1], integers in [-100, 100]).
pub fn inputs_from_scalars(
    f: &Function,
    given: &[(String, Arg)],
    seed: u64,
) -> Result<(MemoryImage, Vec<Arg>), InputError> {
    let mut scalars: Vec<Option<Arg>> = vec![None; f.values.len()];
    for (name, arg) in given {
        let v = f
            .find_value(name)
            .filter(|v| f.params.iter().any(|p| p.value == *v && p.array.is_none()))
            .ok_or_else(|| InputError::UnknownScalar(name.clone()))?;
        let ok = matches!(
            (f.ty(v), arg),
            (ValueType::Int64, Arg::Int(_)) | (ValueType::Float64, Arg::Float(_))
        );
        if !ok {
            return Err(InputError::Type(name.clone()));
        }
        scalars[v.index()] = Some(*arg);
    }
    for p in f.params.iter().filter(|p| p.array.is_none()) {
        if scalars[p.value.index()].is_none() {
            return Err(InputError::MissingScalar(f.name_of(p.value).to_string()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    layout_and_fill(f, &scalars, &mut rng)
}

fn layout_and_fill(
    f: &Function,
    scalars: &[Option<Arg>],
    rng: &mut ChaCha8Rng,
) -> Result<(MemoryImage, Vec<Arg>), InputError> {
    let int = |v: ValueId| match scalars[v.index()] {
        Some(Arg::Int(x)) => Some(x),
        _ => None,
    };
    let mut arrays = Vec::new();
    for param in f.array_params() {
        let name = f.name_of(param.value).to_string();
        let decl = param.array.as_ref().expect("array param");
        let len = decl
            .len
            .as_ref()
            .and_then(|l| l.eval(int))
            .ok_or_else(|| InputError::NoLength(name.clone()))?;
        if len == 0 {
            return Err(InputError::Empty(name));
        }
        arrays.push(ArraySpec::new(name, decl.elem, len));
    }
    let mut mem = MemoryImage::layout(&arrays);
    for a in &arrays {
        let values: Vec<u64> = (0..a.length)
            .map(|_| match a.elem {
                ValueType::Int64 => rng.gen_range(-100i64..=100) as u64,
                _ => rng.gen_range(-1.0f64..=1.0).to_bits(),
            })
            .collect();
        mem.fill(&a.param, values);
    }
    let args = f
        .params
        .iter()
        .map(|param| match scalars[param.value.index()] {
            Some(a) => a,
            None => Arg::Addr(mem.base_of(f.name_of(param.value)).expect("laid out")),
        })
        .collect();
    Ok((mem, args))
}

const F64: ValueType = ValueType::Float64;
const I64: ValueType = ValueType::Int64;

fn sq(n: ValueId) -> LenExpr {
    LenExpr::param(n).times(LenFactor::Param(n))
}

fn rect(a: ValueId, b: ValueId) -> LenExpr {
    LenExpr::param(a).times(LenFactor::Param(b))
}

/// `i * n + j`
fn at(b: &mut FunctionBuilder, i: ValueId, n: ValueId, j: ValueId) -> ValueId {
    let row = b.mul(i, n);
    b.add(row, j)
}

fn foo1() -> FunctionBuilder {
    let mut b = FunctionBuilder::new("foo1");
    let n = b.scalar_param("n", I64);
    let a = b.array_param("a", F64, LenExpr::param(n).times(LenFactor::Const(2)));
    let one = b.iconst(1);
    let two = b.iconst(2);
    b.for_range("i", one, n, |b, i| {
        let t = b.mul(two, i);
        let id = b.sub(t, two);
        b.name(id, "id");
        let x = b.sitofp(i);
        b.store_elem(x, a, id);
    });
    b.ret();
    b.mark_result(a);
    b
}

fn foo2() -> FunctionBuilder {
    let mut b = FunctionBuilder::new("foo2");
    let n = b.scalar_param("n", I64);
    let a = b.array_param("a", F64, LenExpr::param(n).times(LenFactor::Const(2)));
    let zero = b.iconst(0);
    let one = b.iconst(1);
    let two = b.iconst(2);
    let pre = b.current_block();
    b.for_range("i", one, n, |b, i| {
        let addr = b.phi("addr", ValueType::Addr, vec![(a, pre)]);
        let pid = b.phi("pid", I64, vec![(zero, pre)]);
        let t = b.mul(two, i);
        let id = b.sub(t, two);
        b.name(id, "id");
        let rid = b.sub(id, pid);
        b.name(rid, "rid");
        let p = b.gep(addr, rid, 8);
        let x = b.sitofp(i);
        b.store(x, p);
        let latch = b.current_block();
        b.add_incoming(addr, p, latch);
        b.add_incoming(pid, id, latch);
    });
    b.ret();
    b.mark_result(a);
    b
}

fn jacobi2d() -> FunctionBuilder {
    let mut b = FunctionBuilder::new("jacobi2d");
    let n = b.scalar_param("n", I64);
    let tsteps = b.scalar_param("tsteps", I64);
    let arr = b.array_param("A", F64, sq(n));
    let brr = b.array_param("B", F64, sq(n));
    let zero = b.iconst(0);
    let one = b.iconst(1);
    let nm1 = b.sub(n, one);
    let fifth = b.fconst(0.2);
    let sweep = |b: &mut FunctionBuilder, src: ValueId, dst: ValueId, hint: &str| {
        b.for_range(&format!("{hint}i"), one, nm1, |b, i| {
            b.for_range(&format!("{hint}j"), one, nm1, |b, j| {
                let c = at(b, i, n, j);
                let w = b.sub(c, one);
                let e = b.add(c, one);
                let s = b.add(c, n);
                let nn = b.sub(c, n);
                let v0 = b.load_elem(src, c, F64);
                let v1 = b.load_elem(src, w, F64);
                let v2 = b.load_elem(src, e, F64);
                let v3 = b.load_elem(src, s, F64);
                let v4 = b.load_elem(src, nn, F64);
                let s1 = b.fadd(v0, v1);
                let s2 = b.fadd(s1, v2);
                let s3 = b.fadd(s2, v3);
                let s4 = b.fadd(s3, v4);
                let r = b.fmul(fifth, s4);
                b.store_elem(r, dst, c);
            });
        });
    };
    b.for_range("t", zero, tsteps, |b, _| {
        sweep(b, arr, brr, "b");
        sweep(b, brr, arr, "a");
    });
    b.ret();
    b.mark_result(arr);
    b.mark_result(brr);
    b
}

fn seidel2d() -> FunctionBuilder {
    let mut b = FunctionBuilder::new("seidel2d");
    let n = b.scalar_param("n", I64);
    let tsteps = b.scalar_param("tsteps", I64);
    let arr = b.array_param("A", F64, sq(n));
    let zero = b.iconst(0);
    let one = b.iconst(1);
    let nm1 = b.sub(n, one);
    let nine = b.fconst(9.0);
    b.for_range("t", zero, tsteps, |b, _| {
        b.for_range("i", one, nm1, |b, i| {
            b.for_range("j", one, nm1, |b, j| {
                let c = at(b, i, n, j);
                let up = b.sub(c, n);
                let down = b.add(c, n);
                let mut acc = None;
                for row in [up, c, down] {
                    let l = b.sub(row, one);
                    let r = b.add(row, one);
                    for idx in [l, row, r] {
                        let v = b.load_elem(arr, idx, F64);
                        acc = Some(match acc {
                            None => v,
                            Some(s) => b.fadd(s, v),
                        });
                    }
                }
                let r = b.fdiv(acc.expect("nine terms"), nine);
                b.store_elem(r, arr, c);
            });
        });
    });
    b.ret();
    b.mark_result(arr);
    b
}

fn adi() -> FunctionBuilder {
    let mut b = FunctionBuilder::new("adi");
    let n = b.scalar_param("n", I64);
    let tsteps = b.scalar_param("tsteps", I64);
    let u = b.array_param("u", F64, sq(n));
    let v = b.array_param("v", F64, sq(n));
    let p = b.array_param("p", F64, sq(n));
    let q = b.array_param("q", F64, sq(n));
    let zero = b.iconst(0);
    let one = b.iconst(1);
    let two = b.iconst(2);
    let nm1 = b.sub(n, one);
    let nm2 = b.sub(n, two);
    let f0 = b.fconst(0.0);
    let f1 = b.fconst(1.0);
    let f2 = b.fconst(2.0);
    let nf = b.sitofp(n);
    let tf = b.sitofp(tsteps);
    let dx = b.fdiv(f1, nf);
    let dy = b.fdiv(f1, nf);
    let dt = b.fdiv(f1, tf);
    let b1 = b.fconst(2.0);
    let b2 = b.fconst(1.0);
    let num1 = b.fmul(b1, dt);
    let dx2 = b.fmul(dx, dx);
    let mul1 = b.fdiv(num1, dx2);
    let num2 = b.fmul(b2, dt);
    let dy2 = b.fmul(dy, dy);
    let mul2 = b.fdiv(num2, dy2);
    let neg1 = b.fsub(f0, mul1);
    let ca = b.fdiv(neg1, f2);
    let cb = b.fadd(f1, mul1);
    let cc = ca;
    let neg2 = b.fsub(f0, mul2);
    let cd = b.fdiv(neg2, f2);
    let ce = b.fadd(f1, mul2);
    let cf = cd;
    let neg_a = b.fsub(f0, ca);
    let neg_c = b.fsub(f0, cc);
    let neg_d = b.fsub(f0, cd);
    let neg_f = b.fsub(f0, cf);
    let two_a = b.fmul(f2, ca);
    let one_2a = b.fadd(f1, two_a);
    let two_d = b.fmul(f2, cd);
    let one_2d = b.fadd(f1, two_d);

    b.for_range("t", zero, tsteps, |b, _| {
        // Column sweep.
        b.for_range("ci", one, nm1, |b, i| {
            b.store_elem(f1, v, i);
            let ri = b.mul(i, n);
            b.store_elem(f0, p, ri);
            let v0 = b.load_elem(v, i, F64);
            b.store_elem(v0, q, ri);
            b.for_range("cj", one, nm1, |b, j| {
                let ij = b.add(ri, j);
                let ijm = b.sub(ij, one);
                let pm = b.load_elem(p, ijm, F64);
                let ap = b.fmul(ca, pm);
                let den = b.fadd(ap, cb);
                let pv = b.fdiv(neg_c, den);
                b.store_elem(pv, p, ij);
                let ji = at(b, j, n, i);
                let jim = b.sub(ji, one);
                let jip = b.add(ji, one);
                let u0 = b.load_elem(u, jim, F64);
                let u1 = b.load_elem(u, ji, F64);
                let u2 = b.load_elem(u, jip, F64);
                let qm = b.load_elem(q, ijm, F64);
                let t0 = b.fmul(neg_d, u0);
                let t1 = b.fmul(one_2d, u1);
                let s0 = b.fadd(t0, t1);
                let t2 = b.fmul(cf, u2);
                let s1 = b.fsub(s0, t2);
                let t3 = b.fmul(ca, qm);
                let s2 = b.fsub(s1, t3);
                let qv = b.fdiv(s2, den);
                b.store_elem(qv, q, ij);
            });
            let last = at(b, nm1, n, i);
            b.store_elem(f1, v, last);
            b.for_range("cb", zero, nm2, |b, k| {
                let j = b.sub(nm2, k);
                let ji = at(b, j, n, i);
                let below = b.add(ji, n);
                let ij = b.add(ri, j);
                let pv = b.load_elem(p, ij, F64);
                let vv = b.load_elem(v, below, F64);
                let qv = b.load_elem(q, ij, F64);
                let m = b.fmul(pv, vv);
                let r = b.fadd(m, qv);
                b.store_elem(r, v, ji);
            });
        });
        // Row sweep.
        b.for_range("ri", one, nm1, |b, i| {
            let ri = b.mul(i, n);
            b.store_elem(f1, u, ri);
            b.store_elem(f0, p, ri);
            let u0 = b.load_elem(u, ri, F64);
            b.store_elem(u0, q, ri);
            b.for_range("rj", one, nm1, |b, j| {
                let ij = b.add(ri, j);
                let ijm = b.sub(ij, one);
                let pm = b.load_elem(p, ijm, F64);
                let dp = b.fmul(cd, pm);
                let den = b.fadd(dp, ce);
                let pv = b.fdiv(neg_f, den);
                b.store_elem(pv, p, ij);
                let up = b.sub(ij, n);
                let down = b.add(ij, n);
                let v0 = b.load_elem(v, up, F64);
                let v1 = b.load_elem(v, ij, F64);
                let v2 = b.load_elem(v, down, F64);
                let qm = b.load_elem(q, ijm, F64);
                let t0 = b.fmul(neg_a, v0);
                let t1 = b.fmul(one_2a, v1);
                let s0 = b.fadd(t0, t1);
                let t2 = b.fmul(cc, v2);
                let s1 = b.fsub(s0, t2);
                let t3 = b.fmul(cd, qm);
                let s2 = b.fsub(s1, t3);
                let qv = b.fdiv(s2, den);
                b.store_elem(qv, q, ij);
            });
            let last = b.add(ri, nm1);
            b.store_elem(f1, u, last);
            b.for_range("rb", zero, nm2, |b, k| {
                let j = b.sub(nm2, k);
                let ij = b.add(ri, j);
                let right = b.add(ij, one);
                let pv = b.load_elem(p, ij, F64);
                let uv = b.load_elem(u, right, F64);
                let qv = b.load_elem(q, ij, F64);
                let m = b.fmul(pv, uv);
                let r = b.fadd(m, qv);
                b.store_elem(r, u, ij);
            });
        });
    });
    b.ret();
    b.mark_result(u);
    b.mark_result(v);
    b
}

fn fdtd2d() -> FunctionBuilder {
    let mut b = FunctionBuilder::new("fdtd2d");
    let nx = b.scalar_param("nx", I64);
    let ny = b.scalar_param("ny", I64);
    let tmax = b.scalar_param("tmax", I64);
    let ex = b.array_param("ex", F64, rect(nx, ny));
    let ey = b.array_param("ey", F64, rect(nx, ny));
    let hz = b.array_param("hz", F64, rect(nx, ny));
    let fict = b.array_param("fict", F64, LenExpr::param(tmax));
    let zero = b.iconst(0);
    let one = b.iconst(1);
    let nxm1 = b.sub(nx, one);
    let nym1 = b.sub(ny, one);
    let half = b.fconst(0.5);
    let c07 = b.fconst(0.7);
    b.for_range("t", zero, tmax, |b, t| {
        b.for_range("j0", zero, ny, |b, j| {
            let ft = b.load_elem(fict, t, F64);
            b.store_elem(ft, ey, j);
        });
        b.for_range("yi", one, nx, |b, i| {
            b.for_range("yj", zero, ny, |b, j| {
                let ij = at(b, i, ny, j);
                let up = b.sub(ij, ny);
                let e = b.load_elem(ey, ij, F64);
                let h0 = b.load_elem(hz, ij, F64);
                let h1 = b.load_elem(hz, up, F64);
                let d = b.fsub(h0, h1);
                let m = b.fmul(half, d);
                let r = b.fsub(e, m);
                b.store_elem(r, ey, ij);
            });
        });
        b.for_range("xi", zero, nx, |b, i| {
            b.for_range("xj", one, ny, |b, j| {
                let ij = at(b, i, ny, j);
                let left = b.sub(ij, one);
                let e = b.load_elem(ex, ij, F64);
                let h0 = b.load_elem(hz, ij, F64);
                let h1 = b.load_elem(hz, left, F64);
                let d = b.fsub(h0, h1);
                let m = b.fmul(half, d);
                let r = b.fsub(e, m);
                b.store_elem(r, ex, ij);
            });
        });
        b.for_range("hi", zero, nxm1, |b, i| {
            let off = b.mul(i, ny);
            let row = b.gep(hz, off, 8);
            b.name(row, "hz.row");
            b.for_range("hj", zero, nym1, |b, j| {
                let ij = b.add(off, j);
                let right = b.add(ij, one);
                let down = b.add(ij, ny);
                let cell = b.gep(row, j, 8);
                let h = b.load(cell, F64);
                let x1 = b.load_elem(ex, right, F64);
                let x0 = b.load_elem(ex, ij, F64);
                let y1 = b.load_elem(ey, down, F64);
                let y0 = b.load_elem(ey, ij, F64);
                let s0 = b.fsub(x1, x0);
                let s1 = b.fadd(s0, y1);
                let s2 = b.fsub(s1, y0);
                let m = b.fmul(c07, s2);
                let r = b.fsub(h, m);
                b.store(r, cell);
            });
        });
    });
    b.ret();
    b.mark_result(ex);
    b.mark_result(ey);
    b.mark_result(hz);
    b
}

fn gesummv() -> FunctionBuilder {
    let mut b = FunctionBuilder::new("gesummv");
    let n = b.scalar_param("n", I64);
    let a = b.array_param("A", F64, sq(n));
    let bm = b.array_param("B", F64, sq(n));
    let x = b.array_param("x", F64, LenExpr::param(n));
    let y = b.array_param("y", F64, LenExpr::param(n));
    let tmp = b.array_param("tmp", F64, LenExpr::param(n));
    let zero = b.iconst(0);
    let f0 = b.fconst(0.0);
    let alpha = b.fconst(1.5);
    let beta = b.fconst(1.2);
    b.for_range("i", zero, n, |b, i| {
        b.store_elem(f0, tmp, i);
        b.store_elem(f0, y, i);
        b.for_range("j", zero, n, |b, j| {
            let ij = at(b, i, n, j);
            let av = b.load_elem(a, ij, F64);
            let xv = b.load_elem(x, j, F64);
            let m = b.fmul(av, xv);
            let tv = b.load_elem(tmp, i, F64);
            let s = b.fadd(m, tv);
            b.store_elem(s, tmp, i);
            let bv = b.load_elem(bm, ij, F64);
            let xv2 = b.load_elem(x, j, F64);
            let m2 = b.fmul(bv, xv2);
            let yv = b.load_elem(y, i, F64);
            let s2 = b.fadd(m2, yv);
            b.store_elem(s2, y, i);
        });
        let tv = b.load_elem(tmp, i, F64);
        let yv = b.load_elem(y, i, F64);
        let l = b.fmul(alpha, tv);
        let r = b.fmul(beta, yv);
        let s = b.fadd(l, r);
        b.store_elem(s, y, i);
    });
    b.ret();
    b.mark_result(tmp);
    b.mark_result(y);
    b
}

fn atax() -> FunctionBuilder {
    let mut b = FunctionBuilder::new("atax");
    let m = b.scalar_param("m", I64);
    let n = b.scalar_param("n", I64);
    let a = b.array_param("A", F64, rect(m, n));
    let x = b.array_param("x", F64, LenExpr::param(n));
    let y = b.array_param("y", F64, LenExpr::param(n));
    let tmp = b.array_param("tmp", F64, LenExpr::param(m));
    let zero = b.iconst(0);
    let f0 = b.fconst(0.0);
    b.for_range("z", zero, n, |b, i| {
        b.store_elem(f0, y, i);
    });
    b.for_range("i", zero, m, |b, i| {
        b.store_elem(f0, tmp, i);
        b.for_range("j", zero, n, |b, j| {
            let ij = at(b, i, n, j);
            let tv = b.load_elem(tmp, i, F64);
            let av = b.load_elem(a, ij, F64);
            let xv = b.load_elem(x, j, F64);
            let p = b.fmul(av, xv);
            let s = b.fadd(tv, p);
            b.store_elem(s, tmp, i);
        });
        b.for_range("k", zero, n, |b, j| {
            let ij = at(b, i, n, j);
            let yv = b.load_elem(y, j, F64);
            let av = b.load_elem(a, ij, F64);
            let tv = b.load_elem(tmp, i, F64);
            let p = b.fmul(av, tv);
            let s = b.fadd(yv, p);
            b.store_elem(s, y, j);
        });
    });
    b.ret();
    b.mark_result(y);
    b.mark_result(tmp);
    b
}

fn bicg() -> FunctionBuilder {
    let mut b = FunctionBuilder::new("bicg");
    let n = b.scalar_param("n", I64);
    let m = b.scalar_param("m", I64);
    let a = b.array_param("A", F64, rect(n, m));
    let s = b.array_param("s", F64, LenExpr::param(m));
    let q = b.array_param("q", F64, LenExpr::param(n));
    let p = b.array_param("p", F64, LenExpr::param(m));
    let r = b.array_param("r", F64, LenExpr::param(n));
    let zero = b.iconst(0);
    let f0 = b.fconst(0.0);
    b.for_range("z", zero, m, |b, i| {
        b.store_elem(f0, s, i);
    });
    b.for_range("i", zero, n, |b, i| {
        b.store_elem(f0, q, i);
        b.for_range("j", zero, m, |b, j| {
            let ij = at(b, i, m, j);
            let sv = b.load_elem(s, j, F64);
            let rv = b.load_elem(r, i, F64);
            let av = b.load_elem(a, ij, F64);
            let t = b.fmul(rv, av);
            let s1 = b.fadd(sv, t);
            b.store_elem(s1, s, j);
            let qv = b.load_elem(q, i, F64);
            let av2 = b.load_elem(a, ij, F64);
            let pv = b.load_elem(p, j, F64);
            let t2 = b.fmul(av2, pv);
            let q1 = b.fadd(qv, t2);
            b.store_elem(q1, q, i);
        });
    });
    b.ret();
    b.mark_result(s);
    b.mark_result(q);
    b
}

fn trmm() -> FunctionBuilder {
    let mut b = FunctionBuilder::new("trmm");
    let m = b.scalar_param("m", I64);
    let n = b.scalar_param("n", I64);
    let a = b.array_param("A", F64, sq(m));
    let bm = b.array_param("B", F64, rect(m, n));
    let zero = b.iconst(0);
    let one = b.iconst(1);
    let alpha = b.fconst(1.5);
    b.for_range("i", zero, m, |b, i| {
        let k0 = b.add(i, one);
        b.for_range("j", zero, n, |b, j| {
            let ij = at(b, i, n, j);
            b.for_range("k", k0, m, |b, k| {
                let ki = at(b, k, m, i);
                let kj = at(b, k, n, j);
                let bij = b.load_elem(bm, ij, F64);
                let aki = b.load_elem(a, ki, F64);
                let bkj = b.load_elem(bm, kj, F64);
                let prod = b.fmul(aki, bkj);
                let s = b.fadd(bij, prod);
                b.store_elem(s, bm, ij);
            });
            let bij = b.load_elem(bm, ij, F64);
            let r = b.fmul(alpha, bij);
            b.store_elem(r, bm, ij);
        });
    });
    b.ret();
    b.mark_result(bm);
    b
}

/// Adds `n` to every diagonal element so elimination never divides by a
/// value near zero.
fn boost_diagonal(b: &mut FunctionBuilder, a: ValueId, n: ValueId, zero: ValueId) {
    let nf = b.sitofp(n);
    b.for_range("d", zero, n, |b, i| {
        let ii = at(b, i, n, i);
        let v = b.load_elem(a, ii, F64);
        let s = b.fadd(v, nf);
        b.store_elem(s, a, ii);
    });
}

fn lu() -> FunctionBuilder {
    let mut b = FunctionBuilder::new("lu");
    let n = b.scalar_param("n", I64);
    let a = b.array_param("A", F64, sq(n));
    let zero = b.iconst(0);
    boost_diagonal(&mut b, a, n, zero);
    b.for_range("i", zero, n, |b, i| {
        b.for_range("j", zero, i, |b, j| {
            let ij = at(b, i, n, j);
            b.for_range("k", zero, j, |b, k| {
                let ik = at(b, i, n, k);
                let kj = at(b, k, n, j);
                let aij = b.load_elem(a, ij, F64);
                let aik = b.load_elem(a, ik, F64);
                let akj = b.load_elem(a, kj, F64);
                let prod = b.fmul(aik, akj);
                let r = b.fsub(aij, prod);
                b.store_elem(r, a, ij);
            });
            let jj = at(b, j, n, j);
            let aij = b.load_elem(a, ij, F64);
            let ajj = b.load_elem(a, jj, F64);
            let r = b.fdiv(aij, ajj);
            b.store_elem(r, a, ij);
        });
        b.for_range("u", i, n, |b, j| {
            let ij = at(b, i, n, j);
            b.for_range("uk", zero, i, |b, k| {
                let ik = at(b, i, n, k);
                let kj = at(b, k, n, j);
                let aij = b.load_elem(a, ij, F64);
                let aik = b.load_elem(a, ik, F64);
                let akj = b.load_elem(a, kj, F64);
                let prod = b.fmul(aik, akj);
                let r = b.fsub(aij, prod);
                b.store_elem(r, a, ij);
            });
        });
    });
    b.ret();
    b.mark_result(a);
    b
}

fn cholesky() -> FunctionBuilder {
    let mut b = FunctionBuilder::new("cholesky");
    let n = b.scalar_param("n", I64);
    let a = b.array_param("A", F64, sq(n));
    let zero = b.iconst(0);
    boost_diagonal(&mut b, a, n, zero);
    b.for_range("i", zero, n, |b, i| {
        b.for_range("j", zero, i, |b, j| {
            let ij = at(b, i, n, j);
            b.for_range("k", zero, j, |b, k| {
                let ik = at(b, i, n, k);
                let jk = at(b, j, n, k);
                let kk = at(b, k, n, k);
                let aij = b.load_elem(a, ij, F64);
                let aik = b.load_elem(a, ik, F64);
                let ajk = b.load_elem(a, jk, F64);
                let akk = b.load_elem(a, kk, F64);
                let p0 = b.fmul(aik, ajk);
                let p1 = b.fmul(p0, akk);
                let r = b.fsub(aij, p1);
                b.store_elem(r, a, ij);
            });
            let jj = at(b, j, n, j);
            let aij = b.load_elem(a, ij, F64);
            let ajj = b.load_elem(a, jj, F64);
            let r = b.fdiv(aij, ajj);
            b.store_elem(r, a, ij);
        });
        let ii = at(b, i, n, i);
        b.for_range("d", zero, i, |b, k| {
            let ik = at(b, i, n, k);
            let kk = at(b, k, n, k);
            let aii = b.load_elem(a, ii, F64);
            let aik = b.load_elem(a, ik, F64);
            let akk = b.load_elem(a, kk, F64);
            let p0 = b.fmul(aik, aik);
            let p1 = b.fmul(p0, akk);
            let r = b.fsub(aii, p1);
            b.store_elem(r, a, ii);
        });
    });
    b.ret();
    b.mark_result(a);
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{run, RunConfig, Status};
    use crate::ir::InstKind;

    #[test]
    fn every_kernel_builds_and_validates() {
        for k in corpus() {
            let f = k.build();
            assert!(crate::ir::validate(&f).is_empty(), "{}", k.name);
        }
    }

    #[test]
    fn foo1_shape() {
        let f = build("foo1").unwrap();
        let geps = f.count_insts(|i| matches!(i.kind, InstKind::Gep { .. }));
        assert_eq!(geps, 1);
        let facts = crate::cfg::analyze(&f).unwrap();
        assert_eq!(facts.back_edges.len(), 1);
        assert_eq!(facts.bases, vec![f.find_value("a").unwrap()]);
    }

    #[test]
    fn derived_base_flag_matches_structure() {
        for k in corpus() {
            let f = k.build();
            let derived = f.blocks.iter().flat_map(|b| &b.insts).any(|i| match i.kind {
                InstKind::Gep { base, .. } => f.param_index(base).is_none(),
                _ => false,
            });
            assert_eq!(derived, k.has_derived_bases, "{}", k.name);
        }
    }

    #[test]
    fn inputs_are_deterministic_and_in_range() {
        let k = spec("foo1").unwrap();
        let (m1, a1) = gen_inputs(&k, 1);
        let (m2, a2) = gen_inputs(&k, 1);
        assert_eq!(m1, m2);
        assert_eq!(a1, a2);
        for seed in 0..50 {
            let (mem, args) = gen_inputs(&k, seed);
            let Arg::Int(n) = args[0] else { panic!() };
            assert!((8..=32).contains(&n));
            assert_eq!(mem.region("a").unwrap().spec.length, 2 * n as u64);
            assert!(mem.read_f64("a").iter().all(|x| (-1.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn largest_inputs_stay_under_the_dic_cap() {
        for k in corpus() {
            let f = k.build();
            // Push every scalar to the top of its range.
            let mut spec_hi = k.clone();
            for r in &mut spec_hi.params {
                r.lo = r.hi;
            }
            let (mem_hi, args_hi) = gen_inputs(&spec_hi, 0);
            let r = run(&f, &mem_hi, &args_hi, &RunConfig::fault_free(DIC_CAP)).unwrap();
            assert_eq!(r.status, Status::Completed, "{}", k.name);
        }
    }

    #[test]
    fn unknown_kernel_is_an_error() {
        assert_eq!(build("gemm").unwrap_err(), KernelError::Unknown("gemm".into()));
        assert!(build("fdtd-mini").is_ok());
    }
}

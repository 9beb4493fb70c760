use std::fmt::Write;

use super::{ArrayDecl, Constant, Function, Inst, InstKind, LenFactor};

/// Renders `f` in the canonical textual form accepted by [`super::parse_ir`].
pub fn print_ir(f: &Function) -> String {
    let mut out = String::new();
    write_header(f, &mut out);
    for block in &f.blocks {
        let _ = writeln!(out, "{}:", block.name);
        for inst in &block.insts {
            out.push_str("  ");
            write_inst(f, inst, &mut out);
            out.push('\n');
        }
    }
    out
}

fn write_header(f: &Function, out: &mut String) {
    let _ = write!(out, "func @{}(", f.name);
    for (i, p) in f.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "%{}: ", f.name_of(p.value));
        match &p.array {
            Some(decl) => write_array(f, decl, out),
            None => out.push_str(f.ty(p.value).keyword()),
        }
    }
    out.push_str(") -> results(");
    for (i, r) in f.results.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "%{}", f.name_of(*r));
    }
    out.push_str(")\n");
}

fn write_array(f: &Function, decl: &ArrayDecl, out: &mut String) {
    let _ = write!(out, "addr[{}", decl.elem.keyword());
    if let Some(len) = &decl.len {
        out.push_str(" x ");
        for (i, factor) in len.factors.iter().enumerate() {
            if i > 0 {
                out.push('*');
            }
            match factor {
                LenFactor::Const(n) => {
                    let _ = write!(out, "{n}");
                }
                LenFactor::Param(v) => {
                    let _ = write!(out, "%{}", f.name_of(*v));
                }
            }
        }
    }
    out.push(']');
}

fn write_inst(f: &Function, inst: &Inst, out: &mut String) {
    let v = |id| format!("%{}", f.name_of(id));
    let b = |id: super::BlockId| f.block(id).name.clone();
    if let Some(r) = inst.result {
        let _ = write!(out, "%{} = ", f.name_of(r));
    }
    let op = inst.kind.opcode();
    let _ = match &inst.kind {
        InstKind::Const(Constant::Int(k)) => write!(out, "const {k}"),
        InstKind::Const(Constant::Float(k)) => write!(out, "const {k:?}"),
        InstKind::Bin(_, x, y) | InstKind::FBin(_, x, y) => {
            write!(out, "{op} {}, {}", v(*x), v(*y))
        }
        InstKind::Icmp(pred, x, y) => write!(out, "icmp {} {}, {}", pred.keyword(), v(*x), v(*y)),
        InstKind::Cast(_, x) | InstKind::Detect(x) => write!(out, "{op} {}", v(*x)),
        InstKind::Gep {
            base,
            index,
            elem_size,
        } => write!(out, "gep {}, {}, {elem_size}", v(*base), v(*index)),
        InstKind::Load { addr, ty } => write!(out, "load {} : {}", v(*addr), ty.keyword()),
        InstKind::Store { value, addr } => write!(out, "store {}, {}", v(*value), v(*addr)),
        InstKind::Phi(incoming) => {
            out.push_str("phi ");
            for (i, (val, pred)) in incoming.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                let _ = write!(out, "[{}, {}]", v(*val), b(*pred));
            }
            Ok(())
        }
        InstKind::Br(t) => write!(out, "br {}", b(*t)),
        InstKind::CondBr {
            cond,
            then_bb,
            else_bb,
        } => write!(out, "condbr {}, {}, {}", v(*cond), b(*then_bb), b(*else_bb)),
        InstKind::Ret => write!(out, "ret"),
    };
    if inst.detector {
        out.push_str(" !detector");
    }
}

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use super::validate::{validate, DiagCode, Diagnostic};
use super::{
    ArrayDecl, BinOp, Block, BlockId, CastOp, CmpPred, Constant, FBinOp, Function, Inst, InstKind,
    LenExpr, LenFactor, Param, ValueData, ValueId, ValueType,
};

/// A located failure from [`parse_ir`]. Columns and lines are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub code: DiagCode,
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}: {}: {}",
            self.line, self.col, self.code, self.message
        )
    }
}

#[derive(Debug, Error)]
pub enum IrError {
    #[error("parse error at {0}")]
    Parse(ParseError),
    #[error("invalid function: {}", render(.0))]
    Invalid(Vec<Diagnostic>),
}

impl IrError {
    /// The rule codes behind this error.
    pub fn codes(&self) -> Vec<DiagCode> {
        match self {
            IrError::Parse(p) => vec![p.code],
            IrError::Invalid(d) => d.iter().map(|d| d.code).collect(),
        }
    }
}

fn render(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Local(String),
    Global(String),
    Ident(String),
    Number(String),
    Punct(char),
    Arrow,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Local(s) => write!(f, "%{s}"),
            Tok::Global(s) => write!(f, "@{s}"),
            Tok::Ident(s) | Tok::Number(s) => f.write_str(s),
            Tok::Punct(c) => write!(f, "{c}"),
            Tok::Arrow => f.write_str("->"),
        }
    }
}

struct Line {
    no: usize,
    toks: Vec<(Tok, usize)>,
}

fn err(code: DiagCode, line: usize, col: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        code,
        line,
        col,
        message: message.into(),
    }
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn lex_line(no: usize, text: &str) -> Result<Line, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c == ';' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        match c {
            '%' | '@' => {
                let start = i + 1;
                i += 1;
                while i < chars.len() && is_name_char(chars[i]) {
                    i += 1;
                }
                if i == start {
                    return Err(err(DiagCode::Syntax, no, col, format!("empty name after `{c}`")));
                }
                let name: String = chars[start..i].iter().collect();
                toks.push((
                    if c == '%' {
                        Tok::Local(name)
                    } else {
                        Tok::Global(name)
                    },
                    col,
                ));
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                toks.push((Tok::Arrow, col));
                i += 2;
            }
            c if c.is_ascii_digit() || c == '-' || c == '+' => {
                let start = i;
                i += 1;
                while i < chars.len() {
                    let d = chars[i];
                    let after_exp = matches!(chars[i - 1], 'e' | 'E');
                    if d.is_ascii_alphanumeric() || d == '.' || ((d == '-' || d == '+') && after_exp) {
                        i += 1;
                    } else {
                        break;
                    }
                }
                toks.push((Tok::Number(chars[start..i].iter().collect()), col));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && is_name_char(chars[i]) {
                    i += 1;
                }
                toks.push((Tok::Ident(chars[start..i].iter().collect()), col));
            }
            '(' | ')' | '[' | ']' | ',' | ':' | '=' | '*' | '!' => {
                toks.push((Tok::Punct(c), col));
                i += 1;
            }
            other => {
                return Err(err(
                    DiagCode::Syntax,
                    no,
                    col,
                    format!("unexpected character `{other}`"),
                ))
            }
        }
    }
    Ok(Line { no, toks })
}

struct Cursor<'a> {
    line: &'a Line,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(line: &'a Line) -> Self {
        Cursor { line, pos: 0 }
    }

    fn col(&self) -> usize {
        self.line
            .toks
            .get(self.pos)
            .map(|(_, c)| *c)
            .or_else(|| self.line.toks.last().map(|(_, c)| c + 1))
            .unwrap_or(1)
    }

    fn peek(&self) -> Option<&'a Tok> {
        self.line.toks.get(self.pos).map(|(t, _)| t)
    }

    fn next(&mut self) -> Option<&'a Tok> {
        let t = self.peek();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn fail(&self, message: impl Into<String>) -> ParseError {
        err(DiagCode::Syntax, self.line.no, self.col(), message)
    }

    fn punct(&mut self, p: char) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Punct(c)) if *c == p => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(self.fail(format!("expected `{p}`, found `{t}`"))),
            None => Err(self.fail(format!("expected `{p}` at end of line"))),
        }
    }

    fn eat_punct(&mut self, p: char) -> bool {
        if matches!(self.peek(), Some(Tok::Punct(c)) if *c == p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn local(&mut self) -> Result<(&'a str, usize), ParseError> {
        let col = self.col();
        match self.next() {
            Some(Tok::Local(n)) => Ok((n.as_str(), col)),
            Some(t) => Err(err(DiagCode::Syntax, self.line.no, col, format!("expected a %value, found `{t}`"))),
            None => Err(self.fail("expected a %value")),
        }
    }

    fn ident(&mut self) -> Result<(&'a str, usize), ParseError> {
        let col = self.col();
        match self.next() {
            Some(Tok::Ident(n)) => Ok((n.as_str(), col)),
            Some(t) => Err(err(DiagCode::Syntax, self.line.no, col, format!("expected a name, found `{t}`"))),
            None => Err(self.fail("expected a name")),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        let col = self.col();
        match self.ident()? {
            (n, _) if n == kw => Ok(()),
            (n, _) => Err(err(DiagCode::Syntax, self.line.no, col, format!("expected `{kw}`, found `{n}`"))),
        }
    }

    fn number(&mut self) -> Result<(&'a str, usize), ParseError> {
        let col = self.col();
        match self.next() {
            Some(Tok::Number(n)) | Some(Tok::Ident(n)) => Ok((n.as_str(), col)),
            Some(t) => Err(err(DiagCode::Syntax, self.line.no, col, format!("expected a number, found `{t}`"))),
            None => Err(self.fail("expected a number")),
        }
    }

    fn end(&self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(self.fail(format!("unexpected trailing `{t}`"))),
        }
    }
}

fn parse_type(name: &str) -> Option<ValueType> {
    match name {
        "i64" => Some(ValueType::Int64),
        "f64" => Some(ValueType::Float64),
        "addr" => Some(ValueType::Addr),
        _ => None,
    }
}

/// Result type implied by an opcode; `None` for phi (inferred later) and
/// load (declared inline).
fn opcode_result_type(op: &str) -> Option<ValueType> {
    match op {
        "add" | "sub" | "mul" | "div" | "rem" | "icmp" | "fptosi" => Some(ValueType::Int64),
        "fadd" | "fsub" | "fmul" | "fdiv" | "sitofp" => Some(ValueType::Float64),
        "gep" => Some(ValueType::Addr),
        _ => None,
    }
}

/// Length factors with their columns.
type RawLen<'a> = Vec<(RawFactor<'a>, usize)>;

struct RawParam<'a> {
    name: &'a str,
    col: usize,
    ty: ValueType,
    array: Option<(ValueType, Option<RawLen<'a>>)>,
}

enum RawFactor<'a> {
    Const(u64),
    Param(&'a str),
}

struct Header<'a> {
    name: &'a str,
    params: Vec<RawParam<'a>>,
    results: Vec<(&'a str, usize)>,
}

fn parse_header(line: &Line) -> Result<Header<'_>, ParseError> {
    let mut c = Cursor::new(line);
    c.keyword("func")?;
    let name = match c.next() {
        Some(Tok::Global(n)) => n.as_str(),
        _ => return Err(c.fail("expected @name after `func`")),
    };
    c.punct('(')?;
    let mut params = Vec::new();
    if !c.eat_punct(')') {
        loop {
            let (pname, col) = c.local()?;
            c.punct(':')?;
            let tcol = c.col();
            let (tname, _) = c.ident()?;
            let ty = parse_type(tname)
                .ok_or_else(|| err(DiagCode::Syntax, line.no, tcol, format!("unknown type `{tname}`")))?;
            let mut array = None;
            if ty == ValueType::Addr {
                c.punct('[')?;
                let ecol = c.col();
                let (ename, _) = c.ident()?;
                let elem = parse_type(ename).ok_or_else(|| {
                    err(DiagCode::Syntax, line.no, ecol, format!("unknown element type `{ename}`"))
                })?;
                let mut len = None;
                if matches!(c.peek(), Some(Tok::Ident(x)) if x == "x") {
                    c.next();
                    let mut factors = Vec::new();
                    loop {
                        let fcol = c.col();
                        match c.next() {
                            Some(Tok::Number(n)) => {
                                let v: u64 = n.parse().map_err(|_| {
                                    err(DiagCode::Syntax, line.no, fcol, format!("bad length `{n}`"))
                                })?;
                                factors.push((RawFactor::Const(v), fcol));
                            }
                            Some(Tok::Local(n)) => factors.push((RawFactor::Param(n), fcol)),
                            _ => return Err(err(DiagCode::Syntax, line.no, fcol, "expected a length factor")),
                        }
                        if !c.eat_punct('*') {
                            break;
                        }
                    }
                    len = Some(factors);
                }
                c.punct(']')?;
                array = Some((elem, len));
            }
            params.push(RawParam {
                name: pname,
                col,
                ty,
                array,
            });
            if c.eat_punct(')') {
                break;
            }
            c.punct(',')?;
        }
    }
    let mut results = Vec::new();
    if c.peek() == Some(&Tok::Arrow) {
        c.next();
        c.keyword("results")?;
        c.punct('(')?;
        if !c.eat_punct(')') {
            loop {
                results.push(c.local()?);
                if c.eat_punct(')') {
                    break;
                }
                c.punct(',')?;
            }
        }
    }
    c.end()?;
    Ok(Header {
        name,
        params,
        results,
    })
}

struct Ctx<'a> {
    values: HashMap<&'a str, ValueId>,
    blocks: HashMap<&'a str, BlockId>,
}

impl<'a> Ctx<'a> {
    fn value(&self, c: &mut Cursor<'a>) -> Result<ValueId, ParseError> {
        let (name, col) = c.local()?;
        self.values.get(name).copied().ok_or_else(|| {
            err(
                DiagCode::UnknownValue,
                c.line.no,
                col,
                format!("%{name} is never defined"),
            )
        })
    }

    fn block(&self, c: &mut Cursor<'a>) -> Result<BlockId, ParseError> {
        let (name, col) = c.ident()?;
        self.blocks.get(name).copied().ok_or_else(|| {
            err(
                DiagCode::UnknownBlock,
                c.line.no,
                col,
                format!("label {name} is never declared"),
            )
        })
    }
}

fn binop(op: &str) -> Option<BinOp> {
    Some(match op {
        "add" => BinOp::Add,
        "sub" => BinOp::Sub,
        "mul" => BinOp::Mul,
        "div" => BinOp::Div,
        "rem" => BinOp::Rem,
        _ => return None,
    })
}

fn fbinop(op: &str) -> Option<FBinOp> {
    Some(match op {
        "fadd" => FBinOp::Add,
        "fsub" => FBinOp::Sub,
        "fmul" => FBinOp::Mul,
        "fdiv" => FBinOp::Div,
        _ => return None,
    })
}

fn parse_constant(text: &str) -> Option<Constant> {
    if let Ok(i) = text.parse::<i64>() {
        return Some(Constant::Int(i));
    }
    text.parse::<f64>().ok().map(Constant::Float)
}

/// Parses the instruction body after the optional `%r =` prefix.
fn parse_body<'a>(c: &mut Cursor<'a>, ctx: &Ctx<'a>) -> Result<InstKind, ParseError> {
    let (op, op_col) = c.ident()?;
    let kind = if let Some(b) = binop(op) {
        let x = ctx.value(c)?;
        c.punct(',')?;
        InstKind::Bin(b, x, ctx.value(c)?)
    } else if let Some(b) = fbinop(op) {
        let x = ctx.value(c)?;
        c.punct(',')?;
        InstKind::FBin(b, x, ctx.value(c)?)
    } else {
        match op {
            "const" => {
                let (text, col) = c.number()?;
                let k = parse_constant(text).ok_or_else(|| {
                    err(DiagCode::Syntax, c.line.no, col, format!("bad constant `{text}`"))
                })?;
                InstKind::Const(k)
            }
            "icmp" => {
                let (p, pcol) = c.ident()?;
                let pred = match p {
                    "eq" => CmpPred::Eq,
                    "ne" => CmpPred::Ne,
                    "lt" => CmpPred::Lt,
                    "le" => CmpPred::Le,
                    "gt" => CmpPred::Gt,
                    "ge" => CmpPred::Ge,
                    _ => {
                        return Err(err(
                            DiagCode::Syntax,
                            c.line.no,
                            pcol,
                            format!("unknown predicate `{p}`"),
                        ))
                    }
                };
                let x = ctx.value(c)?;
                c.punct(',')?;
                InstKind::Icmp(pred, x, ctx.value(c)?)
            }
            "sitofp" => InstKind::Cast(CastOp::SiToFp, ctx.value(c)?),
            "fptosi" => InstKind::Cast(CastOp::FpToSi, ctx.value(c)?),
            "gep" => {
                let base = ctx.value(c)?;
                c.punct(',')?;
                let index = ctx.value(c)?;
                c.punct(',')?;
                let (text, col) = c.number()?;
                let elem_size = text.parse::<u64>().map_err(|_| {
                    err(DiagCode::Syntax, c.line.no, col, format!("bad element size `{text}`"))
                })?;
                InstKind::Gep {
                    base,
                    index,
                    elem_size,
                }
            }
            "load" => {
                let addr = ctx.value(c)?;
                c.punct(':')?;
                let tcol = c.col();
                let (t, _) = c.ident()?;
                let ty = parse_type(t).ok_or_else(|| {
                    err(DiagCode::Syntax, c.line.no, tcol, format!("unknown type `{t}`"))
                })?;
                InstKind::Load { addr, ty }
            }
            "store" => {
                let value = ctx.value(c)?;
                c.punct(',')?;
                InstKind::Store {
                    value,
                    addr: ctx.value(c)?,
                }
            }
            "phi" => {
                let mut incoming = Vec::new();
                loop {
                    c.punct('[')?;
                    let v = ctx.value(c)?;
                    c.punct(',')?;
                    let b = ctx.block(c)?;
                    c.punct(']')?;
                    incoming.push((v, b));
                    if !c.eat_punct(',') {
                        break;
                    }
                }
                InstKind::Phi(incoming)
            }
            "detect" => InstKind::Detect(ctx.value(c)?),
            "br" => InstKind::Br(ctx.block(c)?),
            "condbr" => {
                let cond = ctx.value(c)?;
                c.punct(',')?;
                let then_bb = ctx.block(c)?;
                c.punct(',')?;
                InstKind::CondBr {
                    cond,
                    then_bb,
                    else_bb: ctx.block(c)?,
                }
            }
            "ret" => InstKind::Ret,
            _ => {
                return Err(err(
                    DiagCode::Syntax,
                    c.line.no,
                    op_col,
                    format!("unknown opcode `{op}`"),
                ))
            }
        }
    };
    Ok(kind)
}

enum LineKind {
    Label,
    Inst,
}

fn classify(line: &Line) -> LineKind {
    match line.toks.as_slice() {
        [(Tok::Ident(_), _), (Tok::Punct(':'), _)] => LineKind::Label,
        _ => LineKind::Inst,
    }
}

/// Parses one function in the textual IR and validates it.
pub fn parse_ir(text: &str) -> Result<Function, IrError> {
    let f = parse_unvalidated(text).map_err(IrError::Parse)?;
    let diags = validate(&f);
    if diags.is_empty() {
        Ok(f)
    } else {
        Err(IrError::Invalid(diags))
    }
}

pub(crate) fn parse_unvalidated(text: &str) -> Result<Function, ParseError> {
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = lex_line(i + 1, raw)?;
        if !line.toks.is_empty() {
            lines.push(line);
        }
    }
    let Some((head_line, body)) = lines.split_first() else {
        return Err(err(DiagCode::Syntax, 1, 1, "empty input"));
    };
    let header = parse_header(head_line)?;

    // Pass 1: labels and definitions, so that phis may refer forward.
    let mut values: Vec<ValueData> = Vec::new();
    let mut ctx = Ctx {
        values: HashMap::new(),
        blocks: HashMap::new(),
    };
    for p in &header.params {
        if ctx.values.contains_key(p.name) {
            return Err(err(
                DiagCode::DuplicateDef,
                head_line.no,
                p.col,
                format!("%{} is declared twice", p.name),
            ));
        }
        ctx.values.insert(p.name, ValueId(values.len() as u32));
        values.push(ValueData {
            name: p.name.to_string(),
            ty: p.ty,
        });
    }
    let mut block_names = Vec::new();
    for line in body {
        match classify(line) {
            LineKind::Label => {
                let Tok::Ident(name) = &line.toks[0].0 else {
                    unreachable!()
                };
                if ctx.blocks.contains_key(name.as_str()) {
                    return Err(err(
                        DiagCode::DuplicateBlock,
                        line.no,
                        line.toks[0].1,
                        format!("label {name} is declared twice"),
                    ));
                }
                ctx.blocks
                    .insert(name.as_str(), BlockId(block_names.len() as u32));
                block_names.push(name.clone());
            }
            LineKind::Inst => {
                if let [(Tok::Local(name), col), (Tok::Punct('='), _), (Tok::Ident(op), _), ..] =
                    line.toks.as_slice()
                {
                    if ctx.values.contains_key(name.as_str()) {
                        return Err(err(
                            DiagCode::DuplicateDef,
                            line.no,
                            *col,
                            format!("%{name} is defined twice"),
                        ));
                    }
                    ctx.values
                        .insert(name.as_str(), ValueId(values.len() as u32));
                    values.push(ValueData {
                        name: name.clone(),
                        // Placeholder for phi/load/const; fixed below.
                        ty: opcode_result_type(op).unwrap_or(ValueType::Int64),
                    });
                }
            }
        }
    }

    // Pass 2: instructions.
    let mut blocks: Vec<Block> = Vec::new();
    let mut phis: Vec<ValueId> = Vec::new();
    for line in body {
        if let LineKind::Label = classify(line) {
            blocks.push(Block {
                name: block_names[blocks.len()].clone(),
                insts: Vec::new(),
            });
            continue;
        }
        let mut c = Cursor::new(line);
        let Some(block) = blocks.last_mut() else {
            return Err(c.fail("instruction before the first label"));
        };
        let result = if matches!(c.peek(), Some(Tok::Local(_)))
            && matches!(line.toks.get(1), Some((Tok::Punct('='), _)))
        {
            let (name, _) = c.local()?;
            c.punct('=')?;
            Some(ctx.values[name])
        } else {
            None
        };
        let kind = parse_body(&mut c, &ctx)?;
        let mut detector = false;
        if c.eat_punct('!') {
            c.keyword("detector")?;
            detector = true;
        }
        c.end()?;
        if let Some(r) = result {
            match &kind {
                InstKind::Const(k) => values[r.index()].ty = k.ty(),
                InstKind::Load { ty, .. } => values[r.index()].ty = *ty,
                InstKind::Phi(_) => phis.push(r),
                _ => {}
            }
        }
        block.insts.push(Inst {
            result,
            kind,
            detector,
        });
    }

    // Phi types: copy from any incoming value whose type is settled.
    let mut settled: Vec<bool> = vec![true; values.len()];
    for p in &phis {
        settled[p.index()] = false;
    }
    let phi_inputs: HashMap<ValueId, Vec<ValueId>> = blocks
        .iter()
        .flat_map(|b| b.insts.iter())
        .filter_map(|i| match (&i.kind, i.result) {
            (InstKind::Phi(inc), Some(r)) => Some((r, inc.iter().map(|(v, _)| *v).collect())),
            _ => None,
        })
        .collect();
    let mut changed = true;
    while changed {
        changed = false;
        for p in &phis {
            if settled[p.index()] {
                continue;
            }
            if let Some(src) = phi_inputs[p].iter().find(|v| settled[v.index()]) {
                values[p.index()].ty = values[src.index()].ty;
                settled[p.index()] = true;
                changed = true;
            }
        }
    }

    let mut params = Vec::with_capacity(header.params.len());
    for p in &header.params {
        let value = ctx.values[p.name];
        let array = match &p.array {
            None => None,
            Some((elem, len)) => {
                let len = match len {
                    None => None,
                    Some(factors) => {
                        let mut out = Vec::with_capacity(factors.len());
                        for (factor, col) in factors {
                            out.push(match factor {
                                RawFactor::Const(n) => LenFactor::Const(*n),
                                RawFactor::Param(n) => {
                                    LenFactor::Param(*ctx.values.get(n).ok_or_else(|| {
                                        err(
                                            DiagCode::UnknownValue,
                                            head_line.no,
                                            *col,
                                            format!("%{n} is not a parameter"),
                                        )
                                    })?)
                                }
                            });
                        }
                        Some(LenExpr { factors: out })
                    }
                };
                Some(ArrayDecl { elem: *elem, len })
            }
        };
        params.push(Param { value, array });
    }
    let mut results = Vec::new();
    for (name, col) in &header.results {
        let v = ctx.values.get(name).ok_or_else(|| {
            err(
                DiagCode::UnknownValue,
                head_line.no,
                *col,
                format!("%{name} is not a parameter"),
            )
        })?;
        results.push(*v);
    }

    Ok(Function {
        name: header.name.to_string(),
        values,
        params,
        blocks,
        results,
    })
}

//! Relative-base chaining of structured address computations.
//!
//! Every gep whose base is an array parameter is rewritten so that it
//! computes its address from the previous same-class address instead of from
//! the parameter:
//!
//! ```text
//!   %p = gep %a, %id, 8          =>   %p.rid = sub %id, %pid
//!                                     %p = gep %prev, %p.rid, 8
//! ```
//!
//! The previous address and its absolute index flow between blocks through a
//! pair of phis per (block, base). A corrupted address therefore corrupts
//! every later address of the same array, and exit blocks can check the last
//! address of each chain against a fresh fixed-base computation.
//!
//! The pass runs in the same stages as the chain construction it implements:
//! [`create_inter_block_chains`], [`update_inter_block_chains`] twice,
//! [`create_intra_block_chains`] and [`insert_detectors`]. [`transform`]
//! composes them on a copy of the input.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::cfg::{analyze, CfgError, CfgFacts};
use crate::ir::{
    validate, BinOp, BlockId, CmpPred, Constant, Diagnostic, Function, Inst, InstKind, ValueId,
    ValueType,
};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("input is not a valid function: {}", join(.0))]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error("irreducible control flow: edge {0} -> {1} enters a loop from the side")]
    Irreducible(String, String),
    #[error("phi for %{base} in {block} has no value for predecessor {pred}")]
    UnsetPhiSlot {
        block: String,
        base: String,
        pred: String,
    },
    #[error("transformed function is invalid: {}", join(.0))]
    PostValidation(Vec<Diagnostic>),
}

fn join(d: &[Diagnostic]) -> String {
    d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}

/// Which fix-up pass of [`update_inter_block_chains`] to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    /// Pass-through predecessors reached over forward edges.
    Pass1,
    /// Pass-through predecessors reached over back edges.
    Pass2,
}

/// Running chain state entering a block for one base: the last chained
/// address and the absolute index it was computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainSlot {
    pub addr: ValueId,
    pub idx: ValueId,
    /// False for the entry block, whose slot is the seed `(base, 0)`.
    pub is_phi: bool,
}

type Incoming = Vec<(BlockId, Option<(ValueId, ValueId)>)>;

/// Per (block, base) chain phis, plus their incoming slots while the
/// inter-block passes are still filling them.
#[derive(Debug, Clone, Default)]
pub struct PhiChainMap {
    slots: BTreeMap<(BlockId, ValueId), ChainSlot>,
    incoming: BTreeMap<(BlockId, ValueId), Incoming>,
    /// Chain state at the end of each block that has same-class geps.
    tails: BTreeMap<(BlockId, ValueId), (ValueId, ValueId)>,
    sealed: bool,
}

impl PhiChainMap {
    pub fn slot(&self, block: BlockId, base: ValueId) -> Option<ChainSlot> {
        self.slots.get(&(block, base)).copied()
    }

    pub fn has_phi(&self, block: BlockId, base: ValueId) -> bool {
        self.slots.contains_key(&(block, base))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Incoming `(addr, idx)` pair recorded for `pred` on the phis of
    /// `(block, base)`; `None` while the slot is still unset.
    pub fn incoming(
        &self,
        block: BlockId,
        base: ValueId,
        pred: BlockId,
    ) -> Option<(ValueId, ValueId)> {
        self.incoming
            .get(&(block, base))?
            .iter()
            .find(|(p, _)| *p == pred)
            .and_then(|(_, v)| *v)
    }

    /// Number of incoming slots not filled yet.
    pub fn unset_slots(&self) -> usize {
        self.incoming
            .values()
            .flat_map(|v| v.iter())
            .filter(|(_, v)| v.is_none())
            .count()
    }

    /// Chain state (address, absolute index) live at the end of `block`.
    pub fn exit_state(&self, block: BlockId, base: ValueId) -> Option<(ValueId, ValueId)> {
        self.tails
            .get(&(block, base))
            .copied()
            .or_else(|| self.slot(block, base).map(|s| (s.addr, s.idx)))
    }

    fn set(&mut self, block: BlockId, base: ValueId, pred: BlockId, value: (ValueId, ValueId)) {
        if let Some(list) = self.incoming.get_mut(&(block, base)) {
            for (p, v) in list.iter_mut() {
                if *p == pred {
                    *v = Some(value);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BaseReport {
    pub base: String,
    pub chained: usize,
    pub skipped: usize,
    pub phis: usize,
    pub detectors: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TransformReport {
    pub function: String,
    pub total_geps: usize,
    pub chained: usize,
    pub skipped: usize,
    pub phis: usize,
    pub detectors: usize,
    pub bases: Vec<BaseReport>,
}

impl TransformReport {
    fn entry(&mut self, base: &str) -> &mut BaseReport {
        if let Some(i) = self.bases.iter().position(|b| b.base == base) {
            return &mut self.bases[i];
        }
        self.bases.push(BaseReport {
            base: base.to_string(),
            ..BaseReport::default()
        });
        self.bases.last_mut().expect("just pushed")
    }

    fn recount(&mut self) {
        self.chained = self.bases.iter().map(|b| b.chained).sum();
        self.skipped = self.bases.iter().map(|b| b.skipped).sum();
        self.phis = self.bases.iter().map(|b| b.phis).sum();
        self.detectors = self.bases.iter().map(|b| b.detectors).sum();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformOptions {
    pub detectors: bool,
}

impl Default for TransformOptions {
    fn default() -> Self {
        TransformOptions { detectors: true }
    }
}

/// Hands out value names not yet present in the function.
struct Names {
    taken: HashSet<String>,
}

impl Names {
    fn new(f: &Function) -> Self {
        Names {
            taken: f.values.iter().map(|v| v.name.clone()).collect(),
        }
    }

    fn fresh(&mut self, f: &mut Function, hint: String, ty: ValueType) -> ValueId {
        let mut name = hint.clone();
        let mut n = 1;
        while self.taken.contains(&name) {
            name = format!("{hint}{n}");
            n += 1;
        }
        self.taken.insert(name.clone());
        f.push_value(name, ty)
    }
}

/// Fixed-base address of element `index` of an array at `base`.
pub fn fba_address(base: u64, elem_size: u64, index: i64) -> u64 {
    crate::address::fba_address(base, elem_size, index)
}

/// Address of element `index` from the address `rel_base` of element `rel_index`.
pub fn rba_address(rel_base: u64, elem_size: u64, index: i64, rel_index: i64) -> u64 {
    crate::address::rba_address(rel_base, elem_size, index, rel_index)
}

fn gep_parts(inst: &Inst) -> Option<(ValueId, ValueId, u64)> {
    match inst.kind {
        InstKind::Gep {
            base,
            index,
            elem_size,
        } => Some((base, index, elem_size)),
        _ => None,
    }
}

fn gep_index(f: &Function, gep: ValueId) -> ValueId {
    f.def_inst(gep)
        .and_then(gep_parts)
        .map(|(_, index, _)| index)
        .expect("last_gep names a gep")
}

/// Inserts an address phi and an index phi for every (block, base) pair and
/// fills the slots of predecessors that compute a same-class address.
pub fn create_inter_block_chains(f: &mut Function, facts: &CfgFacts) -> PhiChainMap {
    let mut map = PhiChainMap::default();
    if facts.bases.is_empty() {
        return map;
    }
    let mut names = Names::new(f);
    let zero = names.fresh(f, "presage.zero".into(), ValueType::Int64);
    f.blocks[0]
        .insts
        .insert(0, Inst::new(Some(zero), InstKind::Const(Constant::Int(0))));

    for &block in &facts.bfs_order {
        for &base in &facts.bases {
            if block == BlockId::ENTRY {
                map.slots.insert(
                    (block, base),
                    ChainSlot {
                        addr: base,
                        idx: zero,
                        is_phi: false,
                    },
                );
                continue;
            }
            let bname = f.name_of(base).to_string();
            let blabel = f.block(block).name.clone();
            let addr = names.fresh(f, format!("{bname}.rb.{blabel}"), ValueType::Addr);
            let idx = names.fresh(f, format!("{bname}.ri.{blabel}"), ValueType::Int64);
            let at = f.block(block).first_non_phi();
            let insts = &mut f.blocks[block.index()].insts;
            insts.insert(at, Inst::new(Some(idx), InstKind::Phi(Vec::new())));
            insts.insert(at, Inst::new(Some(addr), InstKind::Phi(Vec::new())));
            map.slots.insert(
                (block, base),
                ChainSlot {
                    addr,
                    idx,
                    is_phi: true,
                },
            );
            let incoming: Incoming = facts.preds[block.index()]
                .iter()
                .map(|&pred| {
                    let value = facts
                        .get_gep(pred, base)
                        .map(|g| (g, gep_index(f, g)));
                    (pred, value)
                })
                .collect();
            map.incoming.insert((block, base), incoming);
        }
    }
    map
}

/// Fills phi slots from pass-through predecessors with the predecessor's own
/// chain phis. Pass1 handles forward edges, Pass2 back edges; after Pass2 the
/// phis are written into the function and every slot must be set.
pub fn update_inter_block_chains(
    f: &mut Function,
    map: &mut PhiChainMap,
    facts: &CfgFacts,
    pass: Pass,
) -> Result<(), TransformError> {
    for &block in &facts.bfs_order {
        for &pred in &facts.preds[block.index()] {
            for &base in &facts.bases {
                let pass_through = !facts.has_gep(pred, base) && map.has_phi(pred, base);
                let back = facts.is_back_edge(pred, block);
                let now = match pass {
                    Pass::Pass1 => pass_through && !back,
                    Pass::Pass2 => pass_through && back,
                };
                if now && map.has_phi(block, base) {
                    let p = map.slot(pred, base).expect("checked above");
                    map.set(block, base, pred, (p.addr, p.idx));
                }
            }
        }
    }
    if pass == Pass::Pass2 {
        seal(f, map)?;
    }
    Ok(())
}

fn seal(f: &mut Function, map: &mut PhiChainMap) -> Result<(), TransformError> {
    for (&(block, base), list) in &map.incoming {
        let slot = map.slots[&(block, base)];
        let mut addr_in = Vec::with_capacity(list.len());
        let mut idx_in = Vec::with_capacity(list.len());
        for (pred, value) in list {
            let Some((a, i)) = value else {
                return Err(TransformError::UnsetPhiSlot {
                    block: f.block(block).name.clone(),
                    base: f.name_of(base).to_string(),
                    pred: f.block(*pred).name.clone(),
                });
            };
            addr_in.push((*a, *pred));
            idx_in.push((*i, *pred));
        }
        for inst in &mut f.blocks[block.index()].insts {
            if inst.result == Some(slot.addr) {
                inst.kind = InstKind::Phi(addr_in.clone());
            } else if inst.result == Some(slot.idx) {
                inst.kind = InstKind::Phi(idx_in.clone());
            }
        }
    }
    map.sealed = true;
    Ok(())
}

/// Rewrites every gep on a chained base into relative-base form and threads
/// the chain through each block.
///
/// The rewritten gep keeps the original result value, which is the same as
/// creating a new gep, redirecting all uses to it and deleting the old one.
pub fn create_intra_block_chains(
    f: &mut Function,
    map: &mut PhiChainMap,
    facts: &CfgFacts,
) -> TransformReport {
    debug_assert!(map.sealed || facts.bases.is_empty());
    let mut report = TransformReport {
        function: f.name.clone(),
        total_geps: f.count_insts(|i| matches!(i.kind, InstKind::Gep { .. }) && !i.detector),
        ..TransformReport::default()
    };
    for &base in &facts.bases {
        let name = f.name_of(base).to_string();
        report.entry(&name).phis = map
            .slots
            .iter()
            .filter(|((_, b), s)| *b == base && s.is_phi)
            .count()
            * 2;
    }
    // Geps on a non-parameter base stay in fixed-base form.
    let chained_bases: HashSet<ValueId> = facts.bases.iter().copied().collect();
    let skipped: Vec<String> = f
        .blocks
        .iter()
        .flat_map(|b| b.insts.iter())
        .filter(|i| !i.detector)
        .filter_map(gep_parts)
        .filter(|(b, _, _)| !chained_bases.contains(b))
        .map(|(b, _, _)| name_of(f, b))
        .collect();
    let mut names = Names::new(f);
    for &block in &facts.bfs_order {
        for &base in &facts.bases {
            let geps: Vec<ValueId> = f
                .block(block)
                .insts
                .iter()
                .filter(|i| !i.detector)
                .filter(|i| matches!(gep_parts(i), Some((b, _, _)) if b == base))
                .filter_map(|i| i.result)
                .collect();
            if geps.is_empty() {
                continue;
            }
            let slot = map.slot(block, base).expect("every block has a slot");
            let (mut rel_base, mut prev_idx) = (slot.addr, slot.idx);
            for g in geps {
                let pos = f.blocks[block.index()]
                    .insts
                    .iter()
                    .position(|i| i.result == Some(g))
                    .expect("gep still present");
                let (_, index, elem_size) =
                    gep_parts(&f.blocks[block.index()].insts[pos]).expect("is a gep");
                let rid = names.fresh(f, format!("{}.rid", f.name_of(g)), ValueType::Int64);
                let insts = &mut f.blocks[block.index()].insts;
                insts[pos].kind = InstKind::Gep {
                    base: rel_base,
                    index: rid,
                    elem_size,
                };
                insts.insert(
                    pos,
                    Inst::new(Some(rid), InstKind::Bin(BinOp::Sub, index, prev_idx)),
                );
                rel_base = g;
                prev_idx = index;
                report.entry(&name_of(f, base)).chained += 1;
            }
            map.tails.insert((block, base), (rel_base, prev_idx));
        }
    }
    for base in skipped {
        report.entry(&base).skipped += 1;
    }
    report.recount();
    report
}

fn name_of(f: &Function, v: ValueId) -> String {
    f.name_of(v).to_string()
}

/// Adds one check per (exit block, base): the last chained address against
/// the fixed-base address of the last absolute index. A mismatch bumps the
/// detection counter. All inserted instructions are marked as detector code.
pub fn insert_detectors(
    f: &mut Function,
    map: &PhiChainMap,
    facts: &CfgFacts,
    report: &mut TransformReport,
) {
    let mut names = Names::new(f);
    for &exit in &facts.exit_blocks {
        for &base in &facts.bases {
            let Some((obs_addr, last_idx)) = map.exit_state(exit, base) else {
                continue;
            };
            let elem_size = base_elem_size(f, base);
            let bname = name_of(f, base);
            let rid = names.fresh(f, format!("{bname}.det.rid"), ValueType::Int64);
            let obs = names.fresh(f, format!("{bname}.det.obs"), ValueType::Addr);
            let dup = names.fresh(f, format!("{bname}.det.dup"), ValueType::Addr);
            let chk = names.fresh(f, format!("{bname}.det.chk"), ValueType::Int64);
            let seq = [
                Inst::new(Some(rid), InstKind::Bin(BinOp::Sub, last_idx, last_idx)),
                Inst::new(
                    Some(obs),
                    InstKind::Gep {
                        base: obs_addr,
                        index: rid,
                        elem_size,
                    },
                ),
                Inst::new(
                    Some(dup),
                    InstKind::Gep {
                        base,
                        index: last_idx,
                        elem_size,
                    },
                ),
                Inst::new(Some(chk), InstKind::Icmp(CmpPred::Ne, obs, dup)),
                Inst::new(None, InstKind::Detect(chk)),
            ];
            let insts = &mut f.blocks[exit.index()].insts;
            let at = insts.len() - 1;
            for (k, mut inst) in seq.into_iter().enumerate() {
                inst.detector = true;
                insts.insert(at + k, inst);
            }
            report.entry(&bname).detectors += 1;
        }
    }
    report.recount();
}

/// Removes chain phis whose incoming values, ignoring the phi itself, are
/// all the same value, redirecting their uses to that value. Repeats until
/// no such phi is left.
pub fn fold_trivial_phis(f: &mut Function, map: &PhiChainMap, report: &mut TransformReport) {
    let owner: HashMap<ValueId, String> = map
        .slots
        .iter()
        .filter(|(_, s)| s.is_phi)
        .flat_map(|((_, base), s)| {
            let name = name_of(f, *base);
            [(s.addr, name.clone()), (s.idx, name)]
        })
        .collect();
    loop {
        let mut changed = false;
        for b in 0..f.blocks.len() {
            let mut i = 0;
            while i < f.blocks[b].insts.len() {
                let inst = &f.blocks[b].insts[i];
                let fold = match (&inst.kind, inst.result) {
                    (InstKind::Phi(incoming), Some(r)) if owner.contains_key(&r) => {
                        let mut others = incoming.iter().map(|(v, _)| *v).filter(|v| *v != r);
                        match others.next() {
                            Some(first) if others.all(|v| v == first) => Some((r, first)),
                            _ => None,
                        }
                    }
                    _ => None,
                };
                match fold {
                    Some((phi, value)) => {
                        f.blocks[b].insts.remove(i);
                        f.replace_all_uses(phi, value);
                        report.entry(&owner[&phi]).phis -= 1;
                        changed = true;
                    }
                    None => i += 1,
                }
            }
        }
        if !changed {
            break;
        }
    }
    report.recount();
}

fn base_elem_size(f: &Function, base: ValueId) -> u64 {
    f.blocks
        .iter()
        .flat_map(|b| b.insts.iter())
        .filter_map(gep_parts)
        .find(|(b, _, _)| *b == base)
        .map(|(_, _, s)| s)
        .or_else(|| {
            f.params
                .iter()
                .find(|p| p.value == base)
                .and_then(|p| p.array.as_ref())
                .map(|a| a.elem.byte_size())
        })
        .unwrap_or(8)
}

/// Runs the whole pipeline on a copy of `f`.
pub fn transform(f: &Function) -> Result<(Function, TransformReport), TransformError> {
    transform_with(f, TransformOptions::default())
}

pub fn transform_with(
    f: &Function,
    opts: TransformOptions,
) -> Result<(Function, TransformReport), TransformError> {
    let diags = validate(f);
    if !diags.is_empty() {
        return Err(TransformError::Invalid(diags));
    }
    let facts = analyze(f)?;
    if let Some((from, to)) = facts.irreducible_edges.first() {
        return Err(TransformError::Irreducible(
            f.block(*from).name.clone(),
            f.block(*to).name.clone(),
        ));
    }
    let mut out = f.clone();
    let mut map = create_inter_block_chains(&mut out, &facts);
    update_inter_block_chains(&mut out, &mut map, &facts, Pass::Pass1)?;
    update_inter_block_chains(&mut out, &mut map, &facts, Pass::Pass2)?;
    let mut report = create_intra_block_chains(&mut out, &mut map, &facts);
    if opts.detectors {
        insert_detectors(&mut out, &map, &facts, &mut report);
    }
    fold_trivial_phis(&mut out, &map, &mut report);
    out.compact();
    let diags = validate(&out);
    if !diags.is_empty() {
        return Err(TransformError::PostValidation(diags));
    }
    Ok((out, report))
}

//! Control-flow facts consumed by the chaining transform.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::ir::graph;
use crate::ir::{BlockId, Function, InstKind, ValueId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CfgError {
    #[error("block {0} is unreachable from entry")]
    Unreachable(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CfgFacts {
    /// Breadth-first order from entry; successors are visited in block
    /// declaration order.
    pub bfs_order: Vec<BlockId>,
    pub preds: Vec<Vec<BlockId>>,
    pub succs: Vec<Vec<BlockId>>,
    /// Edges `(from, to)` where `to` is a depth-first ancestor of `from`.
    pub back_edges: BTreeSet<(BlockId, BlockId)>,
    /// Back edges whose target does not dominate their source. Nonempty iff
    /// the CFG is irreducible.
    pub irreducible_edges: Vec<(BlockId, BlockId)>,
    /// Blocks ending in `ret`.
    pub exit_blocks: Vec<BlockId>,
    /// Array parameters used directly as the base of at least one gep, in
    /// parameter order.
    pub bases: Vec<ValueId>,
    /// Lexically last gep (by result value) in a block for a base.
    pub last_gep: BTreeMap<(BlockId, ValueId), ValueId>,
}

impl CfgFacts {
    pub fn is_back_edge(&self, from: BlockId, to: BlockId) -> bool {
        self.back_edges.contains(&(from, to))
    }

    pub fn edge_exists(&self, from: BlockId, to: BlockId) -> bool {
        self.succs[from.index()].contains(&to)
    }

    pub fn has_gep(&self, block: BlockId, base: ValueId) -> bool {
        self.last_gep.contains_key(&(block, base))
    }

    pub fn get_gep(&self, block: BlockId, base: ValueId) -> Option<ValueId> {
        self.last_gep.get(&(block, base)).copied()
    }

    pub fn is_reducible(&self) -> bool {
        self.irreducible_edges.is_empty()
    }

    /// A JSON-friendly rendering with names instead of indices.
    pub fn report(&self, f: &Function) -> CfgReport {
        let bname = |b: &BlockId| f.block(*b).name.clone();
        let mut edges = Vec::new();
        for (from, succs) in self.succs.iter().enumerate() {
            for to in succs {
                edges.push([f.blocks[from].name.clone(), bname(to)]);
            }
        }
        CfgReport {
            function: f.name.clone(),
            blocks: f.blocks.iter().map(|b| b.name.clone()).collect(),
            bfs_order: self.bfs_order.iter().map(bname).collect(),
            edges,
            back_edges: self
                .back_edges
                .iter()
                .map(|(a, b)| [bname(a), bname(b)])
                .collect(),
            reducible: self.is_reducible(),
            exit_blocks: self.exit_blocks.iter().map(bname).collect(),
            bases: self.bases.iter().map(|v| f.name_of(*v).to_string()).collect(),
            last_gep: self
                .last_gep
                .iter()
                .map(|((b, base), g)| LastGepEntry {
                    block: bname(b),
                    base: f.name_of(*base).to_string(),
                    gep: f.name_of(*g).to_string(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CfgReport {
    pub function: String,
    pub blocks: Vec<String>,
    pub bfs_order: Vec<String>,
    pub edges: Vec<[String; 2]>,
    pub back_edges: Vec<[String; 2]>,
    pub reducible: bool,
    pub exit_blocks: Vec<String>,
    pub bases: Vec<String>,
    pub last_gep: Vec<LastGepEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LastGepEntry {
    pub block: String,
    pub base: String,
    pub gep: String,
}

pub fn analyze(f: &Function) -> Result<CfgFacts, CfgError> {
    let reach = graph::reachable(f);
    if let Some(i) = reach.iter().position(|r| !r) {
        return Err(CfgError::Unreachable(f.blocks[i].name.clone()));
    }
    let mut succs = graph::successors(f);
    for s in &mut succs {
        s.sort();
    }
    let preds = graph::predecessors(f);

    let bfs_order = bfs(&succs);
    let back_edges = dfs_back_edges(&succs);
    let idom = graph::immediate_dominators(f);
    let irreducible_edges = back_edges
        .iter()
        .filter(|(from, to)| !graph::dominates(&idom, *to, *from))
        .copied()
        .collect();

    let exit_blocks = f
        .block_ids()
        .filter(|b| matches!(f.block(*b).terminator().map(|t| &t.kind), Some(InstKind::Ret)))
        .collect();

    let mut used_as_base: BTreeSet<ValueId> = BTreeSet::new();
    let mut last_gep = BTreeMap::new();
    for b in f.block_ids() {
        for inst in &f.block(b).insts {
            if let (InstKind::Gep { base, .. }, Some(r)) = (&inst.kind, inst.result) {
                if inst.detector {
                    continue;
                }
                used_as_base.insert(*base);
                last_gep.insert((b, *base), r);
            }
        }
    }
    let bases: Vec<ValueId> = f
        .array_params()
        .map(|p| p.value)
        .filter(|v| used_as_base.contains(v))
        .collect();
    let base_set: BTreeSet<ValueId> = bases.iter().copied().collect();
    last_gep.retain(|(_, base), _| base_set.contains(base));

    Ok(CfgFacts {
        bfs_order,
        preds,
        succs,
        back_edges,
        irreducible_edges,
        exit_blocks,
        bases,
        last_gep,
    })
}

fn bfs(succs: &[Vec<BlockId>]) -> Vec<BlockId> {
    let mut seen = vec![false; succs.len()];
    let mut order = Vec::with_capacity(succs.len());
    let mut queue = VecDeque::new();
    if succs.is_empty() {
        return order;
    }
    seen[0] = true;
    queue.push_back(BlockId::ENTRY);
    while let Some(b) = queue.pop_front() {
        order.push(b);
        for s in &succs[b.index()] {
            if !seen[s.index()] {
                seen[s.index()] = true;
                queue.push_back(*s);
            }
        }
    }
    order
}

fn dfs_back_edges(succs: &[Vec<BlockId>]) -> BTreeSet<(BlockId, BlockId)> {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        New,
        OnStack,
        Done,
    }
    let mut state = vec![State::New; succs.len()];
    let mut back = BTreeSet::new();
    if succs.is_empty() {
        return back;
    }
    let mut stack: Vec<(BlockId, usize)> = vec![(BlockId::ENTRY, 0)];
    state[0] = State::OnStack;
    while let Some((b, next)) = stack.last_mut() {
        let b = *b;
        if let Some(s) = succs[b.index()].get(*next).copied() {
            *next += 1;
            match state[s.index()] {
                State::New => {
                    state[s.index()] = State::OnStack;
                    stack.push((s, 0));
                }
                State::OnStack => {
                    back.insert((b, s));
                }
                State::Done => {}
            }
        } else {
            state[b.index()] = State::Done;
            stack.pop();
        }
    }
    back
}

/// Whether two geps form the same class, i.e. share their base operand.
pub fn same_class(f: &Function, g1: ValueId, g2: ValueId) -> bool {
    let base = |g: ValueId| match f.def_inst(g).map(|i| &i.kind) {
        Some(InstKind::Gep { base, .. }) => Some(*base),
        _ => None,
    };
    match (base(g1), base(g2)) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    }
}

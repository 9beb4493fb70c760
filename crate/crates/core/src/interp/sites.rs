//! Static fault-site sets for the two error models.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::ir::{BlockId, DefSite, Function, InstKind, ValueId, ValueType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorModel {
    /// Bit flip in the address computed by a gep.
    #[serde(rename = "em1")]
    Em1,
    /// Bit flip in an integer value on the def-use chain of a gep's index.
    #[serde(rename = "em2")]
    Em2,
}

impl ErrorModel {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorModel::Em1 => "em1",
            ErrorModel::Em2 => "em2",
        }
    }
}

impl std::str::FromStr for ErrorModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "em1" | "em-i" => Ok(ErrorModel::Em1),
            "em2" | "em-ii" => Ok(ErrorModel::Em2),
            other => Err(format!("unknown error model `{other}` (expected em1 or em2)")),
        }
    }
}

/// Instruction position `(block, index within block)`.
pub type Site = (BlockId, usize);

/// Eligible static instructions for `model`, in layout order.
///
/// EM-I takes every gep. EM-II takes, for every gep, the backward def-use
/// closure of its index operand over integer-valued instructions; constants
/// are immediates and are not sites. Detector code is never a site.
pub fn enumerate_sites(f: &Function, model: ErrorModel) -> Vec<Site> {
    match model {
        ErrorModel::Em1 => {
            let mut out = Vec::new();
            for b in f.block_ids() {
                for (i, inst) in f.block(b).insts.iter().enumerate() {
                    if !inst.detector && matches!(inst.kind, InstKind::Gep { .. }) {
                        out.push((b, i));
                    }
                }
            }
            out
        }
        ErrorModel::Em2 => index_slice(f).into_iter().collect(),
    }
}

fn index_slice(f: &Function) -> BTreeSet<Site> {
    let defs = f.def_sites();
    let mut seen: BTreeSet<ValueId> = BTreeSet::new();
    let mut work: Vec<ValueId> = Vec::new();
    for b in f.block_ids() {
        for inst in &f.block(b).insts {
            if let (InstKind::Gep { index, .. }, false) = (&inst.kind, inst.detector) {
                work.push(*index);
            }
        }
    }
    let mut sites = BTreeSet::new();
    while let Some(v) = work.pop() {
        if !seen.insert(v) || f.ty(v) != ValueType::Int64 {
            continue;
        }
        let Some(DefSite::Inst(b, i)) = defs[v.index()] else {
            continue;
        };
        let inst = &f.block(b).insts[i];
        if inst.detector || matches!(inst.kind, InstKind::Const(_)) {
            continue;
        }
        sites.insert((b, i));
        // Loads end the slice: memory is not traced.
        if !matches!(inst.kind, InstKind::Load { .. }) {
            work.extend(inst.kind.operands());
        }
    }
    sites
}

/// Per-instruction eligibility flags for fast lookup during execution.
#[derive(Debug, Clone)]
pub struct SiteMask {
    flags: Vec<Vec<bool>>,
}

impl SiteMask {
    pub fn new(f: &Function, model: ErrorModel) -> Self {
        let mut flags: Vec<Vec<bool>> = f.blocks.iter().map(|b| vec![false; b.insts.len()]).collect();
        for (b, i) in enumerate_sites(f, model) {
            flags[b.index()][i] = true;
        }
        SiteMask { flags }
    }

    #[inline]
    pub fn get(&self, b: BlockId, i: usize) -> bool {
        self.flags[b.index()][i]
    }

    pub fn count(&self) -> usize {
        self.flags.iter().flatten().filter(|x| **x).count()
    }
}

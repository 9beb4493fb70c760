//! Basic graph queries over a function's CFG.

use super::{BlockId, Function};

/// Successor lists indexed by block. Targets that do not name a block are
/// dropped; validation reports them separately.
pub fn successors(f: &Function) -> Vec<Vec<BlockId>> {
    let n = f.blocks.len();
    f.blocks
        .iter()
        .map(|b| {
            b.successors()
                .into_iter()
                .filter(|s| s.index() < n)
                .collect()
        })
        .collect()
}

/// Predecessor lists indexed by block, each sorted by declaration order.
pub fn predecessors(f: &Function) -> Vec<Vec<BlockId>> {
    let succs = successors(f);
    let mut preds = vec![Vec::new(); f.blocks.len()];
    for (from, targets) in succs.iter().enumerate() {
        for to in targets {
            preds[to.index()].push(BlockId(from as u32));
        }
    }
    for p in &mut preds {
        p.sort();
        p.dedup();
    }
    preds
}

/// Blocks reachable from the entry.
pub fn reachable(f: &Function) -> Vec<bool> {
    let succs = successors(f);
    let mut seen = vec![false; f.blocks.len()];
    if f.blocks.is_empty() {
        return seen;
    }
    let mut stack = vec![BlockId::ENTRY];
    seen[0] = true;
    while let Some(b) = stack.pop() {
        for s in &succs[b.index()] {
            if !seen[s.index()] {
                seen[s.index()] = true;
                stack.push(*s);
            }
        }
    }
    seen
}

/// Reverse post-order of the blocks reachable from the entry.
pub fn reverse_postorder(f: &Function) -> Vec<BlockId> {
    let succs = successors(f);
    let mut visited = vec![false; f.blocks.len()];
    let mut post = Vec::with_capacity(f.blocks.len());
    if f.blocks.is_empty() {
        return post;
    }
    // Iterative DFS; the second tuple field is the next successor to try.
    let mut stack: Vec<(BlockId, usize)> = vec![(BlockId::ENTRY, 0)];
    visited[0] = true;
    while let Some((b, next)) = stack.last_mut() {
        let b = *b;
        if let Some(s) = succs[b.index()].get(*next).copied() {
            *next += 1;
            if !visited[s.index()] {
                visited[s.index()] = true;
                stack.push((s, 0));
            }
        } else {
            post.push(b);
            stack.pop();
        }
    }
    post.reverse();
    post
}

/// Immediate dominators (Cooper, Harvey and Kennedy). The entry maps to
/// itself; unreachable blocks map to `None`.
pub fn immediate_dominators(f: &Function) -> Vec<Option<BlockId>> {
    let n = f.blocks.len();
    let mut idom: Vec<Option<BlockId>> = vec![None; n];
    if n == 0 {
        return idom;
    }
    let rpo = reverse_postorder(f);
    let mut rpo_pos = vec![usize::MAX; n];
    for (i, b) in rpo.iter().enumerate() {
        rpo_pos[b.index()] = i;
    }
    let preds = predecessors(f);
    idom[0] = Some(BlockId::ENTRY);

    let intersect = |idom: &[Option<BlockId>], mut a: BlockId, mut b: BlockId| {
        while a != b {
            while rpo_pos[a.index()] > rpo_pos[b.index()] {
                a = idom[a.index()].expect("processed block has idom");
            }
            while rpo_pos[b.index()] > rpo_pos[a.index()] {
                b = idom[b.index()].expect("processed block has idom");
            }
        }
        a
    };

    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new_idom: Option<BlockId> = None;
            for &p in &preds[b.index()] {
                if idom[p.index()].is_none() {
                    continue;
                }
                new_idom = Some(match new_idom {
                    None => p,
                    Some(cur) => intersect(&idom, p, cur),
                });
            }
            if new_idom.is_some() && idom[b.index()] != new_idom {
                idom[b.index()] = new_idom;
                changed = true;
            }
        }
    }
    idom
}

/// Whether `a` dominates `b` under the given idom table.
pub fn dominates(idom: &[Option<BlockId>], a: BlockId, b: BlockId) -> bool {
    let mut cur = b;
    loop {
        if cur == a {
            return true;
        }
        match idom[cur.index()] {
            Some(next) if next != cur => cur = next,
            _ => return false,
        }
    }
}

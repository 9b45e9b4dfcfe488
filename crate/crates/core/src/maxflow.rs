//! Dinic max-flow on integer capacities, with both extremal minimum cuts.

use std::collections::VecDeque;

/// Capacity treated as infinite; finite capacities must sum to well below it.
pub const INF: i64 = i64::MAX / 4;

const NONE: u32 = u32::MAX;

#[derive(Clone, Debug, Default)]
pub struct FlowNetwork {
    first: Vec<u32>,
    next: Vec<u32>,
    to: Vec<u32>,
    cap: Vec<i64>,
    augmentations: u64,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        Self { first: vec![NONE; nodes], ..Default::default() }
    }

    pub fn node_count(&self) -> usize {
        self.first.len()
    }

    /// Number of directed arcs (each `add_arc` stores two).
    pub fn arc_count(&self) -> usize {
        self.to.len()
    }

    pub fn augmentations(&self) -> u64 {
        self.augmentations
    }

    fn push(&mut self, u: usize, v: usize, c: i64) {
        self.to.push(v as u32);
        self.cap.push(c);
        self.next.push(self.first[u]);
        self.first[u] = (self.to.len() - 1) as u32;
    }

    /// Adds `u → v` with capacity `forward` and `v → u` with capacity `backward`.
    pub fn add_arc(&mut self, u: usize, v: usize, forward: i64, backward: i64) {
        debug_assert!(forward >= 0 && backward >= 0);
        self.push(u, v, forward);
        self.push(v, u, backward);
    }

    fn levels(&self, s: usize, t: usize, level: &mut [i32]) -> bool {
        level.fill(-1);
        level[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            let mut e = self.first[u];
            while e != NONE {
                let v = self.to[e as usize] as usize;
                if self.cap[e as usize] > 0 && level[v] < 0 {
                    level[v] = level[u] + 1;
                    q.push_back(v);
                }
                e = self.next[e as usize];
            }
        }
        level[t] >= 0
    }

    /// Maximum flow from `s` to `t`.
    pub fn max_flow(&mut self, s: usize, t: usize) -> i64 {
        let n = self.node_count();
        let mut level = vec![-1i32; n];
        let mut it = vec![NONE; n];
        let mut total: i64 = 0;
        let mut path: Vec<u32> = Vec::new();
        while self.levels(s, t, &mut level) {
            it.copy_from_slice(&self.first);
            path.clear();
            let mut u = s;
            loop {
                if u == t {
                    let bottleneck = path.iter().map(|&e| self.cap[e as usize]).min().unwrap_or(0);
                    let mut cut_at = path.len();
                    for (i, &e) in path.iter().enumerate() {
                        self.cap[e as usize] -= bottleneck;
                        self.cap[(e ^ 1) as usize] += bottleneck;
                        if self.cap[e as usize] == 0 && cut_at == path.len() {
                            cut_at = i;
                        }
                    }
                    total += bottleneck;
                    self.augmentations += 1;
                    path.truncate(cut_at);
                    u = path.last().map_or(s, |&e| self.to[e as usize] as usize);
                    continue;
                }
                let mut advanced = false;
                while it[u] != NONE {
                    let e = it[u] as usize;
                    let v = self.to[e] as usize;
                    if self.cap[e] > 0 && level[v] == level[u] + 1 {
                        path.push(e as u32);
                        u = v;
                        advanced = true;
                        break;
                    }
                    it[u] = self.next[e];
                }
                if advanced {
                    continue;
                }
                // dead end
                level[u] = -1;
                match path.pop() {
                    None => break,
                    Some(e) => {
                        u = self.to[(e ^ 1) as usize] as usize;
                        it[u] = self.next[e as usize];
                    }
                }
            }
        }
        total
    }

    /// Nodes reachable from `s` in the residual graph (the inclusion-minimal source side).
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.node_count()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            let mut e = self.first[u];
            while e != NONE {
                let v = self.to[e as usize] as usize;
                if self.cap[e as usize] > 0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
                e = self.next[e as usize];
            }
        }
        seen
    }

    /// Complement of the nodes that reach `t` in the residual graph (the
    /// inclusion-maximal source side).
    pub fn maximal_source_side(&self, t: usize) -> Vec<bool> {
        let mut reaches = vec![false; self.node_count()];
        reaches[t] = true;
        let mut stack = vec![t];
        while let Some(v) = stack.pop() {
            // arcs u → v with residual capacity are the reverses of v's arcs
            let mut e = self.first[v];
            while e != NONE {
                let u = self.to[e as usize] as usize;
                if self.cap[(e ^ 1) as usize] > 0 && !reaches[u] {
                    reaches[u] = true;
                    stack.push(u);
                }
                e = self.next[e as usize];
            }
        }
        reaches.iter().map(|&b| !b).collect()
    }
}

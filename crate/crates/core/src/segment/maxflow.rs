//! Boykov-Kolmogorov max-flow: two search trees grown from the terminals,
//! augmentation along the path where they meet, and orphan adoption.

use std::collections::VecDeque;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Parent {
    None,
    Terminal,
    Orphan,
    Arc(u32),
}

#[derive(Clone, Debug)]
struct Node {
    first: u32,
    parent: Parent,
    sink: bool,
    /// Residual terminal capacity: positive toward the source, negative toward the sink.
    tr_cap: f64,
    ts: u64,
    dist: u32,
    active: bool,
}

#[derive(Clone, Debug)]
struct Arc {
    head: u32,
    next: u32,
    r_cap: f64,
}

const NONE: u32 = u32::MAX;

/// Graph with terminal links and directed arc pairs.
#[derive(Clone, Debug)]
pub struct FlowGraph {
    nodes: Vec<Node>,
    arcs: Vec<Arc>,
    flow: f64,
    active: VecDeque<u32>,
    orphans: VecDeque<u32>,
    time: u64,
}

impl FlowGraph {
    pub fn new(n: usize) -> Self {
        let node = Node { first: NONE, parent: Parent::None, sink: false, tr_cap: 0.0, ts: 0, dist: 0, active: false };
        FlowGraph { nodes: vec![node; n], arcs: Vec::new(), flow: 0.0, active: VecDeque::new(), orphans: VecDeque::new(), time: 0 }
    }

    pub fn with_capacity(n: usize, arc_pairs: usize) -> Self {
        let mut g = Self::new(n);
        g.arcs.reserve(2 * arc_pairs);
        g
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Adds terminal capacities `source -> i` and `i -> sink`.
    pub fn add_tweights(&mut self, i: usize, to_source: f64, to_sink: f64) {
        debug_assert!(to_source >= 0.0 && to_sink >= 0.0);
        let (mut cs, mut ct) = (to_source, to_sink);
        let d = self.nodes[i].tr_cap;
        if d > 0.0 {
            cs += d;
        } else {
            ct -= d;
        }
        self.flow += cs.min(ct);
        self.nodes[i].tr_cap = cs - ct;
    }

    /// Adds arc `a -> b` with capacity `cap` and `b -> a` with `rev_cap`.
    pub fn add_edge(&mut self, a: usize, b: usize, cap: f64, rev_cap: f64) {
        debug_assert!(a != b && cap >= 0.0 && rev_cap >= 0.0);
        let ia = self.arcs.len() as u32;
        self.arcs.push(Arc { head: b as u32, next: self.nodes[a].first, r_cap: cap });
        self.nodes[a].first = ia;
        self.arcs.push(Arc { head: a as u32, next: self.nodes[b].first, r_cap: rev_cap });
        self.nodes[b].first = ia + 1;
    }

    #[inline]
    fn sister(a: u32) -> u32 {
        a ^ 1
    }

    fn set_active(&mut self, i: u32) {
        let n = &mut self.nodes[i as usize];
        if !n.active {
            n.active = true;
            self.active.push_back(i);
        }
    }

    fn next_active(&mut self) -> Option<u32> {
        while let Some(i) = self.active.pop_front() {
            self.nodes[i as usize].active = false;
            if self.nodes[i as usize].parent != Parent::None {
                return Some(i);
            }
        }
        None
    }

    fn arcs_of(&self, i: u32) -> ArcIter<'_> {
        ArcIter { arcs: &self.arcs, cur: self.nodes[i as usize].first }
    }

    /// Runs to completion and returns the max-flow value.
    pub fn maxflow(&mut self) -> f64 {
        for i in 0..self.nodes.len() {
            let n = &mut self.nodes[i];
            n.ts = 0;
            n.active = false;
            if n.tr_cap != 0.0 {
                n.sink = n.tr_cap < 0.0;
                n.parent = Parent::Terminal;
                n.dist = 1;
                self.set_active(i as u32);
            } else {
                n.parent = Parent::None;
            }
        }
        let mut current: Option<u32> = None;
        loop {
            let i = match current.take() {
                Some(i) if self.nodes[i as usize].parent != Parent::None => i,
                _ => match self.next_active() {
                    Some(i) => i,
                    None => break,
                },
            };
            let Some(meet) = self.grow(i) else { continue };
            self.time += 1;
            self.augment(meet);
            self.adopt();
            current = Some(i);
        }
        self.flow
    }

    /// Grows the tree containing `i`; returns an arc from the source tree to
    /// the sink tree when the trees touch.
    fn grow(&mut self, i: u32) -> Option<u32> {
        let iu = i as usize;
        let from_sink = self.nodes[iu].sink;
        let mut a = self.nodes[iu].first;
        while a != NONE {
            let arc = &self.arcs[a as usize];
            let (next, j) = (arc.next, arc.head);
            let cap = if from_sink { self.arcs[Self::sister(a) as usize].r_cap } else { arc.r_cap };
            if cap > 0.0 {
                let ju = j as usize;
                if self.nodes[ju].parent == Parent::None {
                    self.nodes[ju].sink = from_sink;
                    self.nodes[ju].parent = Parent::Arc(Self::sister(a));
                    self.nodes[ju].ts = self.nodes[iu].ts;
                    self.nodes[ju].dist = self.nodes[iu].dist + 1;
                    self.set_active(j);
                } else if self.nodes[ju].sink != from_sink {
                    return Some(if from_sink { Self::sister(a) } else { a });
                } else if self.nodes[ju].ts <= self.nodes[iu].ts && self.nodes[ju].dist > self.nodes[iu].dist {
                    self.nodes[ju].parent = Parent::Arc(Self::sister(a));
                    self.nodes[ju].ts = self.nodes[iu].ts;
                    self.nodes[ju].dist = self.nodes[iu].dist + 1;
                }
            }
            a = next;
        }
        // the node's outgoing capacity is exhausted; it stays in its tree
        None
    }

    fn make_orphan(&mut self, i: u32) {
        self.nodes[i as usize].parent = Parent::Orphan;
        self.orphans.push_back(i);
    }

    fn augment(&mut self, middle: u32) {
        let mut b = self.arcs[middle as usize].r_cap;
        // source side
        let mut i = self.arcs[Self::sister(middle) as usize].head;
        loop {
            match self.nodes[i as usize].parent {
                Parent::Arc(a) => {
                    b = b.min(self.arcs[Self::sister(a) as usize].r_cap);
                    i = self.arcs[a as usize].head;
                }
                _ => break,
            }
        }
        b = b.min(self.nodes[i as usize].tr_cap);
        // sink side
        let mut i = self.arcs[middle as usize].head;
        loop {
            match self.nodes[i as usize].parent {
                Parent::Arc(a) => {
                    b = b.min(self.arcs[a as usize].r_cap);
                    i = self.arcs[a as usize].head;
                }
                _ => break,
            }
        }
        b = b.min(-self.nodes[i as usize].tr_cap);

        self.arcs[Self::sister(middle) as usize].r_cap += b;
        self.arcs[middle as usize].r_cap -= b;

        let mut i = self.arcs[Self::sister(middle) as usize].head;
        loop {
            match self.nodes[i as usize].parent {
                Parent::Arc(a) => {
                    self.arcs[a as usize].r_cap += b;
                    let s = Self::sister(a) as usize;
                    self.arcs[s].r_cap -= b;
                    if self.arcs[s].r_cap <= 0.0 {
                        self.arcs[s].r_cap = 0.0;
                        self.make_orphan(i);
                    }
                    i = self.arcs[a as usize].head;
                }
                _ => {
                    let n = &mut self.nodes[i as usize];
                    n.tr_cap -= b;
                    if n.tr_cap <= 0.0 {
                        n.tr_cap = 0.0;
                        self.make_orphan(i);
                    }
                    break;
                }
            }
        }
        let mut i = self.arcs[middle as usize].head;
        loop {
            match self.nodes[i as usize].parent {
                Parent::Arc(a) => {
                    self.arcs[Self::sister(a) as usize].r_cap += b;
                    self.arcs[a as usize].r_cap -= b;
                    if self.arcs[a as usize].r_cap <= 0.0 {
                        self.arcs[a as usize].r_cap = 0.0;
                        self.make_orphan(i);
                    }
                    i = self.arcs[a as usize].head;
                }
                _ => {
                    let n = &mut self.nodes[i as usize];
                    n.tr_cap += b;
                    if n.tr_cap >= 0.0 {
                        n.tr_cap = 0.0;
                        self.make_orphan(i);
                    }
                    break;
                }
            }
        }
        self.flow += b;
    }

    /// Distance from `j` to its terminal along parent links, or `None` if
    /// the chain reaches an orphan. Caches distances with the current stamp.
    fn origin_distance(&mut self, j: u32) -> Option<u32> {
        let mut d = 0u32;
        let mut k = j;
        loop {
            let n = &self.nodes[k as usize];
            if n.ts == self.time {
                d += n.dist;
                break;
            }
            d += 1;
            match n.parent {
                Parent::Terminal => {
                    let n = &mut self.nodes[k as usize];
                    n.ts = self.time;
                    n.dist = 1;
                    break;
                }
                Parent::Arc(a) => k = self.arcs[a as usize].head,
                _ => return None,
            }
        }
        // stamp the chain with exact distances
        let mut dd = d;
        let mut k = j;
        while self.nodes[k as usize].ts != self.time {
            let n = &mut self.nodes[k as usize];
            n.ts = self.time;
            n.dist = dd;
            dd -= 1;
            match n.parent {
                Parent::Arc(a) => k = self.arcs[a as usize].head,
                _ => break,
            }
        }
        Some(d)
    }

    fn adopt(&mut self) {
        while let Some(i) = self.orphans.pop_front() {
            let sink = self.nodes[i as usize].sink;
            let mut best: Option<(u32, u32)> = None;
            let mut a = self.nodes[i as usize].first;
            while a != NONE {
                let arc = &self.arcs[a as usize];
                let (next, j) = (arc.next, arc.head);
                // capacity along the edge between j (candidate parent) and i
                let cap = if sink { arc.r_cap } else { self.arcs[Self::sister(a) as usize].r_cap };
                let jn = &self.nodes[j as usize];
                if cap > 0.0 && jn.sink == sink && jn.parent != Parent::None {
                    if let Some(d) = self.origin_distance(j) {
                        if best.is_none_or(|(_, bd)| d < bd) {
                            best = Some((a, d));
                        }
                    }
                }
                a = next;
            }
            if let Some((a, d)) = best {
                let n = &mut self.nodes[i as usize];
                n.parent = Parent::Arc(a);
                n.ts = self.time;
                n.dist = d + 1;
                continue;
            }
            self.nodes[i as usize].parent = Parent::None;
            let mut a = self.nodes[i as usize].first;
            while a != NONE {
                let arc = &self.arcs[a as usize];
                let (next, j) = (arc.next, arc.head);
                let jn = &self.nodes[j as usize];
                if jn.sink == sink && jn.parent != Parent::None {
                    let cap = if sink { arc.r_cap } else { self.arcs[Self::sister(a) as usize].r_cap };
                    if cap > 0.0 {
                        self.set_active(j);
                    }
                    if let Parent::Arc(pa) = self.nodes[j as usize].parent {
                        if self.arcs[pa as usize].head == i {
                            self.make_orphan(j);
                        }
                    }
                }
                a = next;
            }
        }
    }

    /// After [`maxflow`](Self::maxflow): true if `i` can reach the sink in
    /// the residual graph. All other nodes are on the source side.
    pub fn in_sink_tree(&self, i: usize) -> bool {
        let n = &self.nodes[i];
        n.parent != Parent::None && n.sink
    }

    /// After [`maxflow`](Self::maxflow): true if the source reaches `i` in
    /// the residual graph.
    pub fn in_source_tree(&self, i: usize) -> bool {
        let n = &self.nodes[i];
        n.parent != Parent::None && !n.sink
    }

    pub fn flow(&self) -> f64 {
        self.flow
    }

    #[allow(dead_code)]
    fn degree(&self, i: u32) -> usize {
        self.arcs_of(i).count()
    }
}

struct ArcIter<'a> {
    arcs: &'a [Arc],
    cur: u32,
}

impl Iterator for ArcIter<'_> {
    type Item = u32;
    fn next(&mut self) -> Option<u32> {
        if self.cur == NONE {
            return None;
        }
        let a = self.cur;
        self.cur = self.arcs[a as usize].next;
        Some(a)
    }
}

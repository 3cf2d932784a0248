//! Dinic max-flow on integer capacities.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct FlowGraph {
    adj: Vec<Vec<u32>>,
    to: Vec<u32>,
    cap: Vec<i64>,
}

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        Self {
            adj: vec![Vec::new(); nodes],
            to: Vec::new(),
            cap: Vec::new(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.adj.len()
    }

    /// Adds `u -> v` with capacity `c_uv` and the reverse arc with `c_vu`.
    pub fn add_edge(&mut self, u: usize, v: usize, c_uv: i64, c_vu: i64) {
        debug_assert!(c_uv >= 0 && c_vu >= 0);
        let e = self.to.len() as u32;
        self.to.push(v as u32);
        self.cap.push(c_uv);
        self.to.push(u as u32);
        self.cap.push(c_vu);
        self.adj[u].push(e);
        self.adj[v].push(e + 1);
    }

    fn levels(&self, s: usize, t: usize, level: &mut [i32]) -> bool {
        level.fill(-1);
        level[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &e in &self.adj[u] {
                let v = self.to[e as usize] as usize;
                if self.cap[e as usize] > 0 && level[v] < 0 {
                    level[v] = level[u] + 1;
                    q.push_back(v);
                }
            }
        }
        level[t] >= 0
    }

    /// Blocking flow with an explicit stack.
    fn blocking(&mut self, s: usize, t: usize, level: &mut [i32], it: &mut [usize]) -> i64 {
        let mut total = 0i64;
        let mut path: Vec<u32> = Vec::new();
        let mut u = s;
        loop {
            if u == t {
                let f = path.iter().map(|&e| self.cap[e as usize]).min().unwrap_or(0);
                let mut cut = path.len();
                for (i, &e) in path.iter().enumerate() {
                    self.cap[e as usize] -= f;
                    self.cap[(e ^ 1) as usize] += f;
                    if self.cap[e as usize] == 0 && cut == path.len() {
                        cut = i;
                    }
                }
                total += f;
                path.truncate(cut);
                u = match path.last() {
                    Some(&e) => self.to[e as usize] as usize,
                    None => s,
                };
                continue;
            }
            let mut advanced = false;
            while it[u] < self.adj[u].len() {
                let e = self.adj[u][it[u]] as usize;
                let v = self.to[e] as usize;
                if self.cap[e] > 0 && level[v] == level[u] + 1 {
                    path.push(e as u32);
                    u = v;
                    advanced = true;
                    break;
                }
                it[u] += 1;
            }
            if advanced {
                continue;
            }
            if u == s {
                return total;
            }
            level[u] = -1;
            let e = path.pop().expect("non-source node has an incoming arc");
            u = self.to[(e ^ 1) as usize] as usize;
            it[u] += 1;
        }
    }

    pub fn max_flow(&mut self, s: usize, t: usize) -> i64 {
        let n = self.nodes();
        let mut level = vec![-1i32; n];
        let mut it = vec![0usize; n];
        let mut flow = 0i64;
        while self.levels(s, t, &mut level) {
            it.fill(0);
            flow += self.blocking(s, t, &mut level, &mut it);
        }
        flow
    }

    /// Nodes reachable from `s` in the residual graph.
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.nodes()];
        seen[s] = true;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &e in &self.adj[u] {
                let v = self.to[e as usize] as usize;
                if self.cap[e as usize] > 0 && !seen[v] {
                    seen[v] = true;
                    q.push_back(v);
                }
            }
        }
        seen
    }
}

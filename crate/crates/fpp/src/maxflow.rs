//! Exact maximal flow through a lattice domain, with a min-cut certificate,
//! and the cylinder flows Φ(A, h) and τ(A, h).

use crate::environment::Capacities;
use crate::error::Result;
use crate::lattice::{cylinder_sets, CylinderSpec, EdgeId, LatticeDomain, Role};
use crate::scalar::Scalar;
use crate::stream::Stream;
use serde::Serialize;
use std::collections::VecDeque;

/// φ_n together with a maximal stream and a minimum cutset.
#[derive(Clone, Debug)]
pub struct MaxFlow<S: Scalar> {
    pub value: S,
    pub stream: Stream<S>,
    pub cut: Vec<EdgeId>,
}

/// Machine-readable summary written next to the stream and cut files.
#[derive(Clone, Debug, Serialize)]
pub struct MaxFlowSummary {
    pub value: String,
    pub value_f64: f64,
    pub cut_capacity: String,
    pub cut_size: usize,
    pub support_size: usize,
    pub vertices: usize,
    pub edges: usize,
}

impl<S: Scalar> MaxFlow<S> {
    pub fn summary(&self, lat: &LatticeDomain, t: &Capacities<S>) -> MaxFlowSummary {
        MaxFlowSummary {
            value: self.value.to_exact_string(),
            value_f64: self.value.to_f64_lossy(),
            cut_capacity: cut_capacity(t, &self.cut).to_exact_string(),
            cut_size: self.cut.len(),
            support_size: self.stream.support_len(),
            vertices: lat.len(),
            edges: lat.edges().len(),
        }
    }
}

#[derive(Clone, Debug)]
struct Arc<S> {
    to: usize,
    cap: S,
    flow: S,
}

/// Dinic's algorithm on a residual network with paired arcs (i, i ^ 1).
struct Network<S> {
    arcs: Vec<Arc<S>>,
    adj: Vec<Vec<usize>>,
    level: Vec<i64>,
    next: Vec<usize>,
}

impl<S: Scalar> Network<S> {
    fn new(nodes: usize) -> Self {
        Network { arcs: Vec::new(), adj: vec![Vec::new(); nodes], level: vec![-1; nodes], next: vec![0; nodes] }
    }

    /// Arc a→b with capacity `fwd` and its partner b→a with capacity `back`.
    fn add(&mut self, a: usize, b: usize, fwd: S, back: S) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc { to: b, cap: fwd, flow: S::zero() });
        self.arcs.push(Arc { to: a, cap: back, flow: S::zero() });
        self.adj[a].push(id);
        self.adj[b].push(id + 1);
        id
    }

    fn residual(&self, i: usize) -> S {
        self.arcs[i].cap.clone() - self.arcs[i].flow.clone()
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.iter_mut().for_each(|l| *l = -1);
        self.level[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            for &i in &self.adj[v] {
                let w = self.arcs[i].to;
                if self.level[w] < 0 && self.residual(i) > S::zero() {
                    self.level[w] = self.level[v] + 1;
                    q.push_back(w);
                }
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, v: usize, t: usize, limit: S) -> S {
        if v == t {
            return limit;
        }
        while self.next[v] < self.adj[v].len() {
            let i = self.adj[v][self.next[v]];
            let w = self.arcs[i].to;
            let r = self.residual(i);
            if self.level[w] == self.level[v] + 1 && r > S::zero() {
                let got = self.dfs(w, t, S::min_s(&limit, &r));
                if got > S::zero() {
                    self.arcs[i].flow += got.clone();
                    self.arcs[i ^ 1].flow -= got.clone();
                    return got;
                }
            }
            self.next[v] += 1;
        }
        S::zero()
    }

    fn run(&mut self, s: usize, t: usize, big: &S) -> S {
        let mut total = S::zero();
        while self.bfs(s, t) {
            self.next.iter_mut().for_each(|x| *x = 0);
            loop {
                let f = self.dfs(s, t, big.clone());
                if f <= S::zero() {
                    break;
                }
                total += f;
            }
        }
        total
    }

    /// Nodes reachable from s in the residual network.
    fn reachable(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[s] = true;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            for &i in &self.adj[v] {
                let w = self.arcs[i].to;
                if !seen[w] && self.residual(i) > S::zero() {
                    seen[w] = true;
                    q.push_back(w);
                }
            }
        }
        seen
    }
}

/// φ_n(Γ¹, Γ², Ω): a maximal admissible stream and the canonical minimum
/// cut (edges leaving the residual-reachable side of the super source).
pub fn max_flow<S: Scalar>(lat: &LatticeDomain, t: &Capacities<S>) -> MaxFlow<S> {
    let nv = lat.len();
    let (src, snk) = (nv, nv + 1);
    let mut net = Network::new(nv + 2);
    let edges = lat.edges();
    let mut total = S::zero();
    let mut lattice_arcs = Vec::with_capacity(edges.len());
    for e in &edges {
        let c = t.get(e);
        let a = lat.index_of(&e.x).expect("edge tail in domain");
        let b = lat.index_of(&e.head()).expect("edge head in domain");
        total += c.clone();
        lattice_arcs.push(net.add(a, b, c.clone(), c));
    }
    // Stands in for +∞: no flow can reach it, so these arcs never saturate.
    let big = total + S::one();
    for (i, x) in lat.vertices.iter().enumerate() {
        match lat.role_of(x) {
            Some(Role::Source) => {
                net.add(src, i, big.clone(), S::zero());
            }
            Some(Role::Sink) => {
                net.add(i, snk, big.clone(), S::zero());
            }
            _ => {}
        }
    }
    let value = net.run(src, snk, &big);
    let mut stream = Stream::new(lat.d, lat.n);
    for (e, &id) in edges.iter().zip(&lattice_arcs) {
        stream.set(e.clone(), net.arcs[id].flow.clone());
    }
    let side = net.reachable(src);
    let cut = edges
        .iter()
        .zip(&lattice_arcs)
        .filter(|(_, &id)| side[net.arcs[id ^ 1].to] != side[net.arcs[id].to])
        .map(|(e, _)| e.clone())
        .collect();
    MaxFlow { value, stream, cut }
}

/// T(E) = Σ_{e∈E} t(e).
pub fn cut_capacity<S: Scalar>(t: &Capacities<S>, cut: &[EdgeId]) -> S {
    cut.iter().fold(S::zero(), |acc, e| acc + t.get(e))
}

/// True when no path of allowed edges outside `cut` joins Γ¹ to Γ².
pub fn separates(lat: &LatticeDomain, cut: &[EdgeId]) -> bool {
    let removed: std::collections::HashSet<&EdgeId> = cut.iter().collect();
    let mut seen = vec![false; lat.len()];
    let mut q: VecDeque<usize> = VecDeque::new();
    for x in lat.gamma1() {
        let i = lat.index_of(&x).unwrap();
        seen[i] = true;
        q.push_back(i);
    }
    while let Some(i) = q.pop_front() {
        let x = &lat.vertices[i];
        if lat.role_of(x) == Some(Role::Sink) {
            return false;
        }
        for y in lat.neighbours(x) {
            let Some(j) = lat.index_of(&y) else { continue };
            if seen[j] {
                continue;
            }
            let (e, _) = EdgeId::between(x, &y).expect("neighbours");
            if lat.edge_allowed(&e) && !removed.contains(&e) {
                seen[j] = true;
                q.push_back(j);
            }
        }
    }
    true
}

/// Φ(A, h): maximal flow from the top T(A, h) to the bottom B(A, h).
pub fn cylinder_flow_top_bottom<S: Scalar>(spec: &CylinderSpec, n: i64, t: &Capacities<S>) -> Result<S> {
    let lat = cylinder_sets(spec, n)?.top_bottom_domain()?;
    Ok(max_flow(&lat, t).value)
}

/// τ(A, h): maximal flow from the upper half T'(A, h) to the lower half B'(A, h).
pub fn cylinder_flow_tau<S: Scalar>(spec: &CylinderSpec, n: i64, t: &Capacities<S>) -> Result<S> {
    let lat = cylinder_sets(spec, n)?.halves_domain()?;
    Ok(max_flow(&lat, t).value)
}

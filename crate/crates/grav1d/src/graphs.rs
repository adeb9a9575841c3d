//! Unlabeled Feynman diagrams: enumeration up to isomorphism, automorphism orders on
//! half-edges, and evaluation of Feynman rules.
//!
//! Graphs are multigraphs with self-loops and optional vertex marks. Isomorphism classes
//! are identified by a canonical byte code obtained from colour refinement followed by a
//! pruned search over orderings of the refined cells. Automorphisms act on half-edges,
//! so a self-loop contributes a flip factor 2 and `m` parallel edges contribute `m!`.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::{One, Zero};

use crate::combinat::{factorial, frac};
use crate::error::{Error, Result};
use crate::icoords::{compute_i, f_in_derivatives, f_in_i, FracPoly};
use crate::par;
use crate::partition::{closed_form_z_edges, edge_spec, free_energy, free_energy_full, truncate_edges};
use crate::report::{Check, Report};
use crate::series_core::{Monomial, OuterSeries, Rational, Series, TruncationSpec};

/// Largest number of edges accepted by [`enumerate`].
pub const MAX_EDGES: u32 = 8;

/// Vertex decoration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mark {
    /// An ordinary `•` vertex.
    Plain,
    /// A distinguished `•` vertex, weighted like a plain one.
    RootBullet,
    /// An unlabeled `∘` vertex of weight 1.
    Circle,
    /// A labeled `∘` vertex of weight 1.
    Label(u32),
    /// A `⊛` vertex.
    Star,
}

impl Mark {
    fn code(&self) -> u8 {
        match self {
            Mark::Plain => 0,
            Mark::RootBullet => 1,
            Mark::Circle => 2,
            Mark::Star => 3,
            Mark::Label(j) => 4u32.saturating_add(*j).min(255) as u8,
        }
    }

    /// True for `∘` vertices, which carry weight 1 in every rule.
    pub fn is_circle(&self) -> bool {
        matches!(self, Mark::Circle | Mark::Label(_))
    }

    fn symbol(&self) -> String {
        match self {
            Mark::Plain => "•".into(),
            Mark::RootBullet => "r".into(),
            Mark::Circle => "∘".into(),
            Mark::Label(j) => format!("∘{j}"),
            Mark::Star => "⊛".into(),
        }
    }
}

/// A graph given by half-edges, their vertices, and the edge pairing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HalfEdgeGraph {
    /// Number of half-edges.
    pub nhalf: usize,
    /// Vertex of each half-edge.
    pub vertex_of: Vec<usize>,
    /// Fixed-point-free involution pairing half-edges into edges.
    pub pairing: Vec<usize>,
    /// Mark of each vertex; its length is the number of vertices.
    pub marks: Vec<Mark>,
}

impl HalfEdgeGraph {
    /// Validates and builds a graph.
    pub fn new(vertex_of: Vec<usize>, pairing: Vec<usize>, marks: Vec<Mark>) -> Result<Self> {
        let nhalf = vertex_of.len();
        if pairing.len() != nhalf {
            return Err(Error::Domain("pairing and vertex_of lengths differ".into()));
        }
        for (h, &p) in pairing.iter().enumerate() {
            if p >= nhalf || p == h || pairing[p] != h {
                return Err(Error::Domain(format!("pairing is not a fixed-point-free involution at {h}")));
            }
        }
        if let Some(&v) = vertex_of.iter().find(|&&v| v >= marks.len()) {
            return Err(Error::Domain(format!("half-edge attached to missing vertex {v}")));
        }
        Ok(HalfEdgeGraph { nhalf, vertex_of, pairing, marks })
    }

    /// Builds a graph from a symmetric multiplicity matrix whose diagonal counts self-loops.
    pub fn from_adjacency(adj: &[Vec<u32>], marks: Vec<Mark>) -> Result<Self> {
        let n = adj.len();
        if marks.len() != n || adj.iter().any(|r| r.len() != n) {
            return Err(Error::Domain("adjacency matrix and marks disagree in size".into()));
        }
        let mut vertex_of = Vec::new();
        let mut pairing = Vec::new();
        for u in 0..n {
            for v in u..n {
                if adj[u][v] != adj[v][u] {
                    return Err(Error::Domain("adjacency matrix is not symmetric".into()));
                }
                for _ in 0..adj[u][v] {
                    let h = vertex_of.len();
                    vertex_of.push(u);
                    vertex_of.push(v);
                    pairing.push(h + 1);
                    pairing.push(h);
                }
            }
        }
        HalfEdgeGraph::new(vertex_of, pairing, marks)
    }

    /// Number of vertices.
    pub fn nvertices(&self) -> usize {
        self.marks.len()
    }

    /// Number of edges.
    pub fn nedges(&self) -> usize {
        self.nhalf / 2
    }

    /// Number of half-edges at `v`.
    pub fn valence(&self, v: usize) -> usize {
        self.vertex_of.iter().filter(|&&w| w == v).count()
    }

    /// Symmetric multiplicity matrix; the diagonal counts self-loops.
    pub fn adjacency(&self) -> Vec<Vec<u32>> {
        let n = self.nvertices();
        let mut adj = vec![vec![0u32; n]; n];
        for h in 0..self.nhalf {
            let p = self.pairing[h];
            if h < p {
                let (u, v) = (self.vertex_of[h], self.vertex_of[p]);
                adj[u][v] += 1;
                if u != v {
                    adj[v][u] += 1;
                }
            }
        }
        adj
    }

    /// Connected components as vertex lists.
    pub fn components(&self) -> Vec<Vec<usize>> {
        components(&self.adjacency())
    }

    /// First Betti number `E − V + (number of components)`.
    pub fn loops(&self) -> i64 {
        self.nedges() as i64 - self.nvertices() as i64 + self.components().len() as i64
    }

    /// True when the graph is connected and no edge is a bridge.
    pub fn is_one_particle_irreducible(&self) -> bool {
        let adj = self.adjacency();
        if components(&adj).len() != 1 {
            return false;
        }
        let n = adj.len();
        for u in 0..n {
            for v in (u + 1)..n {
                if adj[u][v] == 1 {
                    let mut cut = adj.clone();
                    cut[u][v] = 0;
                    cut[v][u] = 0;
                    if components(&cut).len() != 1 {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// The isomorphism class of this graph.
    pub fn canonical(&self) -> GraphClass {
        canonical_class(&self.adjacency(), &self.marks)
    }
}

/// An isomorphism class of graphs with its automorphism order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphClass {
    /// Complete isomorphism invariant.
    pub canonical_code: Vec<u8>,
    /// Order of the automorphism group acting on half-edges.
    pub aut_order: u64,
    /// Valences in nondecreasing order.
    pub degree_profile: Vec<usize>,
    /// First Betti number `E − V + (number of components)`.
    pub loops: i64,
    /// Representative with vertices in canonical order.
    pub graph: HalfEdgeGraph,
}

impl GraphClass {
    /// Number of edges.
    pub fn nedges(&self) -> usize {
        self.graph.nedges()
    }

    /// Number of vertices.
    pub fn nvertices(&self) -> usize {
        self.graph.nvertices()
    }

    /// `1/|Aut|`.
    pub fn inverse_aut(&self) -> Rational {
        Rational::new(1.into(), self.aut_order.into())
    }

    /// Canonical code in lowercase hex.
    pub fn code_hex(&self) -> String {
        self.canonical_code.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// One line of the dump format: `code aut_order degree_profile loops`.
    pub fn dump_line(&self) -> String {
        let profile: Vec<String> = self.degree_profile.iter().map(|v| v.to_string()).collect();
        format!("{} {} {} {}", self.code_hex(), self.aut_order, profile.join(","), self.loops)
    }
}

impl fmt::Display for GraphClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let adj = self.graph.adjacency();
        let mut parts = Vec::new();
        for u in 0..adj.len() {
            for v in u..adj.len() {
                if adj[u][v] > 0 {
                    parts.push(format!("{u}-{v}x{}", adj[u][v]));
                }
            }
        }
        let marks: Vec<String> = self.graph.marks.iter().map(Mark::symbol).collect();
        write!(f, "[{}] {{{}}} |Aut|={}", marks.join(" "), parts.join(" "), self.aut_order)
    }
}

/// Writes one class per line, ordered by canonical code.
pub fn dump(classes: &[GraphClass]) -> String {
    let mut sorted: Vec<&GraphClass> = classes.iter().collect();
    sorted.sort_by(|a, b| a.canonical_code.cmp(&b.canonical_code));
    sorted.iter().map(|c| c.dump_line() + "\n").collect()
}

fn components(adj: &[Vec<u32>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut i = 0;
        while i < comp.len() {
            let u = comp[i];
            for v in 0..n {
                if !seen[v] && adj[u][v] > 0 {
                    seen[v] = true;
                    comp.push(v);
                }
            }
            i += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn valence_of(adj: &[Vec<u32>], v: usize) -> usize {
    adj[v].iter().enumerate().map(|(u, &m)| if u == v { 2 * m } else { m }).sum::<u32>() as usize
}

/// Dense ranks of `keys`, ordered by key.
fn ranks<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter().map(|k| sorted.binary_search(k).unwrap_or(0)).collect()
}

/// Colour refinement with edge multiplicities, started from (mark, valence, self-loops).
fn refine(adj: &[Vec<u32>], marks: &[Mark]) -> Vec<usize> {
    let n = adj.len();
    let init: Vec<(u8, usize, u32)> = (0..n).map(|v| (marks[v].code(), valence_of(adj, v), adj[v][v])).collect();
    let mut color = ranks(&init);
    loop {
        let sigs: Vec<(usize, Vec<(usize, u32)>)> = (0..n)
            .map(|v| {
                let mut nb: Vec<(usize, u32)> =
                    (0..n).filter(|&u| u != v && adj[v][u] > 0).map(|u| (color[u], adj[v][u])).collect();
                nb.sort_unstable();
                (color[v], nb)
            })
            .collect();
        let next = ranks(&sigs);
        let before = color.iter().max().map_or(0, |m| m + 1);
        let after = next.iter().max().map_or(0, |m| m + 1);
        color = next;
        if after == before {
            return color;
        }
    }
}

struct Search<'a> {
    adj: &'a [Vec<u32>],
    color: &'a [usize],
    twin_rep: Vec<usize>,
    pos_color: Vec<usize>,
    used: Vec<bool>,
    perm: Vec<usize>,
    cur: Vec<u8>,
    best: Option<Vec<u8>>,
    best_perm: Vec<usize>,
    count: u64,
}

impl Search<'_> {
    fn twin_ok(&self, v: usize) -> bool {
        (0..v).all(|u| self.twin_rep[u] != self.twin_rep[v] || self.used[u])
    }

    fn dfs(&mut self, p: usize) {
        let n = self.adj.len();
        if p == n {
            match &self.best {
                Some(best) if *best == self.cur => self.count += 1,
                _ => {
                    self.best = Some(self.cur.clone());
                    self.best_perm = self.perm.clone();
                    self.count = 1;
                }
            }
            return;
        }
        for v in 0..n {
            if self.used[v] || self.color[v] != self.pos_color[p] || !self.twin_ok(v) {
                continue;
            }
            let start = self.cur.len();
            self.perm.push(v);
            for q in 0..=p {
                self.cur.push(self.adj[v][self.perm[q]].min(255) as u8);
            }
            let worse = self.best.as_ref().is_some_and(|b| self.cur[..] > b[..self.cur.len()]);
            if !worse {
                self.used[v] = true;
                self.dfs(p + 1);
                self.used[v] = false;
            }
            self.perm.pop();
            self.cur.truncate(start);
        }
    }
}

/// Canonical code, canonical vertex order, and vertex-automorphism count of a connected graph.
fn canonical_connected(adj: &[Vec<u32>], marks: &[Mark]) -> (Vec<u8>, Vec<usize>, u64) {
    let n = adj.len();
    let color = refine(adj, marks);
    let twins = |u: usize, v: usize| {
        color[u] == color[v] && adj[u][u] == adj[v][v] && (0..n).all(|w| w == u || w == v || adj[u][w] == adj[v][w])
    };
    let twin_rep: Vec<usize> = (0..n).map(|v| (0..=v).find(|&u| twins(u, v)).unwrap_or(v)).collect();
    let mut pos_color = color.clone();
    pos_color.sort_unstable();
    let mut search = Search {
        adj,
        color: &color,
        twin_rep: twin_rep.clone(),
        pos_color,
        used: vec![false; n],
        perm: Vec::with_capacity(n),
        cur: Vec::new(),
        best: None,
        best_perm: Vec::new(),
        count: 0,
    };
    search.dfs(0);
    let mut twin_factor: u64 = 1;
    let mut group_sizes: BTreeMap<usize, u64> = BTreeMap::new();
    for &r in &twin_rep {
        *group_sizes.entry(r).or_insert(0) += 1;
    }
    for &s in group_sizes.values() {
        twin_factor *= (1..=s).product::<u64>();
    }
    let perm = search.best_perm;
    let ne: u32 = (0..n).map(|u| (u..n).map(|v| adj[u][v]).sum::<u32>()).sum();
    let mut code = vec![n as u8, ne.min(255) as u8];
    code.extend(perm.iter().map(|&v| marks[v].code()));
    code.extend(search.best.unwrap_or_default());
    (code, perm, search.count * twin_factor)
}

/// Half-edge automorphism factor from edge multiplicities: `∏ m! · ∏ 2^ℓ ℓ!`.
fn edge_factor(adj: &[Vec<u32>]) -> u64 {
    let f = |m: u32| (1..=m as u64).product::<u64>();
    let n = adj.len();
    let mut out = 1u64;
    for u in 0..n {
        out *= f(adj[u][u]) << adj[u][u];
        for v in (u + 1)..n {
            out *= f(adj[u][v]);
        }
    }
    out
}

fn sub_adjacency(adj: &[Vec<u32>], verts: &[usize]) -> Vec<Vec<u32>> {
    verts.iter().map(|&u| verts.iter().map(|&v| adj[u][v]).collect()).collect()
}

fn canonical_class(adj: &[Vec<u32>], marks: &[Mark]) -> GraphClass {
    let mut comps: Vec<(Vec<u8>, Vec<usize>, u64)> = components(adj)
        .into_iter()
        .map(|verts| {
            let sub = sub_adjacency(adj, &verts);
            let sub_marks: Vec<Mark> = verts.iter().map(|&v| marks[v]).collect();
            let (code, perm, aut_v) = canonical_connected(&sub, &sub_marks);
            (code, perm.iter().map(|&i| verts[i]).collect(), aut_v)
        })
        .collect();
    comps.sort_by(|a, b| a.0.cmp(&b.0));
    let mut code = vec![comps.len() as u8];
    let mut order = Vec::new();
    let mut aut: u64 = 1;
    let mut i = 0;
    while i < comps.len() {
        let mut j = i;
        while j < comps.len() && comps[j].0 == comps[i].0 {
            j += 1;
        }
        aut *= (1..=(j - i) as u64).product::<u64>();
        i = j;
    }
    for (c, perm, aut_v) in &comps {
        code.push(c.len().min(255) as u8);
        code.extend(c);
        order.extend(perm.iter().copied());
        aut *= aut_v;
    }
    aut *= edge_factor(adj);
    let canon_adj = sub_adjacency(adj, &order);
    let canon_marks: Vec<Mark> = order.iter().map(|&v| marks[v]).collect();
    let graph = HalfEdgeGraph::from_adjacency(&canon_adj, canon_marks).expect("canonical relabeling of a valid graph");
    let mut degree_profile: Vec<usize> = (0..canon_adj.len()).map(|v| valence_of(&canon_adj, v)).collect();
    degree_profile.sort_unstable();
    let loops = graph.loops();
    GraphClass { canonical_code: code, aut_order: aut, degree_profile, loops, graph }
}

/// Marked-vertex patterns for tree and graph enumeration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarkMode {
    /// No marks.
    None,
    /// One `∘` root of valence 1.
    Rooted,
    /// A distinguished `•` root carrying `k` unlabeled `∘` neighbours of valence 1.
    RootVertex(usize),
    /// A `•` vertex carrying `k` labeled `∘` neighbours of valence 1.
    Legs(usize),
}

/// Filters applied by [`enumerate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Constraints {
    /// Keep only connected graphs; otherwise all graphs including the empty one.
    pub connected: bool,
    /// Smallest valence allowed at a `•` or `⊛` vertex.
    pub min_valence: usize,
    /// Allow cycles; when false only trees and forests are produced.
    pub allow_loops: bool,
    /// Keep only graphs with exactly this many loops.
    pub loops: Option<u32>,
    /// Marked-vertex pattern.
    pub marks: MarkMode,
}

impl Default for Constraints {
    fn default() -> Self {
        Constraints { connected: true, min_valence: 1, allow_loops: true, loops: None, marks: MarkMode::None }
    }
}

impl Constraints {
    /// Connected trees with the given marks.
    pub fn trees(marks: MarkMode) -> Self {
        Constraints { allow_loops: false, marks, ..Default::default() }
    }

    /// Connected graphs with exactly `g` loops and all valences at least 3.
    pub fn stable(g: u32) -> Self {
        Constraints { min_valence: 3, loops: Some(g), ..Default::default() }
    }
}

type Adj = Vec<Vec<u32>>;

fn seed(mode: MarkMode) -> (Adj, Vec<Mark>) {
    let star = |centre: Mark, leaves: Vec<Mark>| {
        let n = leaves.len() + 1;
        let mut adj = vec![vec![0u32; n]; n];
        for i in 1..n {
            adj[0][i] = 1;
            adj[i][0] = 1;
        }
        let mut marks = vec![centre];
        marks.extend(leaves);
        (adj, marks)
    };
    match mode {
        MarkMode::None => (vec![vec![0]], vec![Mark::Plain]),
        MarkMode::Rooted => star(Mark::Plain, vec![Mark::Circle]),
        MarkMode::RootVertex(k) => star(Mark::RootBullet, vec![Mark::Circle; k]),
        MarkMode::Legs(k) => star(Mark::Plain, (1..=k as u32).map(Mark::Label).collect()),
    }
}

fn seed_edges(mode: MarkMode) -> u32 {
    match mode {
        MarkMode::None => 0,
        MarkMode::Rooted => 1,
        MarkMode::RootVertex(k) | MarkMode::Legs(k) => k as u32,
    }
}

/// Connected graphs grown from the seed, grouped by edge count `seed..=max_edges`.
fn grow_connected(max_edges: u32, c: &Constraints) -> Vec<GraphClass> {
    let (adj0, marks0) = seed(c.marks);
    let first = canonical_class(&adj0, &marks0);
    let mut out = vec![first.clone()];
    let mut level = vec![first];
    let max_loops = c.loops.map(|g| g as i64).unwrap_or(i64::MAX);
    for _ in seed_edges(c.marks)..max_edges {
        let mut candidates: Vec<(Adj, Vec<Mark>)> = Vec::new();
        for class in &level {
            let adj = class.graph.adjacency();
            let marks = &class.graph.marks;
            let n = adj.len();
            let open: Vec<usize> = (0..n).filter(|&v| !marks[v].is_circle()).collect();
            for &v in &open {
                let mut a = adj.clone();
                for row in a.iter_mut() {
                    row.push(0);
                }
                a.push(vec![0; n + 1]);
                a[v][n] = 1;
                a[n][v] = 1;
                let mut m = marks.clone();
                m.push(Mark::Plain);
                candidates.push((a, m));
            }
            if c.allow_loops && class.loops < max_loops {
                for (i, &u) in open.iter().enumerate() {
                    for &v in &open[i..] {
                        let mut a = adj.clone();
                        a[u][v] += 1;
                        if u != v {
                            a[v][u] += 1;
                        }
                        candidates.push((a, marks.clone()));
                    }
                }
            }
        }
        let classes = par::map(&candidates, |(a, m)| canonical_class(a, m));
        let mut next: BTreeMap<Vec<u8>, GraphClass> = BTreeMap::new();
        for cl in classes {
            next.entry(cl.canonical_code.clone()).or_insert(cl);
        }
        level = next.into_values().collect();
        out.extend(level.iter().cloned());
    }
    out
}

fn admissible(class: &GraphClass, c: &Constraints) -> bool {
    let g = &class.graph;
    let valence_ok = (0..g.nvertices()).all(|v| g.marks[v].is_circle() || g.valence(v) >= c.min_valence);
    let loops_ok = c.loops.is_none_or(|l| class.loops == l as i64);
    valence_ok && loops_ok
}

/// All isomorphism classes with at most `max_edges` edges satisfying the constraints,
/// ordered by canonical code.
pub fn enumerate(max_edges: u32, c: &Constraints) -> Result<Vec<GraphClass>> {
    if max_edges > MAX_EDGES {
        return Err(Error::SizeLimit(format!("{max_edges} edges (limit {MAX_EDGES})")));
    }
    if !c.connected && c.marks != MarkMode::None {
        return Err(Error::Domain("marked graphs are enumerated connected only".into()));
    }
    let connected: Vec<GraphClass> =
        grow_connected(max_edges, c).into_iter().filter(|cl| admissible(cl, c) || !c.connected).collect();
    let mut out = if c.connected {
        connected
    } else {
        let pieces: Vec<GraphClass> = connected
            .into_iter()
            .filter(|cl| admissible(cl, &Constraints { loops: None, ..*c }))
            .collect();
        disjoint_unions(&pieces, max_edges)
            .into_iter()
            .filter(|cl| c.loops.is_none_or(|l| cl.loops == l as i64))
            .collect()
    };
    out.sort_by(|a, b| a.canonical_code.cmp(&b.canonical_code));
    Ok(out)
}

/// Every multiset of the given connected classes with at most `max_edges` edges in total.
fn disjoint_unions(pieces: &[GraphClass], max_edges: u32) -> Vec<GraphClass> {
    fn rec(pieces: &[GraphClass], start: usize, budget: usize, chosen: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        out.push(chosen.clone());
        for i in start..pieces.len() {
            let e = pieces[i].nedges();
            if e == 0 || e > budget {
                continue;
            }
            chosen.push(i);
            rec(pieces, i, budget - e, chosen, out);
            chosen.pop();
        }
    }
    let mut choices = Vec::new();
    rec(pieces, 0, max_edges as usize, &mut Vec::new(), &mut choices);
    par::map(&choices, |choice| {
        let n: usize = choice.iter().map(|&i| pieces[i].nvertices()).sum();
        let mut adj = vec![vec![0u32; n]; n];
        let mut marks = Vec::with_capacity(n);
        let mut off = 0;
        for &i in choice {
            let a = pieces[i].graph.adjacency();
            for (u, row) in a.iter().enumerate() {
                for (v, &m) in row.iter().enumerate() {
                    adj[off + u][off + v] = m;
                }
            }
            marks.extend(pieces[i].graph.marks.iter().copied());
            off += a.len();
        }
        canonical_class(&adj, &marks)
    })
}

/// Coefficient ring for Feynman sums.
pub trait Weight: Clone + Send + Sync {
    /// Sum.
    fn w_add(&self, other: &Self) -> Result<Self>;
    /// Product.
    fn w_mul(&self, other: &Self) -> Result<Self>;
    /// Rational multiple.
    fn w_scale(&self, c: &Rational) -> Self;
}

impl Weight for Series {
    fn w_add(&self, other: &Self) -> Result<Self> {
        self.checked_add(other)
    }
    fn w_mul(&self, other: &Self) -> Result<Self> {
        self.checked_mul(other)
    }
    fn w_scale(&self, c: &Rational) -> Self {
        self.scale(c)
    }
}

impl Weight for FracPoly {
    fn w_add(&self, other: &Self) -> Result<Self> {
        Ok(self.add(other))
    }
    fn w_mul(&self, other: &Self) -> Result<Self> {
        Ok(self.mul(other, u32::MAX))
    }
    fn w_scale(&self, c: &Rational) -> Self {
        self.scale(c)
    }
}

impl Weight for OuterSeries {
    fn w_add(&self, other: &Self) -> Result<Self> {
        self.checked_add(other)
    }
    fn w_mul(&self, other: &Self) -> Result<Self> {
        self.checked_mul(other)
    }
    fn w_scale(&self, c: &Rational) -> Self {
        self.scale(c)
    }
}

/// What a vertex-weight rule sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VertexView {
    /// Vertex index in the class representative.
    pub index: usize,
    /// Vertex mark.
    pub mark: Mark,
    /// Number of half-edges at the vertex.
    pub valence: usize,
}

/// `Σ_Γ w_Γ / |Aut Γ|` with `w_Γ = ∏_v vertex(v) · ∏_e edge(ends of e)`.
pub fn feynman_sum<T, V, E>(classes: &[GraphClass], one: &T, vertex: V, edge: E) -> Result<T>
where
    T: Weight,
    V: Fn(&VertexView) -> Result<T> + Sync + Send,
    E: Fn(&VertexView, &VertexView) -> Result<T> + Sync + Send,
{
    let terms = par::map(classes, |cl| -> Result<T> {
        let g = &cl.graph;
        let views: Vec<VertexView> =
            (0..g.nvertices()).map(|v| VertexView { index: v, mark: g.marks[v], valence: g.valence(v) }).collect();
        let mut w = one.clone();
        for view in &views {
            w = w.w_mul(&vertex(view)?)?;
        }
        for h in 0..g.nhalf {
            let p = g.pairing[h];
            if h < p {
                w = w.w_mul(&edge(&views[g.vertex_of[h]], &views[g.vertex_of[p]])?)?;
            }
        }
        Ok(w.w_scale(&cl.inverse_aut()))
    });
    let mut total = one.w_scale(&Rational::zero());
    for t in terms {
        total = total.w_add(&t?)?;
    }
    Ok(total)
}

/// Sum with the rule `w(v) = λ^{val−2} t_{val−1}` for `•` vertices, `w(∘) = 1`, `w(e) = 1`.
///
/// With `lambda` false the λ-grade of every term is 0. Terms outside `spec` are dropped.
pub fn t_rule_sum(classes: &[GraphClass], spec: TruncationSpec, lambda: bool) -> Result<Series> {
    let terms = par::map(classes, |cl| -> Result<Option<(Monomial, Rational)>> {
        let g = &cl.graph;
        let mut idx = Vec::new();
        for v in 0..g.nvertices() {
            if g.marks[v].is_circle() {
                continue;
            }
            let val = g.valence(v);
            if val == 0 {
                return Err(Error::Domain("a weighted vertex of valence 0 has no coupling".into()));
            }
            idx.push(val - 1);
        }
        let shift: i64 = idx.iter().map(|&a| a as i64 - 1).sum();
        if lambda && shift % 2 != 0 {
            return Err(Error::Domain("odd total λ-power in a t-rule weight".into()));
        }
        let l = if lambda { (shift / 2) as i32 } else { 0 };
        if idx.iter().any(|&a| a > spec.kmax) {
            return Ok(None);
        }
        Ok(Some((Monomial::from_indices(&idx, l), cl.inverse_aut())))
    });
    let mut out = Series::zero(spec);
    for t in terms {
        if let Some((m, c)) = t? {
            out.add_term(m, c);
        }
    }
    Ok(out)
}

/// Sum with the rule `w(v) = I_{val−1}`, `w(e) = 1/(1−I_1)`, as an I-polynomial.
pub fn i_rule_sum(classes: &[GraphClass]) -> FracPoly {
    let mut out = FracPoly::zero();
    for cl in classes {
        let g = &cl.graph;
        let idx: Vec<usize> = (0..g.nvertices()).map(|v| g.valence(v).saturating_sub(1)).collect();
        out.add_term(Monomial::from_indices(&idx, 0), g.nedges() as i32, cl.inverse_aut());
    }
    out
}

/// Quantities with an independent graph-sum oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleTarget {
    /// Free energy vs connected graphs, `order` = edges.
    F,
    /// Partition function vs all graphs, `order` = edges.
    Z,
    /// `I_0` vs rooted trees, `order` = degree.
    I0,
    /// `I_k` vs trees whose root carries `k+1` labeled `∘` leaves, `order` = degree.
    Ik(usize),
    /// The `•`-rooted trees with `k` unlabeled `∘` leaves at the root, vs `I_{k−1}/k!`
    /// (`I_{−1}` for `k = 0`), `order` = degree.
    TypeK(usize),
    /// `I_{−1} − ½I_0²` vs unrooted trees, `order` = degree.
    IMinus1Shift,
    /// `F_g` in I-coordinates vs stable `g`-loop graphs; `order` is unused.
    FgInI(u32),
}

fn lambda_free(kmax: usize, dmax: u32) -> TruncationSpec {
    TruncationSpec { kmax, dmax, lmin: 0, lmax: 0 }
}

/// Compares a graph sum with the algebraic computation; residuals are reported.
pub fn oracle_compare(target: OracleTarget, order: u32) -> Result<Report> {
    let mut r = Report::new();
    match target {
        OracleTarget::F | OracleTarget::Z => {
            let kmax = (2 * order as usize).saturating_sub(1);
            let spec = edge_spec(kmax, order);
            let z = closed_form_z_edges(kmax, order);
            let connected = target == OracleTarget::F;
            let classes = enumerate(order, &Constraints { connected, ..Default::default() })?;
            let sum = t_rule_sum(&classes, spec, true)?;
            let (name, exact) = if connected {
                ("F", truncate_edges(&free_energy(&z)?, order))
            } else {
                ("Z", z)
            };
            r.series(format!("{name}/edges<={order}"), &(&sum - &exact));
        }
        OracleTarget::I0 => {
            let spec = lambda_free(order as usize, order);
            let classes = enumerate(order, &Constraints::trees(MarkMode::Rooted))?;
            let b = compute_i(spec)?;
            r.series(format!("I0/deg<={order}"), &(&t_rule_sum(&classes, spec, false)? - &b.i[0]));
        }
        OracleTarget::Ik(k) => {
            let spec = lambda_free(order as usize + k, order);
            let classes = enumerate(order + k as u32, &Constraints::trees(MarkMode::Legs(k + 1)))?;
            let sum = t_rule_sum(&classes, spec, false)?.up_to_degree(order);
            let b = compute_i(spec)?;
            r.series(format!("I{k}/deg<={order}"), &(&sum - &b.i[k].up_to_degree(order)));
        }
        OracleTarget::TypeK(k) => {
            let spec = lambda_free(order as usize + k, order);
            let edges = (order + k as u32).saturating_sub(1);
            let classes = enumerate(edges, &Constraints::trees(MarkMode::RootVertex(k)))?;
            let sum = t_rule_sum(&classes, spec, false)?.up_to_degree(order);
            let b = compute_i(spec)?;
            let expected = if k == 0 {
                b.iminus1.clone()
            } else {
                b.i[k - 1].scale(&(Rational::one() / Rational::from(factorial(k as u64))))
            };
            r.series(format!("type{k}/deg<={order}"), &(&sum - &expected.up_to_degree(order)));
        }
        OracleTarget::IMinus1Shift => {
            let spec = lambda_free(order as usize, order);
            let classes = enumerate(order.saturating_sub(1), &Constraints::trees(MarkMode::None))?;
            let b = compute_i(spec)?;
            let shifted = &b.iminus1 - &(&b.i[0] * &b.i[0]).scale(&frac(1, 2));
            r.series(format!("Iminus1shift/deg<={order}"), &(&t_rule_sum(&classes, spec, false)? - &shifted));
        }
        OracleTarget::FgInI(g) => {
            if g < 2 {
                return Err(Error::Domain("the stable-graph rule needs genus at least 2".into()));
            }
            let classes = enumerate(3 * g - 3, &Constraints::stable(g))?;
            let sum = i_rule_sum(&classes);
            let f = free_energy_full(2 * g as usize - 1, 2 * g - 2)?;
            let exact = f_in_i(g, &f)?.poly;
            let diff = sum.add(&exact.scale(&-Rational::one()));
            let detail = diff.terms().next().map(|((m, p), c)| format!("residual {c} at {m} D^-{p}")).unwrap_or_default();
            r.push(Check::flag(format!("F{g}inI"), diff.is_zero(), detail));
        }
    }
    Ok(r)
}

/// One degree profile of `F_g` written in derivatives of `I_0`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OnePiRow {
    /// Valences of the profile in nondecreasing order.
    pub profile: Vec<usize>,
    /// Coefficient of `∏ ∂^{val−1} I_0 / (∂I_0)^p` in the derivative form.
    pub coefficient: Rational,
    /// `Σ (−1)^{V−1} V! / |Aut|` over the bridgeless graphs of the profile.
    pub one_pi_rule: Rational,
    /// The same sum over every graph of the profile.
    pub all_rule: Rational,
    /// Number of graphs of the profile that have a bridge.
    pub non_one_pi_graphs: usize,
}

impl OnePiRow {
    /// True when the bridgeless rule reproduces the coefficient.
    pub fn matches_one_pi(&self) -> bool {
        self.coefficient == self.one_pi_rule
    }
}

/// Compares the derivative form of `F_g` profile by profile with the signed-vertex-count
/// rule restricted to bridgeless graphs.
pub fn one_pi_rows(g: u32) -> Result<Vec<OnePiRow>> {
    if g < 2 {
        return Err(Error::Domain("genus at least 2 required".into()));
    }
    let f = free_energy_full(2 * g as usize - 1, 2 * g - 2)?;
    let deriv = f_in_derivatives(&f_in_i(g, &f)?)?;
    let classes = enumerate(3 * g - 3, &Constraints::stable(g))?;
    let mut rows: BTreeMap<Vec<usize>, OnePiRow> = BTreeMap::new();
    for cl in &classes {
        let row = rows.entry(cl.degree_profile.clone()).or_insert_with(|| OnePiRow {
            profile: cl.degree_profile.clone(),
            coefficient: Rational::zero(),
            one_pi_rule: Rational::zero(),
            all_rule: Rational::zero(),
            non_one_pi_graphs: 0,
        });
        let v = cl.nvertices() as u64;
        let sign = if v % 2 == 1 { Rational::one() } else { -Rational::one() };
        let w = sign * Rational::from(factorial(v)) * cl.inverse_aut();
        row.all_rule += w.clone();
        if cl.graph.is_one_particle_irreducible() {
            row.one_pi_rule += w;
        } else {
            row.non_one_pi_graphs += 1;
        }
    }
    for row in rows.values_mut() {
        let pairs: Vec<usize> = row.profile.iter().map(|&val| val - 1).collect();
        let m = Monomial::from_indices(&pairs, 0);
        row.coefficient = deriv
            .terms()
            .filter(|((mm, _), _)| mm == &m)
            .fold(Rational::zero(), |acc, (_, c)| acc + c);
    }
    Ok(rows.into_values().collect())
}

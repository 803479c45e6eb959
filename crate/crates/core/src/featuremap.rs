//! Coupling-aware covariant feature maps.
//!
//! A feature map is `U(x) = D(x) V_λ`: a trainable fiducial layer `V_λ` (three
//! rotations per qubit followed by one CZ per spanning-tree edge) and a data
//! layer `D(x)` of single-axis rotations. The spanning tree is a minimum-height
//! BFS tree over a connected patch of the device coupling graph.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Axis, Circuit, Gate};

/// Undirected simple graph over physical qubits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "EdgeList", into = "EdgeList")]
pub struct CouplingMap {
    n_physical: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

#[derive(Clone, Serialize, Deserialize)]
struct EdgeList {
    n_physical: usize,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<EdgeList> for CouplingMap {
    type Error = Error;

    fn try_from(raw: EdgeList) -> Result<Self> {
        CouplingMap::new(raw.n_physical, &raw.edges)
    }
}

impl From<CouplingMap> for EdgeList {
    fn from(map: CouplingMap) -> Self {
        EdgeList {
            n_physical: map.n_physical,
            edges: map.edges,
        }
    }
}

impl CouplingMap {
    pub fn new(n_physical: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for &(u, v) in edges {
            if u == v {
                return Err(Error::Coupling(format!("self-loop on qubit {u}")));
            }
            if u >= n_physical || v >= n_physical {
                return Err(Error::Coupling(format!(
                    "edge ({u}, {v}) outside a {n_physical}-qubit device"
                )));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::Coupling(format!("duplicate edge ({u}, {v})")));
            }
        }
        let edges: Vec<(usize, usize)> = seen.into_iter().collect();
        let mut adjacency = vec![Vec::new(); n_physical];
        for &(u, v) in &edges {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        adjacency.iter_mut().for_each(|a| a.sort_unstable());
        Ok(Self {
            n_physical,
            edges,
            adjacency,
        })
    }

    pub fn line(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|q| (q - 1, q)).collect();
        Self::new(n, &edges).expect("line edges are simple")
    }

    pub fn ring(n: usize) -> Self {
        let mut edges: Vec<_> = (1..n).map(|q| (q - 1, q)).collect();
        if n > 2 {
            edges.push((n - 1, 0));
        }
        Self::new(n, &edges).expect("ring edges are simple")
    }

    pub fn star(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|q| (0, q)).collect();
        Self::new(n, &edges).expect("star edges are simple")
    }

    /// Heavy-hex-like lattice: `rows` chains of `row_len` qubits, consecutive
    /// chains joined through bridge qubits every fourth column, with the bridge
    /// columns offset by two on alternate row gaps.
    pub fn heavy_hex(rows: usize, row_len: usize) -> Self {
        let mut edges = Vec::new();
        let chain = |r: usize, c: usize| r * row_len + c;
        for r in 0..rows {
            for c in 1..row_len {
                edges.push((chain(r, c - 1), chain(r, c)));
            }
        }
        let mut next = rows * row_len;
        for r in 0..rows.saturating_sub(1) {
            let offset = if r % 2 == 0 { 0 } else { 2 };
            for c in (offset..row_len).step_by(4) {
                edges.push((chain(r, c), next));
                edges.push((next, chain(r + 1, c)));
                next += 1;
            }
        }
        Self::new(next, &edges).expect("lattice edges are simple")
    }

    /// Parses one `u v` pair per line; blank lines and `#` comments are skipped.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        let mut n_physical = 0;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: idx as u64 + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(parse_err(format!("expected `u v`, got `{line}`")));
            }
            let mut pair = [0usize; 2];
            for (slot, f) in pair.iter_mut().zip(&fields) {
                *slot = f
                    .parse()
                    .map_err(|_| parse_err(format!("`{f}` is not a qubit index")))?;
            }
            n_physical = n_physical.max(pair[0] + 1).max(pair[1] + 1);
            edges.push((pair[0], pair[1]));
        }
        Self::new(n_physical, &edges)
    }

    pub fn load_edge_list(path: &Path) -> Result<Self> {
        Self::parse_edge_list(&std::fs::read_to_string(path)?)
    }

    pub fn to_edge_list(&self) -> String {
        self.edges.iter().map(|(u, v)| format!("{u} {v}\n")).collect()
    }

    pub fn n_physical(&self) -> usize {
        self.n_physical
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, q: usize) -> &[usize] {
        &self.adjacency[q]
    }
}

/// Spanning tree and CZ schedule over `n` logical qubits.
///
/// Logical qubit `i` is the `i`-th smallest physical qubit of the selected
/// patch; `physical` holds that mapping.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntanglerPlan {
    pub n: usize,
    pub physical: Vec<usize>,
    pub root: usize,
    pub height: usize,
    /// `(parent, child)` pairs in BFS order from the root.
    pub tree_edges: Vec<(usize, usize)>,
    pub layers: Vec<Vec<(usize, usize)>>,
    /// BFS visit order from the patch's starting qubit.
    pub qubit_order: Vec<usize>,
}

impl EntanglerPlan {
    /// Number of scheduled CZ layers.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Spanning-tree and schedule checks; returns a description of the first
    /// violation found.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Coupling(m));
        if self.n == 0 {
            return bad("empty plan".into());
        }
        if self.tree_edges.len() != self.n - 1 {
            return bad(format!(
                "{} tree edges for {} qubits",
                self.tree_edges.len(),
                self.n
            ));
        }
        // union-find doubles as the connectivity and acyclicity check
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(u, v) in &self.tree_edges {
            if u >= self.n || v >= self.n {
                return bad(format!("edge ({u}, {v}) out of range"));
            }
            let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
            if ru == rv {
                return bad(format!("edge ({u}, {v}) closes a cycle"));
            }
            parent[ru] = rv;
        }
        let mut scheduled: Vec<(usize, usize)> = Vec::new();
        for layer in &self.layers {
            let mut used = BTreeSet::new();
            for &(u, v) in layer {
                if !used.insert(u) || !used.insert(v) {
                    return bad(format!("layer reuses a qubit at edge ({u}, {v})"));
                }
            }
            scheduled.extend(layer);
        }
        let mut a = scheduled;
        let mut b = self.tree_edges.clone();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return bad("schedule does not cover the tree exactly once".into());
        }
        let order: BTreeSet<usize> = self.qubit_order.iter().copied().collect();
        if self.qubit_order.len() != self.n || order.len() != self.n {
            return bad("qubit order is not a permutation".into());
        }
        Ok(())
    }
}

fn bfs_order(coupling: &CouplingMap, start: usize, limit: usize) -> Vec<usize> {
    let mut seen = vec![false; coupling.n_physical];
    let mut order = Vec::with_capacity(limit);
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        order.push(u);
        if order.len() == limit {
            break;
        }
        for &v in coupling.neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    order
}

struct BfsTree {
    height: usize,
    edges: Vec<(usize, usize)>,
}

/// BFS tree of the induced subgraph (`local` adjacency) from `root`.
fn bfs_tree(local: &[Vec<usize>], root: usize) -> BfsTree {
    let n = local.len();
    let mut level = vec![usize::MAX; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut queue = VecDeque::from([root]);
    level[root] = 0;
    let mut height = 0;
    while let Some(u) = queue.pop_front() {
        for &v in &local[u] {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                height = height.max(level[v]);
                edges.push((u, v));
                queue.push_back(v);
            }
        }
    }
    BfsTree { height, edges }
}

/// First-fit packing of edges into vertex-disjoint layers, edges taken in order.
fn schedule(edges: &[(usize, usize)], n: usize) -> Vec<Vec<(usize, usize)>> {
    let mut layers: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut busy: Vec<Vec<bool>> = Vec::new();
    for &(u, v) in edges {
        let slot = busy.iter().position(|b| !b[u] && !b[v]);
        let k = match slot {
            Some(k) => k,
            None => {
                layers.push(Vec::new());
                busy.push(vec![false; n]);
                layers.len() - 1
            }
        };
        layers[k].push((u, v));
        busy[k][u] = true;
        busy[k][v] = true;
    }
    layers
}

/// Selects a connected `n`-qubit patch and the minimum-height BFS spanning
/// tree on it, then schedules the tree edges into vertex-disjoint layers.
///
/// Patches are the first `n` qubits reached by BFS from each physical qubit.
/// Patches compete on their best tree height, ties going to the lowest start;
/// within a patch, ties in height go to the lowest root.
pub fn build_entangler(coupling: &CouplingMap, n: usize) -> Result<EntanglerPlan> {
    if n == 0 {
        return Err(Error::Coupling("need at least one qubit".into()));
    }
    if n > coupling.n_physical {
        return Err(Error::Coupling(format!(
            "{n} qubits requested from a {}-qubit coupling map",
            coupling.n_physical
        )));
    }
    struct Candidate {
        physical: Vec<usize>,
        visit: Vec<usize>,
        root: usize,
        tree: BfsTree,
    }
    let mut best: Option<Candidate> = None;
    for start in 0..coupling.n_physical {
        let visit = bfs_order(coupling, start, n);
        if visit.len() < n {
            continue;
        }
        let mut physical = visit.clone();
        physical.sort_unstable();
        let local_index = |p: usize| physical.binary_search(&p).ok();
        let local: Vec<Vec<usize>> = physical
            .iter()
            .map(|&p| {
                coupling
                    .neighbors(p)
                    .iter()
                    .filter_map(|&q| local_index(q))
                    .collect()
            })
            .collect();
        let mut patch_best: Option<(usize, BfsTree)> = None;
        for root in 0..n {
            let tree = bfs_tree(&local, root);
            if patch_best.as_ref().is_none_or(|(_, t)| tree.height < t.height) {
                patch_best = Some((root, tree));
            }
        }
        let (root, tree) = patch_best.expect("patch is nonempty");
        if best.as_ref().is_none_or(|b| tree.height < b.tree.height) {
            let visit = visit.iter().map(|&p| local_index(p).unwrap()).collect();
            best = Some(Candidate {
                physical,
                visit,
                root,
                tree,
            });
        }
    }
    let best = best.ok_or_else(|| {
        Error::Coupling(format!("no connected {n}-qubit subgraph in the coupling map"))
    })?;
    let layers = schedule(&best.tree.edges, n);
    let plan = EntanglerPlan {
        n,
        physical: best.physical,
        root: best.root,
        height: best.tree.height,
        tree_edges: best.tree.edges,
        layers,
        qubit_order: best.visit,
    };
    plan.validate()?;
    Ok(plan)
}

/// Places features on qubits: the most important at the root, then the rest at
/// offsets +1, −1, +2, −2, … from the root along `qubit_order`.
///
/// Returns the feature index carried by each logical qubit.
pub fn assign_features(importance_order: &[usize], plan: &EntanglerPlan) -> Result<Vec<usize>> {
    let n = plan.n;
    if importance_order.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} ranked features for {n} qubits",
            importance_order.len()
        )));
    }
    let mut seen = vec![false; n];
    for &f in importance_order {
        if f >= n || std::mem::replace(&mut seen[f], true) {
            return Err(Error::InvalidConfig(format!(
                "importance order is not a permutation of 0..{n}"
            )));
        }
    }
    let centre = plan
        .qubit_order
        .iter()
        .position(|&q| q == plan.root)
        .expect("root is in the qubit order") as isize;
    let mut positions = vec![centre as usize];
    let mut k = 1isize;
    while positions.len() < n {
        for pos in [centre + k, centre - k] {
            if pos >= 0 && (pos as usize) < n {
                positions.push(pos as usize);
            }
        }
        k += 1;
    }
    let mut assignment = vec![0; n];
    for (&feature, &pos) in importance_order.iter().zip(&positions) {
        assignment[plan.qubit_order[pos]] = feature;
    }
    Ok(assignment)
}

/// Rotation axes of the fiducial layer; `gamma` is also the data axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Axes {
    pub alpha: Axis,
    pub beta: Axis,
    pub gamma: Axis,
}

impl Axes {
    pub const XYZ: Axes = Axes {
        alpha: Axis::X,
        beta: Axis::Y,
        gamma: Axis::Z,
    };
    pub const ZYX: Axes = Axes {
        alpha: Axis::Z,
        beta: Axis::Y,
        gamma: Axis::X,
    };
}

impl Default for Axes {
    fn default() -> Self {
        Axes::ZYX
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapSpec {
    pub n: usize,
    pub axes: Axes,
    /// Feature index encoded on each logical qubit.
    pub assignment: Vec<usize>,
    pub angle_scale: f64,
    pub entangler: EntanglerPlan,
}

impl FeatureMapSpec {
    pub fn new(
        entangler: EntanglerPlan,
        axes: Axes,
        importance_order: &[usize],
        angle_scale: f64,
    ) -> Result<Self> {
        if !angle_scale.is_finite() {
            return Err(Error::InvalidConfig("angle scale must be finite".into()));
        }
        let assignment = assign_features(importance_order, &entangler)?;
        Ok(Self {
            n: entangler.n,
            axes,
            assignment,
            angle_scale,
            entangler,
        })
    }

    /// Plan on `coupling` with features ranked in index order.
    pub fn on_coupling(
        coupling: &CouplingMap,
        n: usize,
        axes: Axes,
        angle_scale: f64,
    ) -> Result<Self> {
        let plan = build_entangler(coupling, n)?;
        let order: Vec<usize> = (0..n).collect();
        Self::new(plan, axes, &order, angle_scale)
    }

    pub fn n_params(&self) -> usize {
        3 * self.n
    }

    fn check_params(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} fiducial parameters, got {}",
                self.n_params(),
                lambda.len()
            )));
        }
        Ok(())
    }

    fn check_features(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "expected {} features, got {}",
                self.n,
                x.len()
            )));
        }
        Ok(())
    }

    /// `V_λ`: rotations `R_α R_β R_γ` on every qubit, then the CZ tree.
    pub fn build_fiducial(&self, lambda: &[f64]) -> Result<Circuit> {
        self.check_params(lambda)?;
        let mut gates = Vec::with_capacity(4 * self.n);
        for q in 0..self.n {
            gates.push(Gate::rotation(self.axes.alpha, q, lambda[3 * q]));
            gates.push(Gate::rotation(self.axes.beta, q, lambda[3 * q + 1]));
            gates.push(Gate::rotation(self.axes.gamma, q, lambda[3 * q + 2]));
        }
        for layer in &self.entangler.layers {
            gates.extend(layer.iter().map(|&(u, v)| Gate::Cz(u, v)));
        }
        Circuit::from_gates(self.n, gates)
    }

    /// Rotation angle applied on each logical qubit for sample `x`.
    pub fn embedding_angles(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_features(x)?;
        Ok(self
            .assignment
            .iter()
            .map(|&f| self.angle_scale * x[f])
            .collect())
    }

    /// `D(x)`: one `R_γ` per qubit, no entangling gates.
    pub fn build_embedding(&self, x: &[f64]) -> Result<Circuit> {
        let angles = self.embedding_angles(x)?;
        let gates = angles
            .into_iter()
            .enumerate()
            .map(|(q, a)| Gate::rotation(self.axes.gamma, q, a))
            .collect();
        Circuit::from_gates(self.n, gates)
    }

    /// `V_λ† D(x)† D(x') V_λ` as a gate list in time order.
    pub fn build_kernel_circuit(&self, x: &[f64], x_prime: &[f64], lambda: &[f64]) -> Result<Circuit> {
        let v = self.build_fiducial(lambda)?;
        let mut c = v.clone();
        c.append(&self.build_embedding(x_prime)?)?;
        c.append(&self.build_embedding(x)?.inverse())?;
        c.append(&v.inverse())?;
        Ok(c)
    }
}

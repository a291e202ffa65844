//! Deletion-only undirected graphs and their connected-component clusterings.
//!
//! Graphs start either complete or as an Erdős–Rényi draw and afterwards only
//! lose edges. [`ClusteredGraph`] keeps the component labelling current by
//! re-exploring just the component touched by a deletion.

use std::collections::{BTreeSet, VecDeque};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{domain, Error, Result};
use crate::model::Partition;

/// Below this many nodes graphs are initialized complete.
pub const DENSE_NODE_LIMIT: usize = 64;

/// Edge probability used for fresh graphs over `n` nodes:
/// 1 up to [`DENSE_NODE_LIMIT`], then `min(1, 3·ln(n)/n)`.
pub fn default_edge_probability(n: usize) -> f64 {
    if n <= DENSE_NODE_LIMIT {
        1.0
    } else {
        let nf = n as f64;
        (3.0 * nf.ln() / nf).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamicGraph {
    adj: Vec<BTreeSet<usize>>,
    edge_count: usize,
    allocated_edges: usize,
    repaired: bool,
}

impl DynamicGraph {
    pub fn edgeless(n: usize) -> Self {
        Self {
            adj: vec![BTreeSet::new(); n],
            edge_count: 0,
            allocated_edges: 0,
            repaired: false,
        }
    }

    pub fn complete(n: usize) -> Self {
        let adj: Vec<BTreeSet<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).collect())
            .collect();
        let edges = n * n.saturating_sub(1) / 2;
        Self {
            adj,
            edge_count: edges,
            allocated_edges: edges,
            repaired: false,
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::edgeless(n);
        for &(u, v) in edges {
            g.insert_edge(u, v)?;
        }
        g.allocated_edges = g.edge_count;
        Ok(g)
    }

    fn insert_edge(&mut self, u: usize, v: usize) -> Result<bool> {
        let n = self.adj.len();
        if u >= n || v >= n {
            return domain(format!("edge ({u}, {v}) outside 0..{n}"));
        }
        if u == v {
            return domain(format!("self-loop at {u}"));
        }
        let fresh = self.adj[u].insert(v);
        self.adj[v].insert(u);
        if fresh {
            self.edge_count += 1;
        }
        Ok(fresh)
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Edges present right after initialization, repair edges included.
    pub fn allocated_edges(&self) -> usize {
        self.allocated_edges
    }

    /// Whether initialization had to add a spanning tree to connect the draw.
    pub fn was_repaired(&self) -> bool {
        self.repaired
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj.get(u).is_some_and(|s| s.contains(&v))
    }

    fn check_node(&self, u: usize) -> Result<()> {
        if u >= self.adj.len() {
            return domain(format!("node {u} outside 0..{}", self.adj.len()));
        }
        Ok(())
    }

    /// Neighbors of `node`, never including `node` itself.
    pub fn neighborhood(&self, node: usize) -> Result<&BTreeSet<usize>> {
        self.check_node(node)?;
        Ok(&self.adj[node])
    }

    /// Removes the edges `(center, j)` for `j` in `to_remove`. Absent edges
    /// are skipped. Returns how many edges were actually removed.
    pub fn delete_edges(&mut self, center: usize, to_remove: &[usize]) -> Result<usize> {
        self.check_node(center)?;
        if let Some(&bad) = to_remove.iter().find(|&&j| j >= self.adj.len()) {
            return domain(format!("node {bad} outside 0..{}", self.adj.len()));
        }
        let mut removed = 0;
        for &j in to_remove {
            if self.adj[center].remove(&j) {
                self.adj[j].remove(&center);
                removed += 1;
            }
        }
        self.edge_count -= removed;
        Ok(removed)
    }

    /// All edges `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(u, s)| s.range(u + 1..).map(move |&v| (u, v)))
    }

    /// Appends a node linked to `links`. Used for users arriving mid-run.
    pub fn add_node(&mut self, links: &[usize]) -> Result<usize> {
        let id = self.adj.len();
        self.adj.push(BTreeSet::new());
        for &v in links {
            if let Err(e) = self.insert_edge(id, v) {
                self.adj.pop();
                return Err(e);
            }
        }
        self.allocated_edges += links.len();
        Ok(id)
    }

    /// Writes `n=<n>` followed by one `u v` line per edge, 1-based.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n={}", self.node_count())?;
        for (u, v) in self.edges() {
            writeln!(w, "{} {}", u + 1, v + 1)?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty graph dump".into()))??;
        let n: usize = header
            .trim()
            .strip_prefix("n=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad graph dump header {header:?}")))?;
        let mut edges = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(u)), Some(Ok(v)), None) if u >= 1 && v >= 1 => edges.push((u - 1, v - 1)),
                _ => return Err(Error::Format(format!("bad edge line {line:?}"))),
            }
        }
        Self::from_edges(n, &edges)
    }
}

/// Erdős–Rényi graph `G(n, p)`, reconnected by a random spanning tree over
/// its components if the draw came out disconnected.
pub fn init_sparse_graph<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<DynamicGraph> {
    if n == 0 {
        return domain("graph needs at least one node");
    }
    if !(p > 0.0 && p <= 1.0) {
        return domain(format!("edge probability {p} outside (0, 1]"));
    }
    if p >= 1.0 {
        return Ok(DynamicGraph::complete(n));
    }

    let mut g = DynamicGraph::edgeless(n);
    // Geometric skipping over the lower triangle (Batagelj–Brandes).
    let log_q = (1.0 - p).ln();
    let (mut v, mut w): (usize, i64) = (1, -1);
    while v < n {
        let r: f64 = rng.random::<f64>();
        let skip = ((1.0 - r).ln() / log_q).floor() as i64;
        w += 1 + skip;
        while v < n && w >= v as i64 {
            w -= v as i64;
            v += 1;
        }
        if v < n {
            g.insert_edge(v, w as usize)?;
        }
    }

    let clustering = components(&g);
    if clustering.num_clusters() > 1 {
        let mut groups = clustering.partition().groups();
        groups.shuffle(rng);
        for pair in groups.windows(2) {
            let a = pair[0][rng.random_range(0..pair[0].len())];
            let b = pair[1][rng.random_range(0..pair[1].len())];
            g.insert_edge(a, b)?;
        }
        g.repaired = true;
    }
    g.allocated_edges = g.edge_count;
    Ok(g)
}

/// Connected components, each labelled by its smallest node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    labels: Vec<usize>,
    partition: Partition,
    version: u64,
}

impl Clustering {
    fn from_labels(labels: Vec<usize>, version: u64) -> Self {
        let partition = Partition::from_labels(&labels);
        Self {
            labels,
            partition,
            version,
        }
    }

    /// Component label of `node`: the smallest node index in its component.
    pub fn label(&self, node: usize) -> usize {
        self.labels[node]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn num_clusters(&self) -> usize {
        self.partition.num_clusters()
    }

    pub fn version(&self) -> u64 {
        self.version
    }
}

fn bfs_from(g: &DynamicGraph, start: usize, seen: &mut [bool]) -> Vec<usize> {
    let mut out = vec![start];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &g.adj[u] {
            if !seen[v] {
                seen[v] = true;
                out.push(v);
                queue.push_back(v);
            }
        }
    }
    out
}

/// Connected components computed from scratch.
pub fn components(g: &DynamicGraph) -> Clustering {
    let n = g.node_count();
    let mut labels = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    for s in 0..n {
        if seen[s] {
            continue;
        }
        // s is the smallest unseen node, hence the smallest in its component.
        for v in bfs_from(g, s, &mut seen) {
            labels[v] = s;
        }
    }
    Clustering::from_labels(labels, 0)
}

/// A component split caused by a deletion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub old_label: usize,
    /// `(label, members)` for every resulting piece, members sorted.
    pub pieces: Vec<(usize, Vec<usize>)>,
}

/// A graph together with its current component labelling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusteredGraph {
    graph: DynamicGraph,
    labels: Vec<usize>,
    num_clusters: usize,
    version: u64,
}

impl ClusteredGraph {
    pub fn new(graph: DynamicGraph) -> Self {
        let c = components(&graph);
        Self {
            num_clusters: c.num_clusters(),
            labels: c.labels,
            graph,
            version: 0,
        }
    }

    pub fn graph(&self) -> &DynamicGraph {
        &self.graph
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn label(&self, node: usize) -> usize {
        self.labels[node]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    /// Bumped on every deletion that removed at least one edge.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn clustering(&self) -> Clustering {
        Clustering::from_labels(self.labels.clone(), self.version)
    }

    pub fn neighborhood(&self, node: usize) -> Result<&BTreeSet<usize>> {
        self.graph.neighborhood(node)
    }

    /// Members of the component containing `node`, sorted.
    pub fn component_of(&self, node: usize) -> Vec<usize> {
        let l = self.labels[node];
        (0..self.labels.len()).filter(|&i| self.labels[i] == l).collect()
    }

    /// Deletes `(center, j)` edges and relabels the affected component.
    /// Returns the split, if the component fell apart.
    pub fn delete_incident(&mut self, center: usize, to_remove: &[usize]) -> Result<Option<Split>> {
        let removed = self.graph.delete_edges(center, to_remove)?;
        if removed == 0 {
            return Ok(None);
        }
        self.version += 1;

        let old_label = self.labels[center];
        let old_members: Vec<usize> = (0..self.labels.len())
            .filter(|&i| self.labels[i] == old_label)
            .collect();
        let n = self.labels.len();
        let mut seen = vec![false; n];
        let reached = bfs_from(&self.graph, center, &mut seen);
        if reached.len() == old_members.len() {
            return Ok(None);
        }

        let mut groups = vec![reached];
        for &s in &old_members {
            if !seen[s] {
                groups.push(bfs_from(&self.graph, s, &mut seen));
            }
        }
        let mut pieces: Vec<(usize, Vec<usize>)> = groups
            .into_iter()
            .map(|mut members| {
                members.sort_unstable();
                (members[0], members)
            })
            .collect();
        pieces.sort_by_key(|(l, _)| *l);
        for (label, members) in &pieces {
            for &v in members {
                self.labels[v] = *label;
            }
        }
        self.num_clusters += pieces.len() - 1;
        Ok(Some(Split { old_label, pieces }))
    }

    /// Adds a node attached to `links`, all of which must lie in one
    /// component so that no clusters merge.
    pub fn add_node(&mut self, links: &[usize]) -> Result<usize> {
        let Some(&first) = links.first() else {
            let id = self.graph.add_node(&[])?;
            self.labels.push(id);
            self.num_clusters += 1;
            return Ok(id);
        };
        let label = self.labels[first];
        if links.iter().any(|&v| v >= self.labels.len() || self.labels[v] != label) {
            return domain("new node must attach inside a single component");
        }
        let id = self.graph.add_node(links)?;
        self.labels.push(label);
        Ok(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use proptest::prelude::*;

    fn path3() -> DynamicGraph {
        DynamicGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap()
    }

    /// Union-find over an edge list, independent of the BFS labelling.
    fn union_find_labels(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut c = x;
            while p[c] != r {
                let nx = p[c];
                p[c] = r;
                c = nx;
            }
            r
        }
        let mut parent: Vec<usize> = (0..n).collect();
        for &(u, v) in edges {
            let (a, b) = (find(&mut parent, u), find(&mut parent, v));
            // keep the smaller index as root
            if a < b {
                parent[b] = a;
            } else if b < a {
                parent[a] = b;
            }
        }
        (0..n).map(|i| find(&mut parent, i)).collect()
    }

    #[test]
    fn complete_with_probability_one() {
        let mut r = rng::stream(9, 0);
        let g = init_sparse_graph(4, 1.0, &mut r).unwrap();
        assert_eq!(g.edge_count(), 6);
        let g = init_sparse_graph(1, 0.5, &mut r).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.node_count(), 1);
        assert!(init_sparse_graph(3, 0.0, &mut r).is_err());
        assert!(init_sparse_graph(0, 0.5, &mut r).is_err());
    }

    #[test]
    fn sparse_draw_density_and_connectivity() {
        let n = 1000;
        let p = 3.0 * (n as f64).ln() / n as f64;
        let expected = p * (n * (n - 1)) as f64 / 2.0;
        let mut total = 0.0;
        let mut connected_without_repair = 0;
        for seed in 0..20 {
            let mut r = rng::stream(seed, 77);
            let g = init_sparse_graph(n, p, &mut r).unwrap();
            total += g.edge_count() as f64;
            assert_eq!(components(&g).num_clusters(), 1);
            if !g.was_repaired() {
                connected_without_repair += 1;
            }
        }
        let mean = total / 20.0;
        assert!((mean - expected).abs() < 0.1 * expected, "mean {mean} vs {expected}");
        assert!(connected_without_repair >= 19);
    }

    #[test]
    fn sparse_draw_is_seeded() {
        let a = init_sparse_graph(200, 0.05, &mut rng::stream(3, 1)).unwrap();
        let b = init_sparse_graph(200, 0.05, &mut rng::stream(3, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deletion_examples() {
        let mut g = path3();
        assert_eq!(g.delete_edges(1, &[2]).unwrap(), 1);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1)]);

        let mut g = path3();
        assert_eq!(g.delete_edges(1, &[]).unwrap(), 0);
        assert_eq!(g, path3());

        let mut g = path3();
        g.delete_edges(1, &[0, 2]).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(components(&g).num_clusters(), 3);

        let mut g = path3();
        assert!(g.delete_edges(5, &[0]).is_err());
        assert!(g.delete_edges(0, &[5]).is_err());
        // idempotent
        assert_eq!(g.delete_edges(0, &[2]).unwrap(), 0);
    }

    #[test]
    fn component_examples() {
        let g = DynamicGraph::from_edges(5, &[(0, 1), (1, 2)]).unwrap();
        let c = components(&g);
        assert_eq!(c.partition().groups(), vec![vec![0, 1, 2], vec![3], vec![4]]);
        assert_eq!(c.labels(), &[0, 0, 0, 3, 4]);
        assert_eq!(components(&DynamicGraph::edgeless(4)).num_clusters(), 4);
    }

    #[test]
    fn components_match_union_find_on_random_graphs() {
        let mut r = rng::stream(11, 0);
        for _ in 0..200 {
            let n = r.random_range(1..40);
            let p = r.random_range(0.01..0.3);
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if r.random::<f64>() < p {
                        edges.push((u, v));
                    }
                }
            }
            let g = DynamicGraph::from_edges(n, &edges).unwrap();
            assert_eq!(components(&g).labels(), union_find_labels(n, &edges).as_slice());
        }
    }

    #[test]
    fn neighborhood_examples() {
        let g = path3();
        assert_eq!(g.neighborhood(1).unwrap().iter().copied().collect::<Vec<_>>(), vec![0, 2]);
        assert!(DynamicGraph::edgeless(2).neighborhood(0).unwrap().is_empty());
        let k5 = DynamicGraph::complete(5);
        assert_eq!(
            k5.neighborhood(2).unwrap().iter().copied().collect::<Vec<_>>(),
            vec![0, 1, 3, 4]
        );
        assert!(g.neighborhood(3).is_err());
    }

    #[test]
    fn split_reports_pieces() {
        // 0-1-2-3 path plus 4 attached to 2
        let g = DynamicGraph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (2, 4)]).unwrap();
        let mut cg = ClusteredGraph::new(g);
        let split = cg.delete_incident(2, &[1, 3]).unwrap().unwrap();
        assert_eq!(split.old_label, 0);
        assert_eq!(
            split.pieces,
            vec![(0, vec![0, 1]), (2, vec![2, 4]), (3, vec![3])]
        );
        assert_eq!(cg.num_clusters(), 3);
        assert_eq!(cg.labels(), &[0, 0, 2, 3, 2]);
        assert_eq!(cg.version(), 1);
        // deleting absent edges changes nothing
        assert!(cg.delete_incident(2, &[1]).unwrap().is_none());
        assert_eq!(cg.version(), 1);
    }

    #[test]
    fn add_node_inside_component() {
        let g = DynamicGraph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let mut cg = ClusteredGraph::new(g);
        assert!(cg.add_node(&[0, 2]).is_err());
        let id = cg.add_node(&[2, 3]).unwrap();
        assert_eq!(id, 4);
        assert_eq!(cg.label(4), 2);
        assert_eq!(cg.num_clusters(), 2);
        assert_eq!(components(cg.graph()).labels(), cg.labels());
    }

    #[test]
    fn dump_round_trip() {
        let g = DynamicGraph::from_edges(4, &[(0, 3), (1, 2)]).unwrap();
        let mut buf = Vec::new();
        g.write_dump(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "n=4\n1 4\n2 3\n");
        let back = DynamicGraph::read_dump(buf.as_slice()).unwrap();
        assert_eq!(back.edges().collect::<Vec<_>>(), g.edges().collect::<Vec<_>>());
        assert!(DynamicGraph::read_dump("m=3\n".as_bytes()).is_err());
        assert!(DynamicGraph::read_dump("n=3\n1 x\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn incremental_components_match_recompute(
            n in 2usize..30,
            p in 0.05f64..0.9,
            seed in any::<u64>(),
            ops in prop::collection::vec((any::<prop::sample::Index>(), prop::collection::vec(any::<prop::sample::Index>(), 0..4)), 1..40),
        ) {
            let mut r = rng::stream(seed, 0);
            let g = init_sparse_graph(n, p, &mut r).unwrap();
            let mut cg = ClusteredGraph::new(g);
            let mut clusters = cg.num_clusters();
            let mut edges = cg.graph().edge_count();
            for (c, rm) in ops {
                let center = c.index(n);
                let rm: Vec<usize> = rm.iter().map(|i| i.index(n)).filter(|&j| j != center).collect();
                let removable = rm.iter().collect::<BTreeSet<_>>().into_iter()
                    .filter(|&&j| cg.graph().has_edge(center, j)).count();
                cg.delete_incident(center, &rm).unwrap();
                prop_assert_eq!(cg.graph().edge_count(), edges - removable);
                edges = cg.graph().edge_count();
                prop_assert!(cg.num_clusters() >= clusters);
                clusters = cg.num_clusters();
                let fresh = components(cg.graph());
                prop_assert_eq!(fresh.labels(), cg.labels());
                prop_assert_eq!(fresh.num_clusters(), cg.num_clusters());
                for (u, v) in cg.graph().edges() {
                    prop_assert!(cg.graph().has_edge(v, u));
                    prop_assert_ne!(u, v);
                }
            }
        }
    }
}

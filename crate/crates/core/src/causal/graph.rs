use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nodes with directed and undirected edges, plus the separating sets found
/// while building a skeleton. Node order is the order of insertion and is
/// the tie-break everywhere an order matters.
/// Serialized through [`GraphExport`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MixedGraph {
    nodes: Vec<String>,
    directed: BTreeSet<(usize, usize)>,
    /// Stored with the smaller index first.
    undirected: BTreeSet<(usize, usize)>,
    sepsets: BTreeMap<(usize, usize), Vec<usize>>,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl MixedGraph {
    pub fn new<S: Into<String>>(nodes: impl IntoIterator<Item = S>) -> Result<Self> {
        let nodes: Vec<String> = nodes.into_iter().map(Into::into).collect();
        let unique: BTreeSet<&String> = nodes.iter().collect();
        if unique.len() != nodes.len() {
            return Err(Error::contract(format!(
                "duplicate node names in {nodes:?}"
            )));
        }
        Ok(Self {
            nodes,
            ..Self::default()
        })
    }

    /// Complete undirected graph.
    pub fn complete<S: Into<String>>(nodes: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut g = Self::new(nodes)?;
        let n = g.nodes.len();
        for a in 0..n {
            for b in a + 1..n {
                g.undirected.insert((a, b));
            }
        }
        Ok(g)
    }

    /// DAG from named edges.
    pub fn from_edges<S: Into<String>>(
        nodes: impl IntoIterator<Item = S>,
        edges: &[(&str, &str)],
    ) -> Result<Self> {
        let mut g = Self::new(nodes)?;
        for (a, b) in edges {
            let (a, b) = (g.index(a)?, g.index(b)?);
            g.add_directed(a, b)?;
        }
        Ok(g)
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.nodes[i]
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::contract(format!("no node `{name}` in graph")))
    }

    pub fn add_directed(&mut self, a: usize, b: usize) -> Result<()> {
        if a == b {
            return Err(Error::contract(format!("self-loop on `{}`", self.nodes[a])));
        }
        self.undirected.remove(&key(a, b));
        self.directed.remove(&(b, a));
        self.directed.insert((a, b));
        Ok(())
    }

    pub fn add_undirected(&mut self, a: usize, b: usize) -> Result<()> {
        if a == b {
            return Err(Error::contract(format!("self-loop on `{}`", self.nodes[a])));
        }
        self.directed.remove(&(a, b));
        self.directed.remove(&(b, a));
        self.undirected.insert(key(a, b));
        Ok(())
    }

    pub fn remove_edge(&mut self, a: usize, b: usize) {
        self.directed.remove(&(a, b));
        self.directed.remove(&(b, a));
        self.undirected.remove(&key(a, b));
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.undirected.contains(&key(a, b))
            || self.directed.contains(&(a, b))
            || self.directed.contains(&(b, a))
    }

    pub fn has_directed(&self, a: usize, b: usize) -> bool {
        self.directed.contains(&(a, b))
    }

    pub fn has_undirected(&self, a: usize, b: usize) -> bool {
        self.undirected.contains(&key(a, b))
    }

    /// Every node sharing an edge with `a`, ascending.
    pub fn adjacent(&self, a: usize) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&b| b != a && self.is_adjacent(a, b))
            .collect()
    }

    pub fn parents(&self, a: usize) -> Vec<usize> {
        self.directed
            .iter()
            .filter(|(_, b)| *b == a)
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn children(&self, a: usize) -> Vec<usize> {
        self.directed
            .iter()
            .filter(|(p, _)| *p == a)
            .map(|(_, c)| *c)
            .collect()
    }

    pub fn undirected_neighbors(&self, a: usize) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&b| self.has_undirected(a, b))
            .collect()
    }

    pub fn directed_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.directed.iter().copied()
    }

    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.undirected.iter().copied()
    }

    /// All edges as unordered pairs, smaller index first.
    pub fn skeleton_edges(&self) -> BTreeSet<(usize, usize)> {
        self.undirected
            .iter()
            .copied()
            .chain(self.directed.iter().map(|&(a, b)| key(a, b)))
            .collect()
    }

    /// Named unordered edges, each pair sorted by name.
    pub fn skeleton_names(&self) -> BTreeSet<(String, String)> {
        self.skeleton_edges()
            .into_iter()
            .map(|(a, b)| {
                let (x, y) = (self.nodes[a].clone(), self.nodes[b].clone());
                if x <= y {
                    (x, y)
                } else {
                    (y, x)
                }
            })
            .collect()
    }

    pub fn directed_names(&self) -> BTreeSet<(String, String)> {
        self.directed
            .iter()
            .map(|&(a, b)| (self.nodes[a].clone(), self.nodes[b].clone()))
            .collect()
    }

    pub fn set_sepset(&mut self, a: usize, b: usize, z: Vec<usize>) {
        self.sepsets.insert(key(a, b), z);
    }

    pub fn sepset(&self, a: usize, b: usize) -> Option<&[usize]> {
        self.sepsets.get(&key(a, b)).map(Vec::as_slice)
    }

    /// Names in the separating set of two named nodes.
    pub fn sepset_names(&self, a: &str, b: &str) -> Result<Option<Vec<String>>> {
        let (a, b) = (self.index(a)?, self.index(b)?);
        Ok(self
            .sepset(a, b)
            .map(|z| z.iter().map(|&i| self.nodes[i].clone()).collect()))
    }

    /// A topological order of the directed part, or `None` if it has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        topo(
            self.nodes.len(),
            &self.directed.iter().copied().collect::<Vec<_>>(),
        )
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    /// Subgraph induced by `keep` (node order preserved); sepsets are dropped.
    pub fn induced(&self, keep: &BTreeSet<usize>) -> MixedGraph {
        let map: BTreeMap<usize, usize> = keep
            .iter()
            .enumerate()
            .map(|(new, &old)| (old, new))
            .collect();
        let mut g = MixedGraph {
            nodes: keep.iter().map(|&i| self.nodes[i].clone()).collect(),
            ..Default::default()
        };
        for &(a, b) in &self.directed {
            if let (Some(&x), Some(&y)) = (map.get(&a), map.get(&b)) {
                g.directed.insert((x, y));
            }
        }
        for &(a, b) in &self.undirected {
            if let (Some(&x), Some(&y)) = (map.get(&a), map.get(&b)) {
                g.undirected.insert(key(x, y));
            }
        }
        g
    }

    pub fn to_dot(&self, changing: &[String]) -> String {
        let mut out = String::from("digraph G {\n");
        for n in &self.nodes {
            if changing.contains(n) {
                out.push_str(&format!("  \"{n}\" [style=filled, fillcolor=lightgray];\n"));
            } else {
                out.push_str(&format!("  \"{n}\";\n"));
            }
        }
        for &(a, b) in &self.directed {
            out.push_str(&format!(
                "  {} -> {};\n",
                dot_id(&self.nodes[a]),
                dot_id(&self.nodes[b])
            ));
        }
        for &(a, b) in &self.undirected {
            out.push_str(&format!(
                "  {} -> {} [dir=none];\n",
                dot_id(&self.nodes[a]),
                dot_id(&self.nodes[b])
            ));
        }
        out.push_str("}\n");
        out
    }

    pub fn export(&self, changing: &[String]) -> GraphExport {
        GraphExport {
            nodes: self.nodes.clone(),
            directed: self
                .directed
                .iter()
                .map(|&(a, b)| [self.nodes[a].clone(), self.nodes[b].clone()])
                .collect(),
            undirected: self
                .undirected
                .iter()
                .map(|&(a, b)| [self.nodes[a].clone(), self.nodes[b].clone()])
                .collect(),
            changing_modules: changing.to_vec(),
        }
    }

    pub fn from_export(e: &GraphExport) -> Result<Self> {
        let mut g = Self::new(e.nodes.iter().cloned())?;
        for [a, b] in &e.directed {
            let (a, b) = (g.index(a)?, g.index(b)?);
            g.add_directed(a, b)?;
        }
        for [a, b] in &e.undirected {
            let (a, b) = (g.index(a)?, g.index(b)?);
            g.add_undirected(a, b)?;
        }
        Ok(g)
    }
}

/// Plain identifiers are written bare so `Y -> X1` reads naturally.
fn dot_id(name: &str) -> String {
    if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\\\""))
    }
}

/// JSON form of a graph, with the changing-module set when known.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphExport {
    pub nodes: Vec<String>,
    pub directed: Vec<[String; 2]>,
    pub undirected: Vec<[String; 2]>,
    pub changing_modules: Vec<String>,
}

/// Kahn's algorithm, smallest ready index first.
pub(crate) fn topo(n: usize, edges: &[(usize, usize)]) -> Option<Vec<usize>> {
    let mut indeg = vec![0usize; n];
    for &(_, b) in edges {
        indeg[b] += 1;
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &(a, b) in edges {
            if a == i {
                indeg[b] -= 1;
                if indeg[b] == 0 {
                    ready.insert(b);
                }
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Parents, children and co-parents of `y`; undirected neighbors of `y`
/// count as well since their orientation is unresolved.
pub fn markov_blanket(g: &MixedGraph, y: &str) -> Result<BTreeSet<String>> {
    let yi = g.index(y)?;
    let mut mb: BTreeSet<usize> = BTreeSet::new();
    mb.extend(g.parents(yi));
    mb.extend(g.undirected_neighbors(yi));
    for c in g.children(yi) {
        mb.insert(c);
        mb.extend(g.parents(c));
    }
    mb.remove(&yi);
    Ok(mb.into_iter().map(|i| g.name(i).to_string()).collect())
}

/// Groups of nodes joined by undirected edges, with directed edges lifted
/// between groups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupDag {
    pub groups: Vec<Vec<String>>,
    pub edges: Vec<(usize, usize)>,
}

impl GroupDag {
    pub fn group_of(&self, node: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.iter().any(|n| n == node))
    }

    pub fn parents(&self, g: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|(_, b)| *b == g)
            .map(|(a, _)| *a)
            .collect()
    }

    pub fn topological_order(&self) -> Option<Vec<usize>> {
        topo(self.groups.len(), &self.edges)
    }
}

/// Connected components of the undirected part become groups.
pub fn collapse_groups(pdag: &MixedGraph) -> Result<GroupDag> {
    let n = pdag.len();
    let mut comp = vec![usize::MAX; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = groups.len();
        let mut members = vec![start];
        comp[start] = id;
        let mut stack = vec![start];
        while let Some(a) = stack.pop() {
            for b in pdag.undirected_neighbors(a) {
                if comp[b] == usize::MAX {
                    comp[b] = id;
                    members.push(b);
                    stack.push(b);
                }
            }
        }
        members.sort_unstable();
        groups.push(members);
    }
    let edges: BTreeSet<(usize, usize)> = pdag
        .directed_edges()
        .filter(|(a, b)| comp[*a] != comp[*b])
        .map(|(a, b)| (comp[a], comp[b]))
        .collect();
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    if topo(groups.len(), &edges).is_none() {
        return Err(Error::Inconsistency(format!(
            "collapsed group graph is cyclic: {:?}",
            edges
                .iter()
                .map(|&(a, b)| format!(
                    "{:?} -> {:?}",
                    names(pdag, &groups[a]),
                    names(pdag, &groups[b])
                ))
                .collect::<Vec<_>>()
        )));
    }
    Ok(GroupDag {
        groups: groups.iter().map(|g| names(pdag, g)).collect(),
        edges,
    })
}

fn names(g: &MixedGraph, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| g.name(i).to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Y → X1, Y → X2, Y → X4, X3 → X1, X1 → X2, X3 → X5, X2 → X6.
    pub(crate) fn figure_graph() -> MixedGraph {
        MixedGraph::from_edges(
            ["Y", "X1", "X2", "X3", "X4", "X5", "X6"],
            &[
                ("Y", "X1"),
                ("Y", "X2"),
                ("Y", "X4"),
                ("X3", "X1"),
                ("X1", "X2"),
                ("X3", "X5"),
                ("X2", "X6"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn blanket_of_running_example() {
        let mb = markov_blanket(&figure_graph(), "Y").unwrap();
        let want: BTreeSet<String> = ["X1", "X2", "X3", "X4"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(mb, want);
    }

    #[test]
    fn blanket_edge_cases() {
        let g = MixedGraph::new(["Y", "X1"]).unwrap();
        assert!(markov_blanket(&g, "Y").unwrap().is_empty());
        let chain =
            MixedGraph::from_edges(["Y", "X1", "X2"], &[("Y", "X1"), ("X1", "X2")]).unwrap();
        assert_eq!(
            markov_blanket(&chain, "Y")
                .unwrap()
                .into_iter()
                .collect::<Vec<_>>(),
            vec!["X1"]
        );
    }

    #[test]
    fn collapse_mixed_edges() {
        let mut g =
            MixedGraph::from_edges(["Y", "X1", "X2", "X3"], &[("Y", "X1"), ("X2", "X3")]).unwrap();
        g.add_undirected(1, 2).unwrap();
        let gd = collapse_groups(&g).unwrap();
        assert_eq!(
            gd.groups,
            vec![
                vec!["Y".to_string()],
                vec!["X1".into(), "X2".into()],
                vec!["X3".into()]
            ]
        );
        assert_eq!(gd.edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn collapse_directed_and_total() {
        let g = MixedGraph::from_edges(["A", "B", "C"], &[("A", "B"), ("B", "C")]).unwrap();
        let gd = collapse_groups(&g).unwrap();
        assert_eq!(gd.groups.len(), 3);
        assert_eq!(gd.edges, vec![(0, 1), (1, 2)]);
        let all = MixedGraph::complete(["A", "B", "C"]).unwrap();
        let gd = collapse_groups(&all).unwrap();
        assert_eq!(gd.groups.len(), 1);
        assert!(gd.edges.is_empty());
    }

    #[test]
    fn collapse_rejects_lifted_cycle() {
        let mut g = MixedGraph::from_edges(["A", "B", "C"], &[("A", "C"), ("C", "B")]).unwrap();
        g.add_undirected(0, 1).unwrap();
        assert!(matches!(collapse_groups(&g), Err(Error::Inconsistency(_))));
    }

    #[test]
    fn exports_are_stable() {
        let mut g = MixedGraph::from_edges(["Y", "X1", "X2"], &[("Y", "X1")]).unwrap();
        g.add_undirected(1, 2).unwrap();
        let dot = g.to_dot(&["X1".into()]);
        assert!(dot.contains("Y -> X1;"));
        assert!(dot.contains("X1 -> X2 [dir=none];"));
        let json = serde_json::to_string(&g.export(&["X1".into()])).unwrap();
        assert_eq!(
            json,
            r#"{"nodes":["Y","X1","X2"],"directed":[["Y","X1"]],"undirected":[["X1","X2"]],"changing_modules":["X1"]}"#
        );
        let back = MixedGraph::from_export(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.export(&[]), g.export(&[]));
    }

    #[test]
    fn self_loops_and_duplicates_rejected() {
        let mut g = MixedGraph::new(["A"]).unwrap();
        assert!(g.add_directed(0, 0).is_err());
        assert!(MixedGraph::new(["A", "A"]).is_err());
    }
}

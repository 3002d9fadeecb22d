use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ci::{CiTest, FisherZ};
use super::MixedGraph;
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor2;

/// Name of the domain-index column added by [`cdnod_lite`].
pub const DOMAIN_NODE: &str = "S";
/// Name given to the label column in discovery.
pub const LABEL_NODE: &str = "Y";

/// Subsets of `items` of size `k`, in lexicographic order.
fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > items.len() {
        return out;
    }
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let mut p = k;
        while p > 0 && idx[p - 1] == items.len() - k + p - 1 {
            p -= 1;
        }
        if p == 0 {
            return out;
        }
        idx[p - 1] += 1;
        for q in p..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// Edge removal by conditioning sets of growing size drawn from the
/// adjacencies fixed at the start of each stage, so the result does not
/// depend on the order edges are visited in.
pub fn pc_skeleton_with(test: &dyn CiTest, names: &[String]) -> Result<MixedGraph> {
    if names.len() < 2 {
        return Err(Error::contract("PC needs at least two variables"));
    }
    let mut g = MixedGraph::complete(names.iter().cloned())?;
    let mut level = 0;
    loop {
        let adj: Vec<Vec<usize>> = (0..g.len()).map(|a| g.adjacent(a)).collect();
        let pairs: Vec<(usize, usize)> = g.skeleton_edges().into_iter().collect();
        if pairs
            .iter()
            .all(|&(a, b)| adj[a].len() - 1 < level && adj[b].len() - 1 < level)
        {
            break;
        }
        // Each pair is searched independently against the stage snapshot.
        let found: Vec<Option<Vec<usize>>> = pairs
            .par_iter()
            .map(|&(a, b)| -> Result<Option<Vec<usize>>> {
                for (x, y) in [(a, b), (b, a)] {
                    let cands: Vec<usize> = adj[x].iter().copied().filter(|&c| c != y).collect();
                    for z in combinations(&cands, level) {
                        let r = test.test(a, b, &z).map_err(|e| context(e, &g, a, b, &z))?;
                        if r.independent {
                            return Ok(Some(z));
                        }
                    }
                }
                Ok(None)
            })
            .collect::<Result<_>>()?;
        for (&(a, b), z) in pairs.iter().zip(found) {
            if let Some(z) = z {
                g.remove_edge(a, b);
                g.set_sepset(a, b, z);
            }
        }
        level += 1;
    }
    Ok(g)
}

fn context(e: Error, g: &MixedGraph, a: usize, b: usize, z: &[usize]) -> Error {
    let z: Vec<&str> = z.iter().map(|&i| g.name(i)).collect();
    match e {
        Error::NumericalDegeneracy(m) => Error::NumericalDegeneracy(format!(
            "testing {} - {} given {z:?}: {m}",
            g.name(a),
            g.name(b)
        )),
        other => other,
    }
}

/// PC skeleton with Fisher-z tests at level `alpha`; columns named by `names`.
pub fn pc_skeleton(data: &Tensor2, names: &[String], alpha: f64) -> Result<MixedGraph> {
    if names.len() != data.cols() {
        return Err(Error::contract(format!(
            "{} names for {} columns",
            names.len(),
            data.cols()
        )));
    }
    let test = FisherZ::new(data, alpha)?;
    pc_skeleton_with(&test, names)
}

/// Orients a skeleton: edges at each root point away from it, unshielded
/// colliders follow the separating sets, then Meek's rules run to closure.
///
/// Arrowheads into a root are never placed, except between two roots; a collider that would need one
/// is skipped, and so is a collider contradicting an earlier orientation.
pub fn orient_with_root(skeleton: &MixedGraph, roots: &[&str]) -> Result<MixedGraph> {
    let mut g = skeleton.clone();
    let root_idx: Vec<usize> = roots.iter().map(|r| g.index(r)).collect::<Result<_>>()?;
    let is_root = |i: usize| root_idx.contains(&i);
    // An edge between two roots points away from the one listed first.
    for (p, &r) in root_idx.iter().enumerate() {
        for b in g.adjacent(r) {
            if g.has_directed(b, r) {
                if root_idx[..p].contains(&b) {
                    continue;
                }
                return Err(Error::Inconsistency(format!(
                    "edge {} -> {} points into a root",
                    g.name(b),
                    g.name(r)
                )));
            }
            g.add_directed(r, b)?;
        }
    }

    let n = g.len();
    for k in 0..n {
        let adj = skeleton.adjacent(k);
        for (p, &i) in adj.iter().enumerate() {
            for &j in &adj[p + 1..] {
                if skeleton.is_adjacent(i, j) {
                    continue;
                }
                let in_sep = skeleton.sepset(i, j).is_some_and(|z| z.contains(&k));
                if in_sep || is_root(k) {
                    continue;
                }
                let ok = |x: usize| g.has_directed(x, k) || g.has_undirected(x, k);
                if ok(i) && ok(j) {
                    g.add_directed(i, k)?;
                    g.add_directed(j, k)?;
                }
            }
        }
    }

    meek(&mut g)?;
    if !g.is_acyclic() {
        return Err(Error::Inconsistency(
            "orientation produced a directed cycle".into(),
        ));
    }
    Ok(g)
}

/// Applies Meek's rules 1–4 until nothing changes.
fn meek(g: &mut MixedGraph) -> Result<()> {
    let n = g.len();
    loop {
        let mut changed = false;
        let undirected: Vec<(usize, usize)> = g.undirected_edges().collect();
        for (u, v) in undirected {
            for (a, b) in [(u, v), (v, u)] {
                if !g.has_undirected(a, b) {
                    continue;
                }
                if orient_rule(g, a, b, n) {
                    g.add_directed(a, b)?;
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(());
        }
    }
}

/// Whether one of Meek's rules forces `a → b` on the undirected edge `a - b`.
fn orient_rule(g: &MixedGraph, a: usize, b: usize, n: usize) -> bool {
    // R1: c → a - b with c, b non-adjacent.
    if (0..n).any(|c| g.has_directed(c, a) && !g.is_adjacent(c, b) && c != b) {
        return true;
    }
    // R2: a → c → b.
    if (0..n).any(|c| g.has_directed(a, c) && g.has_directed(c, b)) {
        return true;
    }
    // R3: a - c → b, a - d → b, c and d non-adjacent.
    let mids: Vec<usize> = (0..n)
        .filter(|&c| g.has_undirected(a, c) && g.has_directed(c, b))
        .collect();
    for (p, &c) in mids.iter().enumerate() {
        if mids[p + 1..].iter().any(|&d| !g.is_adjacent(c, d)) {
            return true;
        }
    }
    // R4: a - d → c → b with d, b non-adjacent and a adjacent to c.
    for c in (0..n).filter(|&c| g.has_directed(c, b) && g.is_adjacent(a, c)) {
        if (0..n).any(|d| {
            g.has_undirected(a, d) && g.has_directed(d, c) && !g.is_adjacent(d, b) && d != b
        }) {
            return true;
        }
    }
    false
}

/// Discovery result on domain-augmented data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdnodResult {
    pub graph: super::GraphExport,
    /// Variables adjacent to the domain index.
    pub changing: Vec<String>,
}

impl CdnodResult {
    pub fn mixed_graph(&self) -> Result<MixedGraph> {
        MixedGraph::from_export(&self.graph)
    }
}

/// Pools labeled (or all-unlabeled) datasets, appends `S` as an integer
/// domain code, and runs PC with `Y` and `S` as roots.
pub fn cdnod_lite(datasets: &[DomainDataset], alpha: f64) -> Result<CdnodResult> {
    if datasets.len() < 2 {
        return Err(Error::contract(
            "domain-augmented discovery needs at least two domains; use plain PC for one",
        ));
    }
    let refs: Vec<&DomainDataset> = datasets.iter().collect();
    crate::data::check_consistent(&refs)?;
    let labeled = datasets.iter().filter(|d| d.y.is_some()).count();
    if labeled != 0 && labeled != datasets.len() {
        return Err(Error::contract(
            "either all or none of the domains must be labeled",
        ));
    }
    let with_y = labeled > 0;
    let mut names = Vec::new();
    if with_y {
        names.push(LABEL_NODE.to_string());
    }
    names.extend(datasets[0].feature_names.iter().cloned());
    if names.iter().any(|n| n == DOMAIN_NODE) || (!with_y && names.iter().any(|n| n == LABEL_NODE))
    {
        return Err(Error::contract(format!(
            "feature names may not use `{DOMAIN_NODE}` or `{LABEL_NODE}`"
        )));
    }
    names.push(DOMAIN_NODE.to_string());
    let rows: usize = datasets.iter().map(|d| d.len()).sum();
    let mut data = Tensor2::zeros(rows, names.len());
    let mut r = 0;
    for (s, d) in datasets.iter().enumerate() {
        for i in 0..d.len() {
            let row = data.row_mut(r);
            let mut c = 0;
            if let Some(y) = &d.y {
                row[0] = y[i];
                c = 1;
            }
            row[c..c + d.dim()].copy_from_slice(d.x.row(i));
            row[c + d.dim()] = s as f64;
            r += 1;
        }
    }
    let skel = pc_skeleton(&data, &names, alpha)?;
    let roots: Vec<&str> = if with_y {
        vec![DOMAIN_NODE, LABEL_NODE]
    } else {
        vec![DOMAIN_NODE]
    };
    let pdag = orient_with_root(&skel, &roots)?;
    let s = pdag.index(DOMAIN_NODE)?;
    let changing: Vec<String> = pdag
        .adjacent(s)
        .into_iter()
        .map(|i| pdag.name(i).to_string())
        .collect();
    Ok(CdnodResult {
        graph: pdag.export(&changing),
        changing,
    })
}

#[cfg(test)]
mod tests {
    use super::super::ci::DSeparation;
    use super::*;
    use std::collections::BTreeSet;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn oracle_pc(nodes: &[&str], edges: &[(&str, &str)]) -> MixedGraph {
        let dag = MixedGraph::from_edges(nodes.iter().copied(), edges).unwrap();
        pc_skeleton_with(&DSeparation::new(&dag).unwrap(), &names(nodes)).unwrap()
    }

    fn pairs(v: &[(&str, &str)]) -> BTreeSet<(String, String)> {
        v.iter()
            .map(|(a, b)| {
                if a <= b {
                    (a.to_string(), b.to_string())
                } else {
                    (b.to_string(), a.to_string())
                }
            })
            .collect()
    }

    #[test]
    fn combinations_are_lexicographic() {
        assert_eq!(
            combinations(&[1, 2, 3], 2),
            vec![vec![1, 2], vec![1, 3], vec![2, 3]]
        );
        assert_eq!(combinations(&[1, 2], 0), vec![Vec::<usize>::new()]);
        assert!(combinations(&[1], 2).is_empty());
    }

    #[test]
    fn chain_skeleton_and_sepset() {
        let g = oracle_pc(&["Y", "X1", "X2"], &[("Y", "X1"), ("X1", "X2")]);
        assert_eq!(g.skeleton_names(), pairs(&[("Y", "X1"), ("X1", "X2")]));
        assert_eq!(
            g.sepset_names("Y", "X2").unwrap(),
            Some(vec!["X1".to_string()])
        );
        let o = orient_with_root(&g, &["Y"]).unwrap();
        assert!(o.has_directed(0, 1) && o.has_directed(1, 2));
    }

    #[test]
    fn collider_skeleton_and_orientation() {
        let g = oracle_pc(&["X1", "X2", "X3"], &[("X1", "X3"), ("X2", "X3")]);
        assert_eq!(g.skeleton_names(), pairs(&[("X1", "X3"), ("X2", "X3")]));
        assert_eq!(g.sepset_names("X1", "X2").unwrap(), Some(vec![]));
        let o = orient_with_root(&g, &[]).unwrap();
        assert!(o.has_directed(0, 2) && o.has_directed(1, 2));
    }

    #[test]
    fn independent_variables_give_empty_skeleton() {
        let g = oracle_pc(&["A", "B", "C"], &[]);
        assert!(g.skeleton_edges().is_empty());
    }

    #[test]
    fn single_edge_points_away_from_root() {
        let g = oracle_pc(&["Y", "X1"], &[("X1", "Y")]);
        let o = orient_with_root(&g, &["Y"]).unwrap();
        assert!(o.has_directed(0, 1));
    }

    #[test]
    fn adjacent_roots_follow_priority() {
        let g = oracle_pc(&["Y", "S", "X"], &[("Y", "S"), ("Y", "X")]);
        let o = orient_with_root(&g, &["S", "Y"]).unwrap();
        assert!(o.has_directed(1, 0));
        assert!(o.has_directed(0, 2));
    }

    #[test]
    fn oracle_recovers_eight_node_skeleton() {
        let nodes = ["A", "B", "C", "D", "E", "F", "G", "H"];
        let edges = [
            ("A", "B"),
            ("A", "C"),
            ("B", "D"),
            ("C", "D"),
            ("D", "E"),
            ("F", "E"),
            ("E", "G"),
            ("F", "H"),
            ("G", "H"),
        ];
        let g = oracle_pc(&nodes, &edges);
        assert_eq!(g.skeleton_names(), pairs(&edges));
        let o = orient_with_root(&g, &["A"]).unwrap();
        // Colliders at D and E (B→D←C; D→E←F) and their consequences.
        for (a, b) in [("B", "D"), ("C", "D"), ("D", "E"), ("F", "E"), ("E", "G")] {
            assert!(
                o.has_directed(o.index(a).unwrap(), o.index(b).unwrap()),
                "{a}->{b}"
            );
        }
    }

    #[test]
    fn single_domain_rejected() {
        let d = DomainDataset::new("a", Tensor2::zeros(3, 1), None, vec!["X1".into()]).unwrap();
        assert!(matches!(cdnod_lite(&[d], 0.05), Err(Error::Contract(_))));
    }
}

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// A skeleton graph: joints, undirected edges, a centre joint, and the
/// directed bones used to derive the bone stream.
///
/// Joints are 0-based in memory and 1-based in descriptor files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkeletonTopology {
    name: String,
    num_joints: usize,
    edges: Vec<(usize, usize)>,
    center: usize,
    bones: Vec<(usize, usize)>,
}

const NTU_RGBD_25: &str = include_str!("../../assets/ntu-rgbd-25.topo");
const KINETICS_18: &str = include_str!("../../assets/kinetics-18.topo");
const TOY_5: &str = include_str!("../../assets/toy-5.topo");

impl SkeletonTopology {
    /// Builds and validates a topology. All violations are reported at once.
    pub fn new(
        name: impl Into<String>,
        num_joints: usize,
        edges: Vec<(usize, usize)>,
        center: usize,
        bones: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let t = Self {
            name: name.into(),
            num_joints,
            edges,
            center,
            bones,
        };
        let problems = t.violations(None, None);
        if problems.is_empty() {
            Ok(t)
        } else {
            Err(Error::Topology(problems))
        }
    }

    /// Builds a topology whose bones follow breadth-first parents from the
    /// centre (lowest-index parent on ties).
    pub fn with_derived_bones(
        name: impl Into<String>,
        num_joints: usize,
        edges: Vec<(usize, usize)>,
        center: usize,
    ) -> Result<Self> {
        let mut t = Self {
            name: name.into(),
            num_joints,
            edges,
            center,
            bones: Vec::new(),
        };
        let problems = t.violations(None, None);
        // bone coverage errors are expected before derivation
        let structural: Vec<_> = problems.into_iter().filter(|p| !p.contains("bone")).collect();
        if !structural.is_empty() {
            return Err(Error::Topology(structural));
        }
        let dist = t.hop_distances();
        let adj = t.neighbors();
        t.bones = (0..num_joints)
            .filter(|&j| j != center)
            .map(|j| {
                let parent = adj[j]
                    .iter()
                    .copied()
                    .filter(|&k| dist[k] < dist[j])
                    .min()
                    .expect("connected graph has a closer neighbour");
                (parent, j)
            })
            .collect();
        Ok(t)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let text = match name {
            "ntu-rgbd-25" => NTU_RGBD_25,
            "kinetics-18" => KINETICS_18,
            "toy-5" => TOY_5,
            _ => {
                return Err(Error::Config(format!(
                    "unknown topology {name} (built-ins: ntu-rgbd-25, kinetics-18, toy-5)"
                )))
            }
        };
        Self::parse(text, name)
    }

    /// A built-in name, or a path to a descriptor file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match Self::builtin(name_or_path) {
            Ok(t) => Ok(t),
            Err(_) if Path::new(name_or_path).exists() => Self::load(name_or_path),
            Err(e) => Err(e),
        }
    }

    pub fn ntu_rgbd_25() -> Self {
        Self::builtin("ntu-rgbd-25").expect("shipped topology is valid")
    }

    pub fn kinetics_18() -> Self {
        Self::builtin("kinetics-18").expect("shipped topology is valid")
    }

    pub fn toy_5() -> Self {
        Self::builtin("toy-5").expect("shipped topology is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn bones(&self) -> &[(usize, usize)] {
        &self.bones
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_joints];
        for &(a, b) in &self.edges {
            if a < self.num_joints && b < self.num_joints && a != b {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        adj
    }

    /// Unweighted hop distance of every joint to the centre;
    /// `usize::MAX` for unreachable joints.
    pub fn hop_distances(&self) -> Vec<usize> {
        let adj = self.neighbors();
        let mut dist = vec![usize::MAX; self.num_joints];
        if self.center >= self.num_joints {
            return dist;
        }
        dist[self.center] = 0;
        let mut queue = VecDeque::from([self.center]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Relabels joint `j` as `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let map = |(a, b): (usize, usize)| (perm[a], perm[b]);
        Self::new(
            self.name.clone(),
            self.num_joints,
            self.edges.iter().copied().map(map).collect(),
            perm[self.center],
            self.bones.iter().copied().map(map).collect(),
        )
    }

    fn violations(&self, edge_lines: Option<&[usize]>, bone_lines: Option<&[usize]>) -> Vec<String> {
        let at = |lines: Option<&[usize]>, i: usize| match lines {
            Some(l) => format!("line {}: ", l[i]),
            None => String::new(),
        };
        let n = self.num_joints;
        let mut out = Vec::new();
        if n == 0 {
            out.push("num_joints must be positive".to_string());
            return out;
        }
        if self.center >= n {
            out.push(format!("center joint {} outside 1..={n}", self.center + 1));
        }
        let mut seen = BTreeSet::new();
        for (i, &(a, b)) in self.edges.iter().enumerate() {
            if a >= n || b >= n {
                out.push(format!(
                    "{}edge {} {} has an endpoint outside 1..={n}",
                    at(edge_lines, i),
                    a + 1,
                    b + 1
                ));
            } else if a == b {
                out.push(format!("{}edge {} {} is a self loop", at(edge_lines, i), a + 1, b + 1));
            } else if !seen.insert((a.min(b), a.max(b))) {
                out.push(format!("{}edge {} {} is a duplicate", at(edge_lines, i), a + 1, b + 1));
            }
        }
        if !out.is_empty() {
            return out;
        }
        let dist = self.hop_distances();
        let unreachable: Vec<String> = (0..n)
            .filter(|&j| dist[j] == usize::MAX)
            .map(|j| (j + 1).to_string())
            .collect();
        if !unreachable.is_empty() {
            out.push(format!(
                "graph is disconnected: joints {} are unreachable from the centre",
                unreachable.join(",")
            ));
            return out;
        }
        let mut covered = vec![0usize; n];
        for (i, &(s, t)) in self.bones.iter().enumerate() {
            let here = at(bone_lines, i);
            if s >= n || t >= n {
                out.push(format!(
                    "{here}bone {} {} has an endpoint outside 1..={n}",
                    s + 1,
                    t + 1
                ));
                continue;
            }
            if !seen.contains(&(s.min(t), s.max(t))) {
                out.push(format!("{here}bone {} {} is not an edge", s + 1, t + 1));
            }
            if dist[s] >= dist[t] {
                out.push(format!(
                    "{here}bone {} {}: source is not closer to the centre than target",
                    s + 1,
                    t + 1
                ));
            }
            covered[t] += 1;
        }
        for j in 0..n {
            if j != self.center && covered[j] != 1 {
                out.push(format!(
                    "joint {} is the target of {} bones (expected exactly 1)",
                    j + 1,
                    covered[j]
                ));
            }
        }
        out
    }

    /// Parses a descriptor. `source_name` is used in error messages.
    ///
    /// ```text
    /// # comment
    /// name toy
    /// num_joints 3
    /// center_joint 1
    /// edge 1 2
    /// edge 2 3
    /// bone 1 2
    /// bone 2 3
    /// ```
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut name = None;
        let mut num_joints = None;
        let mut center = None;
        let mut edges = Vec::new();
        let mut edge_lines = Vec::new();
        let mut bones = Vec::new();
        let mut bone_lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            let mut fields = content.split_whitespace();
            let key = fields.next().unwrap();
            let rest: Vec<&str> = fields.collect();
            let int = |s: &str| -> Result<usize> {
                s.parse::<usize>()
                    .map_err(|_| err(line, format!("expected a positive integer, got {s:?}")))
            };
            let joint = |s: &str| -> Result<usize> {
                let v = int(s)?;
                v.checked_sub(1)
                    .ok_or_else(|| err(line, "joint indices are 1-based".to_string()))
            };
            let arity = |k: usize| -> Result<()> {
                if rest.len() == k {
                    Ok(())
                } else {
                    Err(err(line, format!("{key} takes {k} value(s), got {}", rest.len())))
                }
            };
            let once = |present: bool| -> Result<()> {
                if present {
                    Err(err(line, format!("{key} given twice")))
                } else {
                    Ok(())
                }
            };
            match key {
                "name" => {
                    arity(1)?;
                    once(name.is_some())?;
                    name = Some(rest[0].to_string());
                }
                "num_joints" => {
                    arity(1)?;
                    once(num_joints.is_some())?;
                    num_joints = Some(int(rest[0])?);
                }
                "center_joint" => {
                    arity(1)?;
                    once(center.is_some())?;
                    center = Some(joint(rest[0])?);
                }
                "edge" => {
                    arity(2)?;
                    edges.push((joint(rest[0])?, joint(rest[1])?));
                    edge_lines.push(line);
                }
                "bone" => {
                    arity(2)?;
                    bones.push((joint(rest[0])?, joint(rest[1])?));
                    bone_lines.push(line);
                }
                other => return Err(err(line, format!("unknown field {other:?}"))),
            }
        }
        let last = text.lines().count().max(1);
        let t = Self {
            name: name.ok_or_else(|| err(last, "missing field name".into()))?,
            num_joints: num_joints.ok_or_else(|| err(last, "missing field num_joints".into()))?,
            edges,
            center: center.ok_or_else(|| err(last, "missing field center_joint".into()))?,
            bones,
        };
        let problems = t.violations(Some(&edge_lines), Some(&bone_lines));
        if problems.is_empty() {
            Ok(t)
        } else {
            Err(Error::Topology(
                problems.into_iter().map(|p| format!("{source_name}: {p}")).collect(),
            ))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "name {}", self.name).unwrap();
        writeln!(s, "num_joints {}", self.num_joints).unwrap();
        writeln!(s, "center_joint {}", self.center + 1).unwrap();
        for &(a, b) in &self.edges {
            writeln!(s, "edge {} {}", a + 1, b + 1).unwrap();
        }
        for &(a, b) in &self.bones {
            writeln!(s, "bone {} {}", a + 1, b + 1).unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_topologies_are_trees_with_full_bone_cover() {
        for (t, n) in [
            (SkeletonTopology::ntu_rgbd_25(), 25),
            (SkeletonTopology::kinetics_18(), 18),
            (SkeletonTopology::toy_5(), 5),
        ] {
            assert_eq!(t.num_joints(), n);
            assert_eq!(t.edges().len(), n - 1);
            assert_eq!(t.bones().len(), n - 1);
        }
        assert_eq!(SkeletonTopology::ntu_rgbd_25().center(), 20);
        assert_eq!(SkeletonTopology::kinetics_18().center(), 1);
    }

    #[test]
    fn text_roundtrip() {
        let t = SkeletonTopology::ntu_rgbd_25();
        assert_eq!(SkeletonTopology::parse(&t.to_text(), "x").unwrap(), t);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "name a\nnum_joints 3\ncenter_joint 1\nedge 1 two\n";
        match SkeletonTopology::parse(text, "f.topo") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let text = "name a\nnum_joints 3\ncenter_joint 1\nedge 1 2\nedge 2 9\nbone 1 2\n";
        match SkeletonTopology::parse(text, "f.topo") {
            Err(Error::Topology(p)) => assert!(p[0].contains("line 5"), "{p:?}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            SkeletonTopology::parse("name a\nnum_joints 2\nbogus 1\n", "f"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            SkeletonTopology::parse("name a\ncenter_joint 1\n", "f"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn rejects_structural_violations() {
        let bad = |edges: Vec<(usize, usize)>, bones: Vec<(usize, usize)>| {
            SkeletonTopology::new("t", 3, edges, 0, bones).unwrap_err()
        };
        let msg = |e: Error| e.to_string();
        assert!(msg(bad(vec![(0, 0), (0, 1)], vec![])).contains("self loop"));
        assert!(msg(bad(vec![(0, 1), (1, 0), (1, 2)], vec![])).contains("duplicate"));
        assert!(msg(bad(vec![(0, 1)], vec![(0, 1)])).contains("disconnected"));
        assert!(msg(bad(vec![(0, 1), (1, 2)], vec![(1, 0), (1, 2)])).contains("not closer"));
        assert!(msg(bad(vec![(0, 1), (1, 2)], vec![(0, 1)])).contains("joint 3"));
        assert!(msg(bad(vec![(0, 1), (1, 2)], vec![(0, 1), (0, 2)])).contains("not an edge"));
    }

    #[test]
    fn derived_bones_pick_closer_parent() {
        let t = SkeletonTopology::with_derived_bones("c4", 4, vec![(0, 1), (1, 2), (2, 3), (3, 0)], 0).unwrap();
        assert_eq!(t.bones(), &[(0, 1), (1, 2), (0, 3)]);
        assert_eq!(t.hop_distances(), vec![0, 1, 2, 1]);
    }

    #[test]
    fn single_joint_topology() {
        let t = SkeletonTopology::new("dot", 1, vec![], 0, vec![]).unwrap();
        assert_eq!(t.hop_distances(), vec![0]);
    }
}

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{HvisError, Result};

/// Maximum number of kinematic chains: trunk, left arm, right arm, left leg, right leg.
pub const MAX_PARTS: usize = 5;

/// Static joint graph: names, a parent tree and a kinematic-chain label per joint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkeletonSpec {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    part_of: Vec<usize>,
    root: usize,
    part_count: usize,
}

impl SkeletonSpec {
    /// `parents[j] == -1` marks the root. Part ids must cover `0..P` for some
    /// `P <= 5` with every id used.
    pub fn new(names: Vec<String>, parents: &[i64], part_of: Vec<usize>) -> Result<Self> {
        let n = names.len();
        if n == 0 {
            return Err(HvisError::Contract("skeleton needs at least one joint".into()));
        }
        if parents.len() != n || part_of.len() != n {
            return Err(HvisError::Contract(format!(
                "skeleton has {n} names, {} parents, {} part labels",
                parents.len(),
                part_of.len()
            )));
        }
        let mut roots = Vec::new();
        let mut links = Vec::with_capacity(n);
        for (j, &p) in parents.iter().enumerate() {
            match p {
                -1 => {
                    roots.push(j);
                    links.push(None);
                }
                p if p >= 0 && (p as usize) < n && p as usize != j => links.push(Some(p as usize)),
                p => {
                    return Err(HvisError::Contract(format!("joint {} has invalid parent {p}", names[j])));
                }
            }
        }
        if roots.len() != 1 {
            return Err(HvisError::Contract(format!("skeleton needs exactly one root, found {}", roots.len())));
        }
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = links[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(HvisError::Contract(format!("parent links through {} form a cycle", names[start])));
                }
            }
        }
        let part_count = part_of.iter().max().map_or(0, |m| m + 1);
        if part_count > MAX_PARTS {
            return Err(HvisError::Contract(format!("part id {} exceeds {}", part_count - 1, MAX_PARTS - 1)));
        }
        for part in 0..part_count {
            if !part_of.contains(&part) {
                return Err(HvisError::Contract(format!("part {part} has no joints")));
            }
        }
        Ok(SkeletonSpec { names, parents: links, part_of, root: roots[0], part_count })
    }

    /// The 12-joint body used by the synthetic corpus.
    pub fn default_body() -> Self {
        let joints: [(&str, i64, usize); 12] = [
            ("pelvis", -1, 0),
            ("spine", 0, 0),
            ("neck", 1, 0),
            ("head", 2, 0),
            ("l_elbow", 2, 1),
            ("l_wrist", 4, 1),
            ("r_elbow", 2, 2),
            ("r_wrist", 6, 2),
            ("l_knee", 0, 3),
            ("l_ankle", 8, 3),
            ("r_knee", 0, 4),
            ("r_ankle", 10, 4),
        ];
        let names = joints.iter().map(|j| j.0.to_string()).collect();
        let parents: Vec<i64> = joints.iter().map(|j| j.1).collect();
        let parts = joints.iter().map(|j| j.2).collect();
        SkeletonSpec::new(names, &parents, parts).expect("built-in skeleton is valid")
    }

    pub fn joint_count(&self) -> usize {
        self.names.len()
    }

    pub fn part_count(&self) -> usize {
        self.part_count
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn part_of(&self, joint: usize) -> usize {
        self.part_of[joint]
    }

    pub fn parts(&self) -> &[usize] {
        &self.part_of
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Undirected parent-child edges.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parents.iter().enumerate().filter_map(|(j, p)| p.map(|p| (p, j)))
    }

    /// Relabels joints so new joint `i` is old joint `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let n = self.joint_count();
        let mut inverse = vec![usize::MAX; n];
        for (new, &old) in order.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(HvisError::Parameter(format!("{order:?} is not a permutation of {n} joints")));
            }
            inverse[old] = new;
        }
        if order.len() != n {
            return Err(HvisError::Parameter(format!("{order:?} is not a permutation of {n} joints")));
        }
        let names = order.iter().map(|&o| self.names[o].clone()).collect();
        let parents: Vec<i64> = order
            .iter()
            .map(|&o| self.parents[o].map_or(-1, |p| inverse[p] as i64))
            .collect();
        let parts = order.iter().map(|&o| self.part_of[o]).collect();
        SkeletonSpec::new(names, &parents, parts)
    }

    /// Parses `name=<str> parent=<int> part=<int>` records, one per line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut parents = Vec::new();
        let mut parts = Vec::new();
        for (row, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (mut name, mut parent, mut part) = (None, None, None);
            for (column, field) in line.split_whitespace().enumerate() {
                let bad = |message: String| HvisError::Parse { row: row + 1, column: column + 1, message };
                let (key, value) = field
                    .split_once('=')
                    .ok_or_else(|| bad(format!("expected key=value, got {field:?}")))?;
                match key {
                    "name" => name = Some(value.to_string()),
                    "parent" => parent = Some(value.parse::<i64>().map_err(|e| bad(format!("parent {value:?}: {e}")))?),
                    "part" => part = Some(value.parse::<usize>().map_err(|e| bad(format!("part {value:?}: {e}")))?),
                    other => return Err(bad(format!("unknown key {other:?}"))),
                }
            }
            let missing = |what: &str| HvisError::Parse { row: row + 1, column: 0, message: format!("missing {what}") };
            names.push(name.ok_or_else(|| missing("name"))?);
            parents.push(parent.ok_or_else(|| missing("parent"))?);
            parts.push(part.ok_or_else(|| missing("part"))?);
        }
        SkeletonSpec::new(names, &parents, parts)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for j in 0..self.joint_count() {
            let parent = self.parents[j].map_or(-1, |p| p as i64);
            let _ = writeln!(out, "name={} parent={} part={}", self.names[j], parent, self.part_of[j]);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

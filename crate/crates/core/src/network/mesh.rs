use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// D-dimensional directed mesh. Agents are identified by row-major ids over
/// their multi-index (last axis fastest); the single leader sits at the
/// origin, id 0. Each agent receives from its immediate predecessor along
/// every axis where its index is positive, so every predecessor has a
/// smaller id than its successor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct MeshGraph {
    extents: Vec<usize>,
    strides: Vec<usize>,
    predecessors: Vec<Vec<(usize, usize)>>,
}

impl TryFrom<Vec<usize>> for MeshGraph {
    type Error = Error;

    fn try_from(extents: Vec<usize>) -> Result<Self> {
        MeshGraph::new(extents)
    }
}

impl From<MeshGraph> for Vec<usize> {
    fn from(g: MeshGraph) -> Self {
        g.extents
    }
}

/// Build a mesh with `dims` axes.
pub fn build_mesh(dims: usize, extents: &[usize]) -> Result<MeshGraph> {
    if dims != extents.len() {
        return Err(Error::Config(format!(
            "mesh has {dims} dimensions but {} extents",
            extents.len()
        )));
    }
    MeshGraph::new(extents.to_vec())
}

impl MeshGraph {
    pub fn new(extents: Vec<usize>) -> Result<Self> {
        if extents.is_empty() {
            return Err(Error::Config("mesh needs at least one dimension".into()));
        }
        if let Some(k) = extents.iter().position(|&r| r == 0) {
            return Err(Error::Config(format!(
                "mesh extent along axis {k} must be >= 1"
            )));
        }
        let len = extents
            .iter()
            .try_fold(1usize, |acc, &r| acc.checked_mul(r))
            .ok_or_else(|| Error::Config("mesh too large".into()))?;
        let mut strides = vec![1; extents.len()];
        for k in (0..extents.len() - 1).rev() {
            strides[k] = strides[k + 1] * extents[k + 1];
        }
        let mut graph = Self {
            extents,
            strides,
            predecessors: Vec::new(),
        };
        graph.predecessors = (0..len)
            .map(|id| {
                let idx = graph.multi_index(id);
                (0..graph.dims())
                    .filter(|&k| idx[k] > 0)
                    .map(|k| (k, id - graph.strides[k]))
                    .collect()
            })
            .collect();
        Ok(graph)
    }

    pub fn dims(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn len(&self) -> usize {
        self.predecessors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predecessors.is_empty()
    }

    pub fn leader(&self) -> usize {
        0
    }

    pub fn is_leader(&self, id: usize) -> bool {
        id == 0
    }

    pub fn multi_index(&self, id: usize) -> Vec<usize> {
        self.extents
            .iter()
            .zip(&self.strides)
            .map(|(&r, &s)| (id / s) % r)
            .collect()
    }

    pub fn id_of(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.dims() || index.iter().zip(&self.extents).any(|(i, r)| i >= r) {
            return None;
        }
        Some(index.iter().zip(&self.strides).map(|(i, s)| i * s).sum())
    }

    /// `(axis, id)` of each in-neighbour, in axis order.
    pub fn predecessors(&self, id: usize) -> &[(usize, usize)] {
        &self.predecessors[id]
    }

    pub fn successors(&self, id: usize) -> Vec<(usize, usize)> {
        let idx = self.multi_index(id);
        (0..self.dims())
            .filter(|&k| idx[k] + 1 < self.extents[k])
            .map(|k| (k, id + self.strides[k]))
            .collect()
    }

    pub fn in_degree(&self, id: usize) -> usize {
        self.predecessors[id].len()
    }

    /// Directed edges `(from, to)` ordered by receiving agent.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.predecessors
            .iter()
            .enumerate()
            .flat_map(|(to, preds)| preds.iter().map(move |&(_, from)| (from, to)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.predecessors.iter().map(Vec::len).sum()
    }

    /// Number of agents reachable from the leader along forward edges.
    pub fn reachable_from_leader(&self) -> usize {
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([self.leader()]);
        seen[self.leader()] = true;
        let mut count = 0;
        while let Some(id) = queue.pop_front() {
            count += 1;
            for (_, next) in self.successors(id) {
                if !seen[next] {
                    seen[next] = true;
                    queue.push_back(next);
                }
            }
        }
        count
    }
}

//! User–item bipartite graph in compressed adjacency form.
//!
//! Entities `0..m` are users and `m..m+n` are items. Only training
//! interactions become edges.

use std::sync::Arc;

use crate::dataio::SplitCorpus;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    num_users: usize,
    num_items: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl BipartiteGraph {
    /// Builds the graph from `(user, item)` edges. Duplicate edges collapse.
    pub fn from_edges(num_users: usize, num_items: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let total = num_users + num_items;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); total];
        for &(u, i) in edges {
            if u >= num_users || i >= num_items {
                return Err(Error::Invalid(format!(
                    "edge ({u}, {i}) out of range for {num_users} users and {num_items} items"
                )));
            }
            adj[u].push(num_users + i);
            adj[num_users + i].push(u);
        }
        let mut offsets = Vec::with_capacity(total + 1);
        let mut neighbors = Vec::with_capacity(2 * edges.len());
        offsets.push(0);
        for mut list in adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend(list);
            offsets.push(neighbors.len());
        }
        Ok(Self {
            num_users,
            num_items,
            offsets,
            neighbors,
        })
    }

    pub fn build(split: &SplitCorpus) -> Self {
        Self::from_edges(split.num_users(), split.num_items(), &split.train()).expect("split corpus ids are in range")
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_entities(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// Entity id of item `item`.
    pub fn item_entity(&self, item: usize) -> usize {
        self.num_users + item
    }

    fn check(&self, e: usize) -> Result<()> {
        if e >= self.num_entities() {
            return Err(Error::Invalid(format!(
                "entity {e} out of range for {} entities",
                self.num_entities()
            )));
        }
        Ok(())
    }

    /// Sorted neighbor list of `e`.
    pub fn neighbors(&self, e: usize) -> Result<&[usize]> {
        self.check(e)?;
        Ok(&self.neighbors[self.offsets[e]..self.offsets[e + 1]])
    }

    pub fn degree(&self, e: usize) -> Result<usize> {
        self.check(e)?;
        Ok(self.offsets[e + 1] - self.offsets[e])
    }

    /// Self-inclusive neighborhoods `N(e) ∪ {e}` laid out as segments, one
    /// per entity, members sorted by ascending id.
    pub fn conv_segments(&self) -> Arc<Segments> {
        let total = self.num_entities();
        let mut offsets = Vec::with_capacity(total + 1);
        let mut members = Vec::with_capacity(self.neighbors.len() + total);
        let mut owners = Vec::with_capacity(self.neighbors.len() + total);
        offsets.push(0);
        for e in 0..total {
            let list = &self.neighbors[self.offsets[e]..self.offsets[e + 1]];
            let at = list.partition_point(|&j| j < e);
            for &j in list[..at].iter().chain(std::iter::once(&e)).chain(&list[at..]) {
                members.push(j);
                owners.push(e);
            }
            offsets.push(members.len());
        }
        Arc::new(Segments {
            offsets,
            members: members.into(),
            owners: owners.into(),
        })
    }
}

/// Contiguous variable-length groups over a flat member array.
///
/// Segment `s` spans `members[offsets[s]..offsets[s + 1]]`; `owners[p]` is
/// the segment containing position `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    pub offsets: Vec<usize>,
    pub members: Arc<[usize]>,
    pub owners: Arc<[usize]>,
}

impl Segments {
    /// Builds segments from explicit member lists, in the given order.
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = vec![0];
        let mut members = Vec::new();
        let mut owners = Vec::new();
        for (s, list) in lists.iter().enumerate() {
            members.extend_from_slice(list);
            owners.extend(std::iter::repeat_n(s, list.len()));
            offsets.push(members.len());
        }
        Self {
            offsets,
            members: members.into(),
            owners: owners.into(),
        }
    }

    pub fn num_segments(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }
}

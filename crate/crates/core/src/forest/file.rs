//! Forest checkpoint container.
//!
//! ```text
//! magic    8 bytes  "CTXFORST"
//! version  u32      1
//! f, k, trees       u64 x 3
//! per tree: nodes u64, then per node feature u32 (u32::MAX = leaf),
//!           threshold f64, left u32, right u32;
//!           leaves u64, then u32 x k class counts per leaf
//! ```

use std::path::Path;

use super::{ForestModel, Tree, LEAF};
use crate::binio::{Reader, Writer};
use crate::error::Result;

const MAGIC: &[u8; 8] = b"CTXFORST";
pub const FOREST_VERSION: u32 = 1;
const MAX_CLASSES: u64 = 1 << 20;
const MAX_FEATURES: u64 = 1 << 24;

impl ForestModel {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, FOREST_VERSION);
        w.u64(self.f as u64);
        w.u64(self.k as u64);
        w.u64(self.trees.len() as u64);
        for t in &self.trees {
            w.u64(t.n_nodes() as u64);
            for n in 0..t.n_nodes() {
                w.u32(t.feature[n]);
                w.f64(t.threshold[n]);
                w.u32(t.left[n]);
                w.u32(t.right[n]);
            }
            w.u64((t.counts.len() / self.k) as u64);
            t.counts.iter().for_each(|&c| w.u32(c));
        }
        w.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::open("forest checkpoint", bytes, MAGIC)?;
        if version != FOREST_VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        let f = r.u64()?;
        let k = r.u64()?;
        if f == 0 || f > MAX_FEATURES || k == 0 || k > MAX_CLASSES {
            return Err(r.err(format!("bad dimensions f = {f}, k = {k}")));
        }
        let (f, k) = (f as usize, k as usize);
        let n_trees = r.count(8)?;
        let mut trees = Vec::with_capacity(n_trees);
        for t in 0..n_trees {
            let tree = read_tree(&mut r, f, k).map_err(|e| r.err(format!("tree {t}: {e}")))?;
            trees.push(tree);
        }
        r.finish()?;
        if trees.is_empty() {
            return Err(crate::Error::format("forest checkpoint", "no trees"));
        }
        Ok(ForestModel { f, k, trees })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = crate::binio::read_file(path)?;
        Self::decode(&bytes).map_err(|e| e.context(format!("reading {}", path.display())))
    }
}

fn read_tree(r: &mut Reader<'_>, f: usize, k: usize) -> std::result::Result<Tree, String> {
    let n = r.count(20).map_err(|e| e.to_string())?;
    if n == 0 {
        return Err("empty tree".into());
    }
    let mut tree = Tree {
        feature: Vec::with_capacity(n),
        threshold: Vec::with_capacity(n),
        left: Vec::with_capacity(n),
        right: Vec::with_capacity(n),
        leaf: vec![0; n],
        counts: Vec::new(),
    };
    for _ in 0..n {
        tree.feature.push(r.u32().map_err(|e| e.to_string())?);
        tree.threshold.push(r.f64().map_err(|e| e.to_string())?);
        tree.left.push(r.u32().map_err(|e| e.to_string())?);
        tree.right.push(r.u32().map_err(|e| e.to_string())?);
    }
    // Every child must come after its parent and be referenced once, which
    // rules out cycles and shared subtrees. Leaves are numbered in node order.
    let mut referenced = vec![false; n];
    let mut n_leaves = 0u32;
    for i in 0..n {
        if tree.feature[i] == LEAF {
            tree.leaf[i] = n_leaves;
            n_leaves += 1;
            continue;
        }
        if tree.feature[i] as usize >= f {
            return Err(format!(
                "node {i} splits on feature {} of {f}",
                tree.feature[i]
            ));
        }
        if !tree.threshold[i].is_finite() {
            return Err(format!("node {i} has a non-finite threshold"));
        }
        for child in [tree.left[i], tree.right[i]] {
            let c = child as usize;
            if c <= i || c >= n || referenced[c] {
                return Err(format!("node {i} has invalid child {child}"));
            }
            referenced[c] = true;
        }
    }
    if referenced.iter().skip(1).any(|&x| !x) {
        return Err("unreachable node".into());
    }
    let leaves = r.u64().map_err(|e| e.to_string())?;
    if leaves != u64::from(n_leaves) {
        return Err(format!("{leaves} leaf count blocks for {n_leaves} leaves"));
    }
    let values = (n_leaves as usize)
        .checked_mul(k)
        .ok_or("leaf table overflows")?;
    r.check_count(values as u64, 4).map_err(|e| e.to_string())?;
    for _ in 0..values {
        tree.counts.push(r.u32().map_err(|e| e.to_string())?);
    }
    if tree
        .counts
        .chunks(k)
        .any(|c| c.iter().map(|&v| u64::from(v)).sum::<u64>() == 0)
    {
        return Err("leaf with no samples".into());
    }
    Ok(tree)
}

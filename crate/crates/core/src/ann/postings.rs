use crate::error::{Error, Result};
use crate::model::QuantizedDocument;
use crate::scorer::SimLut;

/// One corpus patch: document ordinal (position in the index's sorted
/// document list) and patch position within that document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Posting {
    pub doc: u32,
    pub patch: u32,
}

/// Inverted file: for every code, the patches quantized to it, sorted by
/// `(doc, patch)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CentroidPostings {
    lists: Vec<Vec<Posting>>,
}

impl CentroidPostings {
    pub fn build(k: usize, docs: &[QuantizedDocument]) -> Result<Self> {
        let mut lists: Vec<Vec<Posting>> = vec![Vec::new(); k];
        for (d, doc) in docs.iter().enumerate() {
            for (p, &code) in doc.codes.iter().enumerate() {
                let list = lists.get_mut(code as usize).ok_or(Error::CodebookMismatch)?;
                list.push(Posting {
                    doc: d as u32,
                    patch: p as u32,
                });
            }
        }
        Ok(Self { lists })
    }

    pub fn k(&self) -> usize {
        self.lists.len()
    }

    pub fn list(&self, code: usize) -> &[Posting] {
        &self.lists[code]
    }

    pub fn lists(&self) -> &[Vec<Posting>] {
        &self.lists
    }

    pub fn total_postings(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    /// Candidate documents for a (pruned) query.
    ///
    /// Each query patch votes, with its attention weight, for every document
    /// holding a patch in the postings of its `c_nearest` most similar
    /// centroids (one vote per document per query patch). Returns up to `r`
    /// `(doc ordinal, votes)` pairs by descending votes, ties by ordinal.
    pub fn candidates(
        &self,
        lut: &SimLut,
        attention: &[f32],
        c_nearest: usize,
        r: usize,
        num_docs: usize,
    ) -> Vec<(u32, f64)> {
        let k = self.lists.len();
        let c_nearest = c_nearest.clamp(1, k);
        let mut votes = vec![0.0f64; num_docs];
        let mut stamp = vec![0u32; num_docs];
        let mut order: Vec<usize> = (0..k).collect();
        for i in 0..lut.rows() {
            let row = lut.row(i);
            // total order, so the selected set does not depend on `order`'s
            // current permutation
            let by_sim = |a: &usize, b: &usize| row[*b].total_cmp(&row[*a]).then(a.cmp(b));
            if c_nearest < k {
                order.select_nth_unstable_by(c_nearest - 1, by_sim);
            }
            let weight = attention[i] as f64;
            let mark = i as u32 + 1;
            for &code in &order[..c_nearest] {
                for posting in &self.lists[code] {
                    let d = posting.doc as usize;
                    if stamp[d] != mark {
                        stamp[d] = mark;
                        votes[d] += weight;
                    }
                }
            }
        }
        let hit: Vec<(u32, f64)> = (0..num_docs)
            .filter(|&d| stamp[d] != 0)
            .map(|d| (d as u32, votes[d]))
            .collect();
        super::top_docs(hit, r)
    }
}

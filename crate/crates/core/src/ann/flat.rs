use crate::error::{Error, Result};
use crate::linalg;

/// Exact `top_n` nearest rows of `vectors` (row-major, `dim` wide) by L2
/// distance. Returns `(row, distance)` ascending; ties keep insertion order.
pub fn flat_search(
    vectors: &[f32],
    dim: usize,
    query: &[f32],
    top_n: usize,
) -> Result<Vec<(usize, f32)>> {
    if vectors.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if query.len() != dim || !vectors.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: query.len(),
        });
    }
    let mut all: Vec<(usize, f32)> = vectors
        .chunks_exact(dim)
        .enumerate()
        .map(|(i, v)| (i, linalg::l2_sq(v, query)))
        .collect();
    let by_key = |a: &(usize, f32), b: &(usize, f32)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if top_n < all.len() {
        all.select_nth_unstable_by(top_n, by_key);
        all.truncate(top_n);
    }
    all.sort_by(by_key);
    Ok(all.into_iter().map(|(i, d)| (i, d.sqrt())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_unit_vectors() {
        let got = flat_search(&[1.0, 0.0, 0.0, 1.0], 2, &[1.0, 0.0], 2).unwrap();
        assert_eq!(got[0], (0, 0.0));
        assert_eq!(got[1].0, 1);
        assert!((got[1].1 - 2f32.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn matches_double_loop() {
        let dim = 3;
        let vecs: Vec<f32> = (0..300).map(|i| (i as f32 * 0.7311).sin() * 5.0).collect();
        let q = [2.0, -1.5, 1.0];
        let got = flat_search(&vecs, dim, &q, 15).unwrap();
        // oracle: compute every distance and repeatedly take the minimum
        let mut taken = [false; 100];
        for (rank, (idx, d)) in got.iter().enumerate() {
            let mut best = None;
            for i in 0..100 {
                if taken[i] {
                    continue;
                }
                let di: f64 = (0..dim)
                    .map(|j| (vecs[i * dim + j] as f64 - q[j] as f64).powi(2))
                    .sum();
                if best.is_none_or(|(_, bd)| di < bd) {
                    best = Some((i, di));
                }
            }
            let (bi, bd) = best.unwrap();
            taken[bi] = true;
            assert_eq!(*idx, bi, "rank {rank}");
            assert!((*d as f64 - bd.sqrt()).abs() < 1e-4);
        }
    }

    #[test]
    fn empty_index() {
        assert!(matches!(flat_search(&[], 2, &[0.0, 0.0], 1), Err(Error::EmptyIndex)));
    }

    #[test]
    fn top_n_truncates() {
        assert_eq!(flat_search(&[1.0, 2.0], 1, &[0.0], 10).unwrap().len(), 2);
    }
}

//! K-means codebook training and nearest-centroid coding.
//!
//! Training is Lloyd's algorithm with k-means++ (or random, or exhaustive)
//! seeding. Assignment runs in fixed-size chunks and every reduction is
//! folded in chunk order, so a trained codebook is bit-identical no matter
//! how many threads rayon uses.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Codebook, PatchMatrix, QuantizedDocument, SimilarityMode};

const CHUNK: usize = 1024;
/// Upper bound on seedings tried by [`KMeansInit::Exhaustive`].
pub const MAX_EXHAUSTIVE_SEEDINGS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KMeansInit {
    #[default]
    KMeansPlusPlus,
    RandomPoints,
    /// Runs Lloyd from every K-subset of the distinct training points and
    /// keeps the best result. Only for tiny inputs.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the relative drop in total distortion falls below this.
    pub rel_tol: f64,
    pub seed: u64,
    pub init: KMeansInit,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iters: 50,
            rel_tol: 1e-4,
            seed,
            init: KMeansInit::KMeansPlusPlus,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=Codebook::MAX_K).contains(&self.k) {
            return Err(Error::InvalidConfig(format!(
                "k must be in 2..={}, got {}",
                Codebook::MAX_K,
                self.k
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::InvalidConfig("rel_tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// A trained codebook together with its training trace.
#[derive(Debug, Clone)]
pub struct KMeansOutcome {
    pub codebook: Codebook,
    /// Mean squared distortion after each accepted assignment step.
    pub distortion_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Training points assigned to each centroid by the final assignment.
    pub cluster_sizes: Vec<usize>,
}

impl KMeansOutcome {
    pub fn final_distortion(&self) -> f64 {
        *self.distortion_history.last().expect("at least one assignment")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    L2,
    NegDot,
}

impl Metric {
    fn for_mode(mode: SimilarityMode) -> Self {
        match mode {
            SimilarityMode::Dot => Metric::NegDot,
            SimilarityMode::Cosine | SimilarityMode::L2 => Metric::L2,
        }
    }

    fn exact(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            Metric::L2 => linalg::l2_sq_f64(a, b),
            Metric::NegDot => -linalg::dot_f64(a, b),
        }
    }
}

/// Nearest centroid for every row of `points`, with the exact (f64)
/// distance under `metric`. Ties go to the smaller centroid index.
///
/// Distances are first screened with a single-precision matrix product;
/// every centroid within a rounding margin of the best is then rescored in
/// double precision, so the answer equals a plain linear scan.
fn nearest_batch(points: &[f32], dim: usize, centroids: &[f32], metric: Metric) -> Vec<(u32, f64)> {
    let k = centroids.len() / dim;
    let c_norms: Vec<f32> = centroids
        .chunks_exact(dim)
        .map(|c| linalg::dot(c, c))
        .collect();
    let c_max = c_norms.iter().cloned().fold(0.0f32, f32::max);
    let margin = 1e-4 * (dim as f32 / 64.0).max(1.0);

    let chunks: Vec<Vec<(u32, f64)>> = points
        .par_chunks(CHUNK * dim)
        .map(|chunk| {
            let rows = chunk.len() / dim;
            let mut dots = vec![0.0f32; rows * k];
            linalg::gemm_abt(chunk, centroids, dim, &mut dots);
            let mut out = Vec::with_capacity(rows);
            for (r, x) in chunk.chunks_exact(dim).enumerate() {
                let row = &dots[r * k..(r + 1) * k];
                let x_norm = linalg::dot(x, x);
                let approx = |j: usize| match metric {
                    Metric::L2 => c_norms[j] - 2.0 * row[j],
                    Metric::NegDot => -row[j],
                };
                let mut best = f32::INFINITY;
                for j in 0..k {
                    best = best.min(approx(j));
                }
                let scale = match metric {
                    Metric::L2 => x_norm + c_max,
                    Metric::NegDot => (x_norm * c_max).sqrt(),
                };
                let cutoff = best + margin * scale + f32::MIN_POSITIVE;
                let mut pick = (u32::MAX, f64::INFINITY);
                for j in 0..k {
                    if approx(j) <= cutoff {
                        let d = metric.exact(x, &centroids[j * dim..(j + 1) * dim]);
                        if d < pick.1 || pick.0 == u32::MAX {
                            pick = (j as u32, d);
                        }
                    }
                }
                out.push(pick);
            }
            out
        })
        .collect();
    chunks.into_iter().flatten().collect()
}

fn check_points(points: &[f32], dim: usize) -> Result<usize> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: points.len() % dim.max(1),
        });
    }
    if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue {
            row: pos / dim,
            column: pos % dim,
        });
    }
    Ok(points.len() / dim)
}

/// Trains a `K`-centroid codebook over row-major `points` (`N x dim`).
pub fn train(
    points: &[f32],
    dim: usize,
    cfg: &KMeansConfig,
    mode: SimilarityMode,
) -> Result<KMeansOutcome> {
    cfg.validate()?;
    let n = check_points(points, dim)?;
    if n < cfg.k {
        return Err(Error::TooFewPoints { points: n, k: cfg.k });
    }
    let run = match cfg.init {
        KMeansInit::KMeansPlusPlus => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            lloyd(points, dim, cfg, kmeanspp_seeds(points, dim, cfg.k, &mut rng))?
        }
        KMeansInit::RandomPoints => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut picks = index::sample(&mut rng, n, cfg.k).into_vec();
            picks.sort_unstable();
            lloyd(points, dim, cfg, gather(points, dim, &picks))?
        }
        KMeansInit::Exhaustive => exhaustive(points, dim, cfg)?,
    };
    debug!(
        k = cfg.k,
        iterations = run.iterations,
        distortion = run.history.last().copied().unwrap_or(0.0),
        "k-means finished"
    );
    Ok(KMeansOutcome {
        codebook: Codebook::new(run.centroids, dim, mode, cfg.seed)?,
        distortion_history: run.history.iter().map(|d| d / n as f64).collect(),
        iterations: run.iterations,
        converged: run.converged,
        cluster_sizes: run.sizes,
    })
}

struct LloydRun {
    centroids: Vec<f32>,
    /// Total (not mean) squared distortion per accepted assignment.
    history: Vec<f64>,
    iterations: usize,
    converged: bool,
    sizes: Vec<usize>,
}

fn gather(points: &[f32], dim: usize, rows: &[usize]) -> Vec<f32> {
    rows.iter()
        .flat_map(|&r| points[r * dim..(r + 1) * dim].iter().copied())
        .collect()
}

fn kmeanspp_seeds(points: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = points.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut min_d: Vec<f64> = points
        .par_chunks(dim)
        .map(|x| linalg::l2_sq_f64(x, &centroids[..dim]))
        .collect();
    for _ in 1..k {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in min_d.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick * dim..(pick + 1) * dim].to_vec();
        min_d
            .par_iter_mut()
            .zip(points.par_chunks(dim))
            .for_each(|(m, x)| *m = m.min(linalg::l2_sq_f64(x, &c)));
        centroids.extend_from_slice(&c);
    }
    centroids
}

fn lloyd(points: &[f32], dim: usize, cfg: &KMeansConfig, mut centroids: Vec<f32>) -> Result<LloydRun> {
    let n = points.len() / dim;
    let k = cfg.k;
    let mut history: Vec<f64> = Vec::new();
    let mut accepted: Option<(Vec<f32>, Vec<usize>)> = None;
    let mut iterations = 0;
    let mut converged = false;
    let mut repairs = 0usize;

    loop {
        let assign = nearest_batch(points, dim, &centroids, Metric::L2);
        let mut sizes = vec![0usize; k];
        for (c, _) in &assign {
            sizes[*c as usize] += 1;
        }
        let empties: Vec<usize> = (0..k).filter(|&c| sizes[c] == 0).collect();
        if !empties.is_empty() {
            repairs += 1;
            if repairs > 10 * k + 100 {
                return Err(Error::DegenerateData("empty-cluster repair did not settle".into()));
            }
            repair_empty(points, dim, &mut centroids, &assign, &mut sizes, &empties)?;
            continue;
        }
        let total: f64 = assign.iter().map(|(_, d)| d).sum();
        if let Some(&prev) = history.last() {
            if total > prev {
                // Only reachable through floating-point rounding in the mean
                // update; keep the last accepted state.
                let (c, s) = accepted.take().expect("accepted state exists");
                return Ok(LloydRun {
                    centroids: c,
                    history,
                    iterations,
                    converged: true,
                    sizes: s,
                });
            }
            if prev - total <= cfg.rel_tol * prev {
                converged = true;
            }
        }
        history.push(total);
        if converged || iterations == cfg.max_iters {
            return Ok(LloydRun {
                centroids,
                history,
                iterations,
                converged,
                sizes,
            });
        }
        accepted = Some((centroids.clone(), sizes.clone()));

        let mut sums = vec![0.0f64; k * dim];
        for (x, (c, _)) in points.chunks_exact(dim).zip(&assign) {
            let row = &mut sums[*c as usize * dim..(*c as usize + 1) * dim];
            for (s, v) in row.iter_mut().zip(x) {
                *s += *v as f64;
            }
        }
        for c in 0..k {
            let inv = 1.0 / sizes[c] as f64;
            for j in 0..dim {
                centroids[c * dim + j] = (sums[c * dim + j] * inv) as f32;
            }
        }
        iterations += 1;
        debug_assert_eq!(assign.len(), n);
    }
}

/// Moves each empty centroid onto the training point farthest from its
/// current centroid, never emptying the donor cluster.
fn repair_empty(
    points: &[f32],
    dim: usize,
    centroids: &mut [f32],
    assign: &[(u32, f64)],
    sizes: &mut [usize],
    empties: &[usize],
) -> Result<()> {
    let mut order: Vec<usize> = (0..assign.len()).filter(|&i| assign[i].1 > 0.0).collect();
    order.sort_by(|&a, &b| assign[b].1.total_cmp(&assign[a].1).then(a.cmp(&b)));
    let mut next = order.into_iter();
    for &e in empties {
        let donor = next
            .by_ref()
            .find(|&i| sizes[assign[i].0 as usize] >= 2)
            .ok_or_else(|| {
                Error::DegenerateData("fewer distinct training points than centroids".into())
            })?;
        sizes[assign[donor].0 as usize] -= 1;
        sizes[e] += 1;
        centroids[e * dim..(e + 1) * dim].copy_from_slice(&points[donor * dim..(donor + 1) * dim]);
    }
    Ok(())
}

fn exhaustive(points: &[f32], dim: usize, cfg: &KMeansConfig) -> Result<LloydRun> {
    let n = points.len() / dim;
    let mut distinct: Vec<usize> = Vec::new();
    for i in 0..n {
        let row = &points[i * dim..(i + 1) * dim];
        if !distinct
            .iter()
            .any(|&j| points[j * dim..(j + 1) * dim] == *row)
        {
            distinct.push(i);
        }
    }
    let k = cfg.k;
    if distinct.len() < k {
        return Err(Error::DegenerateData(
            "fewer distinct training points than centroids".into(),
        ));
    }
    if binomial(distinct.len(), k) > MAX_EXHAUSTIVE_SEEDINGS as u128 {
        return Err(Error::InvalidConfig(format!(
            "exhaustive seeding of {} points into {k} clusters exceeds {MAX_EXHAUSTIVE_SEEDINGS} runs",
            distinct.len()
        )));
    }
    let mut best: Option<LloydRun> = None;
    let mut combo: Vec<usize> = (0..k).collect();
    loop {
        let seeds: Vec<usize> = combo.iter().map(|&c| distinct[c]).collect();
        let run = lloyd(points, dim, cfg, gather(points, dim, &seeds))?;
        let better = match &best {
            None => true,
            Some(b) => run.history.last() < b.history.last(),
        };
        if better {
            best = Some(run);
        }
        if !next_combination(&mut combo, distinct.len()) {
            break;
        }
    }
    Ok(best.expect("at least one seeding"))
}

fn binomial(n: usize, k: usize) -> u128 {
    let mut r: u128 = 1;
    for i in 0..k as u128 {
        r = r * (n as u128 - i) / (i + 1);
    }
    r
}

fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    for i in (0..k).rev() {
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Nearest centroid of `v` under the codebook's mode; ties go to the
/// smaller code.
pub fn assign(cb: &Codebook, v: &[f32]) -> Result<u16> {
    if v.len() != cb.dim() {
        return Err(Error::DimensionMismatch {
            expected: cb.dim(),
            found: v.len(),
        });
    }
    let metric = Metric::for_mode(cb.mode());
    let mut best = (0usize, f64::INFINITY);
    for k in 0..cb.k() {
        let d = metric.exact(v, cb.centroid(k));
        if d < best.1 {
            best = (k, d);
        }
    }
    Ok(best.0 as u16)
}

/// Codes for every row of `points`, identical to calling [`assign`] per row.
pub fn assign_rows(cb: &Codebook, points: &[f32]) -> Result<Vec<u16>> {
    if !points.len().is_multiple_of(cb.dim()) {
        return Err(Error::DimensionMismatch {
            expected: cb.dim(),
            found: points.len() % cb.dim(),
        });
    }
    Ok(
        nearest_batch(points, cb.dim(), cb.centroids(), Metric::for_mode(cb.mode()))
            .into_iter()
            .map(|(c, _)| c as u16)
            .collect(),
    )
}

pub fn assign_batch(cb: &Codebook, pm: &PatchMatrix) -> Result<QuantizedDocument> {
    if pm.dim() != cb.dim() {
        return Err(Error::DimensionMismatch {
            expected: cb.dim(),
            found: pm.dim(),
        });
    }
    Ok(QuantizedDocument::new(pm.doc_id(), assign_rows(cb, pm.data())?))
}

pub fn decode(cb: &Codebook, code: usize) -> Result<&[f32]> {
    if code >= cb.k() {
        return Err(Error::CodeOutOfRange { code, k: cb.k() });
    }
    Ok(cb.centroid(code))
}

/// Mean squared L2 distance from each point to its nearest centroid.
pub fn mean_distortion(cb: &Codebook, points: &[f32]) -> f64 {
    let n = points.len() / cb.dim();
    let total: f64 = nearest_batch(points, cb.dim(), cb.centroids(), Metric::L2)
        .iter()
        .map(|(_, d)| d)
        .sum();
    total / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn cfg(k: usize) -> KMeansConfig {
        KMeansConfig::new(k, 7)
    }

    fn random_points(n: usize, dim: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }

    /// Sum of squared distances to cluster means for the best partition of
    /// `points` into exactly `k` non-empty groups, by enumeration.
    fn optimal_distortion(points: &[f32], dim: usize, k: usize) -> f64 {
        let n = points.len() / dim;
        let mut labels = vec![0usize; n];
        let mut best = f64::INFINITY;
        fn rec(i: usize, used: usize, labels: &mut [usize], k: usize, f: &mut dyn FnMut(&[usize])) {
            if i == labels.len() {
                if used == k {
                    f(labels);
                }
                return;
            }
            let remaining = labels.len() - i;
            if used + remaining < k {
                return;
            }
            for l in 0..(used + 1).min(k) {
                labels[i] = l;
                rec(i + 1, used.max(l + 1), labels, k, f);
            }
        }
        rec(0, 0, &mut labels, k, &mut |lab: &[usize]| {
            let mut sse = 0.0;
            for c in 0..k {
                let members: Vec<usize> = (0..n).filter(|&i| lab[i] == c).collect();
                for j in 0..dim {
                    let mean: f64 = members.iter().map(|&i| points[i * dim + j] as f64).sum::<f64>()
                        / members.len() as f64;
                    sse += members
                        .iter()
                        .map(|&i| (points[i * dim + j] as f64 - mean).powi(2))
                        .sum::<f64>();
                }
            }
            best = best.min(sse);
        });
        best
    }

    #[test]
    fn one_dimensional_two_clusters() {
        let pts = [0.0f32, 1.0, 10.0, 11.0];
        let mut c = cfg(2);
        c.init = KMeansInit::Exhaustive;
        let out = train(&pts, 1, &c, SimilarityMode::L2).unwrap();
        let mut cents = out.codebook.centroids().to_vec();
        cents.sort_by(f32::total_cmp);
        assert_eq!(cents, vec![0.5, 10.5]);
        assert!((out.final_distortion() - 0.25).abs() < 1e-12);
        assert!((optimal_distortion(&pts, 1, 2) / 4.0 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn n_equals_k_recovers_points() {
        let pts = [1.0f32, 2.0, -3.0, 0.5, 4.0, 4.0];
        let out = train(&pts, 2, &cfg(3), SimilarityMode::L2).unwrap();
        let mut got: Vec<Vec<f32>> = out.codebook.centroids().chunks(2).map(|c| c.to_vec()).collect();
        got.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(got, vec![vec![-3.0, 0.5], vec![1.0, 2.0], vec![4.0, 4.0]]);
        assert_eq!(out.final_distortion(), 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let pts = random_points(3000, 8, 1);
        let a = train(&pts, 8, &cfg(16), SimilarityMode::L2).unwrap();
        let b = train(&pts, 8, &cfg(16), SimilarityMode::L2).unwrap();
        let bits = |c: &Codebook| c.centroids().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.codebook), bits(&b.codebook));
        assert_eq!(a.distortion_history, b.distortion_history);
    }

    #[test]
    fn determinism_holds_across_thread_counts() {
        let pts = random_points(5000, 8, 2);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train(&pts, 8, &cfg(24), SimilarityMode::L2).unwrap())
        };
        assert_eq!(run(1).codebook, run(3).codebook);
    }

    #[test]
    fn distortion_is_monotone_and_clusters_non_empty() {
        let pts = random_points(4000, 6, 3);
        for init in [KMeansInit::KMeansPlusPlus, KMeansInit::RandomPoints] {
            let mut c = cfg(40);
            c.init = init;
            let out = train(&pts, 6, &c, SimilarityMode::L2).unwrap();
            for w in out.distortion_history.windows(2) {
                assert!(w[1] <= w[0], "{:?}", out.distortion_history);
            }
            assert!(out.cluster_sizes.iter().all(|&s| s >= 1));
            assert_eq!(out.cluster_sizes.iter().sum::<usize>(), 4000);
        }
    }

    #[test]
    fn duplicate_heavy_data_gets_repaired() {
        // 3 distinct values, many copies, K = 3: repair must find them all.
        let mut pts = vec![0.0f32; 200];
        pts.extend(vec![5.0f32; 5]);
        pts.push(-7.0);
        let mut c = cfg(3);
        c.init = KMeansInit::RandomPoints;
        let out = train(&pts, 1, &c, SimilarityMode::L2).unwrap();
        let mut cents = out.codebook.centroids().to_vec();
        cents.sort_by(f32::total_cmp);
        assert_eq!(cents, vec![-7.0, 0.0, 5.0]);
    }

    #[test]
    fn identical_points_are_degenerate() {
        let pts = vec![1.0f32; 20];
        assert!(matches!(
            train(&pts, 2, &cfg(2), SimilarityMode::L2),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            train(&[1.0, 2.0], 1, &cfg(3), SimilarityMode::L2),
            Err(Error::TooFewPoints { points: 2, k: 3 })
        ));
        assert!(matches!(
            train(&[1.0, 2.0], 1, &cfg(1), SimilarityMode::L2),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn assign_exact_and_tie_break() {
        let cb = Codebook::new(
            vec![5.0, 5.0, 1.0, 0.0, -1.0, 0.0, 0.3, 0.7],
            2,
            SimilarityMode::L2,
            0,
        )
        .unwrap();
        assert_eq!(assign(&cb, &[0.3, 0.7]).unwrap(), 3);
        assert_eq!(assign(&cb, &[0.0, -1.0]).unwrap(), 1);
        assert!(matches!(
            assign(&cb, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn decode_bounds() {
        let cb = Codebook::new(vec![0.0, 1.0, 2.0, 3.0], 2, SimilarityMode::L2, 0).unwrap();
        assert_eq!(decode(&cb, 1).unwrap(), &[2.0, 3.0]);
        assert!(matches!(decode(&cb, 2), Err(Error::CodeOutOfRange { code: 2, k: 2 })));
    }

    #[test]
    fn batch_assignment_preserves_length() {
        let pts = random_points(500, 4, 9);
        let out = train(&pts, 4, &cfg(8), SimilarityMode::L2).unwrap();
        let pm = PatchMatrix::new(3, 4, pts[..200].to_vec(), vec![1.0; 50]).unwrap();
        let q = assign_batch(&out.codebook, &pm).unwrap();
        assert_eq!(q.codes.len(), 50);
        assert!(q.packed_binary.is_none());
        assert!(q.codes.iter().all(|&c| (c as usize) < 8));
    }

    #[test]
    fn larger_k_lowers_distortion() {
        let pts = random_points(6000, 4, 11);
        let d: Vec<f64> = [8, 16, 32]
            .iter()
            .map(|&k| train(&pts, 4, &cfg(k), SimilarityMode::L2).unwrap().final_distortion())
            .collect();
        assert!(d[2] <= d[1] && d[1] <= d[0], "{d:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn batch_assign_matches_linear_scan(seed in any::<u64>(), dot in any::<bool>()) {
            let dim = 12;
            let mode = if dot { SimilarityMode::Dot } else { SimilarityMode::L2 };
            let cents = random_points(37, dim, seed);
            let cb = Codebook::new(cents, dim, mode, 0).unwrap();
            let pts = random_points(300, dim, seed ^ 0xabc);
            let batch = assign_rows(&cb, &pts).unwrap();
            for (i, row) in pts.chunks(dim).enumerate() {
                // independent oracle: linear scan, strict improvement keeps lowest index
                let mut best = (0usize, f64::INFINITY);
                for k in 0..cb.k() {
                    let c = cb.centroid(k);
                    let d: f64 = if dot {
                        -row.iter().zip(c).map(|(a, b)| *a as f64 * *b as f64).sum::<f64>()
                    } else {
                        row.iter().zip(c).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum()
                    };
                    if d < best.1 { best = (k, d); }
                }
                prop_assert_eq!(batch[i] as usize, best.0);
                prop_assert_eq!(assign(&cb, row).unwrap() as usize, best.0);
            }
        }

        #[test]
        fn decode_then_assign_is_identity(seed in any::<u64>()) {
            let pts = random_points(400, 3, seed);
            let out = train(&pts, 3, &cfg(12), SimilarityMode::L2).unwrap();
            for q in 0..12 {
                let c = decode(&out.codebook, q).unwrap().to_vec();
                prop_assert_eq!(assign(&out.codebook, &c).unwrap() as usize, q);
            }
        }

        #[test]
        fn small_instances_reach_global_optimum(
            n in 3usize..=12,
            k in 2usize..=3,
            dim in 1usize..=2,
            seed in any::<u64>(),
        ) {
            let pts: Vec<f32> = random_points(n, dim, seed)
                .into_iter()
                .map(|v| (v * 4.0).round() / 4.0)
                .collect();
            let mut c = cfg(k);
            c.init = KMeansInit::Exhaustive;
            c.max_iters = 200;
            c.rel_tol = 0.0;
            match train(&pts, dim, &c, SimilarityMode::L2) {
                Ok(out) => {
                    let opt = optimal_distortion(&pts, dim, k) / n as f64;
                    prop_assert!((out.final_distortion() - opt).abs() <= 1e-9,
                        "trained {} optimal {}", out.final_distortion(), opt);
                }
                Err(Error::DegenerateData(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }
}

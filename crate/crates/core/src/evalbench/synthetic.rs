use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PatchMatrix, SimilarityMode};
use crate::storage::{self, Qrels};

/// Parameters of the synthetic corpus.
///
/// Each topic owns a set of motifs (unit vectors around the topic center).
/// A document has a dominant topic and optionally a secondary one; its
/// patches are noisy copies of motifs plus some uninformative background
/// patches. Topic patches get a salience boost in the attention logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_docs: usize,
    pub patches_per_doc: usize,
    pub dim: usize,
    pub num_topics: usize,
    pub motifs_per_topic: usize,
    /// Per-coordinate spread of motifs around their topic center.
    pub motif_spread: f64,
    /// Per-coordinate Gaussian noise added to each patch.
    pub cluster_stddev: f64,
    /// Softmax temperature of the attention weights.
    pub attention_temperature: f64,
    /// Logit bonus for topic patches over background patches.
    pub salience_boost: f64,
    pub secondary_topic_prob: f64,
    /// Share of a document's patches drawn from its secondary topic.
    pub secondary_share: f64,
    /// Motifs a secondary topic draws from (a document touches only some
    /// facets of a topic it mentions in passing); 0 means all of them.
    pub secondary_motifs: usize,
    /// Share of patches that carry no topic (margins, blank regions).
    pub background_share: f64,
    /// Shared prototypes background patches are drawn around; 0 draws
    /// them uniformly from the sphere.
    pub background_prototypes: usize,
    pub num_queries: usize,
    pub query_patches: usize,
    pub query_secondary_prob: f64,
    /// Give relevance 2 to documents whose dominant topic matches the
    /// query's; otherwise every topic-sharing document gets 1.
    pub graded: bool,
    pub mode: SimilarityMode,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::pinned()
    }
}

impl SyntheticSpec {
    /// The reference corpus: 10,000 documents of 50 patches, D = 64,
    /// 64 topics, 200 queries.
    pub fn pinned() -> Self {
        Self {
            num_docs: 10_000,
            patches_per_doc: 50,
            dim: 64,
            num_topics: 64,
            motifs_per_topic: 8,
            motif_spread: 0.15,
            cluster_stddev: 0.1,
            attention_temperature: 1.0,
            salience_boost: 2.0,
            secondary_topic_prob: 0.5,
            secondary_share: 0.25,
            secondary_motifs: 1,
            background_share: 0.2,
            background_prototypes: 4,
            num_queries: 200,
            query_patches: 50,
            query_secondary_prob: 0.5,
            graded: true,
            mode: SimilarityMode::Cosine,
            seed: 0x00C0_FFEE,
        }
    }

    /// A scaled-down corpus for quick runs.
    pub fn small(num_docs: usize, num_queries: usize, seed: u64) -> Self {
        Self {
            num_docs,
            num_queries,
            patches_per_doc: 20,
            query_patches: 16,
            dim: 16,
            num_topics: 8,
            motifs_per_topic: 4,
            seed,
            ..Self::pinned()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_docs", self.num_docs),
            ("patches_per_doc", self.patches_per_doc),
            ("dim", self.dim),
            ("num_topics", self.num_topics),
            ("motifs_per_topic", self.motifs_per_topic),
            ("num_queries", self.num_queries),
            ("query_patches", self.query_patches),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
        }
        if !(self.cluster_stddev > 0.0 && self.cluster_stddev.is_finite()) {
            return Err(Error::InvalidConfig("cluster_stddev must be positive".into()));
        }
        if !(self.attention_temperature > 0.0 && self.attention_temperature.is_finite()) {
            return Err(Error::InvalidConfig("attention_temperature must be positive".into()));
        }
        if !(self.motif_spread >= 0.0 && self.motif_spread.is_finite()) {
            return Err(Error::InvalidConfig("motif_spread must be finite and >= 0".into()));
        }
        if !self.salience_boost.is_finite() {
            return Err(Error::InvalidConfig("salience_boost must be finite".into()));
        }
        for (name, v) in [
            ("secondary_topic_prob", self.secondary_topic_prob),
            ("secondary_share", self.secondary_share),
            ("background_share", self.background_share),
            ("query_secondary_prob", self.query_secondary_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1]")));
            }
        }
        if self.secondary_share + self.background_share > 1.0 {
            return Err(Error::InvalidConfig(
                "secondary_share + background_share must not exceed 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub docs: Vec<PatchMatrix>,
    pub queries: Vec<PatchMatrix>,
    pub qrels: Qrels,
    /// (dominant, secondary) topic per document.
    pub doc_topics: Vec<(usize, Option<usize>)>,
    pub query_topics: Vec<(usize, Option<usize>)>,
}

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    rng: ChaCha8Rng,
    motifs: Vec<Vec<f32>>,
    background: Vec<Vec<f32>>,
}

fn normalize(v: &mut [f32]) {
    let n = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
    }
}

impl Generator<'_> {
    fn gaussian(&mut self, dim: usize) -> Vec<f32> {
        (0..dim).map(|_| StandardNormal.sample(&mut self.rng)).collect()
    }

    fn topics(&mut self, secondary_prob: f64, dominant: Option<usize>) -> (usize, Option<usize>) {
        let t = self.spec.num_topics;
        let dom = dominant.unwrap_or_else(|| self.rng.random_range(0..t));
        let sec = (t > 1 && self.rng.random_bool(secondary_prob)).then(|| {
            let s = self.rng.random_range(0..t - 1);
            if s >= dom {
                s + 1
            } else {
                s
            }
        });
        (dom, sec)
    }

    fn matrix(&mut self, id: u64, m: usize, topics: (usize, Option<usize>)) -> Result<PatchMatrix> {
        let spec = self.spec;
        let dim = spec.dim;
        let n_bg = (m as f64 * spec.background_share).round() as usize;
        let n_sec = match topics.1 {
            Some(_) => ((m as f64 * spec.secondary_share).round() as usize).min(m - n_bg),
            None => 0,
        };
        // 0 = dominant, 1 = secondary, 2 = background
        let mut kinds: Vec<u8> = std::iter::repeat_n(2u8, n_bg)
            .chain(std::iter::repeat_n(1u8, n_sec))
            .chain(std::iter::repeat_n(0u8, m - n_bg - n_sec))
            .collect();
        kinds.shuffle(&mut self.rng);
        let per_topic = spec.motifs_per_topic;
        let facets = match spec.secondary_motifs {
            0 => per_topic,
            n => n.min(per_topic),
        };
        let mut secondary_pool: Vec<usize> = (0..per_topic).collect();
        secondary_pool.shuffle(&mut self.rng);
        secondary_pool.truncate(facets);

        let mut data = Vec::with_capacity(m * dim);
        let mut logits = Vec::with_capacity(m);
        for &kind in &kinds {
            let mut row = if kind == 2 && self.background.is_empty() {
                self.gaussian(dim)
            } else if kind == 2 {
                let b = self.rng.random_range(0..self.background.len());
                let noise = self.gaussian(dim);
                self.background[b]
                    .iter()
                    .zip(noise)
                    .map(|(&c, n)| c + (spec.cluster_stddev as f32) * n)
                    .collect()
            } else {
                let motif = if kind == 0 {
                    topics.0 * per_topic + self.rng.random_range(0..per_topic)
                } else {
                    let facet = secondary_pool[self.rng.random_range(0..facets)];
                    topics.1.unwrap() * per_topic + facet
                };
                let noise = self.gaussian(dim);
                self.motifs[motif]
                    .iter()
                    .zip(noise)
                    .map(|(&c, n)| c + (spec.cluster_stddev as f32) * n)
                    .collect()
            };
            if spec.mode == SimilarityMode::Cosine || kind == 2 {
                normalize(&mut row);
            }
            data.extend(row);
            let base: f64 = StandardNormal.sample(&mut self.rng);
            logits.push(base + if kind == 2 { 0.0 } else { spec.salience_boost });
        }
        let tau = spec.attention_temperature;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| ((l - max) / tau).exp()).collect();
        let z: f64 = exps.iter().sum();
        let attention = exps.iter().map(|e| (e / z) as f32).collect();
        PatchMatrix::new(id, dim, data, attention)
    }
}

/// Generates documents (ids `0..num_docs`), queries (ids `0..num_queries`)
/// and graded relevance judgments. Deterministic in `spec.seed`.
///
/// Every query's dominant topic is taken from a randomly chosen document,
/// so each query has at least one relevant document.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut g = Generator {
        spec,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        motifs: Vec::new(),
        background: Vec::new(),
    };
    let dim = spec.dim;
    let spread = spec.motif_spread as f32;
    for _ in 0..spec.num_topics {
        let mut center = g.gaussian(dim);
        normalize(&mut center);
        for _ in 0..spec.motifs_per_topic {
            let mut motif: Vec<f32> = center
                .iter()
                .zip(g.gaussian(dim))
                .map(|(&c, n)| c + spread * n)
                .collect();
            normalize(&mut motif);
            g.motifs.push(motif);
        }
    }

    for _ in 0..spec.background_prototypes {
        let mut b = g.gaussian(dim);
        normalize(&mut b);
        g.background.push(b);
    }

    let mut docs = Vec::with_capacity(spec.num_docs);
    let mut doc_topics = Vec::with_capacity(spec.num_docs);
    for d in 0..spec.num_docs {
        let topics = g.topics(spec.secondary_topic_prob, None);
        docs.push(g.matrix(d as u64, spec.patches_per_doc, topics)?);
        doc_topics.push(topics);
    }
    let mut queries = Vec::with_capacity(spec.num_queries);
    let mut query_topics = Vec::with_capacity(spec.num_queries);
    for q in 0..spec.num_queries {
        let seed_doc = g.rng.random_range(0..spec.num_docs);
        let topics = g.topics(spec.query_secondary_prob, Some(doc_topics[seed_doc].0));
        queries.push(g.matrix(q as u64, spec.query_patches, topics)?);
        query_topics.push(topics);
    }

    let mut qrels = Qrels::new();
    for (q, &(qd, qs)) in query_topics.iter().enumerate() {
        let judged = qrels.entry(q.to_string()).or_default();
        for (d, &(dd, ds)) in doc_topics.iter().enumerate() {
            let shares = |t: usize| t == dd || ds == Some(t);
            if spec.graded && dd == qd {
                judged.insert(d as u64, 2);
            } else if shares(qd) || qs.is_some_and(shares) {
                judged.insert(d as u64, 1);
            }
        }
    }
    Ok(SyntheticData {
        docs,
        queries,
        qrels,
        doc_topics,
        query_topics,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticPaths {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
}

pub const CORPUS_FILE: &str = "corpus.hpce";
pub const QUERIES_FILE: &str = "queries.hpce";
pub const QRELS_FILE: &str = "qrels.txt";

/// Writes `corpus.hpce`, `queries.hpce` and `qrels.txt` into `dir`.
pub fn write_synthetic(data: &SyntheticData, spec: &SyntheticSpec, dir: impl AsRef<Path>) -> Result<SyntheticPaths> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let paths = SyntheticPaths {
        corpus: dir.join(CORPUS_FILE),
        queries: dir.join(QUERIES_FILE),
        qrels: dir.join(QRELS_FILE),
    };
    storage::write_embeddings(&paths.corpus, &data.docs, spec.dim, spec.mode)?;
    storage::write_embeddings(&paths.queries, &data.queries, spec.dim, spec.mode)?;
    storage::write_qrels(&paths.qrels, &data.qrels)?;
    Ok(paths)
}

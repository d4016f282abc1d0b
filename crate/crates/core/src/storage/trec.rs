use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::RankedResult;

/// query id -> (doc id -> graded relevance)
pub type Qrels = BTreeMap<String, BTreeMap<u64, u32>>;
/// query id -> doc ids in rank order
pub type Run = BTreeMap<String, Vec<u64>>;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} {tok:?}")))
}

/// Reads `query_id 0 doc_id relevance` lines.
pub fn read_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let mut out = Qrels::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let n = i + 1;
        let mut toks = line.split_whitespace();
        let Some(qid) = toks.next() else { continue };
        let _iter: String = field(toks.next(), n, "iteration field")?;
        let doc: u64 = field(toks.next(), n, "doc id")?;
        let rel: u32 = field(toks.next(), n, "relevance")?;
        if toks.next().is_some() {
            return Err(parse_err(n, "expected 4 fields"));
        }
        if out.entry(qid.to_string()).or_default().insert(doc, rel).is_some() {
            return Err(parse_err(n, format!("duplicate judgment for query {qid} doc {doc}")));
        }
    }
    Ok(out)
}

pub fn write_qrels(path: impl AsRef<Path>, qrels: &Qrels) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (qid, docs) in qrels {
        for (doc, rel) in docs {
            writeln!(w, "{qid} 0 {doc} {rel}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `query_id Q0 doc_id rank score tag` lines. Ranks must run
/// 1, 2, 3, ... within each query.
pub fn read_run(path: impl AsRef<Path>) -> Result<Run> {
    let mut out = Run::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let n = i + 1;
        let mut toks = line.split_whitespace();
        let Some(qid) = toks.next() else { continue };
        let _q0: String = field(toks.next(), n, "Q0 field")?;
        let doc: u64 = field(toks.next(), n, "doc id")?;
        let rank: usize = field(toks.next(), n, "rank")?;
        let _score: f64 = field(toks.next(), n, "score")?;
        let _tag: String = field(toks.next(), n, "run tag")?;
        if toks.next().is_some() {
            return Err(parse_err(n, "expected 6 fields"));
        }
        let ranked = out.entry(qid.to_string()).or_default();
        if rank != ranked.len() + 1 {
            return Err(parse_err(
                n,
                format!("query {qid}: rank {rank} follows rank {}", ranked.len()),
            ));
        }
        if ranked.contains(&doc) {
            return Err(parse_err(n, format!("query {qid}: doc {doc} ranked twice")));
        }
        ranked.push(doc);
    }
    Ok(out)
}

/// Writes one block per query, in the order given.
pub fn write_run<'a, I>(path: impl AsRef<Path>, results: I, tag: &str) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a RankedResult)>,
{
    let mut w = BufWriter::new(File::create(path)?);
    for (qid, res) in results {
        for (rank, e) in res.entries.iter().enumerate() {
            writeln!(w, "{qid} Q0 {} {} {:.6} {tag}", e.doc_id, rank + 1, e.score)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScoredDoc;

    #[test]
    fn run_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.txt");
        let r = RankedResult::from_scores(
            vec![
                ScoredDoc { doc_id: 4, score: 0.5 },
                ScoredDoc { doc_id: 2, score: 1.5 },
            ],
            10,
        );
        write_run(&path, [("q1", &r), ("q2", &RankedResult::default())], "t").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "q1 Q0 2 1 1.500000 t\nq1 Q0 4 2 0.500000 t\n");
        let run = read_run(&path).unwrap();
        assert_eq!(run["q1"], vec![2, 4]);
    }

    #[test]
    fn rank_gaps_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.txt");
        std::fs::write(&path, "q Q0 1 1 0.1 t\nq Q0 2 3 0.0 t\n").unwrap();
        assert!(matches!(read_run(&path), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn qrels_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qrels.txt");
        let mut q = Qrels::new();
        q.entry("a".into()).or_default().insert(3, 2);
        q.entry("a".into()).or_default().insert(1, 0);
        q.entry("b".into()).or_default().insert(9, 1);
        write_qrels(&path, &q).unwrap();
        assert_eq!(read_qrels(&path).unwrap(), q);
        std::fs::write(&path, "a 0 x 1\n").unwrap();
        assert!(matches!(read_qrels(&path), Err(Error::Parse { line: 1, .. })));
    }
}

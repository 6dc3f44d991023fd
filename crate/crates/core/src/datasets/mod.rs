//! Retriever training data: the JSONL example format and the synthetic
//! generators used to exercise the full pipeline at small scale.

mod planted;

pub use planted::{
    generate_lexical_mismatch, generate_planted, GeneratedDataset, HiddenScorer,
    LexicalMismatchSizes, PlantedModelSpec,
};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::retrieval::Corpus;

/// Hard-negative pool size of the reference retriever data.
pub const DEFAULT_POOL_SIZE: usize = 29;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RetrieverExample {
    pub qid: u64,
    pub question: String,
    pub positives: Vec<u64>,
    pub negatives: Vec<u64>,
}

impl RetrieverExample {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.positives.is_empty() {
            return Err("no positive passages".into());
        }
        if let Some(p) = self.positives.iter().find(|p| self.negatives.contains(p)) {
            return Err(format!("positive {p} also listed as a negative"));
        }
        Ok(())
    }

    pub fn pool_size(&self) -> usize {
        self.negatives.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadMode {
    /// First malformed line aborts the load.
    Strict,
    /// Malformed lines are reported and skipped.
    Lax,
}

#[derive(Debug, Default)]
pub struct LoadReport {
    pub examples: Vec<RetrieverExample>,
    pub skipped: Vec<Error>,
}

fn id_from(v: &Value) -> Option<u64> {
    match v {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Ids from either a plain id array or an array of context objects carrying
/// `passage_id`, `pid` or `id`.
fn ids_from(v: &Value) -> Option<Vec<u64>> {
    v.as_array()?
        .iter()
        .map(|item| match item {
            Value::Object(obj) => ["passage_id", "pid", "id"]
                .iter()
                .find_map(|k| obj.get(*k))
                .and_then(id_from),
            other => id_from(other),
        })
        .collect()
}

fn parse_example(path: &Path, line_no: usize, line: &str) -> Result<RetrieverExample> {
    let parse_err = |reason: String| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        reason,
    };
    let missing = |field: &str| Error::MissingField {
        path: path.to_path_buf(),
        line: line_no,
        field: field.to_string(),
    };
    let value: Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse_err("expected a JSON object".into()))?;
    let field = |names: &[&str]| names.iter().find_map(|n| obj.get(*n));

    let qid = match field(&["qid", "id"]) {
        Some(v) => id_from(v).ok_or_else(|| parse_err("qid must be an unsigned integer".into()))?,
        None => return Err(missing("qid")),
    };
    let question = field(&["question"])
        .ok_or_else(|| missing("question"))?
        .as_str()
        .ok_or_else(|| parse_err("question must be a string".into()))?
        .to_string();
    let positives =
        ids_from(field(&["positives", "positive_ctxs"]).ok_or_else(|| missing("positives"))?)
            .ok_or_else(|| parse_err("positives must be a list of passage ids".into()))?;
    let negatives =
        ids_from(field(&["negatives", "hard_negative_ctxs"]).ok_or_else(|| missing("negatives"))?)
            .ok_or_else(|| parse_err("negatives must be a list of passage ids".into()))?;

    let ex = RetrieverExample {
        qid,
        question,
        positives,
        negatives,
    };
    ex.validate().map_err(|reason| Error::InvalidExample {
        path: path.to_path_buf(),
        line: line_no,
        reason,
    })?;
    Ok(ex)
}

/// Loads retriever examples, one JSON object per line.
///
/// Accepts `{"qid", "question", "positives", "negatives"}` with id arrays, and
/// the context-object layout (`positive_ctxs` / `hard_negative_ctxs` entries
/// with a `passage_id`). When `corpus` is given every id must resolve in it.
pub fn load_retriever_jsonl(
    path: &Path,
    mode: LoadMode,
    corpus: Option<&Corpus>,
) -> Result<LoadReport> {
    let reader = BufReader::new(File::open(path)?);
    let mut report = LoadReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_example(path, idx + 1, &line).and_then(|ex| {
            if let Some(c) = corpus {
                if let Some(&pid) = ex
                    .positives
                    .iter()
                    .chain(&ex.negatives)
                    .find(|&&p| !c.contains(p))
                {
                    return Err(Error::DanglingId { qid: ex.qid, pid });
                }
            }
            Ok(ex)
        });
        match (parsed, mode) {
            (Ok(ex), _) => report.examples.push(ex),
            (Err(e), LoadMode::Strict) => return Err(e),
            (Err(e), LoadMode::Lax) => report.skipped.push(e),
        }
    }
    Ok(report)
}

pub fn write_retriever_jsonl(path: &Path, examples: &[RetrieverExample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> std::path::PathBuf {
        let p = dir.join("train.jsonl");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_well_formed_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "{\"qid\":1,\"question\":\"a\",\"positives\":[1],\"negatives\":[2,3]}\n\
             {\"qid\":2,\"question\":\"b\",\"positives\":[2],\"negatives\":[1]}\n\
             {\"qid\":3,\"question\":\"c\",\"positives\":[3],\"negatives\":[]}\n",
        );
        let r = load_retriever_jsonl(&p, LoadMode::Strict, None).unwrap();
        assert_eq!(r.examples.len(), 3);
        assert_eq!(r.examples[0].negatives, vec![2, 3]);
    }

    #[test]
    fn missing_negatives_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "{\"qid\":1,\"question\":\"a\",\"positives\":[1],\"negatives\":[2]}\n\
             {\"qid\":2,\"question\":\"b\",\"positives\":[2]}\n",
        );
        match load_retriever_jsonl(&p, LoadMode::Strict, None) {
            Err(Error::MissingField { line, field, .. }) => {
                assert_eq!((line, field.as_str()), (2, "negatives"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let lax = load_retriever_jsonl(&p, LoadMode::Lax, None).unwrap();
        assert_eq!(lax.examples.len(), 1);
        assert_eq!(lax.skipped.len(), 1);
        assert!(lax.skipped[0].to_string().contains(":2:"));
    }

    #[test]
    fn positive_inside_negatives_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "{\"qid\":1,\"question\":\"a\",\"positives\":[4],\"negatives\":[2,4]}\n",
        );
        assert!(matches!(
            load_retriever_jsonl(&p, LoadMode::Strict, None),
            Err(Error::InvalidExample { line: 1, .. })
        ));
    }

    #[test]
    fn context_object_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "{\"id\":\"9\",\"question\":\"س\",\"answers\":[\"x\"],\
              \"positive_ctxs\":[{\"title\":\"t\",\"text\":\"x\",\"passage_id\":\"11\"}],\
              \"hard_negative_ctxs\":[{\"passage_id\":12},{\"passage_id\":\"13\"}]}\n",
        );
        let r = load_retriever_jsonl(&p, LoadMode::Strict, None).unwrap();
        assert_eq!(
            r.examples[0],
            RetrieverExample {
                qid: 9,
                question: "س".into(),
                positives: vec![11],
                negatives: vec![12, 13],
            }
        );
    }

    #[test]
    fn dangling_ids_checked_against_corpus() {
        use crate::retrieval::Passage;
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "{\"qid\":1,\"question\":\"a\",\"positives\":[1],\"negatives\":[5]}\n",
        );
        let corpus: Corpus = [(
            1,
            Passage {
                title: String::new(),
                text: "x".into(),
            },
        )]
        .into_iter()
        .collect();
        assert!(matches!(
            load_retriever_jsonl(&p, LoadMode::Strict, Some(&corpus)),
            Err(Error::DanglingId { qid: 1, pid: 5 })
        ));
    }

    #[test]
    fn write_load_write_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let examples = vec![
            RetrieverExample {
                qid: 3,
                question: "ما هي العاصمة؟".into(),
                positives: vec![1],
                negatives: vec![2, 9],
            },
            RetrieverExample {
                qid: 4,
                question: "q \"quoted\"".into(),
                positives: vec![7, 8],
                negatives: vec![],
            },
        ];
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        write_retriever_jsonl(&a, &examples).unwrap();
        let loaded = load_retriever_jsonl(&a, LoadMode::Strict, None)
            .unwrap()
            .examples;
        assert_eq!(loaded, examples);
        write_retriever_jsonl(&b, &loaded).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub title: String,
    pub text: String,
}

impl Passage {
    /// Text fed to the passage tower and the lexical index: title then body.
    pub fn full_text(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.title, self.text)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PassageRecord {
    pid: u64,
    title: String,
    text: String,
}

/// Passage store keyed by id; iteration is in ascending id order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    passages: BTreeMap<u64, Passage>,
}

impl Corpus {
    pub fn new() -> Self {
        Corpus::default()
    }

    pub fn insert(&mut self, pid: u64, passage: Passage) -> Result<()> {
        if self.passages.contains_key(&pid) {
            return Err(Error::DuplicateId(pid));
        }
        self.passages.insert(pid, passage);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn get(&self, pid: u64) -> Option<&Passage> {
        self.passages.get(&pid)
    }

    pub fn contains(&self, pid: u64) -> bool {
        self.passages.contains_key(&pid)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &Passage)> {
        self.passages.iter().map(|(&k, v)| (k, v))
    }

    pub fn ids(&self) -> Vec<u64> {
        self.passages.keys().copied().collect()
    }

    /// Reads `{"pid", "title", "text"}` lines. Blank lines are skipped.
    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut corpus = Corpus::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PassageRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: e.to_string(),
            })?;
            corpus.insert(
                rec.pid,
                Passage {
                    title: rec.title,
                    text: rec.text,
                },
            )?;
        }
        if corpus.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(corpus)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (pid, p) in self.iter() {
            let rec = PassageRecord {
                pid,
                title: p.title.clone(),
                text: p.text.clone(),
            };
            serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

impl FromIterator<(u64, Passage)> for Corpus {
    fn from_iter<I: IntoIterator<Item = (u64, Passage)>>(iter: I) -> Self {
        Corpus {
            passages: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let mut c = Corpus::new();
        c.insert(7, Passage { title: "t".into(), text: "نص عربي".into() }).unwrap();
        c.insert(2, Passage { title: String::new(), text: "b".into() }).unwrap();
        c.write_jsonl(&path).unwrap();
        let back = Corpus::load_jsonl(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.ids(), vec![2, 7]);
        assert_eq!(back.get(7).unwrap().full_text(), "t نص عربي");
    }

    #[test]
    fn duplicate_and_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "{\"pid\":1,\"title\":\"\",\"text\":\"a\"}\n{\"pid\":1,\"title\":\"\",\"text\":\"b\"}\n").unwrap();
        assert!(matches!(Corpus::load_jsonl(&path), Err(Error::DuplicateId(1))));
        std::fs::write(&path, "{\"pid\":1,\"title\":\"\",\"text\":\"a\"}\n{\"pid\":\"x\"}\n").unwrap();
        assert!(matches!(Corpus::load_jsonl(&path), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&path, "\n").unwrap();
        assert!(matches!(Corpus::load_jsonl(&path), Err(Error::EmptyDataset)));
    }
}

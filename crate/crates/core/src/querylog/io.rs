//! On-disk formats for the preprocessed corpus.
//!
//! Three files describe a corpus:
//!
//! * `corpus.tsv` — one line per retained query occurrence,
//!   `user_id<TAB>session_id<TAB>token_id<TAB>unix_ts`, covering all splits.
//! * `vocab.tsv` — `token_id<TAB>count<TAB>query_text`, one line per token
//!   in id order.
//! * `stats.json` — the preprocessing options, the two cutoff instants and
//!   per-split statistics.
//!
//! Split membership is a function of the recorded cutoffs: a session whose
//! first timestamp lies at or after the test cutoff is test, at or after the
//! validation cutoff is validation, otherwise training.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::pipeline::CorpusStats;
use super::vocab::Vocabulary;
use super::{PreprocessOptions, Session, UserHistory};

/// Contents of `stats.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsFile {
    pub options: PreprocessOptions,
    pub test_cutoff_unix: i64,
    pub valid_cutoff_unix: i64,
    pub stats: CorpusStats,
}

/// A corpus read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub train: Vec<UserHistory>,
    pub valid: Vec<UserHistory>,
    pub test: Vec<UserHistory>,
    pub vocab: Vocabulary,
    pub stats: StatsFile,
}

/// Writes every split into one line-oriented corpus file, users in
/// lexicographic order, sessions and queries chronologically.
pub fn write_corpus(path: &Path, splits: &[&[UserHistory]]) -> Result<()> {
    let mut sessions: BTreeMap<(String, u32), &Session> = BTreeMap::new();
    for split in splits {
        for h in *split {
            for s in &h.sessions {
                sessions.insert((h.user_id.clone(), s.index), s);
            }
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    for ((user, index), session) in sessions {
        for (&token, &ts) in session.tokens.iter().zip(&session.timestamps) {
            writeln!(w, "{user}\t{index}\t{token}\t{ts}")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for id in 0..vocab.len() as u32 {
        writeln!(w, "{id}\t{}\t{}", vocab.count(id), vocab.token(id).unwrap())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_stats(path: &Path, stats: &StatsFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, stats)
        .map_err(|e| Error::CorpusFile(format!("stats serialization: {e}")))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let reader = BufReader::new(File::open(path)?);
    let mut tokens = Vec::new();
    let mut counts = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let id: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::CorpusFile(format!("vocab line {}: bad id", lineno + 1)))?;
        let count: u64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::CorpusFile(format!("vocab line {}: bad count", lineno + 1)))?;
        let text = fields
            .next()
            .ok_or_else(|| Error::CorpusFile(format!("vocab line {}: missing text", lineno + 1)))?;
        if id != tokens.len() {
            return Err(Error::CorpusFile(format!(
                "vocab line {}: ids must be contiguous, expected {}, got {}",
                lineno + 1,
                tokens.len(),
                id
            )));
        }
        tokens.push(text.to_string());
        counts.push(count);
    }
    Ok(Vocabulary::from_parts(tokens, counts))
}

pub fn load_stats(path: &Path) -> Result<StatsFile> {
    let reader = BufReader::new(File::open(path)?);
    serde_json::from_reader(reader).map_err(|e| Error::CorpusFile(format!("stats file: {e}")))
}

/// Reads the three-file corpus back, reconstructing splits from the cutoffs
/// recorded in the stats file.
pub fn load_corpus(corpus: &Path, vocab: &Path, stats: &Path) -> Result<LoadedCorpus> {
    let vocab = load_vocab(vocab)?;
    let stats = load_stats(stats)?;

    let reader = BufReader::new(File::open(corpus)?);
    let mut sessions: BTreeMap<(String, u32), (Vec<u32>, Vec<i64>)> = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::CorpusFile(format!(
                "corpus line {}: expected 4 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let user = fields[0].to_string();
        let index: u32 = fields[1]
            .parse()
            .map_err(|_| Error::CorpusFile(format!("corpus line {}: bad session id", lineno + 1)))?;
        let token: u32 = fields[2]
            .parse()
            .map_err(|_| Error::CorpusFile(format!("corpus line {}: bad token id", lineno + 1)))?;
        let ts: i64 = fields[3]
            .parse()
            .map_err(|_| Error::CorpusFile(format!("corpus line {}: bad timestamp", lineno + 1)))?;
        if token as usize >= vocab.len() {
            return Err(Error::CorpusFile(format!(
                "corpus line {}: token {} outside vocabulary of {}",
                lineno + 1,
                token,
                vocab.len()
            )));
        }
        let entry = sessions.entry((user, index)).or_default();
        entry.0.push(token);
        entry.1.push(ts);
    }

    let mut train: Vec<UserHistory> = Vec::new();
    let mut valid: Vec<UserHistory> = Vec::new();
    let mut test: Vec<UserHistory> = Vec::new();
    for ((user, index), (tokens, timestamps)) in sessions {
        let start = timestamps[0];
        let target = if start >= stats.test_cutoff_unix {
            &mut test
        } else if start >= stats.valid_cutoff_unix {
            &mut valid
        } else {
            &mut train
        };
        let session = Session { user_id: user.clone(), index, tokens, timestamps };
        match target.last_mut() {
            Some(h) if h.user_id == user => h.sessions.push(session),
            _ => target.push(UserHistory { user_id: user, sessions: vec![session] }),
        }
    }

    Ok(LoadedCorpus { train, valid, test, vocab, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::querylog::pipeline::compute_stats;

    fn sample_histories() -> (Vec<UserHistory>, Vec<UserHistory>) {
        let day = 86_400;
        let train = vec![UserHistory {
            user_id: "1".into(),
            sessions: vec![
                Session { user_id: "1".into(), index: 0, tokens: vec![0, 1], timestamps: vec![0, 60] },
                Session {
                    user_id: "1".into(),
                    index: 1,
                    tokens: vec![1, 0, 1],
                    timestamps: vec![day, day + 60, day + 120],
                },
            ],
        }];
        let test = vec![UserHistory {
            user_id: "1".into(),
            sessions: vec![Session {
                user_id: "1".into(),
                index: 2,
                tokens: vec![0, 1],
                timestamps: vec![50 * day, 50 * day + 60],
            }],
        }];
        (train, test)
    }

    #[test]
    fn corpus_round_trip() {
        let dir = std::env::temp_dir().join(format!("ahnqs-io-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let (train, test) = sample_histories();
        let vocab = Vocabulary::from_parts(vec!["alpha".into(), "beta".into()], vec![3, 4]);
        let stats = StatsFile {
            options: PreprocessOptions::default(),
            test_cutoff_unix: 40 * 86_400,
            valid_cutoff_unix: 40 * 86_400,
            stats: compute_stats(&train, &[], &test),
        };

        let corpus_path = dir.join("corpus.tsv");
        let vocab_path = dir.join("vocab.tsv");
        let stats_path = dir.join("stats.json");
        write_corpus(&corpus_path, &[&train, &test]).unwrap();
        write_vocab(&vocab_path, &vocab).unwrap();
        write_stats(&stats_path, &stats).unwrap();

        let loaded = load_corpus(&corpus_path, &vocab_path, &stats_path).unwrap();
        assert_eq!(loaded.train, train);
        assert!(loaded.valid.is_empty());
        assert_eq!(loaded.test, test);
        assert_eq!(loaded.vocab.token(0), Some("alpha"));
        assert_eq!(loaded.vocab.count(1), 4);

        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn out_of_range_token_rejected() {
        let dir = std::env::temp_dir().join(format!("ahnqs-io-oor-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let corpus_path = dir.join("corpus.tsv");
        std::fs::write(&corpus_path, "1\t0\t9\t0\n").unwrap();
        let vocab_path = dir.join("vocab.tsv");
        std::fs::write(&vocab_path, "0\t1\talpha\n").unwrap();
        let stats_path = dir.join("stats.json");
        let stats = StatsFile {
            options: PreprocessOptions::default(),
            test_cutoff_unix: 0,
            valid_cutoff_unix: 0,
            stats: compute_stats(&[], &[], &[]),
        };
        write_stats(&stats_path, &stats).unwrap();

        let err = load_corpus(&corpus_path, &vocab_path, &stats_path).unwrap_err();
        assert!(err.to_string().contains("outside vocabulary"));
        std::fs::remove_dir_all(&dir).ok();
    }
}

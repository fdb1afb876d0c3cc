//! JSONL interchange format: a header line followed by one utterance per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PhoneSegment, Posteriorgram, UtteranceSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusHeader {
    pub version: u32,
    pub num_phones: usize,
    pub feat_dim: usize,
}

/// Utterances sharing one phone set and feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub num_phones: usize,
    pub feat_dim: usize,
    pub utterances: Vec<UtteranceSample>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn header(&self) -> CorpusHeader {
        CorpusHeader {
            version: CORPUS_VERSION,
            num_phones: self.num_phones,
            feat_dim: self.feat_dim,
        }
    }

    pub fn labels(&self) -> Vec<f64> {
        self.utterances.iter().map(|u| u.score).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhoneRecord {
    phone: usize,
    word: usize,
    t_s: usize,
    t_e: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceRecord {
    id: String,
    score: f64,
    phones: Vec<PhoneRecord>,
    frame_feats: Vec<Vec<f64>>,
    log_post: Vec<Vec<f64>>,
}

impl From<&UtteranceSample> for UtteranceRecord {
    fn from(u: &UtteranceSample) -> Self {
        let rows = |t: &Tensor| (0..t.rows()).map(|i| t.row(i).to_vec()).collect();
        Self {
            id: u.id.clone(),
            score: u.score,
            phones: u
                .segments
                .iter()
                .map(|s| PhoneRecord {
                    phone: s.phone,
                    word: s.word,
                    t_s: s.start,
                    t_e: s.end,
                })
                .collect(),
            frame_feats: rows(u.post.frame_feats()),
            log_post: rows(u.post.log_post()),
        }
    }
}

fn matrix(rows: &[Vec<f64>], cols: usize, field: &str, line: usize) -> Result<Tensor> {
    Tensor::from_rows(rows, cols).map_err(|_| Error::Validation {
        line,
        field: field.to_string(),
        message: format!("every row must have {cols} values"),
    })
}

impl UtteranceRecord {
    fn into_sample(self, header: &CorpusHeader, line: usize) -> Result<UtteranceSample> {
        if self.frame_feats.len() != self.log_post.len() {
            return Err(Error::Validation {
                line,
                field: "log_post".into(),
                message: format!(
                    "{} posterior frames but {} feature frames",
                    self.log_post.len(),
                    self.frame_feats.len()
                ),
            });
        }
        let feats = matrix(&self.frame_feats, header.feat_dim, "frame_feats", line)?;
        let post = matrix(&self.log_post, header.num_phones, "log_post", line)?;
        let sample = UtteranceSample {
            id: self.id,
            score: self.score,
            segments: self
                .phones
                .iter()
                .map(|p| PhoneSegment {
                    phone: p.phone,
                    word: p.word,
                    start: p.t_s,
                    end: p.t_e,
                })
                .collect(),
            post: Posteriorgram::new(post, feats)?,
        };
        sample
            .validate(header.num_phones, header.feat_dim)
            .map_err(|(field, message)| Error::Validation {
                line,
                field,
                message,
            })?;
        Ok(sample)
    }
}

/// Parses a corpus; line numbers in errors are 1-based.
pub fn read_corpus(reader: impl BufRead) -> Result<Corpus> {
    let mut lines = reader.lines().enumerate();
    let header: CorpusHeader = loop {
        match lines.next() {
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing corpus header".into(),
                })
            }
            Some((i, line)) => {
                let line = line.map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: format!("bad header: {e}"),
                })?;
            }
        }
    };
    if header.version != CORPUS_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported corpus version {}", header.version),
        });
    }
    let mut utterances = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: UtteranceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        utterances.push(record.into_sample(&header, i + 1)?);
    }
    Ok(Corpus {
        num_phones: header.num_phones,
        feat_dim: header.feat_dim,
        utterances,
    })
}

pub fn write_corpus(corpus: &Corpus, mut writer: impl Write) -> Result<()> {
    serde_json::to_writer(&mut writer, &corpus.header())?;
    writer.write_all(b"\n").map_err(Error::from_write)?;
    for u in &corpus.utterances {
        serde_json::to_writer(&mut writer, &UtteranceRecord::from(u))?;
        writer.write_all(b"\n").map_err(Error::from_write)?;
    }
    writer.flush().map_err(Error::from_write)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file))
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus(corpus, BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

impl Error {
    fn from_write(e: std::io::Error) -> Self {
        Error::io("<writer>", e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{synth_generate, SplitSizes, SynthConfig};

    fn tiny() -> Corpus {
        let cfg = SynthConfig {
            num_phones: 8,
            feat_dim: 3,
            num_clusters: 2,
            splits: SplitSizes {
                train: 3,
                dev: 0,
                test: 0,
            },
            ..SynthConfig::default()
        };
        synth_generate(&cfg, 4).unwrap().train
    }

    fn to_string(c: &Corpus) -> String {
        let mut buf = Vec::new();
        write_corpus(c, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn round_trip() {
        let c = tiny();
        let text = to_string(&c);
        assert!(text.starts_with(r#"{"version":1,"num_phones":8,"feat_dim":3}"#));
        let back = read_corpus(text.as_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(to_string(&back), text);
    }

    fn corrupt(f: impl Fn(&mut serde_json::Value)) -> Result<Corpus> {
        let text = to_string(&tiny());
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let mut v: serde_json::Value = serde_json::from_str(&lines[2]).unwrap();
        f(&mut v);
        lines[2] = v.to_string();
        read_corpus(lines.join("\n").as_bytes())
    }

    #[test]
    fn reversed_segment_is_rejected() {
        let err = corrupt(|v| {
            let t_s = v["phones"][0]["t_s"].as_u64().unwrap();
            v["phones"][0]["t_e"] = serde_json::json!(t_s);
        })
        .unwrap_err();
        match err {
            Error::Validation { line, field, .. } => {
                assert_eq!(line, 3);
                assert_eq!(field, "phones[0].t_e");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn posterior_row_must_sum_to_one() {
        let err = corrupt(|v| {
            let row: Vec<f64> = vec![(0.8f64 / 8.0).ln(); 8];
            v["log_post"][0] = serde_json::json!(row);
        })
        .unwrap_err();
        assert!(
            matches!(&err, Error::Validation { field, .. } if field == "log_post[0]"),
            "{err:?}"
        );
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = to_string(&tiny());
        let mut lines: Vec<&str> = text.lines().collect();
        lines[1] = "{not json";
        let err = read_corpus(lines.join("\n").as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(corrupt(|v| v["extra"] = serde_json::json!(1)).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let c = tiny();
        save_corpus(&c, &path).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), c);
        assert!(matches!(
            load_corpus(dir.path().join("missing.jsonl")),
            Err(Error::Io { .. })
        ));
    }
}

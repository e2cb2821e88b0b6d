//! Corpus ingestion and export.
//!
//! One annotation per record with fields `instance_id`, `text` (or
//! `embedding`), `annotator_id` and `label` (0 or 1). Instances and
//! annotators are ordered by first appearance.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AnnotationMatrix, Entry, GroundTruth, Instance, TiePolicy};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Format> {
        match path.extension()?.to_str()? {
            "jsonl" | "json" => Some(Format::Jsonl),
            "csv" => Some(Format::Csv),
            _ => None,
        }
    }
}

struct Record {
    line: usize,
    instance_id: String,
    text: Option<String>,
    embedding: Option<Vec<f64>>,
    annotator_id: String,
    label: bool,
}

#[derive(Default)]
struct Builder {
    instances: Vec<Instance>,
    instance_index: HashMap<String, usize>,
    annotators: Vec<String>,
    annotator_index: HashMap<String, usize>,
    entries: Vec<Entry>,
    cells: HashMap<(usize, usize), usize>,
}

impl Builder {
    fn push(&mut self, path: &str, rec: Record) -> Result<()> {
        let i = match self.instance_index.get(&rec.instance_id) {
            Some(&i) => i,
            None => {
                let i = self.instances.len();
                self.instances.push(Instance {
                    id: rec.instance_id.clone(),
                    text: rec.text.unwrap_or_default(),
                    embedding: rec.embedding,
                });
                self.instance_index.insert(rec.instance_id.clone(), i);
                i
            }
        };
        let j = match self.annotator_index.get(&rec.annotator_id) {
            Some(&j) => j,
            None => {
                let j = self.annotators.len();
                self.annotators.push(rec.annotator_id.clone());
                self.annotator_index.insert(rec.annotator_id.clone(), j);
                j
            }
        };
        if self.cells.insert((i, j), rec.line).is_some() {
            return Err(Error::Conflict {
                path: path.to_string(),
                line: rec.line,
                instance: rec.instance_id,
                annotator: rec.annotator_id,
            });
        }
        self.entries.push(Entry {
            instance: i,
            annotator: j,
            label: rec.label,
        });
        Ok(())
    }

    fn finish(self, path: &str) -> Result<AnnotationMatrix> {
        if self.entries.is_empty() {
            return Err(Error::EmptyResult(format!("{path}: no annotation records")));
        }
        AnnotationMatrix::new(
            self.instances,
            self.annotators,
            self.entries,
            TiePolicy::default(),
        )
    }
}

fn parse_error(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

fn parse_json_record(path: &str, line: usize, raw: &str) -> Result<Record> {
    let value: Value = serde_json::from_str(raw)
        .map_err(|e| parse_error(path, line, format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse_error(path, line, "record is not a JSON object"))?;
    let string_field = |key: &str| -> Result<String> {
        match obj.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Number(n)) => Ok(n.to_string()),
            Some(_) => Err(parse_error(
                path,
                line,
                format!("field `{key}` must be a string"),
            )),
            None => Err(parse_error(path, line, format!("missing field `{key}`"))),
        }
    };
    let instance_id = string_field("instance_id")?;
    let annotator_id = string_field("annotator_id")?;
    let label = match obj.get("label") {
        Some(Value::Number(n)) => match n.as_u64() {
            Some(0) => false,
            Some(1) => true,
            _ => return Err(parse_error(path, line, format!("label {n} is not 0 or 1"))),
        },
        Some(other) => {
            return Err(parse_error(
                path,
                line,
                format!("label {other} is not 0 or 1"),
            ))
        }
        None => return Err(parse_error(path, line, "missing field `label`")),
    };
    let text = match obj.get("text") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Null) | None => None,
        Some(_) => return Err(parse_error(path, line, "field `text` must be a string")),
    };
    let embedding = match obj.get("embedding") {
        Some(Value::Array(items)) => Some(
            items
                .iter()
                .map(|v| {
                    v.as_f64().ok_or_else(|| {
                        parse_error(path, line, "embedding must contain numbers only")
                    })
                })
                .collect::<Result<Vec<f64>>>()?,
        ),
        Some(Value::Null) | None => None,
        Some(_) => {
            return Err(parse_error(
                path,
                line,
                "field `embedding` must be an array",
            ))
        }
    };
    if text.is_none() && embedding.is_none() {
        return Err(parse_error(
            path,
            line,
            "record needs `text` or `embedding`",
        ));
    }
    Ok(Record {
        line,
        instance_id,
        text,
        embedding,
        annotator_id,
        label,
    })
}

fn load_jsonl(path: &Path) -> Result<AnnotationMatrix> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut builder = Builder::default();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_json_record(&name, k + 1, &line)?;
        builder.push(&name, rec)?;
    }
    builder.finish(&name)
}

fn load_csv(path: &Path) -> Result<AnnotationMatrix> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(file);
    let headers = reader.headers()?.clone();
    let col = |key: &str| headers.iter().position(|h| h.trim() == key);
    let missing = |key: &str| parse_error(&name, 1, format!("header lacks column `{key}`"));
    let c_inst = col("instance_id").ok_or_else(|| missing("instance_id"))?;
    let c_annot = col("annotator_id").ok_or_else(|| missing("annotator_id"))?;
    let c_label = col("label").ok_or_else(|| missing("label"))?;
    let c_text = col("text");
    let c_emb = col("embedding");
    if c_text.is_none() && c_emb.is_none() {
        return Err(parse_error(
            &name,
            1,
            "header needs a `text` or `embedding` column",
        ));
    }

    let mut builder = Builder::default();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_error(&name, line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |c: usize| row.get(c).unwrap_or("").to_string();
        let label = match field(c_label).trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(parse_error(
                    &name,
                    line,
                    format!("label `{other}` is not 0 or 1"),
                ))
            }
        };
        let instance_id = field(c_inst);
        let annotator_id = field(c_annot);
        if instance_id.is_empty() || annotator_id.is_empty() {
            return Err(parse_error(
                &name,
                line,
                "empty instance_id or annotator_id",
            ));
        }
        let embedding = match c_emb.map(field) {
            Some(s) if !s.trim().is_empty() => Some(
                s.split_whitespace()
                    .map(|v| {
                        v.parse::<f64>().map_err(|_| {
                            parse_error(&name, line, format!("bad embedding value `{v}`"))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?,
            ),
            _ => None,
        };
        let text = c_text.map(field);
        if embedding.is_none() && text.is_none() {
            return Err(parse_error(
                &name,
                line,
                "record needs `text` or `embedding`",
            ));
        }
        builder.push(
            &name,
            Record {
                line,
                instance_id,
                text,
                embedding,
                annotator_id,
                label,
            },
        )?;
    }
    builder.finish(&name)
}

pub fn load_corpus(path: &Path, format: Format) -> Result<AnnotationMatrix> {
    match format {
        Format::Jsonl => load_jsonl(path),
        Format::Csv => load_csv(path),
    }
}

#[derive(Serialize)]
struct OutRecord<'a> {
    instance_id: &'a str,
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    embedding: Option<&'a [f64]>,
    annotator_id: &'a str,
    label: u8,
}

/// Writes one record per annotation in instance-major order.
pub fn save_corpus(matrix: &AnnotationMatrix, path: &Path, format: Format) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        Format::Jsonl => {
            for e in matrix.entries() {
                let inst = &matrix.instances()[e.instance];
                let rec = OutRecord {
                    instance_id: &inst.id,
                    text: &inst.text,
                    embedding: inst.embedding.as_deref(),
                    annotator_id: &matrix.annotators()[e.annotator],
                    label: e.label as u8,
                };
                serde_json::to_writer(&mut out, &rec)?;
                out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            let with_emb = matrix.embedding_dim().is_some();
            if with_emb {
                w.write_record(["instance_id", "text", "embedding", "annotator_id", "label"])?;
            } else {
                w.write_record(["instance_id", "text", "annotator_id", "label"])?;
            }
            for e in matrix.entries() {
                let inst = &matrix.instances()[e.instance];
                let label = if e.label { "1" } else { "0" };
                let annot = matrix.annotators()[e.annotator].as_str();
                if with_emb {
                    let emb = inst
                        .embedding
                        .as_ref()
                        .map(|v| {
                            v.iter()
                                .map(|x| x.to_string())
                                .collect::<Vec<_>>()
                                .join(" ")
                        })
                        .unwrap_or_default();
                    w.write_record([inst.id.as_str(), inst.text.as_str(), &emb, annot, label])?;
                } else {
                    w.write_record([inst.id.as_str(), inst.text.as_str(), annot, label])?;
                }
            }
            w.flush().map_err(|e| Error::io(path, e))?;
            return Ok(());
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes the synthetic ground-truth sidecar as JSONL.
pub fn write_ground_truth(rows: &[GroundTruth], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a ground-truth sidecar written by [`write_ground_truth`].
pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: k + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn three_annotators_one_instance() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "c.jsonl",
            r#"{"instance_id":"x","text":"hello","annotator_id":"a","label":1}
{"instance_id":"x","text":"hello","annotator_id":"b","label":0}
{"instance_id":"x","text":"hello","annotator_id":"c","label":1}
"#,
        );
        let m = load_corpus(&p, Format::Jsonl).unwrap();
        assert_eq!(
            (m.n_instances(), m.n_annotators(), m.n_entries()),
            (1, 3, 3)
        );
        assert_eq!(m.annotators(), &["a", "b", "c"]);
    }

    #[test]
    fn bad_label_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "c.jsonl",
            "{\"instance_id\":\"x\",\"text\":\"t\",\"annotator_id\":\"a\",\"label\":1}\n\
             {\"instance_id\":\"y\",\"text\":\"t\",\"annotator_id\":\"a\",\"label\":2}\n",
        );
        match load_corpus(&p, Format::Jsonl) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_and_duplicate_pair() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "m.jsonl",
            "{\"instance_id\":\"x\",\"text\":\"t\",\"label\":1}\n",
        );
        assert!(matches!(
            load_corpus(&p, Format::Jsonl),
            Err(Error::Parse { line: 1, .. })
        ));

        let p = write(
            &dir,
            "d.jsonl",
            "{\"instance_id\":\"x\",\"text\":\"t\",\"annotator_id\":\"a\",\"label\":1}\n\
             {\"instance_id\":\"x\",\"text\":\"t\",\"annotator_id\":\"a\",\"label\":0}\n",
        );
        assert!(matches!(
            load_corpus(&p, Format::Jsonl),
            Err(Error::Conflict { line: 2, .. })
        ));
    }

    #[test]
    fn csv_with_embeddings() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "c.csv",
            "instance_id,embedding,annotator_id,label\nx,0.5 -1,a,1\nx,0.5 -1,b,0\ny,2 3,a,0\n",
        );
        let m = load_corpus(&p, Format::Csv).unwrap();
        assert_eq!(m.embedding_dim(), Some(2));
        assert_eq!(
            m.instances()[0].embedding.as_deref(),
            Some(&[0.5, -1.0][..])
        );

        let p = write(
            &dir,
            "bad.csv",
            "instance_id,text,annotator_id,label\nx,t,a,yes\n",
        );
        assert!(matches!(
            load_corpus(&p, Format::Csv),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_corpus(Path::new("/nonexistent/corpus.jsonl"), Format::Jsonl).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/corpus.jsonl"));
    }

    #[test]
    fn ground_truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("truth.jsonl");
        let rows = vec![
            GroundTruth {
                instance_id: "a".into(),
                latent_score: 0.1 + 0.2,
                expected_disagreement: 1.0 / 6.0,
            },
            GroundTruth {
                instance_id: "b".into(),
                latent_score: -3.5e-7,
                expected_disagreement: 0.0,
            },
        ];
        write_ground_truth(&rows, &p).unwrap();
        assert_eq!(read_ground_truth(&p).unwrap(), rows);
    }

    /// Instance-keyed content of a matrix, independent of ordering.
    fn content(m: &AnnotationMatrix) -> Vec<(String, String, Option<Vec<f64>>, String, bool)> {
        let mut v: Vec<_> = m
            .entries()
            .map(|e| {
                let inst = &m.instances()[e.instance];
                (
                    inst.id.clone(),
                    inst.text.clone(),
                    inst.embedding.clone(),
                    m.annotators()[e.annotator].clone(),
                    e.label,
                )
            })
            .collect();
        v.sort_by(|a, b| (&a.0, &a.3).cmp(&(&b.0, &b.3)));
        v
    }

    fn arb_matrix() -> impl Strategy<Value = AnnotationMatrix> {
        (1usize..8, 1usize..6, any::<bool>())
            .prop_flat_map(|(n, a, embed)| {
                (
                    Just((n, a, embed)),
                    proptest::collection::vec(
                        proptest::collection::vec(proptest::option::of(any::<bool>()), a),
                        n,
                    ),
                    proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 3), n),
                    proptest::collection::vec("[a-z ,\"]{0,12}", n),
                )
            })
            .prop_filter_map(
                "every row and column needs a label",
                |((n, a, embed), cells, vecs, texts)| {
                    let row_ok = cells.iter().all(|r| r.iter().any(Option::is_some));
                    let col_ok = (0..a).all(|j| cells.iter().any(|r| r[j].is_some()));
                    if !row_ok || !col_ok {
                        return None;
                    }
                    let instances = (0..n)
                        .map(|i| Instance {
                            id: format!("i{i}"),
                            text: if embed {
                                String::new()
                            } else {
                                texts[i].clone()
                            },
                            embedding: embed.then(|| vecs[i].clone()),
                        })
                        .collect();
                    let entries = cells.iter().enumerate().flat_map(|(i, r)| {
                        r.iter().enumerate().filter_map(move |(j, c)| {
                            c.map(|label| Entry {
                                instance: i,
                                annotator: j,
                                label,
                            })
                        })
                    });
                    let annotators = (0..a).map(|j| format!("ann{j}")).collect();
                    AnnotationMatrix::new(instances, annotators, entries, TiePolicy::Positive).ok()
                },
            )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn load_after_save_preserves_content(m in arb_matrix(), csv in any::<bool>()) {
            let dir = tempfile::tempdir().unwrap();
            let (name, format) = if csv { ("c.csv", Format::Csv) } else { ("c.jsonl", Format::Jsonl) };
            let p = dir.path().join(name);
            save_corpus(&m, &p, format).unwrap();
            let back = load_corpus(&p, format).unwrap();
            prop_assert_eq!(content(&back), content(&m));
            prop_assert_eq!(back.instances(), m.instances());
        }
    }
}

use std::collections::HashSet;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{ImageGrid, ImageSource};
use crate::{Error, Result};

/// One image-caption pair.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionRecord {
    pub id: String,
    pub image: ImageSource,
    pub caption: String,
    pub source: String,
}

/// On-disk JSONL line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    caption: String,
    #[serde(default)]
    source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_inline: Option<Vec<Vec<Vec<f64>>>>,
}

/// Load a JSON Lines corpus. Blank lines are skipped; `image_path` entries
/// are resolved relative to the corpus file and must exist.
pub fn load_corpus(path: &Path) -> Result<Vec<CaptionRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_line(&line, line_no, &base)?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

fn parse_line(line: &str, line_no: usize, base: &Path) -> Result<CaptionRecord> {
    let parse_err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let raw: RecordLine = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    if raw.id.is_empty() {
        return Err(parse_err("empty id".into()));
    }
    if raw.caption.trim().is_empty() {
        return Err(parse_err(format!("record {:?} has an empty caption", raw.id)));
    }
    let image = match (raw.image_path, raw.image_inline) {
        (Some(_), Some(_)) => {
            return Err(parse_err(format!(
                "record {:?} has both image_path and image_inline",
                raw.id
            )))
        }
        (None, None) => {
            return Err(Error::MissingImage {
                line: line_no,
                id: raw.id,
            })
        }
        (Some(p), None) => {
            let resolved = base.join(&p);
            if !resolved.is_file() {
                return Err(Error::MissingImage {
                    line: line_no,
                    id: raw.id,
                });
            }
            ImageSource::Path(resolved)
        }
        (None, Some(nested)) => ImageSource::Inline(
            ImageGrid::from_nested(&nested)
                .map_err(|e| parse_err(format!("record {:?}: {e}", raw.id)))?,
        ),
    };
    Ok(CaptionRecord {
        id: raw.id,
        image,
        caption: raw.caption,
        source: raw.source,
    })
}

/// Write records as JSONL. Path images are written relative to the output
/// file's directory when possible.
pub fn save_corpus(path: &Path, records: &[CaptionRecord]) -> Result<()> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let (image_path, image_inline) = match &r.image {
            ImageSource::Inline(g) => (None, Some(g.to_nested())),
            ImageSource::Path(p) => {
                let rel: PathBuf = p.strip_prefix(&base).map(Path::to_path_buf).unwrap_or(p.clone());
                (Some(rel.to_string_lossy().into_owned()), None)
            }
        };
        let line = RecordLine {
            id: r.id.clone(),
            caption: r.caption.clone(),
            source: r.source.clone(),
            image_path,
            image_inline,
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::json(path, e))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    const PX: &str = "[[[0.1,0.2,0.3]]]";

    #[test]
    fn loads_three_records() {
        let dir = tempfile::tempdir().unwrap();
        let body: String = (0..3)
            .map(|i| format!(r#"{{"id":"r{i}","caption":"breast tissue","source":"t","image_inline":{PX}}}"#) + "\n")
            .collect();
        let corpus = load_corpus(&write(dir.path(), "c.jsonl", &body)).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus[2].id, "r2");
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_corpus(&write(dir.path(), "c.jsonl", "")).unwrap().is_empty());
    }

    #[test]
    fn empty_caption_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{{\"id\":\"a\",\"caption\":\"ok\",\"image_inline\":{PX}}}\n{{\"id\":\"b\",\"caption\":\"  \",\"image_inline\":{PX}}}\n"
        );
        let err = load_corpus(&write(dir.path(), "c.jsonl", &body)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().starts_with("line 2:"));
    }

    #[test]
    fn duplicate_and_missing_image() {
        let dir = tempfile::tempdir().unwrap();
        let dup = format!(
            "{{\"id\":\"a\",\"caption\":\"x\",\"image_inline\":{PX}}}\n{{\"id\":\"a\",\"caption\":\"y\",\"image_inline\":{PX}}}\n"
        );
        assert!(matches!(
            load_corpus(&write(dir.path(), "d.jsonl", &dup)),
            Err(Error::DuplicateId(id)) if id == "a"
        ));
        let none = "{\"id\":\"a\",\"caption\":\"x\"}\n";
        assert!(matches!(
            load_corpus(&write(dir.path(), "n.jsonl", none)),
            Err(Error::MissingImage { line: 1, .. })
        ));
        let gone = "{\"id\":\"a\",\"caption\":\"x\",\"image_path\":\"nope.ppm\"}\n";
        assert!(matches!(
            load_corpus(&write(dir.path(), "g.jsonl", gone)),
            Err(Error::MissingImage { .. })
        ));
        let garbage = "{not json\n";
        assert!(matches!(
            load_corpus(&write(dir.path(), "x.jsonl", garbage)),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn path_images_resolve_relative_to_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageGrid::new(1, 1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        img.write_pnm(&dir.path().join("a.ppm")).unwrap();
        let p = write(dir.path(), "c.jsonl", "{\"id\":\"a\",\"caption\":\"x\",\"image_path\":\"a.ppm\"}\n");
        let corpus = load_corpus(&p).unwrap();
        assert_eq!(*corpus[0].image.load().unwrap(), img);

        let out = dir.path().join("copy.jsonl");
        save_corpus(&out, &corpus).unwrap();
        assert_eq!(load_corpus(&out).unwrap(), corpus);
    }
}

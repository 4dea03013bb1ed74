//! Article data model, dataset import through a column-mapping adapter,
//! image fetching/cleaning, and the two train/test split protocols.

mod fetch;
mod split;

pub use fetch::{fetch_images, FetchReport, FetchStatus};
pub use split::{chronological_split, random_split, SplitMode, SplitResult};

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("source is missing required column '{0}'")]
    MissingColumn(String),
    #[error("malformed source: {0}")]
    Malformed(String),
    #[error("duplicate article id '{0}'")]
    DuplicateId(String),
    #[error("article '{0}' has no parseable timestamp")]
    MissingTimestamp(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Credibility label, derived from source credibility in the upstream data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Reliable,
    Unreliable,
}

impl Label {
    /// Unreliable is the positive class throughout.
    pub fn as_target(self) -> f64 {
        match self {
            Label::Reliable => 0.0,
            Label::Unreliable => 1.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Reliable => write!(f, "Reliable"),
            Label::Unreliable => write!(f, "Unreliable"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArticleId(pub String);

impl fmt::Display for ArticleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<&str> for ArticleId {
    fn from(s: &str) -> Self {
        ArticleId(s.to_string())
    }
}

/// Where an article's image currently lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageRef {
    Url(String),
    Local(PathBuf),
}

/// One news item: headline, body, image reference, timestamp, label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub id: ArticleId,
    pub headline: String,
    pub body: String,
    pub image_ref: ImageRef,
    pub timestamp: DateTime<Utc>,
    pub label: Label,
}

/// Import metadata carried alongside the article list. Deliberately free of
/// wall-clock fields so canonical corpus files are byte-stable across runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub rows_read: usize,
    pub rows_skipped: Vec<SkippedRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub articles: Vec<Article>,
    pub provenance: Provenance,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn get(&self, id: &ArticleId) -> Option<&Article> {
        self.articles.iter().find(|a| &a.id == id)
    }

    pub fn ids(&self) -> Vec<ArticleId> {
        self.articles.iter().map(|a| a.id.clone()).collect()
    }

    /// Count of (Reliable, Unreliable) articles.
    pub fn class_counts(&self) -> (usize, usize) {
        let reliable = self
            .articles
            .iter()
            .filter(|a| a.label == Label::Reliable)
            .count();
        (reliable, self.articles.len() - reliable)
    }

    /// Write the canonical line-delimited representation: one JSON article
    /// per line, then one provenance trailer line.
    pub fn save_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = Vec::new();
        for article in &self.articles {
            serde_json::to_writer(&mut out, article)?;
            out.push(b'\n');
        }
        serde_json::to_writer(&mut out, &RecordLine::Provenance(self.provenance.clone()))?;
        out.push(b'\n');
        let mut f = std::fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Self, CorpusError> {
        let f = std::fs::File::open(path).map_err(|source| CorpusError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        let reader = std::io::BufReader::new(f);
        let mut articles = Vec::new();
        let mut provenance = Provenance::default();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if let Ok(article) = serde_json::from_str::<Article>(&line) {
                articles.push(article);
            } else {
                match serde_json::from_str::<RecordLine>(&line)? {
                    RecordLine::Provenance(p) => provenance = p,
                }
            }
        }
        let corpus = Corpus {
            articles,
            provenance,
        };
        corpus.check_unique_ids()?;
        Ok(corpus)
    }

    fn check_unique_ids(&self) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for a in &self.articles {
            if !seen.insert(&a.id) {
                return Err(CorpusError::DuplicateId(a.id.0.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
enum RecordLine {
    Provenance(Provenance),
}

/// Maps source column names onto the article fields and label strings onto
/// the two classes. Nothing about the public dataset is hard-coded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub columns: ColumnMap,
    /// e.g. {"1": "Reliable", "0": "Unreliable"}
    pub labels: IndexMap<String, Label>,
    /// Extra chrono format strings tried after the built-in ones.
    #[serde(default)]
    pub timestamp_formats: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMap {
    pub id: String,
    pub headline: String,
    pub body: String,
    pub image: String,
    pub timestamp: String,
    pub label: String,
}

impl AdapterConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CorpusError> {
        toml::from_str(text).map_err(|e| CorpusError::Malformed(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    fn parse_timestamp(&self, raw: &str) -> Option<DateTime<Utc>> {
        let raw = raw.trim();
        if raw.is_empty() {
            return None;
        }
        if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
            return Some(dt.with_timezone(&Utc));
        }
        for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
            if let Ok(naive) = NaiveDateTime::parse_from_str(raw, fmt) {
                return Some(naive.and_utc());
            }
        }
        if let Ok(date) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
            return Some(date.and_hms_opt(0, 0, 0).unwrap().and_utc());
        }
        for fmt in &self.timestamp_formats {
            if let Ok(naive) = NaiveDateTime::parse_from_str(raw, fmt) {
                return Some(naive.and_utc());
            }
            if let Ok(date) = NaiveDate::parse_from_str(raw, fmt) {
                return Some(date.and_hms_opt(0, 0, 0).unwrap().and_utc());
            }
        }
        None
    }
}

/// Import a delimited source file. Rows missing any required field are
/// recorded in provenance and skipped; structural problems are fatal.
pub fn load_corpus(source_path: &Path, adapter: &AdapterConfig) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(source_path).map_err(|source| CorpusError::Unreadable {
        path: source_path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);

    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Malformed(e.to_string()))?
        .clone();
    let col = |name: &str| -> Result<usize, CorpusError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
    };

    // Empty input (no header row at all) is an empty corpus, not an error.
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(Corpus {
            articles: Vec::new(),
            provenance: Provenance {
                source: source_path.display().to_string(),
                rows_read: 0,
                rows_skipped: Vec::new(),
            },
        });
    }

    let c = &adapter.columns;
    let idx_id = col(&c.id)?;
    let idx_headline = col(&c.headline)?;
    let idx_body = col(&c.body)?;
    let idx_image = col(&c.image)?;
    let idx_timestamp = col(&c.timestamp)?;
    let idx_label = col(&c.label)?;

    let mut articles = Vec::new();
    let mut skipped = Vec::new();
    let mut seen = HashSet::new();
    let mut rows_read = 0usize;

    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // 1-based, after the header line
        let record = record.map_err(|e| CorpusError::Malformed(format!("row {row}: {e}")))?;
        rows_read += 1;
        let field = |idx: usize| record.get(idx).unwrap_or("").trim().to_string();

        let id = field(idx_id);
        let headline = field(idx_headline);
        let body = field(idx_body);
        let image = field(idx_image);
        let ts_raw = field(idx_timestamp);
        let label_raw = field(idx_label);

        let mut skip = |reason: String| {
            skipped.push(SkippedRow { row, reason });
        };

        if id.is_empty() {
            skip("missing id".into());
            continue;
        }
        if image.is_empty() {
            skip(format!("article '{id}': missing image reference"));
            continue;
        }
        let Some(timestamp) = adapter.parse_timestamp(&ts_raw) else {
            skip(format!("article '{id}': missing or unparseable timestamp '{ts_raw}'"));
            continue;
        };
        let Some(label) = adapter.labels.get(&label_raw).copied() else {
            skip(format!("article '{id}': unmapped label '{label_raw}'"));
            continue;
        };
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId(id));
        }

        let image_ref = if image.starts_with("http://") || image.starts_with("https://") {
            ImageRef::Url(image)
        } else {
            ImageRef::Local(PathBuf::from(image))
        };

        articles.push(Article {
            id: ArticleId(id),
            headline,
            body,
            image_ref,
            timestamp,
            label,
        });
    }

    Ok(Corpus {
        articles,
        provenance: Provenance {
            source: source_path.display().to_string(),
            rows_read,
            rows_skipped: skipped,
        },
    })
}

/// Retain only articles whose image resolved to an existing local file.
/// Run [`fetch_images`] first; URL refs that never resolved are dropped.
pub fn clean(corpus: &Corpus) -> Corpus {
    let articles: Vec<Article> = corpus
        .articles
        .iter()
        .filter(|a| match &a.image_ref {
            ImageRef::Local(path) => path.exists(),
            ImageRef::Url(_) => false,
        })
        .cloned()
        .collect();
    let (reliable, unreliable) = {
        let r = articles.iter().filter(|a| a.label == Label::Reliable).count();
        (r, articles.len() - r)
    };
    log::info!(
        "clean: kept {} of {} articles ({} Reliable, {} Unreliable)",
        articles.len(),
        corpus.len(),
        reliable,
        unreliable
    );
    Corpus {
        articles,
        provenance: corpus.provenance.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    pub(crate) fn test_adapter() -> AdapterConfig {
        let mut labels = IndexMap::new();
        labels.insert("1".to_string(), Label::Reliable);
        labels.insert("0".to_string(), Label::Unreliable);
        AdapterConfig {
            columns: ColumnMap {
                id: "news_id".into(),
                headline: "title".into(),
                body: "body_text".into(),
                image: "image".into(),
                timestamp: "publish_date".into(),
                label: "reliability".into(),
            },
            labels,
            timestamp_formats: vec![],
        }
    }

    fn write_csv(dir: &Path, rows: &[&str]) -> PathBuf {
        let path = dir.join("source.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "news_id,title,body_text,image,publish_date,reliability").unwrap();
        for r in rows {
            writeln!(f, "{r}").unwrap();
        }
        path
    }

    #[test]
    fn empty_input_gives_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::File::create(&path).unwrap();
        let corpus = load_corpus(&path, &test_adapter()).unwrap();
        assert!(corpus.is_empty());
        assert!(corpus.provenance.rows_skipped.is_empty());
    }

    #[test]
    fn ten_row_fixture_round_trips_field_by_field() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<String> = (0..10)
            .map(|i| {
                format!(
                    "art{i:03},Headline number {i},Body text {i} with words,img{i}.png,2020-02-{:02},{}",
                    i + 1,
                    i % 2
                )
            })
            .collect();
        let refs: Vec<&str> = rows.iter().map(|s| s.as_str()).collect();
        let path = write_csv(dir.path(), &refs);
        let corpus = load_corpus(&path, &test_adapter()).unwrap();
        assert_eq!(corpus.len(), 10);
        for (i, a) in corpus.articles.iter().enumerate() {
            assert_eq!(a.id.0, format!("art{i:03}"));
            assert_eq!(a.headline, format!("Headline number {i}"));
            assert_eq!(a.body, format!("Body text {i} with words"));
            assert_eq!(a.image_ref, ImageRef::Local(PathBuf::from(format!("img{i}.png"))));
            assert_eq!(
                a.timestamp,
                NaiveDate::from_ymd_opt(2020, 2, (i + 1) as u32)
                    .unwrap()
                    .and_hms_opt(0, 0, 0)
                    .unwrap()
                    .and_utc()
            );
            let expected = if i % 2 == 1 { Label::Unreliable } else { Label::Reliable };
            assert_eq!(a.label, expected);
        }
        assert!(corpus.provenance.rows_skipped.is_empty());

        // JSONL round-trip preserves every field.
        let jsonl = dir.path().join("corpus.jsonl");
        corpus.save_jsonl(&jsonl).unwrap();
        let reloaded = Corpus::load_jsonl(&jsonl).unwrap();
        assert_eq!(reloaded, corpus);
    }

    #[test]
    fn rows_missing_required_fields_are_reported_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            dir.path(),
            &[
                "a1,Good row,Body,img.png,2020-01-01,1",
                ",No id,Body,img.png,2020-01-01,1",
                "a2,No image,Body,,2020-01-01,0",
                "a3,Bad date,Body,img.png,not-a-date,1",
                "a4,Bad label,Body,img.png,2020-01-01,maybe",
            ],
        );
        let corpus = load_corpus(&path, &test_adapter()).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.provenance.rows_skipped.len(), 4);
        assert_eq!(corpus.provenance.rows_read, 5);
    }

    #[test]
    fn unmapped_required_column_is_fatal_and_names_the_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("other.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "id,headline").unwrap();
        writeln!(f, "a,b").unwrap();
        let err = load_corpus(&path, &test_adapter()).unwrap_err();
        match err {
            CorpusError::MissingColumn(name) => assert_eq!(name, "news_id"),
            other => panic!("expected MissingColumn, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_are_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            dir.path(),
            &[
                "dup,One,Body,img.png,2020-01-01,1",
                "dup,Two,Body,img.png,2020-01-02,0",
            ],
        );
        let err = load_corpus(&path, &test_adapter()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(id) if id == "dup"));
    }

    #[test]
    fn clean_keeps_only_articles_with_existing_local_images() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("ok.png");
        std::fs::write(&img, b"png").unwrap();
        let mk = |id: &str, image_ref: ImageRef| Article {
            id: ArticleId(id.into()),
            headline: "h".into(),
            body: "b".into(),
            image_ref,
            timestamp: Utc::now(),
            label: Label::Reliable,
        };
        let corpus = Corpus {
            articles: vec![
                mk("a", ImageRef::Local(img.clone())),
                mk("b", ImageRef::Local(dir.path().join("missing.png"))),
                mk("c", ImageRef::Url("https://example.invalid/x.png".into())),
            ],
            provenance: Provenance::default(),
        };
        let cleaned = clean(&corpus);
        assert_eq!(cleaned.ids(), vec![ArticleId("a".into())]);
        // Monotone: cleaning again changes nothing.
        assert_eq!(clean(&cleaned), cleaned);
    }

    #[test]
    fn clean_is_identity_when_all_images_available() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.png");
        std::fs::write(&img, b"png").unwrap();
        let corpus = Corpus {
            articles: vec![Article {
                id: ArticleId("a".into()),
                headline: "h".into(),
                body: "b".into(),
                image_ref: ImageRef::Local(img),
                timestamp: Utc::now(),
                label: Label::Unreliable,
            }],
            provenance: Provenance::default(),
        };
        assert_eq!(clean(&corpus), corpus);
    }
}

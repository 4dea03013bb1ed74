//! Image fetching with bounded parallelism and an idempotent on-disk cache.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ArticleId, Corpus, CorpusError, ImageRef};

/// Per-article outcome of a fetch pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FetchStatus {
    /// Image was already present locally.
    Cached,
    /// Image was downloaded and validated in this pass.
    Downloaded,
    /// Image could not be fetched or decoded; reason attached.
    Unavailable(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FetchReport {
    /// One entry per article, sorted by article id.
    pub statuses: Vec<(ArticleId, FetchStatus)>,
}

impl FetchReport {
    pub fn downloads(&self) -> usize {
        self.statuses
            .iter()
            .filter(|(_, s)| matches!(s, FetchStatus::Downloaded))
            .count()
    }

    pub fn unavailable(&self) -> usize {
        self.statuses
            .iter()
            .filter(|(_, s)| matches!(s, FetchStatus::Unavailable(_)))
            .count()
    }

    pub fn save_json(&self, path: &Path) -> Result<(), CorpusError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

fn cache_path(cache_dir: &Path, url: &str) -> PathBuf {
    let digest = Sha256::digest(url.as_bytes());
    let ext = url
        .rsplit('.')
        .next()
        .filter(|e| e.len() <= 4 && e.chars().all(|c| c.is_ascii_alphanumeric()))
        .unwrap_or("img");
    cache_dir.join(format!("{:x}.{ext}", digest))
}

fn download(url: &str, dest: &Path) -> Result<(), String> {
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .map_err(|e| e.to_string())?;
    let resp = client.get(url).send().map_err(|e| e.to_string())?;
    if !resp.status().is_success() {
        return Err(format!("http status {}", resp.status()));
    }
    let bytes = resp.bytes().map_err(|e| e.to_string())?;
    // Reject content that does not decode as an image; an unavailable link
    // behind a 200 (error pages, placeholders) counts as unavailable.
    image::load_from_memory(&bytes).map_err(|e| format!("undecodable image: {e}"))?;
    std::fs::write(dest, &bytes).map_err(|e| e.to_string())?;
    Ok(())
}

/// Resolve every URL image to a cached local file, rewriting `image_ref` in
/// place on success. Already-cached files are never re-fetched, so a second
/// pass performs no writes. Per-item failures are recorded, never fatal.
pub fn fetch_images(
    corpus: &mut Corpus,
    cache_dir: &Path,
    max_parallel: usize,
) -> Result<FetchReport, CorpusError> {
    std::fs::create_dir_all(cache_dir)?;
    let max_parallel = max_parallel.max(1);

    enum Job {
        Done(FetchStatus),
        Fetch { url: String, dest: PathBuf },
    }

    let mut jobs: Vec<(usize, Job)> = Vec::new();
    for (idx, article) in corpus.articles.iter().enumerate() {
        let job = match &article.image_ref {
            ImageRef::Local(path) => {
                if path.exists() {
                    Job::Done(FetchStatus::Cached)
                } else {
                    Job::Done(FetchStatus::Unavailable(format!(
                        "local file {} not found",
                        path.display()
                    )))
                }
            }
            ImageRef::Url(url) => {
                let dest = cache_path(cache_dir, url);
                if dest.exists() {
                    Job::Done(FetchStatus::Cached)
                } else {
                    Job::Fetch {
                        url: url.clone(),
                        dest,
                    }
                }
            }
        };
        jobs.push((idx, job));
    }

    let queue: Arc<Mutex<VecDeque<(usize, String, PathBuf)>>> = Arc::new(Mutex::new(
        jobs.iter()
            .filter_map(|(idx, job)| match job {
                Job::Fetch { url, dest } => Some((*idx, url.clone(), dest.clone())),
                Job::Done(_) => None,
            })
            .collect(),
    ));
    let results: Arc<Mutex<Vec<(usize, Result<PathBuf, String>)>>> =
        Arc::new(Mutex::new(Vec::new()));

    let workers: Vec<_> = (0..max_parallel)
        .map(|_| {
            let queue = Arc::clone(&queue);
            let results = Arc::clone(&results);
            std::thread::spawn(move || loop {
                let item = queue.lock().unwrap().pop_front();
                let Some((idx, url, dest)) = item else { break };
                let outcome = download(&url, &dest).map(|_| dest);
                results.lock().unwrap().push((idx, outcome));
            })
        })
        .collect();
    for w in workers {
        let _ = w.join();
    }

    let mut statuses: Vec<(ArticleId, FetchStatus)> = Vec::with_capacity(corpus.len());
    let fetched = results.lock().unwrap();
    for (idx, job) in jobs {
        let article = &mut corpus.articles[idx];
        let status = match job {
            Job::Done(s) => {
                // Resolve cached URL refs to their local path.
                if s == FetchStatus::Cached {
                    if let ImageRef::Url(url) = &article.image_ref {
                        article.image_ref = ImageRef::Local(cache_path(cache_dir, url));
                    }
                }
                s
            }
            Job::Fetch { .. } => {
                let outcome = fetched
                    .iter()
                    .find(|(i, _)| *i == idx)
                    .map(|(_, o)| o.clone())
                    .unwrap_or_else(|| Err("worker dropped job".to_string()));
                match outcome {
                    Ok(dest) => {
                        article.image_ref = ImageRef::Local(dest);
                        FetchStatus::Downloaded
                    }
                    Err(reason) => FetchStatus::Unavailable(reason),
                }
            }
        };
        statuses.push((article.id.clone(), status));
    }
    statuses.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(FetchReport { statuses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Article, Label, Provenance};
    use chrono::Utc;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// Minimal single-threaded HTTP stub: serves a 1×1 PNG everywhere except
    /// paths containing "dead", which 404.
    fn spawn_stub_server(requests_to_serve: usize) -> (String, std::thread::JoinHandle<usize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let png = tiny_png();
        let handle = std::thread::spawn(move || {
            let mut served = 0usize;
            for _ in 0..requests_to_serve {
                let Ok((mut stream, _)) = listener.accept() else { break };
                let mut buf = [0u8; 1024];
                let n = stream.read(&mut buf).unwrap_or(0);
                let request = String::from_utf8_lossy(&buf[..n]).to_string();
                served += 1;
                if request.contains("dead") {
                    let _ = stream.write_all(b"HTTP/1.1 404 Not Found\r\ncontent-length: 0\r\n\r\n");
                } else {
                    let header = format!(
                        "HTTP/1.1 200 OK\r\ncontent-type: image/png\r\ncontent-length: {}\r\n\r\n",
                        png.len()
                    );
                    let _ = stream.write_all(header.as_bytes());
                    let _ = stream.write_all(&png);
                }
            }
            served
        });
        (format!("http://{addr}"), handle)
    }

    fn tiny_png() -> Vec<u8> {
        let img = image::RgbImage::from_pixel(1, 1, image::Rgb([10, 20, 30]));
        let mut bytes = Vec::new();
        img.write_to(
            &mut std::io::Cursor::new(&mut bytes),
            image::ImageFormat::Png,
        )
        .unwrap();
        bytes
    }

    fn article(id: &str, image_ref: ImageRef) -> Article {
        Article {
            id: ArticleId(id.into()),
            headline: "h".into(),
            body: "b".into(),
            image_ref,
            timestamp: Utc::now(),
            label: Label::Reliable,
        }
    }

    #[test]
    fn dead_link_marked_unavailable_others_cached() {
        let dir = tempfile::tempdir().unwrap();
        let (base, handle) = spawn_stub_server(3);
        let mut corpus = Corpus {
            articles: vec![
                article("a", ImageRef::Url(format!("{base}/ok1.png"))),
                article("b", ImageRef::Url(format!("{base}/dead.png"))),
                article("c", ImageRef::Url(format!("{base}/ok2.png"))),
            ],
            provenance: Provenance::default(),
        };
        let report = fetch_images(&mut corpus, dir.path(), 1).unwrap();
        handle.join().unwrap();

        assert_eq!(report.downloads(), 2);
        assert_eq!(report.unavailable(), 1);
        let by_id = |id: &str| {
            report
                .statuses
                .iter()
                .find(|(a, _)| a.0 == id)
                .map(|(_, s)| s.clone())
                .unwrap()
        };
        assert_eq!(by_id("a"), FetchStatus::Downloaded);
        assert!(matches!(by_id("b"), FetchStatus::Unavailable(_)));
        assert_eq!(by_id("c"), FetchStatus::Downloaded);
        // Successful refs were rewritten to local cache paths.
        assert!(matches!(corpus.articles[0].image_ref, ImageRef::Local(_)));
        assert!(matches!(corpus.articles[1].image_ref, ImageRef::Url(_)));
    }

    #[test]
    fn second_invocation_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let (base, handle) = spawn_stub_server(1);
        let mut corpus = Corpus {
            articles: vec![article("a", ImageRef::Url(format!("{base}/img.png")))],
            provenance: Provenance::default(),
        };
        let first = fetch_images(&mut corpus, dir.path(), 2).unwrap();
        assert_eq!(first.downloads(), 1);
        handle.join().unwrap();

        // Server is gone; cached files must make further passes no-ops.
        let listing = |d: &Path| {
            let mut names: Vec<_> = std::fs::read_dir(d)
                .unwrap()
                .map(|e| e.unwrap().file_name())
                .collect();
            names.sort();
            names
        };
        let before = listing(dir.path());
        let second = fetch_images(&mut corpus, dir.path(), 2).unwrap();
        let third = fetch_images(&mut corpus, dir.path(), 2).unwrap();
        assert_eq!(second.downloads(), 0);
        assert_eq!(second, third);
        assert_eq!(listing(dir.path()), before);
        assert_eq!(
            second.statuses,
            vec![(ArticleId("a".into()), FetchStatus::Cached)]
        );
    }

    #[test]
    fn all_cached_reports_zero_downloads_and_failures() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("local.png");
        std::fs::write(&img, tiny_png()).unwrap();
        let mut corpus = Corpus {
            articles: vec![article("a", ImageRef::Local(img))],
            provenance: Provenance::default(),
        };
        let report = fetch_images(&mut corpus, dir.path(), 4).unwrap();
        assert_eq!(report.downloads(), 0);
        assert_eq!(report.unavailable(), 0);
    }
}

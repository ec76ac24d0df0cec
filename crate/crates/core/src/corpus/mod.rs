//! Corpus persistence: one dialogue per JSON line, seeded splits and a
//! manifest describing a written dataset.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Catalog, Dialogue};

pub const MANIFEST_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLIT_NAMES: [&str; 3] = ["train", "test", "valid"];
pub const DEFAULT_RATIOS: [f64; 3] = [0.80, 0.12, 0.08];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation at line {line}: {detail}")]
    SchemaViolation { line: usize, detail: String },
    #[error("bad split ratios {0:?}: must be non-negative and sum to 1")]
    BadRatios([f64; 3]),
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

/// Line count and SHA-256 of a written corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub lines: usize,
    pub sha256: String,
}

/// Writes `corpus` to `path` as JSON lines. The file is held under an
/// exclusive lock while it is rewritten.
pub fn write_corpus(corpus: &[Dialogue], path: impl AsRef<Path>) -> Result<FileDigest, CorpusError> {
    let path = path.as_ref();
    let file = OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(false)
        .open(path)
        .map_err(io_err(path))?;
    file.lock().map_err(io_err(path))?;
    file.set_len(0).map_err(io_err(path))?;

    let mut hasher = Sha256::new();
    let mut out = BufWriter::new(&file);
    for d in corpus {
        let mut line = serde_json::to_vec(d).expect("dialogue serializes");
        line.push(b'\n');
        hasher.update(&line);
        out.write_all(&line).map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))?;
    drop(out);
    file.sync_all().map_err(io_err(path))?;
    file.unlock().map_err(io_err(path))?;

    Ok(FileDigest {
        lines: corpus.len(),
        sha256: hex::encode(hasher.finalize()),
    })
}

/// Appends dialogues to `path`, creating it if needed.
pub fn append_corpus(corpus: &[Dialogue], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(io_err(path))?;
    file.lock().map_err(io_err(path))?;
    let mut buf = Vec::new();
    for d in corpus {
        serde_json::to_writer(&mut buf, d).expect("dialogue serializes");
        buf.push(b'\n');
    }
    (&file).write_all(&buf).map_err(io_err(path))?;
    file.sync_data().map_err(io_err(path))?;
    file.unlock().map_err(io_err(path))?;
    Ok(())
}

/// Reads a JSON-lines corpus. Line numbers in errors are 1-based.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Dialogue>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    file.lock_shared().map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(&file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let d: Dialogue = serde_json::from_str(&line).map_err(|e| CorpusError::SchemaViolation {
            line: i + 1,
            detail: e.to_string(),
        })?;
        out.push(d);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub valid: Vec<T>,
}

impl<T> Splits<T> {
    pub fn counts(&self) -> SplitCounts {
        SplitCounts {
            train: self.train.len(),
            test: self.test.len(),
            valid: self.valid.len(),
        }
    }

    pub fn parts(&self) -> [&[T]; 3] {
        [&self.train, &self.test, &self.valid]
    }
}

pub fn check_ratios(ratios: [f64; 3]) -> Result<(), CorpusError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadRatios(ratios));
    }
    Ok(())
}

/// Part sizes by largest remainder, so each differs from `n * ratio` by
/// less than one.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3], CorpusError> {
    check_ratios(ratios)?;
    let exact = ratios.map(|r| n as f64 * r);
    let mut sizes = exact.map(|x| x.floor() as usize);
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - sizes[a] as f64;
        let fb = exact[b] - sizes[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            sizes[i] += 1;
            left -= 1;
        }
    }
    Ok(sizes)
}

/// Seeded shuffle followed by a contiguous train/test/valid partition.
pub fn split_corpus<T>(corpus: Vec<T>, ratios: [f64; 3], seed: u64) -> Result<Splits<T>, CorpusError> {
    let [n_train, n_test, _] = split_sizes(corpus.len(), ratios)?;
    let mut items = corpus;
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut rest = items.split_off(n_train);
    let valid = rest.split_off(n_test);
    Ok(Splits {
        train: items,
        test: rest,
        valid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
    pub valid: usize,
}

impl SplitCounts {
    pub fn as_array(&self) -> [usize; 3] {
        [self.train, self.test, self.valid]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: String,
    pub seed: u64,
    pub split_ratios: [f64; 3],
    pub counts: SplitCounts,
    pub catalog_checksum: String,
    /// Per split file, in train/test/valid order.
    pub files: Vec<FileDigest>,
    /// SHA-256 over everything above.
    pub checksum: String,
}

impl CorpusManifest {
    fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.version.as_bytes());
        h.update(self.seed.to_le_bytes());
        for r in self.split_ratios {
            h.update(r.to_le_bytes());
        }
        for c in self.counts.as_array() {
            h.update((c as u64).to_le_bytes());
        }
        h.update(self.catalog_checksum.as_bytes());
        for f in &self.files {
            h.update(f.sha256.as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| CorpusError::SchemaViolation {
            line: e.line(),
            detail: e.to_string(),
        })
    }
}

pub fn split_path(dir: impl AsRef<Path>, split: &str) -> PathBuf {
    dir.as_ref().join(format!("{split}.jsonl"))
}

/// Splits `corpus`, writes `train.jsonl`, `test.jsonl`, `valid.jsonl` and
/// `manifest.json` into `dir`.
pub fn write_dataset(
    corpus: Vec<Dialogue>,
    dir: impl AsRef<Path>,
    ratios: [f64; 3],
    seed: u64,
    catalog: &Catalog,
) -> Result<CorpusManifest, CorpusError> {
    let dir = dir.as_ref();
    let splits = split_corpus(corpus, ratios, seed)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::with_capacity(3);
    for (name, part) in SPLIT_NAMES.iter().zip(splits.parts()) {
        files.push(write_corpus(part, split_path(dir, name))?);
    }
    let mut manifest = CorpusManifest {
        version: MANIFEST_VERSION.into(),
        seed,
        split_ratios: ratios,
        counts: splits.counts(),
        catalog_checksum: catalog.checksum(),
        files,
        checksum: String::new(),
    };
    manifest.checksum = manifest.digest();
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

/// Reads a dataset back and checks it against its manifest.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(CorpusManifest, Splits<Dialogue>), CorpusError> {
    let dir = dir.as_ref();
    let manifest = CorpusManifest::load(dir)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(CorpusError::ManifestMismatch(format!(
            "unsupported version {}",
            manifest.version
        )));
    }
    if manifest.digest() != manifest.checksum {
        return Err(CorpusError::ManifestMismatch("checksum does not match contents".into()));
    }
    let mut parts = Vec::with_capacity(3);
    for name in SPLIT_NAMES {
        parts.push(read_corpus(split_path(dir, name))?);
    }
    let valid = parts.pop().unwrap();
    let test = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    let splits = Splits { train, test, valid };
    if splits.counts() != manifest.counts {
        return Err(CorpusError::ManifestMismatch(format!(
            "counts {:?} on disk, {:?} in manifest",
            splits.counts(),
            manifest.counts
        )));
    }
    Ok((manifest, splits))
}

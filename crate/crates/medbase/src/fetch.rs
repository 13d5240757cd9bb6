//! Remote repository access: listing, verified download, extraction.
//!
//! The repository layout is two directories (`baseline/`, `updatefiles/`)
//! holding `*.xml.gz` archives plus optional `*.xml.gz.md5` digest sidecars.
//! Three endpoint bindings are selected by URL scheme: `file://` (local
//! mirror, also the test fixture transport), `http(s)://` (directory-index
//! listing), and `ftp://`.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};
use suppaftp::types::FileType;
use suppaftp::FtpStream;

use crate::error::{Error, Result};
use crate::faults;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Repository {
    Baseline,
    DailyUpdate,
}

impl Repository {
    /// Remote directory name for this repository.
    pub fn dir_name(&self) -> &'static str {
        match self {
            Repository::Baseline => "baseline",
            Repository::DailyUpdate => "updatefiles",
        }
    }
}

impl std::fmt::Display for Repository {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// One downloadable archive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteFileEntry {
    /// Archive stem, e.g. `medline17n0001`.
    pub name: String,
    pub repository: Repository,
    pub compressed_size: u64,
    /// Hex MD5 digest from the server's sidecar, when one exists.
    pub checksum: Option<String>,
}

impl RemoteFileEntry {
    pub fn archive_name(&self) -> String {
        format!("{}.xml.gz", self.name)
    }

    pub fn sidecar_name(&self) -> String {
        format!("{}.xml.gz.md5", self.name)
    }
}

/// Ordered collection of remote archives, baseline entries first.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub entries: Vec<RemoteFileEntry>,
    pub fetched_at: DateTime<Utc>,
}

/// Raw listing item as reported by an endpoint.
#[derive(Debug, Clone)]
pub struct ListedFile {
    pub file_name: String,
    pub size: u64,
}

/// Transport abstraction over the repository layout.
pub trait RemoteEndpoint: Send {
    /// Names and sizes of the files in one repository directory. A missing
    /// directory lists as empty.
    fn list(&mut self, repo: Repository) -> Result<Vec<ListedFile>>;

    /// Streams one file into `out`, returning the byte count.
    fn fetch(&mut self, repo: Repository, file_name: &str, out: &mut dyn Write) -> Result<u64>;

    /// Fetches a small auxiliary file (digest sidecar) whole; `None` when
    /// the server does not have it.
    fn fetch_small(&mut self, repo: Repository, file_name: &str) -> Result<Option<Vec<u8>>>;
}

/// Picks the endpoint binding from the URL scheme. Bare paths bind to the
/// local-directory endpoint.
pub fn endpoint_for_url(url: &str) -> Result<Box<dyn RemoteEndpoint>> {
    if let Some(rest) = url.strip_prefix("file://") {
        return Ok(Box::new(FileEndpoint::new(PathBuf::from(rest))));
    }
    if url.starts_with("http://") || url.starts_with("https://") {
        return Ok(Box::new(HttpEndpoint::new(url)?));
    }
    if url.starts_with("ftp://") {
        return Ok(Box::new(FtpEndpoint::new(url)?));
    }
    if url.contains("://") {
        return Err(Error::Config(format!(
            "unsupported mirror-url scheme in '{url}' (expected file://, http(s)://, or ftp://)"
        )));
    }
    Ok(Box::new(FileEndpoint::new(PathBuf::from(url))))
}

// === listing ==========================================================

/// Lists both repositories and resolves digest sidecars, returning entries
/// baseline-first, each repository sorted by name.
pub fn list_remote_files(endpoint: &mut dyn RemoteEndpoint) -> Result<Manifest> {
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for repo in [Repository::Baseline, Repository::DailyUpdate] {
        let listed = endpoint.list(repo)?;
        let sidecars: std::collections::HashSet<&str> = listed
            .iter()
            .filter(|f| f.file_name.ends_with(".xml.gz.md5"))
            .map(|f| f.file_name.as_str())
            .collect();
        let mut archives: Vec<&ListedFile> = listed
            .iter()
            .filter(|f| f.file_name.ends_with(".xml.gz"))
            .collect();
        archives.sort_by(|a, b| a.file_name.cmp(&b.file_name));
        for file in archives {
            let name = file
                .file_name
                .trim_end_matches(".xml.gz")
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(Error::ListingParse(format!(
                    "archive name {name} listed more than once"
                )));
            }
            if file.size == 0 {
                tracing::warn!(file = %file.file_name, "skipping zero-size listing entry");
                continue;
            }
            let sidecar = format!("{}.md5", file.file_name);
            let checksum = if sidecars.contains(sidecar.as_str()) {
                endpoint
                    .fetch_small(repo, &sidecar)?
                    .and_then(|bytes| parse_md5_sidecar(&bytes))
            } else {
                None
            };
            entries.push(RemoteFileEntry {
                name,
                repository: repo,
                compressed_size: file.size,
                checksum,
            });
        }
    }
    Ok(Manifest {
        entries,
        fetched_at: Utc::now(),
    })
}

/// Accepts `MD5(name)= hex`, `hex  name`, or a bare hex digest.
pub fn parse_md5_sidecar(bytes: &[u8]) -> Option<String> {
    let text = String::from_utf8_lossy(bytes);
    let line = text.lines().next()?.trim();
    let candidate = if let Some(pos) = line.find('=') {
        line[pos + 1..].trim()
    } else {
        line.split_whitespace().next()?
    };
    let hex: String = candidate.to_lowercase();
    if hex.len() == 32 && hex.bytes().all(|b| b.is_ascii_hexdigit()) {
        Some(hex)
    } else {
        None
    }
}

// === download =========================================================

/// Backoff schedule for retryable download failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub delays: Vec<Duration>,
}

impl RetryPolicy {
    /// 3 retries with exponential backoff, for unattended runs.
    pub fn standard() -> RetryPolicy {
        RetryPolicy {
            delays: vec![
                Duration::from_secs(1),
                Duration::from_secs(4),
                Duration::from_secs(16),
            ],
        }
    }

    /// No retries; used by tests.
    pub fn none() -> RetryPolicy {
        RetryPolicy { delays: Vec::new() }
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn md5_of_file(path: &Path) -> Result<String> {
    let mut file = BufReader::new(File::open(path)?);
    let mut hasher = Md5::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex_digest(&hasher.finalize()))
}

fn map_disk_error(e: io::Error, path: &Path) -> Error {
    if e.raw_os_error() == Some(28) {
        Error::DiskFull(path.to_path_buf())
    } else {
        Error::Io(e)
    }
}

/// Counts bytes through to the inner writer; the crash-test hook fires by
/// byte offset.
struct DownloadWriter<'a, W: Write> {
    inner: W,
    file_stem: &'a str,
    written: u64,
}

impl<W: Write> Write for DownloadWriter<'_, W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.written += n as u64;
        faults::during_download(self.file_stem, self.written);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Verifies a file already on disk against the entry's checksum (or size
/// when no checksum is known).
fn local_copy_is_valid(path: &Path, entry: &RemoteFileEntry) -> bool {
    match &entry.checksum {
        Some(expected) => md5_of_file(path).map(|got| got == *expected).unwrap_or(false),
        None => fs::metadata(path)
            .map(|m| m.len() == entry.compressed_size)
            .unwrap_or(false),
    }
}

/// Downloads one archive into `dest_dir` and returns its final path.
///
/// The transfer is atomic at the destination: bytes stream into a `.part`
/// temp name and only a fully verified file is renamed into place. A valid
/// file already present skips the transfer entirely.
pub fn download(
    endpoint: &mut dyn RemoteEndpoint,
    entry: &RemoteFileEntry,
    dest_dir: &Path,
    retry: &RetryPolicy,
) -> Result<PathBuf> {
    fs::create_dir_all(dest_dir)?;
    let final_path = dest_dir.join(entry.archive_name());
    if final_path.exists() && local_copy_is_valid(&final_path, entry) {
        tracing::debug!(file = %entry.archive_name(), "reusing verified local copy");
        return Ok(final_path);
    }
    let tmp_path = dest_dir.join(format!("{}.part", entry.archive_name()));

    let mut attempt = 0usize;
    loop {
        let result = fetch_once(endpoint, entry, &tmp_path);
        match result {
            Ok(()) => break,
            Err(e @ Error::Connection(_)) => {
                let _ = fs::remove_file(&tmp_path);
                if attempt < retry.delays.len() {
                    tracing::warn!(
                        file = %entry.archive_name(),
                        attempt = attempt + 1,
                        "transfer failed, retrying: {e}"
                    );
                    std::thread::sleep(retry.delays[attempt]);
                    attempt += 1;
                } else {
                    return Err(e);
                }
            }
            Err(e) => {
                let _ = fs::remove_file(&tmp_path);
                return Err(e);
            }
        }
    }

    if let Some(expected) = &entry.checksum {
        let got = md5_of_file(&tmp_path)?;
        if got != *expected {
            let _ = fs::remove_file(&tmp_path);
            return Err(Error::Checksum {
                name: entry.archive_name(),
                expected: expected.clone(),
                actual: got,
            });
        }
    }

    fs::rename(&tmp_path, &final_path)?;
    Ok(final_path)
}

/// One transfer attempt; a short read against the listed size counts as a
/// connection failure so the retry loop covers truncated transfers.
fn fetch_once(
    endpoint: &mut dyn RemoteEndpoint,
    entry: &RemoteFileEntry,
    tmp_path: &Path,
) -> Result<()> {
    let file = File::create(tmp_path).map_err(|e| map_disk_error(e, tmp_path))?;
    let mut writer = DownloadWriter {
        inner: BufWriter::new(file),
        file_stem: &entry.name,
        written: 0,
    };
    let written = endpoint.fetch(entry.repository, &entry.archive_name(), &mut writer)?;
    writer.flush().map_err(|e| map_disk_error(e, tmp_path))?;
    if entry.compressed_size > 0 && written != entry.compressed_size {
        return Err(Error::Connection(format!(
            "{}: transferred {written} bytes, listing says {}",
            entry.archive_name(),
            entry.compressed_size
        )));
    }
    Ok(())
}

// === extraction =======================================================

/// Streaming gzip extraction next to the input file (`x.xml.gz` -> `x.xml`).
/// Memory use is a fixed decompression buffer regardless of archive size.
pub fn extract(gz_path: &Path) -> Result<PathBuf> {
    let out_path = match gz_path.to_str() {
        Some(s) if s.ends_with(".gz") => PathBuf::from(&s[..s.len() - 3]),
        _ => gz_path.with_extension("extracted.xml"),
    };
    let tmp_path = PathBuf::from(format!("{}.part", out_path.display()));

    let input = BufReader::new(File::open(gz_path)?);
    let mut decoder = flate2::bufread::GzDecoder::new(input);
    let mut writer = BufWriter::new(
        File::create(&tmp_path).map_err(|e| map_disk_error(e, &tmp_path))?,
    );

    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = match decoder.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) => {
                drop(writer);
                let _ = fs::remove_file(&tmp_path);
                return Err(Error::CorruptArchive {
                    path: gz_path.to_path_buf(),
                    detail: e.to_string(),
                });
            }
        };
        if let Err(e) = writer.write_all(&buf[..n]) {
            drop(writer);
            let _ = fs::remove_file(&tmp_path);
            return Err(map_disk_error(e, &tmp_path));
        }
    }
    writer.flush().map_err(|e| map_disk_error(e, &tmp_path))?;
    drop(writer);
    fs::rename(&tmp_path, &out_path)?;
    Ok(out_path)
}

// === file:// binding ==================================================

/// Local-directory repository; doubles as the fixture transport in tests.
pub struct FileEndpoint {
    root: PathBuf,
}

impl FileEndpoint {
    pub fn new(root: PathBuf) -> FileEndpoint {
        FileEndpoint { root }
    }
}

impl RemoteEndpoint for FileEndpoint {
    fn list(&mut self, repo: Repository) -> Result<Vec<ListedFile>> {
        if !self.root.exists() {
            return Err(Error::Connection(format!(
                "mirror directory {} does not exist",
                self.root.display()
            )));
        }
        let dir = self.root.join(repo.dir_name());
        let mut out = Vec::new();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(_) => return Ok(out), // absent directory lists as empty
        };
        for entry in entries {
            let entry = entry?;
            if !entry.file_type()?.is_file() {
                continue;
            }
            out.push(ListedFile {
                file_name: entry.file_name().to_string_lossy().into_owned(),
                size: entry.metadata()?.len(),
            });
        }
        Ok(out)
    }

    fn fetch(&mut self, repo: Repository, file_name: &str, out: &mut dyn Write) -> Result<u64> {
        let path = self.root.join(repo.dir_name()).join(file_name);
        let mut file = BufReader::new(
            File::open(&path)
                .map_err(|e| Error::Connection(format!("cannot read {}: {e}", path.display())))?,
        );
        io::copy(&mut file, out).map_err(Error::Io)
    }

    fn fetch_small(&mut self, repo: Repository, file_name: &str) -> Result<Option<Vec<u8>>> {
        let path = self.root.join(repo.dir_name()).join(file_name);
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::Io(e)),
        }
    }
}

// === http(s) binding ==================================================

/// Directory-index HTTP mirror. Listing parses `href` targets from the
/// index page; sizes come from per-file HEAD requests.
pub struct HttpEndpoint {
    base: String,
    agent: ureq::Agent,
}

impl HttpEndpoint {
    pub fn new(url: &str) -> Result<HttpEndpoint> {
        let base = if url.ends_with('/') {
            url.to_string()
        } else {
            format!("{url}/")
        };
        Ok(HttpEndpoint {
            base,
            agent: ureq::AgentBuilder::new()
                .timeout_connect(Duration::from_secs(30))
                .build(),
        })
    }

    fn url_for(&self, repo: Repository, file_name: &str) -> String {
        format!("{}{}/{}", self.base, repo.dir_name(), file_name)
    }

    fn map_err(e: ureq::Error) -> Error {
        Error::Connection(e.to_string())
    }
}

/// Pulls href targets out of a directory index page.
fn parse_index_hrefs(html: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = html;
    while let Some(pos) = rest.find("href=\"") {
        rest = &rest[pos + 6..];
        if let Some(end) = rest.find('"') {
            let target = &rest[..end];
            let name = target.rsplit('/').next().unwrap_or(target);
            if !name.is_empty() {
                out.push(name.to_string());
            }
            rest = &rest[end..];
        } else {
            break;
        }
    }
    out
}

impl RemoteEndpoint for HttpEndpoint {
    fn list(&mut self, repo: Repository) -> Result<Vec<ListedFile>> {
        let url = format!("{}{}/", self.base, repo.dir_name());
        let response = match self.agent.get(&url).call() {
            Ok(r) => r,
            Err(ureq::Error::Status(404, _)) => return Ok(Vec::new()),
            Err(e) => return Err(Self::map_err(e)),
        };
        let html = response
            .into_string()
            .map_err(|e| Error::ListingParse(format!("index page unreadable: {e}")))?;
        let mut out = Vec::new();
        for name in parse_index_hrefs(&html) {
            if !name.ends_with(".xml.gz") && !name.ends_with(".xml.gz.md5") {
                continue;
            }
            let size = if name.ends_with(".xml.gz") {
                let head = self
                    .agent
                    .head(&self.url_for(repo, &name))
                    .call()
                    .map_err(Self::map_err)?;
                head.header("Content-Length")
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(0)
            } else {
                0
            };
            out.push(ListedFile {
                file_name: name,
                size,
            });
        }
        Ok(out)
    }

    fn fetch(&mut self, repo: Repository, file_name: &str, out: &mut dyn Write) -> Result<u64> {
        let response = self
            .agent
            .get(&self.url_for(repo, file_name))
            .call()
            .map_err(Self::map_err)?;
        let mut reader = response.into_reader();
        io::copy(&mut reader, out)
            .map_err(|e| Error::Connection(format!("transfer of {file_name} failed: {e}")))
    }

    fn fetch_small(&mut self, repo: Repository, file_name: &str) -> Result<Option<Vec<u8>>> {
        match self.agent.get(&self.url_for(repo, file_name)).call() {
            Ok(response) => {
                let mut bytes = Vec::new();
                response
                    .into_reader()
                    .read_to_end(&mut bytes)
                    .map_err(|e| Error::Connection(e.to_string()))?;
                Ok(Some(bytes))
            }
            Err(ureq::Error::Status(404, _)) => Ok(None),
            Err(e) => Err(Self::map_err(e)),
        }
    }
}

// === ftp binding ======================================================

/// Passive-mode FTP mirror with anonymous login.
pub struct FtpEndpoint {
    addr: String,
    base_path: String,
    stream: Option<FtpStream>,
}

impl FtpEndpoint {
    pub fn new(url: &str) -> Result<FtpEndpoint> {
        let parsed = url::Url::parse(url).map_err(|e| Error::Config(format!("bad ftp url: {e}")))?;
        let host = parsed
            .host_str()
            .ok_or_else(|| Error::Config(format!("ftp url {url} has no host")))?;
        let port = parsed.port().unwrap_or(21);
        let base_path = parsed.path().trim_end_matches('/').to_string();
        Ok(FtpEndpoint {
            addr: format!("{host}:{port}"),
            base_path,
            stream: None,
        })
    }

    fn connection(&mut self) -> Result<&mut FtpStream> {
        if self.stream.is_none() {
            let mut stream = FtpStream::connect(&self.addr)
                .map_err(|e| Error::Connection(format!("ftp connect {}: {e}", self.addr)))?;
            stream
                .login("anonymous", "medbase@localhost")
                .map_err(|e| Error::Connection(format!("ftp login: {e}")))?;
            stream
                .transfer_type(FileType::Binary)
                .map_err(|e| Error::Connection(format!("ftp type: {e}")))?;
            self.stream = Some(stream);
        }
        Ok(self.stream.as_mut().unwrap())
    }

    fn remote_dir(&self, repo: Repository) -> String {
        if self.base_path.is_empty() {
            repo.dir_name().to_string()
        } else {
            format!("{}/{}", self.base_path, repo.dir_name())
        }
    }

    /// Drop the cached connection so the next call reconnects.
    fn disconnect(&mut self) {
        if let Some(mut s) = self.stream.take() {
            let _ = s.quit();
        }
    }
}

impl RemoteEndpoint for FtpEndpoint {
    fn list(&mut self, repo: Repository) -> Result<Vec<ListedFile>> {
        let dir = self.remote_dir(repo);
        let conn = self.connection()?;
        let names = match conn.nlst(Some(&dir)) {
            Ok(n) => n,
            Err(suppaftp::FtpError::UnexpectedResponse(_)) => return Ok(Vec::new()),
            Err(e) => {
                self.disconnect();
                return Err(Error::Connection(format!("ftp nlst {dir}: {e}")));
            }
        };
        let mut out = Vec::new();
        for raw in names {
            let name = raw.rsplit('/').next().unwrap_or(&raw).to_string();
            if !name.ends_with(".xml.gz") && !name.ends_with(".xml.gz.md5") {
                continue;
            }
            let size = if name.ends_with(".xml.gz") {
                let conn = self.connection()?;
                conn.size(format!("{dir}/{name}"))
                    .map_err(|e| Error::Connection(format!("ftp size {name}: {e}")))?
                    as u64
            } else {
                0
            };
            out.push(ListedFile {
                file_name: name,
                size,
            });
        }
        Ok(out)
    }

    fn fetch(&mut self, repo: Repository, file_name: &str, out: &mut dyn Write) -> Result<u64> {
        let path = format!("{}/{}", self.remote_dir(repo), file_name);
        let conn = self.connection()?;
        let result = conn.retr(&path, |reader| {
            let mut total = 0u64;
            let mut buf = [0u8; 64 * 1024];
            loop {
                let n = reader
                    .read(&mut buf)
                    .map_err(suppaftp::FtpError::ConnectionError)?;
                if n == 0 {
                    break;
                }
                out.write_all(&buf[..n])
                    .map_err(suppaftp::FtpError::ConnectionError)?;
                total += n as u64;
            }
            Ok(total)
        });
        match result {
            Ok(total) => Ok(total),
            Err(e) => {
                self.disconnect();
                Err(Error::Connection(format!("ftp retr {path}: {e}")))
            }
        }
    }

    fn fetch_small(&mut self, repo: Repository, file_name: &str) -> Result<Option<Vec<u8>>> {
        let path = format!("{}/{}", self.remote_dir(repo), file_name);
        let conn = self.connection()?;
        let result = conn.retr(&path, |reader| {
            let mut bytes = Vec::new();
            reader
                .read_to_end(&mut bytes)
                .map_err(suppaftp::FtpError::ConnectionError)?;
            Ok(bytes)
        });
        match result {
            Ok(bytes) => Ok(Some(bytes)),
            Err(suppaftp::FtpError::UnexpectedResponse(_)) => Ok(None),
            Err(e) => {
                self.disconnect();
                Err(Error::Connection(format!("ftp retr {path}: {e}")))
            }
        }
    }
}

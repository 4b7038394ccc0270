//! Payload corpus: the cycled set of course-name search terms, each tagged
//! with whether the bundled target's datastore contains it.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

pub const MAX_NAME_BYTES: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayloadEntry {
    pub course_name: String,
    pub expected_present: bool,
}

/// Ordered, non-empty list of payload entries shared by all workers.
#[derive(Debug, Clone)]
pub struct PayloadCorpus {
    entries: Vec<PayloadEntry>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("payload corpus is empty")]
    Empty,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("failed to read corpus file: {0}")]
    Io(#[from] std::io::Error),
}

impl PayloadCorpus {
    pub fn new(entries: Vec<PayloadEntry>) -> Result<PayloadCorpus, CorpusError> {
        if entries.is_empty() {
            return Err(CorpusError::Empty);
        }
        for (i, entry) in entries.iter().enumerate() {
            if entry.course_name.is_empty() {
                return Err(CorpusError::Parse {
                    line: i + 1,
                    message: "course name must be non-empty".into(),
                });
            }
            if entry.course_name.len() > MAX_NAME_BYTES {
                return Err(CorpusError::Parse {
                    line: i + 1,
                    message: format!("course name exceeds {MAX_NAME_BYTES} bytes"),
                });
            }
        }
        Ok(PayloadCorpus { entries })
    }

    /// Built-in half present / half absent corpus aligned with the bundled
    /// target's default datastore.
    pub fn default_corpus() -> PayloadCorpus {
        let entries = [
            ("cse299", true),
            ("cse300", false),
            ("eee101", true),
            ("cse999", false),
            ("mat103", true),
            ("eng404", false),
            ("cse105", true),
            ("art777", false),
        ]
        .into_iter()
        .map(|(name, present)| PayloadEntry {
            course_name: name.to_string(),
            expected_present: present,
        })
        .collect();
        PayloadCorpus::new(entries).expect("built-in corpus is valid")
    }

    /// Parse a corpus file: one `<course_name>,<present|absent>` per line,
    /// `#` comments and blank lines allowed. The name may itself contain
    /// commas; the flag is taken after the last one.
    pub fn from_file(path: &Path) -> Result<PayloadCorpus, CorpusError> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((name, flag)) = trimmed.rsplit_once(',') else {
                return Err(CorpusError::Parse {
                    line,
                    message: "expected `<course_name>,<present|absent>`".into(),
                });
            };
            let name = name.trim();
            let expected_present = match flag.trim() {
                "present" => true,
                "absent" => false,
                other => {
                    return Err(CorpusError::Parse {
                        line,
                        message: format!("expected `present` or `absent`, got {other:?}"),
                    })
                }
            };
            if name.is_empty() {
                return Err(CorpusError::Parse {
                    line,
                    message: "course name must be non-empty".into(),
                });
            }
            if name.len() > MAX_NAME_BYTES {
                return Err(CorpusError::Parse {
                    line,
                    message: format!("course name exceeds {MAX_NAME_BYTES} bytes"),
                });
            }
            entries.push(PayloadEntry {
                course_name: name.to_string(),
                expected_present,
            });
        }
        PayloadCorpus::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PayloadEntry] {
        &self.entries
    }

    /// Payload -> expected_present lookup for oracle-mode tallies.
    pub fn expected_map(&self) -> HashMap<String, bool> {
        self.entries
            .iter()
            .map(|e| (e.course_name.clone(), e.expected_present))
            .collect()
    }

    /// Round-robin pick under a shared atomic cursor. Every entry's usage
    /// count across the run differs by at most one.
    pub fn next<'a>(&'a self, cursor: &PayloadCursor) -> &'a PayloadEntry {
        let tick = cursor.0.fetch_add(1, Ordering::Relaxed);
        &self.entries[(tick % self.entries.len() as u64) as usize]
    }
}

/// Shared round-robin cursor; the run seed sets its starting offset.
#[derive(Debug)]
pub struct PayloadCursor(AtomicU64);

impl PayloadCursor {
    pub fn new(seed: u64) -> PayloadCursor {
        PayloadCursor(AtomicU64::new(seed))
    }
}

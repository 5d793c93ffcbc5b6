use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{ExampleKey, ExampleResult, RunnerError};

/// Append-only JSONL log of finished examples.
pub struct Checkpoint {
    path: PathBuf,
    file: Mutex<File>,
}

impl Checkpoint {
    /// Open (creating if needed) and return the results already recorded.
    /// A torn final line from an interrupted write is ignored.
    pub fn open(path: impl AsRef<Path>) -> Result<(Checkpoint, HashMap<ExampleKey, ExampleResult>), RunnerError> {
        let path = path.as_ref().to_path_buf();
        let io = |e: std::io::Error| RunnerError::Io(format!("{}: {e}", path.display()));
        let mut done = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            let lines: Vec<String> = reader.lines().collect::<Result<_, _>>().map_err(io)?;
            let last = lines.len().saturating_sub(1);
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<ExampleResult>(line) {
                    Ok(r) => {
                        done.insert(r.key(), r);
                    }
                    Err(e) if i == last => log::warn!("ignoring torn checkpoint line {}: {e}", i + 1),
                    Err(e) => return Err(RunnerError::Checkpoint(format!("line {}: {e}", i + 1))),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        if std::fs::metadata(&path).map_err(io)?.len() > 0 && !ends_with_newline(&path).map_err(io)? {
            file.write_all(b"\n").map_err(io)?;
        }
        Ok((Checkpoint { path, file: Mutex::new(file) }, done))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, result: &ExampleResult) -> Result<(), RunnerError> {
        let mut line = serde_json::to_string(result).map_err(|e| RunnerError::Checkpoint(e.to_string()))?;
        line.push('\n');
        let mut f = self.file.lock().expect("checkpoint lock");
        f.write_all(line.as_bytes()).map_err(|e| RunnerError::Io(format!("{}: {e}", self.path.display())))
    }
}

fn ends_with_newline(path: &Path) -> std::io::Result<bool> {
    let bytes = std::fs::read(path)?;
    Ok(bytes.last() == Some(&b'\n'))
}

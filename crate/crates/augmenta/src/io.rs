//! On-disk formats: task JSONL plus manifest, instruction arrays, and the
//! JSONL streams produced by each pipeline stage.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use augmenta_core::instructgen::InstructionPool;
use augmenta_core::model::{AugmentationRecord, Example, Instruction, Origin, Split, TaskDataset, TaskKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord { path: PathBuf, line: usize, reason: String },
    #[error("{path}:{line}: classification example has no options")]
    MissingCandidates { path: PathBuf, line: usize },
    #[error("task `{task}` is declared by both {first} and {second}")]
    DuplicateTaskName {
        task: String,
        first: PathBuf,
        second: PathBuf,
    },
    #[error("{path}: {reason}")]
    InvalidTask { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Sidecar `<name>.task.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub task: String,
    pub kind: TaskKind,
}

/// One line of a task file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskLine {
    pub split: Split,
    pub input: String,
    pub output: String,
    #[serde(default)]
    pub options: Vec<String>,
}

pub const MANIFEST_SUFFIX: &str = ".task.json";

/// Loads every `<name>.task.json` manifest in `dir` together with its
/// `<name>.jsonl` data file. Tasks come back sorted by name.
pub fn load_tasks(dir: &Path) -> Result<Vec<TaskDataset>, IoError> {
    let mut manifests: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(MANIFEST_SUFFIX))
        .collect();
    manifests.sort();
    let mut tasks: Vec<(TaskDataset, PathBuf)> = Vec::new();
    for m in manifests {
        let task = load_task(&m)?;
        if let Some((_, first)) = tasks.iter().find(|(t, _)| t.task_name == task.task_name) {
            return Err(IoError::DuplicateTaskName {
                task: task.task_name,
                first: first.clone(),
                second: m,
            });
        }
        tasks.push((task, m));
    }
    tasks.sort_by(|a, b| a.0.task_name.cmp(&b.0.task_name));
    Ok(tasks.into_iter().map(|(t, _)| t).collect())
}

/// Loads one task from its manifest path.
pub fn load_task(manifest: &Path) -> Result<TaskDataset, IoError> {
    let text = fs::read_to_string(manifest).map_err(io_err(manifest))?;
    let meta: TaskManifest = serde_json::from_str(&text).map_err(|e| IoError::MalformedRecord {
        path: manifest.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    let stem = manifest.to_string_lossy();
    let data = PathBuf::from(format!("{}.jsonl", &stem[..stem.len() - MANIFEST_SUFFIX.len()]));
    let file = fs::File::open(&data).map_err(io_err(&data))?;
    let mut task = TaskDataset {
        task_name: meta.task,
        kind: meta.kind,
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&data))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TaskLine = serde_json::from_str(&line).map_err(|e| IoError::MalformedRecord {
            path: data.clone(),
            line: n + 1,
            reason: e.to_string(),
        })?;
        if task.kind == TaskKind::Classification && rec.options.is_empty() {
            return Err(IoError::MissingCandidates {
                path: data.clone(),
                line: n + 1,
            });
        }
        let ex = Example::new(rec.input, rec.output, rec.options);
        ex.validate().map_err(|e| IoError::MalformedRecord {
            path: data.clone(),
            line: n + 1,
            reason: e.to_string(),
        })?;
        match rec.split {
            Split::Train => task.train.push(ex),
            Split::Dev => task.dev.push(ex),
            Split::Test => task.test.push(ex),
        }
    }
    task.validate().map_err(|e| IoError::InvalidTask {
        path: data.clone(),
        reason: e.to_string(),
    })?;
    Ok(task)
}

/// Writes `task` as `<dir>/<name>.jsonl` plus its manifest.
pub fn write_task(dir: &Path, task: &TaskDataset) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = dir.join(format!("{}{MANIFEST_SUFFIX}", task.task_name));
    let meta = TaskManifest {
        task: task.task_name.clone(),
        kind: task.kind,
    };
    write_json(&manifest, &meta)?;
    let lines: Vec<TaskLine> = [Split::Train, Split::Dev, Split::Test]
        .into_iter()
        .flat_map(|s| {
            task.split(s).iter().map(move |e| TaskLine {
                split: s,
                input: e.input.clone(),
                output: e.output.clone(),
                options: e.candidates.clone(),
            })
        })
        .collect();
    write_jsonl(&dir.join(format!("{}.jsonl", task.task_name)), &lines)
}

/// Keeps the named tasks, in the order given. Unknown names are an error.
pub fn pick_tasks(all: &[TaskDataset], names: &[String]) -> Result<Vec<TaskDataset>, String> {
    names
        .iter()
        .map(|n| {
            all.iter()
                .find(|t| &t.task_name == n)
                .cloned()
                .ok_or_else(|| format!("unknown task `{n}`"))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstructionEntry {
    name: String,
    body: String,
    #[serde(default)]
    origin: Origin,
    /// Generation round that produced the entry; absent means 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    iteration: Option<usize>,
}

pub fn parse_instructions_json(text: &str, path: &Path) -> Result<Vec<Instruction>, IoError> {
    let entries: Vec<InstructionEntry> = serde_json::from_str(text).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            Instruction::new(&e.name, &e.body, e.origin).map_err(|err| IoError::MalformedRecord {
                path: path.to_path_buf(),
                line: i + 1,
                reason: err.to_string(),
            })
        })
        .collect()
}

/// Reads a JSON array of `{name, body, origin}`.
pub fn read_instructions(path: &Path) -> Result<Vec<Instruction>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_instructions_json(&text, path)
}

pub fn write_instructions(path: &Path, instructions: &[Instruction]) -> Result<(), IoError> {
    write_json(path, instructions)
}

/// An instruction array whose entries also carry `iteration`.
pub fn write_pool(path: &Path, pool: &InstructionPool) -> Result<(), IoError> {
    let entries: Vec<InstructionEntry> = pool
        .instructions
        .iter()
        .zip(&pool.provenance)
        .map(|(i, &it)| InstructionEntry {
            name: i.name.clone(),
            body: i.body.clone(),
            origin: i.origin,
            iteration: Some(it),
        })
        .collect();
    write_json(path, &entries)
}

/// Reads a pool file, or any plain instruction array.
pub fn read_pool(path: &Path) -> Result<InstructionPool, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let entries: Vec<InstructionEntry> = serde_json::from_str(&text).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let provenance = entries.iter().map(|e| e.iteration.unwrap_or(0)).collect();
    Ok(InstructionPool {
        instructions: parse_instructions_json(&text, path)?,
        provenance,
    })
}

/// One line of an augmentation-records file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLine {
    pub task: String,
    pub method_id: String,
    pub input: String,
    pub augmented_input: String,
    pub output: String,
    pub seed: u64,
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_fingerprint: Option<String>,
}

impl From<&AugmentationRecord> for RecordLine {
    fn from(r: &AugmentationRecord) -> Self {
        RecordLine {
            task: r.task_name.clone(),
            method_id: r.method_id.clone(),
            input: r.original.input.clone(),
            augmented_input: r.augmented_input.clone(),
            output: r.original.output.clone(),
            seed: r.seed,
            flags: r.flags.clone(),
            options: r.original.candidates.clone(),
            backend_fingerprint: r.backend_fingerprint.clone(),
        }
    }
}

impl From<RecordLine> for AugmentationRecord {
    fn from(l: RecordLine) -> Self {
        AugmentationRecord {
            task_name: l.task,
            method_id: l.method_id,
            original: Example::new(l.input, l.output, l.options),
            augmented_input: l.augmented_input,
            seed: l.seed,
            backend_fingerprint: l.backend_fingerprint,
            flags: l.flags,
        }
    }
}

pub fn write_records(path: &Path, records: &[AugmentationRecord]) -> Result<(), IoError> {
    let lines: Vec<RecordLine> = records.iter().map(RecordLine::from).collect();
    write_jsonl(path, &lines)
}

pub fn read_records(path: &Path) -> Result<Vec<AugmentationRecord>, IoError> {
    Ok(read_jsonl::<RecordLine>(path)?.into_iter().map(Into::into).collect())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| IoError::MalformedRecord {
            path: path.to_path_buf(),
            line: n + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Writes one compact JSON object per line via a temp file and rename.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IoError> {
    atomic_write(path, |w| {
        for item in items {
            serde_json::to_writer(&mut *w, item).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    atomic_write(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::other)?;
        w.write_all(b"\n")
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    atomic_write(path, |w| w.write_all(text.as_bytes()))
}

/// Writes through `<path>.tmp` and renames into place, creating parents.
pub fn atomic_write(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<(), IoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension(format!(
        "{}tmp",
        path.extension()
            .map(|e| format!("{}.", e.to_string_lossy()))
            .unwrap_or_default()
    ));
    let file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err(&tmp))?;
    drop(w);
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Distinct labels of a classification task, sorted.
pub fn label_set(task: &TaskDataset) -> BTreeSet<String> {
    task.examples().map(|e| e.output.clone()).collect()
}

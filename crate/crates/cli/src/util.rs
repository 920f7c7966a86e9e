use std::fmt::Display;
use std::path::{Path, PathBuf};

/// Exit-code class of a failed command.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, config or inputs, detected before any work starts.
    Validation(String),
    /// Anything that goes wrong once work has started.
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) => m,
        }
    }
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

pub trait Classify<T> {
    fn invalid(self) -> CmdResult<T>;
    fn runtime(self) -> CmdResult<T>;
}

impl<T, E: Display> Classify<T> for std::result::Result<T, E> {
    fn invalid(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Validation(e.to_string()))
    }

    fn runtime(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Runtime(e.to_string()))
    }
}

/// Files written by the current command; removed again unless committed.
#[derive(Default)]
pub struct Outputs {
    paths: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn track(&mut self, path: impl Into<PathBuf>) {
        self.paths.push(path.into());
    }

    /// Tracks every successfully written path, then surfaces the first error.
    pub fn collect<I, E>(&mut self, results: I) -> CmdResult<()>
    where
        I: IntoIterator<Item = std::result::Result<Vec<PathBuf>, E>>,
        E: Display,
    {
        let mut first = None;
        for r in results {
            match r {
                Ok(paths) => self.paths.extend(paths),
                Err(e) => {
                    first.get_or_insert(e.to_string());
                }
            }
        }
        first.map_or(Ok(()), |e| Err(Failure::Runtime(e)))
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.paths {
            if std::fs::remove_file(p).is_ok() {
                log::warn!("removed partial output {}", p.display());
            }
        }
    }
}

/// Maps `f` over `items` on up to `threads` scoped workers, preserving order.
/// Each item's work must depend only on the item, so the result is the same
/// for every thread count.
pub fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(move || c.iter().map(f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// `dir/<id>.<ext>`
pub fn sample_file(dir: &Path, id: &str, ext: &str) -> PathBuf {
    dir.join(format!("{id}.{ext}"))
}

//! The public ARC JSON task format:
//! `{"train": [{"input": [[int]], "output": [[int]]}, ...], "test": [...]}`.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use super::{Grid, Pair, Task, MAX_GRID_DIM, NUM_COLORS};
use crate::error::{Error, Result};

#[derive(Serialize)]
struct TaskFile<'a> {
    train: &'a [Pair],
    test: &'a [Pair],
}

fn malformed(path: &Path, detail: impl Into<String>) -> Error {
    Error::MalformedTask { path: path.to_path_buf(), detail: detail.into() }
}

fn parse_grid(path: &Path, location: &str, v: &Value) -> Result<Grid> {
    let rows = v.as_array().ok_or_else(|| malformed(path, format!("{location}: expected an array of rows")))?;
    if rows.is_empty() {
        return Err(Error::EmptyGrid { path: path.to_path_buf(), location: location.into() });
    }
    let mut cells = Vec::new();
    let mut expected = None;
    for (r, row) in rows.iter().enumerate() {
        let row = row.as_array().ok_or_else(|| malformed(path, format!("{location}: row {r} is not an array")))?;
        let expected = *expected.get_or_insert(row.len());
        if row.is_empty() {
            return Err(Error::EmptyGrid { path: path.to_path_buf(), location: location.into() });
        }
        if row.len() != expected {
            return Err(Error::RaggedGrid {
                path: path.to_path_buf(),
                location: location.into(),
                row: r,
                found: row.len(),
                expected,
            });
        }
        for (c, cell) in row.iter().enumerate() {
            let value = cell
                .as_i64()
                .ok_or_else(|| malformed(path, format!("{location}[{r}][{c}]: cell is not an integer")))?;
            if !(0..NUM_COLORS as i64).contains(&value) {
                return Err(Error::CellOutOfRange {
                    path: path.to_path_buf(),
                    location: format!("{location}[{r}][{c}]"),
                    value,
                });
            }
            cells.push(value as u8);
        }
    }
    let cols = expected.unwrap_or(0);
    if rows.len() > MAX_GRID_DIM || cols > MAX_GRID_DIM {
        return Err(Error::GridTooLarge {
            path: path.to_path_buf(),
            location: location.into(),
            rows: rows.len(),
            cols,
        });
    }
    Grid::new(rows.len(), cols, cells)
}

fn parse_pairs(path: &Path, root: &Value, key: &str) -> Result<Vec<Pair>> {
    let list =
        root.get(key).and_then(Value::as_array).ok_or_else(|| malformed(path, format!("missing \"{key}\" array")))?;
    if list.is_empty() {
        return Err(malformed(path, format!("\"{key}\" has no pairs")));
    }
    list.iter()
        .enumerate()
        .map(|(i, pair)| {
            let grid = |field: &str| {
                let location = format!("{key}[{i}].{field}");
                let v = pair.get(field).ok_or_else(|| malformed(path, format!("{location} missing")))?;
                parse_grid(path, &location, v)
            };
            Ok(Pair { input: grid("input")?, output: grid("output")? })
        })
        .collect()
}

/// Parses ARC JSON text; `path` is used for error messages and the task id.
pub fn parse_arc_str(path: &Path, text: &str) -> Result<Task> {
    let root: Value = serde_json::from_str(text).map_err(|e| malformed(path, e.to_string()))?;
    if !root.is_object() {
        return Err(malformed(path, "top level is not an object"));
    }
    let train = parse_pairs(path, &root, "train")?;
    let test = parse_pairs(path, &root, "test")?;
    let task_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Task::new(task_id, train, test)
}

pub fn load_arc_file(path: impl AsRef<Path>) -> Result<Task> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_arc_str(path, &text)
}

/// Loads every `*.json` task in `dir` (except `manifest.json`), sorted by file name.
pub fn load_arc_dir(dir: impl AsRef<Path>) -> Result<Vec<Task>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != "manifest.json"))
        .collect();
    paths.sort();
    paths.iter().map(load_arc_file).collect()
}

pub fn task_to_json(task: &Task) -> String {
    serde_json::to_string(&TaskFile { train: &task.train, test: &task.test }).expect("grids serialize")
}

/// Writes `<dir>/<task_id>.json` and returns its path.
pub fn write_arc_file(task: &Task, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let path = dir.as_ref().join(format!("{}.json", task.task_id));
    std::fs::write(&path, task_to_json(task)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Task> {
        parse_arc_str(Path::new("/tmp/t1.json"), text)
    }

    #[test]
    fn minimal_task() {
        let t = parse(r#"{"train":[{"input":[[1]],"output":[[2]]}],"test":[{"input":[[1]],"output":[[2]]}]}"#).unwrap();
        assert_eq!(t.task_id, "t1");
        assert_eq!((t.train.len(), t.test.len()), (1, 1));
        assert_eq!(t.train[0].output.cells(), &[2]);
    }

    #[test]
    fn distinct_errors() {
        let out_of_range =
            parse(r#"{"train":[{"input":[[10]],"output":[[2]]}],"test":[{"input":[[1]],"output":[[2]]}]}"#);
        assert!(
            matches!(&out_of_range, Err(Error::CellOutOfRange { value: 10, location, .. }) if location == "train[0].input[0][0]"),
            "{out_of_range:?}"
        );
        let ragged =
            parse(r#"{"train":[{"input":[[1,2],[3]],"output":[[2]]}],"test":[{"input":[[1]],"output":[[2]]}]}"#);
        assert!(matches!(ragged, Err(Error::RaggedGrid { row: 1, found: 1, expected: 2, .. })));
        let empty = parse(r#"{"train":[{"input":[],"output":[[2]]}],"test":[{"input":[[1]],"output":[[2]]}]}"#);
        assert!(matches!(empty, Err(Error::EmptyGrid { .. })));
        assert!(matches!(parse("{not json"), Err(Error::MalformedTask { .. })));
        assert!(matches!(parse(r#"{"train":[]}"#), Err(Error::MalformedTask { .. })));
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"train":[{"input":[[1,2],[3,4]],"output":[[2]]}],"test":[{"input":[[0]],"output":[[9,9]]}]}"#;
        let t = parse(text).unwrap();
        assert_eq!(task_to_json(&t), text);
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

/// A CSV table kept in memory until everything has been computed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    /// Header of `prefix_0 .. prefix_{n-1}`.
    pub fn with_vectors(fixed: &[&str], vectors: &[(&str, usize)], tail: &[&str]) -> Self {
        let mut t = Table::new(fixed);
        for (prefix, n) in vectors {
            t.header.extend((0..*n).map(|i| format!("{prefix}_{i}")));
        }
        t.header.extend(tail.iter().map(|s| s.to_string()));
        t
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Shortest round-trip formatting, so outputs are byte-stable.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn nums<'a, I: IntoIterator<Item = &'a f64> + 'a>(xs: I) -> impl Iterator<Item = String> + 'a {
    xs.into_iter().map(|x| num(*x))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Artifact {
    Csv(Table),
    Json(Value),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Output {
    pub name: String,
    pub artifact: Artifact,
}

impl Output {
    pub fn csv(name: &str, table: Table) -> Self {
        Output { name: name.to_string(), artifact: Artifact::Csv(table) }
    }

    pub fn json(name: &str, value: impl Serialize) -> Result<Self> {
        let mut v = serde_json::to_value(value)?;
        flatten_vectors(&mut v);
        Ok(Output { name: name.to_string(), artifact: Artifact::Json(v) })
    }
}

/// nalgebra writes a column vector as `[[data..], n, null]`; keep just the data.
/// Matrices (`[[data..], rows, cols]`) are left alone.
fn flatten_vectors(v: &mut Value) {
    match v {
        Value::Array(items) => {
            let is_vector = items.len() == 3
                && items[2].is_null()
                && items[1].is_u64()
                && matches!(&items[0], Value::Array(d) if d.len() as u64 == items[1].as_u64().unwrap_or(u64::MAX));
            if is_vector {
                let data = items.swap_remove(0);
                *v = data;
                return;
            }
            items.iter_mut().for_each(flatten_vectors);
        }
        Value::Object(map) => map.values_mut().for_each(flatten_vectors),
        _ => {}
    }
}

#[derive(Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: &'a str,
    pub seed: u64,
    pub workers: usize,
    pub config: &'a C,
    pub outputs: Vec<String>,
}

fn write_one(dir: &Path, out: &Output) -> Result<PathBuf> {
    let path = dir.join(&out.name);
    match &out.artifact {
        Artifact::Csv(t) => {
            let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
            w.write_record(&t.header)?;
            for r in &t.rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        Artifact::Json(v) => {
            let mut text = serde_json::to_string_pretty(v)?;
            text.push('\n');
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(path)
}

/// Writes every output and then `manifest.json`; returns the paths written.
pub fn write_all<C: Serialize>(
    dir: &Path,
    experiment: &str,
    seed: u64,
    workers: usize,
    config: &C,
    outputs: &[Output],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut paths = outputs.iter().map(|o| write_one(dir, o)).collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        tool: "raysense",
        version: env!("CARGO_PKG_VERSION"),
        experiment,
        seed,
        workers,
        config,
        outputs: outputs.iter().map(|o| o.name.clone()).collect(),
    };
    paths.push(write_one(dir, &Output::json("manifest.json", manifest)?)?);
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-17, 1e300] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn column_vectors_are_flattened() {
        let o = Output::json("v.json", (nalgebra::DVector::from_vec(vec![1.0, 2.0]), nalgebra::DMatrix::<f64>::zeros(1, 2))).unwrap();
        let Artifact::Json(v) = o.artifact else { unreachable!() };
        assert_eq!(v[0], serde_json::json!([1.0, 2.0]));
        assert_eq!(v[1][1], 1);
    }

    #[test]
    fn writes_csv_json_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::with_vectors(&["i"], &[("x", 2)], &["ok"]);
        t.push(vec!["0".into(), num(0.5), num(-1.0), "true".into()]);
        let outs = vec![Output::csv("a.csv", t), Output::json("b.json", vec![1, 2]).unwrap()];
        let paths = write_all(dir.path(), "scatter", 7, 1, &"cfg", &outs).unwrap();
        assert_eq!(paths.len(), 3);
        let text = fs::read_to_string(dir.path().join("a.csv")).unwrap();
        assert_eq!(text, "i,x_0,x_1,ok\n0,0.5,-1.0,true\n");
        let m: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["seed"], 7);
        assert_eq!(m["outputs"][1], "b.json");
    }
}

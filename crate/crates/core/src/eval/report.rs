use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ClassScore, Confusion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Material,
    Shape,
    Reid,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Material => "material",
            Task::Shape => "shape",
            Task::Reid => "reid",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "material" => Ok(Task::Material),
            "shape" => Ok(Task::Shape),
            "reid" => Ok(Task::Reid),
            _ => Err(Error::invalid(format!("unknown task {s:?}; expected material, shape or reid"))),
        }
    }
}

/// One named value, e.g. `("model", "macro_f1", 0.91)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub seed: u64,
    pub config_hash: String,
    pub rows: Vec<MetricRow>,
    #[serde(default)]
    pub per_class: Vec<ClassScore>,
    #[serde(default)]
    pub confusion: Option<Confusion>,
}

impl EvalReport {
    pub fn new(task: Task, seed: u64, config_hash: impl Into<String>) -> Self {
        Self {
            task,
            seed,
            config_hash: config_hash.into(),
            rows: Vec::new(),
            per_class: Vec::new(),
            confusion: None,
        }
    }

    pub fn push(&mut self, method: &str, metric: &str, value: f64) {
        self.rows.push(MetricRow {
            method: method.into(),
            metric: metric.into(),
            value,
        });
    }

    pub fn get(&self, method: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(cm) = &self.confusion {
            for s in &self.per_class {
                if s.class >= cm.n_classes() || cm.support(s.class) != s.support {
                    return Err(Error::invalid(format!("class {} support disagrees with the confusion matrix", s.class)));
                }
            }
        }
        Ok(())
    }

    /// Long-format CSV: `task,seed,method,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("task,seed,method,metric,value\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{:?}\n", self.task, self.seed, r.method, r.metric, r.value));
        }
        s
    }

    /// Writes `<stem>.json`, `<stem>.csv` and, when present, `<stem>_confusion.csv`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        self.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let w = |name: String, bytes: Vec<u8>| {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
        };
        w(format!("{stem}.json"), serde_json::to_vec_pretty(self)?)?;
        w(format!("{stem}.csv"), self.to_csv().into_bytes())?;
        if let Some(cm) = &self.confusion {
            w(format!("{stem}_confusion.csv"), cm.to_csv().into_bytes())?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let r: Self = serde_json::from_slice(&std::fs::read(path).map_err(|e| Error::io(path, e))?)?;
        r.validate()?;
        Ok(r)
    }
}

/// All `*.json` reports directly inside `dir`, sorted by file name.
pub fn read_reports(dir: &Path) -> Result<Vec<EvalReport>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| EvalReport::read(p)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub task: Task,
    pub method: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; zero for a single report.
    pub sd: f64,
}

impl AggregateRow {
    pub const CSV_HEADER: &'static str = "task,method,metric,n,mean,sd";

    pub fn to_csv_line(&self) -> String {
        format!("{},{},{},{},{:?},{:?}", self.task, self.method, self.metric, self.n, self.mean, self.sd)
    }
}

/// Mean and standard deviation of every (task, method, metric) across reports.
pub fn aggregate(reports: &[EvalReport]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(Task, String, String), Vec<f64>> = BTreeMap::new();
    for r in reports {
        for row in &r.rows {
            groups
                .entry((r.task, row.method.clone(), row.metric.clone()))
                .or_default()
                .push(row.value);
        }
    }
    groups
        .into_iter()
        .map(|((task, method, metric), v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            AggregateRow { task, method, metric, n, mean, sd }
        })
        .collect()
}

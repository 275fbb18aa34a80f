//! Dataset model, CSV ingestion, validation, and descriptive summaries.
//!
//! A [`Dataset`] is a long-form worker-by-task response table with at most one
//! record per (worker, task) pair. Workers and tasks are mapped to dense
//! indices in order of first appearance; both sides must carry at least two
//! records each, otherwise variance decomposition is unidentifiable and
//! ingestion fails loudly.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{fmt_sig9, mean, sample_sd};

/// Measurement scale of the response variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleKind {
    Binary,
    Ordinal,
    Nominal,
}

/// Response scale: kind, number of categories, and ordered category labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseScale {
    kind: ScaleKind,
    labels: Vec<String>,
}

impl ResponseScale {
    /// Build a scale from a kind and ordered labels.
    ///
    /// Labels must be unique and nonempty; a binary scale must have exactly
    /// two labels.
    pub fn new(kind: ScaleKind, labels: Vec<String>) -> Result<Self, DataError> {
        if labels.len() < 2 {
            return Err(DataError::InvalidScale(format!(
                "need at least 2 category labels, got {}",
                labels.len()
            )));
        }
        if kind == ScaleKind::Binary && labels.len() != 2 {
            return Err(DataError::InvalidScale(format!(
                "binary scale requires exactly 2 labels, got {}",
                labels.len()
            )));
        }
        let mut seen = HashMap::new();
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() {
                return Err(DataError::InvalidScale(format!("label {i} is empty")));
            }
            if seen.insert(l.clone(), i).is_some() {
                return Err(DataError::InvalidScale(format!("duplicate label {l:?}")));
            }
        }
        Ok(Self { kind, labels })
    }

    /// Convenience constructor for a binary scale.
    pub fn binary(label0: &str, label1: &str) -> Result<Self, DataError> {
        Self::new(
            ScaleKind::Binary,
            vec![label0.to_string(), label1.to_string()],
        )
    }

    pub fn kind(&self) -> ScaleKind {
        self.kind
    }

    /// Number of categories K.
    pub fn num_categories(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Map a label to its category index.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// One worker-task response row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub worker_id: String,
    pub task_id: String,
    /// Category index in `[0, K)`.
    pub response: usize,
    /// Per-worker completion order, when recorded by the platform.
    pub order: Option<u64>,
    pub duration_seconds: Option<f64>,
    /// Ground-truth category index, when known.
    pub truth: Option<usize>,
}

/// Validated long-form response table with dense worker/task index maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    scale: ResponseScale,
    records: Vec<ResponseRecord>,
    workers: Vec<String>,
    tasks: Vec<String>,
    worker_index: HashMap<String, usize>,
    task_index: HashMap<String, usize>,
    // Dense (worker, task) indices aligned with `records`.
    rows: Vec<(u32, u32)>,
}

/// Per-worker descriptive summary used by the auxiliary evidence filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSummary {
    pub worker_id: String,
    pub n_tasks: usize,
    pub mean_duration: Option<f64>,
    /// Fraction of records matching truth, over records that carry truth.
    pub accuracy: Option<f64>,
}

/// Population-level cutoffs for the auxiliary filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationCutoffs {
    pub time_mean: Option<f64>,
    pub time_mean_minus_1sd: Option<f64>,
    pub acc_mean: Option<f64>,
    pub acc_mean_minus_1sd: Option<f64>,
}

/// Column-name remapping for [`parse_dataset`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParseOptions {
    pub worker_col: String,
    pub task_col: String,
    pub response_col: String,
    pub order_col: String,
    pub duration_col: String,
    pub truth_col: String,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            worker_col: "worker_id".into(),
            task_col: "task_id".into(),
            response_col: "response".into(),
            order_col: "order".into(),
            duration_col: "duration_seconds".into(),
            truth_col: "truth".into(),
        }
    }
}

/// Errors raised during ingestion and validation.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("unknown category label {value:?} (declared labels: {labels:?})")]
    UnknownCategoryLabel { value: String, labels: Vec<String> },
    #[error("duplicate record for worker {worker:?}, task {task:?}")]
    DuplicateWorkerTaskPair { worker: String, task: String },
    #[error("{entity} {id:?} has {count} record(s); at least 2 are required")]
    TooFewObservations {
        entity: &'static str,
        id: String,
        count: usize,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid scale: {0}")]
    InvalidScale(String),
    #[error("record {index}: {message}")]
    InvalidRecord { index: usize, message: String },
    #[error("worker {0:?} not present in dataset")]
    WorkerNotFound(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Dataset {
    /// Validate records against a scale and build the dense index maps.
    pub fn from_records(
        scale: ResponseScale,
        records: Vec<ResponseRecord>,
    ) -> Result<Self, DataError> {
        let k = scale.num_categories();
        let mut workers = Vec::new();
        let mut tasks = Vec::new();
        let mut worker_index = HashMap::new();
        let mut task_index = HashMap::new();
        let mut seen_pairs = HashMap::new();
        let mut rows = Vec::with_capacity(records.len());

        for (i, r) in records.iter().enumerate() {
            if r.response >= k {
                return Err(DataError::InvalidRecord {
                    index: i,
                    message: format!("response index {} out of range [0, {k})", r.response),
                });
            }
            if let Some(t) = r.truth {
                if t >= k {
                    return Err(DataError::InvalidRecord {
                        index: i,
                        message: format!("truth index {t} out of range [0, {k})"),
                    });
                }
            }
            if let Some(d) = r.duration_seconds {
                if !(d >= 0.0) {
                    return Err(DataError::InvalidRecord {
                        index: i,
                        message: format!("duration_seconds {d} must be nonnegative"),
                    });
                }
            }
            let wi = match worker_index.entry(r.worker_id.clone()) {
                Entry::Occupied(e) => *e.get(),
                Entry::Vacant(e) => {
                    let idx = workers.len();
                    workers.push(r.worker_id.clone());
                    e.insert(idx);
                    idx
                }
            };
            let tj = match task_index.entry(r.task_id.clone()) {
                Entry::Occupied(e) => *e.get(),
                Entry::Vacant(e) => {
                    let idx = tasks.len();
                    tasks.push(r.task_id.clone());
                    e.insert(idx);
                    idx
                }
            };
            if seen_pairs.insert((wi, tj), i).is_some() {
                return Err(DataError::DuplicateWorkerTaskPair {
                    worker: r.worker_id.clone(),
                    task: r.task_id.clone(),
                });
            }
            rows.push((wi as u32, tj as u32));
        }

        let mut worker_counts = vec![0usize; workers.len()];
        let mut task_counts = vec![0usize; tasks.len()];
        for &(wi, tj) in &rows {
            worker_counts[wi as usize] += 1;
            task_counts[tj as usize] += 1;
        }
        for (j, &c) in task_counts.iter().enumerate() {
            if c < 2 {
                return Err(DataError::TooFewObservations {
                    entity: "task",
                    id: tasks[j].clone(),
                    count: c,
                });
            }
        }
        for (i, &c) in worker_counts.iter().enumerate() {
            if c < 2 {
                return Err(DataError::TooFewObservations {
                    entity: "worker",
                    id: workers[i].clone(),
                    count: c,
                });
            }
        }

        Ok(Self {
            scale,
            records,
            workers,
            tasks,
            worker_index,
            task_index,
            rows,
        })
    }

    pub fn scale(&self) -> &ResponseScale {
        &self.scale
    }

    pub fn records(&self) -> &[ResponseRecord] {
        &self.records
    }

    pub fn n_workers(&self) -> usize {
        self.workers.len()
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Worker ids in dense-index order.
    pub fn worker_ids(&self) -> &[String] {
        &self.workers
    }

    /// Task ids in dense-index order.
    pub fn task_ids(&self) -> &[String] {
        &self.tasks
    }

    pub fn worker_index(&self) -> &HashMap<String, usize> {
        &self.worker_index
    }

    pub fn task_index(&self) -> &HashMap<String, usize> {
        &self.task_index
    }

    /// Dense (worker, task) indices aligned with [`Dataset::records`].
    pub fn dense_rows(&self) -> &[(u32, u32)] {
        &self.rows
    }

    /// Mean number of records per worker.
    pub fn mean_tasks_per_worker(&self) -> f64 {
        self.records.len() as f64 / self.workers.len().max(1) as f64
    }

    /// A worker's responses in completion order.
    ///
    /// The explicit `order` column is honored when every record of the worker
    /// carries it; otherwise file row order within the worker is used.
    pub fn response_sequence(&self, worker: &str) -> Result<Vec<usize>, DataError> {
        let &wi = self
            .worker_index
            .get(worker)
            .ok_or_else(|| DataError::WorkerNotFound(worker.to_string()))?;
        let mut recs: Vec<(usize, &ResponseRecord)> = self
            .records
            .iter()
            .enumerate()
            .filter(|(i, _)| self.rows[*i].0 as usize == wi)
            .map(|(i, r)| (i, r))
            .collect();
        if recs.iter().all(|(_, r)| r.order.is_some()) {
            recs.sort_by_key(|(i, r)| (r.order.unwrap(), *i));
        }
        Ok(recs.into_iter().map(|(_, r)| r.response).collect())
    }

    /// Serialize to CSV with the standard column names.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "worker_id",
            "task_id",
            "response",
            "order",
            "duration_seconds",
            "truth",
        ])?;
        for r in &self.records {
            w.write_record([
                r.worker_id.as_str(),
                r.task_id.as_str(),
                self.scale.labels()[r.response].as_str(),
                &r.order.map(|o| o.to_string()).unwrap_or_default(),
                &r.duration_seconds.map(fmt_sig9).unwrap_or_default(),
                &r.truth
                    .map(|t| self.scale.labels()[t].clone())
                    .unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Serialize to a CSV file via a temporary file plus rename.
    pub fn write_csv_path(&self, path: &Path) -> Result<(), DataError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        crate::pipeline::write_atomic(path, &buf)?;
        Ok(())
    }
}

/// Parse and validate a CSV file into a [`Dataset`].
///
/// Required columns: worker id, task id, response (names per `options`).
/// Optional columns: order, duration, truth; empty cells mean absent.
pub fn parse_dataset(
    path: &Path,
    scale: &ResponseScale,
    options: &ParseOptions,
) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    parse_dataset_reader(file, scale, options)
}

/// Same as [`parse_dataset`] but from any reader.
pub fn parse_dataset_reader<R: Read>(
    reader: R,
    scale: &ResponseScale,
    options: &ParseOptions,
) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let worker_col = col(&options.worker_col)
        .ok_or_else(|| DataError::MissingColumn(options.worker_col.clone()))?;
    let task_col =
        col(&options.task_col).ok_or_else(|| DataError::MissingColumn(options.task_col.clone()))?;
    let response_col = col(&options.response_col)
        .ok_or_else(|| DataError::MissingColumn(options.response_col.clone()))?;
    let order_col = col(&options.order_col);
    let duration_col = col(&options.duration_col);
    let truth_col = col(&options.truth_col);

    let map_label = |value: &str| -> Result<usize, DataError> {
        scale
            .index_of(value)
            .ok_or_else(|| DataError::UnknownCategoryLabel {
                value: value.to_string(),
                labels: scale.labels().to_vec(),
            })
    };

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let get = |c: usize| row.get(c).unwrap_or("");
        let response = map_label(get(response_col))?;
        let order = match order_col.map(get) {
            Some("") | None => None,
            Some(v) => Some(v.parse::<u64>().map_err(|e| DataError::InvalidRecord {
                index: i,
                message: format!("bad order value {v:?}: {e}"),
            })?),
        };
        let duration_seconds = match duration_col.map(get) {
            Some("") | None => None,
            Some(v) => Some(v.parse::<f64>().map_err(|e| DataError::InvalidRecord {
                index: i,
                message: format!("bad duration value {v:?}: {e}"),
            })?),
        };
        let truth = match truth_col.map(get) {
            Some("") | None => None,
            Some(v) => Some(map_label(v)?),
        };
        records.push(ResponseRecord {
            worker_id: get(worker_col).to_string(),
            task_id: get(task_col).to_string(),
            response,
            order,
            duration_seconds,
            truth,
        });
    }
    Dataset::from_records(scale.clone(), records)
}

/// One summary per worker, in dense-index order.
pub fn worker_summaries(d: &Dataset) -> Vec<WorkerSummary> {
    let mut durations: Vec<Vec<f64>> = vec![Vec::new(); d.n_workers()];
    let mut counts = vec![0usize; d.n_workers()];
    let mut truth_total = vec![0usize; d.n_workers()];
    let mut truth_hits = vec![0usize; d.n_workers()];
    for (r, &(wi, _)) in d.records().iter().zip(d.dense_rows()) {
        let wi = wi as usize;
        counts[wi] += 1;
        if let Some(dur) = r.duration_seconds {
            durations[wi].push(dur);
        }
        if let Some(t) = r.truth {
            truth_total[wi] += 1;
            if r.response == t {
                truth_hits[wi] += 1;
            }
        }
    }
    d.worker_ids()
        .iter()
        .enumerate()
        .map(|(wi, id)| WorkerSummary {
            worker_id: id.clone(),
            n_tasks: counts[wi],
            mean_duration: mean(&durations[wi]),
            accuracy: (truth_total[wi] > 0)
                .then(|| truth_hits[wi] as f64 / truth_total[wi] as f64),
        })
        .collect()
}

/// Population means and one-SD-below-mean cutoffs over per-worker summaries.
///
/// Requires at least two workers carrying a field for that field's cutoffs to
/// be present; errors only when *no* requested field has enough data.
pub fn population_cutoffs(summaries: &[WorkerSummary]) -> Result<PopulationCutoffs, DataError> {
    let times: Vec<f64> = summaries.iter().filter_map(|s| s.mean_duration).collect();
    let accs: Vec<f64> = summaries.iter().filter_map(|s| s.accuracy).collect();
    let pair = |xs: &[f64]| -> (Option<f64>, Option<f64>) {
        if xs.len() < 2 {
            return (None, None);
        }
        let m = mean(xs).unwrap();
        let sd = sample_sd(xs).unwrap();
        (Some(m), Some(m - sd))
    };
    let (time_mean, time_lo) = pair(&times);
    let (acc_mean, acc_lo) = pair(&accs);
    if time_mean.is_none() && acc_mean.is_none() {
        return Err(DataError::InsufficientData(
            "fewer than 2 workers carry duration or accuracy data".into(),
        ));
    }
    Ok(PopulationCutoffs {
        time_mean,
        time_mean_minus_1sd: time_lo,
        acc_mean,
        acc_mean_minus_1sd: acc_lo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_scale() -> ResponseScale {
        ResponseScale::binary("Different", "Same").unwrap()
    }

    fn rec(w: &str, t: &str, resp: usize) -> ResponseRecord {
        ResponseRecord {
            worker_id: w.into(),
            task_id: t.into(),
            response: resp,
            order: None,
            duration_seconds: None,
            truth: None,
        }
    }

    #[test]
    fn rejects_task_with_single_record() {
        // Two workers sharing one task, plus a second task with one record.
        let csv = "worker_id,task_id,response\nw1,t1,Same\nw2,t1,Different\nw1,t2,Same\n";
        let err = parse_dataset_reader(csv.as_bytes(), &binary_scale(), &ParseOptions::default())
            .unwrap_err();
        assert!(matches!(
            err,
            DataError::TooFewObservations { entity: "task", .. }
        ));
    }

    #[test]
    fn complete_grid_parses_with_dense_indices() {
        let mut csv = String::from("worker_id,task_id,response\n");
        for w in 0..10 {
            for t in 0..10 {
                csv.push_str(&format!("w{w},t{t},{}\n", if (w + t) % 2 == 0 { "Same" } else { "Different" }));
            }
        }
        let d = parse_dataset_reader(csv.as_bytes(), &binary_scale(), &ParseOptions::default())
            .unwrap();
        assert_eq!(d.records().len(), 100);
        assert_eq!(d.n_workers(), 10);
        assert_eq!(d.n_tasks(), 10);
        assert_eq!(d.worker_index()["w0"], 0);
        assert_eq!(d.worker_index()["w9"], 9);
        assert_eq!(d.task_index()["t9"], 9);
    }

    #[test]
    fn labels_map_to_declared_indices() {
        let csv = "worker_id,task_id,response\nw1,t1,Same\nw2,t1,Different\nw1,t2,Same\nw2,t2,Same\n";
        let d = parse_dataset_reader(csv.as_bytes(), &binary_scale(), &ParseOptions::default())
            .unwrap();
        assert_eq!(d.records()[0].response, 1); // "Same" is label index 1
        assert_eq!(d.records()[1].response, 0);
    }

    #[test]
    fn unknown_label_is_rejected() {
        let csv = "worker_id,task_id,response\nw1,t1,Maybe\nw2,t1,Same\n";
        let err = parse_dataset_reader(csv.as_bytes(), &binary_scale(), &ParseOptions::default())
            .unwrap_err();
        assert!(matches!(err, DataError::UnknownCategoryLabel { .. }));
    }

    #[test]
    fn duplicate_pair_is_rejected() {
        let recs = vec![rec("w1", "t1", 0), rec("w1", "t1", 1)];
        let err = Dataset::from_records(binary_scale(), recs).unwrap_err();
        assert!(matches!(err, DataError::DuplicateWorkerTaskPair { .. }));
    }

    #[test]
    fn missing_column_is_reported() {
        let csv = "worker,task_id,response\nw1,t1,Same\n";
        let err = parse_dataset_reader(csv.as_bytes(), &binary_scale(), &ParseOptions::default())
            .unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(c) if c == "worker_id"));
    }

    #[test]
    fn csv_round_trip_preserves_dataset() {
        let csv = "worker_id,task_id,response,order,duration_seconds,truth\n\
                   w1,t1,Same,2,1.5,Same\n\
                   w1,t2,Different,1,,\n\
                   w2,t1,Different,1,3.25,Same\n\
                   w2,t2,Same,2,0.5,Different\n";
        let d = parse_dataset_reader(csv.as_bytes(), &binary_scale(), &ParseOptions::default())
            .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let d2 =
            parse_dataset_reader(buf.as_slice(), &binary_scale(), &ParseOptions::default())
                .unwrap();
        assert_eq!(d, d2);
    }

    #[test]
    fn response_sequence_honors_order_column() {
        let csv = "worker_id,task_id,response,order\n\
                   w1,t1,Same,3\nw1,t2,Different,1\nw1,t3,Same,2\n\
                   w2,t1,Same,1\nw2,t2,Same,2\nw2,t3,Same,3\n";
        let d = parse_dataset_reader(csv.as_bytes(), &binary_scale(), &ParseOptions::default())
            .unwrap();
        assert_eq!(d.response_sequence("w1").unwrap(), vec![0, 1, 1]);
    }

    #[test]
    fn response_sequence_falls_back_to_file_order() {
        let csv = "worker_id,task_id,response\n\
                   w1,t1,Same\nw1,t2,Different\n\
                   w2,t1,Same\nw2,t2,Same\n";
        let d = parse_dataset_reader(csv.as_bytes(), &binary_scale(), &ParseOptions::default())
            .unwrap();
        assert_eq!(d.response_sequence("w1").unwrap(), vec![1, 0]);
    }

    #[test]
    fn summaries_compute_accuracy_and_durations() {
        let mut records = Vec::new();
        for t in 0..80 {
            records.push(ResponseRecord {
                worker_id: "w1".into(),
                task_id: format!("t{t}"),
                response: if t < 60 { 1 } else { 0 },
                order: None,
                duration_seconds: None,
                truth: Some(1),
            });
            records.push(ResponseRecord {
                worker_id: "w2".into(),
                task_id: format!("t{t}"),
                response: 1,
                order: None,
                duration_seconds: Some(if t % 2 == 0 { 10.0 } else { 20.0 }),
                truth: Some(1),
            });
        }
        let d = Dataset::from_records(binary_scale(), records).unwrap();
        let s = worker_summaries(&d);
        assert_eq!(s[0].n_tasks, 80);
        assert!((s[0].accuracy.unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(s[0].mean_duration, None);
        assert!((s[1].mean_duration.unwrap() - 15.0).abs() < 1e-12);
        let total: usize = s.iter().map(|x| x.n_tasks).sum();
        assert_eq!(total, d.records().len());
    }

    #[test]
    fn cutoffs_hand_arithmetic() {
        let summaries = vec![
            WorkerSummary {
                worker_id: "a".into(),
                n_tasks: 2,
                mean_duration: Some(10.0),
                accuracy: None,
            },
            WorkerSummary {
                worker_id: "b".into(),
                n_tasks: 2,
                mean_duration: Some(20.0),
                accuracy: None,
            },
            WorkerSummary {
                worker_id: "c".into(),
                n_tasks: 2,
                mean_duration: Some(30.0),
                accuracy: None,
            },
        ];
        let c = population_cutoffs(&summaries).unwrap();
        assert!((c.time_mean.unwrap() - 20.0).abs() < 1e-12);
        assert!((c.time_mean_minus_1sd.unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(c.acc_mean, None);
    }

    #[test]
    fn cutoffs_identical_values_and_degenerate() {
        let mk = |d: f64| WorkerSummary {
            worker_id: "x".into(),
            n_tasks: 2,
            mean_duration: Some(d),
            accuracy: None,
        };
        let c = population_cutoffs(&[mk(5.0), mk(5.0), mk(5.0)]).unwrap();
        assert_eq!(c.time_mean.unwrap(), c.time_mean_minus_1sd.unwrap());

        let err = population_cutoffs(&[mk(5.0)]).unwrap_err();
        assert!(matches!(err, DataError::InsufficientData(_)));
    }

    #[test]
    fn binary_scale_requires_two_labels() {
        assert!(ResponseScale::new(ScaleKind::Binary, vec!["a".into()]).is_err());
        assert!(ResponseScale::new(
            ScaleKind::Binary,
            vec!["a".into(), "b".into(), "c".into()]
        )
        .is_err());
        assert!(ResponseScale::new(ScaleKind::Ordinal, vec!["a".into(), "a".into()]).is_err());
    }
}

//! Evaluation metrics and the per-epoch training log.

use std::fmt::Write as _;

use crate::dense::DenseMatrix;
use crate::scalar::Scalar;

/// Fraction of masked nodes whose argmax logit equals the label.
/// Ties resolve to the lowest class index.
pub fn accuracy<T: Scalar>(logits: &DenseMatrix<T>, labels: &[usize], mask: &[usize]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    for &n in mask {
        let row = logits.row(n);
        let mut best = 0usize;
        for (j, &x) in row.iter().enumerate().skip(1) {
            if x > row[best] {
                best = j;
            }
        }
        if best == labels[n] {
            hits += 1;
        }
    }
    hits as f64 / mask.len() as f64
}

/// Micro-averaged F1 over masked nodes for multi-label targets. A class is
/// predicted when its logit is positive (sigmoid above one half). Returns 0
/// when there are no predictions and no positives.
pub fn micro_f1<T: Scalar>(logits: &DenseMatrix<T>, targets: &DenseMatrix<T>, mask: &[usize]) -> f64 {
    let half = T::from_f64(0.5).unwrap();
    let (mut tp, mut fp, mut fne) = (0u64, 0u64, 0u64);
    for &n in mask {
        for j in 0..logits.cols() {
            let pred = logits.get(n, j) > T::zero();
            let pos = targets.get(n, j) > half;
            match (pred, pos) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                (false, false) => {}
            }
        }
    }
    let denom = 2 * tp + fp + fne;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Mean cosine similarity between endpoint rows of `z` over the undirected
/// edge list. An endpoint with zero norm contributes cosine 0.
pub fn smoothness<T: Scalar>(z: &DenseMatrix<T>, edges: &[(usize, usize)]) -> f64 {
    if edges.is_empty() {
        return 0.0;
    }
    let mut total = 0.0f64;
    for &(u, v) in edges {
        let (a, b) = (z.row(u), z.row(v));
        let mut dot = 0.0f64;
        let mut na = 0.0f64;
        let mut nb = 0.0f64;
        for j in 0..z.cols() {
            let (x, y) = (a[j].to_f64().unwrap(), b[j].to_f64().unwrap());
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        if na > 0.0 && nb > 0.0 {
            total += dot / (na.sqrt() * nb.sqrt());
        }
    }
    total / edges.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug)]
pub struct MetricRow {
    pub epoch: usize,
    pub student: usize,
    pub split: Split,
    pub loss_ce: f64,
    pub loss_ds: f64,
    pub loss_fea: f64,
    pub loss_str: f64,
    pub loss_total: f64,
    /// Accuracy for single-label tasks, micro-F1 for multi-label.
    pub metric: f64,
    pub smoothness: f64,
}

#[derive(Clone, Debug, Default)]
pub struct MetricLog {
    pub rows: Vec<MetricRow>,
}

impl MetricLog {
    pub const CSV_HEADER: &'static str =
        "epoch,student,split,loss_ce,loss_ds,loss_fea,loss_str,loss_total,metric,smoothness";

    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.student,
                r.split.name(),
                r.loss_ce,
                r.loss_ds,
                r.loss_fea,
                r.loss_str,
                r.loss_total,
                r.metric,
                r.smoothness
            )
            .unwrap();
        }
        out
    }
}

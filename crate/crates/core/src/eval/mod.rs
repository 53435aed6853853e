//! Accuracy, benefit ratio, seed aggregation, clustering of `[MASK]`
//! representations and vocabulary attribution.

mod attribution;
mod cluster;
mod metrics;
mod table;

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

pub use attribution::{
    attribution_scores, integrated_scores, method_scores, vocab_attribution, AttributionMethod,
    AttributionReport, ClassAttribution,
};
pub use cluster::{kmeans, silhouette, silhouette_kmeans, ClusterReport, KMEANS_RESTARTS};
pub use metrics::{
    accuracy, aggregate_seeds, benefit_ratio, median, BenefitInput, SeedSummary, STD_CONVENTION,
};
pub use table::{compare_table, CellResult, CompareTable, TableRow, ABSENT};

use crate::error::{Error, Result};

/// One row per sample: the representation coordinates, the true label and
/// the cluster id.
pub fn write_representation_csv(
    path: &Path,
    reps: &Array2<f64>,
    labels: &[usize],
    clusters: &[usize],
) -> Result<()> {
    if labels.len() != reps.nrows() || clusters.len() != reps.nrows() {
        return Err(Error::shape("representation rows", reps.nrows(), labels.len()));
    }
    let mut out = String::new();
    for j in 0..reps.ncols() {
        write!(out, "d{j},").unwrap();
    }
    out.push_str("label,cluster\n");
    for ((row, y), c) in reps.outer_iter().zip(labels).zip(clusters) {
        for x in row {
            write!(out, "{x},").unwrap();
        }
        writeln!(out, "{y},{c}").unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

//! Classification metrics from raw scores.
//!
//! cargo run --example metrics_report

use eegdm::metrics::MetricsReport;
use ndarray::array;

fn main() -> eegdm::Result<()> {
    let y = [0, 0, 1, 1, 2, 2, 2];
    let scores = array![
        [0.7, 0.2, 0.1],
        [0.3, 0.4, 0.3],
        [0.1, 0.8, 0.1],
        [0.2, 0.5, 0.3],
        [0.1, 0.1, 0.8],
        [0.5, 0.2, 0.3],
        [0.2, 0.2, 0.6],
    ];
    let report = MetricsReport::from_scores(&y, &scores)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

//! CSV and summary writers.
//!
//! Plain text, one figure per file, floats in Rust's shortest round-trip
//! form so reruns are byte-identical and the files diff cleanly.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use helpersim::env::MetricsTrace;

/// Per-stage regret: one column per peer plus the worst player.
pub fn regret_csv(trace: &MetricsTrace) -> String {
    let mut out = String::from("stage");
    for i in 0..trace.n_peers() {
        let _ = write!(out, ",peer_{i}");
    }
    out.push_str(",worst\n");
    for record in trace.records() {
        let _ = write!(out, "{}", record.stage);
        let mut worst = 0.0f64;
        for &r in &record.regrets {
            let _ = write!(out, ",{r}");
            worst = worst.max(r);
        }
        let _ = writeln!(out, ",{worst}");
    }
    out
}

/// Per-stage welfare against the flat centralized optimum.
pub fn welfare_csv(trace: &MetricsTrace, r_star: f64) -> String {
    let mut out = String::from("stage,welfare,r_star\n");
    for record in trace.records() {
        let _ = writeln!(out, "{},{},{r_star}", record.stage, record.welfare);
    }
    out
}

/// Per-stage helper connection counts.
pub fn loads_csv(trace: &MetricsTrace) -> String {
    let mut out = String::from("stage");
    for j in 0..trace.n_helpers() {
        let _ = write!(out, ",helper_{j}");
    }
    out.push('\n');
    for record in trace.records() {
        let _ = write!(out, "{}", record.stage);
        for &load in record.profile.loads() {
            let _ = write!(out, ",{load}");
        }
        out.push('\n');
    }
    out
}

/// Per-stage peer streaming rates.
pub fn rates_csv(trace: &MetricsTrace) -> String {
    let mut out = String::from("stage");
    for i in 0..trace.n_peers() {
        let _ = write!(out, ",peer_{i}");
    }
    out.push('\n');
    for record in trace.records() {
        let _ = write!(out, "{}", record.stage);
        for &r in &record.rates {
            let _ = write!(out, ",{r}");
        }
        out.push('\n');
    }
    out
}

/// Per-stage server load (per-peer shortfall sum) against the flat minimum
/// bandwidth deficit.
pub fn server_csv(trace: &MetricsTrace, deficit: f64) -> String {
    let mut out = String::from("stage,server_load_shortfall_sum,min_bandwidth_deficit\n");
    for record in trace.records() {
        let _ = writeln!(out, "{},{},{deficit}", record.stage, record.server_load);
    }
    out
}

/// Writes the selected metric files for one replication.
pub fn write_metric_files(
    dir: &Path,
    trace: &MetricsTrace,
    files: &[String],
    r_star: f64,
    deficit: f64,
) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for name in files {
        let content = match name.as_str() {
            "regret" => regret_csv(trace),
            "welfare" => welfare_csv(trace, r_star),
            "loads" => loads_csv(trace),
            "rates" => rates_csv(trace),
            "server" => server_csv(trace, deficit),
            other => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidInput,
                    format!("unknown metrics file {other:?}"),
                ))
            }
        };
        fs::write(dir.join(format!("{name}.csv")), content)?;
    }
    Ok(())
}

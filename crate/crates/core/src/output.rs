//! Files written for a finished run.

use std::fs;
use std::io;
use std::path::Path;

use crate::engine::RunOutput;

pub const REPORT_FILE: &str = "report.json";
pub const RESULTS_FILE: &str = "results.csv";
pub const QUEUES_FILE: &str = "queues.csv";
pub const CONTROLLER_FILE: &str = "controller.csv";
pub const OFFLOADS_FILE: &str = "offloads.csv";
pub const EVENTS_FILE: &str = "events.ndjson";

pub fn report_json(out: &RunOutput) -> String {
    serde_json::to_string_pretty(&out.report).expect("report serializes") + "\n"
}

/// Writes `report.json`, the CSV traces and, when recorded, the event log.
pub fn write_run(dir: &Path, out: &RunOutput) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(REPORT_FILE), report_json(out))?;
    fs::write(dir.join(RESULTS_FILE), out.collector.results_csv())?;
    fs::write(dir.join(QUEUES_FILE), out.collector.queues_csv())?;
    fs::write(dir.join(CONTROLLER_FILE), out.collector.controller_csv())?;
    fs::write(dir.join(OFFLOADS_FILE), out.collector.offloads_csv())?;
    if let Some(events) = out.event_log_ndjson() {
        fs::write(dir.join(EVENTS_FILE), events)?;
    }
    Ok(())
}

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobStatus {
    Refined,
    SkippedNoHand,
    Error,
}

/// Files written for one job, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Artifacts {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guidance: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub intermediates: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobEntry {
    /// Input image as named in the manifest.
    pub image: PathBuf,
    pub status: JobStatus,
    pub seed: u64,
    pub artifacts: Artifacts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// Wall-clock time; only recorded on request since it breaks
    /// reproducible reports.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub refined: usize,
    pub skipped_no_hand: usize,
    pub error: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobReport {
    pub summary: Summary,
    pub entries: Vec<JobEntry>,
}

impl JobReport {
    /// Sorts entries by image path and tallies them.
    pub fn from_entries(mut entries: Vec<JobEntry>) -> Self {
        entries.sort_by(|a, b| a.image.cmp(&b.image));
        let mut summary = Summary { total: entries.len(), ..Summary::default() };
        for e in &entries {
            match e.status {
                JobStatus::Refined => summary.refined += 1,
                JobStatus::SkippedNoHand => summary.skipped_no_hand += 1,
                JobStatus::Error => summary.error += 1,
            }
        }
        Self { summary, entries }
    }

    pub fn has_errors(&self) -> bool {
        self.summary.error > 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(image: &str, status: JobStatus) -> JobEntry {
        JobEntry {
            image: image.into(),
            status,
            seed: 0,
            artifacts: Artifacts::default(),
            message: None,
            elapsed_ms: None,
        }
    }

    #[test]
    fn report_sorts_and_counts() {
        let r = JobReport::from_entries(vec![
            entry("c.png", JobStatus::Error),
            entry("a.png", JobStatus::Refined),
            entry("b.png", JobStatus::SkippedNoHand),
        ]);
        let names: Vec<_> = r.entries.iter().map(|e| e.image.to_str().unwrap()).collect();
        assert_eq!(names, ["a.png", "b.png", "c.png"]);
        assert_eq!(r.summary, Summary { total: 3, refined: 1, skipped_no_hand: 1, error: 1 });
        assert!(r.has_errors());
    }

    #[test]
    fn status_serializes_kebab_case() {
        assert_eq!(serde_json::to_string(&JobStatus::SkippedNoHand).unwrap(), "\"skipped-no-hand\"");
    }
}

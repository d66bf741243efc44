//! Persisted fits. An archive is written once and never modified; analysis
//! commands re-prepare the dataset and refuse to run when its fingerprint
//! differs from the one recorded at fit time.

use std::path::Path;

use bayesflow::data::PrepareOptions;
use bayesflow::sampler::diagnose;
use bayesflow::{Dataset, Diagnostics, Draws, ModelSpec, SamplerConfig, Verdict};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 of the prepared dataset's canonical JSON form, hex encoded.
pub fn fingerprint(dataset: &Dataset) -> String {
    let bytes = serde_json::to_vec(dataset).expect("dataset serializes");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArchive {
    pub tool_version: String,
    pub dataset_fingerprint: String,
    pub prepare: PrepareOptions,
    pub spec: ModelSpec,
    pub sampler: SamplerConfig,
    pub verdict: Verdict,
    pub reasons: Vec<String>,
    /// Kept as raw JSON: non-finite diagnostics (an infinite R̂, say) are
    /// written as `null` and would not read back into `f64`.
    pub diagnostics: serde_json::Value,
    pub draws: Draws,
}

impl FitArchive {
    pub fn new(
        dataset: &Dataset,
        prepare: PrepareOptions,
        sampler: SamplerConfig,
        draws: Draws,
        diagnostics: Diagnostics,
    ) -> CliResult<Self> {
        let spec = draws.require_spec()?.clone();
        Ok(FitArchive {
            tool_version: TOOL_VERSION.to_string(),
            dataset_fingerprint: fingerprint(dataset),
            prepare,
            spec,
            sampler,
            verdict: diagnostics.verdict,
            reasons: diagnostics.reasons.clone(),
            diagnostics: serde_json::to_value(&diagnostics)?,
            draws,
        })
    }

    /// Diagnostics of the archived draws; equal to the stored ones, which
    /// [`FitArchive::load`] verifies.
    pub fn diagnostics(&self) -> Diagnostics {
        diagnose(&self.draws)
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("archive serializes")
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_json()).map_err(|e| CliError::io(path, e))
    }

    /// Reads an archive and checks that its stored diagnostics are exactly
    /// those recomputed from its draws.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let archive: FitArchive = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: not a fit archive: {e}", path.display())))?;
        let recomputed = diagnose(&archive.draws);
        if serde_json::to_value(&recomputed)? != archive.diagnostics
            || recomputed.verdict != archive.verdict
        {
            return Err(CliError::Input(format!(
                "{}: stored diagnostics do not match the draws",
                path.display()
            )));
        }
        Ok(archive)
    }

    pub fn check_dataset(&self, dataset: &Dataset) -> CliResult<()> {
        let fp = fingerprint(dataset);
        if fp != self.dataset_fingerprint {
            return Err(CliError::Input(format!(
                "dataset fingerprint {fp} does not match the fit's {}",
                self.dataset_fingerprint
            )));
        }
        Ok(())
    }

    /// Analysis commands refuse fail-marked archives unless forced.
    pub fn require_pass(&self, force: bool) -> CliResult<()> {
        if self.passed() || force {
            Ok(())
        } else {
            Err(CliError::Verdict(format!(
                "fit of {} is marked fail ({}); rerun with --force to use it anyway",
                self.spec.variant,
                self.reasons.join("; ")
            )))
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

//! External tools run as subprocesses: a speech recognizer for WER and a
//! PESQ scorer.
//!
//! Recognizer contract: `<command> <args...> <wav>` prints one transcript line.
//! PESQ contract: `<command> <args...> <reference.wav> <degraded.wav>` prints one number.

use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalTool {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl ExternalTool {
    fn run(&self, files: &[&Path]) -> Result<String> {
        let out = Command::new(&self.command)
            .args(&self.args)
            .args(files)
            .output()
            .map_err(|e| Error::Plugin(format!("cannot run {}: {e}", self.command)))?;
        if !out.status.success() {
            let err = String::from_utf8_lossy(&out.stderr);
            return Err(Error::Plugin(format!("{} exited with {}: {}", self.command, out.status, err.trim())));
        }
        String::from_utf8(out.stdout).map_err(|_| Error::Plugin(format!("{} printed non-UTF-8 output", self.command)))
    }

    /// First line of recognizer output.
    pub fn transcribe(&self, wav: &Path) -> Result<String> {
        Ok(self.run(&[wav])?.lines().next().unwrap_or_default().trim().to_string())
    }

    /// Score printed by a PESQ tool.
    pub fn pesq(&self, reference: &Path, degraded: &Path) -> Result<f64> {
        let text = self.run(&[reference, degraded])?;
        text.split_whitespace()
            .rev()
            .find_map(|tok| tok.parse::<f64>().ok())
            .ok_or_else(|| Error::Plugin(format!("{} printed no score: {text:?}", self.command)))
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;

    #[test]
    fn recognizer_reads_first_line() {
        let tool = ExternalTool { command: "sh".into(), args: vec!["-c".into(), "echo bin blue; echo extra".into(), "sh".into()] };
        assert_eq!(tool.transcribe(Path::new("x.wav")).unwrap(), "bin blue");
    }

    #[test]
    fn pesq_parses_last_number_and_reports_failures() {
        let tool = ExternalTool { command: "sh".into(), args: vec!["-c".into(), "echo 'MOS = 2.5'".into(), "sh".into()] };
        assert_eq!(tool.pesq(Path::new("a"), Path::new("b")).unwrap(), 2.5);
        let bad = ExternalTool { command: "sh".into(), args: vec!["-c".into(), "exit 3".into(), "sh".into()] };
        assert!(matches!(bad.pesq(Path::new("a"), Path::new("b")), Err(Error::Plugin(_))));
        let missing = ExternalTool { command: "/nonexistent/tool".into(), args: vec![] };
        assert!(missing.transcribe(Path::new("a")).is_err());
    }
}

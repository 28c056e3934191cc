//! Run manifest: resolved settings, content hashes of inputs and outputs,
//! and stage timings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::artifacts::sha256_bytes;

pub const TOOL: &str = concat!("desknmt ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    pub tool: String,
    pub seed: u64,
    pub config: Vec<(String, String)>,
    /// Input role → sha256 of the file contents.
    pub inputs: BTreeMap<String, String>,
    /// Output file name → sha256, in production order.
    pub outputs: Vec<(String, String)>,
    /// Stage → wall-clock seconds. Not covered by [`RunManifest::digest`].
    pub timings: Vec<(String, f64)>,
}

impl RunManifest {
    pub fn new(seed: u64, config: Vec<(String, String)>) -> Self {
        Self {
            tool: TOOL.to_string(),
            seed,
            config,
            ..Self::default()
        }
    }

    /// Hash over everything except timings. Equal digests mean the same
    /// tool and settings turned the same inputs into the same outputs.
    pub fn digest(&self) -> String {
        let mut text = String::new();
        self.write_body(&mut text);
        sha256_bytes(text.as_bytes())
    }

    fn write_body(&self, out: &mut String) {
        let _ = writeln!(out, "[run]\ntool = {}\nseed = {}", self.tool, self.seed);
        out.push_str("\n[config]\n");
        for (k, v) in &self.config {
            let _ = writeln!(out, "{k} = {v}");
        }
        out.push_str("\n[inputs]\n");
        for (k, v) in &self.inputs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out.push_str("\n[outputs]\n");
        for (k, v) in &self.outputs {
            let _ = writeln!(out, "{k} = {v}");
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        self.write_body(&mut out);
        out.push_str("\n[timings]\n");
        for (stage, secs) in &self.timings {
            let _ = writeln!(out, "{stage} = {secs:.3}");
        }
        let _ = writeln!(out, "\n[digest]\nsha256 = {}", self.digest());
        out
    }
}

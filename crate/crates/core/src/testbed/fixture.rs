use std::path::Path;

use crate::error::{Error, Result};

/// Stored oracle optimum of one instance, as plain `key = value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleFixture {
    pub instance: String,
    pub n_dense: usize,
    pub x: Vec<f64>,
    pub value: f64,
}

impl OracleFixture {
    pub fn to_text(&self) -> String {
        let x: Vec<String> = self.x.iter().map(|v| v.to_string()).collect();
        format!(
            "instance = {}\nn_dense = {}\nx = {}\nvalue = {}\n",
            self.instance,
            self.n_dense,
            x.join(", "),
            self.value
        )
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let bad = |detail: String| Error::FixtureMismatch {
            path: origin.into(),
            detail,
        };
        let (mut instance, mut n_dense, mut x, mut value) = (None, None, None, None);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key = value", lineno + 1)))?;
            let val = val.trim();
            match key.trim() {
                "instance" => instance = Some(val.to_string()),
                "n_dense" => {
                    n_dense = Some(val.parse::<usize>().map_err(|e| bad(format!("n_dense: {e}")))?);
                }
                "x" => {
                    let parsed: std::result::Result<Vec<f64>, _> = val.split(',').map(|v| v.trim().parse()).collect();
                    x = Some(parsed.map_err(|e| bad(format!("x: {e}")))?);
                }
                "value" => value = Some(val.parse::<f64>().map_err(|e| bad(format!("value: {e}")))?),
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        let fixture = OracleFixture {
            instance: instance.ok_or_else(|| bad("missing instance".into()))?,
            n_dense: n_dense.ok_or_else(|| bad("missing n_dense".into()))?,
            x: x.ok_or_else(|| bad("missing x".into()))?,
            value: value.ok_or_else(|| bad("missing value".into()))?,
        };
        if !fixture.value.is_finite() || fixture.x.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite number".into()));
        }
        Ok(fixture)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Errors unless the fixture belongs to `instance` with `n_dense` points.
    pub fn expect(self, instance: &str, n_dense: usize, origin: &str) -> Result<Self> {
        if self.instance != instance || self.n_dense != n_dense {
            return Err(Error::FixtureMismatch {
                path: origin.into(),
                detail: format!(
                    "expected {instance} at n_dense {n_dense}, found {} at {}",
                    self.instance, self.n_dense
                ),
            });
        }
        Ok(self)
    }
}

const CSIP_Q: &str = include_str!("../../fixtures/csip-q.txt");
const CHEB_2: &str = include_str!("../../fixtures/cheb-2.txt");

/// The committed oracle fixture of a shipped instance.
pub fn builtin_fixture(instance: &str) -> Result<OracleFixture> {
    let text = match instance {
        "csip-q" => CSIP_Q,
        "cheb-2" => CHEB_2,
        other => return Err(Error::invalid(format!("no fixture for instance {other:?}"))),
    };
    OracleFixture::parse(text, &format!("fixtures/{instance}.txt"))
}

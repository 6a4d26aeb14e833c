//! Scenario files.
//!
//! ```toml
//! [session]
//! n_slots = 100000
//! squeeze_r = 1.0
//! seed = 7
//!
//! [attack]
//! kind = "beamsplitter_tap"
//! channel = { target = "bob", transmissivity = 0.5 }
//!
//! [sweep]
//! parameter = "attack.channel.transmissivity"
//! values = [0.1, 0.5, 0.9]
//!
//! [output]
//! directory = "out/tap"
//! formats = ["json", "csv"]
//! ```
//!
//! Every table is optional except what a command needs; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use cvqkd_core::eve::{apply_attack, AttackSpec};
use cvqkd_core::protocol::{two_mode_squeezed_vacuum, SessionConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Dotted path into the scenario, e.g. `session.squeeze_r`.
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: vec![Format::Json, Format::Csv],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    session: SessionConfig,
    #[serde(default)]
    attack: AttackSpec,
    sweep: Option<SweepSpec>,
    #[serde(default)]
    output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub session: SessionConfig,
    pub sweep: Option<SweepSpec>,
    pub output: OutputSpec,
    raw: toml::Table,
}

fn validation(context: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{context}: {message}"))
}

/// Checks serde cannot express: the unit attack variant takes no fields,
/// and the attack lives only in its own table.
fn check_raw(raw: &toml::Table) -> Result<(), String> {
    if raw
        .get("session")
        .and_then(|s| s.as_table())
        .is_some_and(|s| s.contains_key("attack"))
    {
        return Err("the attack goes in its own [attack] table".into());
    }
    if let Some(attack) = raw.get("attack").and_then(|a| a.as_table()) {
        if attack.get("kind").and_then(|k| k.as_str()) == Some("none") {
            if let Some(extra) = attack.keys().find(|k| *k != "kind") {
                return Err(format!("unknown field `{extra}` in [attack] with kind = \"none\""));
            }
        }
    }
    Ok(())
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| validation(&path.display().to_string(), format!("cannot read scenario: {e}")))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses scenario text. Errors carry the source name and, for syntax
    /// and schema problems, the line and column.
    pub fn parse(text: &str, source: &str) -> Result<Self, CliError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| validation(source, e))?;
        let raw: toml::Table = toml::from_str(text).map_err(|e| validation(source, e))?;
        check_raw(&raw).map_err(|e| validation(source, e))?;
        let scenario = Self::assemble(file, raw);
        scenario.validate().map_err(|e| validation(source, e))?;
        Ok(scenario)
    }

    fn assemble(file: ScenarioFile, raw: toml::Table) -> Self {
        let mut session = file.session;
        session.attack = file.attack;
        Self {
            session,
            sweep: file.sweep,
            output: file.output,
            raw,
        }
    }

    /// Session parameters and attack checked before anything runs.
    pub fn validate(&self) -> Result<(), String> {
        self.session.validate().map_err(|e| e.to_string())?;
        let source = two_mode_squeezed_vacuum(self.session.squeeze_r).map_err(|e| e.to_string())?;
        apply_attack(&source, &self.session.attack).map_err(|e| format!("attack: {e}"))?;
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err("sweep.values is empty".into());
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                return Err("sweep.values must be finite".into());
            }
        }
        Ok(())
    }

    /// The scenario with the sweep parameter set to `value`.
    pub fn with_parameter(&self, path: &str, value: f64) -> Result<Self, CliError> {
        let context = format!("sweep {path} = {value}");
        let mut keys: Vec<&str> = path.split('.').collect();
        if keys.len() < 2 || !matches!(keys[0], "session" | "attack") {
            return Err(validation(&context, "parameter must start with `session.` or `attack.`"));
        }
        let leaf = keys.pop().expect("at least two segments");
        let with_leaf = |v: toml::Value| -> Result<(toml::Table, bool), CliError> {
            let mut raw = self.raw.clone();
            let mut table = &mut raw;
            for key in &keys {
                table = table
                    .entry(*key)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| validation(&context, format!("`{key}` is not a table")))?;
            }
            let was_integer = matches!(table.get(leaf), Some(toml::Value::Integer(_)));
            table.insert(leaf.to_string(), v);
            Ok((raw, was_integer))
        };
        let integral = value.fract() == 0.0 && value.abs() < 2f64.powi(53);
        let (_, as_integer) = with_leaf(toml::Value::Float(value))?;
        let candidates = if as_integer && integral {
            vec![toml::Value::Integer(value as i64)]
        } else if integral {
            vec![toml::Value::Float(value), toml::Value::Integer(value as i64)]
        } else {
            vec![toml::Value::Float(value)]
        };
        let mut last_error = None;
        for candidate in candidates {
            let (raw, _) = with_leaf(candidate)?;
            check_raw(&raw).map_err(|e| validation(&context, e))?;
            match toml::Value::Table(raw.clone()).try_into::<ScenarioFile>() {
                Ok(file) => {
                    let scenario = Self::assemble(file, raw);
                    scenario.validate().map_err(|e| validation(&context, e))?;
                    return Ok(scenario);
                }
                Err(e) => last_error = Some(e),
            }
        }
        Err(validation(&context, last_error.expect("at least one candidate")))
    }

    pub fn apply_overrides(&mut self, seed: Option<u64>, slots: Option<usize>, out: Option<&Path>, formats: &[Format]) {
        if let Some(seed) = seed {
            self.session.seed = seed;
            self.raw_session().insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        if let Some(slots) = slots {
            self.session.n_slots = slots;
            self.raw_session()
                .insert("n_slots".into(), toml::Value::Integer(slots as i64));
        }
        if let Some(out) = out {
            self.output.directory = out.to_path_buf();
        }
        if !formats.is_empty() {
            let mut f = formats.to_vec();
            f.sort();
            f.dedup();
            self.output.formats = f;
        }
    }

    fn raw_session(&mut self) -> &mut toml::Table {
        self.raw
            .entry("session")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .expect("session is a table after parsing")
    }

    pub fn wants(&self, format: Format) -> bool {
        self.output.formats.contains(&format)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cvqkd_core::eve::TapChannel;

    const TAP: &str = r#"
[session]
n_slots = 5000
squeeze_r = 1.0
seed = 3

[attack]
kind = "beamsplitter_tap"
channel = { target = "bob", transmissivity = 0.5 }

[sweep]
parameter = "attack.channel.transmissivity"
values = [0.1, 0.9]
"#;

    #[test]
    fn parses_tagged_attack() {
        let s = Scenario::parse(TAP, "tap").unwrap();
        assert_eq!(
            s.session.attack,
            AttackSpec::BeamsplitterTap {
                channel: TapChannel::Bob { transmissivity: 0.5 }
            }
        );
        assert_eq!(s.session.n_slots, 5000);
    }

    #[test]
    fn empty_scenario_uses_defaults() {
        let s = Scenario::parse("", "empty").unwrap();
        assert_eq!(s.session, SessionConfig::default());
        assert!(s.sweep.is_none());
    }

    #[test]
    fn unknown_keys_report_line() {
        let err = Scenario::parse("[session]\nn_slots = 10\nsqueez_r = 1.0\n", "bad.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.toml"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
        assert!(Scenario::parse("[sesion]\n", "x").is_err());
        assert!(Scenario::parse("[attack]\nkind = \"none\"\nextra = 1\n", "x").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Scenario::parse("[session]\nsubensemble_fraction = 1.5\n", "x").is_err());
        let tap = "[attack]\nkind = \"beamsplitter_tap\"\nchannel = { target = \"bob\", transmissivity = 1.5 }\n";
        assert!(Scenario::parse(tap, "x").is_err());
        assert!(Scenario::parse("[session]\nattack = { kind = \"none\" }\n", "x").is_err());
        assert!(Scenario::parse("[sweep]\nparameter = \"session.squeeze_r\"\nvalues = []\n", "x").is_err());
    }

    #[test]
    fn sweep_sets_nested_and_integer_values() {
        let s = Scenario::parse(TAP, "tap").unwrap();
        let t = s.with_parameter("attack.channel.transmissivity", 0.25).unwrap();
        assert_eq!(
            t.session.attack,
            AttackSpec::BeamsplitterTap {
                channel: TapChannel::Bob { transmissivity: 0.25 }
            }
        );
        let n = s.with_parameter("session.n_slots", 2000.0).unwrap();
        assert_eq!(n.session.n_slots, 2000);
        let r = s.with_parameter("session.squeeze_r", 2.0).unwrap();
        assert_eq!(r.session.squeeze_r, 2.0);
        assert!(s.with_parameter("output.directory", 1.0).is_err());
        assert!(s.with_parameter("attack.channel.transmissivity", 2.0).is_err());
    }

    #[test]
    fn overrides_survive_sweeps() {
        let mut s = Scenario::parse(TAP, "tap").unwrap();
        s.apply_overrides(Some(99), Some(1234), None, &[]);
        let t = s.with_parameter("attack.channel.transmissivity", 0.3).unwrap();
        assert_eq!(t.session.seed, 99);
        assert_eq!(t.session.n_slots, 1234);
    }
}

//! Run configuration: the JSON file format consumed by the CLI, resolution
//! of the source/epsilon inputs, and the shipped presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::epsilon::EpsilonSet;
use crate::error::{Error, Result};
use crate::model::{
    ChannelConfig, EncodingProbs, EpsilonMode, Intensities, ProtocolConfig, DEFAULT_XI_CAP,
};
use crate::tables::{compose_source, derive_epsilons, FineGrainedSource, Marginalization, TableSet};

/// Loss grid: either an explicit list or an inclusive start/stop/step range.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LossGrid {
    Range { start: f64, stop: f64, step: f64 },
    List(Vec<f64>),
}

impl LossGrid {
    pub fn points(&self) -> Result<Vec<f64>> {
        match self {
            LossGrid::List(v) => {
                if v.is_empty() || v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(Error::Config(vec![
                        "loss list must be non-empty and non-negative".into(),
                    ]));
                }
                Ok(v.clone())
            }
            LossGrid::Range { start, stop, step } => {
                if !(*step > 0.0 && stop >= start && *start >= 0.0) {
                    return Err(Error::Config(vec![format!(
                        "invalid loss range {start}:{stop}:{step}"
                    )]));
                }
                let n = ((stop - start) / step).round() as usize + 1;
                Ok((0..n).map(|i| start + i as f64 * step).collect())
            }
        }
    }

    /// Parses the CLI form `START:STOP:STEP`.
    pub fn parse_cli(text: &str) -> Result<LossGrid> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Config(vec![format!(
                "--loss expects START:STOP:STEP, got {text:?}"
            )]));
        }
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(vec![format!("--loss parse error: {e}")]))?;
        Ok(LossGrid::Range {
            start: nums[0],
            stop: nums[1],
            step: nums[2],
        })
    }
}

/// Channel section of the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub eta_det: f64,
    pub dark_count: f64,
    #[serde(default)]
    pub misalignment: f64,
    pub loss_db: LossGrid,
}

impl ChannelSection {
    pub fn channel(&self) -> ChannelConfig {
        ChannelConfig {
            eta_det: self.eta_det,
            dark_count: self.dark_count,
            misalignment: self.misalignment,
        }
    }
}

/// Where the correlation parameters come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonSection {
    /// Every parameter family set to the same scalar; `cross` enables the
    /// families coupling intensity history to the encoded state and
    /// encoding history to the intensity.
    Uniform { value: f64, cross: bool },
    /// Load a previously derived parameter report (JSON).
    Report { path: PathBuf },
    /// Derive from the measurement tables at run time.
    FromTables,
    /// No imperfections.
    Zero,
}

/// Tables section: directory plus composition controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TablesSection {
    pub dir: PathBuf,
    #[serde(default)]
    pub marginalization: Marginalization,
    /// One floor per distance w = 0..=xi; empty means all zero.
    #[serde(default)]
    pub sidechannel_floor: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    pub clock_hz: f64,
    #[serde(default)]
    pub dump_observables: Option<PathBuf>,
}

/// Top-level run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub protocol: ProtocolConfig,
    pub channel: ChannelSection,
    pub epsilons: EpsilonSection,
    #[serde(default)]
    pub tables: Option<TablesSection>,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        RunConfig::from_json(&text)
    }

    /// Collects every validation failure before reporting.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if let Err(Error::Config(mut e)) = self.protocol.validate() {
            errs.append(&mut e);
        }
        if let Err(Error::Config(mut e)) = self.channel.channel().validate() {
            errs.append(&mut e);
        }
        if let Err(Error::Config(mut e)) = self.channel.loss_db.points().map(|_| ()) {
            errs.append(&mut e);
        }
        if self.output.clock_hz <= 0.0 {
            errs.push(format!("clock_hz = {} must be positive", self.output.clock_hz));
        }
        match (&self.epsilons, &self.tables) {
            (EpsilonSection::FromTables, None) => {
                errs.push("epsilons = from_tables requires a tables section".into())
            }
            (EpsilonSection::Uniform { value, .. }, _)
                if !(0.0..=1.0).contains(value) => {
                    errs.push(format!("uniform epsilon {value} outside [0, 1]"));
                }
            _ => {}
        }
        if self.protocol.mode == EpsilonMode::Fine {
            let fine_possible = matches!(
                &self.epsilons,
                EpsilonSection::FromTables | EpsilonSection::Report { .. }
            );
            if !fine_possible {
                errs.push(
                    "fine mode needs per-sequence data: use epsilons = from_tables or a report"
                        .into(),
                );
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Resolves the source description and the parameter set.
    pub fn resolve_inputs(&self) -> Result<(FineGrainedSource, EpsilonSet)> {
        let tables = match &self.tables {
            Some(t) => Some((t, TableSet::load_dir(&t.dir)?)),
            None => None,
        };
        let src = match &tables {
            Some((sect, set)) => compose_source(set, &self.protocol, sect.marginalization)?,
            None => FineGrainedSource::ideal(&self.protocol),
        };
        let eps = match &self.epsilons {
            EpsilonSection::Zero => EpsilonSet::zero(self.protocol.xi),
            EpsilonSection::Uniform { value, cross } => {
                EpsilonSet::uniform(self.protocol.xi, *value, *cross)
            }
            EpsilonSection::Report { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
                let set: EpsilonSet = serde_json::from_str(&text)?;
                if set.xi != self.protocol.xi {
                    return Err(Error::Config(vec![format!(
                        "epsilon report has xi = {}, config has xi = {}",
                        set.xi, self.protocol.xi
                    )]));
                }
                set.validate()?;
                set.check_coarse_dominates_fine()?;
                set
            }
            EpsilonSection::FromTables => {
                let (sect, _) = tables.as_ref().expect("validated");
                let mut floors = sect.sidechannel_floor.clone();
                if floors.is_empty() {
                    floors = vec![0.0; self.protocol.xi + 1];
                }
                derive_epsilons(&src, &self.protocol, &floors)?
            }
        };
        if self.protocol.mode == EpsilonMode::Fine && eps.fine.is_none() {
            return Err(Error::Config(vec![
                "fine mode requested but the resolved epsilon set has no fine data".into(),
            ]));
        }
        Ok((src, eps))
    }
}

/// Shipped presets mirroring the four simulated scenarios: a base-rate
/// system free of correlations and three overclocked variants.
pub const PRESET_NAMES: [&str; 4] = [
    "ideal-250",
    "overclock-500-xi1",
    "overclock-1g-xi3",
    "overclock-1g-xi3-cross",
];

fn preset_protocol(xi: usize) -> ProtocolConfig {
    ProtocolConfig {
        intensities: Intensities {
            mu: 0.5,
            nu: 0.09,
            omega: 0.0025,
        },
        intensity_probs: Intensities {
            mu: 0.7,
            nu: 0.2,
            omega: 0.1,
        },
        encoding_probs: EncodingProbs {
            bit0: 0.375,
            bit1: 0.375,
            plus: 0.25,
        },
        bob_z_prob: 0.75,
        delta1: 0.0,
        delta2: 0.0,
        xi,
        xi_cap: DEFAULT_XI_CAP,
        error_correction_f: 1.16,
        n_cut: 10,
        phi_grid: 64,
        mode: EpsilonMode::Coarse,
    }
}

pub fn preset(name: &str) -> Option<RunConfig> {
    let (xi, clock_hz, epsilons) = match name {
        "ideal-250" => (0, 250e6, EpsilonSection::Zero),
        "overclock-500-xi1" => (
            1,
            500e6,
            EpsilonSection::Uniform {
                value: 1e-6,
                cross: false,
            },
        ),
        "overclock-1g-xi3" => (
            3,
            1e9,
            EpsilonSection::Uniform {
                value: 1e-6,
                cross: false,
            },
        ),
        "overclock-1g-xi3-cross" => (
            3,
            1e9,
            EpsilonSection::Uniform {
                value: 1e-6,
                cross: true,
            },
        ),
        _ => return None,
    };
    Some(RunConfig {
        protocol: preset_protocol(xi),
        channel: ChannelSection {
            eta_det: 0.1,
            dark_count: 1e-7,
            misalignment: 0.01,
            loss_db: LossGrid::Range {
                start: 0.0,
                stop: 30.0,
                step: 1.0,
            },
        },
        epsilons,
        tables: None,
        output: OutputSection {
            csv: None,
            clock_hz,
            dump_observables: None,
        },
    })
}

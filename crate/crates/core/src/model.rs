//! Shared domain types: intensity/encoding settings, setting sequences,
//! and the protocol / channel configurations used by every other module.
//!
//! Sequence convention: index 0 is the most recent round, i.e. a stored
//! sequence `[s_k, s_{k-1}, ..., s_{k-n}]` reads newest first. Every module
//! uses this single convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of intensity settings.
pub const NUM_INTENSITIES: usize = 3;
/// Number of bit/basis encoding settings.
pub const NUM_ENCODINGS: usize = 3;
/// Number of joint settings per round.
pub const NUM_SETTINGS: usize = NUM_INTENSITIES * NUM_ENCODINGS;

/// Default cap on the correlation range (9^4 = 6561 sequences).
pub const DEFAULT_XI_CAP: usize = 4;

/// Intensity setting label. The discriminants match the pattern-index
/// weights (omega = 0, nu = 1, mu = 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    Omega = 0,
    Nu = 1,
    Mu = 2,
}

impl Intensity {
    pub const ALL: [Intensity; 3] = [Intensity::Omega, Intensity::Nu, Intensity::Mu];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Intensity {
        Intensity::ALL[i]
    }

    pub fn label(self) -> &'static str {
        match self {
            Intensity::Omega => "omega",
            Intensity::Nu => "nu",
            Intensity::Mu => "mu",
        }
    }
}

/// Bit/basis encoding setting label. bit0/bit1 form the Z basis, plus is X.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Bit0 = 0,
    Bit1 = 1,
    Plus = 2,
}

impl Encoding {
    pub const ALL: [Encoding; 3] = [Encoding::Bit0, Encoding::Bit1, Encoding::Plus];
    pub const Z: [Encoding; 2] = [Encoding::Bit0, Encoding::Bit1];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Encoding {
        Encoding::ALL[i]
    }

    #[inline]
    pub fn is_z(self) -> bool {
        !matches!(self, Encoding::Plus)
    }

    pub fn label(self) -> &'static str {
        match self {
            Encoding::Bit0 => "0",
            Encoding::Bit1 => "1",
            Encoding::Plus => "plus",
        }
    }
}

/// Bob's measurement basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Z, Basis::X];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Basis::Z => 0,
            Basis::X => 1,
        }
    }
}

/// One round's joint setting (intensity, encoding).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Setting {
    pub intensity: Intensity,
    pub encoding: Encoding,
}

impl Setting {
    pub fn new(intensity: Intensity, encoding: Encoding) -> Setting {
        Setting { intensity, encoding }
    }

    /// Flat index in 0..9, intensity-major.
    #[inline]
    pub fn index(self) -> usize {
        self.intensity.index() * NUM_ENCODINGS + self.encoding.index()
    }

    #[inline]
    pub fn from_index(i: usize) -> Setting {
        Setting {
            intensity: Intensity::from_index(i / NUM_ENCODINGS),
            encoding: Encoding::from_index(i % NUM_ENCODINGS),
        }
    }
}

/// An ordered list of settings, most recent first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SettingSequence(pub Vec<Setting>);

impl SettingSequence {
    pub fn empty() -> SettingSequence {
        SettingSequence(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Packs the sequence into a base-9 code with slot 0 (the most recent
    /// round) as the most significant digit. The code doubles as the
    /// enumeration index.
    pub fn pack(&self) -> u32 {
        let mut code = 0u32;
        for s in &self.0 {
            code = code * NUM_SETTINGS as u32 + s.index() as u32;
        }
        code
    }

    pub fn unpack(mut code: u32, len: usize) -> SettingSequence {
        let mut slots = vec![Setting::from_index(0); len];
        for i in (0..len).rev() {
            slots[i] = Setting::from_index((code % NUM_SETTINGS as u32) as usize);
            code /= NUM_SETTINGS as u32;
        }
        SettingSequence(slots)
    }

    /// All `9^length` sequences in a fixed lexicographic order (slot 0 most
    /// significant; omega/bit0 first). The order is stable across runs and
    /// thread counts.
    pub fn enumerate(length: usize, cap: usize) -> Result<Vec<SettingSequence>> {
        if length > cap {
            return Err(Error::Capacity(format!(
                "sequence length {length} exceeds the configured maximum {cap}"
            )));
        }
        let total = (NUM_SETTINGS as u64).pow(length as u32);
        let mut out = Vec::with_capacity(total as usize);
        for code in 0..total {
            out.push(SettingSequence::unpack(code as u32, length));
        }
        Ok(out)
    }

    /// Product of the per-round selection probabilities.
    pub fn probability(&self, cfg: &ProtocolConfig) -> f64 {
        self.0
            .iter()
            .map(|s| cfg.intensity_prob(s.intensity) * cfg.encoding_prob(s.encoding))
            .product()
    }
}

/// Pattern index `9*a_{k-1} + 3*a_{k-2} + a_{k-3}` with omega = 0, nu = 1,
/// mu = 2. `pattern[0]` is the most recent previous round `a_{k-1}`.
pub fn pattern_index(pattern: &[Intensity]) -> usize {
    assert_eq!(pattern.len(), 3, "pattern index requires exactly 3 rounds");
    9 * pattern[0].index() + 3 * pattern[1].index() + pattern[2].index()
}

/// Nominal intensity values, mean photon numbers.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Intensities {
    pub mu: f64,
    pub nu: f64,
    pub omega: f64,
}

impl Intensities {
    #[inline]
    pub fn get(&self, a: Intensity) -> f64 {
        match a {
            Intensity::Mu => self.mu,
            Intensity::Nu => self.nu,
            Intensity::Omega => self.omega,
        }
    }
}

/// Worst-case phase search mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsilonMode {
    Coarse,
    Fine,
}

/// Protocol-side configuration: Alice/Bob probabilities, SPF angles,
/// correlation range and the numeric controls of the estimation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub intensities: Intensities,
    /// Selection probabilities p_a, ordered (mu, nu, omega) in the file but
    /// stored per label.
    pub intensity_probs: Intensities,
    /// Selection probabilities p_r for (bit0, bit1, plus).
    pub encoding_probs: EncodingProbs,
    /// Bob's Z-basis selection probability; P_X^B = 1 - P_Z^B.
    pub bob_z_prob: f64,
    /// SPF angles in radians.
    pub delta1: f64,
    pub delta2: f64,
    /// Correlation range.
    pub xi: usize,
    /// Memory guard for sequence enumeration.
    #[serde(default = "default_xi_cap")]
    pub xi_cap: usize,
    /// Error-correction efficiency, >= 1.
    pub error_correction_f: f64,
    /// Photon-number cutoff for the decoy linear programs.
    #[serde(default = "default_n_cut")]
    pub n_cut: usize,
    /// Grid size for the worst-case auxiliary-phase search.
    #[serde(default = "default_phi_grid")]
    pub phi_grid: usize,
    pub mode: EpsilonMode,
}

fn default_xi_cap() -> usize {
    DEFAULT_XI_CAP
}

fn default_phi_grid() -> usize {
    64
}

fn default_n_cut() -> usize {
    10
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EncodingProbs {
    pub bit0: f64,
    pub bit1: f64,
    pub plus: f64,
}

impl EncodingProbs {
    #[inline]
    pub fn get(&self, r: Encoding) -> f64 {
        match r {
            Encoding::Bit0 => self.bit0,
            Encoding::Bit1 => self.bit1,
            Encoding::Plus => self.plus,
        }
    }
}

const PROB_TOL: f64 = 1e-12;

impl ProtocolConfig {
    #[inline]
    pub fn intensity(&self, a: Intensity) -> f64 {
        self.intensities.get(a)
    }

    #[inline]
    pub fn intensity_prob(&self, a: Intensity) -> f64 {
        self.intensity_probs.get(a)
    }

    #[inline]
    pub fn encoding_prob(&self, r: Encoding) -> f64 {
        self.encoding_probs.get(r)
    }

    #[inline]
    pub fn setting_prob(&self, s: Setting) -> f64 {
        self.intensity_prob(s.intensity) * self.encoding_prob(s.encoding)
    }

    /// Alice's Z-basis probability, p_0 + p_1.
    #[inline]
    pub fn alice_z_prob(&self) -> f64 {
        self.encoding_probs.bit0 + self.encoding_probs.bit1
    }

    #[inline]
    pub fn alice_x_prob(&self) -> f64 {
        self.encoding_probs.plus
    }

    #[inline]
    pub fn bob_x_prob(&self) -> f64 {
        1.0 - self.bob_z_prob
    }

    /// Validates every invariant, collecting all failures. Normalization is
    /// never silently repaired.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let its = &self.intensities;
        if !(its.mu.is_finite() && its.nu.is_finite() && its.omega.is_finite()) {
            errs.push("intensities must be finite".to_string());
        }
        if !(its.mu > its.nu && its.nu > its.omega && its.omega >= 0.0) {
            errs.push(format!(
                "intensities must satisfy mu > nu > omega >= 0 (got {} > {} > {})",
                its.mu, its.nu, its.omega
            ));
        }
        let pa = self.intensity_probs.mu + self.intensity_probs.nu + self.intensity_probs.omega;
        if (pa - 1.0).abs() > PROB_TOL {
            errs.push(format!("intensity probabilities sum to {pa}, expected 1"));
        }
        for (label, p) in [
            ("p_mu", self.intensity_probs.mu),
            ("p_nu", self.intensity_probs.nu),
            ("p_omega", self.intensity_probs.omega),
            ("p_0", self.encoding_probs.bit0),
            ("p_1", self.encoding_probs.bit1),
            ("p_plus", self.encoding_probs.plus),
        ] {
            if !(0.0..=1.0).contains(&p) {
                errs.push(format!("{label} = {p} outside [0, 1]"));
            }
        }
        let pr = self.encoding_probs.bit0 + self.encoding_probs.bit1 + self.encoding_probs.plus;
        if (pr - 1.0).abs() > PROB_TOL {
            errs.push(format!("encoding probabilities sum to {pr}, expected 1"));
        }
        if !(self.bob_z_prob > 0.0 && self.bob_z_prob < 1.0) {
            errs.push(format!("bob_z_prob = {} outside (0, 1)", self.bob_z_prob));
        }
        for (label, d) in [("delta1", self.delta1), ("delta2", self.delta2)] {
            if !(0.0..std::f64::consts::FRAC_PI_2).contains(&d) {
                errs.push(format!("{label} = {d} outside [0, pi/2)"));
            }
        }
        if self.xi > self.xi_cap {
            errs.push(format!(
                "xi = {} exceeds the capacity guard xi_cap = {}",
                self.xi, self.xi_cap
            ));
        }
        if self.error_correction_f < 1.0 {
            errs.push(format!(
                "error_correction_f = {} must be >= 1",
                self.error_correction_f
            ));
        }
        if self.n_cut < 2 {
            errs.push(format!("n_cut = {} must be >= 2", self.n_cut));
        }
        if self.phi_grid < 4 {
            errs.push(format!("phi_grid = {} must be >= 4", self.phi_grid));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Receiver and channel parameters at a single loss point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Detection-side efficiency folded with any fixed losses.
    pub eta_det: f64,
    /// Dark-count probability per gate.
    pub dark_count: f64,
    /// Classical bit-flip mixed into the Z click distribution; default 0.
    #[serde(default)]
    pub misalignment: f64,
}

impl ChannelConfig {
    /// Overall efficiency after `loss_db` of channel loss.
    pub fn eta(&self, loss_db: f64) -> f64 {
        self.eta_det * 10f64.powf(-loss_db / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.eta_det >= 0.0 && self.eta_det <= 1.0) {
            errs.push(format!("eta_det = {} outside [0, 1]", self.eta_det));
        }
        if !(self.dark_count >= 0.0 && self.dark_count < 1.0) {
            errs.push(format!("dark_count = {} outside [0, 1)", self.dark_count));
        }
        if !(self.misalignment >= 0.0 && self.misalignment <= 0.5) {
            errs.push(format!(
                "misalignment = {} outside [0, 0.5]",
                self.misalignment
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[cfg(test)]
pub(crate) fn test_config(xi: usize) -> ProtocolConfig {
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

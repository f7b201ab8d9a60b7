//! The family of correlation and side-channel parameters.
//!
//! Coarse-grained values bound a deviation over every sequence context;
//! fine-grained maps carry one value per explicit context. Keys follow the
//! sequence convention of [`crate::model`]: contexts are packed base-9,
//! newest round first.
//!
//! Naming of the families:
//! * `state_*`: state-overlap deviations `1 - |<iota|iota>|^2` caused by a
//!   single differing setting,
//! * `int_*`: relative intensity deviations `|a1 - a2| / (a1 + a2)`,
//! * `bar_*`: intensity excess over nominal `(a1 + a2) / (2 a_nom) - 1`,
//! * `delta`: signed qubit-overlap shifts relative to the flat-SPF states,
//! * `bit_int*`: intensity imbalance between the two Z bit settings in the
//!   current round (feeds the bit-averaged inner-product prefactor).
//!
//! The `_r` families vary an encoding setting, the `_a` families an
//! intensity setting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Encoding, Intensity};

/// Canonical index for an unordered encoding pair.
pub fn encoding_pair_index(a: Encoding, b: Encoding) -> usize {
    match (a.index().min(b.index()), a.index().max(b.index())) {
        (0, 1) => 0, // (0, 1)
        (0, 2) => 1, // (0, +)
        (1, 2) => 2, // (1, +)
        _ => panic!("encoding pair must be distinct"),
    }
}

/// Signed interval for the worst-case delta parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn point(v: f64) -> Interval {
        Interval { lo: v, hi: v }
    }

    pub fn hull(&mut self, v: f64) {
        self.lo = self.lo.min(v);
        self.hi = self.hi.max(v);
    }
}

/// 3x3 value table keyed by a setting pair or by (intensity, encoding).
pub type Table3 = [[f64; 3]; 3];

/// Coarse-grained parameters: one scalar per (distance, key) bucket.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoarseEpsilons {
    /// Current-round state-overlap deviation per unordered encoding pair.
    pub state_r0: [f64; 3],
    /// Current-round state-overlap deviation per unordered intensity pair,
    /// indexed `[a][a']` (symmetric, diagonal zero).
    pub state_a0: Table3,
    /// Per distance w = 1..=xi, keyed by the affected round's setting
    /// `[intensity][encoding]`.
    pub state_r: Vec<Table3>,
    pub state_a: Vec<Table3>,
    pub int_r: Vec<Table3>,
    pub int_a: Vec<Table3>,
    /// Z bit intensity imbalance of the current round, per intensity.
    pub bit_int: [f64; 3],
    /// Matching intensity excess over nominal, per intensity.
    pub bit_int_bar: [f64; 3],
    /// Signed overlap-shift intervals per encoding pair (0,1), (0,+), (1,+).
    pub delta: [Interval; 3],
}

impl CoarseEpsilons {
    pub fn zero(xi: usize) -> CoarseEpsilons {
        CoarseEpsilons {
            state_r0: [0.0; 3],
            state_a0: [[0.0; 3]; 3],
            state_r: vec![[[0.0; 3]; 3]; xi],
            state_a: vec![[[0.0; 3]; 3]; xi],
            int_r: vec![[[0.0; 3]; 3]; xi],
            int_a: vec![[[0.0; 3]; 3]; xi],
            bit_int: [0.0; 3],
            bit_int_bar: [0.0; 3],
            delta: [Interval::point(0.0); 3],
        }
    }

    /// Every correlation parameter set to the same value. With
    /// `cross = false` the families that couple intensity history to the
    /// encoded state (and encoding history to the intensity) stay zero.
    pub fn uniform(xi: usize, eps: f64, cross: bool) -> CoarseEpsilons {
        let mut c = CoarseEpsilons::zero(xi);
        let filled = [[eps; 3]; 3];
        c.state_r0 = [eps; 3];
        for w in 0..xi {
            c.state_r[w] = filled;
            c.int_a[w] = filled;
        }
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    c.state_a0[i][j] = if cross { eps } else { 0.0 };
                }
            }
        }
        if cross {
            for w in 0..xi {
                c.state_a[w] = filled;
                c.int_r[w] = filled;
            }
            c.bit_int = [eps; 3];
            c.bit_int_bar = [eps; 3];
        }
        c.delta = [Interval { lo: -eps, hi: eps }; 3];
        c
    }

    #[inline]
    pub fn state_a0_pair(&self, a: Intensity, b: Intensity) -> f64 {
        self.state_a0[a.index()][b.index()]
    }

    pub fn validate(&self, xi: usize) -> Result<()> {
        let mut errs = Vec::new();
        let tables = [
            ("state_r", &self.state_r),
            ("state_a", &self.state_a),
            ("int_r", &self.int_r),
            ("int_a", &self.int_a),
        ];
        for (name, t) in tables {
            if t.len() != xi {
                errs.push(format!("{name} has {} distance slots, expected {xi}", t.len()));
            }
            for tab in t.iter() {
                for row in tab {
                    for &v in row {
                        if !(0.0..=1.0).contains(&v) {
                            errs.push(format!("{name} value {v} outside [0, 1]"));
                        }
                    }
                }
            }
        }
        for &v in self.state_r0.iter().chain(&self.bit_int) {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("scalar epsilon {v} outside [0, 1]"));
            }
        }
        // The excess-over-nominal values are exact one-sided maxima and may
        // legitimately sit below zero.
        for &v in &self.bit_int_bar {
            if !(-1.0..=1.0).contains(&v) {
                errs.push(format!("bit_int_bar {v} outside [-1, 1]"));
            }
        }
        for row in &self.state_a0 {
            for &v in row {
                if !(0.0..=1.0).contains(&v) {
                    errs.push(format!("state_a0 value {v} outside [0, 1]"));
                }
            }
        }
        for iv in &self.delta {
            if !(iv.lo <= iv.hi && iv.lo >= -1.0 && iv.hi <= 1.0) {
                errs.push(format!("delta interval [{}, {}] invalid", iv.lo, iv.hi));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Key of a fine-grained entry: the varied slot's value pair, its distance
/// `w` from the affected round, the fixed coordinate at the varied slot,
/// and the packed context of the remaining window slots (newest first).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct FineKey {
    pub lo: u8,
    pub hi: u8,
    pub w: u8,
    pub other: u8,
    pub ctx: u32,
}

impl FineKey {
    pub fn new(lo: usize, hi: usize, w: usize, other: usize, ctx: u32) -> FineKey {
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        FineKey {
            lo: lo as u8,
            hi: hi as u8,
            w: w as u8,
            other: other as u8,
            ctx,
        }
    }
}

/// Serializes ordered maps as sorted key/value pair lists so the keys need
/// not be JSON strings and the output stays deterministic.
mod serde_pairs {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<K, V, S>(map: &BTreeMap<K, V>, ser: S) -> Result<S::Ok, S::Error>
    where
        K: Serialize + Ord,
        V: Serialize,
        S: Serializer,
    {
        ser.collect_seq(map.iter())
    }

    pub fn deserialize<'de, K, V, D>(de: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        let pairs: Vec<(K, V)> = Vec::deserialize(de)?;
        Ok(pairs.into_iter().collect())
    }
}

/// Fine-grained parameters, one value per explicit sequence context.
/// BTreeMaps keep serialization deterministic.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FineEpsilons {
    #[serde(with = "serde_pairs")]
    pub state_r: BTreeMap<FineKey, f64>,
    #[serde(with = "serde_pairs")]
    pub state_a: BTreeMap<FineKey, f64>,
    #[serde(with = "serde_pairs")]
    pub int_r: BTreeMap<FineKey, f64>,
    #[serde(with = "serde_pairs")]
    pub int_a: BTreeMap<FineKey, f64>,
    #[serde(with = "serde_pairs")]
    pub bar_r: BTreeMap<FineKey, f64>,
    #[serde(with = "serde_pairs")]
    pub bar_a: BTreeMap<FineKey, f64>,
    /// Signed overlap shift keyed by (encoding pair, intensity, past context).
    #[serde(with = "serde_pairs")]
    pub delta: BTreeMap<(u8, u8, u32), f64>,
    /// Z bit intensity imbalance keyed by (intensity, past context).
    #[serde(with = "serde_pairs")]
    pub bit_int: BTreeMap<(u8, u32), f64>,
    #[serde(with = "serde_pairs")]
    pub bit_int_bar: BTreeMap<(u8, u32), f64>,
}

impl FineEpsilons {
    fn fetch(map: &BTreeMap<FineKey, f64>, name: &str, key: FineKey) -> Result<f64> {
        map.get(&key).copied().ok_or_else(|| {
            Error::MissingEpsilon(format!(
                "{name}[pair=({},{}), w={}, other={}, ctx={}]",
                key.lo, key.hi, key.w, key.other, key.ctx
            ))
        })
    }

    pub fn state(&self, family: Family, key: FineKey) -> Result<f64> {
        match family {
            Family::R => Self::fetch(&self.state_r, "state_r", key),
            Family::A => Self::fetch(&self.state_a, "state_a", key),
        }
    }

    pub fn int(&self, family: Family, key: FineKey) -> Result<f64> {
        match family {
            Family::R => Self::fetch(&self.int_r, "int_r", key),
            Family::A => Self::fetch(&self.int_a, "int_a", key),
        }
    }

    pub fn bar(&self, family: Family, key: FineKey) -> Result<f64> {
        match family {
            Family::R => Self::fetch(&self.bar_r, "bar_r", key),
            Family::A => Self::fetch(&self.bar_a, "bar_a", key),
        }
    }
}

/// Which setting coordinate a family varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Encoding-setting deviations (the `eps_r` family).
    R,
    /// Intensity-setting deviations (the `eps_a` family).
    A,
}

/// The full parameter set handed to the bound computations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsilonSet {
    pub xi: usize,
    pub coarse: CoarseEpsilons,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine: Option<FineEpsilons>,
}

impl EpsilonSet {
    pub fn zero(xi: usize) -> EpsilonSet {
        EpsilonSet {
            xi,
            coarse: CoarseEpsilons::zero(xi),
            fine: None,
        }
    }

    pub fn uniform(xi: usize, eps: f64, cross: bool) -> EpsilonSet {
        EpsilonSet {
            xi,
            coarse: CoarseEpsilons::uniform(xi, eps, cross),
            fine: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.coarse.validate(self.xi)
    }

    /// Checks that every coarse value dominates its fine counterparts.
    pub fn check_coarse_dominates_fine(&self) -> Result<()> {
        let Some(fine) = &self.fine else {
            return Ok(());
        };
        let mut errs = Vec::new();
        let pairs: [(&str, &BTreeMap<FineKey, f64>, bool); 6] = [
            ("state_r", &fine.state_r, true),
            ("state_a", &fine.state_a, false),
            ("int_r", &fine.int_r, true),
            ("int_a", &fine.int_a, false),
            ("bar_r", &fine.bar_r, true),
            ("bar_a", &fine.bar_a, false),
        ];
        for (name, map, is_r) in pairs {
            for (key, &v) in map {
                let coarse = self.coarse_counterpart(name, is_r, key);
                if let Some(c) = coarse {
                    if v > c + 1e-12 {
                        errs.push(format!(
                            "fine {name} {v} exceeds coarse bound {c} at {key:?}"
                        ));
                    }
                }
            }
        }
        for ((pair, _a, _ctx), &v) in &fine.delta {
            let iv = self.coarse.delta[*pair as usize];
            if v < iv.lo - 1e-12 || v > iv.hi + 1e-12 {
                errs.push(format!("fine delta {v} outside coarse interval {iv:?}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Data(errs.join("; ")))
        }
    }

    fn coarse_counterpart(&self, name: &str, _is_r: bool, key: &FineKey) -> Option<f64> {
        let w = key.w as usize;
        if w == 0 {
            let is_bit_pair = key.lo == 0 && key.hi == 1;
            return match name {
                "state_r" => Some(self.coarse.state_r0[encoding_pair_index(
                    Encoding::from_index(key.lo as usize),
                    Encoding::from_index(key.hi as usize),
                )]),
                "state_a" => Some(self.coarse.state_a0[key.lo as usize][key.hi as usize]),
                "int_r" if is_bit_pair => Some(self.coarse.bit_int[key.other as usize]),
                "bar_r" if is_bit_pair => Some(self.coarse.bit_int_bar[key.other as usize]),
                _ => None,
            };
        }
        // For w >= 1 the coarse tables are keyed by the affected round's own
        // setting, which is the newest context slot.
        let cur = crate::model::Setting::from_index(
            (key.ctx / (crate::model::NUM_SETTINGS as u32).pow(self.xi as u32 - 1)) as usize,
        );
        let (i, j) = (cur.intensity.index(), cur.encoding.index());
        let table = match name {
            "state_r" => &self.coarse.state_r,
            "state_a" => &self.coarse.state_a,
            "int_r" => &self.coarse.int_r,
            "int_a" => &self.coarse.int_a,
            _ => return None,
        };
        table.get(w - 1).map(|t| t[i][j])
    }

    /// The worst-case signed deltas used by the chi chain. The chain is
    /// monotone increasing in the (0,1) shift and decreasing in the (0,+)
    /// and (1,+) shifts, so the conservative corner takes the (0,1) interval
    /// minimum and the other two maxima.
    pub fn delta_worst_case(&self) -> (f64, f64, f64) {
        let d01 = self.coarse.delta[0].lo;
        let d0p = self.coarse.delta[1].hi;
        let d1p = self.coarse.delta[2].hi;
        (d01, d0p, d1p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_no_cross_zeroes_cross_families() {
        let c = CoarseEpsilons::uniform(2, 1e-6, false);
        assert_eq!(c.state_r0, [1e-6; 3]);
        assert_eq!(c.state_a0[0][1], 0.0);
        assert_eq!(c.int_r[0][2][1], 0.0);
        assert_eq!(c.int_a[1][2][1], 1e-6);
        assert_eq!(c.bit_int, [0.0; 3]);

        let c = CoarseEpsilons::uniform(2, 1e-6, true);
        assert_eq!(c.state_a0[0][1], 1e-6);
        assert_eq!(c.int_r[0][2][1], 1e-6);
        assert_eq!(c.bit_int, [1e-6; 3]);
    }

    #[test]
    fn validate_rejects_out_of_range() {
        let mut c = CoarseEpsilons::zero(1);
        c.state_r[0][0][0] = 1.5;
        assert!(c.validate(1).is_err());
        assert!(CoarseEpsilons::zero(1).validate(1).is_ok());
    }

    #[test]
    fn fine_lookup_missing_entry_errors() {
        let fine = FineEpsilons::default();
        let err = fine.state(Family::R, FineKey::new(0, 1, 1, 2, 0));
        assert!(matches!(err, Err(Error::MissingEpsilon(_))));
    }

    #[test]
    fn pair_index_is_canonical() {
        assert_eq!(
            encoding_pair_index(Encoding::Bit0, Encoding::Bit1),
            encoding_pair_index(Encoding::Bit1, Encoding::Bit0)
        );
        assert_eq!(encoding_pair_index(Encoding::Bit1, Encoding::Plus), 2);
    }

    #[test]
    fn epsilon_set_roundtrips_through_json() {
        let mut set = EpsilonSet::uniform(2, 1e-5, true);
        let mut fine = FineEpsilons::default();
        fine.state_r.insert(FineKey::new(0, 2, 1, 1, 37), 5e-6);
        fine.delta.insert((1, 2, 4), -3e-6);
        set.fine = Some(fine);
        let json = serde_json::to_string(&set).unwrap();
        let back: EpsilonSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back.xi, 2);
        assert_eq!(
            back.fine.as_ref().unwrap().state_r[&FineKey::new(0, 2, 1, 1, 37)],
            5e-6
        );
    }
}

//! Sub-module measurement tables: parsing, composition into a fine-grained
//! source description, and derivation of the correlation parameters.
//!
//! Each table reports one modulation stage measured in isolation: rows are
//! the current setting, columns the previous-setting pattern (length 3,
//! most recent first). Because the stages are independent, the per-sequence
//! intensity is the product of the per-stage deviation factors times the
//! configured nominal intensity; the single-photon encoding amplitude comes
//! from the state table directly.

use std::fmt;
use std::path::Path;

use crate::epsilon::{
    encoding_pair_index, CoarseEpsilons, EpsilonSet, FineEpsilons, FineKey, Interval,
};
use crate::error::{Error, Result};
use crate::model::{Encoding, ProtocolConfig, Setting, NUM_SETTINGS};

/// Pattern length used by the shipped tables.
pub const PATTERN_LEN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    /// Decoy-stage intensities, normalized by the mean signal intensity.
    ImIntensity,
    /// Basis-balancing stage intensities, normalized by the mean Z output.
    SiIntensity,
    /// Encoding-stage single-photon amplitudes (the early-bin coefficient).
    OsState,
    /// Encoding-stage intensities.
    OsIntensity,
}

impl TableKind {
    /// Alphabet size of the pattern symbols.
    fn alphabet(self) -> usize {
        match self {
            TableKind::ImIntensity | TableKind::OsState | TableKind::OsIntensity => 3,
            TableKind::SiIntensity => 2,
        }
    }

    fn row_labels(self) -> &'static [&'static str] {
        match self {
            TableKind::ImIntensity => &["omega", "nu", "mu"],
            TableKind::SiIntensity => &["Z", "X"],
            TableKind::OsState | TableKind::OsIntensity => &["0", "1", "plus"],
        }
    }

    fn symbol(self, ch: char) -> Option<usize> {
        match self {
            TableKind::ImIntensity => match ch {
                'w' => Some(0),
                'n' => Some(1),
                'm' => Some(2),
                _ => None,
            },
            TableKind::SiIntensity => match ch {
                'Z' => Some(0),
                'X' => Some(1),
                _ => None,
            },
            TableKind::OsState | TableKind::OsIntensity => match ch {
                '0' => Some(0),
                '1' => Some(1),
                'p' => Some(2),
                _ => None,
            },
        }
    }

    fn cell_ok(self, v: f64) -> bool {
        match self {
            TableKind::OsState => (0.0..=1.0).contains(&v),
            _ => v > 0.0,
        }
    }
}

impl fmt::Display for TableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TableKind::ImIntensity => "IM-intensity",
            TableKind::SiIntensity => "SI-intensity",
            TableKind::OsState => "OS-state",
            TableKind::OsIntensity => "OS-intensity",
        };
        f.write_str(s)
    }
}

/// One parsed measurement table in canonical layout: rows in label order,
/// columns in pattern-code order (`sym0 * B^2 + sym1 * B + sym2`, symbol 0
/// being the most recent previous round).
#[derive(Debug, Clone)]
pub struct SubTable {
    pub kind: TableKind,
    pub source: String,
    /// `cells[row][pattern_code]`
    pub cells: Vec<Vec<f64>>,
}

impl SubTable {
    pub fn num_cols(&self) -> usize {
        self.kind.alphabet().pow(PATTERN_LEN as u32)
    }

    pub fn cell(&self, row: usize, pattern_code: usize) -> f64 {
        self.cells[row][pattern_code]
    }

    pub fn row_mean(&self, row: usize) -> f64 {
        let r = &self.cells[row];
        r.iter().sum::<f64>() / r.len() as f64
    }

    /// Parses the CSV text of one table. Cell coordinates in errors are
    /// 1-based file positions.
    pub fn parse(kind: TableKind, source: &str, text: &str) -> Result<SubTable> {
        let err = |row: usize, col: usize, msg: String| Error::TableParse {
            file: source.to_string(),
            row,
            col,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hrow, header) = lines
            .next()
            .ok_or_else(|| err(1, 1, "empty table".into()))?;
        let fields: Vec<&str> = header.split(',').map(str::trim).collect();
        if fields.is_empty() || !fields[0].starts_with("Prev") {
            return Err(err(hrow + 1, 1, "first header cell must be \"Prev. selec.\"".into()));
        }
        let ncols = kind.alphabet().pow(PATTERN_LEN as u32);
        let mut col_codes = Vec::with_capacity(fields.len() - 1);
        for (ci, pat) in fields[1..].iter().enumerate() {
            let chars: Vec<char> = pat.chars().collect();
            if chars.len() != PATTERN_LEN {
                return Err(err(
                    hrow + 1,
                    ci + 2,
                    format!("pattern {pat:?} must have {PATTERN_LEN} symbols"),
                ));
            }
            let mut code = 0usize;
            for ch in chars {
                let sym = kind.symbol(ch).ok_or_else(|| {
                    err(hrow + 1, ci + 2, format!("unknown symbol {ch:?} for {kind}"))
                })?;
                code = code * kind.alphabet() + sym;
            }
            col_codes.push(code);
        }
        let nrows = kind.row_labels().len();
        let mut cells = vec![vec![f64::NAN; ncols]; nrows];
        let mut seen_rows = vec![false; nrows];
        for (li, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let label = fields[0];
            let row = kind
                .row_labels()
                .iter()
                .position(|&l| l == label)
                .ok_or_else(|| err(li + 1, 1, format!("unknown row label {label:?} for {kind}")))?;
            if seen_rows[row] {
                return Err(err(li + 1, 1, format!("duplicate row {label:?}")));
            }
            seen_rows[row] = true;
            if fields.len() != col_codes.len() + 1 {
                return Err(err(
                    li + 1,
                    fields.len(),
                    format!("expected {} cells, found {}", col_codes.len(), fields.len() - 1),
                ));
            }
            for (ci, raw) in fields[1..].iter().enumerate() {
                let v: f64 = raw.parse().map_err(|_| {
                    err(li + 1, ci + 2, format!("non-numeric cell {raw:?}"))
                })?;
                if !kind.cell_ok(v) {
                    return Err(err(li + 1, ci + 2, format!("cell {v} out of range for {kind}")));
                }
                let code = col_codes[ci];
                if !cells[row][code].is_nan() {
                    return Err(err(li + 1, ci + 2, "duplicate pattern column".into()));
                }
                cells[row][code] = v;
            }
        }
        for (r, seen) in seen_rows.iter().enumerate() {
            if !seen {
                return Err(err(
                    0,
                    0,
                    format!("missing row {:?}", kind.row_labels()[r]),
                ));
            }
        }
        for (r, row) in cells.iter().enumerate() {
            if let Some(c) = row.iter().position(|v| v.is_nan()) {
                return Err(err(
                    0,
                    0,
                    format!("missing cell: row {:?}, pattern code {c}", kind.row_labels()[r]),
                ));
            }
        }
        Ok(SubTable {
            kind,
            source: source.to_string(),
            cells,
        })
    }

    pub fn load(kind: TableKind, path: &Path) -> Result<SubTable> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        SubTable::parse(kind, &path.display().to_string(), &text)
    }
}

/// The four tables describing the transmitter stages.
#[derive(Debug, Clone)]
pub struct TableSet {
    pub im: SubTable,
    pub si: SubTable,
    pub os_state: SubTable,
    pub os_intensity: SubTable,
}

impl TableSet {
    pub fn load_dir(dir: &Path) -> Result<TableSet> {
        Ok(TableSet {
            im: SubTable::load(TableKind::ImIntensity, &dir.join("im.csv"))?,
            si: SubTable::load(TableKind::SiIntensity, &dir.join("si.csv"))?,
            os_state: SubTable::load(TableKind::OsState, &dir.join("os_state.csv"))?,
            os_intensity: SubTable::load(TableKind::OsIntensity, &dir.join("os_intensity.csv"))?,
        })
    }
}

/// How unobserved older pattern slots are folded away when `xi` is shorter
/// than the table pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marginalization {
    #[default]
    Weighted,
    WorstCase,
}

/// Per-sequence actual intensities and single-photon amplitudes for every
/// window of length xi + 1.
#[derive(Debug, Clone)]
pub struct FineGrainedSource {
    pub xi: usize,
    alpha: Vec<f64>,
    lambda: Vec<f64>,
    uniform: bool,
}

impl FineGrainedSource {
    pub fn num_windows(&self) -> usize {
        self.alpha.len()
    }

    #[inline]
    pub fn alpha(&self, window: usize) -> f64 {
        self.alpha[window]
    }

    #[inline]
    pub fn lambda(&self, window: usize) -> f64 {
        self.lambda[window]
    }

    /// True when every window with the same current setting carries exactly
    /// the same values, so all past sequences are interchangeable.
    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn max_alpha(&self) -> f64 {
        self.alpha.iter().cloned().fold(0.0, f64::max)
    }

    fn check_uniform(xi: usize, alpha: &[f64], lambda: &[f64]) -> bool {
        let past = NUM_SETTINGS.pow(xi as u32);
        for cur in 0..NUM_SETTINGS {
            let base = cur * past;
            for p in 1..past {
                if alpha[base + p] != alpha[base] || lambda[base + p] != lambda[base] {
                    return false;
                }
            }
        }
        true
    }

    /// Ideal source: nominal intensities, flat-SPF amplitudes, no history
    /// dependence.
    pub fn ideal(cfg: &ProtocolConfig) -> FineGrainedSource {
        let windows = NUM_SETTINGS.pow(cfg.xi as u32 + 1);
        let past = NUM_SETTINGS.pow(cfg.xi as u32);
        let mut alpha = vec![0.0; windows];
        let mut lambda = vec![0.0; windows];
        for code in 0..windows {
            let cur = Setting::from_index(code / past);
            alpha[code] = cfg.intensity(cur.intensity);
            lambda[code] = ideal_lambda(cur.encoding, cfg);
        }
        FineGrainedSource {
            xi: cfg.xi,
            alpha,
            lambda,
            uniform: true,
        }
    }
}

/// Early-bin amplitude of the flat-SPF single-photon states.
pub fn ideal_lambda(r: Encoding, cfg: &ProtocolConfig) -> f64 {
    match r {
        Encoding::Bit0 => 1.0,
        Encoding::Bit1 => (cfg.delta1 / 2.0).sin(),
        Encoding::Plus => (cfg.delta2 / 4.0 + std::f64::consts::FRAC_PI_4).cos(),
    }
}

/// Qubit overlap of two early/late superpositions given their early-bin
/// amplitudes.
pub fn qubit_overlap(l1: f64, l2: f64) -> f64 {
    l1 * l2 + ((1.0 - l1 * l1).max(0.0) * (1.0 - l2 * l2).max(0.0)).sqrt()
}

/// Flat-SPF overlap for an encoding pair at the configured angles.
pub fn ideal_overlap(pair: usize, cfg: &ProtocolConfig) -> f64 {
    let th2 = cfg.delta2 / 4.0 + std::f64::consts::FRAC_PI_4;
    match pair {
        0 => (cfg.delta1 / 2.0).sin(),          // (0, 1)
        1 => th2.cos(),                         // (0, +)
        2 => (th2 - cfg.delta1 / 2.0).sin(),    // (1, +)
        _ => unreachable!(),
    }
}

/// Marginalized deviation factor `cell / row_mean` with the unobserved
/// older slots folded by protocol probabilities or replaced by the
/// worst-case cell.
fn marginal_cell(
    table: &SubTable,
    row: usize,
    observed: &[usize],
    weights: &[f64],
    mode: Marginalization,
) -> f64 {
    let alpha_b = table.kind.alphabet();
    let obs_len = observed.len().min(PATTERN_LEN);
    let free = PATTERN_LEN - obs_len;
    let mut base = 0usize;
    for &o in &observed[..obs_len] {
        base = base * alpha_b + o;
    }
    base *= alpha_b.pow(free as u32);
    if free == 0 {
        return table.cell(row, base);
    }
    let mean = table.row_mean(row);
    match mode {
        Marginalization::Weighted => {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for ext in 0..alpha_b.pow(free as u32) {
                let mut w = 1.0;
                let mut e = ext;
                for _ in 0..free {
                    w *= weights[e % alpha_b];
                    e /= alpha_b;
                }
                acc += w * table.cell(row, base + ext);
                wsum += w;
            }
            acc / wsum
        }
        Marginalization::WorstCase => {
            let mut best = table.cell(row, base);
            let mut best_dev = (best / mean - 1.0).abs();
            for ext in 1..alpha_b.pow(free as u32) {
                let v = table.cell(row, base + ext);
                let dev = (v / mean - 1.0).abs();
                if dev > best_dev {
                    best = v;
                    best_dev = dev;
                }
            }
            best
        }
    }
}

/// Composes the per-sequence source from the stage tables: the intensity is
/// the configured nominal value times each stage's deviation factor, the
/// amplitude comes from the state table.
pub fn compose_source(
    tables: &TableSet,
    cfg: &ProtocolConfig,
    mode: Marginalization,
) -> Result<FineGrainedSource> {
    if cfg.xi > PATTERN_LEN {
        return Err(Error::TableMismatch(format!(
            "xi = {} exceeds the table pattern length {PATTERN_LEN}",
            cfg.xi
        )));
    }
    let xi = cfg.xi;
    let windows = NUM_SETTINGS.pow(xi as u32 + 1);
    let past_count = NUM_SETTINGS.pow(xi as u32);
    let int_weights = [
        cfg.intensity_probs.omega,
        cfg.intensity_probs.nu,
        cfg.intensity_probs.mu,
    ];
    let basis_weights = [cfg.alice_z_prob(), cfg.alice_x_prob()];
    let enc_weights = [
        cfg.encoding_probs.bit0,
        cfg.encoding_probs.bit1,
        cfg.encoding_probs.plus,
    ];

    let mut alpha = vec![0.0; windows];
    let mut lambda = vec![0.0; windows];
    for code in 0..windows {
        let cur = Setting::from_index(code / past_count);
        let past: Vec<Setting> = (0..xi)
            .map(|i| {
                Setting::from_index(
                    (code / NUM_SETTINGS.pow((xi - 1 - i) as u32)) % NUM_SETTINGS,
                )
            })
            .collect();
        let int_pat: Vec<usize> = past.iter().map(|s| s.intensity.index()).collect();
        let basis_pat: Vec<usize> = past
            .iter()
            .map(|s| if s.encoding.is_z() { 0 } else { 1 })
            .collect();
        let enc_pat: Vec<usize> = past.iter().map(|s| s.encoding.index()).collect();

        let im_row = cur.intensity.index(); // row order omega, nu, mu
        let im = marginal_cell(&tables.im, im_row, &int_pat, &int_weights, mode)
            / tables.im.row_mean(im_row);
        let si_row = if cur.encoding.is_z() { 0 } else { 1 };
        let si = marginal_cell(&tables.si, si_row, &basis_pat, &basis_weights, mode)
            / tables.si.row_mean(si_row);
        let os_row = cur.encoding.index();
        let osi = marginal_cell(&tables.os_intensity, os_row, &enc_pat, &enc_weights, mode)
            / tables.os_intensity.row_mean(os_row);
        let a = cfg.intensity(cur.intensity) * im * si * osi;
        if a <= 0.0 {
            return Err(Error::Data(format!(
                "composed intensity {a} <= 0 for window {code}"
            )));
        }
        alpha[code] = a;
        lambda[code] = marginal_cell(&tables.os_state, os_row, &enc_pat, &enc_weights, mode);
    }
    let uniform = FineGrainedSource::check_uniform(xi, &alpha, &lambda);
    Ok(FineGrainedSource {
        xi,
        alpha,
        lambda,
        uniform,
    })
}

fn window_slots(code: usize, xi: usize) -> Vec<Setting> {
    (0..=xi)
        .map(|i| Setting::from_index((code / NUM_SETTINGS.pow((xi - i) as u32)) % NUM_SETTINGS))
        .collect()
}

fn pack_without_slot(slots: &[Setting], skip: usize) -> u32 {
    let mut ctx = 0u32;
    for (i, s) in slots.iter().enumerate() {
        if i != skip {
            ctx = ctx * NUM_SETTINGS as u32 + s.index() as u32;
        }
    }
    ctx
}

/// Derives the full parameter set from a composed source. `floors` holds
/// one side-channel floor per distance w in 0..=xi, applied to the
/// state-overlap families (the tables only witness the qubit subspace).
pub fn derive_epsilons(
    src: &FineGrainedSource,
    cfg: &ProtocolConfig,
    floors: &[f64],
) -> Result<EpsilonSet> {
    let xi = src.xi;
    if floors.len() != xi + 1 {
        return Err(Error::Config(vec![format!(
            "sidechannel_floor needs {} entries (w = 0..=xi), got {}",
            xi + 1,
            floors.len()
        )]));
    }
    if src.alpha.iter().any(|&a| a <= 0.0) {
        return Err(Error::Data("composed source has non-positive intensity".into()));
    }

    let mut coarse = CoarseEpsilons::zero(xi);
    let mut fine = FineEpsilons::default();
    let mut delta_hull: [Option<Interval>; 3] = [None, None, None];

    let windows = NUM_SETTINGS.pow(xi as u32 + 1);
    for code in 0..windows {
        let slots = window_slots(code, xi);
        let cur = slots[0];
        for w in 0..=xi {
            let mult = NUM_SETTINGS.pow((xi - w) as u32);
            let slot = slots[w];
            let ctx = pack_without_slot(&slots, w);

            // Vary the encoding at slot w (the eps_r family).
            for r2 in (slot.encoding.index() + 1)..3 {
                let other_code = code + (r2 - slot.encoding.index()) * mult;
                let (a1, a2) = (src.alpha[code], src.alpha[other_code]);
                let (l1, l2) = (src.lambda[code], src.lambda[other_code]);
                // At w = 0 the two states differ in the current encoding by
                // design; the parameter there is the side-channel ratio the
                // qubit tables cannot see, so only the floor applies.
                let state_dev = if w == 0 {
                    floors[0]
                } else {
                    ((1.0 - qubit_overlap(l1, l2).powi(2)).max(0.0)).max(floors[w])
                };
                let int_dev = ((a1 - a2) / (a1 + a2)).abs();
                let nominal = cfg.intensity(cur.intensity);
                let bar_dev = (a1 + a2) / (2.0 * nominal) - 1.0;
                let key = FineKey::new(
                    slot.encoding.index(),
                    r2,
                    w,
                    slot.intensity.index(),
                    ctx,
                );
                fine.state_r.insert(key, state_dev);
                fine.int_r.insert(key, int_dev);
                fine.bar_r.insert(key, bar_dev);
                if w == 0 {
                    let pair = encoding_pair_index(slot.encoding, Encoding::from_index(r2));
                    let m = &mut coarse.state_r0[pair];
                    *m = m.max(state_dev);
                    if slot.encoding == Encoding::Bit0 && r2 == Encoding::Bit1.index() {
                        let a_idx = slot.intensity.index();
                        coarse.bit_int[a_idx] = coarse.bit_int[a_idx].max(int_dev);
                        coarse.bit_int_bar[a_idx] = coarse.bit_int_bar[a_idx].max(bar_dev);
                        fine.bit_int.insert((a_idx as u8, ctx), int_dev);
                        fine.bit_int_bar.insert((a_idx as u8, ctx), bar_dev);
                    }
                    // Signed overlap shift against the flat-SPF overlap.
                    let pair_idx = pair;
                    let shift =
                        ideal_overlap(pair_idx, cfg) - qubit_overlap(l1, l2);
                    fine.delta
                        .insert((pair_idx as u8, slot.intensity.index() as u8, ctx), shift);
                    match &mut delta_hull[pair_idx] {
                        Some(iv) => iv.hull(shift),
                        h => *h = Some(Interval::point(shift)),
                    }
                } else {
                    let (ci, cj) = (cur.intensity.index(), cur.encoding.index());
                    let sr = &mut coarse.state_r[w - 1][ci][cj];
                    *sr = sr.max(state_dev);
                    let ir = &mut coarse.int_r[w - 1][ci][cj];
                    *ir = ir.max(int_dev);
                }
            }

            // Vary the intensity at slot w (the eps_a family).
            for a2 in (slot.intensity.index() + 1)..3 {
                let other_code = code + (a2 - slot.intensity.index()) * 3 * mult;
                let (a1v, a2v) = (src.alpha[code], src.alpha[other_code]);
                let (l1, l2) = (src.lambda[code], src.lambda[other_code]);
                let state_dev =
                    ((1.0 - qubit_overlap(l1, l2).powi(2)).max(0.0)).max(floors[w]);
                let int_dev = ((a1v - a2v) / (a1v + a2v)).abs();
                let nominal = cfg.intensity(cur.intensity);
                let bar_dev = (a1v + a2v) / (2.0 * nominal) - 1.0;
                let key = FineKey::new(
                    slot.intensity.index(),
                    a2,
                    w,
                    slot.encoding.index(),
                    ctx,
                );
                fine.state_a.insert(key, state_dev);
                if w > 0 {
                    // The current-round intensity pair is the decoy
                    // modulation itself; its ratio carries no deviation
                    // meaning, so only deeper slots are recorded.
                    fine.int_a.insert(key, int_dev);
                    fine.bar_a.insert(key, bar_dev);
                }
                if w == 0 {
                    let m = &mut coarse.state_a0[slot.intensity.index()][a2];
                    *m = m.max(state_dev);
                    let m = &mut coarse.state_a0[a2][slot.intensity.index()];
                    *m = m.max(state_dev);
                } else {
                    let (ci, cj) = (cur.intensity.index(), cur.encoding.index());
                    let sa = &mut coarse.state_a[w - 1][ci][cj];
                    *sa = sa.max(state_dev);
                    let ia = &mut coarse.int_a[w - 1][ci][cj];
                    *ia = ia.max(int_dev);
                }
            }
        }
    }

    for (i, h) in delta_hull.into_iter().enumerate() {
        coarse.delta[i] = h.unwrap_or(Interval::point(0.0));
    }
    // Floors dominate derived values wherever the tables saw nothing.
    for (i, f) in floors.iter().enumerate() {
        if i == 0 {
            for v in &mut coarse.state_r0 {
                *v = v.max(*f);
            }
            for r in 0..3 {
                for c in 0..3 {
                    if r != c {
                        coarse.state_a0[r][c] = coarse.state_a0[r][c].max(*f);
                    }
                }
            }
        } else {
            for t in [&mut coarse.state_r[i - 1], &mut coarse.state_a[i - 1]] {
                for row in t.iter_mut() {
                    for v in row.iter_mut() {
                        *v = v.max(*f);
                    }
                }
            }
        }
    }

    let set = EpsilonSet {
        xi,
        coarse,
        fine: Some(fine),
    };
    set.validate()?;
    Ok(set)
}

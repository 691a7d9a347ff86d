//! Calendar-structured tensors and their unfolding into data tables.
//!
//! A sampled signal like "temperature every 3 hours for 12 years" is laid
//! out as a dense multiway array whose modes are calendar scales: hour of
//! the day, day of the year, year, plus non-temporal modes such as the
//! measuring site. Each timestamp maps to exactly one cell, so duplicate
//! records are an error and gaps in the record become missing cells rather
//! than silently shifting everything after them.
//!
//! Mode order is significant everywhere: tensor layout, unfolding, and row
//! and column label order all follow the declaration order with the first
//! listed mode varying slowest.

use crate::error::AscaError;
use crate::Result;
use chrono::{Datelike, NaiveDateTime, Timelike};
use nalgebra::DMatrix;

/// Hours in a calendar day.
const DAY_HOURS: u64 = 24;
/// Days kept per year once February 29 is removed.
const YEAR_DAYS: u64 = 365;

/// Time granularity or cycle length. `Hours(3)` means one sample every
/// three hours; `Year` always means the 365-day year that remains after
/// leap days are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeUnit {
    Hours(u32),
    Day,
    Week,
    Fortnight,
    Year,
}

impl TimeUnit {
    pub fn hours(self) -> u64 {
        match self {
            TimeUnit::Hours(m) => u64::from(m),
            TimeUnit::Day => DAY_HOURS,
            TimeUnit::Week => 7 * DAY_HOURS,
            TimeUnit::Fortnight => 14 * DAY_HOURS,
            TimeUnit::Year => YEAR_DAYS * DAY_HOURS,
        }
    }

    /// The unit spanning `block` consecutive copies of `self`, collapsed
    /// back to a named unit when the hour count matches one.
    pub fn scaled(self, block: usize) -> TimeUnit {
        let h = self.hours() * block as u64;
        match h {
            h if h == DAY_HOURS => TimeUnit::Day,
            h if h == 7 * DAY_HOURS => TimeUnit::Week,
            h if h == 14 * DAY_HOURS => TimeUnit::Fortnight,
            h if h == YEAR_DAYS * DAY_HOURS => TimeUnit::Year,
            h => TimeUnit::Hours(h as u32),
        }
    }
}

/// How a mode relates to time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    /// Repeats every period: hour of the day, day of the week, week of
    /// the year.
    Cyclostationary,
    /// The single slow axis along which the cycle may drift. Must end up
    /// in the rows of any unfolding.
    Evolution,
    /// No calendar meaning: sites, sensors, chemical species.
    NonTemporal,
}

/// One axis of the tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct CalendarModeSpec {
    pub name: String,
    pub kind: ModeKind,
    /// Sampling granularity for temporal modes.
    pub frequency_unit: Option<TimeUnit>,
    /// Cycle length for modes that repeat; `None` for a span-of-years
    /// evolution mode and for non-temporal modes.
    pub period_unit: Option<TimeUnit>,
    pub cardinality: usize,
    /// Level labels for non-temporal modes, in level order.
    pub level_names: Option<Vec<String>>,
    /// First calendar year of a span-of-years evolution mode. Inferred
    /// from the data when absent.
    pub base_year: Option<i32>,
}

/// Number of levels a (frequency, period) pair yields: whole frequency
/// steps per period, any trailing remainder folded into the last level.
pub fn derived_cardinality(frequency: TimeUnit, period: TimeUnit) -> usize {
    (period.hours() / frequency.hours()) as usize
}

impl CalendarModeSpec {
    /// A repeating temporal mode. Cardinality is derived from the units:
    /// 24 for hours in a day, 52 for weeks in a year, 26 for fortnights.
    pub fn cyclostationary(name: &str, frequency: TimeUnit, period: TimeUnit) -> Result<Self> {
        let cardinality = derived_cardinality(frequency, period);
        if cardinality == 0 {
            return Err(AscaError::CardinalityMismatch {
                name: name.to_string(),
                declared: 0,
                expected: 0,
            });
        }
        Ok(CalendarModeSpec {
            name: name.to_string(),
            kind: ModeKind::Cyclostationary,
            frequency_unit: Some(frequency),
            period_unit: Some(period),
            cardinality,
            level_names: None,
            base_year: None,
        })
    }

    /// An evolution mode spanning `n_years` years. When `base_year` is
    /// absent it is inferred as the earliest cycle year in the data.
    pub fn evolution_years(name: &str, n_years: usize, base_year: Option<i32>) -> Self {
        CalendarModeSpec {
            name: name.to_string(),
            kind: ModeKind::Evolution,
            frequency_unit: Some(TimeUnit::Year),
            period_unit: None,
            cardinality: n_years,
            level_names: None,
            base_year,
        }
    }

    /// An evolution mode that walks through one period, e.g. week of the
    /// year when the record covers a single year.
    pub fn evolution_cycle(name: &str, frequency: TimeUnit, period: TimeUnit) -> Result<Self> {
        let mut spec = Self::cyclostationary(name, frequency, period)?;
        spec.kind = ModeKind::Evolution;
        Ok(spec)
    }

    /// A mode with no calendar meaning; levels are the given names in
    /// order.
    pub fn non_temporal(name: &str, level_names: Vec<String>) -> Self {
        let cardinality = level_names.len();
        CalendarModeSpec {
            name: name.to_string(),
            kind: ModeKind::NonTemporal,
            frequency_unit: None,
            period_unit: None,
            cardinality,
            level_names: Some(level_names),
            base_year: None,
        }
    }

    /// Human-readable label for one level of this mode.
    pub fn level_label(&self, level: usize) -> String {
        if let Some(names) = &self.level_names {
            return names[level].clone();
        }
        if self.kind == ModeKind::Evolution && self.frequency_unit == Some(TimeUnit::Year) {
            if let Some(base) = self.base_year {
                return (base + level as i32).to_string();
            }
        }
        level.to_string()
    }
}

/// Global calendar conventions shared by every temporal mode.
#[derive(Debug, Clone, Copy)]
pub struct Calendar {
    /// Day of the 365-day year (1-based) on which a year starts. 1 keeps
    /// calendar years; 244 starts years on the 1st of September, the
    /// hydrological convention.
    pub year_start_day: u32,
}

impl Default for Calendar {
    fn default() -> Self {
        Calendar { year_start_day: 1 }
    }
}

/// One measurement: wall-clock timestamp, series label, value.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub timestamp: NaiveDateTime,
    pub series: String,
    pub value: f64,
}

/// Day of year in 1..=365 with February 29 removed; `None` on the leap
/// day itself.
fn adjusted_day_of_year(ts: &NaiveDateTime) -> Option<u32> {
    let date = ts.date();
    if date.month() == 2 && date.day() == 29 {
        return None;
    }
    let doy = date.ordinal();
    if date.leap_year() && doy > 59 {
        Some(doy - 1)
    } else {
        Some(doy)
    }
}

/// Calendar position of a timestamp after leap-day removal.
struct CalendarPoint {
    /// Year the timestamp belongs to once the year start is shifted.
    cycle_year: i32,
    /// Whole days since the start of the cycle year, 0..365.
    day_in_year: u32,
    /// Hour of the day, 0..24.
    hour: u32,
    /// Day of the week, Monday = 0.
    weekday: u32,
}

fn calendar_point(ts: &NaiveDateTime, cal: &Calendar) -> Option<CalendarPoint> {
    let doy = adjusted_day_of_year(ts)?;
    let (cycle_year, day_in_year) = if doy >= cal.year_start_day {
        (ts.year(), doy - cal.year_start_day)
    } else {
        (ts.year() - 1, doy + YEAR_DAYS as u32 - cal.year_start_day)
    };
    Some(CalendarPoint {
        cycle_year,
        day_in_year,
        hour: ts.hour(),
        weekday: ts.weekday().num_days_from_monday(),
    })
}

/// Level of `spec` a calendar point falls in. `base_year` applies to
/// span-of-years evolution modes only.
fn temporal_level(
    spec: &CalendarModeSpec,
    point: &CalendarPoint,
    base_year: i32,
    timestamp: &NaiveDateTime,
) -> Result<usize> {
    let out_of_range = |level: i64| AscaError::UnmappableTimestamp {
        timestamp: timestamp.to_string(),
        mode: spec.name.clone(),
        level,
        cardinality: spec.cardinality,
    };
    let freq = spec
        .frequency_unit
        .ok_or_else(|| AscaError::MissingSeriesMode(spec.name.clone()))?;

    // Span of years: no period, one level per cycle year.
    let Some(period) = spec.period_unit else {
        let level = i64::from(point.cycle_year) - i64::from(base_year);
        if level < 0 || level >= spec.cardinality as i64 {
            return Err(out_of_range(level));
        }
        return Ok(level as usize);
    };

    // Position within the period, in hours. Weeks anchor on the real
    // weekday; other periods count from the start of the cycle year.
    let within = match period {
        TimeUnit::Day => u64::from(point.hour),
        TimeUnit::Week => u64::from(point.weekday) * DAY_HOURS + u64::from(point.hour),
        TimeUnit::Year => u64::from(point.day_in_year) * DAY_HOURS + u64::from(point.hour),
        other => {
            (u64::from(point.day_in_year) * DAY_HOURS + u64::from(point.hour)) % other.hours()
        }
    };
    // Trailing remainder (week 52 holding day 365) folds into the last
    // level.
    let raw = (within / freq.hours()) as usize;
    Ok(raw.min(spec.cardinality - 1))
}

/// Dense multiway array with calendar-labeled modes. Laid out row-major:
/// the first mode varies slowest. Missing cells are flagged and hold NaN;
/// observed cells are always finite.
#[derive(Debug, Clone)]
pub struct LabeledTensor {
    modes: Vec<CalendarModeSpec>,
    values: Vec<f64>,
    missing: Vec<bool>,
    /// Records dropped because they fell on February 29.
    pub skipped_leap_records: usize,
}

impl LabeledTensor {
    /// Assemble a tensor from raw parts. `values` must be in row-major
    /// order and finite wherever `missing` is false.
    pub fn from_parts(
        modes: Vec<CalendarModeSpec>,
        values: Vec<f64>,
        missing: Vec<bool>,
    ) -> Result<Self> {
        let len: usize = modes.iter().map(|m| m.cardinality).product();
        if values.len() != len || missing.len() != len {
            return Err(AscaError::ShapeMismatch(format!(
                "tensor of shape {:?} needs {} cells, got {} values and {} flags",
                modes.iter().map(|m| m.cardinality).collect::<Vec<_>>(),
                len,
                values.len(),
                missing.len()
            )));
        }
        if values
            .iter()
            .zip(&missing)
            .any(|(v, &m)| !m && !v.is_finite())
        {
            return Err(AscaError::NonFiniteInput);
        }
        Ok(LabeledTensor {
            modes,
            values,
            missing,
            skipped_leap_records: 0,
        })
    }

    pub fn modes(&self) -> &[CalendarModeSpec] {
        &self.modes
    }

    pub fn shape(&self) -> Vec<usize> {
        self.modes.iter().map(|m| m.cardinality).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn flat_index(&self, levels: &[usize]) -> usize {
        let mut idx = 0;
        for (l, m) in levels.iter().zip(&self.modes) {
            idx = idx * m.cardinality + l;
        }
        idx
    }

    pub fn value(&self, levels: &[usize]) -> f64 {
        self.values[self.flat_index(levels)]
    }

    pub fn is_missing(&self, levels: &[usize]) -> bool {
        self.missing[self.flat_index(levels)]
    }

    pub fn observed_count(&self) -> usize {
        self.missing.iter().filter(|&&m| !m).count()
    }

    /// Sum of observed entries.
    pub fn observed_sum(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.missing)
            .filter(|(_, &m)| !m)
            .map(|(v, _)| v)
            .sum()
    }

    pub fn mode_position(&self, name: &str) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| AscaError::UnknownMode(name.to_string()))
    }

    /// Reorder modes; `order` lists current positions in their new order.
    pub fn permute(&self, order: &[usize]) -> Result<LabeledTensor> {
        if order.len() != self.modes.len() {
            return Err(AscaError::ShapeMismatch(format!(
                "permutation of length {} for {} modes",
                order.len(),
                self.modes.len()
            )));
        }
        let mut seen = vec![false; order.len()];
        for &o in order {
            if o >= order.len() || seen[o] {
                return Err(AscaError::ShapeMismatch(
                    "mode permutation is not a bijection".to_string(),
                ));
            }
            seen[o] = true;
        }
        let new_modes: Vec<CalendarModeSpec> =
            order.iter().map(|&o| self.modes[o].clone()).collect();
        let mut out = LabeledTensor {
            modes: new_modes,
            values: vec![f64::NAN; self.len()],
            missing: vec![true; self.len()],
            skipped_leap_records: self.skipped_leap_records,
        };
        let shape = self.shape();
        let mut levels = vec![0usize; shape.len()];
        for flat in 0..self.len() {
            decode_levels(flat, &shape, &mut levels);
            let new_levels: Vec<usize> = order.iter().map(|&o| levels[o]).collect();
            let dst = out.flat_index(&new_levels);
            out.values[dst] = self.values[flat];
            out.missing[dst] = self.missing[flat];
        }
        Ok(out)
    }

    /// Rename a mode in place.
    pub fn rename_mode(&mut self, from: &str, to: &str) -> Result<()> {
        let pos = self.mode_position(from)?;
        self.modes[pos].name = to.to_string();
        Ok(())
    }
}

fn decode_levels(mut flat: usize, shape: &[usize], out: &mut [usize]) {
    for i in (0..shape.len()).rev() {
        out[i] = flat % shape[i];
        flat /= shape[i];
    }
}

fn validate_modes(modes: &[CalendarModeSpec]) -> Result<()> {
    let mut evolution: Option<&str> = None;
    for (i, m) in modes.iter().enumerate() {
        if modes[..i].iter().any(|o| o.name == m.name) {
            return Err(AscaError::DuplicateMode(m.name.clone()));
        }
        if m.kind == ModeKind::Evolution {
            if let Some(first) = evolution {
                return Err(AscaError::MultipleEvolutionModes(
                    first.to_string(),
                    m.name.clone(),
                ));
            }
            evolution = Some(&m.name);
        }
        if m.kind != ModeKind::NonTemporal {
            if let (Some(f), Some(p)) = (m.frequency_unit, m.period_unit) {
                let expected = derived_cardinality(f, p);
                if expected != m.cardinality {
                    return Err(AscaError::CardinalityMismatch {
                        name: m.name.clone(),
                        declared: m.cardinality,
                        expected,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Fold records into a tensor. Every timestamp (plus the series label when
/// `series_mode` names a non-temporal mode) must map to a distinct cell.
/// Records on February 29 are dropped and counted, not errors. Cells no
/// record maps to are missing.
pub fn build_tensor(
    records: &[Record],
    modes: &[CalendarModeSpec],
    series_mode: Option<&str>,
    calendar: &Calendar,
) -> Result<LabeledTensor> {
    validate_modes(modes)?;
    let series_pos = match series_mode {
        Some(name) => {
            let pos = modes
                .iter()
                .position(|m| m.name == name)
                .ok_or_else(|| AscaError::UnknownMode(name.to_string()))?;
            if modes[pos].level_names.is_none() {
                return Err(AscaError::MissingSeriesMode(name.to_string()));
            }
            Some(pos)
        }
        None => None,
    };
    for (i, m) in modes.iter().enumerate() {
        if m.kind == ModeKind::NonTemporal && Some(i) != series_pos {
            return Err(AscaError::MissingSeriesMode(m.name.clone()));
        }
    }

    // A span-of-years mode without an explicit base year anchors on the
    // earliest cycle year present.
    let needs_base = modes
        .iter()
        .any(|m| m.period_unit.is_none() && m.kind == ModeKind::Evolution && m.base_year.is_none());
    let mut base_year = i32::MAX;
    if needs_base {
        for r in records {
            if let Some(p) = calendar_point(&r.timestamp, calendar) {
                base_year = base_year.min(p.cycle_year);
            }
        }
        if base_year == i32::MAX {
            return Err(AscaError::EmptyInput);
        }
    }

    let mut modes = modes.to_vec();
    for m in &mut modes {
        if m.kind == ModeKind::Evolution && m.period_unit.is_none() && m.base_year.is_none() {
            m.base_year = Some(base_year);
        }
    }

    let len: usize = modes.iter().map(|m| m.cardinality).product();
    let mut tensor = LabeledTensor {
        modes: modes.clone(),
        values: vec![f64::NAN; len],
        missing: vec![true; len],
        skipped_leap_records: 0,
    };

    let mut levels = vec![0usize; modes.len()];
    for record in records {
        if !record.value.is_finite() {
            return Err(AscaError::NonFiniteInput);
        }
        let Some(point) = calendar_point(&record.timestamp, calendar) else {
            tensor.skipped_leap_records += 1;
            continue;
        };
        for (i, m) in modes.iter().enumerate() {
            levels[i] = if Some(i) == series_pos {
                let names = m.level_names.as_ref().expect("checked above");
                names
                    .iter()
                    .position(|n| *n == record.series)
                    .ok_or_else(|| AscaError::UnknownSeries(record.series.clone()))?
            } else {
                temporal_level(m, &point, m.base_year.unwrap_or(0), &record.timestamp)?
            };
        }
        let idx = tensor.flat_index(&levels);
        if !tensor.missing[idx] {
            return Err(AscaError::DuplicateCell {
                cell: levels.clone(),
                timestamp: record.timestamp.to_string(),
            });
        }
        tensor.values[idx] = record.value;
        tensor.missing[idx] = false;
    }
    Ok(tensor)
}

/// Observation-by-variable table produced by unfolding a tensor. Rows and
/// columns keep their originating mode levels, so the factor structure
/// survives the flattening.
#[derive(Debug, Clone)]
pub struct DesignTable {
    /// Data, NaN at masked cells.
    pub matrix: DMatrix<f64>,
    pub missing: DMatrix<bool>,
    pub row_modes: Vec<CalendarModeSpec>,
    pub col_modes: Vec<CalendarModeSpec>,
    /// Mode levels of each row, one entry per row mode.
    pub row_levels: Vec<Vec<usize>>,
    /// Mode levels of each column, one entry per column mode.
    pub col_levels: Vec<Vec<usize>>,
}

impl DesignTable {
    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Levels of one row mode across all rows, the raw material for a
    /// factor.
    pub fn factor_levels(&self, mode: &str) -> Result<Vec<usize>> {
        let pos = self
            .row_modes
            .iter()
            .position(|m| m.name == mode)
            .ok_or_else(|| AscaError::UnknownMode(mode.to_string()))?;
        Ok(self.row_levels.iter().map(|l| l[pos]).collect())
    }

    /// "mode=label" pairs identifying a row.
    pub fn row_label(&self, row: usize) -> String {
        self.row_modes
            .iter()
            .zip(&self.row_levels[row])
            .map(|(m, &l)| format!("{}={}", m.name, m.level_label(l)))
            .collect::<Vec<_>>()
            .join("|")
    }

    pub fn col_label(&self, col: usize) -> String {
        self.col_modes
            .iter()
            .zip(&self.col_levels[col])
            .map(|(m, &l)| format!("{}={}", m.name, m.level_label(l)))
            .collect::<Vec<_>>()
            .join("|")
    }

    pub fn missing_in_row(&self, row: usize) -> usize {
        (0..self.ncols()).filter(|&c| self.missing[(row, c)]).count()
    }
}

/// Unfold a tensor into a table. `row_modes` and `col_modes` must
/// partition the tensor modes; an evolution mode must land in the rows.
/// Within each side the listed order is kept and the first mode varies
/// slowest.
pub fn unfold(tensor: &LabeledTensor, row_modes: &[&str], col_modes: &[&str]) -> Result<DesignTable> {
    if col_modes.is_empty() {
        return Err(AscaError::EmptyColumnModes);
    }
    let mut row_pos = Vec::with_capacity(row_modes.len());
    for name in row_modes {
        row_pos.push(tensor.mode_position(name)?);
    }
    let mut col_pos = Vec::with_capacity(col_modes.len());
    for name in col_modes {
        let p = tensor.mode_position(name)?;
        if tensor.modes[p].kind == ModeKind::Evolution {
            return Err(AscaError::EvolutionModeInColumns(name.to_string()));
        }
        col_pos.push(p);
    }
    let mut seen = vec![false; tensor.modes.len()];
    for &p in row_pos.iter().chain(&col_pos) {
        if seen[p] {
            return Err(AscaError::DuplicateMode(tensor.modes[p].name.clone()));
        }
        seen[p] = true;
    }
    if let Some(unused) = seen.iter().position(|&s| !s) {
        return Err(AscaError::ModeNotInPartition(
            tensor.modes[unused].name.clone(),
        ));
    }

    let row_shape: Vec<usize> = row_pos.iter().map(|&p| tensor.modes[p].cardinality).collect();
    let col_shape: Vec<usize> = col_pos.iter().map(|&p| tensor.modes[p].cardinality).collect();
    let n: usize = row_shape.iter().product::<usize>().max(1);
    let m: usize = col_shape.iter().product();

    let mut matrix = DMatrix::from_element(n, m, f64::NAN);
    let mut missing = DMatrix::from_element(n, m, true);
    let mut row_levels = vec![vec![0usize; row_pos.len()]; n];
    let mut col_levels = vec![vec![0usize; col_pos.len()]; m];
    let mut full = vec![0usize; tensor.modes.len()];
    let mut rl = vec![0usize; row_pos.len()];
    let mut cl = vec![0usize; col_pos.len()];
    for r in 0..n {
        decode_levels(r, &row_shape, &mut rl);
        row_levels[r].copy_from_slice(&rl);
        for c in 0..m {
            decode_levels(c, &col_shape, &mut cl);
            if r == 0 {
                col_levels[c].copy_from_slice(&cl);
            }
            for (i, &p) in row_pos.iter().enumerate() {
                full[p] = rl[i];
            }
            for (i, &p) in col_pos.iter().enumerate() {
                full[p] = cl[i];
            }
            matrix[(r, c)] = tensor.value(&full);
            missing[(r, c)] = tensor.is_missing(&full);
        }
    }

    Ok(DesignTable {
        matrix,
        missing,
        row_modes: row_pos.iter().map(|&p| tensor.modes[p].clone()).collect(),
        col_modes: col_pos.iter().map(|&p| tensor.modes[p].clone()).collect(),
        row_levels,
        col_levels,
    })
}

/// Rebuild a tensor from a table. Modes come back in row-then-column
/// order; compose with [`LabeledTensor::permute`] to recover the original
/// order. Rows removed from the table simply leave missing cells.
pub fn fold(table: &DesignTable) -> Result<LabeledTensor> {
    let modes: Vec<CalendarModeSpec> = table
        .row_modes
        .iter()
        .chain(&table.col_modes)
        .cloned()
        .collect();
    validate_modes(&modes)?;
    let len: usize = modes.iter().map(|m| m.cardinality).product();
    let mut tensor = LabeledTensor {
        modes,
        values: vec![f64::NAN; len],
        missing: vec![true; len],
        skipped_leap_records: 0,
    };
    let mut full = vec![0usize; table.row_modes.len() + table.col_modes.len()];
    for r in 0..table.nrows() {
        full[..table.row_modes.len()].copy_from_slice(&table.row_levels[r]);
        for c in 0..table.ncols() {
            full[table.row_modes.len()..].copy_from_slice(&table.col_levels[c]);
            let idx = tensor.flat_index(&full);
            tensor.values[idx] = table.matrix[(r, c)];
            tensor.missing[idx] = table.missing[(r, c)];
        }
    }
    Ok(tensor)
}

/// Collapse a mode into blocks of `block` consecutive levels, each block
/// replaced by the mean of its observed entries. With `absorb_remainder`
/// the trailing partial block joins the final full one (so 365 days in
/// blocks of 14 give 26 fortnights, the last spanning 15 days); without
/// it the block size must divide the cardinality. Blocks with no observed
/// entry stay missing.
pub fn aggregate_mode(
    tensor: &LabeledTensor,
    mode: &str,
    block: usize,
    absorb_remainder: bool,
) -> Result<LabeledTensor> {
    if block == 0 {
        return Err(AscaError::ZeroBlock);
    }
    let pos = tensor.mode_position(mode)?;
    let card = tensor.modes[pos].cardinality;
    if block > card {
        return Err(AscaError::BlockTooLarge {
            mode: mode.to_string(),
            block,
            cardinality: card,
        });
    }
    if !absorb_remainder && card % block != 0 {
        return Err(AscaError::BlockDoesNotDivide {
            mode: mode.to_string(),
            block,
            cardinality: card,
        });
    }
    let new_card = card / block;

    let mut new_modes = tensor.modes.clone();
    {
        let m = &mut new_modes[pos];
        m.cardinality = new_card;
        m.frequency_unit = m.frequency_unit.map(|f| f.scaled(block));
        m.level_names = None;
    }

    let len: usize = new_modes.iter().map(|m| m.cardinality).product();
    let mut sums = vec![0.0f64; len];
    let mut counts = vec![0usize; len];
    let shape = tensor.shape();
    let mut levels = vec![0usize; shape.len()];
    let mut out = LabeledTensor {
        modes: new_modes,
        values: vec![f64::NAN; len],
        missing: vec![true; len],
        skipped_leap_records: tensor.skipped_leap_records,
    };
    for flat in 0..tensor.len() {
        if tensor.missing[flat] {
            continue;
        }
        decode_levels(flat, &shape, &mut levels);
        let mut grouped = levels.clone();
        grouped[pos] = (levels[pos] / block).min(new_card - 1);
        let idx = out.flat_index(&grouped);
        sums[idx] += tensor.values[flat];
        counts[idx] += 1;
    }
    for i in 0..len {
        if counts[i] > 0 {
            out.values[i] = sums[i] / counts[i] as f64;
            out.missing[i] = false;
        }
    }
    Ok(out)
}

/// Synthetic unlabeled mode for layout tests.
#[cfg(test)]
pub(crate) fn plain_mode(name: &str, cardinality: usize) -> CalendarModeSpec {
    CalendarModeSpec {
        name: name.to_string(),
        kind: ModeKind::Cyclostationary,
        frequency_unit: None,
        period_unit: None,
        cardinality,
        level_names: None,
        base_year: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn ts(y: i32, mo: u32, d: u32, h: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, mo, d)
            .unwrap()
            .and_hms_opt(h, 0, 0)
            .unwrap()
    }

    fn rec(y: i32, mo: u32, d: u32, h: u32, v: f64) -> Record {
        Record {
            timestamp: ts(y, mo, d, h),
            series: "s".to_string(),
            value: v,
        }
    }


    #[test]
    fn derived_cardinalities_match_calendar() {
        assert_eq!(derived_cardinality(TimeUnit::Hours(1), TimeUnit::Day), 24);
        assert_eq!(derived_cardinality(TimeUnit::Hours(3), TimeUnit::Day), 8);
        assert_eq!(derived_cardinality(TimeUnit::Day, TimeUnit::Week), 7);
        assert_eq!(derived_cardinality(TimeUnit::Day, TimeUnit::Year), 365);
        assert_eq!(derived_cardinality(TimeUnit::Week, TimeUnit::Year), 52);
        assert_eq!(derived_cardinality(TimeUnit::Fortnight, TimeUnit::Year), 26);
    }

    #[test]
    fn hourly_day_fills_without_gaps() {
        let records: Vec<Record> = (0..24).map(|h| rec(2021, 3, 15, h, h as f64)).collect();
        let modes = vec![CalendarModeSpec::cyclostationary("hour", TimeUnit::Hours(1), TimeUnit::Day).unwrap()];
        let t = build_tensor(&records, &modes, None, &Calendar::default()).unwrap();
        assert_eq!(t.shape(), vec![24]);
        assert_eq!(t.observed_count(), 24);
        assert_eq!(t.value(&[5]), 5.0);
    }

    #[test]
    fn absent_hour_leaves_missing_cell() {
        let records: Vec<Record> = (0..24)
            .filter(|&h| h != 7)
            .map(|h| rec(2021, 3, 15, h, h as f64))
            .collect();
        let modes = vec![CalendarModeSpec::cyclostationary("hour", TimeUnit::Hours(1), TimeUnit::Day).unwrap()];
        let t = build_tensor(&records, &modes, None, &Calendar::default()).unwrap();
        assert_eq!(t.observed_count(), 23);
        assert!(t.is_missing(&[7]));
    }

    #[test]
    fn duplicate_record_is_an_error() {
        let mut records: Vec<Record> = (0..24).map(|h| rec(2021, 3, 15, h, h as f64)).collect();
        records.push(rec(2021, 3, 15, 4, 99.0));
        let modes = vec![CalendarModeSpec::cyclostationary("hour", TimeUnit::Hours(1), TimeUnit::Day).unwrap()];
        let err = build_tensor(&records, &modes, None, &Calendar::default()).unwrap_err();
        assert!(matches!(err, AscaError::DuplicateCell { .. }));
    }

    #[test]
    fn unknown_series_is_an_error() {
        let records = vec![Record {
            timestamp: ts(2021, 1, 1, 0),
            series: "nope".to_string(),
            value: 1.0,
        }];
        let modes = vec![
            CalendarModeSpec::non_temporal("site", vec!["a".into(), "b".into()]),
            CalendarModeSpec::cyclostationary("hour", TimeUnit::Hours(1), TimeUnit::Day).unwrap(),
        ];
        let err = build_tensor(&records, &modes, Some("site"), &Calendar::default()).unwrap_err();
        assert!(matches!(err, AscaError::UnknownSeries(s) if s == "nope"));
    }

    #[test]
    fn leap_day_records_are_dropped_and_counted() {
        let records = vec![
            rec(2020, 2, 28, 0, 1.0),
            rec(2020, 2, 29, 0, 2.0),
            rec(2020, 3, 1, 0, 3.0),
        ];
        let modes = vec![
            CalendarModeSpec::evolution_years("year", 1, None),
            CalendarModeSpec::cyclostationary("day", TimeUnit::Day, TimeUnit::Year).unwrap(),
            CalendarModeSpec::cyclostationary("hour", TimeUnit::Hours(1), TimeUnit::Day).unwrap(),
        ];
        let t = build_tensor(&records, &modes, None, &Calendar::default()).unwrap();
        assert_eq!(t.skipped_leap_records, 1);
        assert_eq!(t.observed_count(), 2);
        // March 1 of a leap year lands on adjusted day 60, right after
        // February 28 on day 59.
        assert_eq!(t.value(&[0, 58, 0]), 1.0);
        assert_eq!(t.value(&[0, 59, 0]), 3.0);
    }

    #[test]
    fn day_365_folds_into_week_51() {
        let p = calendar_point(&ts(2021, 12, 31, 10), &Calendar::default()).unwrap();
        let spec = CalendarModeSpec::cyclostationary("week", TimeUnit::Week, TimeUnit::Year).unwrap();
        assert_eq!(spec.cardinality, 52);
        let level = temporal_level(&spec, &p, 0, &ts(2021, 12, 31, 10)).unwrap();
        assert_eq!(level, 51);
    }

    #[test]
    fn shifted_year_start_moves_the_boundary() {
        // Year starting on day 244 (September 1): an August timestamp
        // belongs to the previous cycle year.
        let cal = Calendar { year_start_day: 244 };
        let before = calendar_point(&ts(2010, 8, 31, 12), &cal).unwrap();
        let after = calendar_point(&ts(2010, 9, 1, 12), &cal).unwrap();
        assert_eq!(before.cycle_year, 2009);
        assert_eq!(after.cycle_year, 2010);
        assert_eq!(after.day_in_year, 0);
    }

    #[test]
    fn evolution_base_year_is_inferred_from_data() {
        let records = vec![rec(2010, 6, 1, 0, 1.0), rec(2012, 6, 1, 0, 2.0)];
        let modes = vec![
            CalendarModeSpec::evolution_years("year", 3, None),
            CalendarModeSpec::cyclostationary("day", TimeUnit::Day, TimeUnit::Year).unwrap(),
        ];
        let t = build_tensor(&records, &modes, None, &Calendar::default()).unwrap();
        assert_eq!(t.modes()[0].base_year, Some(2010));
        assert!(!t.is_missing(&[0, 151]));
        assert!(!t.is_missing(&[2, 151]));
    }

    #[test]
    fn out_of_span_year_is_unmappable() {
        let records = vec![rec(2010, 6, 1, 0, 1.0), rec(2015, 6, 1, 0, 2.0)];
        let modes = vec![
            CalendarModeSpec::evolution_years("year", 3, Some(2010)),
            CalendarModeSpec::cyclostationary("day", TimeUnit::Day, TimeUnit::Year).unwrap(),
        ];
        let err = build_tensor(&records, &modes, None, &Calendar::default()).unwrap_err();
        assert!(matches!(err, AscaError::UnmappableTimestamp { level: 5, .. }));
    }

    #[test]
    fn two_city_week_tensor_has_documented_layout() {
        // Two cities, hourly records over 52 whole weeks starting on a
        // Monday. Modes declared city, hour, day, week give shape
        // [2, 24, 7, 52].
        let mut records = Vec::new();
        for city in ["north", "south"] {
            let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(); // a Monday
            for day in 0..364u32 {
                let date = start + chrono::Duration::days(i64::from(day));
                for h in 0..24 {
                    records.push(Record {
                        timestamp: date.and_hms_opt(h, 0, 0).unwrap(),
                        series: city.to_string(),
                        value: f64::from(day * 24 + h),
                    });
                }
            }
        }
        let modes = vec![
            CalendarModeSpec::non_temporal("city", vec!["north".into(), "south".into()]),
            CalendarModeSpec::cyclostationary("hour", TimeUnit::Hours(1), TimeUnit::Day).unwrap(),
            CalendarModeSpec::cyclostationary("day", TimeUnit::Day, TimeUnit::Week).unwrap(),
            CalendarModeSpec::evolution_cycle("week", TimeUnit::Week, TimeUnit::Year).unwrap(),
        ];
        let t = build_tensor(&records, &modes, Some("city"), &Calendar::default()).unwrap();
        assert_eq!(t.shape(), vec![2, 24, 7, 52]);
        assert_eq!(t.observed_count(), 2 * 24 * 364);
        // Wednesday 15:00 of the third week: day 16 of the year.
        assert_eq!(t.value(&[1, 15, 2, 2]), f64::from(16 * 24 + 15));
    }

    #[test]
    fn unfold_rejects_evolution_in_columns_and_empty_columns() {
        let modes = vec![
            CalendarModeSpec::evolution_years("year", 2, Some(2000)),
            plain_mode("day", 3),
        ];
        let t = LabeledTensor::from_parts(modes, vec![0.0; 6], vec![false; 6]).unwrap();
        assert!(matches!(
            unfold(&t, &["day"], &["year"]).unwrap_err(),
            AscaError::EvolutionModeInColumns(_)
        ));
        assert!(matches!(
            unfold(&t, &["year", "day"], &[]).unwrap_err(),
            AscaError::EmptyColumnModes
        ));
        assert!(matches!(
            unfold(&t, &["year"], &["nope"]).unwrap_err(),
            AscaError::UnknownMode(_)
        ));
        assert!(matches!(
            unfold(&t, &["year"], &["day", "day"]).unwrap_err(),
            AscaError::DuplicateMode(_)
        ));
        assert!(matches!(
            unfold(&t, &[], &["day"]).unwrap_err(),
            AscaError::ModeNotInPartition(_)
        ));
    }

    #[test]
    fn unfold_matches_brute_force_placement() {
        // Shape [2, 3, 4], rows {a, c}, cols {b}: row index = la * 4 + lc,
        // col index = lb, checked cell by cell against direct indexing.
        let modes = vec![plain_mode("a", 2), plain_mode("b", 3), plain_mode("c", 4)];
        let values: Vec<f64> = (0..24).map(f64::from).collect();
        let t = LabeledTensor::from_parts(modes, values, vec![false; 24]).unwrap();
        let table = unfold(&t, &["a", "c"], &["b"]).unwrap();
        assert_eq!(table.nrows(), 8);
        assert_eq!(table.ncols(), 3);
        for la in 0..2 {
            for lb in 0..3 {
                for lc in 0..4 {
                    let r = la * 4 + lc;
                    assert_eq!(table.matrix[(r, lb)], t.value(&[la, lb, lc]));
                }
            }
        }
        assert_eq!(table.row_levels[5], vec![1, 1]);
        assert_eq!(table.col_levels[2], vec![2]);
    }

    #[test]
    fn city_week_unfolding_has_416_rows_and_168_columns() {
        let modes = vec![
            plain_mode("city", 8),
            plain_mode("hour", 24),
            plain_mode("day", 7),
            {
                let mut w = plain_mode("week", 52);
                w.kind = ModeKind::Evolution;
                w
            },
        ];
        let len = 8 * 24 * 7 * 52;
        let values: Vec<f64> = (0..len).map(|i| i as f64).collect();
        let t = LabeledTensor::from_parts(modes, values, vec![false; len]).unwrap();
        let table = unfold(&t, &["city", "week"], &["day", "hour"]).unwrap();
        assert_eq!(table.nrows(), 416);
        assert_eq!(table.ncols(), 168);
        // City 3, week 10; day 2, hour 5.
        let r = 3 * 52 + 10;
        let c = 2 * 24 + 5;
        assert_eq!(table.matrix[(r, c)], t.value(&[3, 5, 2, 10]));
        assert_eq!(table.row_label(r), "city=3|week=10");
    }

    #[test]
    fn fold_then_permute_recovers_the_tensor() {
        let modes = vec![plain_mode("a", 2), plain_mode("b", 3), plain_mode("c", 2)];
        let values: Vec<f64> = (0..12).map(f64::from).collect();
        let mut missing = vec![false; 12];
        missing[5] = true;
        let mut vals = values.clone();
        vals[5] = f64::NAN;
        let t = LabeledTensor::from_parts(modes, vals, missing).unwrap();
        let table = unfold(&t, &["c", "a"], &["b"]).unwrap();
        let back = fold(&table).unwrap();
        // fold returns modes (c, a, b); permute back to (a, b, c).
        let restored = back.permute(&[1, 2, 0]).unwrap();
        for flat in 0..12 {
            assert_eq!(restored.missing[flat], t.missing[flat]);
            if !t.missing[flat] {
                assert_eq!(restored.values[flat], t.values[flat]);
            }
        }
    }

    #[test]
    fn aggregate_blocks_of_two() {
        let modes = vec![plain_mode("day", 4)];
        let t = LabeledTensor::from_parts(modes, vec![2.0, 4.0, 5.0, f64::NAN], vec![false, false, false, true]).unwrap();
        let out = aggregate_mode(&t, "day", 2, false).unwrap();
        assert_eq!(out.shape(), vec![2]);
        assert_eq!(out.value(&[0]), 3.0);
        assert_eq!(out.value(&[1]), 5.0);
    }

    #[test]
    fn aggregate_all_missing_block_stays_missing() {
        let modes = vec![plain_mode("day", 4)];
        let t = LabeledTensor::from_parts(
            modes,
            vec![1.0, 2.0, f64::NAN, f64::NAN],
            vec![false, false, true, true],
        )
        .unwrap();
        let out = aggregate_mode(&t, "day", 2, false).unwrap();
        assert!(!out.is_missing(&[0]));
        assert!(out.is_missing(&[1]));
    }

    #[test]
    fn year_of_days_aggregates_to_26_fortnights() {
        let modes = vec![CalendarModeSpec::cyclostationary("day", TimeUnit::Day, TimeUnit::Year).unwrap()];
        let values: Vec<f64> = (1..=365).map(f64::from).collect();
        let t = LabeledTensor::from_parts(modes, values, vec![false; 365]).unwrap();
        let out = aggregate_mode(&t, "day", 14, true).unwrap();
        assert_eq!(out.shape(), vec![26]);
        assert_eq!(out.modes()[0].frequency_unit, Some(TimeUnit::Fortnight));
        // First fortnight: days 1..=14.
        assert_eq!(out.value(&[0]), 7.5);
        // Last fortnight absorbs day 365: days 351..=365, mean 358.
        assert_eq!(out.value(&[25]), 358.0);
    }

    #[test]
    fn aggregate_block_errors() {
        let modes = vec![plain_mode("day", 10)];
        let t = LabeledTensor::from_parts(modes, vec![0.0; 10], vec![false; 10]).unwrap();
        assert!(matches!(
            aggregate_mode(&t, "day", 11, true).unwrap_err(),
            AscaError::BlockTooLarge { .. }
        ));
        assert!(matches!(
            aggregate_mode(&t, "day", 3, false).unwrap_err(),
            AscaError::BlockDoesNotDivide { .. }
        ));
        assert!(matches!(
            aggregate_mode(&t, "day", 0, false).unwrap_err(),
            AscaError::ZeroBlock
        ));
        assert!(matches!(
            aggregate_mode(&t, "nope", 2, false).unwrap_err(),
            AscaError::UnknownMode(_)
        ));
    }

    #[test]
    fn aggregate_by_one_is_identity() {
        let modes = vec![plain_mode("a", 3), plain_mode("b", 2)];
        let values = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let t = LabeledTensor::from_parts(modes, values.clone(), vec![false; 6]).unwrap();
        let out = aggregate_mode(&t, "a", 1, false).unwrap();
        assert_eq!(out.shape(), t.shape());
        for flat in 0..6 {
            assert_eq!(out.values[flat], values[flat]);
        }
    }

    #[test]
    fn aggregated_mean_of_means_matches_total_mean_for_exact_blocks() {
        let modes = vec![plain_mode("a", 6)];
        let values = vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0];
        let t = LabeledTensor::from_parts(modes, values.clone(), vec![false; 6]).unwrap();
        let out = aggregate_mode(&t, "a", 3, false).unwrap();
        let mean_of_means = (out.value(&[0]) + out.value(&[1])) / 2.0;
        let total_mean = values.iter().sum::<f64>() / 6.0;
        assert!((mean_of_means - total_mean).abs() < 1e-12);
    }

    #[test]
    fn tensor_from_parts_rejects_bad_shapes_and_nan() {
        let modes = vec![plain_mode("a", 2)];
        assert!(matches!(
            LabeledTensor::from_parts(modes.clone(), vec![1.0], vec![false]).unwrap_err(),
            AscaError::ShapeMismatch(_)
        ));
        assert!(matches!(
            LabeledTensor::from_parts(modes, vec![1.0, f64::NAN], vec![false, false]).unwrap_err(),
            AscaError::NonFiniteInput
        ));
    }
}

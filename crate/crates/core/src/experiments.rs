//! Parameter sweeps, the threshold table and tap tuning.
//!
//! Sweeps are evaluated in parallel; rows always come back in grid order.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::attacks::{modified_usd_gain_closed, usd_gain_closed, AttackConfig, AttackVariant};
use crate::error::{check_unit_open_closed, Error, Result};
use crate::estimator::{estimate, DecoyParams, ErrorSet, GainSet};
use crate::roots::bisect;
use crate::thresholds::{analytic_usd_threshold, from_db, solve_usd_threshold, to_db, truncate_db};

pub const MAX_GRID_POINTS: usize = 1_000_000;

/// Default Q1-versus-kappa grid in dB.
pub const FIG3_GRID: (f64, f64, f64) = (0.0, 25.0, 0.05);
/// Default gain-versus-mean grid.
pub const FIG4_GRID: (f64, f64, f64) = (0.0, 20.0, 0.05);
/// Tap transmittances of the gain-versus-mean figure.
pub const FIG4_TAPS: [f64; 4] = [1.0, 0.5, 0.3, 0.15];

/// Inclusive grid `start, start + step, ..., stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridRange {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(start.is_finite() && stop.is_finite() && step.is_finite()) {
            return Err(Error::InvalidSweep("grid bounds must be finite".into()));
        }
        if step <= 0.0 {
            return Err(Error::InvalidSweep(format!("step must be > 0, got {step}")));
        }
        if start >= stop {
            return Err(Error::InvalidSweep(format!("start ({start}) must be < stop ({stop})")));
        }
        let range = Self { start, stop, step };
        if range.len() > MAX_GRID_POINTS {
            return Err(Error::InvalidSweep(format!(
                "{} grid points exceeds the limit of {MAX_GRID_POINTS}",
                range.len()
            )));
        }
        Ok(range)
    }

    pub fn len(&self) -> usize {
        ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.start + self.step * i as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    KappaDb,
    /// Damaged signal mean `kappa * mu`.
    MeanTilde,
    /// Tap transmittance of the modified USD receiver.
    TapT,
}

impl SweepVariable {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVariable::KappaDb => "kappa_db",
            SweepVariable::MeanTilde => "mean_tilde",
            SweepVariable::TapT => "tap_t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepColumn {
    QMu,
    QNu,
    Y1Lower,
    /// Emits `q1_estimate` (clamped at 0) and `q1_raw`.
    Q1Estimate,
    KeyRate,
    ThresholdFlag,
}

impl SweepColumn {
    pub const ALL: [SweepColumn; 6] = [
        SweepColumn::QMu,
        SweepColumn::QNu,
        SweepColumn::Y1Lower,
        SweepColumn::Q1Estimate,
        SweepColumn::KeyRate,
        SweepColumn::ThresholdFlag,
    ];

    fn headers(&self) -> &'static [&'static str] {
        match self {
            SweepColumn::QMu => &["q_mu"],
            SweepColumn::QNu => &["q_nu"],
            SweepColumn::Y1Lower => &["y1_lower"],
            SweepColumn::Q1Estimate => &["q1_estimate", "q1_raw"],
            SweepColumn::KeyRate => &["key_rate"],
            SweepColumn::ThresholdFlag => &["threshold_flag"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub range: GridRange,
    pub decoy: DecoyParams,
    /// Held fixed except for the swept quantity.
    pub attack: AttackConfig,
    pub outputs: Vec<SweepColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepMeta {
    pub figure: String,
    pub tool_version: String,
    /// Seconds since the Unix epoch; left empty for reproducible output.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
    pub parameters: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub meta: SweepMeta,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

struct PointValues {
    kappa: f64,
    gains: GainSet,
    y1: f64,
    q1: f64,
    key_rate: f64,
}

fn evaluate_point(spec: &SweepSpec, x: f64) -> Result<PointValues> {
    let (mu, nu) = (spec.decoy.mu(), spec.decoy.nu());
    let thin = spec.attack.thinning();
    let (kappa, variant) = match spec.variable {
        SweepVariable::KappaDb => (from_db(x), spec.attack.variant()),
        SweepVariable::MeanTilde => (x / mu, spec.attack.variant()),
        SweepVariable::TapT => (spec.attack.kappa(), AttackVariant::ModifiedUsd { t: x }.validate()?),
    };
    // Gains are evaluated directly so mean sweeps may start below kappa = 1.
    let gains = GainSet::new(
        variant.gain(kappa * mu * thin)?,
        variant.gain(kappa * nu * thin)?,
        0.0,
    )?;
    let (y1, q1, key_rate) = if gains.q_mu > 0.0 {
        let est = estimate(&gains, &ErrorSet::noiseless(), &spec.decoy, 0.0)?;
        (est.y1_lower, est.q1, est.key_rate.clamped)
    } else {
        let y1 = crate::estimator::y1_lower(&gains, &spec.decoy);
        (y1, y1 * mu * (-mu).exp(), 0.0)
    };
    Ok(PointValues { kappa, gains, y1, q1, key_rate })
}

/// Index of the first row where the raw `Y1^L` goes from `<= 0` to `> 0`.
fn first_sign_change(y1: &[f64]) -> Option<usize> {
    y1.windows(2).position(|w| w[0] <= 0.0 && w[1] > 0.0).map(|i| i + 1)
}

pub fn run_sweep(spec: &SweepSpec, figure: &str) -> Result<SweepTable> {
    if spec.variable == SweepVariable::MeanTilde && spec.range.start <= 0.0 {
        return Err(Error::InvalidSweep("mean_tilde sweeps must start above 0 (kappa_db is undefined at 0)".into()));
    }
    let xs = spec.range.points();
    let values = xs
        .par_iter()
        .map(|&x| evaluate_point(spec, x))
        .collect::<Result<Vec<_>>>()?;
    let y1: Vec<f64> = values.iter().map(|v| v.y1).collect();
    let flag_row = first_sign_change(&y1);

    let mut columns: Vec<String> = Vec::new();
    if spec.variable != SweepVariable::KappaDb {
        columns.push(spec.variable.name().to_string());
    }
    columns.push("kappa_db".into());
    columns.push("kappa".into());
    for c in &spec.outputs {
        columns.extend(c.headers().iter().map(|h| h.to_string()));
    }

    let rows = xs
        .iter()
        .zip(&values)
        .enumerate()
        .map(|(i, (&x, v))| {
            let mut row = Vec::with_capacity(columns.len());
            if spec.variable != SweepVariable::KappaDb {
                row.push(x);
            }
            row.push(if spec.variable == SweepVariable::KappaDb { x } else { to_db(v.kappa) });
            row.push(v.kappa);
            for c in &spec.outputs {
                match c {
                    SweepColumn::QMu => row.push(v.gains.q_mu),
                    SweepColumn::QNu => row.push(v.gains.q_nu),
                    SweepColumn::Y1Lower => row.push(v.y1),
                    SweepColumn::Q1Estimate => {
                        row.push(v.q1.max(0.0));
                        row.push(v.q1);
                    }
                    SweepColumn::KeyRate => row.push(v.key_rate),
                    SweepColumn::ThresholdFlag => row.push(if flag_row == Some(i) { 1.0 } else { 0.0 }),
                }
            }
            row
        })
        .collect();

    let mut parameters = Map::new();
    parameters.insert("variable".into(), spec.variable.name().into());
    parameters.insert("start".into(), spec.range.start.into());
    parameters.insert("stop".into(), spec.range.stop.into());
    parameters.insert("step".into(), spec.range.step.into());
    parameters.insert("mu".into(), spec.decoy.mu().into());
    parameters.insert("nu".into(), spec.decoy.nu().into());
    parameters.insert("attack".into(), serde_json::to_value(spec.attack).unwrap_or(Value::Null));

    let table = SweepTable {
        meta: SweepMeta::new(figure, parameters),
        columns,
        rows,
    };
    table.check_finite()?;
    Ok(table)
}

/// Q1 estimate versus attenuation alteration under the standard USD attack.
pub fn sweep_q1_vs_kappa(params: &DecoyParams, range: GridRange) -> Result<SweepTable> {
    let spec = SweepSpec {
        variable: SweepVariable::KappaDb,
        range,
        decoy: *params,
        attack: AttackConfig::new(1.0, AttackVariant::StandardUsd)?,
        outputs: SweepColumn::ALL.to_vec(),
    };
    run_sweep(&spec, "q1-vs-kappa")
}

/// Signal gain versus damaged mean, one column per tap transmittance.
pub fn sweep_gain_vs_mean(taps: &[f64], range: GridRange) -> Result<SweepTable> {
    if taps.is_empty() {
        return Err(Error::InvalidSweep("at least one tap transmittance is required".into()));
    }
    for &t in taps {
        check_unit_open_closed("t", t)?;
    }
    let xs = range.points();
    let rows = xs
        .par_iter()
        .map(|&m| {
            let mut row = vec![m];
            for &t in taps {
                row.push(modified_usd_gain_closed(m, t)?);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut columns = vec!["mean_tilde".to_string()];
    columns.extend(taps.iter().map(|t| format!("q_mu_t={t}")));

    let mut parameters = Map::new();
    parameters.insert("variable".into(), "mean_tilde".into());
    parameters.insert("start".into(), range.start.into());
    parameters.insert("stop".into(), range.stop.into());
    parameters.insert("step".into(), range.step.into());
    parameters.insert("taps".into(), taps.iter().map(|&t| Value::from(t)).collect());

    let table = SweepTable {
        meta: SweepMeta::new("gain-vs-mean", parameters),
        columns,
        rows,
    };
    table.check_finite()?;
    Ok(table)
}

impl SweepMeta {
    fn new(figure: &str, parameters: Map<String, Value>) -> Self {
        Self {
            figure: figure.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: None,
            parameters,
        }
    }
}

/// Decimal text for a table cell; exponent notation outside `[1e-4, 1e15)`.
pub fn format_cell(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

impl SweepTable {
    fn check_finite(&self) -> Result<()> {
        for row in &self.rows {
            if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidSweep(format!("non-finite cell {bad} at x = {}", row[0])));
            }
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// Grid values of the first column bracketing the flagged sign change.
    pub fn flagged_threshold(&self) -> Option<(f64, f64)> {
        let flags = self.column("threshold_flag")?;
        let i = flags.iter().position(|&f| f == 1.0)?;
        Some((self.rows[i - 1][0], self.rows[i][0]))
    }

    /// RFC 4180 CSV with a header row. With `include_meta`, metadata goes
    /// first as `#`-prefixed lines.
    pub fn write_csv<W: Write>(&self, mut out: W, include_meta: bool) -> std::io::Result<()> {
        if include_meta {
            writeln!(out, "# figure: {}", self.meta.figure)?;
            writeln!(out, "# tool_version: {}", self.meta.tool_version)?;
            if let Some(ts) = self.meta.timestamp {
                writeln!(out, "# timestamp: {ts}")?;
            }
            writeln!(out, "# parameters: {}", Value::Object(self.meta.parameters.clone()))?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|&v| format_cell(v)))?;
        }
        w.flush()?;
        Ok(())
    }

    /// `{"meta": {...}, "rows": [{column: value, ...}, ...]}`. Without
    /// `include_meta` the timestamp and tool version are dropped.
    pub fn to_json(&self, include_meta: bool) -> Value {
        let mut meta = serde_json::to_value(&self.meta).unwrap_or(Value::Null);
        if !include_meta {
            if let Value::Object(m) = &mut meta {
                m.remove("timestamp");
                m.remove("tool_version");
            }
        }
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                Value::Object(
                    self.columns
                        .iter()
                        .zip(row)
                        .map(|(c, &v)| (c.clone(), Value::from(v)))
                        .collect(),
                )
            })
            .collect();
        let mut root = Map::new();
        root.insert("meta".into(), meta);
        root.insert("rows".into(), Value::Array(rows));
        Value::Object(root)
    }

    pub fn write_json<W: Write>(&self, mut out: W, include_meta: bool) -> std::io::Result<()> {
        serde_json::to_writer_pretty(&mut out, &self.to_json(include_meta))?;
        writeln!(out)
    }
}

/// Published threshold table: `(mu, nu, numerical dB, analytic dB)`.
pub const REFERENCE_TABLE1: [(f64, f64, f64, f64); 3] = [
    (0.5, 0.1, 11.1, 10.0),
    (0.5, 0.01, 14.5, 12.5),
    (0.1, 0.01, 18.3, 17.2),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Table1Row {
    pub mu: f64,
    pub nu: f64,
    pub numerical_db: f64,
    pub analytic_db: f64,
    /// Values truncated to 0.1 dB.
    pub numerical_display: f64,
    pub analytic_display: f64,
    pub expected_numerical: f64,
    pub expected_analytic: f64,
}

impl Table1Row {
    /// Numerical column within 0.1 dB, analytic column equal after truncation.
    pub fn matches(&self) -> bool {
        (self.numerical_display - self.expected_numerical).abs() <= 0.1 + 1e-9
            && (self.analytic_display - self.expected_analytic).abs() < 1e-9
    }
}

/// Recomputes the threshold table for the three published parameter sets.
pub fn reproduce_table1() -> Result<Vec<Table1Row>> {
    REFERENCE_TABLE1
        .iter()
        .map(|&(mu, nu, expected_numerical, expected_analytic)| {
            let p = DecoyParams::new(mu, nu)?;
            let numerical_db = solve_usd_threshold(&p)?.kappa_db;
            let analytic_db = analytic_usd_threshold(&p).kappa_db;
            Ok(Table1Row {
                mu,
                nu,
                numerical_db,
                analytic_db,
                numerical_display: truncate_db(numerical_db, 1),
                analytic_display: truncate_db(analytic_db, 1),
                expected_numerical,
                expected_analytic,
            })
        })
        .collect()
}

/// Tap transmittance that brings the signal gain at `mean_tilde` down to
/// `target_gain`. The tapped gain is increasing in `t`, so the root is unique.
pub fn tune_tap(target_gain: f64, mean_tilde: f64) -> Result<f64> {
    let max = usd_gain_closed(mean_tilde)?;
    if !(target_gain > 0.0 && target_gain <= max) {
        return Err(Error::Unattainable { target: target_gain, max });
    }
    if target_gain == max {
        return Ok(1.0);
    }
    let f = |t: f64| {
        if t <= 0.0 {
            -target_gain
        } else {
            modified_usd_gain_closed(mean_tilde, t).unwrap_or(f64::NAN) - target_gain
        }
    };
    Ok(bisect(f, 0.0, 1.0))
}

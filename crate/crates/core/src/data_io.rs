//! Process tables (CSV), the synthetic furnace generator and model archives.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kernel_qp::{KernelParams, KktReport};
use crate::knowledge::KnowledgeRule;
use crate::pipeline::{LagSpec, Normalizer, SiliconBands};
use crate::wsvm::{PenaltyScheme, TrainedModel};

pub const BLAST_TEMP: &str = "blast_temp";
pub const BLAST_VOL: &str = "blast_vol";
pub const FEED_SPEED: &str = "feed_speed";
pub const GAS_PERM: &str = "gas_perm";
pub const COAL_INJ: &str = "coal_inj";
pub const SULFUR: &str = "sulfur";
pub const SILICON: &str = "silicon";

/// Process inputs that carry lagged terms, in table order.
pub const DRIVER_COLUMNS: [&str; 5] = [BLAST_TEMP, BLAST_VOL, FEED_SPEED, GAS_PERM, COAL_INJ];

/// CSV header, in order.
pub const COLUMNS: [&str; 7] = [
    BLAST_TEMP, BLAST_VOL, FEED_SPEED, GAS_PERM, COAL_INJ, SULFUR, SILICON,
];

/// Time-ordered process readings stored by column.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessTable {
    columns: BTreeMap<String, Vec<f64>>,
    order: Vec<String>,
    rows: usize,
}

impl ProcessTable {
    pub fn new(named: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let rows = named.first().map_or(0, |(_, v)| v.len());
        let mut columns = BTreeMap::new();
        let mut order = Vec::with_capacity(named.len());
        for (name, values) in named {
            if values.len() != rows {
                return Err(Error::Structure(format!(
                    "column `{name}` has {} rows, expected {rows}",
                    values.len()
                )));
            }
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "non-finite value in column `{name}` at row {}",
                    i + 1
                )));
            }
            if columns.insert(name.clone(), values).is_some() {
                return Err(Error::Structure(format!("duplicate column `{name}`")));
            }
            order.push(name);
        }
        if !columns.contains_key(SILICON) {
            return Err(Error::MissingColumn(SILICON.into()));
        }
        Ok(Self {
            columns,
            order,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn column_names(&self) -> &[String] {
        &self.order
    }

    pub fn silicon(&self) -> &[f64] {
        &self.columns[SILICON]
    }

    /// First `rows` rows.
    pub fn head(&self, rows: usize) -> Self {
        let rows = rows.min(self.rows);
        Self {
            columns: self
                .columns
                .iter()
                .map(|(k, v)| (k.clone(), v[..rows].to_vec()))
                .collect(),
            order: self.order.clone(),
            rows,
        }
    }
}

/// Reads a process table; the header must name every column in [`COLUMNS`].
/// Extra columns are ignored.
pub fn read_csv(path: impl AsRef<Path>) -> Result<ProcessTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_from(file)
}

pub fn read_csv_from<R: Read>(reader: R) -> Result<ProcessTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Empty("CSV has no header".into()));
    }
    let positions: Vec<usize> = COLUMNS
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h.trim() == *c)
                .ok_or_else(|| Error::MissingColumn((*c).into()))
        })
        .collect::<Result<_>>()?;
    let mut data: Vec<Vec<f64>> = vec![Vec::new(); COLUMNS.len()];
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for (k, &pos) in positions.iter().enumerate() {
            let raw = record.get(pos).unwrap_or("").trim();
            let value: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: COLUMNS[k].into(),
                value: raw.into(),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: COLUMNS[k].into(),
                    value: raw.into(),
                });
            }
            data[k].push(value);
        }
    }
    if data[0].is_empty() {
        return Err(Error::Empty("CSV has no data rows".into()));
    }
    ProcessTable::new(
        COLUMNS
            .iter()
            .map(|c| (*c).to_string())
            .zip(data)
            .collect(),
    )
}

/// Reads only the silicon column, for persistence statistics on files that
/// lack the driver columns.
pub fn read_silicon(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let pos = rdr
        .headers()?
        .iter()
        .position(|h| h.trim() == SILICON)
        .ok_or_else(|| Error::MissingColumn(SILICON.into()))?;
    let mut out = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let raw = record.get(pos).unwrap_or("").trim();
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ => {
                return Err(Error::Parse {
                    row: r + 1,
                    column: SILICON.into(),
                    value: raw.into(),
                })
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Empty("CSV has no data rows".into()));
    }
    Ok(out)
}

/// Writes the standard columns. Values use the shortest decimal form that
/// parses back to the same `f64`.
pub fn write_csv(table: &ProcessTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    let bytes = csv_bytes(table)?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn csv_bytes(table: &ProcessTable) -> Result<Vec<u8>> {
    let cols: Vec<&[f64]> = COLUMNS
        .iter()
        .map(|c| table.column(c).ok_or_else(|| Error::MissingColumn((*c).into())))
        .collect::<Result<_>>()?;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(COLUMNS)?;
    for r in 0..table.len() {
        wtr.write_record(cols.iter().map(|c| format!("{}", c[r])))?;
    }
    wtr.into_inner()
        .map_err(|e| Error::Structure(format!("csv buffer: {e}")))
}

/// Parameters of the synthetic furnace series.
///
/// Five smooth, mutually correlated driver series stand in for the process
/// inputs. The latent silicon index follows
/// `u_t = rho u_{t-1} + sum_k coupling_k * dd_k(t - lag_k) + noise * (e_t - reversal * e_{t-1})`
/// where `dd_k` is the standardized one-step change of driver `k`. The
/// latent series is standardized and mapped onto the silicon scale so that
/// the band fractions match `band_fractions` under a Gaussian marginal, then
/// clamped to `[0.05, 0.95]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub length: usize,
    pub rho: f64,
    /// Target fractions of low, proper and high silicon.
    pub band_fractions: [f64; 3],
    pub bands: SiliconBands,
    pub noise_scale: f64,
    /// Share of each noise shock reversed at the next step.
    pub shock_reversal: f64,
    /// One coefficient per driver column.
    pub coupling: Vec<f64>,
    /// Delay (in samples) with which each driver acts on silicon.
    pub coupling_lags: Vec<usize>,
    /// AR(1) coefficient of the drivers.
    pub driver_persistence: f64,
    /// Correlation of the drivers through a shared factor.
    pub driver_correlation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            length: 800,
            rho: 0.8,
            band_fractions: [115.0 / 794.0, 569.0 / 794.0, 110.0 / 794.0],
            bands: SiliconBands::furnace_a(),
            noise_scale: 1.0,
            shock_reversal: 0.3,
            coupling: vec![0.6, 0.6, -0.6, 0.6, 0.6],
            coupling_lags: vec![1, 2, 1, 3, 2],
            driver_persistence: 0.9,
            driver_correlation: 0.3,
            seed: 0,
        }
    }
}

const BURN_IN: usize = 200;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.length < 50 {
            return bad(format!("synthetic length must be at least 50, got {}", self.length));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        let [low, proper, high] = self.band_fractions;
        if [low, proper, high].iter().any(|f| !(0.0..=1.0).contains(f))
            || low <= 0.0
            || high <= 0.0
            || low + proper + high > 1.0 + 1e-9
        {
            return bad(format!(
                "band fractions must be in [0, 1] with positive tails and sum <= 1, got {:?}",
                self.band_fractions
            ));
        }
        SiliconBands::new(self.bands.z_inf, self.bands.z_sup)
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return bad(format!("noise scale must be positive, got {}", self.noise_scale));
        }
        if !(0.0..1.0).contains(&self.shock_reversal) {
            return bad(format!("shock reversal must lie in [0, 1), got {}", self.shock_reversal));
        }
        if self.coupling.len() != DRIVER_COLUMNS.len()
            || self.coupling_lags.len() != DRIVER_COLUMNS.len()
        {
            return bad(format!(
                "coupling and coupling_lags need {} entries",
                DRIVER_COLUMNS.len()
            ));
        }
        if !(0.0..1.0).contains(&self.driver_persistence)
            || !(0.0..1.0).contains(&self.driver_correlation)
        {
            return bad("driver persistence and correlation must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Mean and spread of the silicon marginal implied by the band targets.
    fn silicon_location_scale(&self) -> (f64, f64) {
        let std = Normal::new(0.0, 1.0).unwrap();
        let lo_q = std.inverse_cdf(self.band_fractions[0]);
        let hi_q = std.inverse_cdf(1.0 - self.band_fractions[2]);
        let scale = (self.bands.z_sup - self.bands.z_inf) / (hi_q - lo_q);
        (self.bands.z_inf - scale * lo_q, scale)
    }
}

/// Physical operating point and spread of each driver column.
const DRIVER_UNITS: [(f64, f64); 5] = [
    (1150.0, 15.0), // blast temperature, degC
    (4200.0, 120.0), // blast volume, m3/min
    (95.0, 8.0),    // feed speed, mm/h
    (0.28, 0.025),  // gas permeability, m3/(min kPa)
    (32.0, 3.0),    // coal injection, t
];

/// Deterministic function of `config`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<ProcessTable> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let total = config.length + BURN_IN;
    let k = DRIVER_COLUMNS.len();
    let phi = config.driver_persistence;
    let innov = (1.0 - phi * phi).sqrt();
    let common = config.driver_correlation;
    let own = (1.0 - common * common).sqrt();
    let diff_scale = (2.0 * (1.0 - phi)).sqrt();

    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let mut drivers = vec![vec![0.0f64; total]; k];
    let mut latent = vec![0.0f64; total];
    let mut prev_shock = 0.0;
    for t in 1..total {
        let shared: f64 = normal();
        for d in drivers.iter_mut() {
            let e = own * normal() + common * shared;
            d[t] = phi * d[t - 1] + innov * e;
        }
        let mut forcing = 0.0;
        for (j, d) in drivers.iter().enumerate() {
            let lag = config.coupling_lags[j];
            if t > lag {
                forcing += config.coupling[j] * (d[t - lag] - d[t - lag - 1]) / diff_scale;
            }
        }
        let shock: f64 = normal();
        latent[t] = config.rho * latent[t - 1]
            + forcing
            + config.noise_scale * (shock - config.shock_reversal * prev_shock);
        prev_shock = shock;
    }

    let kept = &latent[BURN_IN..];
    let n = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / n;
    let sd = (kept.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / n).sqrt();
    let (mu, scale) = config.silicon_location_scale();
    let silicon: Vec<f64> = kept
        .iter()
        .map(|u| (mu + scale * (u - mean) / sd).clamp(0.05, 0.95))
        .collect();

    let mut named: Vec<(String, Vec<f64>)> = DRIVER_COLUMNS
        .iter()
        .zip(DRIVER_UNITS)
        .zip(&drivers)
        .map(|((name, (center, spread)), d)| {
            let values = d[BURN_IN..].iter().map(|v| center + spread * v).collect();
            ((*name).to_string(), values)
        })
        .collect();
    // sulfur moves against silicon
    let sulfur: Vec<f64> = silicon
        .iter()
        .map(|z| {
            let e: f64 = normal();
            (0.030 - 0.008 * (z - mu) / scale + 0.003 * e).max(0.005)
        })
        .collect();
    named.push((SULFUR.into(), sulfur));
    named.push((SILICON.into(), silicon));
    ProcessTable::new(named)
}

pub const ARCHIVE_VERSION: u32 = 1;

/// Persisted binary classifier together with its preprocessing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArchive {
    pub version: u32,
    pub kernel: KernelParams<f64>,
    pub scheme: PenaltyScheme<f64>,
    pub rule: Option<KnowledgeRule>,
    pub bands: SiliconBands,
    pub lag_spec: LagSpec,
    pub normalizer: Normalizer<f64>,
    pub support_vectors: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
    pub bias: f64,
    pub checksum: String,
}

#[derive(Serialize)]
struct ArchiveBody<'a> {
    version: u32,
    kernel: &'a KernelParams<f64>,
    scheme: &'a PenaltyScheme<f64>,
    rule: &'a Option<KnowledgeRule>,
    bands: &'a SiliconBands,
    lag_spec: &'a LagSpec,
    normalizer: &'a Normalizer<f64>,
    support_vectors: &'a [Vec<f64>],
    coefficients: &'a [f64],
    bias: f64,
}

impl ModelArchive {
    pub fn new(
        model: &TrainedModel<f64>,
        bands: SiliconBands,
        lag_spec: LagSpec,
        normalizer: Normalizer<f64>,
    ) -> Result<Self> {
        let mut archive = Self {
            version: ARCHIVE_VERSION,
            kernel: model.kernel,
            scheme: model.scheme,
            rule: model.rule.clone(),
            bands,
            lag_spec,
            normalizer,
            support_vectors: model.support_vectors.clone(),
            coefficients: model.coefficients.clone(),
            bias: model.bias,
            checksum: String::new(),
        };
        archive.checksum = archive.compute_checksum()?;
        Ok(archive)
    }

    /// Hex SHA-256 of the compact JSON serialization of every field before
    /// `checksum`, in declaration order.
    pub fn compute_checksum(&self) -> Result<String> {
        let body = ArchiveBody {
            version: self.version,
            kernel: &self.kernel,
            scheme: &self.scheme,
            rule: &self.rule,
            bands: &self.bands,
            lag_spec: &self.lag_spec,
            normalizer: &self.normalizer,
            support_vectors: &self.support_vectors,
            coefficients: &self.coefficients,
            bias: self.bias,
        };
        let canonical = serde_json::to_vec(&body)?;
        Ok(hex::encode(Sha256::digest(&canonical)))
    }

    /// The stored classifier. Training diagnostics are not archived and read
    /// back as zeros.
    pub fn model(&self) -> TrainedModel<f64> {
        TrainedModel {
            support_vectors: self.support_vectors.clone(),
            coefficients: self.coefficients.clone(),
            support_indices: (0..self.coefficients.len()).collect(),
            bias: self.bias,
            kernel: self.kernel,
            scheme: self.scheme,
            rule: self.rule.clone(),
            training_diagnostics: KktReport {
                max_violation: 0.0,
                primal_objective: 0.0,
                dual_objective: 0.0,
                relative_gap: 0.0,
            },
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Validation("archive has no version field".into()))?;
        if version != u64::from(ARCHIVE_VERSION) {
            return Err(Error::Version {
                found: version as u32,
                expected: ARCHIVE_VERSION,
            });
        }
        let archive: Self = serde_json::from_value(value)?;
        let computed = archive.compute_checksum()?;
        if computed != archive.checksum {
            return Err(Error::Checksum {
                stored: archive.checksum,
                computed,
            });
        }
        Ok(archive)
    }
}

pub fn save_model(archive: &ModelArchive, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, archive.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArchive> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelArchive::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_text(rows: &[&str]) -> String {
        let mut s = COLUMNS.join(",");
        for r in rows {
            s.push('\n');
            s.push_str(r);
        }
        s
    }

    #[test]
    fn reads_well_formed_rows() {
        let text = csv_text(&[
            "1150,4200,95,0.28,32,0.03,0.5",
            "1151,4210,96,0.29,31,0.02,0.6",
            "1149,4190,94,0.27,33,0.04,0.4",
        ]);
        let t = read_csv_from(text.as_bytes()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.silicon(), &[0.5, 0.6, 0.4]);
    }

    #[test]
    fn missing_silicon_column() {
        let text = "blast_temp,blast_vol,feed_speed,gas_perm,coal_inj,sulfur\n1,2,3,4,5,6";
        assert!(matches!(
            read_csv_from(text.as_bytes()),
            Err(Error::MissingColumn(c)) if c == "silicon"
        ));
    }

    #[test]
    fn parse_error_names_row() {
        let mut rows = vec!["1,2,3,4,5,6,0.5"; 9];
        rows[6] = "1,2,3,abc,5,6,0.5";
        let text = csv_text(&rows);
        match read_csv_from(text.as_bytes()) {
            Err(Error::Parse { row, column, value }) => {
                assert_eq!(row, 7);
                assert_eq!(column, "gas_perm");
                assert_eq!(value, "abc");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_inputs() {
        assert!(read_csv_from("".as_bytes()).is_err());
        assert!(matches!(
            read_csv_from(COLUMNS.join(",").as_bytes()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = SynthConfig {
            length: 200,
            seed: 11,
            ..Default::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        assert!(a.silicon().iter().all(|z| (0.05..=0.95).contains(z)));
        let c = generate_synthetic(&SynthConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_config_validation() {
        let bad = [
            SynthConfig { length: 10, ..Default::default() },
            SynthConfig { rho: 1.0, ..Default::default() },
            SynthConfig { band_fractions: [0.5, 0.5, 0.2], ..Default::default() },
            SynthConfig { noise_scale: 0.0, ..Default::default() },
            SynthConfig { coupling: vec![0.1], ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))), "{cfg:?}");
        }
    }
}

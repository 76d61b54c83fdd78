//! Scenario simulation, vote-matrix ingestion and chain persistence.
//!
//! Chain files are a single JSON header line followed by a body that is
//! either CSV (one row per kept sample) or raw little-endian `f64` records
//! with the same column layout.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distributions::{svm_sample, SvMParams};
use crate::error::{Error, Result};
use crate::geometry::{spherical_to_cartesian, UnitVector};
use crate::model::{theta_matrix, EuclideanParams, Hyperparams, LatentConfiguration, VoteMatrix};
use crate::sampler::{stream_rng, ChainOutput, ChainStats, ModelKind, Sample};

pub const CHAIN_FORMAT: &str = "spherefactor-chain";
pub const CHAIN_FORMAT_VERSION: u32 = 1;

/// Link concentration used for every item of a simulated spherical scenario.
pub const DEFAULT_SCENARIO_KAPPA: f64 = 50.0;

/// Default cutoff for [`filter_low_participation`].
pub const DEFAULT_MISSING_THRESHOLD: f64 = 0.4;

const TRUTH_BLOCK: u64 = 200;
const VOTE_BLOCK: u64 = 201;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ScenarioGeometry {
    /// Positions from SvM with every component precision equal to `precision`.
    Sphere { k: usize, precision: f64 },
    /// `mu`, `alpha`, `beta` all standard normal.
    Euclidean { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub geometry: ScenarioGeometry,
    pub n_subjects: usize,
    pub n_items: usize,
    /// `kappa_j` for spherical scenarios.
    pub kappa: f64,
}

impl ScenarioSpec {
    pub fn sphere(k: usize, n_subjects: usize, n_items: usize) -> Self {
        Self {
            geometry: ScenarioGeometry::Sphere { k, precision: 2.0 },
            n_subjects,
            n_items,
            kappa: DEFAULT_SCENARIO_KAPPA,
        }
    }

    pub fn euclidean(k: usize, n_subjects: usize, n_items: usize) -> Self {
        Self {
            geometry: ScenarioGeometry::Euclidean { k },
            n_subjects,
            n_items,
            kappa: DEFAULT_SCENARIO_KAPPA,
        }
    }

    /// Named scenarios: `sphere2`, `sphere3`, `sphere5`, `euclid3`.
    pub fn preset(name: &str, n_subjects: usize, n_items: usize) -> Result<Self> {
        match name {
            "sphere2" => Ok(Self::sphere(2, n_subjects, n_items)),
            "sphere3" => Ok(Self::sphere(3, n_subjects, n_items)),
            "sphere5" => Ok(Self::sphere(5, n_subjects, n_items)),
            "euclid3" => Ok(Self::euclidean(3, n_subjects, n_items)),
            other => Err(Error::InvalidParameter(format!("unknown scenario '{other}'"))),
        }
    }

    pub fn k(&self) -> usize {
        match self.geometry {
            ScenarioGeometry::Sphere { k, .. } | ScenarioGeometry::Euclidean { k } => k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.n_items == 0 {
            return Err(Error::InvalidParameter("I and J must be at least 1".into()));
        }
        if self.k() == 0 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        if let ScenarioGeometry::Sphere { precision, .. } = self.geometry {
            if !(precision > 0.0) || !precision.is_finite() {
                return Err(Error::InvalidParameter(format!("precision must be positive, got {precision}")));
            }
            if !(self.kappa > 0.0) || !self.kappa.is_finite() {
                return Err(Error::InvalidParameter(format!("kappa must be positive, got {}", self.kappa)));
            }
        }
        Ok(())
    }
}

/// Generating parameters of a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    Spherical { config: LatentConfiguration, kappa: Vec<f64> },
    Euclidean(EuclideanParams),
}

impl Truth {
    pub fn theta_matrix(&self) -> Result<Vec<f64>> {
        match self {
            Truth::Spherical { config, kappa } => {
                let hp = Hyperparams {
                    omega: 1.0,
                    tau: 1.0,
                    kappa: kappa.clone(),
                    lambda: 1.0,
                };
                theta_matrix(config, &hp)
            }
            Truth::Euclidean(p) => Ok(p.theta_matrix()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub votes: VoteMatrix,
    pub truth: Truth,
    pub theta: Vec<f64>,
}

/// Bernoulli votes for a `theta` matrix; each cell draws from its own
/// stream so replicate `r` of the same seed is reproducible cell by cell.
pub fn draw_votes(theta: &[f64], n_subjects: usize, n_items: usize, seed: u64, replicate: u64) -> Result<VoteMatrix> {
    let cells = theta
        .iter()
        .enumerate()
        .map(|(c, &t)| {
            let u: f64 = stream_rng(seed, replicate, VOTE_BLOCK, c as u64).random();
            Some(u < t)
        })
        .collect();
    VoteMatrix::new(n_subjects, n_items, cells)
}

pub fn simulate_scenario(spec: &ScenarioSpec, seed: u64) -> Result<SimulatedData> {
    spec.validate()?;
    let (ni, nj, k) = (spec.n_subjects, spec.n_items, spec.k());
    let mut rng = stream_rng(seed, 0, TRUTH_BLOCK, 0);
    let truth = match spec.geometry {
        ScenarioGeometry::Sphere { precision, .. } => {
            let p = SvMParams::constant(precision, k)?;
            let mut draw = |n: usize| -> Vec<UnitVector> {
                (0..n).map(|_| spherical_to_cartesian(&svm_sample(&p, &mut rng))).collect()
            };
            let beta = draw(ni);
            let psi = draw(nj);
            let zeta = draw(nj);
            Truth::Spherical {
                config: LatentConfiguration::new(beta, psi, zeta)?,
                kappa: vec![spec.kappa; nj],
            }
        }
        ScenarioGeometry::Euclidean { .. } => {
            let mut n = || rng.sample::<f64, _>(StandardNormal);
            let mu = (0..nj).map(|_| n()).collect();
            let alpha = (0..nj).map(|_| (0..k).map(|_| n()).collect()).collect();
            let beta = (0..ni).map(|_| (0..k).map(|_| n()).collect()).collect();
            Truth::Euclidean(EuclideanParams { mu, alpha, beta })
        }
    };
    let theta = truth.theta_matrix()?;
    let votes = draw_votes(&theta, ni, nj, seed, 0)?;
    Ok(SimulatedData { votes, truth, theta })
}

/// Writes the generating parameters as CSV rows `block,index,values...`.
pub fn save_truth(truth: &Truth, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(path)?;
    let mut row = |block: &str, idx: usize, vals: &[f64]| -> Result<()> {
        let mut rec = vec![block.to_string(), idx.to_string()];
        rec.extend(vals.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
        Ok(())
    };
    match truth {
        Truth::Spherical { config, kappa } => {
            for (name, xs) in [("beta", &config.beta), ("psi", &config.psi), ("zeta", &config.zeta)] {
                for (i, x) in xs.iter().enumerate() {
                    row(name, i, x.as_slice())?;
                }
            }
            for (j, k) in kappa.iter().enumerate() {
                row("kappa", j, &[*k])?;
            }
        }
        Truth::Euclidean(p) => {
            for (j, m) in p.mu.iter().enumerate() {
                row("mu", j, &[*m])?;
            }
            for (j, a) in p.alpha.iter().enumerate() {
                row("alpha", j, a)?;
            }
            for (i, b) in p.beta.iter().enumerate() {
                row("beta", i, b)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Layout of a vote-matrix CSV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoteFormat {
    /// Header `subject,<item ids>`, one row per subject, cells `0`, `1` or `NA`.
    CsvWide,
    /// Header `subject,item,vote`, one row per cell.
    CsvLong,
}

impl FromStr for VoteFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv-wide" | "wide" => Ok(Self::CsvWide),
            "csv-long" | "long" => Ok(Self::CsvLong),
            _ => Err(Error::InvalidParameter(format!("unknown vote format '{s}'"))),
        }
    }
}

impl std::fmt::Display for VoteFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::CsvWide => "csv-wide",
            Self::CsvLong => "csv-long",
        })
    }
}

fn parse_code(s: &str, line: usize) -> Result<Option<bool>> {
    match s.trim() {
        "1" => Ok(Some(true)),
        "0" => Ok(Some(false)),
        "NA" | "na" | "" | "." => Ok(None),
        other => Err(Error::Parse {
            line,
            msg: format!("unknown vote code '{other}' (expected 0, 1 or NA)"),
        }),
    }
}

fn code(c: Option<bool>) -> &'static str {
    match c {
        Some(true) => "1",
        Some(false) => "0",
        None => "NA",
    }
}

fn csv_line(e: &csv::Error) -> usize {
    e.position().map_or(0, |p| p.line() as usize)
}

fn records<R: Read>(rdr: &mut csv::Reader<R>) -> impl Iterator<Item = Result<(usize, csv::StringRecord)>> + '_ {
    rdr.records().map(|r| match r {
        Ok(rec) => Ok((rec.position().map_or(0, |p| p.line() as usize), rec)),
        Err(e) => Err(Error::Parse {
            line: csv_line(&e),
            msg: e.to_string(),
        }),
    })
}

pub fn read_vote_matrix<R: Read>(input: R, format: VoteFormat) -> Result<VoteMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    match format {
        VoteFormat::CsvWide => {
            let header = rdr.headers()?.clone();
            let item_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
            check_unique(&item_ids, "item")?;
            let mut subject_ids = Vec::new();
            let mut cells = Vec::new();
            for r in records(&mut rdr) {
                let (line, rec) = r?;
                subject_ids.push(rec.get(0).unwrap_or_default().to_string());
                for f in rec.iter().skip(1) {
                    cells.push(parse_code(f, line)?);
                }
            }
            check_unique(&subject_ids, "subject")?;
            VoteMatrix::with_ids(subject_ids, item_ids, cells)
        }
        VoteFormat::CsvLong => {
            let mut subjects: Vec<String> = Vec::new();
            let mut items: Vec<String> = Vec::new();
            let mut s_idx = std::collections::HashMap::new();
            let mut i_idx = std::collections::HashMap::new();
            let mut entries: Vec<(usize, usize, Option<bool>, usize)> = Vec::new();
            for r in records(&mut rdr) {
                let (line, rec) = r?;
                if rec.len() != 3 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("expected 3 fields (subject,item,vote), found {}", rec.len()),
                    });
                }
                let s = *s_idx.entry(rec[0].to_string()).or_insert_with(|| {
                    subjects.push(rec[0].to_string());
                    subjects.len() - 1
                });
                let i = *i_idx.entry(rec[1].to_string()).or_insert_with(|| {
                    items.push(rec[1].to_string());
                    items.len() - 1
                });
                entries.push((s, i, parse_code(&rec[2], line)?, line));
            }
            let nj = items.len();
            let mut cells = vec![None; subjects.len() * nj];
            let mut seen = vec![false; subjects.len() * nj];
            for (s, i, v, line) in entries {
                if std::mem::replace(&mut seen[s * nj + i], true) {
                    return Err(Error::Parse {
                        line,
                        msg: format!("duplicate entry for subject '{}', item '{}'", subjects[s], items[i]),
                    });
                }
                cells[s * nj + i] = v;
            }
            VoteMatrix::with_ids(subjects, items, cells)
        }
    }
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::InvalidParameter(format!("duplicate {what} id '{id}'")));
        }
    }
    Ok(())
}

pub fn load_vote_matrix(path: &Path, format: VoteFormat) -> Result<VoteMatrix> {
    read_vote_matrix(File::open(path)?, format)
}

pub fn write_vote_matrix<W: Write>(y: &VoteMatrix, out: W, format: VoteFormat) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let nj = y.n_items();
    match format {
        VoteFormat::CsvWide => {
            let mut header = vec!["subject".to_string()];
            header.extend(y.item_ids().iter().cloned());
            w.write_record(&header)?;
            for (i, sid) in y.subject_ids().iter().enumerate() {
                let mut rec = vec![sid.as_str()];
                rec.extend(y.cells()[i * nj..(i + 1) * nj].iter().map(|c| code(*c)));
                w.write_record(&rec)?;
            }
        }
        VoteFormat::CsvLong => {
            w.write_record(["subject", "item", "vote"])?;
            for (i, sid) in y.subject_ids().iter().enumerate() {
                for (j, iid) in y.item_ids().iter().enumerate() {
                    w.write_record([sid.as_str(), iid.as_str(), code(y.get(i, j))])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_vote_matrix(y: &VoteMatrix, path: &Path, format: VoteFormat) -> Result<()> {
    write_vote_matrix(y, BufWriter::new(File::create(path)?), format)
}

/// Result of dropping low-participation subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub votes: VoteMatrix,
    pub dropped: Vec<String>,
}

/// Drops subjects whose missing fraction exceeds `threshold`.
pub fn filter_low_participation(y: &VoteMatrix, threshold: f64) -> Result<FilterReport> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidParameter(format!("threshold must be in [0,1], got {threshold}")));
    }
    let nj = y.n_items() as f64;
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for i in 0..y.n_subjects() {
        let missing = 1.0 - y.subject_votes(i).len() as f64 / nj;
        if missing > threshold {
            dropped.push(y.subject_ids()[i].clone());
        } else {
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return Err(Error::InvalidParameter("every subject exceeds the missing-vote threshold".into()));
    }
    if !dropped.is_empty() {
        log::info!("dropped {} subjects with more than {:.0}% missing votes", dropped.len(), 100.0 * threshold);
    }
    Ok(FilterReport {
        votes: y.select_subjects(&keep)?,
        dropped,
    })
}

/// Encoding of the chain file body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyFormat {
    Csv,
    Binary,
}

impl FromStr for BodyFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "binary" | "bin" => Ok(Self::Binary),
            _ => Err(Error::InvalidParameter(format!("unknown chain format '{s}'"))),
        }
    }
}

/// First line of a chain file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainHeader {
    pub format: String,
    pub version: u32,
    pub body: BodyFormat,
    pub model: ModelKind,
    pub k: usize,
    pub n_subjects: usize,
    pub n_items: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub data_hash: String,
    pub columns: Vec<String>,
    pub stats: ChainStats,
    pub settings: serde_json::Value,
}

fn columns(model: ModelKind, k: usize, ni: usize, nj: usize) -> Vec<String> {
    let mut c = vec!["loglik".to_string()];
    let mut block = |name: &str, n: usize, d: usize| {
        for a in 0..n {
            for b in 0..d {
                c.push(format!("{name}[{a}][{b}]"));
            }
        }
    };
    match model {
        ModelKind::Spherical => {
            block("omega", 1, 1);
            block("tau", 1, 1);
            block("lambda", 1, 1);
            block("kappa", nj, 1);
            block("beta", ni, k + 1);
            block("psi", nj, k + 1);
            block("zeta", nj, k + 1);
        }
        ModelKind::Euclidean => {
            block("mu", nj, 1);
            block("alpha", nj, k);
            block("beta", ni, k);
        }
    }
    c
}

fn sample_row(s: &Sample, loglik: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(loglik);
    match s {
        Sample::Spherical { config, hp } => {
            out.extend([hp.omega, hp.tau, hp.lambda]);
            out.extend(&hp.kappa);
            for x in config.beta.iter().chain(&config.psi).chain(&config.zeta) {
                out.extend(x.as_slice());
            }
        }
        Sample::Euclidean(p) => {
            out.extend(&p.mu);
            p.alpha.iter().for_each(|a| out.extend(a));
            p.beta.iter().for_each(|b| out.extend(b));
        }
    }
}

fn row_sample(h: &ChainHeader, row: &[f64]) -> Result<(Sample, f64)> {
    let (k, ni, nj) = (h.k, h.n_subjects, h.n_items);
    let mut it = row.iter().copied();
    let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
    let loglik = take(1)[0];
    let sample = match h.model {
        ModelKind::Spherical => {
            let s = take(3);
            let kappa = take(nj);
            let mut pts = |n: usize| -> Result<Vec<UnitVector>> {
                (0..n).map(|_| UnitVector::from_stored(take(k + 1))).collect()
            };
            let beta = pts(ni)?;
            let psi = pts(nj)?;
            let zeta = pts(nj)?;
            Sample::Spherical {
                config: LatentConfiguration::new(beta, psi, zeta)?,
                hp: Hyperparams {
                    omega: s[0],
                    tau: s[1],
                    lambda: s[2],
                    kappa,
                },
            }
        }
        ModelKind::Euclidean => {
            let mu = take(nj);
            let alpha = (0..nj).map(|_| take(k)).collect();
            let beta = (0..ni).map(|_| take(k)).collect();
            Sample::Euclidean(EuclideanParams { mu, alpha, beta })
        }
    };
    Ok((sample, loglik))
}

pub fn write_chain<W: Write>(chain: &ChainOutput, mut out: W, body: BodyFormat) -> Result<()> {
    if chain.loglik.len() != chain.samples.len() {
        return Err(Error::InvalidParameter("loglik trace and samples differ in length".into()));
    }
    let (ni, nj) = (chain.n_subjects().unwrap_or(0), chain.n_items().unwrap_or(0));
    let header = ChainHeader {
        format: CHAIN_FORMAT.to_string(),
        version: CHAIN_FORMAT_VERSION,
        body,
        model: chain.model,
        k: chain.k,
        n_subjects: ni,
        n_items: nj,
        n_samples: chain.samples.len(),
        seed: chain.seed,
        data_hash: chain.data_hash.clone(),
        columns: columns(chain.model, chain.k, ni, nj),
        stats: chain.stats.clone(),
        settings: chain.settings.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut row = Vec::with_capacity(header.columns.len());
    match body {
        BodyFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(&header.columns)?;
            for (s, &ll) in chain.samples.iter().zip(&chain.loglik) {
                sample_row(s, ll, &mut row);
                w.write_record(row.iter().map(|v| format!("{v:?}")))?;
            }
            w.flush()?;
        }
        BodyFormat::Binary => {
            for (s, &ll) in chain.samples.iter().zip(&chain.loglik) {
                sample_row(s, ll, &mut row);
                for v in &row {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_chain<R: BufRead>(mut input: R) -> Result<ChainOutput> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let probe: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
        line: 1,
        msg: format!("chain header: {e}"),
    })?;
    if probe.get("format").and_then(|v| v.as_str()) != Some(CHAIN_FORMAT) {
        return Err(Error::Parse {
            line: 1,
            msg: "not a chain file".into(),
        });
    }
    let found = probe.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != CHAIN_FORMAT_VERSION {
        return Err(Error::Version {
            found,
            expected: CHAIN_FORMAT_VERSION,
        });
    }
    let header: ChainHeader = serde_json::from_value(probe)?;
    let width = header.columns.len();
    if width != columns(header.model, header.k, header.n_subjects, header.n_items).len() {
        return Err(Error::Parse {
            line: 1,
            msg: "column list does not match the declared dimensions".into(),
        });
    }
    let mut samples = Vec::with_capacity(header.n_samples);
    let mut loglik = Vec::with_capacity(header.n_samples);
    match header.body {
        BodyFormat::Csv => {
            let mut body = Vec::new();
            input.read_to_end(&mut body)?;
            if body.last() != Some(&b'\n') {
                return Err(Error::Parse {
                    line: 2,
                    msg: "chain body is truncated".into(),
                });
            }
            let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_slice());
            let mut row = Vec::with_capacity(width);
            for rec in rdr.records() {
                let rec = rec.map_err(|e| Error::Parse {
                    line: csv_line(&e) + 1,
                    msg: e.to_string(),
                })?;
                let line = rec.position().map_or(0, |p| p.line() as usize) + 1;
                if rec.len() != width {
                    return Err(Error::Parse {
                        line,
                        msg: format!("expected {width} fields, found {}", rec.len()),
                    });
                }
                row.clear();
                for f in rec.iter() {
                    row.push(f.parse::<f64>().map_err(|e| Error::Parse {
                        line,
                        msg: format!("'{f}': {e}"),
                    })?);
                }
                let (s, ll) = row_sample(&header, &row)?;
                samples.push(s);
                loglik.push(ll);
            }
        }
        BodyFormat::Binary => {
            let mut bytes = Vec::new();
            input.read_to_end(&mut bytes)?;
            let want = header.n_samples * width * 8;
            if bytes.len() != want {
                return Err(Error::Parse {
                    line: 2,
                    msg: format!("binary body has {} bytes, expected {want}", bytes.len()),
                });
            }
            let vals: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            for row in vals.chunks_exact(width.max(1)).take(header.n_samples) {
                let (s, ll) = row_sample(&header, row)?;
                samples.push(s);
                loglik.push(ll);
            }
        }
    }
    if samples.len() != header.n_samples {
        return Err(Error::Parse {
            line: samples.len() + 3,
            msg: format!("chain file holds {} samples, header declares {}", samples.len(), header.n_samples),
        });
    }
    Ok(ChainOutput {
        model: header.model,
        k: header.k,
        seed: header.seed,
        data_hash: header.data_hash,
        samples,
        loglik,
        stats: header.stats,
        settings: header.settings,
    })
}

pub fn save_chain(chain: &ChainOutput, path: &Path, body: BodyFormat) -> Result<()> {
    write_chain(chain, BufWriter::new(File::create(path)?), body)
}

pub fn load_chain(path: &Path) -> Result<ChainOutput> {
    read_chain(BufReader::new(File::open(path)?))
}

/// Writes a pretty-printed JSON manifest.
pub fn write_manifest(path: &Path, manifest: &serde_json::Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

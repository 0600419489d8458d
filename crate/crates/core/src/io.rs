//! Tab-delimited screen files, chain CSVs, key=value run configuration and result tables.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::GeneTestResult;
use crate::data::{GrowthCurve, Repeat, Screen, ScreenDataset};
use crate::error::{Error, Result};
use crate::hierarchy::{Classification, HyperParams, InteractionResult};
use crate::mcmc::{Chain, Schedule, SdePriors};

/// One row of a screen export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QfaRecord {
    pub orf: String,
    /// Days since inoculation.
    pub expt_time: f64,
    pub growth: f64,
    pub row: Option<u32>,
    pub col: Option<u32>,
    pub treatment: Option<String>,
    /// Plate or batch label.
    pub batch: Option<String>,
    pub repeat: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadOptions {
    /// Drop cultures on the outermost rows and columns of the plate.
    pub drop_edges: bool,
    pub exclude: BTreeSet<String>,
}

const BATCH_COLUMNS: [&str; 3] = ["Batch", "Plate", "Barcode"];

fn tsv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().delimiter(b'\t').flexible(false).trim(csv::Trim::All).from_reader(r)
}

/// Parse every row of a tab-delimited export; the second element is the 1-based file line.
pub fn read_records(path: &Path) -> Result<Vec<(usize, QfaRecord)>> {
    read_records_from(File::open(path)?, path)
}

pub fn read_records_from<R: Read>(input: R, path: &Path) -> Result<Vec<(usize, QfaRecord)>> {
    let mut rdr = tsv_reader(input);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| find(name).ok_or_else(|| Error::Schema { column: name.to_string(), path: path.to_path_buf() });
    let (orf, time, growth) = (need("ORF")?, need("Expt.Time")?, need("Growth")?);
    let (row, col, treatment, repeat) = (find("Row"), find("Col"), find("Treatment"), find("Repeat"));
    let batch = BATCH_COLUMNS.iter().find_map(|c| find(c));

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        let at = |what: &str| format!("{}:{line}: {what}", path.display());
        let text = |j: Option<usize>| j.and_then(|j| rec.get(j)).filter(|s| !s.is_empty()).map(str::to_string);
        let number = |j: usize, name: &str| -> Result<f64> {
            rec.get(j).unwrap_or("").parse::<f64>().map_err(|_| Error::Data(at(&format!("{name} is not a number"))))
        };
        let index = |j: Option<usize>, name: &str| -> Result<Option<u32>> {
            text(j).map(|s| s.parse::<u32>().map_err(|_| Error::Data(at(&format!("{name} {s:?} is not a whole number"))))).transpose()
        };
        let record = QfaRecord {
            orf: text(Some(orf)).ok_or_else(|| Error::Data(at("empty ORF")))?,
            expt_time: number(time, "Expt.Time")?,
            growth: number(growth, "Growth")?,
            row: index(row, "Row")?,
            col: index(col, "Col")?,
            treatment: text(treatment),
            batch: text(batch),
            repeat: text(repeat),
        };
        if !record.growth.is_finite() {
            return Err(Error::Data(at("Growth is not finite")));
        }
        if !(record.expt_time.is_finite() && record.expt_time >= 0.0) {
            return Err(Error::Data(at("Expt.Time must be finite and non-negative")));
        }
        out.push((line, record));
    }
    Ok(out)
}

/// Numeric-aware ordering so that repeat "10" follows "9".
fn natural(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

/// Group records into one screen.
///
/// Repeats come from an explicit `Repeat` column, else from plate position, else from
/// resets of the time axis in file order.
pub fn records_to_screen(records: &[(usize, QfaRecord)], label: &str, opts: &LoadOptions, path: &Path) -> Result<Screen> {
    let keyed = records.iter().all(|(_, r)| r.repeat.is_some() || (r.row.is_some() && r.col.is_some()));
    let (max_row, max_col) = records.iter().fold((0, 0), |(a, b), (_, r)| (a.max(r.row.unwrap_or(0)), b.max(r.col.unwrap_or(0))));
    if opts.drop_edges && records.iter().any(|(_, r)| r.row.is_none() || r.col.is_none()) {
        let column = if records.iter().any(|(_, r)| r.row.is_none()) { "Row" } else { "Col" };
        return Err(Error::Schema { column: column.into(), path: path.to_path_buf() });
    }
    let on_edge = |r: &QfaRecord| {
        let (row, col) = (r.row.unwrap_or(0), r.col.unwrap_or(0));
        row <= 1 || col <= 1 || row >= max_row || col >= max_col
    };

    type Points = Vec<(f64, f64, usize)>;
    let mut genes: BTreeMap<String, Vec<(String, Option<String>, Points)>> = BTreeMap::new();
    for (line, r) in records {
        if opts.exclude.contains(&r.orf) || (opts.drop_edges && on_edge(r)) {
            continue;
        }
        let reps = genes.entry(r.orf.clone()).or_default();
        let id = if keyed {
            Some(match (&r.repeat, &r.batch) {
                (Some(id), _) => id.clone(),
                (None, Some(b)) => format!("{b}:R{}C{}", r.row.unwrap_or(0), r.col.unwrap_or(0)),
                (None, None) => format!("R{}C{}", r.row.unwrap_or(0), r.col.unwrap_or(0)),
            })
        } else {
            None
        };
        let slot = match id {
            Some(id) => match reps.iter().position(|(rid, ..)| *rid == id) {
                Some(k) => k,
                None => {
                    reps.push((id, r.batch.clone(), Vec::new()));
                    reps.len() - 1
                }
            },
            None => {
                let reset = reps.last().and_then(|(.., pts)| pts.last()).is_none_or(|&(t, ..)| r.expt_time <= t);
                if reset {
                    reps.push(((reps.len() + 1).to_string(), r.batch.clone(), Vec::new()));
                }
                reps.len() - 1
            }
        };
        let rep = &mut reps[slot];
        if rep.1 != r.batch {
            return Err(Error::Data(format!(
                "{}:{line}: ORF {} repeat {} changes batch label",
                path.display(),
                r.orf,
                rep.0
            )));
        }
        rep.2.push((r.expt_time, r.growth, *line));
    }

    let mut screen = Screen::new(label);
    for (gene, mut reps) in genes {
        reps.sort_by(|a, b| natural(&a.0, &b.0));
        let mut out = Vec::with_capacity(reps.len());
        for (id, batch, mut pts) in reps {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            if let Some(w) = pts.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::Data(format!(
                    "{}: ORF {gene} repeat {id} has time {} on lines {} and {}",
                    path.display(),
                    w[0].0,
                    w[0].2.min(w[1].2),
                    w[0].2.max(w[1].2)
                )));
            }
            let (times, values) = pts.iter().map(|p| (p.0, p.1)).unzip();
            out.push(Repeat { id, batch, curve: GrowthCurve::new(times, values)? });
        }
        screen.genes.insert(gene, out);
    }
    Ok(screen)
}

/// Load a single-condition file.
pub fn load_condition(path: &Path, label: &str, opts: &LoadOptions) -> Result<Screen> {
    records_to_screen(&read_records(path)?, label, opts, path)
}

/// Load a two-condition file, split on the `Treatment` column.
pub fn load_screen(path: &Path, control: &str, query: &str, opts: &LoadOptions) -> Result<ScreenDataset> {
    let records = read_records(path)?;
    if records.iter().any(|(_, r)| r.treatment.is_none()) {
        return Err(Error::Schema { column: "Treatment".into(), path: path.to_path_buf() });
    }
    let pick = |label: &str| -> Vec<(usize, QfaRecord)> {
        records.iter().filter(|(_, r)| r.treatment.as_deref() == Some(label)).cloned().collect()
    };
    let (c, q) = (pick(control), pick(query));
    for (label, part) in [(control, &c), (query, &q)] {
        if part.is_empty() {
            return Err(Error::Data(format!("{}: no rows with Treatment {label:?}", path.display())));
        }
    }
    Ok(ScreenDataset {
        control: records_to_screen(&c, control, opts, path)?,
        query: records_to_screen(&q, query, opts, path)?,
    })
}

/// Write screens back in the loader's format with explicit `Repeat` and `Treatment` columns.
pub fn write_screens<W: Write>(out: W, screens: &[&Screen]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
    w.write_record(["ORF", "Expt.Time", "Growth", "Treatment", "Repeat", "Batch"])?;
    for s in screens {
        for (gene, reps) in &s.genes {
            for rep in reps {
                for (t, y) in rep.curve.times.iter().zip(&rep.curve.values) {
                    let (t, y) = (t.to_string(), y.to_string());
                    w.write_record([gene.as_str(), &t, &y, &s.label, &rep.id, rep.batch.as_deref().unwrap_or("")])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(path: &Path, data: &ScreenDataset) -> Result<()> {
    write_screens(File::create(path)?, &[&data.control, &data.query])
}

/// One gene name per line; blank lines and `#` comments are ignored.
pub fn read_gene_list(path: &Path) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        let name = line.split('#').next().unwrap_or("").trim();
        if !name.is_empty() {
            out.insert(name.to_string());
        }
    }
    Ok(out)
}

/// Chain CSV: `#` header lines with run metadata, then one column per parameter.
pub fn write_chain<W: Write>(mut out: W, chain: &Chain) -> Result<()> {
    writeln!(out, "# burn_in={} thin={} seed={}", chain.burn_in, chain.thin, chain.seed)?;
    let acc: Vec<String> = chain.acceptance.iter().map(|a| a.to_string()).collect();
    writeln!(out, "# acceptance={}", acc.join(","))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&chain.names)?;
    for row in &chain.draws {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_chain<R: Read>(input: R) -> Result<Chain> {
    let mut text = String::new();
    BufReader::new(input).read_to_string(&mut text)?;
    let mut meta: BTreeMap<String, String> = BTreeMap::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        for kv in line.trim_start_matches('#').split_whitespace() {
            if let Some((k, v)) = kv.split_once('=') {
                meta.insert(k.to_string(), v.to_string());
            }
        }
    }
    let int = |k: &str| -> Result<u64> {
        meta.get(k).map_or(Ok(0), |v| v.parse().map_err(|_| Error::Data(format!("chain header {k}={v} is not an integer"))))
    };
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut draws = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = rec?
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Error::Data(format!("chain row {} holds non-number {s:?}", i + 1))))
            .collect::<Result<Vec<f64>>>()?;
        draws.push(row);
    }
    let acceptance = match meta.get("acceptance") {
        Some(v) if !v.is_empty() => v
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|_| Error::Data(format!("bad acceptance entry {s:?}"))))
            .collect::<Result<Vec<f64>>>()?,
        _ => vec![f64::NAN; names.len()],
    };
    if acceptance.len() != names.len() {
        return Err(Error::Data("acceptance header does not match the columns".into()));
    }
    Ok(Chain {
        names,
        draws,
        burn_in: int("burn_in")? as usize,
        thin: int("thin")? as usize,
        seed: int("seed")?,
        acceptance,
    })
}

pub fn save_chain(path: &Path, chain: &Chain) -> Result<()> {
    write_chain(File::create(path)?, chain)
}

pub fn load_chain(path: &Path) -> Result<Chain> {
    read_chain(File::open(path)?)
}

pub fn write_json<T: Serialize, W: Write>(out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(out, value)?;
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// Interaction table: `gene, delta_mean, gamma_strength, omega_strength, control_fitness, query_fitness, classification`.
pub fn write_interactions<W: Write>(out: W, results: &[InteractionResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gene", "delta_mean", "gamma_strength", "omega_strength", "control_fitness", "query_fitness", "classification"])?;
    for r in results {
        w.write_record([
            r.gene.clone(),
            r.delta_mean.to_string(),
            r.gamma_strength.to_string(),
            opt(r.omega_strength),
            r.control_fitness.to_string(),
            r.query_fitness.to_string(),
            r.classification.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// The baseline's classification: significant genes split by the sign of the estimate.
pub fn baseline_classification(r: &GeneTestResult) -> Classification {
    match (r.significant, r.gamma_hat >= 0.0) {
        (false, _) => Classification::None,
        (true, true) => Classification::Suppressor,
        (true, false) => Classification::Enhancer,
    }
}

/// Baseline table: the interaction columns that apply, plus `p_value` and `q_value`.
pub fn write_baseline<W: Write>(out: W, results: &[GeneTestResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gene", "gamma_hat", "p_value", "q_value", "control_fitness", "query_fitness", "classification"])?;
    for r in results {
        w.write_record([
            r.gene.clone(),
            r.gamma_hat.to_string(),
            r.p_value.to_string(),
            r.q_value.to_string(),
            r.control_fitness.to_string(),
            r.query_fitness.to_string(),
            baseline_classification(r).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One point of a fitness plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub gene: String,
    pub control_fitness: f64,
    pub query_fitness: f64,
    pub classification: Classification,
}

fn parse_classification(s: &str) -> Result<Classification> {
    match s {
        "suppressor" => Ok(Classification::Suppressor),
        "enhancer" => Ok(Classification::Enhancer),
        "none" => Ok(Classification::None),
        _ => Err(Error::Data(format!("unknown classification {s:?}"))),
    }
}

/// Read the plot columns from an interaction or baseline table.
pub fn read_plot_points<R: Read>(input: R, path: &Path) -> Result<Vec<PlotPoint>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema { column: name.into(), path: path.to_path_buf() })
    };
    let (g, c, q, k) = (col("gene")?, col("control_fitness")?, col("query_fitness")?, col("classification")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |j: usize| rec[j].parse::<f64>().map_err(|_| Error::Data(format!("{}: {:?} is not a number", path.display(), &rec[j])));
        out.push(PlotPoint {
            gene: rec[g].to_string(),
            control_fitness: num(c)?,
            query_fitness: num(q)?,
            classification: parse_classification(&rec[k])?,
        });
    }
    Ok(out)
}

pub fn write_plot_points<W: Write>(out: W, points: &[PlotPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gene", "control_fitness", "query_fitness", "classification"])?;
    for p in points {
        w.write_record([p.gene.clone(), p.control_fitness.to_string(), p.query_fitness.to_string(), p.classification.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchedulePreset {
    Desk,
    Paper,
}

/// Flat run configuration assembled from `key = value` lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: Option<String>,
    pub preset: SchedulePreset,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub samples: Option<usize>,
    pub seed: u64,
    pub exclude: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub hyper: HyperParams,
    pub sde_priors: SdePriors,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: None,
            preset: SchedulePreset::Desk,
            burn_in: None,
            thin: None,
            samples: None,
            seed: 1,
            exclude: None,
            output: None,
            hyper: HyperParams::default(),
            sde_priors: SdePriors::default(),
        }
    }
}

const PRESETS: [(&str, &str); 2] = [
    ("shm-priors-2011", include_str!("../presets/shm-priors-2011.conf")),
    ("sde-priors", include_str!("../presets/sde-priors.conf")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset_text(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Config(format!("unknown preset {name:?}; known: {}", preset_names().join(", "))))
}

fn sde_prior_slot<'a>(p: &'a mut SdePriors, key: &str) -> Option<&'a mut f64> {
    Some(match key {
        "k_mean" => &mut p.k.0,
        "k_prec" => &mut p.k.1,
        "r_mean" => &mut p.r.0,
        "r_prec" => &mut p.r.1,
        "p_mean" => &mut p.p.0,
        "p_prec" => &mut p.p.1,
        "sigma_prec_mean" => &mut p.sigma_prec.0,
        "sigma_prec_prec" => &mut p.sigma_prec.1,
        "nu_prec_mean" => &mut p.nu_prec.0,
        "nu_prec_prec" => &mut p.nu_prec.1,
        "sigma_prec_lower" => &mut p.sigma_prec_lower,
        _ => return None,
    })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        Self::parse(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Apply one `key = value` setting; `priors = <preset>` applies a whole preset.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || value.parse::<f64>().map_err(|_| Error::Config(format!("{key} needs a number, got {value:?}")));
        let count = || value.parse::<usize>().map_err(|_| Error::Config(format!("{key} needs a whole number, got {value:?}")));
        match key {
            "model" => self.model = Some(value.to_string()),
            "preset" => {
                self.preset = match value {
                    "desk" => SchedulePreset::Desk,
                    "paper" => SchedulePreset::Paper,
                    _ => return Err(Error::Config(format!("preset must be desk or paper, got {value:?}"))),
                }
            }
            "burn_in" => self.burn_in = Some(count()?),
            "thin" => self.thin = Some(count()?),
            "samples" => self.samples = Some(count()?),
            "seed" => self.seed = value.parse().map_err(|_| Error::Config(format!("seed needs a whole number, got {value:?}")))?,
            "exclude" => self.exclude = Some(PathBuf::from(value)),
            "output" => self.output = Some(PathBuf::from(value)),
            "priors" => self.apply_text(preset_text(value)?)?,
            _ => match key.split_once('.') {
                Some(("sde", k)) => {
                    *sde_prior_slot(&mut self.sde_priors, k).ok_or_else(|| Error::Config(format!("unknown key {key:?}")))? = num()?
                }
                Some(_) => self.hyper.set(key, num()?)?,
                None => return Err(Error::Config(format!("unknown key {key:?}"))),
            },
        }
        Ok(())
    }

    fn schedule(&self, desk: Schedule, paper: Schedule) -> Result<Schedule> {
        let base = match self.preset {
            SchedulePreset::Desk => desk,
            SchedulePreset::Paper => paper,
        };
        Schedule::new(
            self.burn_in.unwrap_or(base.burn_in),
            self.thin.unwrap_or(base.thin),
            self.samples.unwrap_or(base.samples),
        )
    }

    pub fn screen_schedule(&self) -> Result<Schedule> {
        self.schedule(Schedule::desk_screen(), Schedule::paper_screen())
    }

    pub fn sde_schedule(&self) -> Result<Schedule> {
        self.schedule(Schedule::desk_sde(), Schedule::paper_sde())
    }

    /// Every prior setting as `key = value` lines, parseable by [`RunConfig::parse`].
    pub fn prior_lines(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.hyper.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        let mut p = self.sde_priors;
        for k in ["k_mean", "k_prec", "r_mean", "r_prec", "p_mean", "p_prec", "sigma_prec_mean", "sigma_prec_prec", "nu_prec_mean", "nu_prec_prec", "sigma_prec_lower"] {
            out.push_str(&format!("sde.{k} = {}\n", sde_prior_slot(&mut p, k).expect("listed key")));
        }
        out
    }
}

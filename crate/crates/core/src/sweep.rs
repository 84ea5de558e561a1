//! Benchmark sweeps over (family × dimensions × MI level × estimator × seed).
//!
//! Config files are flat `key = value` text; see [`SweepConfig::parse`].
//! Results are written as CSV in grid order with shortest round-trip float
//! formatting, so identical configs produce identical bytes.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::benchdist::{DatasetSpec, Family};
use crate::error::{Error, Result};
use crate::estimators::{cfmmi_run, jfmmi_run, ConditionOn, Direction, MiConfig, MiRun, TimeSampling};
use crate::flowmatch::{DivergenceMode, TargetKind, TrainConfig};
use crate::oracle::ksg_estimate;

pub const CSV_HEADER: &str = "family,dim_x,dim_y,target_mi_nats,estimator,seed,estimate_nats,stderr_nats,wp2_surrogate,train_seconds,eval_seconds";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    JfmmiForward,
    JfmmiReverse,
    Cfmmi,
    Ksg,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::JfmmiForward,
        EstimatorKind::JfmmiReverse,
        EstimatorKind::Cfmmi,
        EstimatorKind::Ksg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::JfmmiForward => "jfmmi_forward",
            EstimatorKind::JfmmiReverse => "jfmmi_reverse",
            EstimatorKind::Cfmmi => "cfmmi",
            EstimatorKind::Ksg => "ksg",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown estimator `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub families: Vec<Family>,
    pub dims: Vec<(usize, usize)>,
    pub mi_levels_nats: Vec<f64>,
    pub estimators: Vec<EstimatorKind>,
    pub seeds: Vec<u64>,
    pub train_size: usize,
    pub eval_size: usize,
    /// `train.seed` is ignored: every grid point derives its own.
    pub train: TrainConfig,
    pub standardize: bool,
    pub time_sampling: TimeSampling,
    pub ksg_k: usize,
    /// Write measured timings; otherwise the timing columns are 0 so the
    /// CSV is reproducible byte for byte.
    pub report_timing: bool,
    pub output_path: PathBuf,
}

fn config_err(line: Option<usize>, key: &str, message: impl Into<String>) -> Error {
    let location = match line {
        Some(l) => format!("line {l}, key `{key}`"),
        None => format!("key `{key}`"),
    };
    Error::Config {
        location,
        message: message.into(),
    }
}

/// Comma-separated, non-empty, without repeated entries.
fn parse_list<T: PartialEq + fmt::Debug>(
    value: &str,
    mut item: impl FnMut(&str) -> std::result::Result<T, String>,
) -> std::result::Result<Vec<T>, String> {
    let out = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(&mut item)
        .collect::<std::result::Result<Vec<T>, String>>()?;
    if out.is_empty() {
        return Err("list must not be empty".into());
    }
    for (i, v) in out.iter().enumerate() {
        if out[..i].contains(v) {
            return Err(format!("entry {v:?} listed twice"));
        }
    }
    Ok(out)
}

fn parse_num<T: FromStr>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|_| format!("cannot parse `{s}`"))
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{s}`")),
    }
}

fn parse_positive(s: &str) -> std::result::Result<usize, String> {
    match parse_num::<usize>(s)? {
        0 => Err("must be at least 1".into()),
        n => Ok(n),
    }
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once('x').unwrap_or((s, s));
    Ok((parse_positive(a.trim())?, parse_positive(b.trim())?))
}

fn parse_divergence(s: &str) -> std::result::Result<DivergenceMode, String> {
    match s {
        "auto" => Ok(DivergenceMode::Auto),
        "exact" => Ok(DivergenceMode::Exact),
        _ => match s.strip_prefix("hutchinson:") {
            Some(n) => Ok(DivergenceMode::Hutchinson {
                n_probes: parse_positive(n)?,
            }),
            None => Err(format!("expected auto, exact or hutchinson:<probes>, got `{s}`")),
        },
    }
}

impl SweepConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Parse the flat config grammar.
    ///
    /// One `key = value` per line; `#` starts a comment; list values are
    /// comma-separated. Required: `families`, `dims`, `mi_levels`,
    /// `estimators`, `seeds`. Unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let train_default = TrainConfig::default();
        let mut cfg = SweepConfig {
            families: vec![],
            dims: vec![],
            mi_levels_nats: vec![],
            estimators: vec![],
            seeds: vec![],
            train_size: 100_000,
            eval_size: 10_000,
            train: train_default,
            standardize: true,
            time_sampling: TimeSampling::Stratified,
            ksg_k: 5,
            report_timing: false,
            output_path: PathBuf::from("results.csv"),
        };
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_err(Some(line_no), line, "expected `key = value`"));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(config_err(Some(line_no), key, "key given more than once"));
            }
            cfg.set(key, value)
                .map_err(|msg| config_err(Some(line_no), key, msg))?;
        }
        for (key, empty) in [
            ("families", cfg.families.is_empty()),
            ("dims", cfg.dims.is_empty()),
            ("mi_levels", cfg.mi_levels_nats.is_empty()),
            ("estimators", cfg.estimators.is_empty()),
            ("seeds", cfg.seeds.is_empty()),
        ] {
            if empty {
                return Err(config_err(None, key, "required key missing"));
            }
        }
        cfg.train
            .validate()
            .map_err(|e| config_err(None, "train.*", e.to_string()))?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let t = &mut self.train;
        match key {
            "families" => self.families = parse_list(value, |s| s.parse().map_err(|e: Error| e.to_string()))?,
            "dims" => self.dims = parse_list(value, parse_dims)?,
            "mi_levels" => {
                self.mi_levels_nats = parse_list(value, |s| {
                    let v: f64 = parse_num(s)?;
                    if v.is_finite() && v >= 0.0 {
                        Ok(v)
                    } else {
                        Err(format!("MI level must be finite and non-negative, got {s}"))
                    }
                })?
            }
            "estimators" => self.estimators = parse_list(value, |s| s.parse().map_err(|e: Error| e.to_string()))?,
            "seeds" => self.seeds = parse_list(value, parse_num)?,
            "train_size" => self.train_size = parse_positive(value)?,
            "eval_size" => self.eval_size = parse_positive(value)?,
            "output" => {
                if value.is_empty() {
                    return Err("output path must not be empty".into());
                }
                self.output_path = PathBuf::from(value)
            }
            "report_timing" => self.report_timing = parse_bool(value)?,
            "standardize" => self.standardize = parse_bool(value)?,
            "time_sampling" => {
                self.time_sampling = match value {
                    "uniform" => TimeSampling::Uniform,
                    "stratified" => TimeSampling::Stratified,
                    _ => return Err(format!("expected uniform or stratified, got `{value}`")),
                }
            }
            "ksg.k" => self.ksg_k = parse_positive(value)?,
            "train.hidden_width" => t.hidden_width = parse_positive(value)?,
            "train.hidden_depth" => t.hidden_depth = parse_positive(value)?,
            "train.learning_rate" => t.learning_rate = parse_num(value)?,
            "train.weight_decay" => t.weight_decay = parse_num(value)?,
            "train.beta1" => t.beta1 = parse_num(value)?,
            "train.beta2" => t.beta2 = parse_num(value)?,
            "train.adam_eps" => t.adam_eps = parse_num(value)?,
            "train.batch_size" => t.batch_size = parse_positive(value)?,
            "train.n_iters" => t.n_iters = parse_positive(value)?,
            "train.divergence" => t.divergence_mode = parse_divergence(value)?,
            "train.target" => {
                t.target = match value {
                    "pair_difference" => TargetKind::PairDifference,
                    "literal" => TargetKind::Literal,
                    _ => return Err(format!("expected pair_difference or literal, got `{value}`")),
                }
            }
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Grid points in output order: family, dims, MI level, estimator, seed.
    pub fn grid(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &family in &self.families {
            for &(dim_x, dim_y) in &self.dims {
                for &target_mi_nats in &self.mi_levels_nats {
                    for &estimator in &self.estimators {
                        for &seed in &self.seeds {
                            out.push(GridPoint {
                                index: out.len(),
                                family,
                                dim_x,
                                dim_y,
                                target_mi_nats,
                                estimator,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub family: Family,
    pub dim_x: usize,
    pub dim_y: usize,
    pub target_mi_nats: f64,
    pub estimator: EstimatorKind,
    pub seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

impl GridPoint {
    /// Seed of the data draw. Shared by all estimators at the same
    /// (seed, family, dims, MI level) so they see identical samples.
    pub fn data_seed(&self) -> u64 {
        let fam = Family::ALL.iter().position(|f| *f == self.family).unwrap_or(0) as u64;
        [fam, self.dim_x as u64, self.dim_y as u64, self.target_mi_nats.to_bits()]
            .into_iter()
            .fold(self.seed, mix)
    }

    /// Seed of the estimator's own randomness (training, permutations, times).
    pub fn estimator_seed(&self) -> u64 {
        mix(self.data_seed(), 1 + self.estimator as u64)
    }

    pub fn describe(&self) -> String {
        format!(
            "#{} family={} dims={}x{} mi={} estimator={} seed={}",
            self.index, self.family, self.dim_x, self.dim_y, self.target_mi_nats, self.estimator, self.seed
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub family: Family,
    pub dim_x: usize,
    pub dim_y: usize,
    pub target_mi_nats: f64,
    pub estimator: EstimatorKind,
    pub seed: u64,
    pub estimate_nats: f64,
    pub stderr_nats: f64,
    pub wp2_surrogate: f64,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

impl ResultRow {
    /// One CSV line, without the newline. `f64` Display is the shortest
    /// string that round-trips.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.family,
            self.dim_x,
            self.dim_y,
            self.target_mi_nats,
            self.estimator,
            self.seed,
            self.estimate_nats,
            self.stderr_nats,
            self.wp2_surrogate,
            self.train_seconds,
            self.eval_seconds
        )
    }

    fn from_csv(line: &str, line_no: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Schema {
                line: line_no,
                message: format!("expected 11 fields, found {}", fields.len()),
            });
        }
        let bad = |name: &str, v: &str| Error::Schema {
            line: line_no,
            message: format!("field `{name}` has invalid value `{v}`"),
        };
        let num = |i: usize, name: &str| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(name, fields[i]))
        };
        let int = |i: usize, name: &str| -> Result<u64> { fields[i].parse().map_err(|_| bad(name, fields[i])) };
        Ok(Self {
            family: fields[0].parse().map_err(|_| bad("family", fields[0]))?,
            dim_x: int(1, "dim_x")? as usize,
            dim_y: int(2, "dim_y")? as usize,
            target_mi_nats: num(3, "target_mi_nats")?,
            estimator: fields[4].parse().map_err(|_| bad("estimator", fields[4]))?,
            seed: int(5, "seed")?,
            estimate_nats: num(6, "estimate_nats")?,
            stderr_nats: num(7, "stderr_nats")?,
            wp2_surrogate: num(8, "wp2_surrogate")?,
            train_seconds: num(9, "train_seconds")?,
            eval_seconds: num(10, "eval_seconds")?,
        })
    }
}

/// Outcome of one grid point.
pub type PointResult = std::result::Result<ResultRow, String>;

#[derive(Debug)]
pub struct SweepOutcome {
    pub points: Vec<(GridPoint, PointResult)>,
}

impl SweepOutcome {
    pub fn rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.points.iter().filter_map(|(_, r)| r.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = (&GridPoint, &String)> {
        self.points.iter().filter_map(|(p, r)| r.as_ref().err().map(|e| (p, e)))
    }

    /// True when every point produced a row.
    pub fn success(&self) -> bool {
        !self.points.is_empty() && self.failures().next().is_none()
    }

    pub fn csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in self.rows() {
            out.push_str(&row.to_csv());
            out.push('\n');
        }
        out
    }
}

fn run_estimator(point: &GridPoint, cfg: &SweepConfig, joint: &crate::diffkernel::Matrix) -> Result<(f64, f64, f64, f64, f64)> {
    let mut mi_cfg = MiConfig {
        train: cfg.train.clone(),
        eval_size: cfg.eval_size,
        wp_order: 2.0,
        standardize: cfg.standardize,
        time_sampling: cfg.time_sampling,
    };
    let est_seed = point.estimator_seed();
    mi_cfg.train.seed = mix(est_seed, 1);
    mi_cfg.train.trace_path = None;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(est_seed, 2));
    let dx = point.dim_x;
    let run: MiRun = match point.estimator {
        EstimatorKind::JfmmiForward => jfmmi_run(joint, dx, &mi_cfg, Direction::Forward, &mut rng)?,
        EstimatorKind::JfmmiReverse => jfmmi_run(joint, dx, &mi_cfg, Direction::Reverse, &mut rng)?,
        EstimatorKind::Cfmmi => cfmmi_run(joint, dx, ConditionOn::Y, &mi_cfg, &mut rng)?,
        EstimatorKind::Ksg => {
            let train = joint.select_rows(&(0..cfg.train_size).collect::<Vec<_>>());
            let started = Instant::now();
            let mi = ksg_estimate(&train.columns(0..dx)?, &train.columns(dx..train.cols())?, cfg.ksg_k)?;
            return Ok((mi, 0.0, 0.0, 0.0, started.elapsed().as_secs_f64()));
        }
    };
    let wp = run.estimate.wp_surrogate.map_or(0.0, |w| w.value);
    Ok((run.estimate.value_nats, run.estimate.stderr_nats, wp, run.train_seconds, run.eval_seconds))
}

/// Run a single grid point in isolation.
pub fn run_point(point: &GridPoint, cfg: &SweepConfig) -> Result<ResultRow> {
    let spec = DatasetSpec::new(point.family, point.dim_x, point.dim_y, point.target_mi_nats, point.data_seed())?;
    let mut data_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let joint = spec.sample(cfg.train_size + cfg.eval_size, &mut data_rng)?;
    let (estimate, stderr, wp2, train_s, eval_s) = run_estimator(point, cfg, &joint)?;
    for (name, v) in [("estimate", estimate), ("stderr", stderr), ("wp2 surrogate", wp2)] {
        if !v.is_finite() {
            return Err(Error::Validation(format!("{name} is not finite: {v}")));
        }
    }
    let (train_seconds, eval_seconds) = if cfg.report_timing { (train_s, eval_s) } else { (0.0, 0.0) };
    Ok(ResultRow {
        family: point.family,
        dim_x: point.dim_x,
        dim_y: point.dim_y,
        target_mi_nats: point.target_mi_nats,
        estimator: point.estimator,
        seed: point.seed,
        estimate_nats: estimate,
        stderr_nats: stderr,
        wp2_surrogate: wp2,
        train_seconds,
        eval_seconds,
    })
}

/// Run every grid point on `jobs` worker threads. Results come back in
/// grid order regardless of scheduling.
pub fn run_grid(cfg: &SweepConfig, jobs: usize) -> Result<SweepOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Validation(format!("cannot start worker pool: {e}")))?;
    let grid = cfg.grid();
    let points = pool.install(|| {
        grid.par_iter()
            .map(|p| (*p, run_point(p, cfg).map_err(|e| e.to_string())))
            .collect()
    });
    Ok(SweepOutcome { points })
}

/// Run the sweep and write the CSV to `out` (or the configured path).
pub fn run_sweep(cfg: &SweepConfig, jobs: usize, out: Option<&Path>) -> Result<SweepOutcome> {
    let outcome = run_grid(cfg, jobs)?;
    let path = out.unwrap_or(&cfg.output_path);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, outcome.csv())?;
    Ok(outcome)
}

pub fn read_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        Some(h) => {
            return Err(Error::Schema {
                line: 1,
                message: format!("header `{h}` does not match `{CSV_HEADER}`"),
            })
        }
        None => {
            return Err(Error::Schema {
                line: 1,
                message: "empty file".into(),
            })
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| ResultRow::from_csv(l, i + 2))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupBy {
    Dimension,
    MiLevel,
}

impl FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dimension" => Ok(GroupBy::Dimension),
            "mi_level" => Ok(GroupBy::MiLevel),
            _ => Err(Error::Validation(format!(
                "group-by must be dimension or mi_level, got `{s}`"
            ))),
        }
    }
}

/// Mean and sample standard deviation (`n − 1`; 0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Plot-data text for each (family, estimator), keyed by
/// `"<family>_<estimator>"`.
///
/// Grouping by dimension puts `dim_x` on the x-axis with one gnuplot block
/// per (MI level, `dim_y − dim_x`); grouping by MI level puts the target MI
/// on the x-axis with one block per `(dim_x, dim_y)`. Blocks are separated
/// by two blank lines, so `index` selects them.
pub fn plot_tables(rows: &[ResultRow], group_by: GroupBy) -> BTreeMap<String, String> {
    type BlockKey = (u64, i64, i64);
    let mut files: BTreeMap<(Family, EstimatorKind), BTreeMap<BlockKey, BTreeMap<u64, Vec<&ResultRow>>>> =
        BTreeMap::new();
    // f64 keys are ordered through their bit patterns; all are non-negative
    for r in rows {
        let (block, x) = match group_by {
            GroupBy::Dimension => (
                (r.target_mi_nats.to_bits(), r.dim_y as i64 - r.dim_x as i64, 0),
                (r.dim_x as f64).to_bits(),
            ),
            GroupBy::MiLevel => ((0, r.dim_x as i64, r.dim_y as i64), r.target_mi_nats.to_bits()),
        };
        files
            .entry((r.family, r.estimator))
            .or_default()
            .entry(block)
            .or_default()
            .entry(x)
            .or_default()
            .push(r);
    }
    let (group_name, x_name) = match group_by {
        GroupBy::Dimension => ("dimension", "dim_x"),
        GroupBy::MiLevel => ("mi_level", "target_mi_nats"),
    };
    files
        .into_iter()
        .map(|((family, estimator), blocks)| {
            let mut text = String::new();
            let _ = writeln!(text, "# family={family} estimator={estimator} group_by={group_name}");
            let _ = writeln!(
                text,
                "# columns: {x_name} mean_estimate_nats sd_estimate_nats ground_truth_nats"
            );
            let _ = writeln!(
                text,
                "# sd: sample standard deviation across seeds (n-1 denominator), 0 for one seed"
            );
            for (b, (key, points)) in blocks.into_iter().enumerate() {
                if b > 0 {
                    text.push_str("\n\n");
                }
                let _ = match group_by {
                    GroupBy::Dimension => writeln!(
                        text,
                        "# target_mi_nats={} dim_y-dim_x={}",
                        f64::from_bits(key.0),
                        key.1
                    ),
                    GroupBy::MiLevel => writeln!(text, "# dim_x={} dim_y={}", key.1, key.2),
                };
                for (x, group) in points {
                    let est: Vec<f64> = group.iter().map(|r| r.estimate_nats).collect();
                    let (mean, sd) = mean_sd(&est);
                    let truth = group[0].target_mi_nats;
                    let _ = writeln!(text, "{} {} {} {}", f64::from_bits(x), mean, sd, truth);
                }
            }
            (format!("{family}_{estimator}"), text)
        })
        .collect()
}

/// Read a results CSV and write `<stem>_<family>_<estimator>.dat` files
/// next to it. Returns the written paths.
pub fn emit_plotdata(csv_path: &Path, group_by: GroupBy) -> Result<Vec<PathBuf>> {
    let rows = read_csv(&fs::read_to_string(csv_path)?)?;
    let dir = csv_path.parent().unwrap_or(Path::new(""));
    let stem = csv_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("results");
    let mut written = Vec::new();
    for (name, text) in plot_tables(&rows, group_by) {
        let path = dir.join(format!("{stem}_{name}.dat"));
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

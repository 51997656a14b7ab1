//! Experiment runner: a plain-text config, one subcommand per artifact kind,
//! CSV/JSON outputs and a manifest beside them.
//!
//! Config grammar: one `key = value` per line, `#` starts a comment, blank
//! lines are ignored. Lists are comma separated. `region`, `gamma1` and
//! `gamma2` may repeat; each holds a box `lo_1 .. lo_d : hi_1 .. hi_d` with
//! rational coordinates. Distributions read `constant C`, `bernoulli A B P`,
//! `uniform A B` or `discrete V:P V:P ...`.

use crate::environment::{derive_seed, sample_capacities, Capacities, CapacityDistribution};
use crate::error::{FppError, Result};
use crate::estimate::{
    estimate_flow_constant, estimate_rate, straight_cylinder, tail_probability, MinDistanceOptions, RateConfig,
};
use crate::lattice::{discretize_domain, AxisBox, DomainSpec, LatticeDomain};
use crate::maxflow::{cut_capacity, cylinder_flow_tau, max_flow};
use crate::measure::{distance, DistanceOptions, VectorMeasure};
use crate::reconnect::{decompose, mix, Family};
use crate::scalar::{parse_q, Rational, Scalar, Q};
use crate::stream::{admissibility_report, admissibility_region_report, Stream};
use clap::{Parser, Subcommand};
use num::{One, Signed, Zero};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const THREADS_ENV: &str = "FPP_THREADS";

#[derive(Parser, Debug)]
#[command(name = "fpp", version, about = "Maximal streams in first-passage percolation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// experiment config file
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// output directory
    #[arg(long, short, global = true, default_value = "out")]
    pub out: PathBuf,
    /// worker threads; overrides FPP_THREADS and the config
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// φ_n on a domain: stream, cut and summary
    Maxflow,
    /// τ(nA, h) over n_list and trials
    Tau,
    /// paths of an input stream, or of the max-flow stream
    Decompose,
    /// one mixing run from inputs to outputs
    MixDemo,
    /// bracket for the distance between two measures
    Distance,
    /// rate-function estimates over the (eps, n) grid
    Rate,
    /// flow-constant ratios over n_list
    FlowConstant,
    /// tail frequencies of φ_n
    Tail,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Maxflow => "maxflow",
            Command::Tau => "tau",
            Command::Decompose => "decompose",
            Command::MixDemo => "mix-demo",
            Command::Distance => "distance",
            Command::Rate => "rate",
            Command::FlowConstant => "flow-constant",
            Command::Tail => "tail",
        }
    }
}

/// Parsed key/value config. Repeatable keys keep every occurrence in order.
#[derive(Clone, Debug, Default)]
pub struct Config {
    entries: BTreeMap<String, Vec<String>>,
}

const REPEATABLE: [&str; 3] = ["region", "gamma1", "gamma2"];
const KNOWN: [&str; 29] = [
    "d", "n", "n_list", "seed", "trials", "threads", "dist", "exact", "region", "gamma1", "gamma2", "axis", "h",
    "s", "v", "eps", "k_max", "rel_gap", "max_cells", "steps", "sweeps", "lambda", "input", "inputs", "outputs",
    "m", "bound", "mu", "nu",
];

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(FppError::config(format!("line {}", ln + 1), "expected `key = value`"));
            };
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if !KNOWN.contains(&k.as_str()) {
                return Err(FppError::config(k, "unknown key"));
            }
            let slot = entries.entry(k.clone()).or_default();
            if !slot.is_empty() && !REPEATABLE.contains(&k.as_str()) {
                return Err(FppError::config(k, "given twice"));
            }
            slot.push(v);
        }
        Ok(Config { entries })
    }

    /// Canonical text: keys sorted, repeated keys in input order.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, vs) in &self.entries {
            for v in vs {
                s.push_str(&format!("{k} = {v}\n"));
            }
        }
        s
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).and_then(|v| v.first()).map(|s| s.as_str())
    }

    fn all(&self, key: &str) -> &[String] {
        self.entries.get(key).map(|v| v.as_slice()).unwrap_or(&[])
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|_| FppError::config(key, format!("cannot parse `{s}`"))),
        }
    }

    fn get_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn need<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| FppError::config(key, "missing"))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        let Some(s) = self.raw(key) else { return Ok(None) };
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| FppError::config(key, format!("cannot parse `{}`", p.trim()))))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn q_value(&self, key: &str) -> Result<Option<Q>> {
        self.raw(key).map(|s| parse_q(s).ok_or_else(|| FppError::config(key, format!("not a rational: `{s}`")))).transpose()
    }

    pub fn dimension(&self) -> Result<usize> {
        let d: usize = self.get_or("d", 2)?;
        if !(1..=8).contains(&d) {
            return Err(FppError::config("d", "must lie in 1..=8"));
        }
        Ok(d)
    }

    /// Axis in 1..=d in the file, 0-based here.
    pub fn axis(&self, d: usize) -> Result<usize> {
        let a: usize = self.get_or("axis", d)?;
        if a < 1 || a > d {
            return Err(FppError::config("axis", format!("must lie in 1..={d}")));
        }
        Ok(a - 1)
    }

    pub fn distribution(&self) -> Result<CapacityDistribution> {
        let s = self.raw("dist").unwrap_or("constant 1");
        let dist = parse_distribution(s).map_err(|m| FppError::config("dist", m))?;
        dist.validate().map_err(|e| FppError::config("dist", e.to_string()))?;
        Ok(dist)
    }

    pub fn domain(&self, d: usize) -> Result<DomainSpec> {
        if self.all("region").is_empty() {
            return Ok(DomainSpec::unit_slab(d, self.axis(d)?));
        }
        let boxes = |key: &str| -> Result<Vec<AxisBox>> {
            self.all(key).iter().map(|s| parse_box(s, d).map_err(|m| FppError::config(key, m))).collect()
        };
        let spec = DomainSpec { d, region: boxes("region")?, gamma1: boxes("gamma1")?, gamma2: boxes("gamma2")? };
        spec.validate().map_err(|e| FppError::config("region", e.to_string()))?;
        Ok(spec)
    }

    pub fn distance_options(&self) -> Result<DistanceOptions> {
        let base = DistanceOptions::default();
        Ok(DistanceOptions {
            k_max: self.get_or("k_max", base.k_max)?,
            rel_gap: self.get_or("rel_gap", base.rel_gap)?,
            max_cells: self.get_or("max_cells", base.max_cells)?,
            ..base
        })
    }

    pub fn threads(&self) -> Result<Option<usize>> {
        self.get("threads")
    }
}

fn parse_distribution(s: &str) -> std::result::Result<CapacityDistribution, String> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    let nums = |xs: &[&str]| -> std::result::Result<Vec<f64>, String> {
        xs.iter().map(|x| x.parse::<f64>().map_err(|_| format!("cannot parse `{x}`"))).collect()
    };
    match parts.split_first() {
        Some((&"constant", r)) if r.len() == 1 => Ok(CapacityDistribution::Constant { c: nums(r)?[0] }),
        Some((&"bernoulli", r)) if r.len() == 3 => {
            let v = nums(r)?;
            Ok(CapacityDistribution::Bernoulli { a: v[0], b: v[1], p: v[2] })
        }
        Some((&"uniform", r)) if r.len() == 2 => {
            let v = nums(r)?;
            Ok(CapacityDistribution::Uniform { a: v[0], b: v[1] })
        }
        Some((&"discrete", r)) if !r.is_empty() => {
            let mut values = Vec::new();
            let mut probs = Vec::new();
            for atom in r {
                let (v, p) = atom.split_once(':').ok_or_else(|| format!("expected value:prob, got `{atom}`"))?;
                let vp = nums(&[v, p])?;
                values.push(vp[0]);
                probs.push(vp[1]);
            }
            Ok(CapacityDistribution::Discrete { values, probs })
        }
        _ => Err(format!("unrecognised distribution `{s}`")),
    }
}

fn parse_box(s: &str, d: usize) -> std::result::Result<AxisBox, String> {
    let (lo, hi) = s.split_once(':').ok_or("expected `lo .. : hi ..`")?;
    let coords = |t: &str| -> std::result::Result<Vec<Q>, String> {
        t.split_whitespace().map(|x| parse_q(x).ok_or(format!("not a rational: `{x}`"))).collect()
    };
    let (lo, hi) = (coords(lo)?, coords(hi)?);
    if lo.len() != d || hi.len() != d {
        return Err(format!("box needs {d} coordinates per corner"));
    }
    AxisBox::new(lo, hi).map_err(|e| e.to_string())
}

/// Process exit status for an error.
pub fn exit_code(e: &FppError) -> i32 {
    match e {
        FppError::Config { .. } | FppError::Parse(_) | FppError::Io(_) => 2,
        FppError::Invariant(_) | FppError::Precondition(_) | FppError::EmptyDomain(_) => 3,
    }
}

/// Flag, then environment, then config.
pub fn resolve_threads(flag: Option<usize>, env: Option<&str>, config: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    if let Some(v) = env {
        let t = v.trim().parse().map_err(|_| FppError::config(THREADS_ENV, format!("cannot parse `{v}`")))?;
        return Ok(Some(t));
    }
    Ok(config)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    config: &'a BTreeMap<String, Vec<String>>,
    outputs: Vec<String>,
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn write(&mut self, name: &str, body: &str) -> Result<()> {
        fs::write(self.dir.join(name), body)?;
        self.written.push(name.to_string());
        Ok(())
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes") + "\n"
}

fn csv_text(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| FppError::invariant(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| FppError::invariant(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| FppError::invariant(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn v_names(d: usize) -> Vec<String> {
    (0..d).map(|j| if d <= 3 { format!("v{}", ["x", "y", "z"][j]) } else { format!("v{}", j + 1) }).collect()
}

/// rate.csv header for dimension d.
pub fn rate_header(d: usize) -> Vec<String> {
    let mut h = vec!["s".to_string()];
    h.extend(v_names(d));
    h.extend(["eps", "n", "trials", "successes", "phat", "lo", "hi", "Ihat"].map(String::from));
    h
}

pub const NU_HEADER: [&str; 7] = ["n", "h", "trials", "mean", "half_width", "min", "max"];
pub const TAIL_HEADER: [&str; 9] =
    ["lambda", "n", "trials", "successes", "phat", "lo", "hi", "speed_surface", "speed_volume"];
pub const TAU_HEADER: [&str; 4] = ["n", "trial", "tau", "ratio"];

/// Runs one subcommand with the given config, writing into `out`.
/// Returns the names of the files written.
pub fn run(command: Command, cfg: &Config, out: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(out)?;
    let mut o = Outputs { dir: out.to_path_buf(), written: Vec::new() };
    let seed: u64 = cfg.get_or("seed", 0)?;
    match command {
        Command::Maxflow => run_maxflow(cfg, seed, &mut o)?,
        Command::Tau => run_tau(cfg, seed, &mut o)?,
        Command::Decompose => run_decompose(cfg, seed, &mut o)?,
        Command::MixDemo => run_mix_demo(cfg, &mut o)?,
        Command::Distance => run_distance(cfg, &mut o)?,
        Command::Rate => run_rate(cfg, seed, &mut o)?,
        Command::FlowConstant => run_flow_constant(cfg, seed, &mut o)?,
        Command::Tail => run_tail(cfg, seed, &mut o)?,
    }
    let canonical = cfg.canonical();
    let manifest = Manifest {
        command: command.name(),
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config_sha256: Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect(),
        config: &cfg.entries,
        outputs: o.written.clone(),
    };
    o.write("manifest.json", &to_json(&manifest))?;
    Ok(o.written)
}

fn lattice(cfg: &Config) -> Result<(usize, i64, LatticeDomain)> {
    let d = cfg.dimension()?;
    let n: i64 = cfg.need("n")?;
    if n < 1 {
        return Err(FppError::config("n", "must be positive"));
    }
    let lat = discretize_domain(&cfg.domain(d)?, n)?;
    Ok((d, n, lat))
}

fn run_maxflow(cfg: &Config, seed: u64, o: &mut Outputs) -> Result<()> {
    if cfg.get_or("exact", true)? {
        maxflow_with::<Rational>(cfg, seed, o)
    } else {
        maxflow_with::<f64>(cfg, seed, o)
    }
}

fn maxflow_with<S: Scalar>(cfg: &Config, seed: u64, o: &mut Outputs) -> Result<()> {
    let (_, _, lat) = lattice(cfg)?;
    let t: Capacities<S> = sample_capacities(&lat, &cfg.distribution()?, seed);
    let r = max_flow(&lat, &t);
    let rep = admissibility_report(&r.stream, &t, &lat);
    if !rep.support_ok || !rep.capacity_ok || !rep.node_law_ok {
        return Err(FppError::invariant(format!("max-flow stream is not admissible: {rep:?}")));
    }
    let cut = cut_capacity(&t, &r.cut);
    let gap = r.value.clone() - cut;
    if !(if S::EXACT { gap.is_zero() } else { gap.near_zero(&r.value) }) {
        return Err(FppError::invariant("flow value differs from the cut capacity"));
    }
    o.write("capacities.txt", &t.to_text())?;
    o.write("stream.txt", &r.stream.to_text())?;
    let mut cut_text = String::new();
    for e in &r.cut {
        let xs: Vec<String> = e.x.iter().map(|c| c.to_string()).collect();
        cut_text.push_str(&format!("{} {}\n", xs.join(" "), e.axis + 1));
    }
    o.write("cut.txt", &cut_text)?;
    o.write("summary.json", &to_json(&r.summary(&lat, &t)))
}

fn n_list(cfg: &Config) -> Result<Vec<i64>> {
    let list = match cfg.list::<i64>("n_list")? {
        Some(l) => l,
        None => vec![cfg.need("n")?],
    };
    if list.is_empty() || list.iter().any(|&n| n < 1) {
        return Err(FppError::config("n_list", "needs positive entries"));
    }
    Ok(list)
}

fn trials(cfg: &Config, default: usize) -> Result<usize> {
    let t = cfg.get_or("trials", default)?;
    if t == 0 {
        return Err(FppError::config("trials", "must be positive"));
    }
    Ok(t)
}

fn height(cfg: &Config) -> Result<Q> {
    let h = cfg.q_value("h")?.unwrap_or(Q::from_integer(1));
    if h <= Q::from_integer(0) {
        return Err(FppError::config("h", "must be positive"));
    }
    Ok(h)
}

fn run_tau(cfg: &Config, seed: u64, o: &mut Outputs) -> Result<()> {
    use rayon::prelude::*;
    let d = cfg.dimension()?;
    let axis = cfg.axis(d)?;
    let dist = cfg.distribution()?;
    let h = height(cfg)?;
    let trials = trials(cfg, 10)?;
    let spec = straight_cylinder(d, axis, h);
    let mut rows = Vec::new();
    for n in n_list(cfg)? {
        let edges = crate::lattice::cylinder_sets(&spec, n)?.halves_domain()?.edges();
        let area = (n + 1).pow(d as u32 - 1) as f64;
        let taus: Vec<f64> = (0..trials as u64)
            .into_par_iter()
            .map(|k| {
                let t: Capacities<f64> =
                    crate::environment::sample_edges(&edges, &dist, derive_seed(derive_seed(seed, n as u64), k));
                cylinder_flow_tau(&spec, n, &t)
            })
            .collect::<Result<_>>()?;
        for (k, tau) in taus.iter().enumerate() {
            rows.push(vec![n.to_string(), k.to_string(), tau.to_string(), (tau / area).to_string()]);
        }
    }
    o.write("tau.csv", &csv_text(&TAU_HEADER.map(String::from), &rows)?)
}

#[derive(Serialize)]
struct DecomposeSummary {
    paths: usize,
    cycles: usize,
    total_weight: String,
    reconstructs: bool,
}

fn run_decompose(cfg: &Config, seed: u64, o: &mut Outputs) -> Result<()> {
    let (_, _, lat) = lattice(cfg)?;
    let f: Stream<Rational> = match cfg.raw("input") {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| FppError::config("input", e.to_string()))?;
            Stream::from_text(&text).map_err(|e| FppError::config("input", e.to_string()))?
        }
        None => {
            let t: Capacities<Rational> = sample_capacities(&lat, &cfg.distribution()?, seed);
            max_flow(&lat, &t).stream
        }
    };
    let dec = decompose(&f, &lat)?;
    let back = dec.reconstruct(f.d, f.n);
    let diff = {
        let mut g = back.clone();
        g.add_scaled(&f, &-Rational::one());
        g
    };
    if !diff.is_zero() {
        return Err(FppError::invariant("paths do not reconstruct the stream"));
    }
    let mut text = String::new();
    for (kind, p) in dec.paths.iter().map(|p| ("path", p)).chain(dec.cycles.iter().map(|p| ("cycle", p))) {
        let verts: Vec<String> =
            p.vertices.iter().map(|x| x.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")).collect();
        text.push_str(&format!("{kind} {} {}\n", p.weight.to_exact_string(), verts.join(" ")));
    }
    o.write("paths.txt", &text)?;
    let total = dec.paths.iter().fold(Rational::zero(), |a, p| a + p.weight.clone());
    let summary = DecomposeSummary {
        paths: dec.paths.len(),
        cycles: dec.cycles.len(),
        total_weight: total.to_exact_string(),
        reconstructs: true,
    };
    o.write("summary.json", &to_json(&summary))
}

fn rational_list(cfg: &Config, key: &str) -> Result<Option<Vec<Rational>>> {
    let Some(s) = cfg.raw(key) else { return Ok(None) };
    s.split(',')
        .map(|p| Rational::parse_exact(p.trim()).ok_or_else(|| FppError::config(key, format!("not a rational: `{}`", p.trim()))))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

#[derive(Serialize)]
struct MixSummary {
    n: i64,
    m: i64,
    support: usize,
    max_abs: String,
    admissible: bool,
}

/// Two-dimensional mix from `inputs` to `outputs` (default: their mean).
fn run_mix_demo(cfg: &Config, o: &mut Outputs) -> Result<()> {
    let inputs = rational_list(cfg, "inputs")?.ok_or_else(|| FppError::config("inputs", "missing"))?;
    let n = inputs.len() as i64;
    let mean = inputs.iter().fold(Rational::zero(), |a, v| a + v.clone()) / Rational::from_integer(n.into());
    let outputs = rational_list(cfg, "outputs")?.unwrap_or_else(|| vec![mean; inputs.len()]);
    if outputs.len() != inputs.len() {
        return Err(FppError::config("outputs", "needs as many entries as inputs"));
    }
    let bound = match cfg.raw("bound") {
        Some(s) => Rational::parse_exact(s).ok_or_else(|| FppError::config("bound", "not a rational"))?,
        None => inputs.iter().chain(&outputs).fold(Rational::zero(), |a, v| Rational::max_s(&a, &v.abs())),
    };
    let m: i64 = cfg.get_or("m", 2 * n)?;
    let fam = |vals: &[Rational]| -> Family<Rational> {
        vals.iter().enumerate().map(|(j, v)| (vec![j as i64 + 1], v.clone())).collect()
    };
    let g = mix(2, n, &fam(&inputs), &fam(&outputs), m, &bound).map_err(|e| match e {
        FppError::Precondition(m) => FppError::config("inputs", m),
        other => other,
    })?;
    let caps = Capacities::uniform(&g.support().cloned().collect::<Vec<_>>(), bound.clone());
    let rep = admissibility_region_report(&g, &caps, |x: &[i64]| x[0] >= 1 && x[0] < m);
    if !rep.capacity_ok || !rep.node_law_ok {
        return Err(FppError::invariant(format!("mixed stream is not admissible: {rep:?}")));
    }
    o.write("stream.txt", &g.to_text())?;
    let summary =
        MixSummary { n, m, support: g.support_len(), max_abs: g.max_abs().to_exact_string(), admissible: true };
    o.write("summary.json", &to_json(&summary))
}

#[derive(Serialize)]
struct DistanceSummary {
    lower: f64,
    upper: f64,
    k_max: u32,
    tail: f64,
    cells: usize,
    converged: bool,
    argmax_u: Vec<f64>,
    argmax_lambda: f64,
}

fn read_measure(cfg: &Config, key: &str) -> Result<VectorMeasure> {
    let path = cfg.raw(key).ok_or_else(|| FppError::config(key, "missing"))?;
    let text = fs::read_to_string(path).map_err(|e| FppError::config(key, e.to_string()))?;
    VectorMeasure::from_json(&text).map_err(|e| FppError::config(key, e.to_string()))
}

fn run_distance(cfg: &Config, o: &mut Outputs) -> Result<()> {
    let (mu, nu) = (read_measure(cfg, "mu")?, read_measure(cfg, "nu")?);
    if mu.d != nu.d {
        return Err(FppError::config("nu", "dimension differs from mu"));
    }
    let b = distance(&mu, &nu, &cfg.distance_options()?);
    if !(b.lower <= b.upper) {
        return Err(FppError::invariant("distance bracket is inverted"));
    }
    let s = DistanceSummary {
        lower: b.lower,
        upper: b.upper,
        k_max: b.k_max,
        tail: b.tail,
        cells: b.stats.cells,
        converged: b.stats.converged,
        argmax_u: b.argmax.0.clone(),
        argmax_lambda: b.argmax.1,
    };
    o.write("distance.json", &to_json(&s))
}

fn run_rate(cfg: &Config, seed: u64, o: &mut Outputs) -> Result<()> {
    let d = cfg.dimension()?;
    let v: Vec<f64> = cfg.list("v")?.unwrap_or_else(|| {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        e
    });
    if v.len() != d {
        return Err(FppError::config("v", format!("needs {d} components")));
    }
    let s: f64 = cfg.get_or("s", 0.5)?;
    let eps_grid: Vec<f64> = cfg.list("eps")?.unwrap_or(vec![0.3]);
    let base = MinDistanceOptions::default();
    let solver = MinDistanceOptions {
        distance: DistanceOptions {
            k_max: cfg.get_or("k_max", base.distance.k_max)?,
            rel_gap: cfg.get_or("rel_gap", base.distance.rel_gap)?,
            max_cells: cfg.get_or("max_cells", base.distance.max_cells)?,
            ..base.distance.clone()
        },
        steps: cfg.get_or("steps", base.steps)?,
        sweeps: cfg.get_or("sweeps", base.sweeps)?,
        early_stop: true,
    };
    let dist = cfg.distribution()?;
    let trials = trials(cfg, 100)?;
    let mut rows = Vec::new();
    for &eps in &eps_grid {
        for n in n_list(cfg)? {
            let r = estimate_rate(&RateConfig {
                s,
                v: v.clone(),
                eps,
                n,
                trials,
                dist: dist.clone(),
                seed,
                solver: solver.clone(),
            })?;
            if !(r.lo <= r.phat && r.phat <= r.hi) {
                return Err(FppError::invariant("p̂ outside its confidence interval"));
            }
            let mut row = vec![s.to_string()];
            row.extend(v.iter().map(|x| x.to_string()));
            row.extend([
                eps.to_string(),
                n.to_string(),
                r.trials.to_string(),
                r.successes.to_string(),
                r.phat.to_string(),
                r.lo.to_string(),
                r.hi.to_string(),
                r.i_hat.to_string(),
            ]);
            rows.push(row);
        }
    }
    o.write("rate.csv", &csv_text(&rate_header(d), &rows)?)
}

fn run_flow_constant(cfg: &Config, seed: u64, o: &mut Outputs) -> Result<()> {
    let d = cfg.dimension()?;
    let axis = cfg.axis(d)?;
    let h = height(cfg)?;
    let est = estimate_flow_constant(d, axis, &cfg.distribution()?, &n_list(cfg)?, |_| h, trials(cfg, 10)?, seed)?;
    let rows: Vec<Vec<String>> = est
        .iter()
        .map(|e| {
            vec![
                e.n.to_string(),
                h.to_string(),
                e.trials.to_string(),
                e.mean.to_string(),
                e.half_width.to_string(),
                e.min.to_string(),
                e.max.to_string(),
            ]
        })
        .collect();
    o.write("nu.csv", &csv_text(&NU_HEADER.map(String::from), &rows)?)?;
    o.write("nu.json", &to_json(&est))
}

fn run_tail(cfg: &Config, seed: u64, o: &mut Outputs) -> Result<()> {
    let d = cfg.dimension()?;
    let lambdas: Vec<f64> = cfg.list("lambda")?.ok_or_else(|| FppError::config("lambda", "missing"))?;
    let dist = cfg.distribution()?;
    let trials = trials(cfg, 100)?;
    let spec = cfg.domain(d)?;
    let mut rows = Vec::new();
    for n in n_list(cfg)? {
        let lat = discretize_domain(&spec, n)?;
        for &lam in &lambdas {
            let r = tail_probability(lam, &lat, trials, &dist, derive_seed(seed, n as u64))?;
            let (surf, vol) = r.speeds(d);
            rows.push(vec![
                lam.to_string(),
                n.to_string(),
                r.trials.to_string(),
                r.successes.to_string(),
                r.phat.to_string(),
                r.lo.to_string(),
                r.hi.to_string(),
                surf.to_string(),
                vol.to_string(),
            ]);
        }
    }
    o.write("tail.csv", &csv_text(&TAIL_HEADER.map(String::from), &rows)?)
}

/// Entry point shared by the binary and the tests: returns the exit code.
pub fn main_with(args: &[String], env_threads: Option<&str>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli, env_threads) {
        Ok(files) => {
            for f in files {
                println!("{}", cli.out.join(f).display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: &Cli, env_threads: Option<&str>) -> Result<Vec<String>> {
    let cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| FppError::config("config", format!("{}: {e}", p.display())))?;
            Config::parse(&text)?
        }
        None => Config::default(),
    };
    let threads = resolve_threads(cli.threads, env_threads, cfg.threads()?)?;
    match threads {
        Some(0) => Err(FppError::config("threads", "must be positive")),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| FppError::config("threads", e.to_string()))?;
            pool.install(|| run(cli.command, &cfg, &cli.out))
        }
        None => run(cli.command, &cfg, &cli.out),
    }
}

//! Synthetic generators with drift schedules, CSV replay, min-max scaling and
//! the pretraining split.
//!
//! Every generator draws from a `ChaCha8Rng` seeded with the run seed, so a
//! stream is fully determined by `(StreamSpec, seed)`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One labelled instance; `t` starts at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamItem {
    pub t: u64,
    pub x: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    Abrupt,
    Incremental,
    Recurrent,
    Gradual,
}

/// Switches the active concept towards `after` (or back to `before`).
/// Incremental and gradual events span `[start, end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftEvent {
    pub kind: DriftKind,
    pub start: u64,
    #[serde(default)]
    pub end: Option<u64>,
    #[serde(default = "after")]
    pub to_after: bool,
}

fn after() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSchedule {
    #[serde(default)]
    pub events: Vec<DriftEvent>,
}

/// How much of the after-concept is active at some `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blend {
    pub weight: f64,
    /// Gradual drift: `weight` is the probability of drawing from the
    /// after-concept rather than an interpolation factor.
    pub stochastic: bool,
}

impl DriftSchedule {
    pub fn abrupt(at: u64) -> Self {
        Self {
            events: vec![DriftEvent {
                kind: DriftKind::Abrupt,
                start: at,
                end: None,
                to_after: true,
            }],
        }
    }

    /// After-concept on `[a, b)`, before-concept again from `b`.
    pub fn recurrent(a: u64, b: u64) -> Self {
        let ev = |start, to_after| DriftEvent {
            kind: DriftKind::Recurrent,
            start,
            end: None,
            to_after,
        };
        Self {
            events: vec![ev(a, true), ev(b, false)],
        }
    }

    /// Linear shift to the after-concept over the first window and back over
    /// the second.
    pub fn incremental(first: (u64, u64), second: (u64, u64)) -> Self {
        let ev = |(start, end), to_after| DriftEvent {
            kind: DriftKind::Incremental,
            start,
            end: Some(end),
            to_after,
        };
        Self {
            events: vec![ev(first, true), ev(second, false)],
        }
    }

    /// Parses a schedule file: a list of `[[events]]` tables.
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut last: Option<u64> = None;
        for e in &self.events {
            if last.is_some_and(|l| e.start <= l) {
                return Err(Error::config("drift event times must be strictly increasing"));
            }
            match (e.kind, e.end) {
                (DriftKind::Incremental | DriftKind::Gradual, Some(end)) if end > e.start => {}
                (DriftKind::Incremental | DriftKind::Gradual, _) => {
                    return Err(Error::config(format!(
                        "{:?} drift at {} needs a window end after its start",
                        e.kind, e.start
                    )))
                }
                (_, Some(_)) => {
                    return Err(Error::config(format!("{:?} drift at {} takes no window", e.kind, e.start)))
                }
                _ => {}
            }
            last = Some(e.end.unwrap_or(e.start));
        }
        Ok(())
    }

    pub fn blend(&self, t: u64) -> Blend {
        let mut w = 0.0;
        let mut stochastic = false;
        for e in &self.events {
            if t < e.start {
                break;
            }
            let target = if e.to_after { 1.0 } else { 0.0 };
            let end = e.end.unwrap_or(e.start);
            if t >= end {
                w = target;
                stochastic = false;
            } else {
                let frac = (t - e.start) as f64 / (end - e.start) as f64;
                w += (target - w) * frac;
                stochastic = e.kind == DriftKind::Gradual;
            }
        }
        Blend { weight: w, stochastic }
    }
}

/// A sum band for Sea: `lo < x1 + x2` and `x1 + x2 <= hi` (or `< hi`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeaBand {
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub hi_inclusive: bool,
}

impl SeaBand {
    pub const fn new(lo: f64, hi: f64, hi_inclusive: bool) -> Self {
        Self { lo, hi, hi_inclusive }
    }

    pub fn contains(&self, s: f64) -> bool {
        s > self.lo && if self.hi_inclusive { s <= self.hi } else { s < self.hi }
    }

    fn lerp(&self, other: &SeaBand, w: f64) -> SeaBand {
        SeaBand {
            lo: lerp(self.lo, other.lo, w),
            hi: lerp(self.hi, other.hi, w),
            hi_inclusive: if w < 0.5 { self.hi_inclusive } else { other.hi_inclusive },
        }
    }
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    if w == 0.0 || a == b {
        a
    } else if w == 1.0 {
        b
    } else {
        a + (b - a) * w
    }
}

/// Class-conditional sampler. `before[c]` and `after[c]` describe class `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Concepts {
    /// Isotropic Gaussians around per-class centers.
    Gaussian {
        before: Vec<Vec<f64>>,
        after: Vec<Vec<f64>>,
        std: f64,
    },
    /// Uniform points in `[0, range]^2` whose coordinate sum is in the band.
    Sea {
        before: Vec<SeaBand>,
        after: Vec<SeaBand>,
        range: f64,
    },
}

impl Concepts {
    pub fn blob() -> Self {
        let c = |v: f64| vec![v; 3];
        let before = vec![c(-10.0), c(0.0), c(5.0), c(15.0), c(25.0), c(-15.0), c(35.0)];
        let mut after = before.clone();
        after[0] = c(-9.5);
        Concepts::Gaussian { before, after, std: 1.0 }
    }

    pub fn vib() -> Self {
        let c = |v: f64| vec![v; 10];
        Concepts::Gaussian {
            before: vec![c(0.0), c(5.0), c(10.0), c(20.0)],
            after: vec![c(0.5), c(5.5), c(10.5), c(20.0)],
            std: 1.0,
        }
    }

    pub fn sea() -> Self {
        Concepts::Sea {
            before: vec![
                SeaBand::new(15.0, f64::INFINITY, true),
                SeaBand::new(f64::NEG_INFINITY, 2.0, true),
                SeaBand::new(5.0, 6.0, false),
                SeaBand::new(9.0, 10.0, false),
            ],
            after: vec![
                SeaBand::new(16.0, f64::INFINITY, true),
                SeaBand::new(f64::NEG_INFINITY, 1.5, true),
                SeaBand::new(5.0, 6.5, false),
                SeaBand::new(9.0, 10.0, false),
            ],
            range: 10.0,
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            Concepts::Gaussian { before, .. } => before.len(),
            Concepts::Sea { before, .. } => before.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Concepts::Gaussian { before, .. } => before.first().map_or(0, Vec::len),
            Concepts::Sea { .. } => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Concepts::Gaussian { before, after, std } => {
                if before.is_empty() || before.len() != after.len() {
                    return Err(Error::config("gaussian concepts need matching before/after class lists"));
                }
                let d = before[0].len();
                if d == 0 || before.iter().chain(after).any(|c| c.len() != d) {
                    return Err(Error::config("every class center needs the same nonzero dimension"));
                }
                if !(std.is_finite() && *std > 0.0) {
                    return Err(Error::config("std must be positive"));
                }
            }
            Concepts::Sea { before, after, range } => {
                if before.is_empty() || before.len() != after.len() {
                    return Err(Error::config("sea concepts need matching before/after class lists"));
                }
                if !(range.is_finite() && *range > 0.0) {
                    return Err(Error::config("sea range must be positive"));
                }
                let max_sum = 2.0 * range;
                for (c, band) in before.iter().chain(after).enumerate() {
                    let lo = band.lo.max(0.0);
                    let hi = band.hi.min(max_sum);
                    if hi <= lo {
                        return Err(Error::config(format!(
                            "sea class {} has an empty region in [0, {range}]^2",
                            c % before.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Draws one instance of `class` under the concept mix `w`.
    pub fn sample<R: Rng + ?Sized>(&self, class: usize, w: f64, rng: &mut R) -> Vec<f64> {
        match self {
            Concepts::Gaussian { before, after, std } => {
                let normal = Normal::new(0.0, *std).expect("std validated");
                before[class]
                    .iter()
                    .zip(&after[class])
                    .map(|(&a, &b)| lerp(a, b, w) + normal.sample(rng))
                    .collect()
            }
            Concepts::Sea { before, after, range } => {
                let band = before[class].lerp(&after[class], w);
                loop {
                    let x = vec![rng.random_range(0.0..*range), rng.random_range(0.0..*range)];
                    if band.contains(x[0] + x[1]) {
                        return x;
                    }
                }
            }
        }
    }

    /// Whether `x` is a plausible member of `class` under mix `w`. Gaussian
    /// concepts accept anything; Sea checks its band.
    pub fn satisfies(&self, class: usize, w: f64, x: &[f64]) -> bool {
        match self {
            Concepts::Gaussian { .. } => true,
            Concepts::Sea { before, after, range } => {
                let band = before[class].lerp(&after[class], w);
                x.iter().all(|v| (0.0..*range).contains(v)) && band.contains(x[0] + x[1])
            }
        }
    }

    /// Per-feature `(min, max)` covering every class under both concepts:
    /// centers +- 4 std for Gaussians, the sampling box for Sea.
    pub fn domain(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Concepts::Gaussian { before, after, std } => {
                let d = self.dim();
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for c in before.iter().chain(after) {
                    for j in 0..d {
                        lo[j] = lo[j].min(c[j] - 4.0 * std);
                        hi[j] = hi[j].max(c[j] + 4.0 * std);
                    }
                }
                (lo, hi)
            }
            Concepts::Sea { range, .. } => (vec![0.0; 2], vec![*range; 2]),
        }
    }

    /// Center of `class` under mix `w` (Gaussian only).
    pub fn center(&self, class: usize, w: f64) -> Option<Vec<f64>> {
        match self {
            Concepts::Gaussian { before, after, .. } => Some(
                before[class]
                    .iter()
                    .zip(&after[class])
                    .map(|(&a, &b)| lerp(a, b, w))
                    .collect(),
            ),
            Concepts::Sea { .. } => None,
        }
    }
}

/// Where min-max statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Synthetic streams use the generator domain, CSV the pretraining split.
    #[default]
    Auto,
    Pretrain,
    Domain,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Blob,
    Sea,
    Vib,
    Csv,
}

/// Scales (then shifts) selected columns of every instance from `from_t` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureTransform {
    pub from_t: u64,
    #[serde(default)]
    pub until_t: Option<u64>,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub shift: f64,
    /// All columns when absent.
    #[serde(default)]
    pub columns: Option<Vec<usize>>,
}

fn one() -> f64 {
    1.0
}

impl FeatureTransform {
    pub fn apply(&self, item: &mut StreamItem) {
        if item.t < self.from_t || self.until_t.is_some_and(|u| item.t >= u) {
            return;
        }
        for (j, v) in item.x.iter_mut().enumerate() {
            if self.columns.as_ref().is_none_or(|cols| cols.contains(&j)) {
                *v = *v * self.scale + self.shift;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub generator: GeneratorKind,
    /// Instances to generate; for CSV, an optional cap (0 means all rows).
    #[serde(default)]
    pub length: usize,
    #[serde(default)]
    pub imbalance_rate: f64,
    /// First timestep at which class `c` may be emitted.
    #[serde(default)]
    pub class_appearance: Vec<u64>,
    /// Ground-truth labels present at pretraining, majority first.
    pub initial_classes: Vec<usize>,
    #[serde(default)]
    pub schedule: DriftSchedule,
    /// Overrides the generator's built-in class concepts.
    #[serde(default)]
    pub concepts: Option<Concepts>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub transforms: Vec<FeatureTransform>,
    #[serde(default)]
    pub scaling: Scaling,
}

impl StreamSpec {
    pub fn blob() -> Self {
        Self {
            generator: GeneratorKind::Blob,
            length: 15000,
            imbalance_rate: 0.02,
            class_appearance: vec![0, 0, 2000, 4000, 7000, 7000, 7000],
            initial_classes: vec![0, 1],
            schedule: DriftSchedule::abrupt(7000),
            concepts: None,
            path: None,
            transforms: Vec::new(),
            scaling: Scaling::Auto,
        }
    }

    pub fn sea() -> Self {
        Self {
            generator: GeneratorKind::Sea,
            length: 15000,
            imbalance_rate: 0.013,
            class_appearance: vec![0, 0, 2500, 7500],
            initial_classes: vec![0, 1],
            schedule: DriftSchedule::recurrent(5000, 10000),
            ..Self::blob()
        }
    }

    pub fn vib() -> Self {
        Self {
            generator: GeneratorKind::Vib,
            length: 15000,
            imbalance_rate: 0.02,
            class_appearance: vec![0, 0, 2500, 7500],
            initial_classes: vec![0, 1],
            schedule: DriftSchedule::incremental((5000, 5050), (10000, 10050)),
            ..Self::blob()
        }
    }

    pub fn csv(path: impl Into<PathBuf>, initial_classes: Vec<usize>) -> Self {
        Self {
            generator: GeneratorKind::Csv,
            length: 0,
            imbalance_rate: 0.0,
            class_appearance: Vec::new(),
            initial_classes,
            schedule: DriftSchedule::default(),
            concepts: None,
            path: Some(path.into()),
            transforms: Vec::new(),
            scaling: Scaling::Auto,
        }
    }

    pub fn concepts(&self) -> Option<Concepts> {
        if let Some(c) = &self.concepts {
            return Some(c.clone());
        }
        match self.generator {
            GeneratorKind::Blob => Some(Concepts::blob()),
            GeneratorKind::Sea => Some(Concepts::sea()),
            GeneratorKind::Vib => Some(Concepts::vib()),
            GeneratorKind::Csv => None,
        }
    }

    /// Feature dimension, if known without reading data.
    pub fn dim(&self) -> Option<usize> {
        self.concepts().map(|c| c.dim())
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial_classes.is_empty() {
            return Err(Error::config("initial_classes must name at least the majority class"));
        }
        self.schedule.validate()?;
        if self.generator == GeneratorKind::Csv {
            if self.path.is_none() {
                return Err(Error::config("csv stream needs a path"));
            }
            if self.scaling == Scaling::Domain {
                return Err(Error::config("csv streams have no generator domain to scale by"));
            }
            return Ok(());
        }
        let concepts = self.concepts().expect("synthetic generator");
        concepts.validate()?;
        if !(0.0..=1.0).contains(&self.imbalance_rate) {
            return Err(Error::config("imbalance_rate must be in [0, 1]"));
        }
        if self.class_appearance.len() != concepts.class_count() {
            return Err(Error::config(format!(
                "class_appearance lists {} classes but the generator has {}",
                self.class_appearance.len(),
                concepts.class_count()
            )));
        }
        if let Some(&c) = self.initial_classes.iter().find(|&&c| c >= concepts.class_count()) {
            return Err(Error::config(format!("initial class {c} does not exist")));
        }
        Ok(())
    }
}

/// Seeded iterator over a synthetic stream.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    concepts: Concepts,
    schedule: DriftSchedule,
    appearance: Vec<u64>,
    majority: usize,
    rate: f64,
    length: usize,
    t: u64,
    rng: ChaCha8Rng,
}

impl SyntheticStream {
    pub fn new(spec: &StreamSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let concepts = spec
            .concepts()
            .ok_or_else(|| Error::config("csv streams are read with ingest_csv"))?;
        Ok(Self {
            concepts,
            schedule: spec.schedule.clone(),
            appearance: spec.class_appearance.clone(),
            majority: spec.initial_classes[0],
            rate: spec.imbalance_rate,
            length: spec.length,
            t: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn concepts(&self) -> &Concepts {
        &self.concepts
    }

    pub fn schedule(&self) -> &DriftSchedule {
        &self.schedule
    }

    /// Concept mix to use for one draw at `t`.
    fn weight_at(&mut self, t: u64) -> f64 {
        let b = self.schedule.blend(t);
        if b.stochastic {
            f64::from(u8::from(self.rng.random::<f64>() < b.weight))
        } else {
            b.weight
        }
    }

    fn available_minorities(&self, t: u64) -> Vec<usize> {
        (0..self.appearance.len())
            .filter(|&c| c != self.majority && self.appearance[c] <= t)
            .collect()
    }
}

impl Iterator for SyntheticStream {
    type Item = StreamItem;

    fn next(&mut self) -> Option<StreamItem> {
        if self.t as usize >= self.length {
            return None;
        }
        self.t += 1;
        let t = self.t;
        let minorities = self.available_minorities(t);
        let label = if !minorities.is_empty() && self.rng.random::<f64>() < self.rate {
            minorities[self.rng.random_range(0..minorities.len())]
        } else {
            self.majority
        };
        let w = self.weight_at(t);
        let x = self.concepts.sample(label, w, &mut self.rng);
        Some(StreamItem { t, x, label })
    }
}

/// Per-feature min-max scaling; values outside the fitted range are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn identity(d: usize) -> Self {
        Self {
            min: vec![0.0; d],
            max: vec![1.0; d],
        }
    }

    pub fn fit<'a, I: IntoIterator<Item = &'a [f64]>>(rows: I) -> Result<Self> {
        let mut it = rows.into_iter();
        let first = it.next().ok_or_else(|| Error::config("cannot fit a scaler on no rows"))?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for r in it {
            if r.len() != min.len() {
                return Err(Error::config("rows of different widths"));
            }
            for (j, &v) in r.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    /// Constant columns map to 0.
    pub fn transform(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.min).zip(&self.max) {
            let span = hi - lo;
            *v = if span > 0.0 { (*v - lo) / span } else { *v - lo };
        }
    }
}

/// Reads `label,f1,...,fd` rows (with header) in file order.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<StreamItem>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let width = rdr.headers()?.len();
    if width < 2 {
        return Err(Error::config("csv header needs a label column and at least one feature"));
    }
    let mut items = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // Line 1 is the header.
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Ingestion {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != width {
            return Err(Error::config(format!(
                "line {line}: {} fields where the header has {width}",
                rec.len()
            )));
        }
        let label = rec[0].parse::<usize>().map_err(|e| Error::Ingestion {
            line,
            message: format!("label {:?}: {e}", &rec[0]),
        })?;
        let x = rec
            .iter()
            .skip(1)
            .map(|f| {
                let v: f64 = f.parse().map_err(|e| Error::Ingestion {
                    line,
                    message: format!("feature {f:?}: {e}"),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Ingestion {
                        line,
                        message: format!("non-finite feature {f:?}"),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        items.push(StreamItem {
            t: i as u64 + 1,
            x,
            label,
        });
    }
    Ok(items)
}

pub fn ingest_csv(path: &Path) -> Result<Vec<StreamItem>> {
    read_csv(std::fs::File::open(path)?)
}

/// Writes items in the format `read_csv` accepts. Floats use the shortest
/// representation that round-trips.
pub fn write_csv<W: Write>(writer: W, items: &[StreamItem]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = items.first().map_or(0, |i| i.x.len());
    let mut header = vec!["label".to_string()];
    header.extend((1..=d).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for it in items {
        let mut row = vec![it.label.to_string()];
        row.extend(it.x.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Pretraining sets `D_0..D_n` (in `initial_classes` order) and the online
/// remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub pretrain: Vec<Vec<Vec<f64>>>,
    pub online: Vec<StreamItem>,
}

/// Diverts the first `majority_count` majority and `minority_count` of each
/// initial minority class; everything else stays online in order.
pub fn split_pretraining(
    items: Vec<StreamItem>,
    initial_classes: &[usize],
    majority_count: usize,
    minority_count: usize,
) -> Result<Split> {
    let quota = |i: usize| if i == 0 { majority_count } else { minority_count };
    let mut pretrain = vec![Vec::new(); initial_classes.len()];
    let mut online = Vec::with_capacity(items.len());
    for it in items {
        match initial_classes.iter().position(|&c| c == it.label) {
            Some(i) if pretrain[i].len() < quota(i) => pretrain[i].push(it.x),
            _ => online.push(it),
        }
    }
    for (i, d) in pretrain.iter().enumerate() {
        if d.len() < quota(i) {
            return Err(Error::config(format!(
                "class {} has {} pretraining instances, {} needed",
                initial_classes[i],
                d.len(),
                quota(i)
            )));
        }
    }
    Ok(Split { pretrain, online })
}

/// A scaled, split stream ready to feed an engine.
#[derive(Debug, Clone)]
pub struct PreparedStream {
    pub split: Split,
    pub scaler: MinMaxScaler,
    pub initial_classes: Vec<usize>,
}

impl PreparedStream {
    pub fn dim(&self) -> usize {
        self.scaler.min.len()
    }
}

/// Raw instances of `spec` with its transforms applied.
pub fn raw_items(spec: &StreamSpec, seed: u64) -> Result<Vec<StreamItem>> {
    spec.validate()?;
    let mut items = match spec.generator {
        GeneratorKind::Csv => {
            let mut items = ingest_csv(spec.path.as_deref().expect("validated"))?;
            if spec.length > 0 {
                items.truncate(spec.length);
            }
            items
        }
        _ => SyntheticStream::new(spec, seed)?.collect(),
    };
    for tr in &spec.transforms {
        items.iter_mut().for_each(|it| tr.apply(it));
    }
    Ok(items)
}

/// Generates or reads the stream, splits off pretraining data and scales
/// everything. Data-driven statistics come from the pretraining split only.
pub fn prepare(spec: &StreamSpec, seed: u64, majority_count: usize, minority_count: usize) -> Result<PreparedStream> {
    let items = raw_items(spec, seed)?;
    let mut split = split_pretraining(items, &spec.initial_classes, majority_count, minority_count)?;
    let d = split.pretrain[0][0].len();
    let scaler = match (spec.scaling, spec.concepts()) {
        (Scaling::None, _) => MinMaxScaler::identity(d),
        (Scaling::Auto | Scaling::Domain, Some(c)) => {
            let (min, max) = c.domain();
            MinMaxScaler { min, max }
        }
        _ => MinMaxScaler::fit(split.pretrain.iter().flatten().map(Vec::as_slice))?,
    };
    for d in &mut split.pretrain {
        d.iter_mut().for_each(|x| scaler.transform(x));
    }
    split.online.iter_mut().for_each(|it| scaler.transform(&mut it.x));
    Ok(PreparedStream {
        split,
        scaler,
        initial_classes: spec.initial_classes.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(spec: &StreamSpec, seed: u64) -> Vec<StreamItem> {
        SyntheticStream::new(spec, seed).unwrap().collect()
    }

    #[test]
    fn blob_has_no_late_classes_before_drift() {
        let s = items(&StreamSpec::blob(), 1);
        assert_eq!(s.len(), 15000);
        assert!(s.iter().filter(|i| i.t < 7000).all(|i| i.label < 4));
        assert!(s.iter().any(|i| i.label >= 4));
    }

    #[test]
    fn blob_majority_mean() {
        let c = Concepts::blob();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let mut mean = [0.0; 3];
        for _ in 0..n {
            for (m, v) in mean.iter_mut().zip(c.sample(0, 0.0, &mut rng)) {
                *m += v / n as f64;
            }
        }
        assert!(mean.iter().all(|m| (m + 10.0).abs() < 0.1), "{mean:?}");
    }

    #[test]
    fn vib_window_midpoint() {
        let spec = StreamSpec::vib();
        let c = Concepts::vib();
        let w = spec.schedule.blend(5025).weight;
        assert!((c.center(0, w).unwrap()[0] - 0.25).abs() < 1e-12);
        assert_eq!(c.center(0, spec.schedule.blend(10050).weight).unwrap()[0], 0.0);
        assert_eq!(c.center(0, spec.schedule.blend(7000).weight).unwrap()[0], 0.5);
        assert_eq!(c.center(3, 1.0).unwrap()[0], 20.0);
    }

    #[test]
    fn sea_bands_follow_schedule() {
        let spec = StreamSpec::sea();
        for it in items(&spec, 5) {
            let s = it.x[0] + it.x[1];
            if it.label == 1 {
                if (5000..10000).contains(&it.t) {
                    assert!(s <= 1.5);
                } else {
                    assert!(s <= 2.0);
                }
            }
            if it.label == 0 && it.t >= 10000 {
                assert!(s > 15.0);
            }
        }
    }

    #[test]
    fn infeasible_sea_band_is_rejected() {
        let mut spec = StreamSpec::sea();
        let mut c = Concepts::sea();
        if let Concepts::Sea { before, .. } = &mut c {
            before[0] = SeaBand::new(25.0, f64::INFINITY, true);
        }
        spec.concepts = Some(c);
        assert!(matches!(SyntheticStream::new(&spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn gradual_is_stochastic() {
        let s = DriftSchedule {
            events: vec![DriftEvent {
                kind: DriftKind::Gradual,
                start: 100,
                end: Some(200),
                to_after: true,
            }],
        };
        s.validate().unwrap();
        let b = s.blend(150);
        assert!(b.stochastic && (b.weight - 0.5).abs() < 1e-12);
        assert_eq!(s.blend(250), Blend { weight: 1.0, stochastic: false });
    }

    #[test]
    fn bad_schedules() {
        let mut s = DriftSchedule::recurrent(10, 5);
        assert!(s.validate().is_err());
        s = DriftSchedule::incremental((10, 10), (20, 30));
        assert!(s.validate().is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let items = vec![
            StreamItem { t: 1, x: vec![0.1, 2.0], label: 0 },
            StreamItem { t: 2, x: vec![-3.5, 1e-12], label: 3 },
            StreamItem { t: 3, x: vec![7.0, 0.333], label: 1 },
        ];
        let mut buf = Vec::new();
        write_csv(&mut buf, &items).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), items);
        assert!(read_csv("label,f1\n".as_bytes()).unwrap().is_empty());
        let bad = read_csv("label,f1\n0,1\n1,abc\n".as_bytes());
        assert!(matches!(bad, Err(Error::Ingestion { line: 3, .. })), "{bad:?}");
        assert!(matches!(read_csv("label,f1\n0,1,2\n".as_bytes()), Err(Error::Config(_))));
    }

    #[test]
    fn scaler_does_not_clip() {
        let rows = [vec![0.0, 10.0], vec![2.0, 20.0]];
        let s = MinMaxScaler::fit(rows.iter().map(Vec::as_slice)).unwrap();
        let mut x = vec![2.0, 10.0];
        s.transform(&mut x);
        assert_eq!(x, vec![1.0, 0.0]);
        let mut y = vec![3.0, 5.0];
        s.transform(&mut y);
        assert_eq!(y, vec![1.5, -0.5]);
    }

    #[test]
    fn split_partitions_in_order() {
        let items: Vec<StreamItem> = (0..20)
            .map(|t| StreamItem { t, x: vec![t as f64], label: (t % 3) as usize })
            .collect();
        let s = split_pretraining(items.clone(), &[0, 1], 3, 2).unwrap();
        assert_eq!(s.pretrain, vec![vec![vec![0.0], vec![3.0], vec![6.0]], vec![vec![1.0], vec![4.0]]]);
        assert_eq!(s.online.len(), 15);
        assert!(s.online.windows(2).all(|w| w[0].t < w[1].t));
        let err = split_pretraining(items, &[0, 5], 3, 2);
        assert!(matches!(err, Err(Error::Config(m)) if m.contains("class 5")));
    }

    #[test]
    fn transform_applies_from_timestep() {
        let tr = FeatureTransform { from_t: 2, until_t: None, scale: 0.9, shift: 0.0, columns: Some(vec![1]) };
        let mut a = StreamItem { t: 1, x: vec![1.0, 1.0], label: 0 };
        let mut b = StreamItem { t: 2, x: vec![1.0, 1.0], label: 0 };
        tr.apply(&mut a);
        tr.apply(&mut b);
        assert_eq!(a.x, vec![1.0, 1.0]);
        assert_eq!(b.x, vec![1.0, 0.9]);
    }
}

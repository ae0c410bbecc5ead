//! Seeded multi-NE telemetry with injected, labelled anomalies.
//!
//! Each KPI is a daily sinusoid whose phase and weekend behaviour depend on
//! the NE's profile (a static categorical), plus Gaussian noise. The hour and
//! day-of-week columns are emitted as dynamic categoricals so the model sees
//! the same calendar that drives the signal.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    write_dataset_csv, write_labels_csv, ColumnRole, ColumnSpec, LabelSet, NeSeries, Schema, TelemetryDataset,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Short positive burst.
    Spike,
    /// Sustained positive offset.
    LevelShift,
    /// Sustained negative offset.
    Dropout,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 3] = [AnomalyKind::Spike, AnomalyKind::LevelShift, AnomalyKind::Dropout];

    fn sign(self) -> f64 {
        match self {
            AnomalyKind::Dropout => -1.0,
            _ => 1.0,
        }
    }

    /// Inclusive length range used by random plans.
    fn lengths(self) -> (usize, usize) {
        match self {
            AnomalyKind::Spike => (1, 3),
            AnomalyKind::LevelShift => (6, 18),
            AnomalyKind::Dropout => (3, 10),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    pub ne: usize,
    pub features: Vec<usize>,
    pub start: usize,
    pub len: usize,
    pub kind: AnomalyKind,
    /// Absolute offset added (or removed, for dropouts) on every cell.
    pub magnitude: f64,
}

/// Injections drawn at generation time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomAnomalies {
    pub count: usize,
    /// Magnitude in units of `noise_sigma`.
    pub magnitude_sigma: f64,
    /// Starts are drawn from this fraction range of the series.
    #[serde(default = "default_window")]
    pub placement: [f64; 2],
    #[serde(default = "default_max_features")]
    pub max_features: usize,
}

fn default_window() -> [f64; 2] {
    [0.0, 1.0]
}

fn default_max_features() -> usize {
    2
}

/// A run of fully missing rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outage {
    pub ne: usize,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_nes: usize,
    pub t: usize,
    pub k: usize,
    #[serde(default = "default_cadence")]
    pub cadence_minutes: u32,
    /// Epoch seconds of row 0 (default: Monday 2024-01-01 00:00 UTC).
    #[serde(default = "default_start")]
    pub start: i64,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    /// Per-(NE, KPI) amplitudes are drawn uniformly from this range.
    #[serde(default = "default_amplitude")]
    pub amplitude: [f64; 2],
    /// Number of NE profiles; each shifts the daily phase and sets the weekend response.
    #[serde(default = "default_profiles")]
    pub n_profiles: usize,
    /// Profile `p` scales weekend amplitude by `1 - damping * (1 - 2p/(P-1))`.
    #[serde(default = "default_damping")]
    pub weekend_damping: f64,
    /// Standard deviation of the per-NE level offset.
    #[serde(default = "default_offset")]
    pub static_offset_sigma: f64,
    #[serde(default = "default_groups")]
    pub n_groups: usize,
    #[serde(default)]
    pub anomalies: Vec<Injection>,
    #[serde(default)]
    pub random_anomalies: Option<RandomAnomalies>,
    #[serde(default)]
    pub outages: Vec<Outage>,
    #[serde(default)]
    pub seed: u64,
}

fn default_cadence() -> u32 {
    60
}

fn default_start() -> i64 {
    1_704_067_200
}

fn default_noise() -> f64 {
    0.1
}

fn default_amplitude() -> [f64; 2] {
    [0.5, 1.5]
}

fn default_profiles() -> usize {
    3
}

fn default_damping() -> f64 {
    0.6
}

fn default_offset() -> f64 {
    2.0
}

fn default_groups() -> usize {
    2
}

impl SynthSpec {
    pub fn new(n_nes: usize, t: usize, k: usize, seed: u64) -> Self {
        Self {
            n_nes,
            t,
            k,
            cadence_minutes: default_cadence(),
            start: default_start(),
            noise_sigma: default_noise(),
            amplitude: default_amplitude(),
            n_profiles: default_profiles(),
            weekend_damping: default_damping(),
            static_offset_sigma: default_offset(),
            n_groups: default_groups(),
            anomalies: Vec::new(),
            random_anomalies: None,
            outages: Vec::new(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_nes == 0 || self.t == 0 || self.k == 0 {
            return bad("n_nes, t and k must be positive".into());
        }
        if self.cadence_minutes == 0 || self.n_profiles == 0 || self.n_groups == 0 {
            return bad("cadence, profiles and groups must be positive".into());
        }
        if !(self.noise_sigma >= 0.0) || !(self.amplitude[0] >= 0.0 && self.amplitude[0] <= self.amplitude[1]) {
            return bad("noise and amplitude range must be nonnegative and ordered".into());
        }
        if !(0.0..=1.0).contains(&self.weekend_damping) {
            return bad("weekend_damping must be in [0, 1]".into());
        }
        for a in &self.anomalies {
            if a.ne >= self.n_nes || a.features.is_empty() || a.features.iter().any(|&f| f >= self.k) {
                return bad(format!("injection {a:?} names an unknown NE or KPI"));
            }
            if a.len == 0 || a.start + a.len > self.t {
                return bad(format!("injection {a:?} lies outside [0, {})", self.t));
            }
            if !(a.magnitude > 0.0) {
                return bad(format!("injection magnitude must be positive, got {}", a.magnitude));
            }
        }
        for o in &self.outages {
            if o.ne >= self.n_nes || o.len == 0 || o.start + o.len > self.t {
                return bad(format!("outage {o:?} lies outside the series"));
            }
        }
        if let Some(r) = &self.random_anomalies {
            let [a, b] = r.placement;
            if !(0.0..=1.0).contains(&a) || !(a < b && b <= 1.0) || !(r.magnitude_sigma > 0.0) || r.max_features == 0 {
                return bad("random_anomalies needs 0 <= placement[0] < placement[1] <= 1, positive magnitude".into());
            }
        }
        Ok(())
    }
}

/// Generator output: raw dataset, labels and the realised injection plan.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub dataset: TelemetryDataset,
    pub labels: LabelSet,
    pub injections: Vec<Injection>,
    /// Pre-injection values (noise included), row-major per NE.
    pub clean: Vec<Vec<f64>>,
}

impl SynthOutput {
    pub fn schema(&self) -> Schema {
        let ds = &self.dataset;
        let mut columns = Vec::new();
        for (names, role) in [
            (&ds.feature_names, ColumnRole::DynamicReal),
            (&ds.dyn_cat_names, ColumnRole::DynamicCat),
            (&ds.static_cat_names, ColumnRole::StaticCat),
            (&ds.static_real_names, ColumnRole::StaticReal),
        ] {
            columns.extend(names.iter().map(|n| ColumnSpec { name: n.clone(), role }));
        }
        Schema {
            ne_id_column: "ne_id".into(),
            timestamp_column: "timestamp".into(),
            cadence_minutes: Some(ds.cadence_minutes),
            columns,
        }
    }

    /// Writes `data.csv`, `labels.csv`, `schema.toml` and `injections.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_dataset_csv(&self.dataset, dir.join("data.csv"))?;
        write_labels_csv(&self.dataset, &self.labels, dir.join("labels.csv"))?;
        let schema = toml::to_string(&self.schema()).map_err(|e| Error::Toml(e.to_string()))?;
        std::fs::write(dir.join("schema.toml"), schema)?;
        std::fs::write(
            dir.join("injections.json"),
            serde_json::to_string_pretty(&self.injections)?,
        )?;
        Ok(())
    }
}

fn overlaps(a: &Injection, b: &Injection) -> bool {
    // touching intervals would merge into one labelled event
    a.ne == b.ne
        && a.features.iter().any(|f| b.features.contains(f))
        && a.start <= b.start + b.len
        && b.start <= a.start + a.len
}

fn draw_injections(spec: &SynthSpec, plan: &RandomAnomalies, rng: &mut ChaCha8Rng, taken: &[Injection]) -> Result<Vec<Injection>> {
    let mut out: Vec<Injection> = Vec::new();
    let lo = (plan.placement[0] * spec.t as f64) as usize;
    let hi = (plan.placement[1] * spec.t as f64) as usize;
    let max_f = plan.max_features.min(spec.k);
    let mut tries = 0;
    while out.len() < plan.count {
        tries += 1;
        if tries > 10_000 * plan.count.max(1) {
            return Err(Error::Config(format!(
                "could not place {} non-overlapping anomalies",
                plan.count
            )));
        }
        let kind = AnomalyKind::ALL[rng.random_range(0..3)];
        let (l0, l1) = kind.lengths();
        let len = rng.random_range(l0..=l1);
        if hi < lo + len {
            continue;
        }
        let start = rng.random_range(lo..=hi - len);
        let n_f = rng.random_range(1..=max_f);
        let mut features: Vec<usize> = rand::seq::index::sample(rng, spec.k, n_f).into_vec();
        features.sort_unstable();
        let cand = Injection {
            ne: rng.random_range(0..spec.n_nes),
            features,
            start,
            len,
            kind,
            magnitude: plan.magnitude_sigma * spec.noise_sigma,
        };
        let blocked = |o: &Outage| o.ne == cand.ne && o.start <= cand.start + cand.len && cand.start <= o.start + o.len;
        if taken.iter().chain(&out).any(|o| overlaps(o, &cand)) || spec.outages.iter().any(blocked) {
            continue;
        }
        out.push(cand);
    }
    Ok(out)
}

pub fn hour_of(ts: i64) -> u32 {
    (ts.rem_euclid(86_400) / 3600) as u32
}

/// Monday is 0.
pub fn dow_of(ts: i64) -> u32 {
    (ts.div_euclid(86_400) + 3).rem_euclid(7) as u32
}

/// Deterministic in `spec.seed`.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    for (i, a) in spec.anomalies.iter().enumerate() {
        if spec.anomalies[..i].iter().any(|b| overlaps(a, b)) {
            return Err(Error::Config(format!(
                "injection {a:?} overlaps or touches another on the same KPI"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let offset = Normal::new(0.0, spec.static_offset_sigma.abs()).map_err(|e| Error::Config(e.to_string()))?;
    let (k, t) = (spec.k, spec.t);
    let step = spec.cadence_minutes as i64 * 60;
    let width = spec.n_nes.to_string().len().max(2);
    let p_count = spec.n_profiles;

    let mut nes = Vec::with_capacity(spec.n_nes);
    let mut clean = Vec::with_capacity(spec.n_nes);
    for n in 0..spec.n_nes {
        let profile = rng.random_range(0..p_count);
        let group = n % spec.n_groups;
        let level = 10.0 + offset.sample(&mut rng);
        // profile 0 quiets down at weekends, the last profile peaks
        let centre = if p_count > 1 {
            1.0 - 2.0 * profile as f64 / (p_count - 1) as f64
        } else {
            1.0
        };
        let weekend_gain = 1.0 - spec.weekend_damping * centre;
        let profile_phase = std::f64::consts::TAU * profile as f64 / p_count as f64;
        let amps: Vec<f64> = (0..k)
            .map(|_| rng.random_range(spec.amplitude[0]..=spec.amplitude[1]))
            .collect();
        let phases: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..0.5)).collect();
        let mut x = Vec::with_capacity(t * k);
        let mut dyn_cat = Vec::with_capacity(t * 2);
        for r in 0..t {
            let ts = spec.start + r as i64 * step;
            let (hour, dow) = (hour_of(ts), dow_of(ts));
            let frac = (ts.rem_euclid(86_400)) as f64 / 86_400.0;
            let gain = if dow >= 5 { weekend_gain } else { 1.0 };
            for f in 0..k {
                let s = (std::f64::consts::TAU * frac + profile_phase + phases[f]).sin();
                x.push(level + gain * amps[f] * s + noise.sample(&mut rng));
            }
            dyn_cat.push(Some(hour.to_string()));
            dyn_cat.push(Some(dow.to_string()));
        }
        clean.push(x.clone());
        nes.push(NeSeries {
            ne_id: format!("ne{n:0width$}"),
            start: spec.start,
            x,
            mask: vec![0; t * k],
            dyn_cat,
            static_cat: vec![Some(format!("profile{profile}")), Some(format!("host{group}"))],
            static_real: vec![level],
            z: vec![],
            s: vec![],
        });
    }

    let mut injections = spec.anomalies.clone();
    if let Some(plan) = &spec.random_anomalies {
        let drawn = draw_injections(spec, plan, &mut rng, &injections)?;
        injections.extend(drawn);
    }
    injections.sort_by_key(|a| (a.ne, a.start, a.features.clone()));

    let mut labels = LabelSet::default();
    let feature_names: Vec<String> = (0..k).map(|f| format!("kpi{f}")).collect();
    for a in &injections {
        let ne = &mut nes[a.ne];
        for r in a.start..a.start + a.len {
            for &f in &a.features {
                ne.x[r * k + f] += a.kind.sign() * a.magnitude;
                labels
                    .positives
                    .insert((ne.ne_id.clone(), feature_names[f].clone(), spec.start + r as i64 * step));
            }
        }
    }
    for o in &spec.outages {
        let ne = &mut nes[o.ne];
        for r in o.start..o.start + o.len {
            for f in 0..k {
                ne.x[r * k + f] = 0.0;
                ne.mask[r * k + f] = 1;
            }
        }
    }
    Ok(SynthOutput {
        dataset: TelemetryDataset {
            cadence_minutes: spec.cadence_minutes,
            feature_names,
            dyn_cat_names: vec!["hour".into(), "dow".into()],
            static_cat_names: vec!["profile".into(), "host".into()],
            static_real_names: vec!["level".into()],
            nes,
            encoded: false,
        },
        labels,
        injections,
        clean,
    })
}

/// Reads a spec from TOML.
pub fn read_spec(path: &Path) -> Result<SynthSpec> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Toml(e.to_string()))
}

/// Number of labelled cells per (ne_id, feature).
pub fn label_counts(labels: &LabelSet) -> BTreeMap<(String, String), usize> {
    let mut out = BTreeMap::new();
    for (ne, f, _) in &labels.positives {
        *out.entry((ne.clone(), f.clone())).or_insert(0) += 1;
    }
    out
}

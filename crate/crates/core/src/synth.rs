//! Synthetic labeled walks for exercising the pipeline without recorded data.
//!
//! Strikes come from a jittered cadence process that alternates feet,
//! starting with the left. Each channel is a mix of a per-strike decaying
//! oscillation, cadence harmonics and a stride-rate sway whose sign follows
//! the stance foot, plus white noise. Everything is phase-locked to the
//! strikes, so the square-wave label is learnable from the sensors.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    AnnotatedWalk, FeatureInterval, Foot, Segment, SegmentKind, SensorSample, SensorSequence,
    StepEvent, WalkerGroup, CHANNEL_NAMES, DEFAULT_TIMESTAMP_COLUMN,
};

pub const DEFAULT_SAMPLE_RATE: f64 = 25.0;
const MIN_STEP_GAP: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaitProfile {
    pub walker_group: WalkerGroup,
    /// Mean strikes per second.
    pub cadence: f64,
    /// Standard deviation of the strike interval, relative to its mean.
    pub cadence_jitter: f64,
    /// Per-channel amplitude, channel order rotX rotY rotZ accX accY accZ.
    pub amplitude: [f64; 6],
    /// Number of cadence harmonics in the periodic component.
    pub harmonics: usize,
    pub noise_std: [f64; 6],
    /// Chance per second of walking time that the walker stops.
    pub pause_probability: f64,
    /// Pause length range in seconds.
    pub pause_seconds: (f64, f64),
    /// 0 = left and right strikes excite the channels identically.
    pub asymmetry: f64,
    /// Decay time constant of the strike transient, seconds.
    pub impulse_decay: f64,
    /// Oscillation frequency of the strike transient, Hz.
    pub impulse_freq: f64,
}

impl Default for GaitProfile {
    fn default() -> Self {
        GaitProfile::preset(WalkerGroup::Sighted)
    }
}

impl GaitProfile {
    pub fn preset(group: WalkerGroup) -> Self {
        let base = GaitProfile {
            walker_group: group,
            cadence: 1.9,
            cadence_jitter: 0.03,
            amplitude: [0.6, 0.5, 0.8, 0.15, 0.2, 0.35],
            harmonics: 3,
            noise_std: [0.04, 0.04, 0.05, 0.015, 0.02, 0.03],
            pause_probability: 0.0,
            pause_seconds: (1.0, 2.0),
            asymmetry: 0.4,
            impulse_decay: 0.08,
            impulse_freq: 6.0,
        };
        match group {
            WalkerGroup::Sighted => base,
            WalkerGroup::LongCane => GaitProfile {
                cadence: 1.6,
                cadence_jitter: 0.10,
                pause_probability: 0.02,
                noise_std: [0.08, 0.08, 0.08, 0.03, 0.04, 0.05],
                ..base
            },
            WalkerGroup::GuideDog => GaitProfile {
                cadence: 1.8,
                cadence_jitter: 0.06,
                pause_probability: 0.005,
                noise_std: [0.06, 0.06, 0.06, 0.02, 0.03, 0.04],
                ..base
            },
        }
    }

    /// A per-participant variant: cadence within ±8 % and channel amplitudes
    /// within ±20 % of this profile.
    pub fn personalize(&self, seed: u64) -> Self {
        let mut rng = crate::rng::stream(seed, &[0x9e75]);
        let mut p = self.clone();
        p.cadence *= rng.gen_range(0.92..1.08);
        for a in &mut p.amplitude {
            *a *= rng.gen_range(0.8..1.2);
        }
        p.asymmetry = (p.asymmetry * rng.gen_range(0.8..1.2)).min(1.0);
        p
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidProfile(m.to_string()));
        if !(self.cadence > 0.0) || !self.cadence.is_finite() {
            return bad("cadence must be positive");
        }
        if !(self.cadence_jitter >= 0.0) {
            return bad("cadence jitter must be non-negative");
        }
        if self.noise_std.iter().any(|s| !(*s >= 0.0)) {
            return bad("noise std must be non-negative");
        }
        if self.amplitude.iter().any(|a| !a.is_finite()) {
            return bad("amplitudes must be finite");
        }
        if !(0.0..=1.0).contains(&self.pause_probability) {
            return bad("pause probability must lie in [0, 1]");
        }
        let (lo, hi) = self.pause_seconds;
        if !(lo > 0.0 && hi >= lo) {
            return bad("pause range must be positive and ordered");
        }
        if !(self.impulse_decay > 0.0) {
            return bad("impulse decay must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkLayout {
    /// Insert a 4 s turn segment in the middle of the walk.
    pub turn: bool,
    /// Insert a 1 s feature interval in the first straight segment.
    pub feature: bool,
}

/// Strike times and feet. The first strike is half a nominal interval into
/// the walk; strikes stop before `duration`.
fn strike_process<R: Rng>(profile: &GaitProfile, duration: f64, rng: &mut R) -> Vec<StepEvent> {
    let nominal = 1.0 / profile.cadence;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut steps = Vec::new();
    let mut t = 0.5 * nominal;
    let mut foot = Foot::Left;
    while t < duration {
        steps.push(StepEvent { t, foot });
        foot = match foot {
            Foot::Left => Foot::Right,
            Foot::Right => Foot::Left,
        };
        let mut gap = nominal;
        if profile.cadence_jitter > 0.0 {
            gap *= 1.0 + profile.cadence_jitter * normal.sample(rng);
        }
        gap = gap.max(MIN_STEP_GAP);
        if profile.pause_probability > 0.0 && rng.gen::<f64>() < profile.pause_probability * gap {
            let (lo, hi) = profile.pause_seconds;
            gap += if hi > lo { rng.gen_range(lo..hi) } else { lo };
        }
        t += gap;
    }
    steps
}

/// Noise-free channel values at time `t`.
fn channels_at(profile: &GaitProfile, steps: &[StepEvent], t: f64) -> [f64; 6] {
    let k = steps.partition_point(|s| s.t <= t);
    if k == 0 {
        return [0.0; 6];
    }
    let nominal = 1.0 / profile.cadence;
    let cur = steps[k - 1];
    let tau = t - cur.t;
    let stride = steps
        .get(k)
        .map(|n| n.t - cur.t)
        .filter(|&d| d <= 1.6 * nominal)
        .unwrap_or(nominal);
    let phase = tau / stride;
    let imp = (-tau / profile.impulse_decay).exp() * (2.0 * PI * profile.impulse_freq * tau).sin();
    if phase >= 1.0 {
        // standing still during a pause; only the tail of the last transient
        let a = &profile.amplitude;
        return [0.0, 0.0, 0.0, 0.0, 0.5 * a[4] * imp, a[5] * imp];
    }
    let side = match cur.foot {
        Foot::Left => 1.0,
        Foot::Right => -1.0,
    };
    let sway = (PI * phase).sin();
    let mut periodic = 0.0;
    for m in 1..=profile.harmonics.max(1) {
        periodic += (2.0 * PI * m as f64 * phase).cos() / m as f64;
    }
    let asym = profile.asymmetry;
    let a = &profile.amplitude;
    [
        a[0] * (0.5 * periodic + (1.0 + asym * side) * imp),
        a[1] * (0.5 * (2.0 * PI * phase).sin() + (1.0 - asym * side) * imp),
        a[2] * side * sway,
        a[3] * (side * sway + 0.3 * periodic),
        a[4] * (periodic + 0.5 * imp),
        a[5] * (imp + 0.3 * periodic),
    ]
}

/// One synthetic walk: sensor samples from 0 to `duration` at `sample_rate`
/// and the matching annotation. By default the whole walk is one straight
/// segment.
pub fn generate_walk(
    profile: &GaitProfile,
    duration: f64,
    sample_rate: f64,
    seed: u64,
    participant_id: &str,
    path_id: &str,
    layout: &WalkLayout,
) -> Result<(SensorSequence, AnnotatedWalk)> {
    profile.validate()?;
    if !(duration > 0.0) || !(sample_rate > 0.0) {
        return Err(Error::InvalidProfile("duration and sample rate must be positive".into()));
    }
    let mut rng = crate::rng::stream(seed, &[0x5a1c]);
    let steps = strike_process(profile, duration, &mut rng);
    let n = (duration * sample_rate).floor() as usize + 1;
    if n < 2 {
        return Err(Error::InvalidProfile("walk shorter than two samples".into()));
    }
    let noise: Vec<Option<Normal<f64>>> = profile
        .noise_std
        .iter()
        .map(|&s| (s > 0.0).then(|| Normal::new(0.0, s).expect("valid std")))
        .collect();
    let samples: Vec<SensorSample> = (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate;
            let mut ch = channels_at(profile, &steps, t);
            for (v, dist) in ch.iter_mut().zip(&noise) {
                if let Some(d) = dist {
                    *v += d.sample(&mut rng);
                }
            }
            SensorSample::from_channels(t, ch)
        })
        .collect();
    let end = samples[n - 1].t;
    let seq = SensorSequence {
        participant_id: participant_id.to_string(),
        path_id: path_id.to_string(),
        samples,
        sample_period: 1.0 / sample_rate,
    };

    let straight = |id: &str, start: f64, stop: f64| Segment {
        id: id.to_string(),
        kind: SegmentKind::Straight,
        start,
        end: stop,
        direction: "north".into(),
        steps: steps.iter().filter(|s| s.t >= start && s.t < stop).copied().collect(),
        features: Vec::new(),
    };
    let mut segments = if layout.turn && end > 12.0 {
        let (a, b) = (0.5 * end - 2.0, 0.5 * end + 2.0);
        let mut turn = straight("turn1", a, b);
        turn.kind = SegmentKind::Turn;
        turn.direction = "north-east".into();
        let mut last = straight("s2", b, end);
        last.steps = steps.iter().filter(|s| s.t >= b && s.t <= end).copied().collect();
        vec![straight("s1", 0.0, a), turn, last]
    } else {
        let mut only = straight("s1", 0.0, end);
        only.steps = steps.iter().filter(|s| s.t <= end).copied().collect();
        vec![only]
    };
    if layout.feature {
        let seg = &mut segments[0];
        let span = seg.end - seg.start;
        if span > 4.0 {
            let start = seg.start + rng.gen_range(0.3..0.6) * span;
            seg.features.push(FeatureInterval {
                start,
                end: start + 1.0,
                description: "obstacle".into(),
            });
        }
    }
    let walk = AnnotatedWalk {
        participant_id: participant_id.to_string(),
        path_id: path_id.to_string(),
        walker_group: profile.walker_group,
        segments,
    };
    Ok((seq, walk))
}

/// Extra columns written to synthetic CSVs, to mimic a full device export.
const EXTRA_COLUMNS: [&str; 6] = [
    "gravityX",
    "gravityY",
    "gravityZ",
    "attitudeRoll",
    "attitudePitch",
    "attitudeYaw",
];

pub fn sensor_csv(seq: &SensorSequence) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::InvalidConfig(format!("csv encoding: {e}"));
    let mut header = vec![DEFAULT_TIMESTAMP_COLUMN];
    header.extend(CHANNEL_NAMES);
    header.extend(EXTRA_COLUMNS);
    w.write_record(&header).map_err(io)?;
    for s in &seq.samples {
        let mut row: Vec<String> = vec![s.t.to_string()];
        row.extend(s.channels().iter().map(f64::to_string));
        row.extend(["0", "0", "-1", "0", "0", "0"].map(String::from));
        w.write_record(&row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantSpec {
    pub id: String,
    /// Preset used when `profile` is absent.
    pub group: WalkerGroup,
    #[serde(default)]
    pub profile: Option<GaitProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub seed: u64,
    pub sample_rate: f64,
    pub duration_s: f64,
    pub paths_per_participant: usize,
    /// Vary each participant's preset (cadence, amplitudes) by a per-participant seed.
    pub personalize: bool,
    pub layout: WalkLayout,
    pub participants: Vec<ParticipantSpec>,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            seed: 0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            duration_s: 60.0,
            paths_per_participant: 6,
            personalize: true,
            layout: WalkLayout::default(),
            participants: Vec::new(),
        }
    }
}

impl CohortSpec {
    /// `n` participants named `1..=n`, all of `group`.
    pub fn uniform(group: WalkerGroup, n: usize, seed: u64) -> Self {
        CohortSpec {
            seed,
            participants: (1..=n)
                .map(|i| ParticipantSpec {
                    id: i.to_string(),
                    group,
                    profile: None,
                })
                .collect(),
            ..Default::default()
        }
    }

    fn profile_for(&self, p: &ParticipantSpec) -> GaitProfile {
        let base = p.profile.clone().unwrap_or_else(|| GaitProfile::preset(p.group));
        if self.personalize {
            base.personalize(crate::rng::derive(self.seed, &[crate::rng::key_of(&p.id)]))
        } else {
            base
        }
    }

    /// Every walk of the cohort, in participant then path order.
    pub fn walks(&self) -> Result<Vec<(SensorSequence, AnnotatedWalk)>> {
        if self.participants.len() < 2 {
            return Err(Error::TooFewParticipants {
                needed: 2,
                got: self.participants.len(),
            });
        }
        let mut jobs = Vec::new();
        for p in &self.participants {
            let profile = self.profile_for(p);
            for k in 1..=self.paths_per_participant {
                let path = format!("T{k}");
                let seed = crate::rng::derive(
                    self.seed,
                    &[crate::rng::key_of(&p.id), crate::rng::key_of(&path)],
                );
                jobs.push((profile.clone(), p.id.clone(), path, seed));
            }
        }
        crate::par::map(crate::par::Execution::Parallel, &jobs, |(profile, id, path, seed)| {
            generate_walk(profile, self.duration_s, self.sample_rate, *seed, id, path, &self.layout)
        })
        .into_iter()
        .collect()
    }
}

/// Write `<participant>_<path>.csv` and `.xml` for every walk of the cohort.
/// Returns the number of file pairs written.
pub fn generate_cohort(spec: &CohortSpec, out_dir: impl AsRef<Path>) -> Result<usize> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let walks = spec.walks()?;
    for (seq, walk) in &walks {
        let stem = format!("{}_{}", walk.participant_id, walk.path_id);
        let csv_path = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv_path, sensor_csv(seq)?).map_err(|e| Error::io(&csv_path, e))?;
        let xml_path = dir.join(format!("{stem}.xml"));
        std::fs::write(&xml_path, walk.to_xml()).map_err(|e| Error::io(&xml_path, e))?;
    }
    Ok(walks.len())
}

//! Sensor CSV and heel-strike annotation parsing, plus reduction of a walk to
//! the straight-segment spans that are used for training and scoring.

use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNEL_NAMES: [&str; 6] = [
    "rotationRateX",
    "rotationRateY",
    "rotationRateZ",
    "userAccelerationX",
    "userAccelerationY",
    "userAccelerationZ",
];

pub const DEFAULT_TIMESTAMP_COLUMN: &str = "timestamp";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub t: f64,
    /// rad/s, X Y Z
    pub rotation_rate: [f64; 3],
    /// g, X Y Z
    pub user_acceleration: [f64; 3],
}

impl SensorSample {
    /// Channel vector in model input order: rotX, rotY, rotZ, accX, accY, accZ.
    pub fn channels(&self) -> [f64; 6] {
        let [rx, ry, rz] = self.rotation_rate;
        let [ax, ay, az] = self.user_acceleration;
        [rx, ry, rz, ax, ay, az]
    }

    pub fn from_channels(t: f64, ch: [f64; 6]) -> Self {
        SensorSample {
            t,
            rotation_rate: [ch[0], ch[1], ch[2]],
            user_acceleration: [ch[3], ch[4], ch[5]],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorSequence {
    pub participant_id: String,
    pub path_id: String,
    pub samples: Vec<SensorSample>,
    /// Median inter-sample gap in seconds.
    pub sample_period: f64,
}

impl SensorSequence {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Foot {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub t: f64,
    pub foot: Foot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureInterval {
    pub start: f64,
    pub end: f64,
    pub description: String,
}

impl FeatureInterval {
    /// Half-open membership: a sample at `end` is kept.
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    Straight,
    Turn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub kind: SegmentKind,
    pub start: f64,
    pub end: f64,
    pub direction: String,
    pub steps: Vec<StepEvent>,
    pub features: Vec<FeatureInterval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkerGroup {
    Sighted,
    LongCane,
    GuideDog,
}

impl WalkerGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            WalkerGroup::Sighted => "sighted",
            WalkerGroup::LongCane => "long_cane",
            WalkerGroup::GuideDog => "guide_dog",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sighted" => Some(WalkerGroup::Sighted),
            "long_cane" => Some(WalkerGroup::LongCane),
            "guide_dog" => Some(WalkerGroup::GuideDog),
            _ => None,
        }
    }
}

impl std::fmt::Display for WalkerGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedWalk {
    pub participant_id: String,
    pub path_id: String,
    pub walker_group: WalkerGroup,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub timestamp_column: String,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            timestamp_column: DEFAULT_TIMESTAMP_COLUMN.to_string(),
        }
    }
}

/// Parse a header-bearing sensor CSV, keeping the timestamp and the six
/// rotation-rate / user-acceleration channels. All other columns are ignored.
pub fn parse_sensor_csv<R: Read>(
    input: R,
    participant_id: &str,
    path_id: &str,
    opts: &CsvOptions,
) -> Result<SensorSequence> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| Error::MalformedRow {
            row: 0,
            detail: e.to_string(),
        })?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let t_col = find(&opts.timestamp_column)?;
    let mut ch_cols = [0usize; 6];
    for (slot, name) in ch_cols.iter_mut().zip(CHANNEL_NAMES) {
        *slot = find(name)?;
    }

    let mut samples: Vec<SensorSample> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // 1-based data row numbering, header is row 0
        let row = i + 1;
        let rec = rec.map_err(|e| Error::MalformedRow {
            row,
            detail: e.to_string(),
        })?;
        let cell = |col: usize| -> Result<f64> {
            let raw = rec.get(col).ok_or_else(|| Error::MalformedRow {
                row,
                detail: format!("missing field {col}"),
            })?;
            let v: f64 = raw.parse().map_err(|_| Error::MalformedRow {
                row,
                detail: format!("non-numeric cell `{raw}` in column `{}`", &headers[col]),
            })?;
            if !v.is_finite() {
                return Err(Error::MalformedRow {
                    row,
                    detail: format!("non-finite value in column `{}`", &headers[col]),
                });
            }
            Ok(v)
        };
        let t = cell(t_col)?;
        if t < 0.0 {
            return Err(Error::MalformedRow {
                row,
                detail: format!("negative timestamp {t}"),
            });
        }
        if let Some(prev) = samples.last() {
            if t <= prev.t {
                return Err(Error::NonMonotoneTime { row, t });
            }
        }
        let mut ch = [0.0; 6];
        for (v, &col) in ch.iter_mut().zip(&ch_cols) {
            *v = cell(col)?;
        }
        samples.push(SensorSample::from_channels(t, ch));
    }
    if samples.len() < 2 {
        return Err(Error::MalformedRow {
            row: samples.len(),
            detail: "a sensor sequence needs at least two rows".into(),
        });
    }
    let sample_period = median_gap(&samples);
    Ok(SensorSequence {
        participant_id: participant_id.to_string(),
        path_id: path_id.to_string(),
        samples,
        sample_period,
    })
}

fn median_gap(samples: &[SensorSample]) -> f64 {
    let mut gaps: Vec<f64> = samples.windows(2).map(|w| w[1].t - w[0].t).collect();
    gaps.sort_by(f64::total_cmp);
    let n = gaps.len();
    if n % 2 == 1 {
        gaps[n / 2]
    } else {
        0.5 * (gaps[n / 2 - 1] + gaps[n / 2])
    }
}

fn attr<'a>(node: roxmltree::Node<'a, '_>, name: &str) -> Result<&'a str> {
    node.attribute(name).ok_or_else(|| {
        Error::SchemaViolation(format!(
            "<{}> is missing attribute `{name}`",
            node.tag_name().name()
        ))
    })
}

fn time_attr(node: roxmltree::Node<'_, '_>, name: &str) -> Result<f64> {
    let raw = attr(node, name)?;
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::SchemaViolation(format!(
            "<{}> attribute `{name}` is not a time: `{raw}`",
            node.tag_name().name()
        ))),
    }
}

/// Parse the canonical annotation XML (see the crate README for the schema).
pub fn parse_ground_truth_xml(text: &str) -> Result<AnnotatedWalk> {
    let doc = roxmltree::Document::parse(text)
        .map_err(|e| Error::SchemaViolation(format!("not well-formed XML: {e}")))?;
    let root = doc.root_element();
    if root.tag_name().name() != "walk" {
        return Err(Error::SchemaViolation(format!(
            "root element is <{}>, expected <walk>",
            root.tag_name().name()
        )));
    }
    let participant_id = attr(root, "participant")?.to_string();
    let path_id = attr(root, "path")?.to_string();
    let group_raw = attr(root, "group")?;
    let walker_group = WalkerGroup::parse(group_raw)
        .ok_or_else(|| Error::SchemaViolation(format!("unknown walker group `{group_raw}`")))?;

    let mut segments = Vec::new();
    for seg in root.children().filter(|n| n.is_element()) {
        if seg.tag_name().name() != "segment" {
            return Err(Error::SchemaViolation(format!(
                "unexpected <{}> under <walk>",
                seg.tag_name().name()
            )));
        }
        let id = attr(seg, "id")?.to_string();
        let kind = match attr(seg, "kind")? {
            "straight" => SegmentKind::Straight,
            "turn" => SegmentKind::Turn,
            other => {
                return Err(Error::SchemaViolation(format!(
                    "segment `{id}` has unknown kind `{other}`"
                )))
            }
        };
        let start = time_attr(seg, "start")?;
        let end = time_attr(seg, "end")?;
        if start >= end {
            return Err(Error::OrderViolation(format!(
                "segment `{id}` starts at {start} but ends at {end}"
            )));
        }
        let direction = seg.attribute("direction").unwrap_or_default().to_string();
        let mut steps = Vec::new();
        let mut features = Vec::new();
        for child in seg.children().filter(|n| n.is_element()) {
            match child.tag_name().name() {
                "step" => {
                    let t = time_attr(child, "t")?;
                    let foot = match attr(child, "foot")? {
                        "left" => Foot::Left,
                        "right" => Foot::Right,
                        other => {
                            return Err(Error::SchemaViolation(format!(
                                "step at {t} has unknown foot `{other}`"
                            )))
                        }
                    };
                    steps.push(StepEvent { t, foot });
                }
                "feature" => {
                    let fs = time_attr(child, "start")?;
                    let fe = time_attr(child, "end")?;
                    if fs >= fe {
                        return Err(Error::OrderViolation(format!(
                            "feature in segment `{id}` starts at {fs} but ends at {fe}"
                        )));
                    }
                    features.push(FeatureInterval {
                        start: fs,
                        end: fe,
                        description: child.attribute("desc").unwrap_or_default().to_string(),
                    });
                }
                other => {
                    return Err(Error::SchemaViolation(format!(
                        "unexpected <{other}> inside segment `{id}`"
                    )))
                }
            }
        }
        if let Some(w) = steps.windows(2).find(|w| w[1].t < w[0].t) {
            return Err(Error::OrderViolation(format!(
                "steps in segment `{id}` out of order: {} after {}",
                w[1].t, w[0].t
            )));
        }
        if let Some(s) = steps.iter().find(|s| s.t < start || s.t > end) {
            return Err(Error::OrderViolation(format!(
                "step at {} lies outside segment `{id}` [{start}, {end}]",
                s.t
            )));
        }
        segments.push(Segment {
            id,
            kind,
            start,
            end,
            direction,
            steps,
            features,
        });
    }
    if segments.is_empty() {
        return Err(Error::EmptyWalk);
    }
    if let Some(w) = segments.windows(2).find(|w| w[1].start < w[0].end) {
        return Err(Error::OrderViolation(format!(
            "segment `{}` starts before segment `{}` ends",
            w[1].id, w[0].id
        )));
    }
    Ok(AnnotatedWalk {
        participant_id,
        path_id,
        walker_group,
        segments,
    })
}

fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\n' => out.push_str("&#10;"),
            '\t' => out.push_str("&#9;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
    out
}

impl AnnotatedWalk {
    /// Render in the canonical annotation schema. Times use the shortest
    /// representation that parses back to the same `f64`.
    pub fn to_xml(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            out,
            r#"<walk participant="{}" path="{}" group="{}">"#,
            escape_attr(&self.participant_id),
            escape_attr(&self.path_id),
            self.walker_group
        );
        for seg in &self.segments {
            let kind = match seg.kind {
                SegmentKind::Straight => "straight",
                SegmentKind::Turn => "turn",
            };
            let _ = writeln!(
                out,
                r#"  <segment id="{}" kind="{kind}" start="{:?}" end="{:?}" direction="{}">"#,
                escape_attr(&seg.id),
                seg.start,
                seg.end,
                escape_attr(&seg.direction)
            );
            for s in &seg.steps {
                let foot = match s.foot {
                    Foot::Left => "left",
                    Foot::Right => "right",
                };
                let _ = writeln!(out, r#"    <step t="{:?}" foot="{foot}"/>"#, s.t);
            }
            for f in &seg.features {
                let _ = writeln!(
                    out,
                    r#"    <feature start="{:?}" end="{:?}" desc="{}"/>"#,
                    f.start,
                    f.end,
                    escape_attr(&f.description)
                );
            }
            let _ = writeln!(out, "  </segment>");
        }
        let _ = writeln!(out, "</walk>");
        out
    }

    pub fn total_steps(&self) -> usize {
        self.segments.iter().map(|s| s.steps.len()).sum()
    }
}

/// A contiguous run of sensor samples from one straight segment with no
/// feature-marked samples in it, plus the heel strikes that govern its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct UsableSpan {
    pub participant_id: String,
    pub path_id: String,
    pub segment_id: String,
    /// Kept time interval `[lo, hi]` the samples were drawn from.
    pub lo: f64,
    pub hi: f64,
    /// Strikes inside `[lo, hi]`, preceded by the most recent earlier strike of
    /// the segment when one exists (it fixes the label state at the first sample).
    pub steps: Vec<StepEvent>,
    pub samples: Vec<SensorSample>,
    pub sample_period: f64,
}

impl UsableSpan {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// Strikes that can show up as a label transition inside this span, i.e.
    /// those strictly after the first sample.
    pub fn scored_steps(&self) -> Vec<f64> {
        let t0 = self.samples[0].t;
        self.steps.iter().map(|s| s.t).filter(|&t| t > t0).collect()
    }

    pub fn duration(&self) -> f64 {
        self.samples[self.samples.len() - 1].t - self.samples[0].t
    }
}

/// Reduce a walk to the sensor runs that lie in straight segments, after the
/// segment's first heel strike, and outside every feature interval.
pub fn extract_usable_spans(walk: &AnnotatedWalk, seq: &SensorSequence) -> Result<Vec<UsableSpan>> {
    let label = format!("{}/{}", walk.participant_id, walk.path_id);
    if walk.participant_id != seq.participant_id || walk.path_id != seq.path_id {
        log::warn!(
            "annotation {label} paired with sensor data {}/{}",
            seq.participant_id,
            seq.path_id
        );
    }
    let all_features: Vec<&FeatureInterval> =
        walk.segments.iter().flat_map(|s| &s.features).collect();
    let in_feature = |t: f64| all_features.iter().any(|f| f.contains(t));

    let mut spans = Vec::new();
    for seg in walk.segments.iter().filter(|s| s.kind == SegmentKind::Straight) {
        let Some(first) = seg.steps.first() else {
            log::info!("{label}: straight segment `{}` has no steps, dropped", seg.id);
            continue;
        };
        let window_lo = first.t;
        let window_hi = seg.end;

        // kept sub-intervals of [window_lo, window_hi] after removing features
        let mut cuts: Vec<(f64, f64)> = all_features
            .iter()
            .filter(|f| f.end > window_lo && f.start <= window_hi)
            .map(|f| (f.start, f.end))
            .collect();
        cuts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut intervals = Vec::new();
        let mut cursor = window_lo;
        for (fs, fe) in cuts {
            if fs > cursor {
                intervals.push((cursor, fs));
            }
            cursor = cursor.max(fe);
        }
        if cursor <= window_hi {
            intervals.push((cursor, window_hi));
        }

        for (lo, hi) in intervals {
            let samples: Vec<SensorSample> = seq
                .samples
                .iter()
                .filter(|s| s.t >= lo && s.t <= hi && !in_feature(s.t))
                .copied()
                .collect();
            if samples.len() < 2 {
                log::info!(
                    "{label}: span [{lo}, {hi}] of segment `{}` has {} samples, dropped",
                    seg.id,
                    samples.len()
                );
                continue;
            }
            let t0 = samples[0].t;
            let anchor = seg.steps.iter().rev().find(|s| s.t <= t0).copied();
            let mut steps: Vec<StepEvent> = anchor.into_iter().collect();
            steps.extend(seg.steps.iter().filter(|s| s.t > t0 && s.t <= hi).copied());
            spans.push(UsableSpan {
                participant_id: walk.participant_id.clone(),
                path_id: walk.path_id.clone(),
                segment_id: seg.id.clone(),
                lo,
                hi,
                steps,
                samples,
                sample_period: seq.sample_period,
            });
        }
    }
    if spans.is_empty() {
        return Err(Error::NoUsableData(label));
    }
    Ok(spans)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_with_extra_columns(rows: &[(f64, [f64; 6])]) -> String {
        // 39 columns: timestamp, the six channels, and 32 unused ones
        let mut header = vec!["timestamp".to_string()];
        header.extend(CHANNEL_NAMES.iter().map(|s| s.to_string()));
        header.extend((0..32).map(|i| format!("unused{i}")));
        let mut out = header.join(",") + "\n";
        for (t, ch) in rows {
            let mut cells = vec![t.to_string()];
            cells.extend(ch.iter().map(|v| v.to_string()));
            cells.extend((0..32).map(|i| format!("{}", i as f64 * 0.5)));
            out += &(cells.join(",") + "\n");
        }
        out
    }

    #[test]
    fn keeps_six_channels_of_39() {
        let text = csv_with_extra_columns(&[
            (0.0, [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]),
            (0.04, [1.0; 6]),
            (0.08, [-1.0; 6]),
        ]);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 39);
        let seq = parse_sensor_csv(text.as_bytes(), "p1", "T1", &CsvOptions::default()).unwrap();
        assert_eq!(seq.len(), 3);
        assert_eq!(seq.samples[0].channels(), [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(seq.samples[2].user_acceleration, [-1.0; 3]);
    }

    #[test]
    fn all_zero_rows_are_fine() {
        let text = csv_with_extra_columns(&[(0.0, [0.0; 6]), (0.1, [0.0; 6])]);
        let seq = parse_sensor_csv(text.as_bytes(), "p", "x", &CsvOptions::default()).unwrap();
        assert!(seq.samples.iter().all(|s| s.channels() == [0.0; 6]));
    }

    #[test]
    fn sample_period_is_median_gap() {
        let text = csv_with_extra_columns(&[
            (0.00, [0.0; 6]),
            (0.04, [0.0; 6]),
            (0.08, [0.0; 6]),
            (0.16, [0.0; 6]),
        ]);
        let seq = parse_sensor_csv(text.as_bytes(), "p", "x", &CsvOptions::default()).unwrap();
        assert!((seq.sample_period - 0.04).abs() < 1e-12);
    }

    #[test]
    fn csv_errors() {
        let missing = "timestamp,rotationRateX,rotationRateY,userAccelerationX,userAccelerationY,userAccelerationZ\n0,0,0,0,0,0\n";
        match parse_sensor_csv(missing.as_bytes(), "p", "x", &CsvOptions::default()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "rotationRateZ"),
            other => panic!("{other:?}"),
        }
        let backwards = csv_with_extra_columns(&[(1.0, [0.0; 6]), (0.5, [0.0; 6])]);
        assert!(matches!(
            parse_sensor_csv(backwards.as_bytes(), "p", "x", &CsvOptions::default()),
            Err(Error::NonMonotoneTime { row: 2, .. })
        ));
        let bad = "timestamp,rotationRateX,rotationRateY,rotationRateZ,userAccelerationX,userAccelerationY,userAccelerationZ\n0,0,0,0,0,0,0\n0.1,0,abc,0,0,0,0\n";
        assert!(matches!(
            parse_sensor_csv(bad.as_bytes(), "p", "x", &CsvOptions::default()),
            Err(Error::MalformedRow { row: 2, .. })
        ));
    }

    #[test]
    fn custom_timestamp_column() {
        let text = "time,rotationRateX,rotationRateY,rotationRateZ,userAccelerationX,userAccelerationY,userAccelerationZ\n0,1,2,3,4,5,6\n1,1,2,3,4,5,6\n";
        let opts = CsvOptions {
            timestamp_column: "time".into(),
        };
        assert_eq!(parse_sensor_csv(text.as_bytes(), "p", "x", &opts).unwrap().len(), 2);
        assert!(matches!(
            parse_sensor_csv(text.as_bytes(), "p", "x", &CsvOptions::default()),
            Err(Error::MissingColumn(_))
        ));
    }

    const FIG1_XML: &str = r#"<walk participant="1" path="T1" group="long_cane">
  <segment id="s1" kind="straight" start="2.4" end="13.1752" direction="east">
    <step t="5.4761" foot="left"/>
    <step t="6.0" foot="right"/>
    <feature start="9.041862" end="10.041862" desc="walked into the wall"/>
  </segment>
  <segment id="s2" kind="turn" start="13.1752" end="20.7419" direction="east-south"/>
</walk>"#;

    #[test]
    fn parses_annotation() {
        let walk = parse_ground_truth_xml(FIG1_XML).unwrap();
        assert_eq!(walk.walker_group, WalkerGroup::LongCane);
        assert_eq!(walk.segments.len(), 2);
        let first = walk.segments[0].steps[0];
        assert_eq!(first.foot, Foot::Left);
        assert_eq!(first.t, 5.4761);
        let f = &walk.segments[0].features[0];
        assert_eq!((f.start, f.end), (9.041862, 10.041862));
        assert_eq!(f.description, "walked into the wall");
        assert_eq!(walk.segments[1].kind, SegmentKind::Turn);
    }

    #[test]
    fn annotation_errors() {
        assert!(matches!(
            parse_ground_truth_xml(r#"<walk participant="1" path="a" group="sighted"></walk>"#),
            Err(Error::EmptyWalk)
        ));
        assert!(matches!(
            parse_ground_truth_xml(r#"<walk path="a" group="sighted"/>"#),
            Err(Error::SchemaViolation(_))
        ));
        let unordered = r#"<walk participant="1" path="a" group="sighted">
            <segment id="s" kind="straight" start="0" end="10"><step t="3" foot="left"/><step t="2" foot="right"/></segment></walk>"#;
        assert!(matches!(parse_ground_truth_xml(unordered), Err(Error::OrderViolation(_))));
        let overlap = r#"<walk participant="1" path="a" group="sighted">
            <segment id="a" kind="straight" start="0" end="10"/><segment id="b" kind="turn" start="9" end="12"/></walk>"#;
        assert!(matches!(parse_ground_truth_xml(overlap), Err(Error::OrderViolation(_))));
        let no_foot = r#"<walk participant="1" path="a" group="sighted">
            <segment id="s" kind="straight" start="0" end="10"><step t="3"/></segment></walk>"#;
        assert!(matches!(parse_ground_truth_xml(no_foot), Err(Error::SchemaViolation(_))));
    }

    #[test]
    fn empty_straight_segment_parses_then_drops() {
        let xml = r#"<walk participant="1" path="a" group="sighted">
            <segment id="s" kind="straight" start="0" end="10" direction="n"/></walk>"#;
        let walk = parse_ground_truth_xml(xml).unwrap();
        assert!(walk.segments[0].steps.is_empty());
        let seq = uniform_seq(0.0, 10.0, 0.04);
        assert!(matches!(extract_usable_spans(&walk, &seq), Err(Error::NoUsableData(_))));
    }

    fn uniform_seq(from: f64, to: f64, dt: f64) -> SensorSequence {
        let n = ((to - from) / dt).round() as usize + 1;
        SensorSequence {
            participant_id: "1".into(),
            path_id: "a".into(),
            samples: (0..n)
                .map(|i| SensorSample::from_channels(from + i as f64 * dt, [0.0; 6]))
                .collect(),
            sample_period: dt,
        }
    }

    fn straight(start: f64, end: f64, steps: &[f64], features: &[(f64, f64)]) -> Segment {
        Segment {
            id: "s1".into(),
            kind: SegmentKind::Straight,
            start,
            end,
            direction: String::new(),
            steps: steps
                .iter()
                .enumerate()
                .map(|(i, &t)| StepEvent {
                    t,
                    foot: if i % 2 == 0 { Foot::Left } else { Foot::Right },
                })
                .collect(),
            features: features
                .iter()
                .map(|&(start, end)| FeatureInterval {
                    start,
                    end,
                    description: String::new(),
                })
                .collect(),
        }
    }

    fn walk_of(segments: Vec<Segment>) -> AnnotatedWalk {
        AnnotatedWalk {
            participant_id: "1".into(),
            path_id: "a".into(),
            walker_group: WalkerGroup::Sighted,
            segments,
        }
    }

    #[test]
    fn span_starts_at_first_step() {
        let walk = walk_of(vec![straight(2.4, 34.0, &[5.4761, 6.0, 6.5], &[])]);
        let seq = uniform_seq(0.0, 40.0, 0.04);
        let spans = extract_usable_spans(&walk, &seq).unwrap();
        assert_eq!(spans.len(), 1);
        let s = &spans[0];
        assert!(s.samples[0].t >= 5.4761);
        assert!(s.samples[0].t - 0.04 < 5.4761);
        assert!(s.samples.last().unwrap().t <= 34.0);
        assert_eq!(s.steps[0].t, 5.4761);
        assert_eq!(s.scored_steps(), vec![6.0, 6.5]);
    }

    #[test]
    fn feature_splits_segment() {
        let walk = walk_of(vec![straight(
            2.0,
            34.0,
            &[5.4761, 7.0, 8.0, 9.5, 11.0, 12.0],
            &[(9.04, 10.04)],
        )]);
        let seq = uniform_seq(0.0, 40.0, 0.01);
        let spans = extract_usable_spans(&walk, &seq).unwrap();
        assert_eq!(spans.len(), 2);
        assert_eq!((spans[0].lo, spans[0].hi), (5.4761, 9.04));
        assert_eq!((spans[1].lo, spans[1].hi), (10.04, 34.0));
        assert!(spans[0].samples.iter().all(|s| s.t < 9.04));
        assert!(spans[1].samples.iter().all(|s| s.t >= 10.04 && s.t <= 34.0));
        // second span is anchored by the last strike before it
        assert_eq!(spans[1].steps[0].t, 9.5);
        assert_eq!(spans[1].scored_steps(), vec![11.0, 12.0]);
    }

    #[test]
    fn turns_only_is_unusable() {
        let mut seg = straight(0.0, 10.0, &[1.0, 2.0], &[]);
        seg.kind = SegmentKind::Turn;
        let walk = walk_of(vec![seg]);
        assert!(matches!(
            extract_usable_spans(&walk, &uniform_seq(0.0, 10.0, 0.04)),
            Err(Error::NoUsableData(_))
        ));
    }

    #[test]
    fn xml_round_trip_with_awkward_text() {
        let mut walk = parse_ground_truth_xml(FIG1_XML).unwrap();
        walk.segments[0].features[0].description = "door <closed> & \"locked\"".into();
        walk.segments[0].steps[1].t = 0.1 + 0.2 + 5.7;
        let again = parse_ground_truth_xml(&walk.to_xml()).unwrap();
        assert_eq!(again, walk);
    }
}

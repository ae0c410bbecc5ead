//! Pointwise and event-affiliation metrics, aggregation across features,
//! the prevalence-matched random baseline and Jaccard overlap.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabelSet, SplitTag, Splits, TelemetryDataset};
use crate::error::{Error, Result};
use crate::scoring::DecisionFrame;

/// Inclusive run `[start, end]` of positive indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventInterval {
    pub start: usize,
    pub end: usize,
}

impl EventInterval {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start <= end, "event start {start} after end {end}");
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Maximal runs of `true`.
pub fn merge_events(stream: &[bool]) -> Vec<EventInterval> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for (t, &v) in stream.iter().enumerate() {
        match (v, open) {
            (true, None) => open = Some(t),
            (false, Some(s)) => {
                out.push(EventInterval::new(s, t - 1));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        out.push(EventInterval::new(s, stream.len() - 1));
    }
    out
}

/// Inverse of [`merge_events`] for a stream of length `len`.
pub fn expand(events: &[EventInterval], len: usize) -> Vec<bool> {
    let mut out = vec![false; len];
    for e in events {
        out[e.start..=e.end].iter_mut().for_each(|v| *v = true);
    }
    out
}

pub fn iou(g: EventInterval, p: EventInterval) -> f64 {
    let lo = g.start.max(p.start);
    let hi = g.end.min(p.end);
    let inter = if lo <= hi { hi - lo + 1 } else { 0 };
    inter as f64 / (g.len() + p.len() - inter) as f64
}

/// `0/0` is taken as 0.
fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(p: f64, r: f64) -> Self {
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        Self { p, r, f1 }
    }

    /// Unweighted mean of each component separately.
    pub fn macro_mean(items: &[Prf]) -> Prf {
        if items.is_empty() {
            return Prf::default();
        }
        let n = items.len() as f64;
        Prf {
            p: items.iter().map(|x| x.p).sum::<f64>() / n,
            r: items.iter().map(|x| x.r).sum::<f64>() / n,
            f1: items.iter().map(|x| x.f1).sum::<f64>() / n,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl PointCounts {
    pub fn prf(&self) -> Prf {
        Prf::new(ratio(self.tp, self.tp + self.fp), ratio(self.tp, self.tp + self.fn_))
    }

    fn add(&mut self, o: &PointCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

/// TP and FP count predicted events, FN counts ground-truth events.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub n_gt: usize,
}

impl EventCounts {
    pub fn prf(&self) -> Prf {
        Prf::new(ratio(self.tp, self.tp + self.fp), ratio(self.n_gt - self.fn_, self.n_gt))
    }

    fn add(&mut self, o: &EventCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.n_gt += o.n_gt;
    }
}

/// Timestamp-level confusion counts.
pub fn pointwise_counts(gt: &[bool], pred: &[bool]) -> Result<PointCounts> {
    if gt.len() != pred.len() {
        return Err(Error::Contract(format!(
            "stream lengths differ: gt {} vs pred {}",
            gt.len(),
            pred.len()
        )));
    }
    let mut c = PointCounts::default();
    for (&g, &p) in gt.iter().zip(pred) {
        match (g, p) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn pointwise_prf(gt: &[bool], pred: &[bool]) -> Result<Prf> {
    Ok(pointwise_counts(gt, pred)?.prf())
}

/// Each prediction is affiliated to its highest-IoU ground-truth event (the
/// earliest on ties) and is a TP when that IoU is positive; ground-truth
/// events overlapped by no prediction are FN.
pub fn affiliation_counts(gt: &[EventInterval], pred: &[EventInterval]) -> EventCounts {
    let mut covered = vec![false; gt.len()];
    let mut c = EventCounts {
        n_gt: gt.len(),
        ..EventCounts::default()
    };
    for &p in pred {
        let mut best: Option<(usize, f64)> = None;
        for (i, &g) in gt.iter().enumerate() {
            let v = iou(g, p);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        match best {
            Some((_, v)) if v > 0.0 => c.tp += 1,
            _ => c.fp += 1,
        }
        for (i, &g) in gt.iter().enumerate() {
            if g.start <= p.end && p.start <= g.end {
                covered[i] = true;
            }
        }
    }
    c.fn_ = covered.iter().filter(|&&v| !v).count();
    c
}

pub fn affiliation_prf(gt: &[EventInterval], pred: &[EventInterval]) -> Prf {
    affiliation_counts(gt, pred).prf()
}

/// Ground truth and predictions of one NE over a contiguous run of timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub ne_id: String,
    pub timestamps: Vec<i64>,
    /// `[feature][t]`
    pub gt: Vec<Vec<bool>>,
    /// `[feature][t]`
    pub pred: Vec<Vec<bool>>,
}

/// Evaluation input: per-NE segments sharing one feature list. Events never
/// span two segments.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalStreams {
    pub features: Vec<String>,
    pub segments: Vec<Segment>,
}

impl EvalStreams {
    pub fn validate(&self) -> Result<()> {
        let k = self.features.len();
        for s in &self.segments {
            let t = s.timestamps.len();
            if s.gt.len() != k || s.pred.len() != k {
                return Err(Error::Contract(format!("segment {} does not cover {k} features", s.ne_id)));
            }
            if s.gt.iter().chain(&s.pred).any(|v| v.len() != t) {
                return Err(Error::Contract(format!("segment {} has ragged streams", s.ne_id)));
            }
        }
        Ok(())
    }

    /// Share of positive ground-truth timestamps of feature `f`.
    pub fn prevalence(&self, f: usize) -> f64 {
        let pos: usize = self.segments.iter().map(|s| s.gt[f].iter().filter(|&&v| v).count()).sum();
        let all: usize = self.segments.iter().map(|s| s.timestamps.len()).sum();
        ratio(pos, all)
    }

    /// Same ground truth, predictions replaced by `pred(f, segment)`.
    pub fn with_predictions(&self, mut pred: impl FnMut(usize, &Segment) -> Vec<bool>) -> Self {
        let mut out = self.clone();
        for s in &mut out.segments {
            s.pred = (0..self.features.len()).map(|f| pred(f, s)).collect();
        }
        out
    }
}

fn or_streams(streams: &[Vec<bool>], len: usize) -> Vec<bool> {
    (0..len).map(|t| streams.iter().any(|s| s[t])).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMetrics {
    pub feature: String,
    pub pointwise: Prf,
    pub affiliation: Prf,
    pub point_counts: PointCounts,
    pub event_counts: EventCounts,
    pub gt_events: usize,
    pub gt_timestamps: usize,
    pub pred_events: usize,
    pub pred_timestamps: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    #[serde(rename = "macro")]
    pub macro_: Prf,
    pub micro: Prf,
    pub union: Prf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub features: Vec<FeatureMetrics>,
    pub pointwise: Aggregates,
    pub affiliation: Aggregates,
    pub micro_point_counts: PointCounts,
    pub micro_event_counts: EventCounts,
    pub union_point_counts: PointCounts,
    pub union_event_counts: EventCounts,
}

fn stream_metrics(pairs: &[(&[bool], &[bool])]) -> Result<(PointCounts, EventCounts, usize, usize)> {
    let mut pc = PointCounts::default();
    let mut ec = EventCounts::default();
    let mut n_pred = 0;
    let mut n_pred_ts = 0;
    for &(g, p) in pairs {
        pc.add(&pointwise_counts(g, p)?);
        let pe = merge_events(p);
        n_pred += pe.len();
        n_pred_ts += p.iter().filter(|&&v| v).count();
        ec.add(&affiliation_counts(&merge_events(g), &pe));
    }
    Ok((pc, ec, n_pred, n_pred_ts))
}

/// Per-feature, Macro, Micro and Union metrics.
pub fn evaluate(streams: &EvalStreams, label: &str) -> Result<MetricReport> {
    streams.validate()?;
    let mut report = MetricReport {
        label: label.to_string(),
        ..MetricReport::default()
    };
    for (f, name) in streams.features.iter().enumerate() {
        let pairs: Vec<(&[bool], &[bool])> = streams
            .segments
            .iter()
            .map(|s| (s.gt[f].as_slice(), s.pred[f].as_slice()))
            .collect();
        let (pc, ec, pred_events, pred_timestamps) = stream_metrics(&pairs)?;
        report.micro_point_counts.add(&pc);
        report.micro_event_counts.add(&ec);
        report.features.push(FeatureMetrics {
            feature: name.clone(),
            pointwise: pc.prf(),
            affiliation: ec.prf(),
            point_counts: pc,
            event_counts: ec,
            gt_events: ec.n_gt,
            gt_timestamps: pc.tp + pc.fn_,
            pred_events,
            pred_timestamps,
        });
    }
    let ored: Vec<(Vec<bool>, Vec<bool>)> = streams
        .segments
        .iter()
        .map(|s| {
            let t = s.timestamps.len();
            (or_streams(&s.gt, t), or_streams(&s.pred, t))
        })
        .collect();
    let pairs: Vec<(&[bool], &[bool])> = ored.iter().map(|(g, p)| (g.as_slice(), p.as_slice())).collect();
    let (upc, uec, _, _) = stream_metrics(&pairs)?;
    report.union_point_counts = upc;
    report.union_event_counts = uec;
    let pw: Vec<Prf> = report.features.iter().map(|m| m.pointwise).collect();
    let af: Vec<Prf> = report.features.iter().map(|m| m.affiliation).collect();
    report.pointwise = Aggregates {
        macro_: Prf::macro_mean(&pw),
        micro: report.micro_point_counts.prf(),
        union: upc.prf(),
    };
    report.affiliation = Aggregates {
        macro_: Prf::macro_mean(&af),
        micro: report.micro_event_counts.prf(),
        union: uec.prf(),
    };
    Ok(report)
}

/// Bernoulli predictions at each feature's ground-truth prevalence.
pub fn random_baseline(streams: &EvalStreams, seed: u64) -> EvalStreams {
    let pi: Vec<f64> = (0..streams.features.len()).map(|f| streams.prevalence(f)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    streams.with_predictions(|f, s| {
        (0..s.timestamps.len())
            .map(|_| rng.random::<f64>() < pi[f])
            .collect()
    })
}

/// Streams over the `split` block of every NE in `ds`: ground truth from
/// `labels`, predictions from the flags in `decisions` (unscored cells are 0).
pub fn build_streams(
    ds: &TelemetryDataset,
    splits: &Splits,
    split: SplitTag,
    decisions: &DecisionFrame,
    labels: &LabelSet,
) -> Result<EvalStreams> {
    let flagged = decisions.flagged();
    let mut out = EvalStreams {
        features: ds.feature_names.clone(),
        segments: Vec::new(),
    };
    for (n, ne) in ds.nes.iter().enumerate() {
        let b = splits
            .get(&ne.ne_id)
            .ok_or_else(|| Error::Contract(format!("no split for {}", ne.ne_id)))?
            .block(split);
        let timestamps: Vec<i64> = b.clone().map(|t| ds.timestamp(n, t)).collect();
        let per = |hit: &dyn Fn(&str, i64) -> bool| -> Vec<Vec<bool>> {
            ds.feature_names
                .iter()
                .map(|f| timestamps.iter().map(|&ts| hit(f, ts)).collect())
                .collect()
        };
        let gt = per(&|f, ts| labels.is_positive(&ne.ne_id, f, ts));
        let pred = per(&|f, ts| flagged.contains(&(ne.ne_id.clone(), f.to_string(), ts)));
        out.segments.push(Segment {
            ne_id: ne.ne_id.clone(),
            timestamps,
            gt,
            pred,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jaccard {
    pub value: f64,
    /// Both sets were empty; the value 1 is a convention.
    pub both_empty: bool,
}

pub fn jaccard<K: Ord>(a: &BTreeSet<K>, b: &BTreeSet<K>) -> Jaccard {
    if a.is_empty() && b.is_empty() {
        return Jaccard {
            value: 1.0,
            both_empty: true,
        };
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    Jaccard {
        value: inter as f64 / union as f64,
        both_empty: false,
    }
}

impl MetricReport {
    /// Fixed-width table: per-feature rows, then Macro, Micro and Union.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        if !self.label.is_empty() {
            let _ = writeln!(s, "{}", self.label);
        }
        let _ = writeln!(
            s,
            "{:<16} {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7} | {:>7} {:>8} {:>7} {:>8}",
            "feature", "pw_P", "pw_R", "pw_F1", "aff_P", "aff_R", "aff_F1", "gt_ev", "gt_ts", "pr_ev", "pr_ts"
        );
        let row = |s: &mut String, name: &str, pw: Prf, af: Prf, counts: Option<[usize; 4]>| {
            let _ = write!(
                s,
                "{:<16} {:>7.3} {:>7.3} {:>7.3} | {:>7.3} {:>7.3} {:>7.3} |",
                name, pw.p, pw.r, pw.f1, af.p, af.r, af.f1
            );
            if let Some(c) = counts {
                let _ = write!(s, " {:>7} {:>8} {:>7} {:>8}", c[0], c[1], c[2], c[3]);
            }
            s.push('\n');
        };
        for m in &self.features {
            row(
                &mut s,
                &m.feature,
                m.pointwise,
                m.affiliation,
                Some([m.gt_events, m.gt_timestamps, m.pred_events, m.pred_timestamps]),
            );
        }
        row(&mut s, "Macro", self.pointwise.macro_, self.affiliation.macro_, None);
        row(&mut s, "Micro", self.pointwise.micro, self.affiliation.micro, None);
        row(&mut s, "Union", self.pointwise.union, self.affiliation.union, None);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    fn ev(s: usize, e: usize) -> EventInterval {
        EventInterval::new(s, e)
    }

    #[test]
    fn merging() {
        assert_eq!(merge_events(&b(&[0, 1, 1, 0, 1])), vec![ev(1, 2), ev(4, 4)]);
        assert!(merge_events(&b(&[0, 0, 0])).is_empty());
        assert_eq!(merge_events(&[true; 5]), vec![ev(0, 4)]);
    }

    #[test]
    fn iou_values() {
        assert_eq!(iou(ev(3, 7), ev(3, 7)), 1.0);
        assert_eq!(iou(ev(0, 2), ev(3, 7)), 0.0);
        assert!((iou(ev(0, 9), ev(5, 14)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn affiliation_examples() {
        let c = affiliation_counts(&[ev(0, 9)], &[ev(5, 14)]);
        assert_eq!((c.tp, c.fp, c.fn_), (1, 0, 0));
        assert_eq!(c.prf(), Prf::new(1.0, 1.0));
        let c = affiliation_counts(&[ev(0, 4)], &[ev(10, 12)]);
        assert_eq!((c.tp, c.fp, c.fn_), (0, 1, 1));
        assert_eq!(c.prf().f1, 0.0);
    }

    #[test]
    fn pointwise_examples() {
        let g = b(&[1, 0, 1, 0]);
        assert_eq!(pointwise_prf(&g, &g).unwrap(), Prf::new(1.0, 1.0));
        assert_eq!(pointwise_prf(&g, &[false; 4]).unwrap(), Prf::default());
        let p = pointwise_prf(&g, &b(&[1, 1, 0, 0])).unwrap();
        assert_eq!((p.p, p.r, p.f1), (0.5, 0.5, 0.5));
        assert!(matches!(pointwise_prf(&g, &[true]), Err(Error::Contract(_))));
    }

    fn two_feature_streams() -> EvalStreams {
        EvalStreams {
            features: vec!["a".into(), "b".into()],
            segments: vec![Segment {
                ne_id: "n".into(),
                timestamps: (0..4).collect(),
                gt: vec![b(&[1, 1, 0, 0]), b(&[0, 0, 1, 0])],
                pred: vec![b(&[1, 1, 0, 0]), b(&[1, 0, 0, 0])],
            }],
        }
    }

    #[test]
    fn macro_of_perfect_and_failed_feature() {
        let r = evaluate(&two_feature_streams(), "").unwrap();
        assert_eq!(r.features[0].pointwise.f1, 1.0);
        assert_eq!(r.features[1].pointwise.f1, 0.0);
        assert_eq!(r.pointwise.macro_.f1, 0.5);
        assert_eq!(r.affiliation.macro_.f1, 0.5);
        // union: gt [1,1,1,0], pred [1,1,0,0]
        assert_eq!(r.union_point_counts, PointCounts { tp: 2, fp: 0, fn_: 1, tn: 1 });
        assert_eq!(r.union_event_counts, EventCounts { tp: 1, fp: 0, fn_: 0, n_gt: 1 });
        assert!(r.render_table().contains("Union"));
    }

    #[test]
    fn single_feature_modes_coincide() {
        let mut s = two_feature_streams();
        s.features.truncate(1);
        for seg in &mut s.segments {
            seg.gt.truncate(1);
            seg.pred = vec![b(&[0, 1, 0, 1])];
        }
        let r = evaluate(&s, "").unwrap();
        assert_eq!(r.pointwise.macro_, r.pointwise.micro);
        assert_eq!(r.pointwise.micro, r.pointwise.union);
        assert_eq!(r.affiliation.macro_, r.affiliation.union);
    }

    #[test]
    fn events_do_not_cross_segments() {
        let s = EvalStreams {
            features: vec!["a".into()],
            segments: (0..2)
                .map(|i| Segment {
                    ne_id: format!("n{i}"),
                    timestamps: vec![0, 1],
                    gt: vec![vec![true, true]],
                    pred: vec![vec![i == 0, i == 0]],
                })
                .collect(),
        };
        let r = evaluate(&s, "").unwrap();
        assert_eq!(r.features[0].event_counts, EventCounts { tp: 1, fp: 0, fn_: 1, n_gt: 2 });
    }

    #[test]
    fn random_baseline_extremes_and_determinism() {
        let mut s = two_feature_streams();
        s.segments[0].gt = vec![vec![true; 4], vec![false; 4]];
        let r = random_baseline(&s, 3);
        assert_eq!(r.segments[0].pred, vec![vec![true; 4], vec![false; 4]]);
        assert_eq!(random_baseline(&two_feature_streams(), 9), random_baseline(&two_feature_streams(), 9));
    }

    #[test]
    fn random_baseline_precision_is_prevalence() {
        let t = 2000;
        let gt: Vec<bool> = (0..t).map(|i| i % 10 == 0).collect();
        let s = EvalStreams {
            features: vec!["a".into()],
            segments: vec![Segment {
                ne_id: "n".into(),
                timestamps: (0..t as i64).collect(),
                gt: vec![gt],
                pred: vec![vec![false; t]],
            }],
        };
        let precisions: Vec<f64> = (0..100)
            .map(|seed| evaluate(&random_baseline(&s, seed), "").unwrap().features[0].pointwise.p)
            .collect();
        let mean = precisions.iter().sum::<f64>() / 100.0;
        // predictions are independent of the labels, so each precision is a
        // binomial share with about 200 trials
        let sd = (0.1 * 0.9 / 200.0f64).sqrt() / 10.0;
        assert!((mean - 0.1).abs() < 3.0 * sd, "mean precision {mean}");
    }

    #[test]
    fn jaccard_examples() {
        let set = |v: &[char]| v.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(jaccard(&set(&['a', 'b']), &set(&['a', 'b'])).value, 1.0);
        assert_eq!(jaccard(&set(&['a', 'b', 'c']), &set(&['b', 'c', 'd'])).value, 0.5);
        assert_eq!(jaccard(&set(&['a']), &set(&['b'])).value, 0.0);
        let e = jaccard::<char>(&BTreeSet::new(), &BTreeSet::new());
        assert!(e.both_empty && e.value == 1.0);
    }

    #[test]
    fn all_positive_detector_anchor() {
        let gt: Vec<bool> = (0..500).map(|i| (i / 7) % 13 == 0).collect();
        let c = pointwise_counts(&gt, &vec![true; 500]).unwrap();
        let prevalence = gt.iter().filter(|&&v| v).count() as f64 / 500.0;
        assert_eq!(c.prf().p, prevalence);
        assert_eq!(c.prf().r, 1.0);
    }

    fn stream() -> impl Strategy<Value = Vec<bool>> {
        prop::collection::vec(any::<bool>(), 0..30)
    }

    proptest! {
        #[test]
        fn merge_expand_round_trip(s in stream()) {
            let e = merge_events(&s);
            prop_assert_eq!(expand(&e, s.len()), s);
            prop_assert!(e.windows(2).all(|w| w[1].start > w[0].end + 1));
        }

        #[test]
        fn iou_properties(a in 0usize..20, la in 0usize..10, c in 0usize..20, lc in 0usize..10) {
            let (g, p) = (ev(a, a + la), ev(c, c + lc));
            let v = iou(g, p);
            prop_assert_eq!(v, iou(p, g));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v == 1.0, g == p);
        }

        #[test]
        fn macro_invariant_to_feature_order(gs in prop::collection::vec(prop::collection::vec(any::<bool>(), 12), 3),
                                            ps in prop::collection::vec(prop::collection::vec(any::<bool>(), 12), 3)) {
            let make = |order: &[usize]| EvalStreams {
                features: order.iter().map(|i| format!("f{i}")).collect(),
                segments: vec![Segment {
                    ne_id: "n".into(),
                    timestamps: (0..12).collect(),
                    gt: order.iter().map(|&i| gs[i].clone()).collect(),
                    pred: order.iter().map(|&i| ps[i].clone()).collect(),
                }],
            };
            let a = evaluate(&make(&[0, 1, 2]), "").unwrap();
            let b = evaluate(&make(&[2, 0, 1]), "").unwrap();
            prop_assert!((a.pointwise.macro_.f1 - b.pointwise.macro_.f1).abs() < 1e-12);
            prop_assert!((a.affiliation.macro_.f1 - b.affiliation.macro_.f1).abs() < 1e-12);
            prop_assert_eq!(a.micro_point_counts, b.micro_point_counts);
            let summed = a.features.iter().fold(PointCounts::default(), |mut acc, m| {
                acc.add(&m.point_counts);
                acc
            });
            prop_assert_eq!(summed, a.micro_point_counts);
        }
    }
}

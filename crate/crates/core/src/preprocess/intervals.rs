use std::ops::Range;

use crate::se3::CartesianPoint;

use super::{PipelineError, TimeInterval};

/// One common interval together with each station's supporting samples.
///
/// The per-station samples span the interval: they start at the last sample
/// at or before `interval.start` and end at the first sample at or after
/// `interval.end`, so every grid time inside the interval can be
/// interpolated without extrapolating.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSupport {
    pub interval: TimeInterval,
    pub points: [Vec<CartesianPoint>; 3],
}

/// Maximal index runs whose consecutive time gaps are all `<= tau_s`.
fn runs(points: &[CartesianPoint], tau_s: f64) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..=points.len() {
        if k == points.len() || points[k].time - points[k - 1].time > tau_s {
            if k - start >= 2 {
                out.push(start..k);
            }
            start = k;
        }
    }
    out
}

fn run_span(points: &[CartesianPoint], run: &Range<usize>) -> TimeInterval {
    TimeInterval {
        start: points[run.start].time,
        end: points[run.end - 1].time,
    }
}

/// Intersection of two sorted, disjoint interval lists.
fn intersect(a: &[TimeInterval], b: &[TimeInterval]) -> Vec<TimeInterval> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        let start = a[i].start.max(b[j].start);
        let end = a[i].end.min(b[j].end);
        if end > start {
            out.push(TimeInterval { start, end });
        }
        if a[i].end < b[j].end {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Block 2: splits each station's stream at gaps longer than `tau_s` and
/// keeps the time spans where all three stations are uninterrupted.
pub fn split_intervals(points: &[Vec<CartesianPoint>; 3], tau_s: f64) -> Result<Vec<IntervalSupport>, PipelineError> {
    let station_runs: Vec<Vec<Range<usize>>> = points.iter().map(|p| runs(p, tau_s)).collect();
    let spans: Vec<Vec<TimeInterval>> = station_runs
        .iter()
        .zip(points)
        .map(|(rs, p)| rs.iter().map(|r| run_span(p, r)).collect())
        .collect();
    let common = intersect(&intersect(&spans[0], &spans[1]), &spans[2]);
    if common.is_empty() {
        return Err(PipelineError::NoCommonCoverage);
    }

    let supports = common
        .into_iter()
        .map(|interval| {
            let mut per_station: [Vec<CartesianPoint>; 3] = Default::default();
            for (s, dst) in per_station.iter_mut().enumerate() {
                let p = &points[s];
                let run = station_runs[s]
                    .iter()
                    .find(|r| {
                        let span = run_span(p, r);
                        span.start <= interval.start && span.end >= interval.end
                    })
                    .expect("intersection lies inside one run per station");
                let slice = &p[run.clone()];
                let lo = slice.partition_point(|q| q.time <= interval.start) - 1;
                let hi = slice.partition_point(|q| q.time < interval.end);
                *dst = slice[lo..=hi.min(slice.len() - 1)].to_vec();
            }
            IntervalSupport {
                interval,
                points: per_station,
            }
        })
        .collect();
    Ok(supports)
}

/// Block 3: keeps intervals lasting at least `tau_l` seconds, in order.
pub fn filter_intervals(intervals: &[TimeInterval], tau_l: f64) -> Result<Vec<TimeInterval>, PipelineError> {
    let kept: Vec<TimeInterval> = intervals.iter().copied().filter(|i| i.duration() >= tau_l).collect();
    if kept.is_empty() {
        return Err(PipelineError::AllIntervalsFiltered(tau_l));
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::Frame;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};

    fn pts(times: &[f64]) -> Vec<CartesianPoint> {
        times
            .iter()
            .map(|&t| CartesianPoint { time: t, position: Vector3::new(t, 0.0, 0.0), frame: Frame::Station(1) })
            .collect()
    }

    fn uniform(start: f64, end: f64, dt: f64) -> Vec<f64> {
        let n = ((end - start) / dt).round() as usize;
        (0..=n).map(|k| start + k as f64 * dt).collect()
    }

    #[test]
    fn gap_free_logs_give_one_interval() {
        let t = uniform(0.0, 100.0, 0.4);
        let s = split_intervals(&[pts(&t), pts(&t), pts(&t)], 1.0).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].interval, TimeInterval { start: 0.0, end: 100.0 });
        assert_eq!(s[0].points[0].len(), 251);
    }

    #[test]
    fn outage_on_one_station_splits() {
        let t = uniform(0.0, 100.0, 0.4);
        let t2: Vec<f64> = t.iter().copied().filter(|&x| !(40.0..=50.0).contains(&x)).collect();
        let pre = t2.iter().copied().filter(|&x| x < 40.0).fold(f64::MIN, f64::max);
        let post = t2.iter().copied().filter(|&x| x > 50.0).fold(f64::MAX, f64::min);
        let s = split_intervals(&[pts(&t), pts(&t2), pts(&t)], 1.0).unwrap();
        let got: Vec<TimeInterval> = s.iter().map(|s| s.interval).collect();
        assert_eq!(
            got,
            vec![TimeInterval { start: 0.0, end: pre }, TimeInterval { start: post, end: 100.0 }]
        );
    }

    #[test]
    fn support_brackets_interval() {
        let t1 = uniform(0.0, 20.0, 0.4);
        let t2 = uniform(0.1, 20.1, 0.4);
        let s = split_intervals(&[pts(&t1), pts(&t2), pts(&t1)], 1.0).unwrap();
        let iv = s[0].interval;
        assert_eq!(iv, TimeInterval { start: 0.1, end: 20.0 });
        for p in &s[0].points {
            assert!(p.first().unwrap().time <= iv.start && p.last().unwrap().time >= iv.end);
        }
    }

    #[test]
    fn no_overlap_is_an_error() {
        let a = uniform(0.0, 10.0, 0.4);
        let b = uniform(20.0, 30.0, 0.4);
        assert_eq!(
            split_intervals(&[pts(&a), pts(&b), pts(&a)], 1.0),
            Err(PipelineError::NoCommonCoverage)
        );
    }

    #[test]
    fn interval_filter() {
        let iv = |a, b| TimeInterval { start: a, end: b };
        assert_eq!(filter_intervals(&[iv(0.0, 10.0)], 6.0).unwrap(), vec![iv(0.0, 10.0)]);
        assert!(filter_intervals(&[iv(0.0, 5.0)], 6.0).is_err());
        let mixed = [iv(0.0, 5.0), iv(6.0, 20.0), iv(21.0, 26.9), iv(30.0, 36.0)];
        let expected: Vec<TimeInterval> = mixed.iter().copied().filter(|i| i.end - i.start >= 6.0).collect();
        assert_eq!(filter_intervals(&mixed, 6.0).unwrap(), expected);
    }

    /// Brute-force oracle: `t` is covered by a station when it coincides with a
    /// sample or lies between two consecutive samples at most `tau_s` apart.
    fn covered(times: &[f64], t: f64, tau_s: f64) -> bool {
        times.windows(2).any(|w| w[0] <= t && t <= w[1] && w[1] - w[0] <= tau_s)
    }

    #[test]
    fn scripted_dropouts_match_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut logs: Vec<Vec<f64>> = Vec::new();
            for s in 0..3 {
                let offset = 0.1 * s as f64;
                let mut t = uniform(offset, 200.0 + offset, 0.4);
                for _ in 0..rng.random_range(0..4) {
                    let a: f64 = rng.random_range(0.0..200.0);
                    let len: f64 = rng.random_range(0.5..15.0);
                    t.retain(|&x| !(a..a + len).contains(&x));
                }
                logs.push(t);
            }
            let tau_s = 1.0;
            let result = split_intervals(&[pts(&logs[0]), pts(&logs[1]), pts(&logs[2])], tau_s);
            let probes = uniform(0.0, 201.0, 0.01);
            match result {
                Ok(supports) => {
                    for &t in &probes {
                        let oracle = logs.iter().all(|l| covered(l, t, tau_s));
                        let ours = supports.iter().any(|s| s.interval.contains(t));
                        assert_eq!(oracle, ours, "disagreement at t = {t}");
                    }
                }
                Err(_) => assert!(probes.iter().all(|&t| !logs.iter().all(|l| covered(l, t, tau_s)))),
            }
        }
    }
}

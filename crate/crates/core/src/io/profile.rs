//! Dolan–Moré performance profiles. With `t_{p,s}` the metric of solver `s`
//! on instance `p`, `r_{p,s} = t_{p,s} / min_s t_{p,s}` and
//! `pi_s(tau)` is the fraction of instances with `log2 r_{p,s} <= tau`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::report::RunReport;
use crate::error::{Result, SdpError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileMetric {
    Time,
    EtaMax,
}

impl std::str::FromStr for ProfileMetric {
    type Err = SdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(Self::Time),
            "eta_max" | "eta-max" => Ok(Self::EtaMax),
            _ => Err(SdpError::InvalidParameter(format!("unknown profile metric `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub label: String,
    /// `(tau, pi(tau))` at every breakpoint of any curve, ascending in `tau`.
    pub points: Vec<(f64, f64)>,
}

impl ProfileCurve {
    /// Step-function value at `tau`.
    pub fn value_at(&self, tau: f64) -> f64 {
        self.points.iter().take_while(|(t, _)| *t <= tau).last().map_or(0.0, |p| p.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub metric: ProfileMetric,
    pub instances: Vec<String>,
    pub curves: Vec<ProfileCurve>,
}

/// Metric value of one run; failed runs count as infinitely slow.
fn metric_value(r: &RunReport, metric: ProfileMetric) -> f64 {
    let v = match metric {
        ProfileMetric::Time => r.time_secs,
        ProfileMetric::EtaMax => r.kkt.eta_max,
    };
    if r.success && v.is_finite() && v >= 0.0 {
        v
    } else {
        f64::INFINITY
    }
}

fn ratio(t: f64, best: f64) -> f64 {
    if !t.is_finite() {
        f64::INFINITY
    } else if best == 0.0 {
        if t == 0.0 { 1.0 } else { f64::INFINITY }
    } else {
        t / best
    }
}

/// Profiles over the union of instances. A solver without a run on some
/// instance gets `r = inf` there. At least two labels are required, and they
/// must share at least one instance.
pub fn performance_profile(reports: &[RunReport], metric: ProfileMetric) -> Result<ProfileSet> {
    let mut table: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for r in reports {
        let row = table.entry(r.label.as_str()).or_default();
        if row.insert(r.instance.as_str(), metric_value(r, metric)).is_some() {
            return Err(SdpError::InvalidParameter(format!(
                "two reports for label `{}` on instance `{}`",
                r.label, r.instance
            )));
        }
    }
    if table.len() < 2 {
        return Err(SdpError::InvalidParameter(format!(
            "a profile needs at least two solver labels, got {}",
            table.len()
        )));
    }
    let mut shared: Option<BTreeSet<&str>> = None;
    let mut all: BTreeSet<&str> = BTreeSet::new();
    for row in table.values() {
        let keys: BTreeSet<&str> = row.keys().copied().collect();
        all.extend(keys.iter().copied());
        shared = Some(match shared {
            None => keys,
            Some(s) => s.intersection(&keys).copied().collect(),
        });
    }
    if shared.is_none_or(|s| s.is_empty()) {
        return Err(SdpError::InvalidParameter("solver labels share no instance".into()));
    }

    let instances: Vec<&str> = all.into_iter().collect();
    let labels: Vec<&str> = table.keys().copied().collect();
    let value = |s: &str, p: &str| table[s].get(p).copied().unwrap_or(f64::INFINITY);
    let mut log_ratios: Vec<Vec<f64>> = vec![Vec::with_capacity(instances.len()); labels.len()];
    for p in &instances {
        let best = labels.iter().map(|s| value(s, p)).fold(f64::INFINITY, f64::min);
        for (k, s) in labels.iter().enumerate() {
            log_ratios[k].push(ratio(value(s, p), best).log2());
        }
    }
    let mut taus: Vec<f64> = log_ratios.iter().flatten().copied().filter(|t| t.is_finite()).collect();
    taus.push(0.0);
    taus.sort_by(f64::total_cmp);
    taus.dedup();

    let np = instances.len() as f64;
    let curves = labels
        .iter()
        .zip(&log_ratios)
        .map(|(s, lr)| ProfileCurve {
            label: s.to_string(),
            points: taus.iter().map(|&t| (t, lr.iter().filter(|&&x| x <= t).count() as f64 / np)).collect(),
        })
        .collect();
    Ok(ProfileSet {
        metric,
        instances: instances.into_iter().map(String::from).collect(),
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::report::tests::sample_report;

    fn run(label: &str, inst: &str, t: f64) -> RunReport {
        sample_report(label, inst, t, 1e-7, true)
    }

    // [TRIVIAL]
    #[test]
    fn identical_times_jump_at_zero() {
        let reps = vec![run("a", "p1", 1.0), run("b", "p1", 1.0), run("a", "p2", 3.0), run("b", "p2", 3.0)];
        let set = performance_profile(&reps, ProfileMetric::Time).unwrap();
        for c in &set.curves {
            assert_eq!(c.points, vec![(0.0, 1.0)]);
        }
    }

    // [TRIVIAL] log2 2 = 1
    #[test]
    fn twice_slower_reaches_one_at_tau_one() {
        let reps = vec![run("fast", "p1", 1.0), run("slow", "p1", 2.0), run("fast", "p2", 0.5), run("slow", "p2", 1.0)];
        let set = performance_profile(&reps, ProfileMetric::Time).unwrap();
        let slow = set.curves.iter().find(|c| c.label == "slow").unwrap();
        assert_eq!(slow.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(slow.value_at(0.999), 0.0);
    }

    // [DERIVED] hand computation:
    //   p1: a=1 b=4 -> r_a=1 r_b=4 (tau 2)
    //   p2: a=6 b=3 -> r_a=2 (tau 1) r_b=1
    //   p3: a=2 b fails -> r_a=1 r_b=inf
    //   a: 2/3 at 0, 1 at 1;  b: 1/3 at 0 and 1, 2/3 at 2
    #[test]
    fn three_instance_table() {
        let mut failed = run("b", "p3", 0.1);
        failed.success = false;
        let reps = vec![run("a", "p1", 1.0), run("b", "p1", 4.0), run("a", "p2", 6.0), run("b", "p2", 3.0), run("a", "p3", 2.0), failed];
        let set = performance_profile(&reps, ProfileMetric::Time).unwrap();
        assert_eq!(set.instances, vec!["p1", "p2", "p3"]);
        let a = &set.curves[0];
        let b = &set.curves[1];
        assert_eq!(a.points, vec![(0.0, 2.0 / 3.0), (1.0, 1.0), (2.0, 1.0)]);
        assert_eq!(b.points, vec![(0.0, 1.0 / 3.0), (1.0, 1.0 / 3.0), (2.0, 2.0 / 3.0)]);
    }

    #[test]
    fn missing_runs_count_as_failures() {
        let reps = vec![run("a", "p1", 1.0), run("b", "p1", 1.0), run("a", "p2", 1.0)];
        let set = performance_profile(&reps, ProfileMetric::EtaMax).unwrap();
        assert_eq!(set.curves[1].points.last().unwrap().1, 0.5);
    }

    #[test]
    fn errors() {
        assert!(performance_profile(&[run("a", "p1", 1.0), run("a", "p2", 1.0)], ProfileMetric::Time).is_err());
        assert!(performance_profile(&[run("a", "p1", 1.0), run("b", "p2", 1.0)], ProfileMetric::Time).is_err());
        assert!(performance_profile(&[run("a", "p1", 1.0), run("a", "p1", 2.0), run("b", "p1", 1.0)], ProfileMetric::Time).is_err());
        assert!("speed".parse::<ProfileMetric>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn curves_monotone_and_bounded(times in proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0, proptest::bool::ANY), 1..12)) {
            let mut reps = Vec::new();
            for (k, &(ta, tb, ok)) in times.iter().enumerate() {
                let inst = format!("p{k}");
                reps.push(run("a", &inst, ta));
                reps.push(sample_report("b", &inst, tb, 1e-7, ok));
            }
            let set = performance_profile(&reps, ProfileMetric::Time).unwrap();
            for c in &set.curves {
                for w in c.points.windows(2) {
                    proptest::prop_assert!(w[0].0 < w[1].0 && w[0].1 <= w[1].1);
                }
                proptest::prop_assert!(c.points.last().unwrap().1 <= 1.0);
            }
            // every instance has a winner
            let best: f64 = set.curves.iter().map(|c| c.value_at(0.0)).sum();
            proptest::prop_assert!(best >= 1.0 - 1e-12);
        }
    }
}

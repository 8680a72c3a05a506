use std::io::Write;

use crate::env::ConflictEvent;
use crate::error::{Error, Result};

/// Resource efficiency: mean utilization relative to the target.
pub fn rei(utilizations: &[f64], u_target: f64) -> Result<f64> {
    if !(u_target > 0.0) {
        return Err(Error::NonPositiveTarget(u_target));
    }
    if utilizations.is_empty() {
        return Ok(0.0);
    }
    Ok(utilizations.iter().map(|u| u / u_target).sum::<f64>() / utilizations.len() as f64)
}

/// Served and offered request rates for one window, as `(lambda_out, lambda_in)`.
pub fn window_rates(admitted: u64, offered: u64, window: f64) -> (f64, f64) {
    assert!(window > 0.0, "measurement window must be positive");
    (admitted as f64 / window, offered as f64 / window)
}

/// Conflicts per hour in consecutive windows of `window` seconds covering `[0, horizon)`.
pub fn conflict_density(events: &[ConflictEvent], window: f64, horizon: f64) -> Vec<f64> {
    assert!(window > 0.0, "measurement window must be positive");
    let n = (horizon / window).ceil().max(1.0) as usize;
    let mut counts = vec![0u64; n];
    for e in events {
        let k = ((e.t / window) as usize).min(n - 1);
        counts[k] += 1;
    }
    counts.into_iter().map(|c| c as f64 * 3600.0 / window).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub t_start: f64,
    pub t_end: f64,
    pub offered: u64,
    pub admitted: u64,
    pub lambda_in: f64,
    pub lambda_out: f64,
    pub u_mean: Vec<f64>,
    pub n_cpu_end: Vec<u32>,
    pub conflicts: u64,
    pub rei: f64,
}

pub fn write_metrics_csv<W: Write>(mut out: W, records: &[MetricsRecord]) -> std::io::Result<()> {
    let n = records.first().map_or(2, |r| r.u_mean.len());
    let mut header = String::from("t_start,t_end,lambda_in,lambda_out");
    for i in 1..=n {
        header.push_str(&format!(",u_{i}"));
    }
    for i in 1..=n {
        header.push_str(&format!(",n_cpu_{i}"));
    }
    header.push_str(",conflicts,rei");
    writeln!(out, "{header}")?;
    for r in records {
        write!(out, "{:.3},{:.3},{:.6},{:.6}", r.t_start, r.t_end, r.lambda_in, r.lambda_out)?;
        for u in &r.u_mean {
            write!(out, ",{u:.6}")?;
        }
        for c in &r.n_cpu_end {
            write!(out, ",{c}")?;
        }
        writeln!(out, ",{},{:.6}", r.conflicts, r.rei)?;
    }
    Ok(())
}

/// Mean and half-width of the two-sided 95% Student-t interval.
pub fn mean_ci95(samples: &[f64]) -> (f64, f64) {
    use statrs::distribution::{ContinuousCDF, StudentsT};

    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive dof").inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Action;
    use approx::assert_relative_eq;

    fn ev(t: f64) -> ConflictEvent {
        ConflictEvent { t, agent: 0, delta: Action::new(1).unwrap() }
    }

    #[test]
    fn rei_values() {
        assert_relative_eq!(rei(&[0.5, 0.5], 0.5).unwrap(), 1.0);
        assert_relative_eq!(rei(&[0.2, 0.3], 0.5).unwrap(), 0.5);
        assert_eq!(rei(&[0.0, 0.0], 0.5).unwrap(), 0.0);
        assert!(rei(&[0.5], 0.0).is_err());
        assert!(rei(&[0.5], -1.0).is_err());
    }

    #[test]
    fn rates() {
        assert_eq!(window_rates(500, 1000, 1000.0), (0.5, 1.0));
        assert_eq!(window_rates(0, 0, 1000.0), (0.0, 0.0));
        let (o, i) = window_rates(37, 37, 1000.0);
        assert_eq!(o, i);
    }

    #[test]
    fn density() {
        assert!(conflict_density(&[], 3600.0, 1e5).iter().all(|&d| d == 0.0));
        let events: Vec<_> = (0..10).map(|k| ev(100.0 + k as f64)).collect();
        let d = conflict_density(&events, 3600.0, 7200.0);
        assert_eq!(d, vec![10.0, 0.0]);
        let events: Vec<_> = (0..50).map(|k| ev(k as f64 * 1999.0)).collect();
        let d = conflict_density(&events, 1000.0, 1e5);
        let total: f64 = d.iter().map(|x| x * 1000.0 / 3600.0).sum();
        assert_relative_eq!(total, 50.0, epsilon = 1e-9);
    }

    #[test]
    fn ci_degenerate_and_known() {
        assert_eq!(mean_ci95(&[3.0]), (3.0, 0.0));
        let (m, h) = mean_ci95(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_relative_eq!(m, 3.0);
        // t_{0.975,4} = 2.776445
        assert_relative_eq!(h, 2.776445 * (2.5f64 / 5.0).sqrt(), epsilon = 1e-5);
    }

    #[test]
    fn csv_is_fixed_format() {
        let r = MetricsRecord {
            t_start: 0.0,
            t_end: 1000.0,
            offered: 1000,
            admitted: 500,
            lambda_in: 1.0,
            lambda_out: 0.5,
            u_mean: vec![0.25, 0.5],
            n_cpu_end: vec![2, 3],
            conflicts: 4,
            rei: 0.75,
        };
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[r]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t_start,t_end,lambda_in,lambda_out,u_1,u_2,n_cpu_1,n_cpu_2,conflicts,rei\n\
             0.000,1000.000,1.000000,0.500000,0.250000,0.500000,2,3,4,0.750000\n"
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rei_is_linear(us in proptest::collection::vec(0.0f64..2.0, 1..5), k in 0usize..5, c in 0.0f64..3.0) {
                let k = k % us.len();
                let base = rei(&us, 0.5).unwrap();
                let mut scaled = us.clone();
                scaled[k] += c;
                let expected = base + c / 0.5 / us.len() as f64;
                prop_assert!((rei(&scaled, 0.5).unwrap() - expected).abs() < 1e-9);
            }

            #[test]
            fn rei_is_one_on_target_mean(a in 0.0f64..1.0) {
                prop_assert!((rei(&[a, 1.0 - a], 0.5).unwrap() - 1.0).abs() < 1e-12);
            }

            #[test]
            fn density_partitions(ts in proptest::collection::vec(0.0f64..1e5, 0..200)) {
                let mut ts = ts;
                ts.sort_by(f64::total_cmp);
                let events: Vec<_> = ts.iter().map(|&t| ev(t)).collect();
                let d = conflict_density(&events, 1000.0, 1e5);
                let total: f64 = d.iter().map(|x| x * 1000.0 / 3600.0).sum();
                prop_assert!((total - events.len() as f64).abs() < 1e-6);
            }
        }
    }
}

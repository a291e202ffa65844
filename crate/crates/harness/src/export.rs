//! CSV and JSON output. Files contain no timing information, so repeated
//! runs produce identical bytes.

use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use cofiba_core::policy::ClusterSnapshot;
use cofiba_core::Policy;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::{Curve, RunReport};

/// Curves longer than this are subsampled uniformly.
pub const MAX_CURVE_POINTS: usize = 10_000;

/// Row indices kept for a curve of `len` points: all of them up to
/// [`MAX_CURVE_POINTS`], otherwise evenly spaced ones including both ends.
pub fn sample_indices(len: usize) -> Vec<usize> {
    if len <= MAX_CURVE_POINTS {
        return (0..len).collect();
    }
    let last = (len - 1) as u128;
    let steps = (MAX_CURVE_POINTS - 1) as u128;
    (0..MAX_CURVE_POINTS as u128).map(|k| (k * last / steps) as usize).collect()
}

/// Writes `round,ctr[,cum_regret]`.
pub fn write_curve<W: Write>(curve: &Curve, mut w: W) -> std::io::Result<()> {
    match &curve.cum_regret {
        Some(_) => writeln!(w, "round,ctr,cum_regret")?,
        None => writeln!(w, "round,ctr")?,
    }
    for i in sample_indices(curve.len()) {
        write!(w, "{},{}", curve.rounds[i], curve.ctr[i])?;
        if let Some(r) = &curve.cum_regret {
            write!(w, ",{}", r[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_curve<R: BufRead>(r: R) -> Result<Curve> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let with_regret = match header.trim() {
        "round,ctr,cum_regret" => true,
        "round,ctr" => false,
        other => return Err(cofiba_core::Error::Format(format!("unexpected curve header {other:?}")).into()),
    };
    let mut curve = Curve {
        rounds: Vec::new(),
        ctr: Vec::new(),
        cum_regret: with_regret.then(Vec::new),
    };
    for line in lines {
        let line = line?;
        let bad = || HarnessError::Core(cofiba_core::Error::Format(format!("bad curve row {line:?}")));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 2 + usize::from(with_regret) {
            return Err(bad());
        }
        curve.rounds.push(f[0].parse().map_err(|_| bad())?);
        curve.ctr.push(f[1].parse().map_err(|_| bad())?);
        if let Some(r) = &mut curve.cum_regret {
            r.push(f[2].parse().map_err(|_| bad())?);
        }
    }
    Ok(curve)
}

/// The policy's cluster snapshot, or a domain error for policies without
/// clusters.
pub fn snapshot_of(policy: &dyn Policy) -> Result<ClusterSnapshot> {
    policy.cluster_snapshot().ok_or_else(|| {
        cofiba_core::Error::Domain(format!("{} keeps no clusters", policy.name())).into()
    })
}

/// Long-format histogram: one row per user cluster,
/// `item_cluster,item_share,user_cluster,user_share`, item clusters by
/// decreasing share and user clusters by decreasing share within each.
pub fn write_cluster_histogram<W: Write>(snapshot: &ClusterSnapshot, mut w: W) -> Result<()> {
    if snapshot.item_clusters.is_empty() {
        return Err(cofiba_core::Error::Domain("snapshot has no clusters".into()).into());
    }
    writeln!(w, "item_cluster,item_share,user_cluster,user_share")?;
    for (i, (item_share, users)) in snapshot.relative_sizes().iter().enumerate() {
        for (j, user_share) in users.iter().enumerate() {
            writeln!(w, "{i},{item_share},{j},{user_share}")?;
        }
    }
    Ok(())
}

pub fn export_cluster_histogram(snapshot: &ClusterSnapshot, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_cluster_histogram(snapshot, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads the long format back into `(item share, user shares)` rows.
pub fn read_cluster_histogram<R: BufRead>(r: R) -> Result<Vec<(f64, Vec<f64>)>> {
    let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if n == 0 {
            continue;
        }
        let bad = || HarnessError::Core(cofiba_core::Error::Format(format!("bad histogram row {line:?}")));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let i: usize = f[0].parse().map_err(|_| bad())?;
        let share: f64 = f[1].parse().map_err(|_| bad())?;
        let user: f64 = f[3].parse().map_err(|_| bad())?;
        if i == out.len() {
            out.push((share, Vec::new()));
        } else if i + 1 != out.len() {
            return Err(bad());
        }
        out[i].1.push(user);
    }
    Ok(out)
}

#[derive(Serialize)]
struct Summary<'a> {
    mode: String,
    horizon: u64,
    seeds: &'a [u64],
    policies: Vec<PolicySummary>,
}

#[derive(Serialize)]
struct PolicySummary {
    label: String,
    requested: String,
    tuned: String,
    tuning: Vec<(String, f64)>,
    runs: Vec<RunSummary>,
    average_final_ctr: Option<f64>,
    average_final_regret: Option<f64>,
}

#[derive(Serialize)]
struct RunSummary {
    seed: u64,
    records: Option<usize>,
    retained: Option<usize>,
    final_ctr: Option<f64>,
    final_regret: Option<f64>,
    error: Option<String>,
}

fn summary(report: &RunReport) -> Summary<'_> {
    Summary {
        mode: report.mode.to_string(),
        horizon: report.horizon,
        seeds: &report.seeds,
        policies: report
            .policies
            .iter()
            .map(|p| PolicySummary {
                label: p.label.clone(),
                requested: p.requested.to_string(),
                tuned: p.tuned.to_string(),
                tuning: p.tuning.iter().map(|g| (g.kind.to_string(), g.objective)).collect(),
                runs: p
                    .runs
                    .iter()
                    .map(|r| match &r.outcome {
                        Ok(o) => RunSummary {
                            seed: r.seed,
                            records: Some(o.records),
                            retained: Some(o.curve.len()),
                            final_ctr: o.curve.final_ctr(),
                            final_regret: o.curve.final_regret(),
                            error: None,
                        },
                        Err(e) => RunSummary {
                            seed: r.seed,
                            records: None,
                            retained: None,
                            final_ctr: None,
                            final_regret: None,
                            error: Some(e.clone()),
                        },
                    })
                    .collect(),
                average_final_ctr: p.average.as_ref().and_then(Curve::final_ctr),
                average_final_regret: p.average.as_ref().and_then(Curve::final_regret),
            })
            .collect(),
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Writes every output of a run into `dir`:
/// `<label>_seed<s>.csv`, `<label>_avg.csv`, `<label>_seed<s>_clusters.csv`
/// and `_snapshot.json` for clustering policies, `summary.json` and the
/// resolved `config.ini`.
pub fn export_report(report: &RunReport, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for p in &report.policies {
        for run in &p.runs {
            let Ok(out) = &run.outcome else { continue };
            let stem = format!("{}_seed{}", p.label, run.seed);
            write_file(&dir.join(format!("{stem}.csv")), |w| Ok(write_curve(&out.curve, w)?))?;
            if let Some(snap) = &out.snapshot {
                write_file(&dir.join(format!("{stem}_clusters.csv")), |w| write_cluster_histogram(snap, w))?;
                write_file(&dir.join(format!("{stem}_snapshot.json")), |w| {
                    serde_json::to_writer_pretty(&mut *w, snap)?;
                    Ok(writeln!(w)?)
                })?;
            }
        }
        if let Some(avg) = &p.average {
            write_file(&dir.join(format!("{}_avg.csv", p.label)), |w| Ok(write_curve(avg, w)?))?;
        }
    }
    write_file(&dir.join("summary.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary(report))?;
        Ok(writeln!(w)?)
    })?;
    // The output directory is left out so that copies compare equal
    // wherever they are written.
    let resolved = ExperimentConfig { out: None, ..cfg.clone() };
    fs::write(dir.join("config.ini"), resolved.to_ini_string())?;
    Ok(())
}

/// Reads a snapshot written by [`export_report`].
pub fn read_snapshot(path: &Path) -> Result<ClusterSnapshot> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_keeps_ends() {
        assert_eq!(sample_indices(5), vec![0, 1, 2, 3, 4]);
        let s = sample_indices(1_000_003);
        assert_eq!(s.len(), MAX_CURVE_POINTS);
        assert_eq!(s[0], 0);
        assert_eq!(*s.last().unwrap(), 1_000_002);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn curve_round_trip() {
        let curve = Curve {
            rounds: (1..=100).collect(),
            ctr: (1..=100).map(|t| 1.0 / t as f64).collect(),
            cum_regret: Some((1..=100).map(|t| (t as f64).sqrt() * 0.1).collect()),
        };
        let mut buf = Vec::new();
        write_curve(&curve, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 101);
        assert!(!text.contains('\r'));
        assert_eq!(read_curve(buf.as_slice()).unwrap(), curve);

        let plain = Curve {
            cum_regret: None,
            ..curve
        };
        let mut buf = Vec::new();
        write_curve(&plain, &mut buf).unwrap();
        assert!(buf.starts_with(b"round,ctr\n"));
        assert_eq!(read_curve(buf.as_slice()).unwrap(), plain);
    }
}

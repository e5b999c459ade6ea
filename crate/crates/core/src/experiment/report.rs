use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::config::Method;
use crate::metrics::{csv_field, joint, ScoreReport, ScoreRow};
use crate::mixing::{Granularity, MixWeights};

/// Field-wise mean of score reports; its `joint` is the mean of joints.
pub fn mean_scores<'a>(scores: impl IntoIterator<Item = &'a ScoreReport>) -> Result<ScoreReport> {
    let mut sum = [0.0; 5];
    let mut n = 0usize;
    for s in scores {
        for (acc, v) in sum.iter_mut().zip([s.toward, s.away, s.meaning, s.joint, s.fluency]) {
            *acc += v;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::domain("no scores to aggregate"));
    }
    let m = sum.map(|v| v / n as f64);
    Ok(ScoreReport {
        toward: m[0],
        away: m[1],
        meaning: m[2],
        joint: m[3],
        fluency: m[4],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub target_id: String,
    pub n: usize,
    pub mean: ScoreReport,
}

/// Per-instance scores of one variant and seed, with aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub method: String,
    pub granularity: Option<Granularity>,
    pub k: usize,
    pub seed: u64,
    pub rows: Vec<ScoreRow>,
    pub per_target: Vec<TargetSummary>,
    /// Field-wise means; `mean.joint` is the mean of per-instance joints.
    pub mean: ScoreReport,
    /// `joint(mean.toward, mean.meaning)`, kept for comparison.
    pub joint_of_means: f64,
}

impl GridReport {
    pub fn new(
        method: impl Into<String>,
        granularity: Option<Granularity>,
        k: usize,
        seed: u64,
        rows: Vec<ScoreRow>,
    ) -> Result<Self> {
        let (per_target, mean, joint_of_means) = aggregate(&rows)?;
        Ok(Self {
            method: method.into(),
            granularity,
            k,
            seed,
            rows,
            per_target,
            mean,
            joint_of_means,
        })
    }

    pub fn for_method(
        method: Method,
        granularity: Granularity,
        k: usize,
        seed: u64,
        rows: Vec<ScoreRow>,
    ) -> Result<Self> {
        Self::new(method.as_str(), Some(granularity), k, seed, rows)
    }

    /// Recomputes the aggregates from the rows and compares.
    pub fn check_consistency(&self) -> Result<()> {
        let (per_target, mean, jom) = aggregate(&self.rows)?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
        let same = |a: &ScoreReport, b: &ScoreReport| {
            close(a.toward, b.toward)
                && close(a.away, b.away)
                && close(a.meaning, b.meaning)
                && close(a.joint, b.joint)
                && close(a.fluency, b.fluency)
        };
        let targets_ok = per_target.len() == self.per_target.len()
            && per_target
                .iter()
                .zip(&self.per_target)
                .all(|(a, b)| a.target_id == b.target_id && a.n == b.n && same(&a.mean, &b.mean));
        if !(targets_ok && same(&mean, &self.mean) && close(jom, self.joint_of_means)) {
            return Err(Error::format("report aggregates do not match its rows"));
        }
        Ok(())
    }

    pub fn target(&self, id: &str) -> Option<&TargetSummary> {
        self.per_target.iter().find(|t| t.target_id == id)
    }
}

fn aggregate(rows: &[ScoreRow]) -> Result<(Vec<TargetSummary>, ScoreReport, f64)> {
    let mut targets: Vec<&str> = rows.iter().map(|r| r.target_author.as_str()).collect();
    targets.sort_unstable();
    targets.dedup();
    let per_target = targets
        .into_iter()
        .map(|t| {
            let scores: Vec<&ScoreReport> = rows
                .iter()
                .filter(|r| r.target_author == t)
                .map(|r| &r.scores)
                .collect();
            Ok(TargetSummary {
                target_id: t.to_string(),
                n: scores.len(),
                mean: mean_scores(scores)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = mean_scores(rows.iter().map(|r| &r.scores))?;
    Ok((per_target, mean, joint(mean.toward, mean.meaning)))
}

/// One line of a k sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub granularity: String,
    pub k: usize,
    pub joint: f64,
    pub toward: f64,
    pub meaning: f64,
    pub wallclock_ms: Option<f64>,
}

pub const SWEEP_CSV_HEADER: &str = "method,granularity,k,joint,toward,meaning,wallclock_ms";

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\r\n");
    for r in rows {
        let wall = r.wallclock_ms.map(|w| format!("{w:.1}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{wall}\r\n",
            csv_field(&r.method),
            csv_field(&r.granularity),
            r.k,
            r.joint,
            r.toward,
            r.meaning
        ));
    }
    out
}

/// Per-layer mean and population std of the weights over every adapter row
/// of every given weights matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStat {
    pub layer: usize,
    pub mean: f64,
    pub std: f64,
}

pub fn layer_stats(weights: &[&MixWeights]) -> Result<Vec<LayerStat>> {
    let first = weights
        .first()
        .ok_or_else(|| Error::domain("no weights to summarize"))?;
    let n_layers = first.n_layers();
    if weights.iter().any(|w| w.n_layers() != n_layers) {
        return Err(Error::config("weights disagree on the number of layers"));
    }
    Ok((0..n_layers)
        .map(|j| {
            let vals: Vec<f64> = weights
                .iter()
                .flat_map(|w| (0..w.n_adapters()).map(move |i| w.get(i, j)))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            LayerStat {
                layer: j,
                mean,
                std: var.sqrt(),
            }
        })
        .collect())
}

pub const LAYER_CSV_HEADER: &str = "layer,mean,std";

pub fn layer_stats_to_csv(stats: &[LayerStat]) -> String {
    let mut out = format!("{LAYER_CSV_HEADER}\r\n");
    for s in stats {
        out.push_str(&format!("{},{},{}\r\n", s.layer, s.mean, s.std));
    }
    out
}

/// Largest `|mean|` over layers divided by the median `|mean|`.
pub fn layer_peak_ratio(stats: &[LayerStat]) -> f64 {
    let mut abs: Vec<f64> = stats.iter().map(|s| s.mean.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len();
    if n == 0 {
        return 0.0;
    }
    let median = if n % 2 == 1 {
        abs[n / 2]
    } else {
        0.5 * (abs[n / 2 - 1] + abs[n / 2])
    };
    let max = abs[n - 1];
    if median == 0.0 {
        if max > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        max / median
    }
}

/// Variance across layers of the per-layer means.
pub fn layer_variance(stats: &[LayerStat]) -> f64 {
    let n = stats.len() as f64;
    let mean = stats.iter().map(|s| s.mean).sum::<f64>() / n;
    stats.iter().map(|s| (s.mean - mean) * (s.mean - mean)).sum::<f64>() / n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, target: &str, t: f64, m: f64) -> ScoreRow {
        ScoreRow {
            pair_id: id.into(),
            source_author: "src00".into(),
            target_author: target.into(),
            scores: ScoreReport::new(t, 0.5, m, 0.3),
        }
    }

    #[test]
    fn mean_of_joints_differs_from_joint_of_means() {
        let rows = vec![row("a", "tgt00", 1.0, 0.0), row("b", "tgt00", 0.0, 1.0)];
        let r = GridReport::new("grpo", Some(Granularity::Layer), 2, 41, rows).unwrap();
        assert_eq!(r.mean.joint, 0.0);
        assert!((r.joint_of_means - 0.5).abs() < 1e-15);
        r.check_consistency().unwrap();
        let mut tampered = r.clone();
        tampered.rows[0].scores.joint = 0.9;
        assert!(tampered.check_consistency().is_err());
    }

    #[test]
    fn per_target_means_are_sorted_by_id() {
        let rows = vec![
            row("a", "tgt01", 0.25, 1.0),
            row("b", "tgt00", 1.0, 1.0),
            row("c", "tgt01", 0.25, 1.0),
        ];
        let r = GridReport::new("single", None, 1, 1, rows).unwrap();
        assert_eq!(r.per_target[0].target_id, "tgt00");
        assert_eq!(r.target("tgt01").unwrap().n, 2);
        assert!((r.target("tgt01").unwrap().mean.joint - 0.5).abs() < 1e-15);
        assert!(GridReport::new("x", None, 1, 1, vec![]).is_err());
    }

    #[test]
    fn symmetric_weights_average_to_zero() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let w = MixWeights::new(
            Granularity::Layer,
            ids.clone(),
            crate::math::DenseMatrix::new(2, 2, vec![0.7, 0.2, -0.7, 0.2]).unwrap(),
        )
        .unwrap();
        let stats = layer_stats(&[&w]).unwrap();
        assert_eq!(stats[0].mean, 0.0);
        assert!((stats[0].std - 0.7).abs() < 1e-15);
        assert!((stats[1].mean - 0.2).abs() < 1e-15);
        assert_eq!(layer_peak_ratio(&stats), 2.0);
    }

    #[test]
    fn peak_ratio_and_variance() {
        let mk = |means: &[f64]| -> Vec<LayerStat> {
            means
                .iter()
                .enumerate()
                .map(|(layer, &mean)| LayerStat { layer, mean, std: 0.0 })
                .collect()
        };
        assert_eq!(layer_peak_ratio(&mk(&[0.25, -0.25, 0.75])), 3.0);
        assert_eq!(layer_peak_ratio(&mk(&[0.0, 0.0, 0.0])), 0.0);
        assert!((layer_variance(&mk(&[1.0, -1.0])) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sweep_csv_shape() {
        let rows = [SweepRow {
            method: "grpo".into(),
            granularity: "layer".into(),
            k: 2,
            joint: 0.25,
            toward: 0.5,
            meaning: 0.125,
            wallclock_ms: None,
        }];
        assert_eq!(
            sweep_to_csv(&rows),
            "method,granularity,k,joint,toward,meaning,wallclock_ms\r\ngrpo,layer,2,0.25,0.5,0.125,\r\n"
        );
    }
}

//! The four-arm spatial-augmentation comparison on held-out poses.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use latentseg::labels::LabelTable;
use latentseg::metrics::{benjamini_hochberg, wilcoxon_signed_rank};
use latentseg::network::{checkpoint, Network, Variant};
use latentseg::phantom::Split;
use latentseg::volume::Plane;
use rayon::prelude::*;

use crate::config::{Arm, RunConfig};
use crate::data::{load_split, Subject};
use crate::error::Result;
use crate::eval::{compare, evaluate, reference_cases, Case, Comparison, MetricsReport};
use crate::infer::{infer_volume, ViewAggregationSpec};
use crate::train::{train_plane, PlaneRun};

pub const SUMMARY_HEADER: &str = "# latentseg-ablation v1";
pub const SIGNIFICANCE_HEADER: &str = "# latentseg-ablation-significance v1";
pub const AGGREGATION_HEADER: &str = "# latentseg-aggregation v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArmSpec {
    pub name: &'static str,
    pub variant: Variant,
    pub arm: Arm,
}

pub const ARMS: [ArmSpec; 4] = [
    ArmSpec {
        name: "cnn*+exa",
        variant: Variant::CnnStar,
        arm: Arm::Exa,
    },
    ArmSpec {
        name: "vinn+exa",
        variant: Variant::Vinn,
        arm: Arm::Exa,
    },
    ArmSpec {
        name: "vinna",
        variant: Variant::Vinna,
        arm: Arm::Internal,
    },
    ArmSpec {
        name: "vinna+exa",
        variant: Variant::Vinna,
        arm: Arm::InternalExa,
    },
];

/// Index of the arm whose extra planes feed the aggregation comparison.
pub const AGGREGATION_ARM: usize = 2;

fn dir_name(name: &str) -> String {
    name.replace('*', "star").replace('+', "_")
}

/// Run configuration of one arm derived from the shared base.
pub fn arm_config(base: &RunConfig, spec: &ArmSpec, aggregate: bool) -> RunConfig {
    let mut cfg = base.clone();
    cfg.variant = spec.variant;
    cfg.arm = spec.arm;
    // Without a resampling front end, image-space zoom is the only way the
    // resolution-ignorant network sees varied scales.
    cfg.augment.external.scale = spec.variant == Variant::CnnStar;
    cfg.planes = if aggregate {
        let mut p = vec![base.ablation.plane];
        p.extend(
            base.ablation
                .aggregate_planes
                .iter()
                .filter(|&&q| q != base.ablation.plane),
        );
        p
    } else {
        vec![base.ablation.plane]
    };
    cfg
}

#[derive(Debug, Clone)]
pub struct ArmResult {
    pub spec: ArmSpec,
    pub runs: Vec<PlaneRun>,
    /// Single-plane predictions of the primary plane.
    pub report: MetricsReport,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pairwise {
    pub a: String,
    pub b: String,
    pub mean_diff: f64,
    pub p: Option<f64>,
    pub p_adj: Option<f64>,
    pub rejected: bool,
}

#[derive(Debug, Clone)]
pub struct AggregationResult {
    pub planes: Vec<(Plane, MetricsReport)>,
    pub aggregated: MetricsReport,
}

impl AggregationResult {
    pub fn best_single(&self) -> (Plane, f64) {
        self.planes
            .iter()
            .map(|(p, r)| (*p, r.mean_dsc()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one plane")
    }
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub arms: Vec<ArmResult>,
    /// Subject-mean DSC tests for every arm pair, BH-corrected across pairs.
    pub pairwise: Vec<Pairwise>,
    /// Per-structure tests of the internal-augmentation arm against each other arm.
    pub comparisons: Vec<Comparison>,
    pub aggregation: Option<AggregationResult>,
    pub seconds: f64,
}

impl AblationReport {
    pub fn arm(&self, name: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.spec.name == name)
    }

    pub fn pair(&self, a: &str, b: &str) -> Option<&Pairwise> {
        self.pairwise
            .iter()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
    }

    pub fn summary_tsv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        writeln!(buf, "{SUMMARY_HEADER}")?;
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_writer(&mut buf);
        w.write_record(["arm", "res", "group", "dsc", "asd"])?;
        let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        for a in &self.arms {
            let mut scopes = vec![("all".to_string(), a.report.clone())];
            scopes.extend(
                a.report
                    .resolutions()
                    .into_iter()
                    .map(|r| (r.to_string(), a.report.at_resolution(r))),
            );
            for (res, rep) in scopes {
                w.write_record([
                    a.spec.name,
                    &res,
                    "all",
                    &rep.mean_dsc().to_string(),
                    &na(rep.mean_asd()),
                ])?;
                for g in rep.group_means() {
                    w.write_record([
                        a.spec.name,
                        &res,
                        g.class.name(),
                        &g.dsc.to_string(),
                        &na(g.asd),
                    ])?;
                }
            }
        }
        drop(w);
        Ok(buf)
    }

    pub fn significance_tsv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        writeln!(buf, "{SIGNIFICANCE_HEADER}")?;
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_writer(&mut buf);
        w.write_record(["a", "b", "mean_dsc_diff", "p", "p_adj", "reject"])?;
        let d = |v: Option<f64>| v.map_or_else(|| "degenerate".to_string(), |x| x.to_string());
        for p in &self.pairwise {
            w.write_record([
                &p.a,
                &p.b,
                &p.mean_diff.to_string(),
                &d(p.p),
                &d(p.p_adj),
                &p.rejected.to_string(),
            ])?;
        }
        drop(w);
        Ok(buf)
    }

    pub fn aggregation_tsv(&self) -> Result<Option<Vec<u8>>> {
        let Some(agg) = &self.aggregation else {
            return Ok(None);
        };
        let mut buf = Vec::new();
        writeln!(buf, "{AGGREGATION_HEADER}")?;
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_writer(&mut buf);
        w.write_record(["source", "dsc"])?;
        for (p, r) in &agg.planes {
            w.write_record([p.name(), &r.mean_dsc().to_string()])?;
        }
        w.write_record(["aggregated", &agg.aggregated.mean_dsc().to_string()])?;
        drop(w);
        Ok(Some(buf))
    }

    /// Writes the summary, significance and aggregation tables plus every
    /// per-arm report into `out`.
    pub fn save(&self, out: &Path) -> Result<()> {
        std::fs::write(out.join("summary.tsv"), self.summary_tsv()?)?;
        std::fs::write(out.join("significance.tsv"), self.significance_tsv()?)?;
        if let Some(t) = self.aggregation_tsv()? {
            std::fs::write(out.join("aggregation.tsv"), t)?;
        }
        for a in &self.arms {
            a.report
                .save(&out.join(dir_name(a.spec.name)).join("report.tsv"))?;
        }
        for c in &self.comparisons {
            let name = format!("compare_{}_vs_{}.tsv", dir_name(&c.a), dir_name(&c.b));
            std::fs::write(out.join(name), c.to_tsv()?)?;
        }
        if let Some(agg) = &self.aggregation {
            let dir = out.join(dir_name(ARMS[AGGREGATION_ARM].name));
            agg.aggregated.save(&dir.join("report_aggregated.tsv"))?;
            for (p, r) in &agg.planes {
                r.save(&dir.join(format!("report_{}.tsv", p.name())))?;
            }
        }
        Ok(())
    }
}

fn predict_all(
    nets: &[Network<f32>],
    test: &[Subject],
    spec: &ViewAggregationSpec,
    context: usize,
    label: &str,
) -> Result<Vec<crate::infer::Inference>> {
    let refs: Vec<&Network<f32>> = nets.iter().collect();
    test.par_iter()
        .map(|s| infer_volume(&refs, &s.image, spec, context))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| crate::error::HarnessError::Data(format!("{label}: {e}")))
}

fn cases(
    test: &[Subject],
    vols: impl Iterator<Item = latentseg::volume::LabelVolume>,
) -> Vec<Case> {
    test.iter()
        .zip(vols)
        .map(|(s, v)| Case {
            subject: s.entry.id.clone(),
            res: s.entry.res,
            volume: v,
        })
        .collect()
}

/// Trains all four arms with the base seed and budget, evaluates them on
/// the test split and writes the tables into `out`.
pub fn ablate(
    base: &RunConfig,
    out: &Path,
    mut progress: impl FnMut(&str),
) -> Result<AblationReport> {
    let start = Instant::now();
    base.validate()?;
    let train = load_split(&base.manifest, Split::Train)?;
    let val = load_split(&base.manifest, Split::Val)?;
    let test = load_split(&base.manifest, Split::Test)?;
    let table = LabelTable::phantom_default();
    let spec = ViewAggregationSpec::new(&base.aggregation, &table)?;
    let references = reference_cases(&test);
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), base.to_toml())?;

    let mut arms = Vec::new();
    let mut aggregation = None;
    for (k, a) in ARMS.iter().enumerate() {
        let t0 = Instant::now();
        let cfg = arm_config(base, a, k == AGGREGATION_ARM);
        let dir = out.join(dir_name(a.name));
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
        let mut runs = Vec::new();
        for &plane in &cfg.planes {
            let run = train_plane(&cfg, plane, &train, &val, &table, &dir)?;
            progress(&format!(
                "{} {}: best epoch {} val dsc {:.2} ({:.0} s)",
                a.name,
                plane,
                run.best_epoch,
                run.best_val_dsc,
                t0.elapsed().as_secs_f64()
            ));
            runs.push(run);
        }
        let nets = runs
            .iter()
            .map(|r| checkpoint::load::<f32>(&r.checkpoint))
            .collect::<latentseg::Result<Vec<_>>>()?;
        let primary = predict_all(&nets[..1], &test, &spec, cfg.network.context, a.name)?;
        let report = evaluate(
            a.name,
            &cases(&test, primary.into_iter().map(|i| i.aggregated)),
            &references,
            None,
            &table,
        )?;
        if nets.len() > 1 {
            let all = predict_all(&nets, &test, &spec, cfg.network.context, a.name)?;
            let mut planes = Vec::new();
            for (q, &plane) in cfg.planes.iter().enumerate() {
                let vols = all.iter().map(|i| i.per_plane[q].1.clone());
                planes.push((
                    plane,
                    evaluate(
                        &format!("{} {plane}", a.name),
                        &cases(&test, vols),
                        &references,
                        None,
                        &table,
                    )?,
                ));
            }
            let aggregated = evaluate(
                &format!("{} aggregated", a.name),
                &cases(&test, all.into_iter().map(|i| i.aggregated)),
                &references,
                None,
                &table,
            )?;
            aggregation = Some(AggregationResult { planes, aggregated });
        }
        progress(&format!(
            "{}: test mean dsc {:.2}",
            a.name,
            report.mean_dsc()
        ));
        arms.push(ArmResult {
            spec: *a,
            runs,
            report,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }

    let mut pairs = Vec::new();
    for i in 0..arms.len() {
        for j in i + 1..arms.len() {
            let (x, y) = (
                arms[i].report.subject_mean_dsc(),
                arms[j].report.subject_mean_dsc(),
            );
            let p = wilcoxon_signed_rank(&x, &y)?.p;
            let mean_diff = x.iter().zip(&y).map(|(a, b)| a - b).sum::<f64>() / x.len() as f64;
            pairs.push((i, j, mean_diff, p));
        }
    }
    let defined: Vec<f64> = pairs.iter().filter_map(|p| p.3).collect();
    let bh = benjamini_hochberg(&defined, base.ablation.alpha)?;
    let mut k = 0;
    let pairwise = pairs
        .into_iter()
        .map(|(i, j, mean_diff, p)| {
            let (p_adj, rejected) = match p {
                Some(_) => {
                    k += 1;
                    (Some(bh.adjusted[k - 1]), bh.rejected[k - 1])
                }
                None => (None, false),
            };
            Pairwise {
                a: arms[i].spec.name.into(),
                b: arms[j].spec.name.into(),
                mean_diff,
                p,
                p_adj,
                rejected,
            }
        })
        .collect();
    let comparisons = (0..arms.len())
        .filter(|&i| i != AGGREGATION_ARM)
        .map(|i| {
            compare(
                &arms[AGGREGATION_ARM].report,
                &arms[i].report,
                base.ablation.alpha,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let report = AblationReport {
        arms,
        pairwise,
        comparisons,
        aggregation,
        seconds: start.elapsed().as_secs_f64(),
    };
    report.save(out)?;
    Ok(report)
}

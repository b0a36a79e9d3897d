//! Scoring segmentations against references and comparing methods.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use latentseg::labels::{harmonize, HarmonizationMap, LabelTable, TissueClass};
use latentseg::metrics::{paired_tests, score_structure, wilcoxon_signed_rank, PairedTestResult};
use latentseg::volume::LabelVolume;
use rayon::prelude::*;

use crate::error::Result;

pub const REPORT_HEADER: &str = "# latentseg-metrics v1";
pub const COMPARISON_HEADER: &str = "# latentseg-comparison v1";

/// One segmentation to score.
#[derive(Debug, Clone)]
pub struct Case {
    pub subject: String,
    pub res: f64,
    pub volume: LabelVolume,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub subject: String,
    pub res: f64,
    pub label: u16,
    pub class: TissueClass,
    pub dsc: f64,
    pub asd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMean {
    pub class: TissueClass,
    pub dsc: f64,
    /// Over rows where ASD is defined.
    pub asd: Option<f64>,
}

/// Per-subject, per-structure scores of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub subjects: Vec<String>,
    pub structures: Vec<u16>,
    /// Subject-major, structures in `structures` order.
    pub rows: Vec<ScoreRow>,
}

fn mean(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = v
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn structures(table: &LabelTable, map: Option<&HarmonizationMap>) -> Vec<u16> {
    match map {
        None => table
            .entries()
            .iter()
            .map(|e| e.id)
            .filter(|&id| id != 0)
            .collect(),
        Some(m) => {
            let ids: BTreeSet<u16> = m
                .keep
                .iter()
                .copied()
                .chain(m.merges.iter().map(|x| x.1))
                .collect();
            ids.into_iter()
                .filter(|&id| id != 0 && !m.removals.contains(&id))
                .collect()
        }
    }
}

/// Scores each prediction against the reference of the same subject.
/// Subjects must appear in the same order in both lists.
pub fn evaluate(
    method: &str,
    predictions: &[Case],
    references: &[Case],
    harmonization: Option<&HarmonizationMap>,
    table: &LabelTable,
) -> Result<MetricsReport> {
    if predictions.len() != references.len()
        || predictions
            .iter()
            .zip(references)
            .any(|(p, r)| p.subject != r.subject)
    {
        return Err(latentseg::Error::InvalidArgument(
            "prediction and reference subject lists differ".into(),
        )
        .into());
    }
    let ids = structures(table, harmonization);
    let per_subject = predictions
        .par_iter()
        .zip(references.par_iter())
        .map(|(p, r)| {
            let (pv, rv) = match harmonization {
                Some(m) => (
                    harmonize(&p.volume, m, Some(&r.volume))?,
                    harmonize(&r.volume, m, Some(&r.volume))?,
                ),
                None => (p.volume.clone(), r.volume.clone()),
            };
            ids.iter()
                .map(|&id| {
                    let s = score_structure(&pv, &rv, id)?;
                    Ok(ScoreRow {
                        subject: p.subject.clone(),
                        res: r.res,
                        label: id,
                        class: table.class_of(id).unwrap_or(TissueClass::Subcortical),
                        dsc: s.dsc,
                        asd: s.asd,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        method: method.to_string(),
        subjects: predictions.iter().map(|p| p.subject.clone()).collect(),
        structures: ids,
        rows: per_subject.into_iter().flatten().collect(),
    })
}

impl MetricsReport {
    pub fn mean_dsc(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.dsc)).unwrap_or(f64::NAN)
    }

    pub fn mean_asd(&self) -> Option<f64> {
        mean(self.rows.iter().filter_map(|r| r.asd))
    }

    /// Mean DSC over structures, one value per subject.
    pub fn subject_mean_dsc(&self) -> Vec<f64> {
        self.rows
            .chunks(self.structures.len())
            .map(|c| mean(c.iter().map(|r| r.dsc)).unwrap_or(f64::NAN))
            .collect()
    }

    pub fn group_means(&self) -> Vec<GroupMean> {
        let classes: BTreeSet<TissueClass> = self.rows.iter().map(|r| r.class).collect();
        classes
            .into_iter()
            .map(|class| {
                let rows = || self.rows.iter().filter(move |r| r.class == class);
                GroupMean {
                    class,
                    dsc: mean(rows().map(|r| r.dsc)).unwrap_or(f64::NAN),
                    asd: mean(rows().filter_map(|r| r.asd)),
                }
            })
            .collect()
    }

    /// Group means restricted to subjects imaged at `res`.
    pub fn at_resolution(&self, res: f64) -> MetricsReport {
        let rows: Vec<ScoreRow> = self.rows.iter().filter(|r| r.res == res).cloned().collect();
        let mut subjects: Vec<String> = rows.iter().map(|r| r.subject.clone()).collect();
        subjects.dedup();
        MetricsReport {
            method: self.method.clone(),
            subjects,
            structures: self.structures.clone(),
            rows,
        }
    }

    pub fn resolutions(&self) -> Vec<f64> {
        let mut r: Vec<f64> = self.rows.iter().map(|r| r.res).collect();
        r.sort_by(f64::total_cmp);
        r.dedup();
        r
    }

    /// Per-structure subject scores, `[structure][subject]`.
    fn dsc_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.structures.len();
        (0..n)
            .map(|k| self.rows.iter().skip(k).step_by(n).map(|r| r.dsc).collect())
            .collect()
    }

    fn asd_matrix(&self) -> Vec<Vec<Option<f64>>> {
        let n = self.structures.len();
        (0..n)
            .map(|k| self.rows.iter().skip(k).step_by(n).map(|r| r.asd).collect())
            .collect()
    }

    pub fn to_tsv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        writeln!(buf, "{REPORT_HEADER}")?;
        writeln!(buf, "# method {}", self.method)?;
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_writer(&mut buf);
        w.write_record(["subject", "res", "label", "class", "dsc", "asd"])?;
        for r in &self.rows {
            w.write_record([
                r.subject.clone(),
                r.res.to_string(),
                r.label.to_string(),
                r.class.name().to_string(),
                r.dsc.to_string(),
                r.asd.map_or_else(|| "NA".to_string(), |a| a.to_string()),
            ])?;
        }
        drop(w);
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()?)?;
        Ok(())
    }
}

/// Paired per-structure comparison of two methods on the same subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub structures: Vec<u16>,
    pub dsc: PairedTestResult,
    pub asd: PairedTestResult,
    /// Wilcoxon on per-subject mean DSC; `None` when all differences vanish.
    pub subject_mean_p: Option<f64>,
}

pub fn compare(a: &MetricsReport, b: &MetricsReport, alpha: f64) -> Result<Comparison> {
    if a.subjects != b.subjects || a.structures != b.structures {
        return Err(latentseg::Error::InvalidArgument(
            "reports cover different subjects or structures".into(),
        )
        .into());
    }
    let dsc = paired_tests(&a.dsc_matrix(), &b.dsc_matrix(), alpha)?;
    // ASD pairs are used only where both sides are defined.
    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    for (ra, rb) in a.asd_matrix().into_iter().zip(b.asd_matrix()) {
        let (pa, pb): (Vec<f64>, Vec<f64>) = ra
            .into_iter()
            .zip(rb)
            .filter_map(|(x, y)| Some((x?, y?)))
            .unzip();
        xa.push(pa);
        xb.push(pb);
    }
    let asd = paired_tests(&xa, &xb, alpha)?;
    let subject_mean_p = wilcoxon_signed_rank(&a.subject_mean_dsc(), &b.subject_mean_dsc())?.p;
    Ok(Comparison {
        a: a.method.clone(),
        b: b.method.clone(),
        structures: a.structures.clone(),
        dsc,
        asd,
        subject_mean_p,
    })
}

fn opt(p: Option<f64>) -> String {
    p.map_or_else(|| "degenerate".to_string(), |v| v.to_string())
}

impl Comparison {
    /// True when every per-structure test is degenerate (no non-zero differences).
    pub fn all_degenerate(&self) -> bool {
        self.dsc
            .raw_p
            .iter()
            .chain(&self.asd.raw_p)
            .all(Option::is_none)
            && self.subject_mean_p.is_none()
    }

    pub fn to_tsv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        writeln!(buf, "{COMPARISON_HEADER}")?;
        writeln!(
            buf,
            "# {} vs {}; subject-mean dsc p {}",
            self.a,
            self.b,
            opt(self.subject_mean_p)
        )?;
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_writer(&mut buf);
        w.write_record([
            "label",
            "dsc_p",
            "dsc_p_adj",
            "dsc_reject",
            "asd_p",
            "asd_p_adj",
            "asd_reject",
        ])?;
        for (k, id) in self.structures.iter().enumerate() {
            w.write_record([
                id.to_string(),
                opt(self.dsc.raw_p[k]),
                opt(self.dsc.adjusted_p[k]),
                self.dsc.rejected[k].to_string(),
                opt(self.asd.raw_p[k]),
                opt(self.asd.adjusted_p[k]),
                self.asd.rejected[k].to_string(),
            ])?;
        }
        drop(w);
        Ok(buf)
    }
}

/// Reference cases from loaded subjects.
pub fn reference_cases(subjects: &[crate::data::Subject]) -> Vec<Case> {
    subjects
        .iter()
        .map(|s| Case {
            subject: s.entry.id.clone(),
            res: s.entry.res,
            volume: s.labels.clone(),
        })
        .collect()
}

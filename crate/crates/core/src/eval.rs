//! Instance-level ROC/AUC, cross-domain AUC matrices and summary tables.
//!
//! AUC is the probability that a random seen instance scores better than a
//! random unseen one, ties counted half. It is computed from tie-grouped
//! ranks in integer arithmetic, so the result is bit-identical to the
//! pairwise count `(2·wins + ties) / (2·n_seen·n_unseen)`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{metric_name, MetricFamily, MetricId, Orientation, ScoreVector};
use crate::model::ContaminationLabel;

/// AUCs strictly above this percentage are highlighted in reports.
pub const HIGHLIGHT_ABOVE: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucResult {
    #[serde(with = "metric_name")]
    pub metric: MetricId,
    pub orientation: Orientation,
    pub auc: f64,
    pub n_seen: usize,
    pub n_unseen: usize,
    pub roc_points: Vec<(f64, f64)>,
}

impl AucResult {
    pub fn percent(&self) -> f64 {
        self.auc * 100.0
    }
}

/// Per tie group of the orientation-adjusted score, best first: (seen, unseen).
fn tie_groups(scores: &ScoreVector) -> Result<(Vec<(u64, u64)>, u64, u64)> {
    let sign = match scores.orientation {
        Orientation::HigherMeansSeen => 1.0,
        Orientation::LowerMeansSeen => -1.0,
    };
    let mut pts: Vec<(f64, bool)> = scores
        .entries
        .iter()
        .map(|e| (sign * e.value, e.label.is_seen()))
        .collect();
    if let Some(bad) = pts.iter().find(|p| !p.0.is_finite()) {
        return Err(Error::Parameter(format!("non-finite score {}", bad.0)));
    }
    let n_seen = pts.iter().filter(|p| p.1).count() as u64;
    let n_unseen = pts.len() as u64 - n_seen;
    if n_seen == 0 || n_unseen == 0 {
        return Err(Error::Degenerate(format!(
            "{} needs at least one seen and one unseen score, got {n_seen} seen and {n_unseen} unseen",
            scores.metric
        )));
    }
    // partial_cmp, not total_cmp: -0.0 and 0.0 must tie.
    pts.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let mut groups = Vec::new();
    let mut i = 0;
    while i < pts.len() {
        let v = pts[i].0;
        let (mut s, mut u) = (0, 0);
        while i < pts.len() && pts[i].0 == v {
            if pts[i].1 {
                s += 1;
            } else {
                u += 1;
            }
            i += 1;
        }
        groups.push((s, u));
    }
    Ok((groups, n_seen, n_unseen))
}

/// Twice the Mann–Whitney U for the seen class.
fn doubled_u(groups: &[(u64, u64)], n_unseen: u64) -> u128 {
    // groups are best first, so unseen strictly below a group are those not yet passed
    let mut unseen_above = 0u64;
    let mut u2 = 0u128;
    for &(s, u) in groups {
        let below = n_unseen - unseen_above - u;
        u2 += s as u128 * (2 * below as u128 + u as u128);
        unseen_above += u;
    }
    u2
}

fn roc_from_groups(groups: &[(u64, u64)], n_seen: u64, n_unseen: u64) -> Vec<(f64, f64)> {
    let mut points = Vec::with_capacity(groups.len() + 1);
    points.push((0.0, 0.0));
    let (mut tp, mut fp) = (0u64, 0u64);
    for &(s, u) in groups {
        tp += s;
        fp += u;
        points.push((fp as f64 / n_unseen as f64, tp as f64 / n_seen as f64));
    }
    points
}

pub fn auc(scores: &ScoreVector) -> Result<AucResult> {
    let (groups, n_seen, n_unseen) = tie_groups(scores)?;
    let u2 = doubled_u(&groups, n_unseen);
    let auc = u2 as f64 / (2 * n_seen as u128 * n_unseen as u128) as f64;
    Ok(AucResult {
        metric: scores.metric,
        orientation: scores.orientation,
        auc,
        n_seen: n_seen as usize,
        n_unseen: n_unseen as usize,
        roc_points: roc_from_groups(&groups, n_seen, n_unseen),
    })
}

/// Threshold sweep from the strictest threshold down, one point per distinct score.
pub fn roc_curve(scores: &ScoreVector) -> Result<Vec<(f64, f64)>> {
    let (groups, n_seen, n_unseen) = tie_groups(scores)?;
    Ok(roc_from_groups(&groups, n_seen, n_unseen))
}

/// Area under a piecewise-linear curve through `points`.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// The O(n_seen · n_unseen) definition, for cross-checking.
pub fn pairwise_auc(seen: &[f64], unseen: &[f64], orientation: Orientation) -> Result<f64> {
    if seen.is_empty() || unseen.is_empty() {
        return Err(Error::Degenerate("pairwise AUC needs both classes".into()));
    }
    let mut twice = 0u128;
    for &s in seen {
        for &u in unseen {
            let better = match orientation {
                Orientation::HigherMeansSeen => s > u,
                Orientation::LowerMeansSeen => s < u,
            };
            twice += if better { 2 } else if s == u { 1 } else { 0 };
        }
    }
    Ok(twice as f64 / (2 * seen.len() as u128 * unseen.len() as u128) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainCell {
    pub seen_domain: String,
    pub unseen_domain: String,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainMatrix {
    #[serde(with = "metric_name")]
    pub metric: MetricId,
    /// Row and column order, ascending by `ordering_key`.
    pub domains: Vec<String>,
    /// Mean seen-PPL of each domain in `domains` order.
    pub ordering_key: Vec<f64>,
    /// Row-major: row = seen domain, column = unseen domain.
    pub cells: Vec<CrossDomainCell>,
}

/// Plain row/column/value triple for plotting tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapData {
    pub title: String,
    pub row_label: String,
    pub column_label: String,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CrossDomainMatrix {
    pub fn size(&self) -> usize {
        self.domains.len()
    }

    pub fn cell(&self, seen: usize, unseen: usize) -> &CrossDomainCell {
        &self.cells[seen * self.size() + unseen]
    }

    pub fn heatmap(&self) -> HeatmapData {
        let n = self.size();
        HeatmapData {
            title: format!("{} AUC", self.metric),
            row_label: "seen domain".into(),
            column_label: "unseen domain".into(),
            rows: self.domains.clone(),
            columns: self.domains.clone(),
            values: (0..n).map(|i| (0..n).map(|j| self.cell(i, j).auc).collect()).collect(),
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["seen \\ unseen".to_owned()];
        header.extend(self.domains.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (i, d) in self.domains.iter().enumerate() {
            let mut row = vec![d.clone()];
            row.extend((0..self.size()).map(|j| format!("{:.1}", self.cell(i, j).auc * 100.0)));
            w.write_record(&row).map_err(csv_err)?;
        }
        finish_csv(w)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} AUC (rows: seen domain, columns: unseen domain)\n", self.metric);
        let width = self.domains.iter().map(String::len).max().unwrap_or(0).max(6);
        let _ = write!(out, "{:width$}", "");
        for d in &self.domains {
            let _ = write!(out, "  {d:>width$}");
        }
        out.push('\n');
        for (i, d) in self.domains.iter().enumerate() {
            let _ = write!(out, "{d:width$}");
            for j in 0..self.size() {
                let _ = write!(out, "  {:>width$.1}", self.cell(i, j).auc * 100.0);
            }
            out.push('\n');
        }
        out
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Cell (i, j) is the AUC of domain i's seen scores against domain j's unseen scores.
///
/// Domains are ordered by ascending mean seen-PPL, taken from `seen_ppl` or,
/// when that is `None`, from the scores themselves (which must then be PPL).
/// Ties in the ordering fall back to the domain name.
pub fn cross_domain_matrix(
    scores_by_domain: &BTreeMap<String, ScoreVector>,
    seen_ppl: Option<&BTreeMap<String, f64>>,
) -> Result<CrossDomainMatrix> {
    if scores_by_domain.len() < 2 {
        return Err(Error::Config(format!(
            "cross-domain matrix needs at least 2 domains, got {}",
            scores_by_domain.len()
        )));
    }
    let first = scores_by_domain.values().next().expect("non-empty");
    let metric = first.metric;
    let mut halves = BTreeMap::new();
    for (domain, v) in scores_by_domain {
        if v.metric != metric || v.orientation != first.orientation {
            return Err(Error::Config(format!(
                "domain `{domain}` holds {} scores but `{}` was expected",
                v.metric, metric
            )));
        }
        let seen = v.seen();
        let unseen = v.unseen();
        for (name, half) in [("seen", &seen), ("unseen", &unseen)] {
            if half.is_empty() {
                return Err(Error::Config(format!("domain `{domain}` has no {name} half")));
            }
        }
        halves.insert(domain.as_str(), (v, seen, unseen));
    }
    let mut order: Vec<(f64, &str)> = Vec::new();
    for (domain, (_, seen, _)) in &halves {
        let key = match seen_ppl {
            Some(map) => *map.get(*domain).ok_or_else(|| {
                Error::Config(format!("no mean seen-PPL given for domain `{domain}`"))
            })?,
            None if metric.family == MetricFamily::PplK => mean(seen),
            None => {
                return Err(Error::Config(format!(
                    "ordering {metric} domains needs their mean seen-PPL"
                )))
            }
        };
        order.push((key, domain));
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let domains: Vec<String> = order.iter().map(|(_, d)| d.to_string()).collect();
    let n = domains.len();
    let cells = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            let (v, seen, _) = &halves[domains[i].as_str()];
            let (_, _, unseen) = &halves[domains[j].as_str()];
            let sv = ScoreVector::from_values(metric, v.orientation, seen, unseen)?;
            Ok(CrossDomainCell {
                seen_domain: domains[i].clone(),
                unseen_domain: domains[j].clone(),
                auc: auc(&sv)?.auc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossDomainMatrix {
        metric,
        ordering_key: order.iter().map(|(k, _)| *k).collect(),
        domains,
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PplStats {
    pub seen_mean: f64,
    pub seen_std: f64,
    pub unseen_mean: f64,
    pub unseen_std: f64,
}

impl PplStats {
    /// Mean and sample standard deviation of each half of a PPL score vector.
    pub fn from_scores(scores: &ScoreVector) -> Result<Self> {
        if scores.metric.family != MetricFamily::PplK {
            return Err(Error::Parameter(format!("PPL statistics need PPL scores, got {}", scores.metric)));
        }
        let seen = scores.values(ContaminationLabel::Seen);
        let unseen = scores.values(ContaminationLabel::Unseen);
        if seen.is_empty() || unseen.is_empty() {
            return Err(Error::Degenerate("PPL statistics need both classes".into()));
        }
        Ok(PplStats {
            seen_mean: mean(&seen),
            seen_std: sample_std(&seen),
            unseen_mean: mean(&unseen),
            unseen_std: sample_std(&unseen),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    /// One entry per table column; `None` where the metric was not run.
    pub aucs: Vec<Option<f64>>,
    pub highlight: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub columns: Vec<String>,
    pub rows: Vec<SummaryRow>,
    /// Mean of each column over the metric rows; every AUC is already oriented.
    pub average: SummaryRow,
    /// Present when the column has PPL scores to summarise.
    pub ppl: Vec<Option<PplStats>>,
}

fn highlighted(auc: Option<f64>) -> bool {
    auc.is_some_and(|a| a * 100.0 > HIGHLIGHT_ABOVE)
}

/// Lays out AUC results with metrics as rows and `columns` (domains, models)
/// as columns, grouped PPL, Min p%, Mem, Entropy, then the other families.
pub fn summary_table(
    columns: &[(String, Vec<AucResult>)],
    ppl: &BTreeMap<String, PplStats>,
) -> SummaryTable {
    let mut metrics: Vec<MetricId> = Vec::new();
    let mut seen_names = BTreeSet::new();
    for (_, results) in columns {
        for r in results {
            if seen_names.insert(r.metric.to_string()) {
                metrics.push(r.metric);
            }
        }
    }
    metrics.sort_by_key(|m| m.sort_key());
    let rows: Vec<SummaryRow> = metrics
        .iter()
        .map(|m| {
            let name = m.to_string();
            let aucs: Vec<Option<f64>> = columns
                .iter()
                .map(|(_, rs)| rs.iter().find(|r| r.metric.to_string() == name).map(|r| r.auc))
                .collect();
            SummaryRow {
                highlight: aucs.iter().map(|a| highlighted(*a)).collect(),
                metric: name,
                aucs,
            }
        })
        .collect();
    let avg: Vec<Option<f64>> = (0..columns.len())
        .map(|c| {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r.aucs[c]).collect();
            (!vals.is_empty()).then(|| mean(&vals))
        })
        .collect();
    SummaryTable {
        columns: columns.iter().map(|(c, _)| c.clone()).collect(),
        average: SummaryRow {
            metric: "Average AUC".into(),
            highlight: avg.iter().map(|a| highlighted(*a)).collect(),
            aucs: avg,
        },
        rows,
        ppl: columns.iter().map(|(c, _)| ppl.get(c).copied()).collect(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn fmt_auc(a: Option<f64>) -> String {
    a.map_or_else(|| "-".into(), |a| format!("{:.1}", a * 100.0))
}

fn fmt_ppl(stats: Option<PplStats>, seen: bool) -> String {
    match stats {
        None => "-".into(),
        Some(s) if seen => format!("{:.2} ± {:.2}", s.seen_mean, s.seen_std),
        Some(s) => format!("{:.2} ± {:.2}", s.unseen_mean, s.unseen_std),
    }
}

impl SummaryTable {
    fn all_rows(&self) -> impl Iterator<Item = &SummaryRow> {
        self.rows.iter().chain(std::iter::once(&self.average))
    }

    fn has_ppl(&self) -> bool {
        self.ppl.iter().any(Option::is_some)
    }

    /// Fixed-width text; highlighted cells carry a trailing `*`.
    pub fn to_text(&self) -> String {
        let mut grid: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["Metric".to_owned()];
        header.extend(self.columns.iter().cloned());
        grid.push(header);
        for row in self.all_rows() {
            let mut line = vec![row.metric.clone()];
            for (a, h) in row.aucs.iter().zip(&row.highlight) {
                line.push(format!("{}{}", fmt_auc(*a), if *h { "*" } else { "" }));
            }
            grid.push(line);
        }
        if self.has_ppl() {
            for (label, seen) in [("PPL seen", true), ("PPL unseen", false)] {
                let mut line = vec![label.to_owned()];
                line.extend(self.ppl.iter().map(|s| fmt_ppl(*s, seen)));
                grid.push(line);
            }
        }
        let ncol = grid[0].len();
        let widths: Vec<usize> = (0..ncol)
            .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, line) in grid.iter().enumerate() {
            for (c, cell) in line.iter().enumerate() {
                let pad = widths[c] - cell.chars().count();
                if c == 0 {
                    out.push_str(cell);
                    out.extend(std::iter::repeat_n(' ', pad));
                } else {
                    out.push_str("  ");
                    out.extend(std::iter::repeat_n(' ', pad));
                    out.push_str(cell);
                }
            }
            out.truncate(out.trim_end().len());
            out.push('\n');
            if i == 0 || i == self.rows.len() {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (ncol - 1)));
                out.push('\n');
            }
        }
        out.push_str(&format!("* AUC > {HIGHLIGHT_ABOVE}\n"));
        out
    }

    /// One CSV row per metric with `<column>` and `<column> highlight` fields.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["metric".to_owned()];
        for c in &self.columns {
            header.push(c.clone());
            header.push(format!("{c} highlight"));
        }
        w.write_record(&header).map_err(csv_err)?;
        for row in self.all_rows() {
            let mut line = vec![row.metric.clone()];
            for (a, h) in row.aucs.iter().zip(&row.highlight) {
                line.push(a.map_or_else(String::new, |a| format!("{:.1}", a * 100.0)));
                line.push(h.to_string());
            }
            w.write_record(&line).map_err(csv_err)?;
        }
        if self.has_ppl() {
            for (label, seen) in [("PPL seen", true), ("PPL unseen", false)] {
                let mut line = vec![label.to_owned()];
                for s in &self.ppl {
                    line.push(s.map_or_else(String::new, |_| fmt_ppl(*s, seen)));
                    line.push(String::new());
                }
                w.write_record(&line).map_err(csv_err)?;
            }
        }
        finish_csv(w)
    }
}

//! Sampled ranking evaluation under leave-one-out.
//!
//! Each evaluated user gets one candidate list: the held-out target plus
//! `eval_negatives` distinct items outside the user's history, shuffled by a
//! seeded stream with the target at a seeded uniform position. Ties in score
//! are broken by candidate index, so a constant scorer ranks the target
//! uniformly over 1..=n+1.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::dataset::{sample_negatives, Group, GroupLabels, InteractionDataset, LeaveOneOutSplit, Phase};
use crate::error::{GraspError, Result};
use crate::model::{Model, SemanticStores};
use crate::rng::{stream, tag};

/// Cutoffs reported everywhere.
pub const KS: [usize; 5] = [1, 3, 5, 10, 20];

/// 1 + (# strictly greater) + (# equal with a smaller index).
pub fn rank_of_target(scores: &[f64], target_index: usize) -> usize {
    let t = scores[target_index];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > t || (s == t && i < target_index))
        .count()
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AtK {
    pub k: usize,
    pub ndcg: f64,
    pub hr: f64,
}

/// Averaged metrics over a population of users. An empty population has no
/// metric rows and is flagged by [`MetricReport::is_empty`].
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MetricReport {
    pub group: String,
    pub n_users: usize,
    pub metrics: Vec<AtK>,
}

impl MetricReport {
    pub fn from_ranks(group: impl Into<String>, ranks: &[usize]) -> Self {
        let n = ranks.len();
        let metrics = if n == 0 {
            Vec::new()
        } else {
            KS.iter()
                .map(|&k| AtK {
                    k,
                    ndcg: ranks.iter().map(|&r| ndcg_at_k(r, k)).sum::<f64>() / n as f64,
                    hr: ranks.iter().map(|&r| hr_at_k(r, k)).sum::<f64>() / n as f64,
                })
                .collect()
        };
        Self {
            group: group.into(),
            n_users: n,
            metrics,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n_users == 0
    }

    fn at(&self, k: usize) -> Option<&AtK> {
        self.metrics.iter().find(|m| m.k == k)
    }

    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.at(k).map(|m| m.ndcg)
    }

    pub fn hr(&self, k: usize) -> Option<f64> {
        self.at(k).map(|m| m.hr)
    }
}

/// Scores candidate items for a user given their input sequence. Higher
/// means more likely; only the order matters.
pub trait Scorer: Sync {
    fn score(&self, user: usize, inputs: &[usize], items: &[usize]) -> Result<Vec<f64>>;
}

impl<F> Scorer for F
where
    F: Fn(usize, &[usize], &[usize]) -> Result<Vec<f64>> + Sync,
{
    fn score(&self, user: usize, inputs: &[usize], items: &[usize]) -> Result<Vec<f64>> {
        self(user, inputs, items)
    }
}

/// Ranks candidates by model logits.
pub struct ModelScorer<'a> {
    pub model: &'a Model,
    pub stores: &'a SemanticStores,
}

impl Scorer for ModelScorer<'_> {
    fn score(&self, user: usize, inputs: &[usize], items: &[usize]) -> Result<Vec<f64>> {
        self.model.score_candidates(self.stores, user, inputs, items)
    }
}

/// One user's fixed evaluation case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalCase {
    pub user: usize,
    pub inputs: Vec<usize>,
    pub target: usize,
    pub candidates: Vec<usize>,
    pub target_index: usize,
}

/// Candidate lists for every evaluable user, drawn once so repeated
/// evaluations (one per epoch) compare like with like.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPlan {
    pub phase: Phase,
    pub cases: Vec<EvalCase>,
    pub skipped: usize,
}

impl EvalPlan {
    pub fn build(
        ds: &InteractionDataset,
        split: &LeaveOneOutSplit,
        phase: Phase,
        eval_negatives: usize,
        seed: u64,
    ) -> Result<Self> {
        let phase_tag = match phase {
            Phase::Valid => tag::EVAL_VALID,
            Phase::Test => tag::EVAL_TEST,
        };
        let cases = split
            .users
            .iter()
            .map(|u| {
                let mut rng = stream(seed, &[phase_tag, u.user as u64]);
                let mut candidates = sample_negatives(ds, u.user, eval_negatives, &mut rng)?;
                candidates.shuffle(&mut rng);
                let target_index = rng.random_range(0..=candidates.len());
                let (inputs, target) = u.eval_input(phase);
                candidates.insert(target_index, target);
                Ok(EvalCase {
                    user: u.user,
                    inputs,
                    target,
                    candidates,
                    target_index,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            phase,
            cases,
            skipped: split.excluded,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserRecord {
    pub user: usize,
    pub target: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub records: Vec<UserRecord>,
    pub skipped: usize,
    pub report: MetricReport,
}

/// Scores every case of a plan. Users are scored in parallel and averaged
/// in user order, so results do not depend on the thread count.
pub fn evaluate_plan<S: Scorer + ?Sized>(scorer: &S, plan: &EvalPlan) -> Result<Evaluation> {
    let records = plan
        .cases
        .par_iter()
        .map(|c| {
            let scores = scorer.score(c.user, &c.inputs, &c.candidates)?;
            if scores.len() != c.candidates.len() {
                return Err(GraspError::Protocol(format!(
                    "scorer returned {} scores for {} candidates",
                    scores.len(),
                    c.candidates.len()
                )));
            }
            Ok(UserRecord {
                user: c.user,
                target: c.target,
                rank: rank_of_target(&scores, c.target_index),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ranks: Vec<usize> = records.iter().map(|r| r.rank).collect();
    Ok(Evaluation {
        report: MetricReport::from_ranks("overall", &ranks),
        records,
        skipped: plan.skipped,
    })
}

pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    ds: &InteractionDataset,
    split: &LeaveOneOutSplit,
    phase: Phase,
    eval_negatives: usize,
    seed: u64,
) -> Result<Evaluation> {
    evaluate_plan(scorer, &EvalPlan::build(ds, split, phase, eval_negatives, seed)?)
}

/// Head/tail reports: users by their own flag, items by the flag of the
/// evaluated target. Order: head_user, tail_user, head_item, tail_item.
pub fn group_report(records: &[UserRecord], labels: &GroupLabels) -> Result<Vec<MetricReport>> {
    let mut out = Vec::with_capacity(4);
    for (kind, flags, key) in [
        (
            "user",
            &labels.user_group,
            (|r: &UserRecord| r.user) as fn(&UserRecord) -> usize,
        ),
        ("item", &labels.item_group, |r: &UserRecord| r.target),
    ] {
        for group in [Group::Head, Group::Tail] {
            let mut ranks = Vec::new();
            for r in records {
                let id = key(r);
                let flag = flags.get(id).ok_or(GraspError::Lookup {
                    what: if kind == "user" { "user" } else { "item" },
                    id,
                    size: flags.len(),
                })?;
                if *flag == group {
                    ranks.push(r.rank);
                }
            }
            out.push(MetricReport::from_ranks(format!("{}_{kind}", group.as_str()), &ranks));
        }
    }
    Ok(out)
}

pub const TSV_HEADER: &str = "group\tk\tndcg\thr";

/// Metrics TSV. Population sizes ride along as `# n_users` comment lines
/// so that empty groups survive a round trip.
pub fn report_tsv(reports: &[MetricReport]) -> String {
    let mut s = String::new();
    for r in reports {
        writeln!(s, "# n_users\t{}\t{}", r.group, r.n_users).unwrap();
    }
    writeln!(s, "{TSV_HEADER}").unwrap();
    for r in reports {
        for m in &r.metrics {
            writeln!(s, "{}\t{}\t{}\t{}", r.group, m.k, m.ndcg, m.hr).unwrap();
        }
    }
    s
}

pub fn parse_report_tsv(text: &str) -> Result<Vec<MetricReport>> {
    let mut reports: Vec<MetricReport> = Vec::new();
    let bad = |line: usize, msg: &str| GraspError::Parse {
        line,
        msg: msg.to_string(),
    };
    let mut seen_header = false;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if let Some(rest) = line.strip_prefix("# n_users\t") {
            let (group, count) = rest
                .split_once('\t')
                .ok_or_else(|| bad(n, "expected group and count"))?;
            reports.push(MetricReport {
                group: group.to_string(),
                n_users: count.parse().map_err(|_| bad(n, "bad user count"))?,
                metrics: Vec::new(),
            });
            continue;
        }
        if line == TSV_HEADER {
            seen_header = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !seen_header || fields.len() != 4 {
            return Err(bad(n, "expected group<TAB>k<TAB>ndcg<TAB>hr"));
        }
        let group = fields[0];
        let k: usize = fields[1].parse().map_err(|_| bad(n, "bad k"))?;
        let ndcg: f64 = fields[2].parse().map_err(|_| bad(n, "bad ndcg"))?;
        let hr: f64 = fields[3].parse().map_err(|_| bad(n, "bad hr"))?;
        let idx = match reports.iter().position(|r| r.group == group) {
            Some(i) => i,
            None => {
                reports.push(MetricReport {
                    group: group.to_string(),
                    n_users: 0,
                    metrics: Vec::new(),
                });
                reports.len() - 1
            }
        };
        reports[idx].metrics.push(AtK { k, ndcg, hr });
    }
    if !seen_header {
        return Err(bad(1, "missing header"));
    }
    Ok(reports)
}

/// Human-readable table: one column per group, one row per metric.
pub fn report_table(reports: &[MetricReport]) -> String {
    let mut s = String::new();
    write!(s, "{:<10}", "metric").unwrap();
    for r in reports {
        write!(s, "{:>12}", r.group).unwrap();
    }
    writeln!(s).unwrap();
    write!(s, "{:<10}", "users").unwrap();
    for r in reports {
        write!(s, "{:>12}", r.n_users).unwrap();
    }
    writeln!(s).unwrap();
    for (name, pick) in [("NDCG", true), ("HR", false)] {
        for k in KS {
            write!(s, "{:<10}", format!("{name}@{k}")).unwrap();
            for r in reports {
                let v = if pick { r.ndcg(k) } else { r.hr(k) };
                match v {
                    Some(v) => write!(s, "{v:>12.4}").unwrap(),
                    None => write!(s, "{:>12}", "(empty)").unwrap(),
                }
            }
            writeln!(s).unwrap();
        }
    }
    s
}

/// Writes the metrics TSV and the text table next to each other.
pub fn emit_report(reports: &[MetricReport], tsv_path: &Path, table_path: &Path) -> Result<()> {
    std::fs::write(tsv_path, report_tsv(reports)).map_err(|e| GraspError::io(tsv_path, e))?;
    std::fs::write(table_path, report_table(reports)).map_err(|e| GraspError::io(table_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_of_target(&[0.1, 0.9, 0.3], 1), 1);
        assert_eq!(rank_of_target(&[0.9, 0.9, 0.1], 1), 2);
        assert_eq!(rank_of_target(&[0.9, 0.9, 0.1], 0), 1);
        let mut s = vec![1.0; 101];
        s[40] = 0.0;
        assert_eq!(rank_of_target(&s, 40), 101);
    }

    #[test]
    fn metric_examples() {
        assert_eq!(ndcg_at_k(1, 1), 1.0);
        assert_eq!(ndcg_at_k(3, 10), 0.5);
        assert_eq!(ndcg_at_k(11, 10), 0.0);
        assert_eq!(hr_at_k(5, 5), 1.0);
        assert_eq!(hr_at_k(6, 5), 0.0);
        let r = MetricReport::from_ranks("x", &[1, 2, 12]);
        assert_abs_diff_eq!(r.hr(10).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(r.ndcg(1), r.hr(1));
    }

    fn two_user_labels() -> GroupLabels {
        GroupLabels {
            user_group: vec![Group::Head, Group::Tail],
            item_group: vec![Group::Tail, Group::Head],
            user_threshold: 1,
            item_threshold: 1,
        }
    }

    #[test]
    fn group_examples() {
        let recs = [
            UserRecord {
                user: 0,
                target: 1,
                rank: 1,
            },
            UserRecord {
                user: 1,
                target: 0,
                rank: 11,
            },
        ];
        let g = group_report(&recs, &two_user_labels()).unwrap();
        let names: Vec<_> = g.iter().map(|r| r.group.as_str()).collect();
        assert_eq!(names, ["head_user", "tail_user", "head_item", "tail_item"]);
        assert_eq!(g[0].ndcg(10), Some(1.0));
        assert_eq!(g[1].ndcg(10), Some(0.0));
        assert_eq!(g[2].ndcg(10), Some(1.0));

        let only_head = [UserRecord {
            user: 0,
            target: 1,
            rank: 4,
        }];
        let g = group_report(&only_head, &two_user_labels()).unwrap();
        assert!(g[1].is_empty());
        assert_eq!(g[1].ndcg(10), None);
    }

    #[test]
    fn tsv_round_trip_and_shapes() {
        assert_eq!(report_tsv(&[]).lines().collect::<Vec<_>>(), [TSV_HEADER]);
        let one = MetricReport::from_ranks("overall", &[1, 3, 7, 40]);
        let text = report_tsv(std::slice::from_ref(&one));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 6);
        let reports = vec![
            one,
            MetricReport::from_ranks("tail_user", &[]),
            MetricReport::from_ranks("head_item", &[2, 9]),
        ];
        assert_eq!(parse_report_tsv(&report_tsv(&reports)).unwrap(), reports);
        assert!(report_table(&reports).contains("(empty)"));
    }

    #[test]
    fn oracle_and_constant_scorers() {
        let seqs: Vec<Vec<usize>> = (0..30)
            .map(|u| vec![u % 7, 7 + u % 5, 12 + u % 3, 15 + u % 4])
            .collect();
        let ds = InteractionDataset::from_sequences(seqs, 150).unwrap();
        let split = crate::dataset::split_leave_one_out(&ds);
        let plan = EvalPlan::build(&ds, &split, Phase::Test, 100, 5).unwrap();
        let target_of: std::collections::HashMap<usize, usize> =
            plan.cases.iter().map(|c| (c.user, c.target)).collect();
        let oracle = |u: usize, _: &[usize], items: &[usize]| -> Result<Vec<f64>> {
            Ok(items
                .iter()
                .map(|&i| if i == target_of[&u] { 1.0 } else { 0.0 })
                .collect())
        };
        let e = evaluate_plan(&oracle, &plan).unwrap();
        assert!(e.report.metrics.iter().all(|m| m.ndcg == 1.0 && m.hr == 1.0));

        let flat = |_: usize, _: &[usize], items: &[usize]| -> Result<Vec<f64>> { Ok(vec![0.0; items.len()]) };
        let a = evaluate(&flat, &ds, &split, Phase::Test, 100, 5).unwrap();
        let b = evaluate(&flat, &ds, &split, Phase::Test, 100, 5).unwrap();
        assert_eq!(a, b);
        for (c, r) in plan.cases.iter().zip(&a.records) {
            assert_eq!(r.rank, c.target_index + 1);
            assert_eq!(c.candidates[c.target_index], c.target);
        }
    }
}

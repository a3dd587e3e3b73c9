use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::sisdr::si_sdr;
use super::stats::{paired_t_test, relative_improvement_rate, PairedScores, TTest};
use super::stoi::stoi;
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::models::{se_forward, ExtractorConfig, ParamSet};

/// One test mixture with its grouping keys.
#[derive(Clone, Debug)]
pub struct TestItem {
    pub id: String,
    pub noisy: Waveform,
    pub clean: Waveform,
    pub condition: String,
    pub snr_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub id: String,
    pub condition: String,
    pub snr_db: f64,
    pub si_sdr: f64,
    pub stoi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub condition: String,
    pub snr_db: f64,
    pub count: usize,
    pub si_sdr: f64,
    pub stoi: f64,
}

/// Per-utterance scores and their means by `(condition, snr_db)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub utterances: Vec<UtteranceScore>,
    pub groups: Vec<GroupScore>,
    pub mean_si_sdr: f64,
    pub mean_stoi: f64,
}

fn group_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    a.0.cmp(b.0).then(a.1.total_cmp(&b.1))
}

struct Key(String, f64);
impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        group_order((&self.0, self.1), (&other.0, other.1))
    }
}

impl MetricReport {
    pub fn from_scores(utterances: Vec<UtteranceScore>) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::InvalidConfig("empty test set".into()));
        }
        let mut groups: BTreeMap<Key, (usize, f64, f64)> = BTreeMap::new();
        for u in &utterances {
            if u.condition.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "utterance {:?} has an empty condition key",
                    u.id
                )));
            }
            if !u.snr_db.is_finite() {
                return Err(Error::NonFinite(format!("snr of {:?}", u.id)));
            }
            let g = groups
                .entry(Key(u.condition.clone(), u.snr_db))
                .or_default();
            g.0 += 1;
            g.1 += u.si_sdr;
            g.2 += u.stoi;
        }
        let n = utterances.len() as f64;
        Ok(Self {
            mean_si_sdr: utterances.iter().map(|u| u.si_sdr).sum::<f64>() / n,
            mean_stoi: utterances.iter().map(|u| u.stoi).sum::<f64>() / n,
            groups: groups
                .into_iter()
                .map(|(Key(condition, snr_db), (count, s, t))| GroupScore {
                    condition,
                    snr_db,
                    count,
                    si_sdr: s / count as f64,
                    stoi: t / count as f64,
                })
                .collect(),
            utterances,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,condition,snr_db,si_sdr,stoi\n");
        for u in &self.utterances {
            writeln!(
                out,
                "{},{},{},{},{}",
                u.id, u.condition, u.snr_db, u.si_sdr, u.stoi
            )
            .expect("write to string");
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<20} {:>8} {:>6} {:>9} {:>7}\n",
            "condition", "snr_db", "n", "si_sdr", "stoi"
        );
        for g in &self.groups {
            writeln!(
                out,
                "{:<20} {:>8.1} {:>6} {:>9.3} {:>7.4}",
                g.condition, g.snr_db, g.count, g.si_sdr, g.stoi
            )
            .expect("write to string");
        }
        writeln!(
            out,
            "{:<20} {:>8} {:>6} {:>9.3} {:>7.4}",
            "mean",
            "",
            self.utterances.len(),
            self.mean_si_sdr,
            self.mean_stoi
        )
        .expect("write to string");
        out
    }
}

/// Scores `enhance(noisy)` against the clean reference for every item.
pub fn evaluate_with<F>(testset: &[TestItem], mut enhance: F) -> Result<MetricReport>
where
    F: FnMut(&Waveform) -> Result<Waveform>,
{
    if testset.is_empty() {
        return Err(Error::InvalidConfig("empty test set".into()));
    }
    let mut scores = Vec::with_capacity(testset.len());
    for item in testset {
        if item.condition.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "test item {:?} has an empty condition key",
                item.id
            )));
        }
        let out = enhance(&item.noisy)?;
        scores.push(UtteranceScore {
            id: item.id.clone(),
            condition: item.condition.clone(),
            snr_db: item.snr_db,
            si_sdr: si_sdr(&item.clean, &out)?,
            stoi: stoi(&item.clean, &out)?,
        });
    }
    MetricReport::from_scores(scores)
}

/// Scores the enhancement model `model`.
pub fn evaluate(
    model: &ParamSet,
    cfg: &ExtractorConfig,
    testset: &[TestItem],
) -> Result<MetricReport> {
    evaluate_with(testset, |noisy| se_forward(model, cfg, noisy))
}

/// Whether the t-test pairs group means or individual utterances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLevel {
    Group,
    Utterance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunColumn {
    pub name: String,
    pub si_sdr: Vec<f64>,
    pub stoi: Vec<f64>,
    pub mean_si_sdr: f64,
    pub mean_stoi: f64,
    /// Relative improvement rate per group against the NOISY/PTN baselines.
    pub rir_si_sdr: Option<Vec<f64>>,
    pub rir_stoi: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestRow {
    pub a: String,
    pub b: String,
    pub metric: String,
    pub level: PairLevel,
    pub result: TTest,
}

/// Runs aligned on identical group keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub groups: Vec<(String, f64)>,
    pub runs: Vec<RunColumn>,
    pub ttests: Vec<TTestRow>,
}

pub struct CompareOptions<'a> {
    pub noisy: Option<&'a str>,
    pub ptn: Option<&'a str>,
    /// t-test every run against this one.
    pub ttest_against: Option<&'a str>,
    pub level: PairLevel,
}

fn keys(r: &MetricReport) -> Vec<(String, f64)> {
    r.groups
        .iter()
        .map(|g| (g.condition.clone(), g.snr_db))
        .collect()
}

pub fn compare_runs(runs: &[(String, MetricReport)], opts: &CompareOptions) -> Result<Comparison> {
    let first = runs
        .first()
        .ok_or_else(|| Error::InvalidConfig("no runs to compare".into()))?;
    let groups = keys(&first.1);
    for (name, r) in runs {
        if keys(r) != groups {
            return Err(Error::Alignment(format!(
                "run {name:?} has groups {:?}, expected {:?}",
                keys(r),
                groups
            )));
        }
    }
    let find = |name: &str| {
        runs.iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r)
            .ok_or_else(|| Error::Alignment(format!("no run named {name:?}")))
    };
    let baselines = match (opts.noisy, opts.ptn) {
        (Some(n), Some(p)) => Some((find(n)?, find(p)?)),
        _ => None,
    };
    let mut columns = Vec::new();
    for (name, r) in runs {
        let si: Vec<f64> = r.groups.iter().map(|g| g.si_sdr).collect();
        let st: Vec<f64> = r.groups.iter().map(|g| g.stoi).collect();
        let rir = |metric: fn(&GroupScore) -> f64| -> Result<Option<Vec<f64>>> {
            let Some((noisy, ptn)) = baselines else {
                return Ok(None);
            };
            r.groups
                .iter()
                .zip(&noisy.groups)
                .zip(&ptn.groups)
                .map(|((g, n), p)| relative_improvement_rate(metric(g), metric(n), metric(p)))
                .collect::<Result<Vec<_>>>()
                .map(Some)
        };
        columns.push(RunColumn {
            name: name.clone(),
            rir_si_sdr: rir(|g| g.si_sdr)?,
            rir_stoi: rir(|g| g.stoi)?,
            si_sdr: si,
            stoi: st,
            mean_si_sdr: r.mean_si_sdr,
            mean_stoi: r.mean_stoi,
        });
    }
    let mut ttests = Vec::new();
    if let Some(against) = opts.ttest_against {
        let base = find(against)?;
        for (name, r) in runs.iter().filter(|(n, _)| n != against) {
            for metric in ["si_sdr", "stoi"] {
                let pick = |rep: &MetricReport| -> Result<Vec<f64>> {
                    Ok(match opts.level {
                        PairLevel::Group => rep
                            .groups
                            .iter()
                            .map(|g| if metric == "si_sdr" { g.si_sdr } else { g.stoi })
                            .collect(),
                        PairLevel::Utterance => {
                            let ids_a: Vec<&str> =
                                rep.utterances.iter().map(|u| u.id.as_str()).collect();
                            let ids_b: Vec<&str> =
                                base.utterances.iter().map(|u| u.id.as_str()).collect();
                            if ids_a != ids_b {
                                return Err(Error::Alignment(format!(
                                    "utterances of {name:?} and {against:?} differ"
                                )));
                            }
                            rep.utterances
                                .iter()
                                .map(|u| if metric == "si_sdr" { u.si_sdr } else { u.stoi })
                                .collect()
                        }
                    })
                };
                let result = paired_t_test(&PairedScores {
                    a: pick(r)?,
                    b: pick(base)?,
                })?;
                ttests.push(TTestRow {
                    a: name.clone(),
                    b: against.to_string(),
                    metric: metric.to_string(),
                    level: opts.level,
                    result,
                });
            }
        }
    }
    Ok(Comparison {
        groups,
        runs: columns,
        ttests,
    })
}

impl Comparison {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned text table: one row per group plus the overall mean, one
    /// SI-SDR/STOI column pair per run, improvement-rate columns when
    /// baselines were given, then the t-test block.
    pub fn table(&self) -> String {
        let with_rir = self.runs.iter().any(|r| r.rir_si_sdr.is_some());
        let mut out = format!("{:<28}", "condition / snr_db");
        for r in &self.runs {
            write!(out, " {:>12} {:>8}", format!("{}:sisdr", r.name), "stoi").unwrap();
            if with_rir {
                write!(out, " {:>9} {:>9}", "rir_sisdr", "rir_stoi").unwrap();
            }
        }
        out.push('\n');
        for (i, (cond, snr)) in self.groups.iter().enumerate() {
            write!(out, "{:<28}", format!("{cond} / {snr}")).unwrap();
            for r in &self.runs {
                write!(out, " {:>12.3} {:>8.4}", r.si_sdr[i], r.stoi[i]).unwrap();
                if let (Some(a), Some(b)) = (&r.rir_si_sdr, &r.rir_stoi) {
                    write!(out, " {:>9.3} {:>9.3}", a[i], b[i]).unwrap();
                }
            }
            out.push('\n');
        }
        write!(out, "{:<28}", "mean").unwrap();
        for r in &self.runs {
            write!(out, " {:>12.3} {:>8.4}", r.mean_si_sdr, r.mean_stoi).unwrap();
            if with_rir {
                write!(out, " {:>9} {:>9}", "", "").unwrap();
            }
        }
        out.push('\n');
        if !self.ttests.is_empty() {
            out.push_str("\npaired t-tests\n");
            for t in &self.ttests {
                writeln!(
                    out,
                    "{} vs {} [{}, {} level]: mean diff {:.4}, t = {:.4}, df = {}, p = {:.3e}",
                    t.a,
                    t.b,
                    t.metric,
                    format!("{:?}", t.level).to_lowercase(),
                    t.result.mean_difference,
                    t.result.t,
                    t.result.df,
                    t.result.p_two_sided
                )
                .unwrap();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::gen_speech_proxy;

    fn score(id: &str, cond: &str, snr: f64, s: f64, t: f64) -> UtteranceScore {
        UtteranceScore {
            id: id.into(),
            condition: cond.into(),
            snr_db: snr,
            si_sdr: s,
            stoi: t,
        }
    }

    #[test]
    fn group_means_match_members() {
        let r = MetricReport::from_scores(vec![
            score("a", "hum", 0.0, 1.0, 0.5),
            score("b", "hum", 5.0, 4.0, 0.7),
            score("c", "hum", 0.0, 3.0, 0.9),
            score("d", "click", 0.0, -2.0, 0.1),
        ])
        .unwrap();
        assert_eq!(r.groups.len(), 3);
        assert_eq!(r.groups[0].condition, "click");
        let hum0 = &r.groups[1];
        assert_eq!((hum0.count, hum0.si_sdr, hum0.stoi), (2, 2.0, 0.7));
        assert_eq!(r.mean_si_sdr, 1.5);
        assert_eq!(MetricReport::from_json(&r.to_json().unwrap()).unwrap(), r);
        assert_eq!(r.to_csv().lines().count(), 5);
        assert!(MetricReport::from_scores(vec![score("a", "", 0.0, 1.0, 1.0)]).is_err());
    }

    #[test]
    fn identity_enhancement_on_clean_input() {
        let clean = gen_speech_proxy(0, 1.0).unwrap();
        let items = vec![TestItem {
            id: "u".into(),
            noisy: clean.clone(),
            clean,
            condition: "none".into(),
            snr_db: 0.0,
        }];
        let r = evaluate_with(&items, |w| Ok(w.clone())).unwrap();
        assert_eq!(r.mean_si_sdr, 100.0);
        assert!((r.mean_stoi - 1.0).abs() < 1e-6);
        assert!(evaluate_with(&[], |w| Ok(w.clone())).is_err());
    }

    fn run(values: &[(f64, f64)]) -> MetricReport {
        let snrs = [0.0, 5.0];
        MetricReport::from_scores(
            values
                .iter()
                .enumerate()
                .map(|(i, (s, t))| score(&format!("u{i}"), "hum", snrs[i % 2], *s, *t))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn improvement_rates_recomputed_by_hand() {
        let runs = vec![
            ("NOISY".to_string(), run(&[(0.0, 0.5), (2.0, 0.6)])),
            ("PTN".to_string(), run(&[(4.0, 0.7), (6.0, 0.8)])),
            ("NASTAR".to_string(), run(&[(6.0, 0.8), (7.0, 0.9)])),
        ];
        let c = compare_runs(
            &runs,
            &CompareOptions {
                noisy: Some("NOISY"),
                ptn: Some("PTN"),
                ttest_against: None,
                level: PairLevel::Group,
            },
        )
        .unwrap();
        let n = &c.runs[2];
        assert_eq!(n.rir_si_sdr.as_ref().unwrap(), &vec![1.5, 1.25]);
        let st = n.rir_stoi.as_ref().unwrap();
        assert!((st[0] - 1.5).abs() < 1e-12 && (st[1] - 1.5).abs() < 1e-12);
        assert!(c.table().contains("rir_sisdr"));

        let single = compare_runs(
            &runs[2..],
            &CompareOptions {
                noisy: None,
                ptn: None,
                ttest_against: None,
                level: PairLevel::Group,
            },
        )
        .unwrap();
        assert!(single.runs[0].rir_si_sdr.is_none());
        assert!(!single.table().contains("rir"));
    }

    #[test]
    fn misaligned_runs_error() {
        let a = run(&[(0.0, 0.5), (2.0, 0.6)]);
        let b = run(&[(0.0, 0.5)]);
        let r = compare_runs(
            &[("a".into(), a), ("b".into(), b)],
            &CompareOptions {
                noisy: None,
                ptn: None,
                ttest_against: None,
                level: PairLevel::Group,
            },
        );
        assert!(matches!(r, Err(Error::Alignment(_))));
    }

    #[test]
    fn ttest_block_matches_stats_module() {
        let mk = |off: &[f64]| {
            MetricReport::from_scores(
                off.iter()
                    .enumerate()
                    .map(|(i, v)| {
                        score(&format!("u{i}"), &format!("c{i}"), 0.0, *v, 0.5 + v / 100.0)
                    })
                    .collect(),
            )
            .unwrap()
        };
        let runs = vec![
            ("PTN".to_string(), mk(&[1.0, 2.0, 3.0, 4.0])),
            ("NASTAR".to_string(), mk(&[2.0, 4.0, 3.5, 6.0])),
        ];
        let c = compare_runs(
            &runs,
            &CompareOptions {
                noisy: None,
                ptn: None,
                ttest_against: Some("PTN"),
                level: PairLevel::Group,
            },
        )
        .unwrap();
        let direct = paired_t_test(&PairedScores {
            a: vec![2.0, 4.0, 3.5, 6.0],
            b: vec![1.0, 2.0, 3.0, 4.0],
        })
        .unwrap();
        assert_eq!(c.ttests[0].result, direct);
        assert!(c.table().contains("paired t-tests"));
    }
}

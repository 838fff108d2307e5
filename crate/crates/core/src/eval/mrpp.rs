//! The rules-per-prompt experiment: generate a mapping in chunks, execute it
//! and compare against the gold mapping's output.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::chunk::{plan_chunks, plan_chunks_overlap_aware, ChunkPlan};
use super::metrics::Prf;
use super::overlap::{join_overlap, table_overlap};
use super::EvalError;
use crate::gateway::{find_json_objects, CompletionRequest, CompletionResponse, Gateway, MockBackend};
use crate::mapping::{chase, extract_script, parse_rule_script, render_sql, Mapping, Rule};
use crate::prompt::{build_mapgen_prompt, TransformOptions};
use crate::schema::{Instance, RelationDef, SchemaDef};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MrppConfig {
    pub mrpp: Vec<usize>,
    /// One run per seed and MRPP value.
    pub seeds: Vec<u64>,
    pub overlap_aware: bool,
    pub transform: TransformOptions,
}

impl Default for MrppConfig {
    fn default() -> Self {
        Self {
            mrpp: (1..=7).collect(),
            seeds: (0..20).collect(),
            overlap_aware: false,
            transform: TransformOptions::sampling(),
        }
    }
}

impl MrppConfig {
    /// `repeats` seeds derived from `base`.
    pub fn seeds_from(base: u64, repeats: usize) -> Vec<u64> {
        (0..repeats as u64).map(|i| derive_seed(base, &[i])).collect()
    }
}

/// Tokens of one prompt and how many rules it asked for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub rules: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub failed: bool,
}

/// One (MRPP, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub mrpp: usize,
    pub seed: u64,
    pub plan: ChunkPlan,
    pub prompts: Vec<PromptRecord>,
    pub rules_parsed: usize,
    pub diagnostics: usize,
    pub table: Option<Prf>,
    pub join: Option<Prf>,
}

impl CellResult {
    pub fn input_tokens(&self) -> u64 {
        self.prompts.iter().map(|p| p.input_tokens).sum()
    }

    pub fn output_tokens(&self) -> u64 {
        self.prompts.iter().map(|p| p.output_tokens).sum()
    }
}

/// Mean with a two-sided 95% t interval over runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    /// Fewer than two runs: the interval is the point estimate.
    pub degenerate: bool,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Option<Self> {
        let n = xs.len();
        if n == 0 {
            return None;
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Some(Self {
                mean,
                ci_low: mean,
                ci_high: mean,
                n,
                degenerate: true,
            });
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        let half = t * (var / n as f64).sqrt();
        Some(Self {
            mean,
            ci_low: mean - half,
            ci_high: mean + half,
            n,
            degenerate: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub precision: Estimate,
    pub recall: Estimate,
    pub f1: Estimate,
}

impl MetricSummary {
    fn from_scores(scores: &[Prf]) -> Option<Self> {
        let col = |f: fn(&Prf) -> f64| scores.iter().map(f).collect::<Vec<_>>();
        Some(Self {
            precision: Estimate::from_samples(&col(|s| s.precision))?,
            recall: Estimate::from_samples(&col(|s| s.recall))?,
            f1: Estimate::from_samples(&col(|s| s.f1))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrppSummary {
    pub mrpp: usize,
    pub runs: usize,
    pub groups: usize,
    pub table: Option<MetricSummary>,
    pub join: Option<MetricSummary>,
    /// Mean tokens of a full run.
    pub input_tokens: f64,
    pub output_tokens: f64,
    pub total_tokens: f64,
    /// Total tokens of the smallest MRPP divided by this row's; absent on
    /// that first row.
    pub reduction: Option<f64>,
}

/// Mean tokens of prompts asking for a given number of rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSizeTokens {
    pub rules: usize,
    pub prompts: usize,
    pub input_tokens: f64,
    pub output_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrppReport {
    pub cells: Vec<CellResult>,
    pub summary: Vec<MrppSummary>,
    pub by_prompt_size: Vec<PromptSizeTokens>,
}

/// Runs every (MRPP, seed) cell and summarizes. Prompt failures count as
/// prompts that produced no rules.
pub fn run_mrpp_experiment(
    gateway: &Gateway,
    gold: &Mapping,
    source_instance: &Instance,
    config: &MrppConfig,
) -> Result<MrppReport, EvalError> {
    if config.mrpp.contains(&0) {
        return Err(EvalError::InvalidMrpp);
    }
    let gold_instance = chase(gold, source_instance);
    // Prompts sample values from the actual source data.
    let shown_source = gold.source.with_values_from(source_instance);
    let cells: Vec<(usize, u64)> = config
        .mrpp
        .iter()
        .flat_map(|&m| config.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let mut results = cells
        .par_iter()
        .map(|&(mrpp, seed)| run_cell(gateway, gold, &shown_source, source_instance, &gold_instance, config, mrpp, seed))
        .collect::<Result<Vec<_>, _>>()?;
    results.sort_by_key(|c| (c.mrpp, config.seeds.iter().position(|s| *s == c.seed)));
    Ok(summarize(results))
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    gateway: &Gateway,
    gold: &Mapping,
    shown_source: &SchemaDef,
    source_instance: &Instance,
    gold_instance: &Instance,
    config: &MrppConfig,
    mrpp: usize,
    seed: u64,
) -> Result<CellResult, EvalError> {
    let plan = if config.overlap_aware {
        plan_chunks_overlap_aware(&gold.rules, mrpp)?
    } else {
        plan_chunks(&gold.rules, mrpp, derive_seed(seed, &[mrpp as u64]))?
    };
    let mut prompts = Vec::new();
    let mut rules: Vec<Rule> = Vec::new();
    let mut diagnostics = 0;
    for (g, group) in plan.groups.iter().enumerate() {
        let chunks: Vec<(Vec<&RelationDef>, Vec<&RelationDef>)> = group
            .rules
            .iter()
            .filter_map(|id| gold.rule(id))
            .map(|r| {
                let (s, t) = crate::mapping::relations_of_rule(r);
                (
                    s.iter().filter_map(|n| shown_source.relation(n)).collect(),
                    t.iter().filter_map(|n| gold.target.relation(n)).collect(),
                )
            })
            .collect();
        let spec = build_mapgen_prompt(&chunks, derive_seed(seed, &[mrpp as u64, g as u64]), &config.transform)?;
        let request = CompletionRequest::new(&spec.body).with_seed(spec.seed);
        match gateway.complete(&request) {
            Ok(response) => {
                prompts.push(PromptRecord {
                    rules: group.rules.len(),
                    input_tokens: response.usage.input_tokens,
                    output_tokens: response.usage.output_tokens,
                    failed: false,
                });
                let parsed = parse_rule_script(&extract_script(&response.text), gold.source.clone(), gold.target.clone());
                diagnostics += parsed.diagnostics.len();
                merge_rules(&mut rules, parsed.mapping.rules, g);
            }
            Err(e) => {
                tracing::warn!(mrpp, seed, group = g, error = %e, "mapping prompt failed; counted as no rules");
                prompts.push(PromptRecord {
                    rules: group.rules.len(),
                    input_tokens: 0,
                    output_tokens: 0,
                    failed: true,
                });
            }
        }
    }
    let rules_parsed = rules.len();
    let predicted = Mapping::new(gold.source.clone(), gold.target.clone(), rules)
        .map(|m| chase(&m, source_instance))
        .unwrap_or_else(|e| {
            tracing::warn!(mrpp, seed, error = %e, "merged rules rejected");
            Instance::empty_for(&gold.target)
        });
    Ok(CellResult {
        mrpp,
        seed,
        plan,
        prompts,
        rules_parsed,
        diagnostics,
        table: table_overlap(&predicted, gold_instance, &gold.target).mean,
        join: join_overlap(gold, &predicted, gold_instance).mean,
    })
}

/// Adds rules from prompt `group`. A rule identical to one already present
/// is skipped; a different rule under a taken id is renamed.
fn merge_rules(into: &mut Vec<Rule>, new: Vec<Rule>, group: usize) {
    for mut rule in new {
        if into.contains(&rule) {
            continue;
        }
        if into.iter().any(|r| r.id == rule.id) {
            let base = format!("{}_g{group}", rule.id);
            let mut id = base.clone();
            let mut i = 1;
            while into.iter().any(|r| r.id == id) {
                id = format!("{base}_{i}");
                i += 1;
            }
            rule.id = id;
        }
        into.push(rule);
    }
}

fn summarize(cells: Vec<CellResult>) -> MrppReport {
    let mut by_mrpp: BTreeMap<usize, Vec<&CellResult>> = BTreeMap::new();
    for c in &cells {
        by_mrpp.entry(c.mrpp).or_default().push(c);
    }
    let mean = |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let mut summary: Vec<MrppSummary> = by_mrpp
        .iter()
        .map(|(&mrpp, runs)| {
            let input: Vec<f64> = runs.iter().map(|c| c.input_tokens() as f64).collect();
            let output: Vec<f64> = runs.iter().map(|c| c.output_tokens() as f64).collect();
            let tables: Vec<Prf> = runs.iter().filter_map(|c| c.table).collect();
            let joins: Vec<Prf> = runs.iter().filter_map(|c| c.join).collect();
            MrppSummary {
                mrpp,
                runs: runs.len(),
                groups: runs.first().map_or(0, |c| c.plan.groups.len()),
                table: MetricSummary::from_scores(&tables),
                join: MetricSummary::from_scores(&joins),
                input_tokens: mean(&input),
                output_tokens: mean(&output),
                total_tokens: mean(&input) + mean(&output),
                reduction: None,
            }
        })
        .collect();
    if let Some(base) = summary.first().map(|s| s.total_tokens) {
        for s in summary.iter_mut().skip(1) {
            s.reduction = (s.total_tokens > 0.0).then(|| base / s.total_tokens);
        }
    }
    let mut sizes: BTreeMap<usize, (usize, f64, f64)> = BTreeMap::new();
    for p in cells.iter().flat_map(|c| &c.prompts).filter(|p| !p.failed) {
        let e = sizes.entry(p.rules).or_default();
        e.0 += 1;
        e.1 += p.input_tokens as f64;
        e.2 += p.output_tokens as f64;
    }
    let by_prompt_size = sizes
        .into_iter()
        .map(|(rules, (n, i, o))| PromptSizeTokens {
            rules,
            prompts: n,
            input_tokens: i / n as f64,
            output_tokens: o / n as f64,
        })
        .collect();
    MrppReport {
        cells,
        summary,
        by_prompt_size,
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.6}"))
}

impl MrppReport {
    /// One line per run and overlap kind.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("mrpp,seed,overlap,precision,recall,f1,input_tokens,output_tokens\n");
        for c in &self.cells {
            for (kind, score) in [("table", c.table), ("join", c.join)] {
                let _ = writeln!(
                    out,
                    "{},{},{kind},{},{},{},{},{}",
                    c.mrpp,
                    c.seed,
                    fmt_opt(score.map(|s| s.precision)),
                    fmt_opt(score.map(|s| s.recall)),
                    fmt_opt(score.map(|s| s.f1)),
                    c.input_tokens(),
                    c.output_tokens()
                );
            }
        }
        out
    }

    /// Mean tokens of a full run per MRPP, with the reduction relative to
    /// the first row.
    pub fn tokens_csv(&self) -> String {
        let mut out = String::from("mrpp,input,output,total,reduction\n");
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{:.2},{:.2},{:.2},{}",
                s.mrpp,
                s.input_tokens,
                s.output_tokens,
                s.total_tokens,
                s.reduction.map_or_else(|| "--".to_string(), |r| format!("{r:.2}"))
            );
        }
        out
    }

    /// Mean tokens per prompt by the number of rules it asked for.
    pub fn prompt_tokens_csv(&self) -> String {
        let mut out = String::from("rules_per_prompt,prompts,input,output\n");
        for p in &self.by_prompt_size {
            let _ = writeln!(out, "{},{},{:.2},{:.2}", p.rules, p.prompts, p.input_tokens, p.output_tokens);
        }
        out
    }

    /// Plot-ready means and interval bounds.
    pub fn plot_csv(&self) -> String {
        let mut out = String::from("mrpp,overlap,metric,mean,ci_low,ci_high,n,degenerate\n");
        for s in &self.summary {
            for (kind, m) in [("table", &s.table), ("join", &s.join)] {
                let Some(m) = m else { continue };
                for (name, e) in [("precision", m.precision), ("recall", m.recall), ("f1", m.f1)] {
                    let _ = writeln!(
                        out,
                        "{},{kind},{name},{:.6},{:.6},{:.6},{},{}",
                        s.mrpp, e.mean, e.ci_low, e.ci_high, e.n, e.degenerate
                    );
                }
            }
        }
        out
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "MRPP  runs  groups  table F1 (95% CI)          join F1 (95% CI)           total tokens  reduction");
        for s in &self.summary {
            let f = |m: &Option<MetricSummary>| match m {
                Some(m) => format!(
                    "{:.3} [{:.3}, {:.3}]{}",
                    m.f1.mean,
                    m.f1.ci_low,
                    m.f1.ci_high,
                    if m.f1.degenerate { "*" } else { " " }
                ),
                None => "n/a".to_string(),
            };
            let _ = writeln!(
                out,
                "{:>4}  {:>4}  {:>6}  {:<26} {:<26} {:>12.1}  {}",
                s.mrpp,
                s.runs,
                s.groups,
                f(&s.table),
                f(&s.join),
                s.total_tokens,
                s.reduction.map_or_else(|| "--".to_string(), |r| format!("{r:.2}"))
            );
        }
        if self.summary.iter().any(|s| s.table.as_ref().is_some_and(|m| m.f1.degenerate)) {
            let _ = writeln!(out, "* single run: interval is the point estimate");
        }
        out
    }
}

/// A mock model that answers each mapping prompt with the gold rules whose
/// relations all appear in the prompt, rendered as SQL.
pub fn gold_echo_backend(gold: &Mapping) -> MockBackend {
    let gold = gold.clone();
    MockBackend::new().with_responder(move |req: &CompletionRequest| {
        let names: Vec<String> = find_json_objects(&req.prompt)
            .iter()
            .filter_map(|o| o.get("name").and_then(|n| n.as_str()).map(String::from))
            .collect();
        let shown = |r: &str| names.iter().any(|n| n == r);
        let sql: Vec<String> = gold
            .rules
            .iter()
            .filter(|rule| {
                let (s, t) = crate::mapping::relations_of_rule(rule);
                s.iter().chain(&t).all(|r| shown(r))
            })
            .map(|rule| render_sql(rule, &gold.source, &gold.target))
            .collect();
        if sql.is_empty() {
            return None;
        }
        let text = format!("The script copies each relation shown.\n```sql\n{}\n```", sql.join("\n"));
        Some(CompletionResponse::text_only(&req.prompt, text))
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::eval::generate_eval_instance;
    use crate::fixtures::{biblio_gold_mapping, biblio_source};

    fn setup() -> (Mapping, Instance) {
        let gold = biblio_gold_mapping();
        let inst = generate_eval_instance(&biblio_source(), 40, 0.1, 0.05, 7).unwrap();
        (gold, inst)
    }

    fn config(mrpp: Vec<usize>, repeats: usize) -> MrppConfig {
        MrppConfig {
            mrpp,
            seeds: MrppConfig::seeds_from(11, repeats),
            ..MrppConfig::default()
        }
    }

    #[test]
    fn echo_reproduces_gold_at_every_mrpp() {
        let (gold, inst) = setup();
        let gw = Gateway::new(Arc::new(gold_echo_backend(&gold)));
        let report = run_mrpp_experiment(&gw, &gold, &inst, &config(vec![1, 3, 7], 3)).unwrap();
        assert_eq!(report.cells.len(), 9);
        for c in &report.cells {
            assert_eq!(c.table.unwrap().f1, 1.0, "mrpp {} seed {}", c.mrpp, c.seed);
            assert_eq!(c.join.unwrap().f1, 1.0);
            assert_eq!(c.rules_parsed, 7);
            assert_eq!(c.prompts.len(), 7usize.div_ceil(c.mrpp));
        }
        let s = &report.summary;
        assert_eq!(s[0].reduction, None);
        assert!(s[2].reduction.unwrap() > 1.0);
        assert!(s[2].total_tokens < s[0].total_tokens);
    }

    #[test]
    fn report_is_bit_stable() {
        let (gold, inst) = setup();
        let gw = Gateway::new(Arc::new(gold_echo_backend(&gold)));
        let cfg = config(vec![1, 2, 5], 4);
        let a = run_mrpp_experiment(&gw, &gold, &inst, &cfg).unwrap();
        let b = run_mrpp_experiment(&gw, &gold, &inst, &cfg).unwrap();
        assert_eq!(a.runs_csv(), b.runs_csv());
        assert_eq!(a.tokens_csv(), b.tokens_csv());
        assert_eq!(a.plot_csv(), b.plot_csv());
        assert_eq!(a.render_text(), b.render_text());
    }

    #[test]
    fn failed_prompts_count_as_empty() {
        let (gold, inst) = setup();
        let gw = Gateway::new(Arc::new(MockBackend::new()));
        let report = run_mrpp_experiment(&gw, &gold, &inst, &config(vec![2], 1)).unwrap();
        let c = &report.cells[0];
        assert!(c.prompts.iter().all(|p| p.failed));
        assert_eq!(c.rules_parsed, 0);
        assert_eq!(c.table.unwrap().recall, 0.0);
        assert!(report.summary[0].table.as_ref().unwrap().f1.degenerate);
    }

    #[test]
    fn zero_mrpp_rejected() {
        let (gold, inst) = setup();
        let gw = Gateway::new(Arc::new(MockBackend::new()));
        assert_eq!(
            run_mrpp_experiment(&gw, &gold, &inst, &config(vec![0], 1)).unwrap_err(),
            EvalError::InvalidMrpp
        );
    }

    #[test]
    fn t_interval() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0]).unwrap();
        // t(0.975, df=2) = 4.302652729911275; sd = 1
        let half = 4.302652729911275 / 3f64.sqrt();
        assert!((e.mean - 2.0).abs() < 1e-12);
        assert!((e.ci_high - (2.0 + half)).abs() < 1e-9);
        assert!((e.ci_low - (2.0 - half)).abs() < 1e-9);
        let one = Estimate::from_samples(&[0.4]).unwrap();
        assert!(one.degenerate && one.ci_low == 0.4 && one.ci_high == 0.4);
        assert!(Estimate::from_samples(&[]).is_none());
    }

    #[test]
    fn merge_renames_clashing_ids() {
        let gold = biblio_gold_mapping();
        let mut rules = vec![gold.rules[0].clone()];
        let mut other = gold.rules[1].clone();
        other.id = gold.rules[0].id.clone();
        merge_rules(&mut rules, vec![gold.rules[0].clone(), other], 3);
        assert_eq!(rules.len(), 2);
        assert_eq!(rules[1].id, format!("{}_g3", gold.rules[0].id));
    }
}

//! Subcommand implementations. Each returns the text written to stdout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use concord_core::aggregation::labels_csv;
use concord_core::agreement::{AgreementReport, ReportOptions};
use concord_core::dataset::{export_dataset, split_stats, ExportOptions, HoldoutMode, SplitParameters};
use concord_core::domain::{
    validate_schema, AnnotationContent, AnnotatorId, BinaryLabel, CampaignId, Item, ItemId, LabellingSchema,
};
use concord_core::evaluation::{
    arabic_letter_folding, classification_metrics, compare_models, confusion_matrix, parse_gold_jsonl,
    parse_reported_csv, parse_training_log, select_epoch, EpochPolicy, KeywordClassifier, MetricSet, Normalization,
    PredictionSet,
};
use concord_core::orchestration::{plan_rounds, sample_pool, RoundSummary};
use concord_core::store::{CampaignConfig, ReviewAction, Store};
use rand::Rng;

use crate::args::*;
use crate::config::{Config, DEFAULT_STORE};

/// Resolved global settings.
pub struct Ctx {
    pub store: PathBuf,
    pub campaign: Option<String>,
    pub addr: Option<String>,
}

impl Ctx {
    pub fn new(cli_store: Option<PathBuf>, config: Config) -> Self {
        Self {
            store: cli_store.or(config.store).unwrap_or_else(|| PathBuf::from(DEFAULT_STORE)),
            campaign: config.campaign,
            addr: config.addr,
        }
    }

    fn campaign(&self, arg: &CampaignArg) -> Result<CampaignId> {
        arg.campaign
            .clone()
            .or_else(|| self.campaign.clone())
            .map(CampaignId::new)
            .ok_or_else(|| anyhow!("no campaign given (use --campaign or set `campaign` in the config file)"))
    }

    fn open(&self) -> Result<Store> {
        Ok(Store::open_default(&self.store)?)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn csv_rows<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Random bearer token from OS entropy. Tokens are secrets, so they are
/// deliberately not derived from any pipeline seed.
pub fn new_token() -> String {
    let bytes: [u8; 16] = rand::rng().random();
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn init(ctx: &Ctx, args: &InitArgs) -> Result<String> {
    let id = ctx.campaign(&args.campaign)?;
    if args.annotators.is_empty() {
        bail!("at least one annotator is required (--annotators a,b,c)");
    }
    let schema = match &args.schema {
        Some(path) => {
            let schema = LabellingSchema::from_json(&read(path)?).context("parsing schema")?;
            validate_schema(&schema).map_err(|errs| {
                anyhow!(
                    "invalid schema: {}",
                    errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
                )
            })?;
            schema
        }
        None => LabellingSchema::default(),
    };
    let mut config = CampaignConfig::new(id.as_str(), schema);
    config.annotators_per_item = args.annotators_per_item;
    config.reannotation_threshold = args.threshold;
    config.anonymize_deliberation = !args.no_anonymize;
    if let Some(plan) = &args.plan {
        let total = plan[0].parse().context("plan total")?;
        let rounds = plan[1].parse().context("plan rounds")?;
        let growth = plan[2].parse().context("plan growth")?;
        config.round_plan = Some(plan_rounds(total, rounds, growth)?);
    }
    let tokens: Vec<(AnnotatorId, String)> = args
        .annotators
        .iter()
        .map(|a| (AnnotatorId::new(a.trim()), new_token()))
        .collect();
    let mut store = ctx.open()?;
    store.create_campaign(id.clone(), config, &tokens)?;
    Ok(match args.format.format {
        Format::Json => json(&serde_json::json!({
            "campaign_id": id,
            "tokens": tokens.iter().map(|(a, t)| (a.to_string(), t.clone())).collect::<BTreeMap<_, _>>(),
        })),
        Format::Csv => csv_rows(&["annotator", "token"], tokens.iter().map(|(a, t)| [a.to_string(), t.clone()])),
        Format::Table => {
            let mut out = format!("campaign {id} created; annotator tokens:\n");
            for (a, t) in &tokens {
                let _ = writeln!(out, "{a}\t{t}");
            }
            out
        }
    })
}

fn jsonl_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| (i + 1, l))
}

pub fn import(ctx: &Ctx, args: &ImportArgs) -> Result<String> {
    let id = ctx.campaign(&args.campaign)?;
    let text = read(&args.input)?;
    let items = jsonl_lines(&text)
        .map(|(n, l)| serde_json::from_str::<Item>(l).with_context(|| format!("{} line {n}", args.input.display())))
        .collect::<Result<Vec<_>>>()?;
    let count = items.len();
    let mut store = ctx.open()?;
    store.import_items(&id, items)?;
    Ok(format!("imported {count} items into {id}\n"))
}

pub fn sample(args: &SampleArgs) -> Result<String> {
    let text = read(&args.input)?;
    let lines: Vec<&str> = jsonl_lines(&text).map(|(_, l)| l).collect();
    let picked = sample_pool(&lines, args.n, args.seed)?;
    let mut out = String::new();
    for line in picked {
        out.push_str(line);
        out.push('\n');
    }
    match &args.out {
        Some(path) => {
            fs::write(path, &out).with_context(|| format!("writing {}", path.display()))?;
            Ok(format!("sampled {} of {} items into {}\n", args.n, lines.len(), path.display()))
        }
        None => Ok(out),
    }
}

pub fn plan(args: &PlanArgs) -> Result<String> {
    let plan = plan_rounds(args.total, args.rounds, args.growth)?;
    Ok(match args.format.format {
        Format::Table => {
            let sizes: Vec<String> = plan.round_sizes.iter().map(ToString::to_string).collect();
            format!("{}\n", sizes.join(" "))
        }
        Format::Json => json(&plan),
        Format::Csv => csv_rows(
            &["round", "size"],
            plan.round_sizes
                .iter()
                .enumerate()
                .map(|(i, s)| [(i + 1).to_string(), s.to_string()]),
        ),
    })
}

pub fn assign(ctx: &Ctx, args: &AssignArgs) -> Result<String> {
    let id = ctx.campaign(&args.campaign)?;
    let mut store = ctx.open()?;
    let round_id = store.open_round(&id, args.size, args.seed)?;
    let round = &store.campaign(&id)?.rounds[&round_id];
    let units: Vec<(String, String, String)> = round
        .items
        .iter()
        .flat_map(|item| {
            round.work.iter().filter_map(move |(annotator, work)| {
                work.get(item).map(|w| {
                    (
                        item.to_string(),
                        annotator.to_string(),
                        serde_json::to_value(w.kind).unwrap().as_str().unwrap().to_owned(),
                    )
                })
            })
        })
        .collect();
    Ok(match args.format.format {
        Format::Table => format!(
            "round {round_id}: {} items, {} assignments\n",
            round.items.len(),
            units.len()
        ),
        Format::Csv => csv_rows(
            &["round_id", "item_id", "annotator_id", "kind"],
            units.iter().map(|(i, a, k)| [round_id.to_string(), i.clone(), a.clone(), k.clone()]),
        ),
        Format::Json => json(&serde_json::json!({
            "round_id": round_id,
            "items": round.items,
            "units": units.iter().map(|(i, a, k)| serde_json::json!({"item_id": i, "annotator_id": a, "kind": k})).collect::<Vec<_>>(),
        })),
    })
}

pub fn submit(ctx: &Ctx, args: &SubmitArgs) -> Result<String> {
    let id = ctx.campaign(&args.campaign)?;
    let mut content = AnnotationContent::class(args.class_value);
    for f in args.flags.iter().filter(|f| !f.is_empty()) {
        content = content.with_flag(f.trim());
    }
    content.mark_for_review = args.mark_for_review;
    let annotator = AnnotatorId::new(args.annotator.as_str());
    let item = ItemId::new(args.item.as_str());
    let mut store = ctx.open()?;
    let ack = match args.review {
        None => store.submit_annotation(&id, &annotator, &item, args.round, content, &args.key)?,
        Some(action) => {
            let action = match action {
                ReviewActionArg::Confirm => ReviewAction::Confirm,
                ReviewActionArg::Amend => ReviewAction::Amend,
                ReviewActionArg::Escalate => ReviewAction::Escalate,
            };
            store.submit_review(&id, &annotator, &item, args.round, action, content, &args.key)?
        }
    };
    Ok(json(&ack))
}

fn summary_table(s: &RoundSummary) -> String {
    let mut out = format!("round {}\n", s.round_id);
    out.push_str(&agreement_table(&s.agreement));
    let _ = writeln!(out, "labelled items         {}", s.labels.len());
    let _ = writeln!(out, "re-annotation queue    {}", s.reannotation_queue.len());
    let _ = writeln!(out, "review queue           {}", s.review_queue.len());
    out
}

pub fn close_round(ctx: &Ctx, args: &CloseRoundArgs) -> Result<String> {
    let id = ctx.campaign(&args.campaign)?;
    let mut store = ctx.open()?;
    let summary = store.close_round(&id, args.round, args.expire_pending)?;
    Ok(match args.format.format {
        Format::Json => format!("{}\n", summary.to_json()),
        Format::Csv => summary.agreement.item_scores_csv(),
        Format::Table => summary_table(&summary),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |x| format!("{x:.4}"))
}

fn agreement_table(r: &AgreementReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "items                  {}", r.n_items);
    let _ = writeln!(out, "alpha (ordinal)        {}", fmt_opt(r.alpha_classification));
    for (flag, v) in &r.ac1_per_flag {
        let _ = writeln!(out, "{:<22} {}", format!("ac1 {flag}"), fmt_opt(*v));
    }
    let _ = writeln!(out, "under-annotated        {}", r.under_annotated.len());
    for w in &r.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

pub fn agreement(ctx: &Ctx, args: &AgreementArgs) -> Result<String> {
    let id = ctx.campaign(&args.campaign)?;
    let store = ctx.open()?;
    let report = match args.round {
        Some(r) => {
            let round = store.campaign(&id)?.round(r)?;
            round
                .summary
                .as_ref()
                .map(|s| s.agreement.clone())
                .ok_or_else(|| anyhow!("round {r} is still open"))?
        }
        None => store.agreement(&id, ReportOptions::default())?.cumulative,
    };
    Ok(match args.format.format {
        Format::Json => format!("{}\n", report.to_json()),
        Format::Csv => report.item_scores_csv(),
        Format::Table => agreement_table(&report),
    })
}

pub fn aggregate(ctx: &Ctx, args: &AggregateArgs) -> Result<String> {
    let id = ctx.campaign(&args.campaign)?;
    let store = ctx.open()?;
    let labels = store.labels(&id)?;
    let schema = store.campaign(&id)?.schema().clone();
    Ok(match args.format.format {
        Format::Csv => labels_csv(&labels, &schema),
        Format::Json => json(&labels),
        Format::Table => {
            let mut out = String::new();
            for l in &labels {
                let flags: Vec<&str> = l.flag_consensus.iter().map(String::as_str).collect();
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}",
                    l.item_id,
                    schema.class_name(l.final_class).unwrap_or("?"),
                    l.method.as_str(),
                    flags.join(";")
                );
            }
            out
        }
    })
}

pub fn holdout(ctx: &Ctx, args: &HoldoutArgs) -> Result<String> {
    let id = ctx.campaign(&args.campaign)?;
    let mut store = ctx.open()?;
    let items = store.carve_holdout(&id, args.fraction, args.seed)?;
    Ok(format!("holdout of {} items carved\n", items.len()))
}

fn holdout_mode(arg: HoldoutModeArg) -> HoldoutMode {
    match arg {
        HoldoutModeArg::AsTest => HoldoutMode::AsTest,
        HoldoutModeArg::Separate => HoldoutMode::Separate,
    }
}

pub fn split(ctx: &Ctx, args: &SplitArgs) -> Result<String> {
    let id = ctx.campaign(&args.campaign)?;
    let store = ctx.open()?;
    let o = &args.split;
    let splits = store.splits(&id, holdout_mode(o.holdout_mode), o.test_fraction, o.seed, o.stratified)?;
    let report = split_stats(&splits);
    Ok(match args.format.format {
        Format::Table => report.to_table(),
        Format::Csv => report.to_csv(),
        Format::Json => json(&report),
    })
}

pub fn export(ctx: &Ctx, args: &ExportArgs) -> Result<String> {
    let id = ctx.campaign(&args.campaign)?;
    let store = ctx.open()?;
    let o = &args.split;
    let mode = holdout_mode(o.holdout_mode);
    let splits = store.splits(&id, mode, o.test_fraction, o.seed, o.stratified)?;
    let manifest = export_dataset(
        &splits,
        SplitParameters {
            seed: o.seed,
            test_fraction: o.test_fraction,
            stratified: o.stratified,
            holdout_mode: mode,
        },
        ExportOptions {
            include_flags: args.flags,
            csv: args.csv,
        },
        &args.out,
    )?;
    Ok(json(&manifest))
}

fn metrics_output(name: &str, m: &MetricSet, format: Format) -> String {
    match format {
        Format::Json => json(&serde_json::json!({ "model": name, "metrics": m })),
        Format::Csv => csv_rows(
            &["model", "tp", "fp", "fn", "tn", "accuracy", "precision_pos", "recall_pos", "f1_pos", "precision_macro", "recall_macro", "f1_macro"],
            [[
                name.to_owned(),
                m.matrix.tp.to_string(),
                m.matrix.fp.to_string(),
                m.matrix.fn_.to_string(),
                m.matrix.tn.to_string(),
                m.accuracy.to_string(),
                m.precision_pos.to_string(),
                m.recall_pos.to_string(),
                m.f1_pos.to_string(),
                m.precision_macro.to_string(),
                m.recall_macro.to_string(),
                m.f1_macro.to_string(),
            ]],
        ),
        Format::Table => {
            let mut out = format!("model              {name}\n");
            let c = m.matrix;
            let _ = writeln!(out, "confusion          tp={} fp={} fn={} tn={}", c.tp, c.fp, c.fn_, c.tn);
            for (label, v) in [
                ("accuracy", m.accuracy),
                ("precision (pos)", m.precision_pos),
                ("recall (pos)", m.recall_pos),
                ("f1 (pos)", m.f1_pos),
                ("precision (macro)", m.precision_macro),
                ("recall (macro)", m.recall_macro),
                ("f1 (macro)", m.f1_macro),
            ] {
                let _ = writeln!(out, "{label:<18} {v:.4}");
            }
            for w in &m.warnings {
                let _ = writeln!(out, "warning: {w}");
            }
            out
        }
    }
}

fn model_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<String> {
    let gold = parse_gold_jsonl(&read(&args.gold)?).context("gold file")?;
    let name = model_name(&args.pred);
    let preds = PredictionSet::from_jsonl(&name, &read(&args.pred)?, args.threshold).context("prediction file")?;
    let metrics = classification_metrics(&confusion_matrix(&gold, &preds)?)?;
    Ok(metrics_output(&name, &metrics, args.format.format))
}

/// `(id, text)` pairs from a JSONL file whose records carry `id` and `text`.
fn gold_texts(text: &str) -> Result<BTreeMap<ItemId, String>> {
    #[derive(serde::Deserialize)]
    struct Line {
        id: ItemId,
        text: Option<String>,
    }
    let mut out = BTreeMap::new();
    for (n, line) in jsonl_lines(text) {
        let l: Line = serde_json::from_str(line).with_context(|| format!("gold line {n}"))?;
        let text = l.text.ok_or_else(|| anyhow!("gold line {n} has no text for the keyword baseline"))?;
        out.insert(l.id, text);
    }
    Ok(out)
}

pub fn compare(args: &CompareArgs) -> Result<String> {
    let gold_text = read(&args.gold)?;
    let gold = parse_gold_jsonl(&gold_text).context("gold file")?;
    let mut sets = Vec::new();
    for spec in &args.pred {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_owned(), PathBuf::from(p)),
            None => (model_name(Path::new(spec)), PathBuf::from(spec)),
        };
        sets.push(PredictionSet::from_jsonl(name, &read(&path)?, args.threshold)?);
    }
    if let Some(path) = &args.keywords {
        let keywords: Vec<String> = read(path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_owned)
            .collect();
        let normalization = match args.normalization {
            NormalizationArg::None => Normalization::None,
            NormalizationArg::Casefold => Normalization::Casefold,
            NormalizationArg::StripDiacritics => Normalization::CasefoldStripDiacritics,
        };
        let folding = if args.arabic_folding { arabic_letter_folding() } else { BTreeMap::new() };
        let classifier = KeywordClassifier::with_folding(&keywords, normalization, folding)?;
        let predictions: BTreeMap<ItemId, BinaryLabel> = gold_texts(&gold_text)?
            .into_iter()
            .map(|(id, t)| (id, classifier.classify(&t)))
            .collect();
        sets.push(PredictionSet::new("Keyword classifier", predictions));
    }
    if sets.is_empty() && args.reported.is_none() {
        bail!("nothing to compare: give --pred, --keywords or --reported");
    }
    let mut report = compare_models(&gold, &sets, &args.positive_label);
    if let Some(path) = &args.reported {
        report.attach_reported(parse_reported_csv(&read(path)?)?);
    }
    Ok(match args.format.format {
        Format::Table => {
            let mut out = report.to_table();
            for w in &report.warnings {
                let _ = writeln!(out, "warning: {w}");
            }
            out
        }
        Format::Csv => report.to_csv(),
        Format::Json => json(&report),
    })
}

pub fn select_epoch_cmd(args: &SelectEpochArgs) -> Result<String> {
    let log = parse_training_log(&read(&args.log)?)?;
    let policy = match args.policy {
        Policy::Trajectory => EpochPolicy::Trajectory,
        Policy::MinValLoss => EpochPolicy::MinValLoss,
        Policy::MaxF1 => EpochPolicy::MaxF1,
    };
    let epoch = select_epoch(&log, policy)?;
    Ok(match args.format.format {
        Format::Table => format!("{epoch}\n"),
        Format::Csv => format!("epoch\n{epoch}\n"),
        Format::Json => json(&serde_json::json!({ "epoch": epoch, "policy": policy })),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_are_hex_and_distinct() {
        let (a, b) = (new_token(), new_token());
        assert_eq!(a.len(), 32);
        assert!(a.chars().all(|c| c.is_ascii_hexdigit()));
        assert_ne!(a, b);
    }

    #[test]
    fn csv_rows_quote_fields() {
        let out = csv_rows(&["a", "b"], [["x,y".to_owned(), "z".to_owned()]]);
        assert_eq!(out, "a,b\n\"x,y\",z\n");
    }

    #[test]
    fn blank_jsonl_lines_are_skipped_but_numbered() {
        let lines: Vec<_> = jsonl_lines("{}\n\n  \n{\"a\":1}\n").collect();
        assert_eq!(lines, vec![(1, "{}"), (4, "{\"a\":1}")]);
    }
}

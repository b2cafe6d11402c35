//! HTTP API over the store. Administrative routes take the admin bearer
//! token; `/queue`, `/annotations` and `/reviews` take an annotator token,
//! which also identifies the campaign.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use concord_core::agreement::ReportOptions;
use concord_core::dataset::{split_jsonl, HoldoutMode};
use concord_core::domain::{
    AnnotationContent, AnnotatorId, CampaignId, Item, ItemId, LabellingSchema, RoundId, SessionRef,
};
use concord_core::evaluation::{compare_models, parse_gold_jsonl, EvaluationReport, PredictionSet};
use concord_core::orchestration::plan_rounds;
use concord_core::store::{pending_units, CampaignConfig, ReviewAction, RoundStatus, Store, StoreError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{Mutex, RwLock};

use crate::commands::new_token;

#[derive(Clone)]
pub struct AppState {
    store: Arc<RwLock<Store>>,
    admin_token: Option<Arc<str>>,
    evaluations: Arc<Mutex<BTreeMap<String, EvaluationReport>>>,
}

impl AppState {
    /// With `admin_token` unset, administrative routes are open; only do
    /// this on a loopback address.
    pub fn new(store: Store, admin_token: Option<String>) -> Self {
        Self {
            store: Arc::new(RwLock::new(store)),
            admin_token: admin_token.map(Into::into),
            evaluations: Arc::default(),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/campaigns", post(create_campaign))
        .route("/campaigns/{id}", get(campaign_status))
        .route("/campaigns/{id}/items", post(import_items))
        .route("/campaigns/{id}/rounds", post(open_round))
        .route("/campaigns/{id}/rounds/{round}/close", post(close_round))
        .route("/campaigns/{id}/reassign", post(reassign))
        .route("/campaigns/{id}/harmonisations", post(harmonise))
        .route("/campaigns/{id}/deliberation", get(deliberation))
        .route("/campaigns/{id}/agreement", get(agreement))
        .route("/campaigns/{id}/holdout", post(holdout))
        .route("/campaigns/{id}/export", get(export))
        .route("/queue", get(queue))
        .route("/annotations", post(submit_annotation))
        .route("/reviews", post(submit_review))
        .route("/evaluations", post(create_evaluation))
        .route("/evaluations/{id}", get(get_evaluation))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    details: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            details: Value::Null,
        }
    }

    fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message)
    }

    fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token")
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let code = e.code();
        let status = match code {
            "not-found" => StatusCode::NOT_FOUND,
            "validation" => StatusCode::UNPROCESSABLE_ENTITY,
            "unauthorized" => StatusCode::UNAUTHORIZED,
            "corrupt-log" | "storage" => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::CONFLICT,
        };
        let details = match &e {
            StoreError::RoundAlreadyClosed { summary } => json!({ "summary": summary }),
            StoreError::PendingAssignments { round, count } => json!({ "round": round, "pending": count }),
            StoreError::NoSuchAssignment { annotator, item, round } => {
                json!({ "annotator": annotator, "item": item, "round": round })
            }
            _ => Value::Null,
        };
        Self {
            status,
            code,
            message: e.to_string(),
            details,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "details": self.details });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let body: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(body).map_err(|e| ApiError::validation(format!("invalid request body: {e}")))
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn require_admin(state: &AppState, headers: &HeaderMap) -> ApiResult<()> {
    match &state.admin_token {
        None => Ok(()),
        Some(expected) if bearer(headers) == Some(&**expected) => Ok(()),
        Some(_) => Err(ApiError::unauthorized()),
    }
}

async fn annotator(state: &AppState, headers: &HeaderMap) -> ApiResult<(CampaignId, AnnotatorId)> {
    let token = bearer(headers).ok_or_else(ApiError::unauthorized)?;
    state.store.read().await.authenticate(token).map_err(|_| ApiError::unauthorized())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanRequest {
    total: usize,
    rounds: usize,
    growth: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateCampaign {
    id: CampaignId,
    annotators: Vec<AnnotatorId>,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    schema: Option<LabellingSchema>,
    #[serde(default)]
    annotators_per_item: Option<usize>,
    #[serde(default)]
    reannotation_threshold: Option<f64>,
    #[serde(default)]
    plan: Option<PlanRequest>,
    #[serde(default)]
    anonymize_deliberation: Option<bool>,
}

async fn create_campaign(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    require_admin(&state, &headers)?;
    let req: CreateCampaign = parse(&body)?;
    let name = req.name.unwrap_or_else(|| req.id.to_string());
    let mut config = CampaignConfig::new(name, req.schema.unwrap_or_default());
    config.annotators_per_item = req.annotators_per_item;
    config.reannotation_threshold = req.reannotation_threshold;
    if let Some(anon) = req.anonymize_deliberation {
        config.anonymize_deliberation = anon;
    }
    if let Some(p) = req.plan {
        config.round_plan =
            Some(plan_rounds(p.total, p.rounds, p.growth).map_err(|e| ApiError::validation(e.to_string()))?);
    }
    let tokens: Vec<(AnnotatorId, String)> = req.annotators.into_iter().map(|a| (a, new_token())).collect();
    state.store.write().await.create_campaign(req.id.clone(), config, &tokens)?;
    let tokens: BTreeMap<String, String> = tokens.into_iter().map(|(a, t)| (a.to_string(), t)).collect();
    Ok((StatusCode::CREATED, Json(json!({ "campaign_id": req.id, "tokens": tokens }))).into_response())
}

#[derive(Serialize)]
struct RoundView {
    id: RoundId,
    status: RoundStatus,
    items: usize,
    pending: usize,
}

async fn campaign_status(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<CampaignId>,
) -> ApiResult<Json<Value>> {
    require_admin(&state, &headers)?;
    let store = state.store.read().await;
    let c = store.campaign(&id)?;
    let rounds: Vec<RoundView> = c
        .rounds
        .values()
        .map(|r| RoundView {
            id: r.id,
            status: r.status,
            items: r.items.len(),
            pending: pending_units(c, r).len(),
        })
        .collect();
    Ok(Json(json!({
        "id": c.id,
        "config": c.config,
        "annotators": c.annotators.keys().collect::<Vec<_>>(),
        "items": c.items.len(),
        "unused_items": c.unused_items().count(),
        "rounds": rounds,
        "pending_reannotation": c.pending_reannotation,
        "pending_review": c.pending_review,
        "holdout": c.holdout.as_ref().map(|h| h.items.len()),
    })))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ItemsBody {
    List(Vec<Item>),
    Wrapped { items: Vec<Item> },
}

async fn import_items(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<CampaignId>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    require_admin(&state, &headers)?;
    let items = match parse::<ItemsBody>(&body)? {
        ItemsBody::List(items) | ItemsBody::Wrapped { items } => items,
    };
    let n = items.len();
    state.store.write().await.import_items(&id, items)?;
    Ok(Json(json!({ "imported": n })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OpenRound {
    seed: u64,
    #[serde(default)]
    size: Option<usize>,
}

async fn open_round(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<CampaignId>,
    body: Bytes,
) -> ApiResult<Response> {
    require_admin(&state, &headers)?;
    let req: OpenRound = parse(&body)?;
    let mut store = state.store.write().await;
    let round_id = store.open_round(&id, req.size, req.seed)?;
    let round = &store.campaign(&id)?.rounds[&round_id];
    let assignments: BTreeMap<&AnnotatorId, Vec<&ItemId>> =
        round.work.iter().map(|(a, w)| (a, w.keys().collect())).collect();
    let body = json!({ "round_id": round_id, "items": round.items, "assignments": assignments });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CloseRound {
    #[serde(default)]
    expire_pending: bool,
}

async fn close_round(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path((id, round)): Path<(CampaignId, RoundId)>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    require_admin(&state, &headers)?;
    let req: CloseRound = parse(&body)?;
    let summary = state.store.write().await.close_round(&id, round, req.expire_pending)?;
    Ok(Json(serde_json::to_value(summary).expect("summary serializes")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Reassign {
    deadline_ms: i64,
}

async fn reassign(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<CampaignId>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    require_admin(&state, &headers)?;
    let req: Reassign = parse(&body)?;
    let units = state.store.write().await.reassign_expired(&id, req.deadline_ms)?;
    Ok(Json(json!({ "reassigned": units })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Harmonise {
    item_id: ItemId,
    session_ref: SessionRef,
    consensus: AnnotationContent,
}

async fn harmonise(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<CampaignId>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    require_admin(&state, &headers)?;
    let req: Harmonise = parse(&body)?;
    let label = state
        .store
        .write()
        .await
        .harmonise(&id, &req.item_id, req.session_ref, req.consensus)?;
    Ok(Json(serde_json::to_value(label).expect("label serializes")))
}

async fn deliberation(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<CampaignId>,
) -> ApiResult<Json<Value>> {
    require_admin(&state, &headers)?;
    let items = state.store.read().await.deliberation(&id)?;
    Ok(Json(json!({ "items": items })))
}

#[derive(Deserialize)]
struct AgreementQuery {
    round: Option<RoundId>,
    #[serde(default)]
    include_superseded: bool,
}

async fn agreement(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<CampaignId>,
    Query(q): Query<AgreementQuery>,
) -> ApiResult<Json<Value>> {
    require_admin(&state, &headers)?;
    let overview = state.store.read().await.agreement(
        &id,
        ReportOptions {
            include_superseded: q.include_superseded,
        },
    )?;
    let value = match q.round {
        None => serde_json::to_value(overview),
        Some(r) => {
            let report = overview
                .rounds
                .into_iter()
                .find(|rep| rep.round_id == Some(r))
                .ok_or(StoreError::UnknownRound(r))?;
            serde_json::to_value(report)
        }
    };
    Ok(Json(value.expect("report serializes")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HoldoutRequest {
    fraction: f64,
    seed: u64,
}

async fn holdout(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<CampaignId>,
    body: Bytes,
) -> ApiResult<Response> {
    require_admin(&state, &headers)?;
    let req: HoldoutRequest = parse(&body)?;
    let items = state.store.write().await.carve_holdout(&id, req.fraction, req.seed)?;
    Ok((StatusCode::CREATED, Json(json!({ "items": items }))).into_response())
}

#[derive(Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ExportKind {
    Train,
    Test,
    Holdout,
    Labels,
}

#[derive(Deserialize)]
#[serde(rename_all = "kebab-case")]
enum HoldoutModeQuery {
    AsTest,
    Separate,
}

#[derive(Deserialize)]
struct ExportQuery {
    kind: ExportKind,
    seed: Option<u64>,
    #[serde(default = "default_test_fraction")]
    test_fraction: f64,
    #[serde(default)]
    stratified: bool,
    #[serde(default)]
    flags: bool,
    holdout_mode: Option<HoldoutModeQuery>,
}

fn default_test_fraction() -> f64 {
    0.2
}

async fn export(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<CampaignId>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    require_admin(&state, &headers)?;
    let store = state.store.read().await;
    let name = match q.kind {
        ExportKind::Labels => {
            let labels = store.labels(&id)?;
            return Ok(Json(labels).into_response());
        }
        ExportKind::Train => "train",
        ExportKind::Test => "test",
        ExportKind::Holdout => "holdout",
    };
    let seed = q.seed.ok_or_else(|| ApiError::validation("`seed` is required for split exports"))?;
    let mode = match q.holdout_mode {
        Some(HoldoutModeQuery::Separate) => HoldoutMode::Separate,
        Some(HoldoutModeQuery::AsTest) | None => HoldoutMode::AsTest,
    };
    let splits = store.splits(&id, mode, q.test_fraction, seed, q.stratified)?;
    let split = splits
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not-found", format!("no {name} split")))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], split_jsonl(split, q.flags)).into_response())
}

async fn queue(State(state): State<AppState>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    let (campaign, annotator_id) = annotator(&state, &headers).await?;
    let entries = state.store.read().await.next_queue(&campaign, &annotator_id)?;
    Ok(Json(json!({ "campaign_id": campaign, "annotator_id": annotator_id, "items": entries })))
}

#[derive(Deserialize)]
struct Submission {
    item_id: ItemId,
    round_id: RoundId,
    #[serde(default)]
    action: Option<ReviewAction>,
    #[serde(default)]
    idempotency_key: Option<String>,
    #[serde(flatten)]
    content: AnnotationContent,
}

fn idempotency_key(headers: &HeaderMap, body: Option<String>) -> ApiResult<String> {
    headers
        .get("idempotency-key")
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned)
        .or(body)
        .filter(|k| !k.is_empty())
        .ok_or_else(|| ApiError::validation("an idempotency key is required (Idempotency-Key header or body field)"))
}

async fn submit_annotation(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<Value>> {
    let (campaign, annotator_id) = annotator(&state, &headers).await?;
    let req: Submission = parse(&body)?;
    if req.action.is_some() {
        return Err(ApiError::validation("`action` belongs on /reviews"));
    }
    let key = idempotency_key(&headers, req.idempotency_key)?;
    let ack = state.store.write().await.submit_annotation(
        &campaign,
        &annotator_id,
        &req.item_id,
        req.round_id,
        req.content,
        &key,
    )?;
    Ok(Json(serde_json::to_value(ack).expect("ack serializes")))
}

async fn submit_review(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<Value>> {
    let (campaign, annotator_id) = annotator(&state, &headers).await?;
    let req: Submission = parse(&body)?;
    let action = req.action.ok_or_else(|| ApiError::validation("`action` is required"))?;
    let key = idempotency_key(&headers, req.idempotency_key)?;
    let ack = state.store.write().await.submit_review(
        &campaign,
        &annotator_id,
        &req.item_id,
        req.round_id,
        action,
        req.content,
        &key,
    )?;
    Ok(Json(serde_json::to_value(ack).expect("ack serializes")))
}

/// Multipart form: one `gold` file, one or more `pred` files (model name
/// from the file name, or `pred:<name>` as the field name), and optional
/// `positive_label` and `threshold` text fields.
async fn create_evaluation(
    State(state): State<AppState>,
    headers: HeaderMap,
    mut form: Multipart,
) -> ApiResult<Response> {
    require_admin(&state, &headers)?;
    let bad = |e: axum::extract::multipart::MultipartError| ApiError::validation(e.body_text());
    let mut gold = None;
    let mut preds: Vec<(String, String)> = Vec::new();
    let mut positive_label = "Positive".to_owned();
    let mut threshold = 0.5;
    while let Some(field) = form.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or_default().to_owned();
        let file_name = field.file_name().map(str::to_owned);
        let text = field.text().await.map_err(bad)?;
        match name.as_str() {
            "gold" => gold = Some(text),
            "positive_label" => positive_label = text.trim().to_owned(),
            "threshold" => {
                threshold = text
                    .trim()
                    .parse()
                    .map_err(|_| ApiError::validation("`threshold` must be a number"))?
            }
            "pred" => {
                let model = file_name
                    .as_deref()
                    .map(|f| f.rsplit_once('.').map_or(f, |(stem, _)| stem).to_owned())
                    .unwrap_or_else(|| format!("model-{}", preds.len() + 1));
                preds.push((model, text));
            }
            other => match other.strip_prefix("pred:") {
                Some(model) => preds.push((model.to_owned(), text)),
                None => return Err(ApiError::validation(format!("unexpected form field `{other}`"))),
            },
        }
    }
    let gold = gold.ok_or_else(|| ApiError::validation("a `gold` file is required"))?;
    if preds.is_empty() {
        return Err(ApiError::validation("at least one `pred` file is required"));
    }
    let gold = parse_gold_jsonl(&gold).map_err(|e| ApiError::validation(format!("gold: {e}")))?;
    let sets = preds
        .into_iter()
        .map(|(model, text)| {
            PredictionSet::from_jsonl(&model, &text, threshold)
                .map_err(|e| ApiError::validation(format!("{model}: {e}")))
        })
        .collect::<ApiResult<Vec<_>>>()?;
    let report = compare_models(&gold, &sets, &positive_label);
    let mut evaluations = state.evaluations.lock().await;
    let id = format!("ev-{}", evaluations.len() + 1);
    let body = json!({ "id": id, "report": report });
    evaluations.insert(id, report);
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_evaluation(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    require_admin(&state, &headers)?;
    let evaluations = state.evaluations.lock().await;
    let report = evaluations
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not-found", format!("no evaluation {id}")))?;
    Ok(Json(json!({ "id": id, "report": report })))
}

pub async fn serve(store: Store, addr: &str, admin_token: Option<String>) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    if admin_token.is_none() {
        eprintln!("warning: no admin token set; administrative routes are unauthenticated");
    }
    axum::serve(listener, router(AppState::new(store, admin_token)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bearer_requires_the_scheme() {
        let mut h = HeaderMap::new();
        assert_eq!(bearer(&h), None);
        h.insert(header::AUTHORIZATION, "Basic abc".parse().unwrap());
        assert_eq!(bearer(&h), None);
        h.insert(header::AUTHORIZATION, "Bearer abc ".parse().unwrap());
        assert_eq!(bearer(&h), Some("abc"));
    }

    #[test]
    fn store_errors_map_to_statuses() {
        let status = |e: StoreError| ApiError::from(e).status;
        assert_eq!(status(StoreError::UnknownCampaign(CampaignId::new("x"))), StatusCode::NOT_FOUND);
        assert_eq!(status(StoreError::RoundClosed(1)), StatusCode::CONFLICT);
        assert_eq!(status(StoreError::HoldoutExists), StatusCode::CONFLICT);
        assert_eq!(status(StoreError::InvalidConfig("bad".into())), StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(status(StoreError::Unauthorized), StatusCode::UNAUTHORIZED);
    }

    #[test]
    fn empty_body_parses_as_defaults() {
        let req: CloseRound = parse(&Bytes::new()).unwrap();
        assert!(!req.expire_pending);
        assert!(parse::<CloseRound>(&Bytes::from_static(b"{\"nope\":1}")).is_err());
    }
}

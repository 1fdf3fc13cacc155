//! HTTP service over the skill store.
//!
//! Three reads, one write and a login:
//!
//! | method | path                      | who                       |
//! |--------|---------------------------|---------------------------|
//! | GET    | `/members`                | any session or operator   |
//! | GET    | `/members/{uid}/skills`   | the member or operator    |
//! | GET    | `/members/{uid}/top-skills` | operator                |
//! | POST   | `/members/{uid}/skills`   | the member                |
//! | POST   | `/auth/login`             | anyone                    |
//!
//! Members never receive `estimated_score`.

pub mod auth;
pub mod error;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::HeaderMap;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use skillmine_core::profiler::{merge_self, top_five, MergedEntry, SkillProfile};
use skillmine_core::store::{SelfAnnotation, SelfScore, Store, StoreError};

pub use auth::{Caller, Sessions};
pub use error::ApiError;

/// Environment variable read by the CLI for the operator bearer token.
pub const OPERATOR_TOKEN_VAR: &str = "SKILLMINE_OPERATOR_TOKEN";

pub const DEFAULT_SESSION_TTL_HOURS: i64 = 12;

/// Every route the service mounts, as (method, path).
pub const ROUTES: &[(&str, &str)] = &[
    ("GET", "/members"),
    ("GET", "/members/{uid}/skills"),
    ("GET", "/members/{uid}/top-skills"),
    ("POST", "/members/{uid}/skills"),
    ("POST", "/auth/login"),
];

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub operator_token: Option<String>,
    pub session_ttl: Duration,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self { operator_token: None, session_ttl: Duration::hours(DEFAULT_SESSION_TTL_HOURS) }
    }
}

#[derive(Debug, Clone)]
pub struct AppState {
    store: Store,
    sessions: Arc<Sessions>,
}

impl AppState {
    pub fn new(store: Store, config: ApiConfig) -> Self {
        Self { store, sessions: Arc::new(Sessions::new(config.session_ttl, config.operator_token)) }
    }

    pub fn sessions(&self) -> &Sessions {
        &self.sessions
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/members", get(list_members))
        .route("/members/{uid}/skills", get(member_skills).post(post_skills))
        .route("/members/{uid}/top-skills", get(top_skills))
        .route("/auth/login", post(login))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    tracing::info!(?addr, "api listening");
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Runs blocking store work off the async workers.
async fn with_store<T, F>(store: &Store, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Store) -> Result<T, StoreError> + Send + 'static,
{
    let store = store.clone();
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberSummary {
    pub user_id: String,
    pub email: Option<String>,
    pub has_profile: bool,
}

async fn list_members(State(state): State<AppState>, headers: HeaderMap) -> Result<Json<Vec<MemberSummary>>, ApiError> {
    state.sessions.authenticate(&headers)?;
    let members = with_store(&state.store, |store| {
        let with_profile = store.profile_users()?;
        let mut out: Vec<MemberSummary> = store
            .accounts()?
            .into_iter()
            .map(|a| MemberSummary {
                has_profile: with_profile.contains(&a.user_id),
                user_id: a.user_id,
                email: Some(a.email),
            })
            .collect();
        for user in with_profile {
            if !out.iter().any(|m| m.user_id == user) {
                out.push(MemberSummary { user_id: user, email: None, has_profile: true });
            }
        }
        out.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        Ok(out)
    })
    .await?;
    Ok(Json(members))
}

/// Skill row as a member sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSkill {
    pub term: String,
    pub display_term: String,
    pub self_score: Option<u8>,
}

/// Skill row as an operator sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSkill {
    pub term: String,
    pub display_term: String,
    pub self_score: Option<u8>,
    pub estimated_score: Option<f64>,
    pub channels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SkillRow {
    Operator(OperatorSkill),
    Member(MemberSkill),
}

impl SkillRow {
    fn project(entry: MergedEntry<f64>, caller: &Caller) -> Self {
        match caller {
            Caller::Operator => SkillRow::Operator(OperatorSkill {
                term: entry.term,
                display_term: entry.display_term,
                self_score: entry.self_score,
                estimated_score: entry.estimated_score,
                channels: entry.channels,
            }),
            Caller::Member(_) => SkillRow::Member(MemberSkill {
                term: entry.term,
                display_term: entry.display_term,
                self_score: entry.self_score,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillsResponse {
    pub user_id: String,
    pub skills: Vec<SkillRow>,
}

/// Stored profile, or an empty one for a member with an account only.
fn load_profile(store: &Store, uid: &str) -> Result<SkillProfile<f64>, StoreError> {
    match store.profile(uid)? {
        Some(p) => Ok(p),
        None if store.account_for_user(uid)?.is_some() => Ok(SkillProfile::empty(uid)),
        None => Err(StoreError::NotFound(uid.to_string())),
    }
}

async fn member_skills(
    State(state): State<AppState>,
    Path(uid): Path<String>,
    headers: HeaderMap,
) -> Result<Json<SkillsResponse>, ApiError> {
    let caller = state.sessions.authenticate(&headers)?;
    if !caller.may_read(&uid) {
        return Err(ApiError::forbidden("members may only read their own skills"));
    }
    let user = uid.clone();
    let merged = with_store(&state.store, move |store| {
        let profile = load_profile(store, &user)?;
        Ok(merge_self(&profile, &store.annotations(&user)?))
    })
    .await?;
    let skills = merged.entries.into_iter().map(|e| SkillRow::project(e, &caller)).collect();
    Ok(Json(SkillsResponse { user_id: uid, skills }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopSkill {
    pub term: String,
    pub display_term: String,
    pub estimated_score: f64,
}

async fn top_skills(
    State(state): State<AppState>,
    Path(uid): Path<String>,
    headers: HeaderMap,
) -> Result<Json<Vec<TopSkill>>, ApiError> {
    let caller = state.sessions.authenticate(&headers)?;
    if !caller.is_operator() {
        return Err(ApiError::forbidden("top skills are restricted to operators"));
    }
    let profile = with_store(&state.store, move |store| load_profile(store, &uid)).await?;
    let top = top_five(&profile)
        .into_iter()
        .map(|(term, e)| TopSkill {
            term: term.to_string(),
            display_term: e.display_term.clone(),
            estimated_score: e.estimated_score,
        })
        .collect();
    Ok(Json(top))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accepted {
    pub accepted: usize,
}

#[derive(Debug, Deserialize)]
struct RawRating {
    term: String,
    self_score: Value,
}

/// Integer multiple of 5 in 0..=100; `37`, `37.5`, `"80"` and `-5` are not.
pub fn validate_score(value: &Value) -> Result<SelfScore, String> {
    let n = match value {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        _ => None,
    };
    n.ok_or_else(|| format!("self_score {value} is not an integer"))
        .and_then(|n| SelfScore::new(n).map_err(|e| e.to_string()))
}

async fn post_skills(
    State(state): State<AppState>,
    Path(uid): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<Accepted>, ApiError> {
    let caller = state.sessions.authenticate(&headers)?;
    if caller != Caller::Member(uid.clone()) {
        return Err(ApiError::forbidden("only the member may submit their own ratings"));
    }
    let raw: Vec<RawRating> = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("expected a list of {{term, self_score}}: {e}")))?;

    // validate everything before writing anything
    let now = Utc::now();
    let mut batch = Vec::with_capacity(raw.len());
    let mut problems = Vec::new();
    for (i, r) in raw.iter().enumerate() {
        let annotation = validate_score(&r.self_score)
            .and_then(|s| SelfAnnotation::new(&uid, &r.term, i64::from(s.get()), now).map_err(|e| e.to_string()));
        match annotation {
            Ok(a) => batch.push(a),
            Err(msg) => problems.push(format!("item {i}: {msg}")),
        }
    }
    if !problems.is_empty() {
        return Err(ApiError::invalid_score(problems.join("; ")));
    }
    let accepted = batch.len();
    with_store(&state.store, move |store| store.put_annotations(&uid, &batch)).await?;
    Ok(Json(Accepted { accepted }))
}

#[derive(Debug, Clone, Deserialize)]
pub struct LoginRequest {
    pub email: String,
    pub password: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoginResponse {
    pub token: String,
    pub user_id: String,
    pub expires_at: DateTime<Utc>,
}

async fn login(State(state): State<AppState>, body: Bytes) -> Result<Json<LoginResponse>, ApiError> {
    let req: LoginRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("expected {{email, password}}: {e}")))?;
    let account = with_store(&state.store, move |store| store.verify_login(&req.email, &req.password))
        .await?
        .ok_or_else(ApiError::invalid_credentials)?;
    let (token, expires_at) = state.sessions.issue(&account.user_id);
    Ok(Json(LoginResponse { token, user_id: account.user_id, expires_at }))
}

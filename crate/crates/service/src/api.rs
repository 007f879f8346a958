//! HTTP+JSON routes. Citizen routes take no credentials and no identity
//! fields; lab and admin routes need `x-lab-id` and `x-lab-secret` headers.

use std::net::{IpAddr, SocketAddr};
use std::sync::Arc;
use std::time::Instant;

use acdc_core::{
    AppointmentSlot, Booking, CodeError, ConfirmationStatus, FlowError, LookupOutcome, TestResult,
    TestingFlow, TestingLocation, VoucherCode, VoucherError, VoucherLedger,
};
use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{ConnectInfo, FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, TimeDelta, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::auth::LabCredentials;
use crate::config::ServiceConfig;
use crate::rate_limit::{client_key, RateDecision, RateLimiter};

#[derive(Clone)]
pub struct AppState {
    pub ledger: Arc<VoucherLedger>,
    pub flow: Arc<TestingFlow>,
    pub labs: Arc<LabCredentials>,
    pub limiter: Arc<RateLimiter>,
    pub config: Arc<ServiceConfig>,
}

impl AppState {
    pub fn new(
        config: ServiceConfig,
        deployment: acdc_core::Deployment,
        labs: LabCredentials,
    ) -> Self {
        AppState {
            ledger: deployment.ledger,
            flow: deployment.flow,
            labs: Arc::new(labs),
            limiter: Arc::new(RateLimiter::new(
                config.rate_limit_burst,
                config.rate_limit_period(),
            )),
            config: Arc::new(config),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/api/info", get(info))
        .route("/api/slots", get(list_slots))
        .route("/api/redeem", post(redeem))
        .route("/api/results/{code}", get(lookup))
        .route("/api/lab/vouchers", post(issue))
        .route("/api/lab/vouchers/single-use", post(issue_single_use))
        .route("/api/lab/performed", post(performed))
        .route("/api/lab/results", post(post_result))
        .route("/api/admin/locations", post(add_location))
        .route("/api/admin/slots", post(add_slots))
        .with_state(state)
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<ConfirmationStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retry_after_seconds: Option<u64>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error,
                message: message.into(),
                state: None,
                retry_after_seconds: None,
            },
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    fn unauthorized() -> Self {
        Self::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "lab credentials rejected",
        )
    }

    /// Same status and body for a code that never existed and one that has
    /// been erased.
    fn not_found() -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", "code not found")
    }

    fn internal() -> Self {
        Self::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal",
            "internal error",
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let retry = self.body.retry_after_seconds;
        let mut resp = (self.status, Json(self.body)).into_response();
        if let Some(secs) = retry {
            resp.headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from(secs));
        }
        resp
    }
}

impl From<CodeError> for ApiError {
    fn from(e: CodeError) -> Self {
        match e {
            CodeError::MalformedCode => {
                ApiError::new(StatusCode::BAD_REQUEST, "malformed_code", e.to_string())
            }
            CodeError::ChecksumMismatch => ApiError::new(
                StatusCode::BAD_REQUEST,
                "checksum_mismatch",
                "code has a typo",
            ),
            CodeError::PolicyTooWeak { .. } | CodeError::InvalidAlphabet(_) => ApiError::internal(),
        }
    }
}

impl From<VoucherError> for ApiError {
    fn from(e: VoucherError) -> Self {
        match e {
            VoucherError::NotFound => ApiError::not_found(),
            VoucherError::Exhausted => {
                ApiError::new(StatusCode::GONE, "exhausted", "voucher fully used")
            }
            VoucherError::Expired => ApiError::new(StatusCode::GONE, "expired", "voucher expired"),
            VoucherError::InvalidLimit => ApiError::bad_request(e.to_string()),
            VoucherError::Code(c) => c.into(),
            VoucherError::CollisionLimit | VoucherError::StorageUnavailable(_) => {
                tracing::error!("voucher ledger: {e}");
                ApiError::new(
                    StatusCode::SERVICE_UNAVAILABLE,
                    "unavailable",
                    "try again later",
                )
            }
        }
    }
}

impl From<FlowError> for ApiError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::NotFound => ApiError::not_found(),
            FlowError::UnknownLocation => {
                ApiError::new(StatusCode::NOT_FOUND, "location_not_found", e.to_string())
            }
            FlowError::UnknownSlot => {
                ApiError::new(StatusCode::NOT_FOUND, "slot_not_found", e.to_string())
            }
            FlowError::SlotFull => ApiError::new(StatusCode::CONFLICT, "slot_full", e.to_string()),
            FlowError::WrongState(s) => {
                let mut err = ApiError::new(
                    StatusCode::CONFLICT,
                    "wrong_state",
                    format!("confirmation is {s}"),
                );
                err.body.state = Some(s);
                err
            }
            FlowError::InvalidWindow | FlowError::InvalidRange | FlowError::Import { .. } => {
                ApiError::bad_request(e.to_string())
            }
            FlowError::Code(c) => c.into(),
            FlowError::Voucher(v) => v.into(),
            FlowError::StorageUnavailable(_) => {
                tracing::error!("testing flow: {e}");
                ApiError::new(
                    StatusCode::SERVICE_UNAVAILABLE,
                    "unavailable",
                    "try again later",
                )
            }
        }
    }
}

/// JSON body whose rejections are reported in the API's error format.
pub struct Body<T>(pub T);

impl<S, T> FromRequest<S> for Body<T>
where
    S: Send + Sync,
    T: DeserializeOwned,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(json_rejection(e)),
        }
    }
}

fn json_rejection(e: JsonRejection) -> ApiError {
    ApiError::bad_request(e.body_text())
}

/// Authenticated lab. The lab id is used for nothing but the check itself.
pub struct Lab;

impl FromRequestParts<AppState> for Lab {
    type Rejection = ApiError;

    async fn from_request_parts(
        parts: &mut Parts,
        state: &AppState,
    ) -> Result<Self, Self::Rejection> {
        let header = |name: &str| {
            parts
                .headers
                .get(name)
                .and_then(|v| v.to_str().ok())
                .unwrap_or("")
        };
        if state
            .labs
            .authenticate(header("x-lab-id"), header("x-lab-secret"))
        {
            Ok(Lab)
        } else {
            Err(ApiError::unauthorized())
        }
    }
}

/// Coarse address prefix used as the rate-limit key and for nothing else.
pub struct ClientKey(String);

impl FromRequestParts<AppState> for ClientKey {
    type Rejection = ApiError;

    async fn from_request_parts(
        parts: &mut Parts,
        state: &AppState,
    ) -> Result<Self, Self::Rejection> {
        let forwarded = state
            .config
            .trust_forwarded_for
            .then(|| {
                parts
                    .headers
                    .get("x-forwarded-for")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.split(',').next())
                    .and_then(|v| v.trim().parse::<IpAddr>().ok())
            })
            .flatten();
        let peer = parts
            .extensions
            .get::<ConnectInfo<SocketAddr>>()
            .map(|ConnectInfo(addr)| addr.ip());
        Ok(ClientKey(
            forwarded
                .or(peer)
                .map_or_else(|| "unknown".to_owned(), client_key),
        ))
    }
}

fn check_rate(state: &AppState, client: &ClientKey) -> Result<(), ApiError> {
    match state.limiter.check(&client.0, Instant::now()) {
        RateDecision::Allow { .. } => Ok(()),
        RateDecision::Deny { retry_after } => {
            let secs = retry_after.as_secs() + u64::from(retry_after.subsec_nanos() > 0);
            let mut err = ApiError::new(
                StatusCode::TOO_MANY_REQUESTS,
                "rate_limited",
                "too many attempts",
            );
            err.body.retry_after_seconds = Some(secs);
            Err(err)
        }
    }
}

/// Runs store work off the async workers; file-backed stores fsync.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|_| ApiError::internal())?
}

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok" })
}

#[derive(Debug, Serialize)]
struct Info {
    voucher_cap: u32,
    code_length: usize,
    alphabet: String,
}

async fn info(State(state): State<AppState>) -> Json<Info> {
    let policy = state.ledger.policy();
    Json(Info {
        voucher_cap: state.config.voucher_cap,
        code_length: policy.code_length(),
        alphabet: policy.alphabet().iter().collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct LocationView {
    pub location_id: String,
    pub label: String,
    pub address: String,
}

impl From<TestingLocation> for LocationView {
    fn from(l: TestingLocation) -> Self {
        LocationView {
            location_id: l.location_id,
            label: l.label,
            address: l.address,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SlotView {
    pub slot_id: String,
    pub location_id: String,
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub capacity: u32,
    pub available: u32,
    pub location: Option<LocationView>,
}

impl SlotView {
    fn new(slot: AppointmentSlot, location: Option<TestingLocation>) -> Self {
        SlotView {
            available: slot.available(),
            slot_id: slot.slot_id,
            location_id: slot.location_id,
            window_start: slot.window_start,
            window_end: slot.window_end,
            capacity: slot.capacity,
            location: location.map(Into::into),
        }
    }
}

#[derive(Debug, Serialize)]
struct SlotList {
    slots: Vec<SlotView>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SlotQuery {
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
}

/// Without a range, lists the next 14 days.
async fn list_slots(
    State(state): State<AppState>,
    query: Result<Query<SlotQuery>, QueryRejection>,
) -> Result<Json<SlotList>, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let from = q.from.unwrap_or_else(Utc::now);
    let to = q.to.unwrap_or(from + TimeDelta::days(14));
    blocking(move || {
        let slots = state.flow.list_available(from, to)?;
        Ok(Json(SlotList {
            slots: slots
                .into_iter()
                .map(|s| {
                    let loc = state.flow.location(&s.location_id);
                    SlotView::new(s, loc)
                })
                .collect(),
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RedeemRequest {
    code: String,
    slot_id: String,
}

#[derive(Debug, Serialize)]
struct BookingView {
    confirmation_code: String,
    slot: SlotView,
}

impl From<Booking> for BookingView {
    fn from(b: Booking) -> Self {
        BookingView {
            confirmation_code: b.confirmation.confirmation_code.render(),
            slot: SlotView::new(b.slot, b.location),
        }
    }
}

async fn redeem(
    State(state): State<AppState>,
    client: ClientKey,
    Body(req): Body<RedeemRequest>,
) -> Result<(StatusCode, Json<BookingView>), ApiError> {
    check_rate(&state, &client)?;
    blocking(move || {
        let code = state.ledger.parse(&req.code)?;
        let now = Utc::now();
        let token = state.ledger.redeem(&code, now)?;
        let booking = state.flow.book_appointment(token, &req.slot_id, now)?;
        Ok((StatusCode::CREATED, Json(booking.into())))
    })
    .await
}

#[derive(Debug, Serialize)]
struct LookupView {
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    chain_voucher: Option<String>,
    /// How many people the chain voucher may be shared with.
    #[serde(skip_serializing_if = "Option::is_none")]
    voucher_cap: Option<u32>,
}

async fn lookup(
    State(state): State<AppState>,
    client: ClientKey,
    Path(raw): Path<String>,
) -> Result<Json<LookupView>, ApiError> {
    check_rate(&state, &client)?;
    blocking(move || {
        let code = state.flow.parse_confirmation(&raw)?;
        let view = match state.flow.lookup_result(&code)? {
            LookupOutcome::Pending => LookupView {
                status: "pending",
                chain_voucher: None,
                voucher_cap: None,
            },
            LookupOutcome::Ready {
                result,
                chain_voucher,
            } => LookupView {
                status: result_name(result),
                voucher_cap: chain_voucher.as_ref().map(|c| {
                    state
                        .ledger
                        .get(c)
                        .map_or(state.config.voucher_cap, |r| r.initial_limit)
                }),
                chain_voucher: chain_voucher.map(|c| c.render()),
            },
        };
        Ok(Json(view))
    })
    .await
}

fn result_name(r: TestResult) -> &'static str {
    match r {
        TestResult::Negative => "negative",
        TestResult::Positive => "positive",
        TestResult::Inconclusive => "inconclusive",
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct IssueRequest {
    limit: Option<u32>,
}

#[derive(Debug, Serialize)]
struct IssuedVoucher {
    code: String,
    limit: u32,
    expires_at: DateTime<Utc>,
}

async fn issue(
    State(state): State<AppState>,
    _lab: Lab,
    body: Bytes,
) -> Result<(StatusCode, Json<IssuedVoucher>), ApiError> {
    let req: IssueRequest = if body.iter().all(u8::is_ascii_whitespace) {
        IssueRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?
    };
    let limit = req.limit.unwrap_or(state.config.voucher_cap);
    if limit == 0 || limit > state.config.voucher_cap {
        return Err(ApiError::bad_request(format!(
            "limit must be between 1 and {}",
            state.config.voucher_cap
        )));
    }
    issue_with_limit(state, limit).await
}

async fn issue_single_use(
    State(state): State<AppState>,
    _lab: Lab,
) -> Result<(StatusCode, Json<IssuedVoucher>), ApiError> {
    issue_with_limit(state, 1).await
}

async fn issue_with_limit(
    state: AppState,
    limit: u32,
) -> Result<(StatusCode, Json<IssuedVoucher>), ApiError> {
    blocking(move || {
        let rec = state
            .ledger
            .issue_voucher(limit, state.config.voucher_ttl(), Utc::now())?;
        Ok((
            StatusCode::CREATED,
            Json(IssuedVoucher {
                code: rec.code.render(),
                limit: rec.initial_limit,
                expires_at: rec.expires_at,
            }),
        ))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PerformedRequest {
    confirmation_code: String,
}

#[derive(Debug, Serialize)]
struct ConfirmationView {
    confirmation_code: String,
    status: ConfirmationStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<TestResult>,
}

async fn performed(
    State(state): State<AppState>,
    _lab: Lab,
    Body(req): Body<PerformedRequest>,
) -> Result<Json<ConfirmationView>, ApiError> {
    blocking(move || {
        let code = state.flow.parse_confirmation(&req.confirmation_code)?;
        state.flow.mark_performed(&code)?;
        Ok(Json(ConfirmationView {
            confirmation_code: code.render(),
            status: ConfirmationStatus::Performed,
            result: None,
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResultRequest {
    confirmation_code: String,
    result: TestResult,
}

/// The response never includes the chain voucher: only the citizen holding
/// the confirmation code can fetch it.
async fn post_result(
    State(state): State<AppState>,
    _lab: Lab,
    Body(req): Body<ResultRequest>,
) -> Result<Json<ConfirmationView>, ApiError> {
    blocking(move || {
        let code: VoucherCode = state.flow.parse_confirmation(&req.confirmation_code)?;
        state
            .flow
            .post_result(&code, req.result, Utc::now(), state.config.chain_policy())?;
        Ok(Json(ConfirmationView {
            confirmation_code: code.render(),
            status: ConfirmationStatus::ResultReady,
            result: Some(req.result),
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LocationRequest {
    label: String,
    address: String,
}

async fn add_location(
    State(state): State<AppState>,
    _lab: Lab,
    Body(req): Body<LocationRequest>,
) -> Result<(StatusCode, Json<LocationView>), ApiError> {
    blocking(move || {
        let loc = state.flow.add_location(&req.label, &req.address)?;
        Ok((StatusCode::CREATED, Json(loc.into())))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SlotWindow {
    window_start: DateTime<Utc>,
    window_end: DateTime<Utc>,
    capacity: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SlotsRequest {
    location_id: String,
    slots: Vec<SlotWindow>,
}

async fn add_slots(
    State(state): State<AppState>,
    _lab: Lab,
    Body(req): Body<SlotsRequest>,
) -> Result<(StatusCode, Json<SlotList>), ApiError> {
    blocking(move || {
        let specs: Vec<acdc_core::SlotSpec> = req
            .slots
            .iter()
            .map(|w| acdc_core::SlotSpec {
                window_start: w.window_start,
                window_end: w.window_end,
                capacity: w.capacity,
            })
            .collect();
        let created = state.flow.add_slots(&req.location_id, &specs)?;
        let loc = state.flow.location(&req.location_id);
        Ok((
            StatusCode::CREATED,
            Json(SlotList {
                slots: created
                    .into_iter()
                    .map(|s| SlotView::new(s, loc.clone()))
                    .collect(),
            }),
        ))
    })
    .await
}

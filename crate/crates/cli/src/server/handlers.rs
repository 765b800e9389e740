use std::collections::HashMap;
use std::str::FromStr;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use earthgan::grid::ShellGrid;
use earthgan::inference::WedgeNoise;
use earthgan::training::read_metrics;

use super::{AppState, Timestep};

/// Largest `avg:N` accepted over HTTP.
const MAX_AVERAGED: usize = 64;

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(m: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, m)
    }

    fn not_found(m: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, m)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(json!({"error": self.message, "status": self.status.as_u16()}));
        (self.status, body).into_response()
    }
}

type Params = Query<HashMap<String, String>>;
type ApiResult<T> = Result<T, ApiError>;

fn required<T: FromStr>(q: &HashMap<String, String>, key: &str) -> ApiResult<T> {
    let raw = q
        .get(key)
        .ok_or_else(|| ApiError::bad_request(format!("missing parameter {key}")))?;
    raw.parse()
        .map_err(|_| ApiError::bad_request(format!("malformed parameter {key}={raw:?}")))
}

fn noise_param(q: &HashMap<String, String>) -> ApiResult<WedgeNoise> {
    let n: WedgeNoise = match q.get("noise") {
        None => WedgeNoise::Zero,
        Some(s) => s.parse().map_err(|e: earthgan::Error| ApiError::bad_request(e.to_string()))?,
    };
    if let WedgeNoise::Averaged(s) = &n {
        if s.len() > MAX_AVERAGED {
            return Err(ApiError::bad_request(format!(
                "avg:{} exceeds the limit of {MAX_AVERAGED} samples",
                s.len()
            )));
        }
    }
    Ok(n)
}

fn timestep<'a>(state: &'a AppState, q: &HashMap<String, String>) -> ApiResult<(u64, &'a Timestep)> {
    let t: u64 = required(q, "t")?;
    let known = &state.inner.steps;
    known.get(&t).map(|s| (t, s)).ok_or_else(|| {
        ApiError::not_found(format!(
            "unknown timestep {t}; available {:?}",
            known.keys().collect::<Vec<_>>()
        ))
    })
}

fn binary(dims: &[usize], values: &[f32], extra: &[(&'static str, String)]) -> Response {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let body: Vec<u8> = values.iter().flat_map(|x| x.to_le_bytes()).collect();
    let mut resp = body.into_response();
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
    let dims = dims.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    let mut set = |k: &'static str, v: String| {
        if let Ok(v) = HeaderValue::from_str(&v) {
            h.insert(HeaderName::from_static(k), v);
        }
    };
    set("x-dims", dims);
    set("x-dtype", "f32le".into());
    set("x-value-min", format!("{lo}"));
    set("x-value-max", format!("{hi}"));
    for (k, v) in extra {
        set(k, v.clone());
    }
    resp
}

pub async fn meta(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(state.inner.meta.clone())
}

/// The stitched model shell for `(t, noise)`, generated at most once.
async fn fake_shell(state: &AppState, t: u64, noise: WedgeNoise) -> ApiResult<Arc<ShellGrid<f32>>> {
    if let Some(p) = &state.inner.steps[&t].precomputed {
        return Ok(p.clone());
    }
    let cell = state.shell_cell((t, noise.to_string()));
    let init = cell.get_or_try_init(|| async {
        let permit = state
            .inner
            .pool
            .clone()
            .try_acquire_owned()
            .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "worker pool saturated"))?;
        let st = state.clone();
        let job = tokio::task::spawn_blocking(move || {
            let _permit = permit;
            st.inner.computed.fetch_add(1, Ordering::SeqCst);
            let i = &st.inner;
            i.surrogate
                .shell(&i.steps[&t].lr, i.frame, i.stride, i.blend, &noise, 1)
                .map(|s| Arc::new(s.shell))
        });
        match job.await {
            Ok(Ok(s)) => Ok(s),
            Ok(Err(e)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
            Err(e) => Err(ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                format!("generation task failed: {e}"),
            )),
        }
    });
    match tokio::time::timeout(state.inner.timeout, init).await {
        Ok(r) => r.cloned(),
        Err(_) => Err(ApiError::new(
            StatusCode::GATEWAY_TIMEOUT,
            format!("shell generation exceeded {:?}", state.inner.timeout),
        )),
    }
}

pub async fn shell(State(state): State<AppState>, Query(q): Params) -> ApiResult<Response> {
    let (t, step) = timestep(&state, &q)?;
    let vars = step.lr.variables();
    let raw_var = q
        .get("var")
        .ok_or_else(|| ApiError::bad_request("missing parameter var"))?;
    let var = match raw_var.parse::<usize>() {
        Ok(i) if i < vars.len() => i,
        Ok(i) => {
            return Err(ApiError::not_found(format!(
                "variable index {i} outside 0..{}",
                vars.len() - 1
            )))
        }
        Err(_) => vars
            .iter()
            .position(|v| v == raw_var)
            .ok_or_else(|| ApiError::not_found(format!("unknown variable {raw_var:?}")))?,
    };
    let r: usize = required(&q, "r")?;
    let radial = state.inner.geometry.out[0];
    if r >= radial {
        return Err(ApiError::not_found(format!(
            "radial index {r} out of range (valid 0..{})",
            radial - 1
        )));
    }
    let source = q.get("source").map(String::as_str).unwrap_or("fake");
    let noise = noise_param(&q)?;
    let truth = || {
        step.truth.as_ref().ok_or_else(|| {
            ApiError::new(StatusCode::CONFLICT, "truth volumes are not loaded by this service")
        })
    };
    let values: Vec<f32> = match source {
        "fake" => fake_shell(&state, t, noise.clone()).await?.layer(var, r).to_vec(),
        "truth" => truth()
            .map_err(|_| ApiError::not_found("source truth is not available"))?
            .layer(var, r)
            .to_vec(),
        "diff" => {
            let truth = truth()?;
            let fake = fake_shell(&state, t, noise.clone()).await?;
            fake.layer(var, r)
                .iter()
                .zip(truth.layer(var, r))
                .map(|(a, b)| a - b)
                .collect()
        }
        other => {
            return Err(ApiError::not_found(format!(
                "unknown source {other:?} (fake|truth|diff)"
            )))
        }
    };
    let [_, _, h, w] = state.inner.geometry.shell_dims(vars.len());
    Ok(binary(
        &[h, w],
        &values,
        &[
            ("x-timestep", t.to_string()),
            ("x-variable", vars[var].clone()),
            ("x-radial", r.to_string()),
            ("x-source", source.to_string()),
            ("x-noise", noise.to_string()),
        ],
    ))
}

pub async fn wedge(State(state): State<AppState>, Query(q): Params) -> ApiResult<Response> {
    let (t, _) = timestep(&state, &q)?;
    let lon_start: usize = required(&q, "lon_start")?;
    let cols = state.inner.steps[&t].lr.lon();
    if lon_start >= cols {
        return Err(ApiError::not_found(format!(
            "lon_start {lon_start} out of range (valid 0..{})",
            cols - 1
        )));
    }
    let noise = noise_param(&q)?;
    let permit = state
        .inner
        .pool
        .clone()
        .try_acquire_owned()
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "worker pool saturated"))?;
    let st = state.clone();
    let label = noise.to_string();
    let job = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        let i = &st.inner;
        i.surrogate.wedge(&i.steps[&t].lr, i.frame, lon_start, &noise)
    });
    let w = match tokio::time::timeout(state.inner.timeout, job).await {
        Err(_) => {
            return Err(ApiError::new(
                StatusCode::GATEWAY_TIMEOUT,
                "wedge generation timed out",
            ))
        }
        Ok(Err(e)) => return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
        Ok(Ok(Err(e))) => return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
        Ok(Ok(Ok(w))) => w,
    };
    Ok(binary(
        w.data.shape(),
        w.data.data(),
        &[
            ("x-timestep", t.to_string()),
            ("x-lon-start", lon_start.to_string()),
            ("x-hr-lon-start", w.hr_lon_start.to_string()),
            ("x-hr-lat-start", w.hr_lat_start.to_string()),
            ("x-noise", label),
        ],
    ))
}

pub async fn metrics(State(state): State<AppState>, Query(q): Params) -> ApiResult<Json<serde_json::Value>> {
    let path = state
        .inner
        .metrics
        .clone()
        .ok_or_else(|| ApiError::not_found("no metrics log for the loaded checkpoint"))?;
    let n: usize = match q.get("n") {
        None => 100,
        Some(_) => required(&q, "n")?,
    };
    let records = tokio::task::spawn_blocking(move || read_metrics(&path))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let tail = &records[records.len().saturating_sub(n)..];
    Ok(Json(json!({"total": records.len(), "records": tail})))
}

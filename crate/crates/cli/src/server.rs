//! HTTP facade over a [`Redactor`] for the review frontend.
//!
//! | route | result |
//! |---|---|
//! | `GET /attributes` | taxonomy |
//! | `GET /scales` | redaction scales and threshold multipliers |
//! | `GET /images?split=` | image summaries |
//! | `GET /images/{id}` | metadata and instance summary |
//! | `GET /images/{id}/image` | original image as PNG |
//! | `GET /images/{id}/mask?attribute=&scale=&source=` | RLE mask |
//! | `POST /redact` | redacted PNG |
//! | `GET /reports/eval`, `GET /reports/pu` | reports, 404 when not loaded |
//!
//! Errors are JSON `{"error": "..."}` with 400 for bad input, 404 for
//! unknown images or missing data, 500 otherwise.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use redact_core::dataset::Split;
use redact_core::mask::{rle_encode, BinaryMask};
use redact_core::render::{encode_png_rgb, Level, MaskSource, RedactionRequest, Redactor};
use redact_core::taxonomy::Attribute;
use redact_core::Error;
use serde::Deserialize;
use serde_json::{json, Value};

pub struct ServiceState {
    pub redactor: Redactor,
    pub eval_report: Option<Value>,
    pub pu_report: Option<Value>,
}

type Shared = Arc<ServiceState>;

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        let status = match &err {
            Error::NotFound(_) | Error::MissingPrediction { .. } => StatusCode::NOT_FOUND,
            Error::InvalidScale(_)
            | Error::InvalidInput(_)
            | Error::UnknownAttribute(_)
            | Error::MalformedFile { .. }
            | Error::EmptyGroundTruth => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            message: err.to_string(),
        }
    }
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/attributes", get(attributes))
        .route("/scales", get(scales))
        .route("/images", get(images))
        .route("/images/{id}", get(image_detail))
        .route("/images/{id}/image", get(image_png))
        .route("/images/{id}/mask", get(mask))
        .route("/redact", post(redact))
        .route("/reports/eval", get(eval_report))
        .route("/reports/pu", get(pu_report))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: e.to_string(),
    })?
}

fn png_response(bytes: Vec<u8>, redacted: Option<usize>) -> Response {
    let mut resp = ([(header::CONTENT_TYPE, "image/png")], bytes).into_response();
    if let Some(n) = redacted {
        resp.headers_mut()
            .insert("x-redacted-pixels", n.to_string().parse().expect("digits"));
    }
    resp
}

async fn attributes() -> Json<Value> {
    let list: Vec<Value> = Attribute::ALL
        .iter()
        .map(|a| json!({"key": a, "category": a.category(), "name": a.display_name()}))
        .collect();
    Json(Value::Array(list))
}

async fn scales(State(state): State<Shared>) -> Json<Value> {
    let config = state.redactor.config();
    let scales: Vec<Level> = config.scales.iter().map(|s| Level::Value(s.value())).collect();
    Json(json!({
        "ground_truth": scales,
        "prediction": config.multipliers,
        "textual_extra": [Level::AllText],
    }))
}

#[derive(Deserialize)]
struct ImagesQuery {
    split: Option<String>,
}

async fn images(State(state): State<Shared>, Query(q): Query<ImagesQuery>) -> ApiResult<Json<Value>> {
    let split = q
        .split
        .map(|s| s.parse::<Split>())
        .transpose()
        .map_err(ApiError::from)?;
    let list: Vec<Value> = state
        .redactor
        .dataset()
        .images()
        .iter()
        .filter(|img| split.is_none_or(|s| img.split == s))
        .map(|img| {
            json!({
                "id": img.id, "width": img.width, "height": img.height,
                "split": img.split, "attributes": img.attributes(),
            })
        })
        .collect();
    Ok(Json(Value::Array(list)))
}

async fn image_detail(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let img = state
        .redactor
        .dataset()
        .image(&id)
        .ok_or_else(|| ApiError::not_found(format!("image `{id}` not found")))?;
    let mut instances = Vec::new();
    for inst in &img.instances {
        let area = inst.rasterize(img.width, img.height)?.area();
        instances.push(json!({
            "instance_id": inst.instance_id, "attribute": inst.attribute,
            "category": inst.attribute.category(), "area": area,
        }));
    }
    let predictions: Vec<Attribute> = Attribute::ALL
        .into_iter()
        .filter(|&a| state.redactor.predictions().contains_key(&(id.clone(), a)))
        .collect();
    Ok(Json(json!({
        "id": img.id, "file_name": img.file_name, "width": img.width, "height": img.height,
        "split": img.split, "attributes": img.attributes(), "instances": instances,
        "words": img.words.as_ref().map_or(0, |w| w.len()),
        "predictions": predictions,
    })))
}

async fn image_png(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || {
        let img = state.redactor.load_image(&id)?;
        Ok(png_response(encode_png_rgb(&img)?, None))
    })
    .await
}

#[derive(Deserialize)]
struct MaskQuery {
    attribute: Option<String>,
    scale: Option<String>,
    source: Option<String>,
}

async fn mask(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<MaskQuery>,
) -> ApiResult<Json<Value>> {
    let attribute: Attribute = q
        .attribute
        .as_deref()
        .ok_or_else(|| ApiError::bad_request("missing `attribute` query parameter"))?
        .parse()?;
    let level: Level = q.scale.as_deref().unwrap_or("1").parse()?;
    let source: MaskSource = q.source.as_deref().unwrap_or("ground_truth").parse()?;
    blocking(move || {
        let m: BinaryMask = state.redactor.selection_mask(&id, attribute, level, source)?;
        Ok(Json(json!({
            "image_id": id, "attribute": attribute, "scale": level, "source": source,
            "area": m.area(), "rle": rle_encode(&m),
        })))
    })
    .await
}

async fn redact(State(state): State<Shared>, body: Bytes) -> ApiResult<Response> {
    let request: RedactionRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))?;
    blocking(move || {
        let out = state.redactor.redact(&request)?;
        Ok(png_response(out.png()?, Some(out.mask.area())))
    })
    .await
}

async fn eval_report(State(state): State<Shared>) -> ApiResult<Json<Value>> {
    state
        .eval_report
        .clone()
        .map(Json)
        .ok_or_else(|| ApiError::not_found("no evaluation report: start the server with predictions"))
}

async fn pu_report(State(state): State<Shared>) -> ApiResult<Json<Value>> {
    state
        .pu_report
        .clone()
        .map(Json)
        .ok_or_else(|| ApiError::not_found("no privacy-utility report: start the server with responses"))
}

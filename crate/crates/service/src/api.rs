//! HTTP routes. JSON in and out; field names follow the annotation schema.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pnl_core::data::{derive_quality_label, parse_annotations, CaseRecord, DataError};
use pnl_core::evaluation::{landmark_errors, predict_image, ImagePrediction, LandmarkErrors};
use pnl_core::geometry::{ImageShape, Laterality, PixelSpacing, QualityLabel};
use pnl_core::imaging::{native_landmarks, ImageGrid, PreprocessParams};
use pnl_train::NetPredictor;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::store::{valid_case_id, AnnotationEntry, AnnotationStore};
use crate::verdict::{handle_verdict, VerdictRequest};
use crate::ServiceError;

/// A trained model as served. Never mutated after loading.
#[derive(Debug)]
pub struct LoadedModel {
    pub id: String,
    pub predictor: NetPredictor,
}

#[derive(Debug, Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

#[derive(Debug)]
struct Inner {
    store: AnnotationStore,
    data_dir: Option<PathBuf>,
    margin: f64,
    model: RwLock<Option<Arc<LoadedModel>>>,
}

impl AppState {
    /// `data_dir` resolves the relative image paths of stored records.
    pub fn new(store: AnnotationStore, data_dir: Option<PathBuf>) -> Self {
        Self {
            inner: Arc::new(Inner {
                store,
                data_dir,
                margin: PreprocessParams::default().margin,
                model: RwLock::new(None),
            }),
        }
    }

    pub fn store(&self) -> &AnnotationStore {
        &self.inner.store
    }

    /// Replaces the served model in one step; requests in flight keep the
    /// snapshot they started with.
    pub fn set_model(&self, model: LoadedModel) {
        *self.inner.model.write().expect("model lock") = Some(Arc::new(model));
    }

    pub fn model(&self) -> Option<Arc<LoadedModel>> {
        self.inner.model.read().expect("model lock").clone()
    }

    fn image_of(&self, record: &CaseRecord) -> Result<ImageGrid, ServiceError> {
        let dir = self.inner.data_dir.as_ref().ok_or_else(|| ServiceError::NotFound("no image directory".into()))?;
        let path = dir.join(&record.image);
        if !path.is_file() {
            return Err(ServiceError::NotFound(format!("image for {}", record.case_id)));
        }
        Ok(ImageGrid::load(path)?)
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::BadRequest(_) | ServiceError::Config(_) => StatusCode::BAD_REQUEST,
            ServiceError::Data(DataError::Schema { .. }) => StatusCode::BAD_REQUEST,
            ServiceError::Unprocessable(_) | ServiceError::Imaging(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Data(DataError::Imaging(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict { .. } => StatusCode::CONFLICT,
            ServiceError::UnsupportedMedia(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            ServiceError::NoModel => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": self.to_string() });
        if let ServiceError::Conflict { current, .. } = &self {
            body["current_revision"] = json!(current);
        }
        (status, Json(body)).into_response()
    }
}

/// All API routes; with `static_dir`, every other path serves files from it.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/verdict", post(verdict))
        .route("/api/predict", post(predict))
        .route("/api/annotations/{case_id}", get(get_annotation).put(put_annotation))
        .route("/api/cases", get(list_cases))
        .route("/api/images/{case_id}", get(case_image))
        .layer(DefaultBodyLimit::max(64 << 20))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn verdict(body: Bytes) -> Result<Response, ServiceError> {
    let req = VerdictRequest::parse(&body)?;
    Ok(Json(handle_verdict(&req)?).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictResponse {
    pub model: String,
    #[serde(flatten)]
    pub prediction: ImagePrediction,
    /// Errors against the stored annotation when a known `case_id` was sent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors: Option<LandmarkErrors>,
}

async fn predict(State(state): State<AppState>, mut form: Multipart) -> Result<Json<PredictResponse>, ServiceError> {
    let mut image = None;
    let mut laterality = None;
    let mut case_id = None;
    let mut model_id = None;
    let mut spacing = [None, None];
    while let Some(field) = form.next_field().await.map_err(|e| ServiceError::BadRequest(e.to_string()))? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let text = || String::from_utf8_lossy(&bytes).trim().to_string();
        match name.as_str() {
            "image" => image = Some(bytes.clone()),
            "laterality" => {
                laterality = Some(match text().as_str() {
                    "L" => Laterality::Left,
                    "R" => Laterality::Right,
                    other => return Err(ServiceError::BadRequest(format!("laterality {other:?}"))),
                })
            }
            "case_id" => case_id = Some(text()),
            "model" => model_id = Some(text()),
            "sx" | "sy" => {
                let v: f64 = text().parse().map_err(|_| ServiceError::BadRequest(format!("{name} must be a number")))?;
                spacing[usize::from(name == "sy")] = Some(v);
            }
            _ => {}
        }
    }

    let model = state.model().ok_or(ServiceError::NoModel)?;
    if let Some(id) = &model_id {
        if *id != model.id {
            return Err(ServiceError::NotFound(format!("model {id:?}; serving {:?}", model.id)));
        }
    }
    let bytes = image.ok_or_else(|| ServiceError::BadRequest("missing image field".into()))?;
    let img = ImageGrid::decode(&bytes).map_err(|e| ServiceError::UnsupportedMedia(e.to_string()))?;
    let record = match &case_id {
        Some(id) => Some(state.store().get(id).ok_or_else(|| ServiceError::NotFound(format!("case {id}")))?.record),
        None => None,
    };
    let laterality = laterality.or(record.as_ref().map(|r| r.laterality)).unwrap_or(Laterality::Left);
    let spacing = match (spacing, &record) {
        ([Some(sx), Some(sy)], _) => PixelSpacing::new(sx, sy).map_err(|e| ServiceError::BadRequest(e.to_string()))?,
        ([None, None], Some(r)) => r.pixel_spacing,
        ([None, None], None) => PixelSpacing::isotropic(1.0).expect("unit spacing"),
        _ => return Err(ServiceError::BadRequest("send both sx and sy".into())),
    };
    let margin = state.inner.margin;
    let out = tokio::task::spawn_blocking(move || -> Result<PredictResponse, ServiceError> {
        let params = PreprocessParams { output_size: model.predictor.input_size(), margin, ..Default::default() };
        let prediction = predict_image(&model.predictor, &img, spacing, laterality, &params)?;
        let errors = match record {
            Some(r) => {
                let truth = native_landmarks(&r, img.shape().map_err(pnl_core::imaging::ImagingError::from)?, margin)?;
                Some(landmark_errors(&prediction.landmarks, &truth, spacing, laterality)?)
            }
            None => None,
        };
        Ok(PredictResponse { model: model.id.clone(), prediction, errors })
    })
    .await
    .map_err(|e| ServiceError::Io(std::io::Error::other(e)))??;
    Ok(Json(out))
}

async fn get_annotation(
    State(state): State<AppState>,
    Path(case_id): Path<String>,
) -> Result<Json<AnnotationEntry>, ServiceError> {
    state.store().get(&case_id).map(Json).ok_or_else(|| ServiceError::NotFound(format!("case {case_id}")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PutBody {
    record: serde_json::Value,
    /// Revision the edit was based on; 0 for a new case.
    revision: u64,
}

async fn put_annotation(
    State(state): State<AppState>,
    Path(case_id): Path<String>,
    body: Bytes,
) -> Result<Json<AnnotationEntry>, ServiceError> {
    if !valid_case_id(&case_id) {
        return Err(ServiceError::BadRequest(format!("invalid case id {case_id:?}")));
    }
    let body: PutBody = serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let mut record = parse_annotations(&serde_json::Value::Array(vec![body.record]).to_string())?.remove(0);
    if record.case_id != case_id {
        return Err(ServiceError::BadRequest(format!("record is for {:?}, path says {case_id:?}", record.case_id)));
    }
    let shape = match record.image_shape {
        Some(s) => Some(s),
        None => state.image_of(&record).ok().map(|img| img.shape()).transpose().map_err(DataError::from)?,
    };
    if let Some(shape) = shape {
        record.image_shape = Some(shape);
        record.derived_label = Some(derive_quality_label(&record, shape)?);
    }
    Ok(Json(state.store().put(record, body.revision)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case_id: String,
    pub exam_id: String,
    pub laterality: Laterality,
    pub image: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_shape: Option<ImageShape>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub derived_label: Option<QualityLabel>,
    pub revision: u64,
}

async fn list_cases(State(state): State<AppState>) -> Json<Vec<CaseSummary>> {
    Json(
        state
            .store()
            .list()
            .into_iter()
            .map(|e| CaseSummary {
                case_id: e.record.case_id,
                exam_id: e.record.exam_id,
                laterality: e.record.laterality,
                image: e.record.image,
                image_shape: e.record.image_shape,
                derived_label: e.record.derived_label,
                revision: e.revision,
            })
            .collect(),
    )
}

async fn case_image(State(state): State<AppState>, Path(case_id): Path<String>) -> Result<Response, ServiceError> {
    let entry = state.store().get(&case_id).ok_or_else(|| ServiceError::NotFound(format!("case {case_id}")))?;
    let png = tokio::task::spawn_blocking(move || -> Result<Vec<u8>, ServiceError> {
        Ok(state.image_of(&entry.record)?.encode_png8()?)
    })
    .await
    .map_err(|e| ServiceError::Io(std::io::Error::other(e)))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

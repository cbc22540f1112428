//! Read-mostly HTTP API over a finished pipeline work directory.
//!
//! Every response is a function of the work directory and the request. The
//! only server-side state is a snapshot cache of parsed artifacts, keyed by
//! the digest of the files it was built from.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Map, Value};
use tower_http::cors::{Any, CorsLayer};

use pneunet_core::design_space::{DesignDataset, DesignParams, ModeCounts, ParameterBounds};
use pneunet_core::geometry::{self, FeasibilityReport, LayoutOptions};
use pneunet_core::gmm::{GmmModel, ModelSpace};
use pneunet_core::kinematics::{self, KinematicsConfig, ModeClassification};
use pneunet_core::metrics::{self, DistanceSpace};
use pneunet_core::pipeline::{self, DecodeSource};
use pneunet_core::preprocess::{self, DependentDiscrepancy, FeatureSchema};
use pneunet_core::util;
use pneunet_core::workdir::{self, EmbeddingRow, Workdir};
use pneunet_core::{Error, FeatureMatrix};

/// Largest `n` accepted by the generation endpoint.
pub const MAX_GENERATE: usize = 10_000;

/// Routes served, as listed at `/api`.
pub const ROUTES: [(&str, &str, &str); 8] = [
    ("GET", "/api", "this route listing"),
    ("GET", "/api/embedding", "embedded rows {id, dim1, dim2, mode}"),
    ("POST", "/api/decode", "body {x, y, k}: decode an embedding point to a design"),
    ("POST", "/api/generate", "body {n, seed}: sample designs with per-row novelty"),
    ("GET", "/api/design/{id}", "dataset row with its feasibility report"),
    ("GET", "/api/design/{id}/trajectory", "query pressure=kPa: backbone polyline and mode classification"),
    ("GET", "/api/design/{id}/mesh", "binary STL of the actuator body"),
    ("GET", "/api/metrics", "novelty and diversity reports written by evaluate"),
];

/// Artifacts whose contents define a snapshot.
const SNAPSHOT_FILES: [&str; 5] = [
    workdir::BOUNDS_FILE,
    workdir::DATA_FILE,
    workdir::SCHEMA_FILE,
    workdir::MODEL_FILE,
    workdir::EMBEDDING_FILE,
];

/// Artifacts derived from the dataset (schema, encoding, decoder).
struct Derived {
    schema: FeatureSchema,
    encoded: FeatureMatrix,
    decode: Option<DecodeSource>,
}

/// Parsed artifacts of one version of the work directory. Derived artifacts
/// keep their own error so only the endpoints that need them fail.
struct Snapshot {
    bounds: ParameterBounds,
    data: Option<DesignDataset>,
    derived: Option<Result<Derived, String>>,
    model: Option<GmmModel>,
    embedding: Option<Vec<EmbeddingRow>>,
}

impl Snapshot {
    fn load(wd: &Workdir) -> Result<Self, Error> {
        let bounds = wd.bounds()?;
        let present = |name: &str| wd.path(name).is_file();
        let data = if present(workdir::DATA_FILE) {
            Some(DesignDataset::read_csv(&wd.path(workdir::DATA_FILE), bounds.clone())?)
        } else {
            None
        };
        let model = if present(workdir::MODEL_FILE) {
            Some(GmmModel::load(&wd.path(workdir::MODEL_FILE))?)
        } else {
            None
        };
        let embedding = if present(workdir::EMBEDDING_FILE) {
            Some(workdir::read_embedding_csv(&wd.path(workdir::EMBEDDING_FILE))?)
        } else {
            None
        };
        let derived = data.as_ref().map(|d| {
            let derive = || -> Result<Derived, Error> {
                let schema = if present(workdir::SCHEMA_FILE) {
                    FeatureSchema::load(&wd.path(workdir::SCHEMA_FILE))?
                } else {
                    preprocess::fit_schema(d)?
                };
                let encoded = preprocess::encode_all(d.params(), &schema)?;
                let decode = match &embedding {
                    Some(e) => Some(DecodeSource::new(d, &schema, e, pipeline::DEFAULT_DECODE_K)?),
                    None => None,
                };
                Ok(Derived {
                    schema,
                    encoded,
                    decode,
                })
            };
            derive().map_err(|e| e.to_string())
        });
        Ok(Snapshot {
            bounds,
            data,
            derived,
            model,
            embedding,
        })
    }
}

struct AppState {
    workdir: Workdir,
    cache: Mutex<Option<(String, Arc<Snapshot>)>>,
}

impl AppState {
    /// Current snapshot, rebuilt whenever an artifact's digest changes.
    fn snapshot(&self) -> Result<Arc<Snapshot>, ApiError> {
        let mut digest = String::new();
        for name in SNAPSHOT_FILES {
            let p = self.workdir.path(name);
            let part = match std::fs::read(&p) {
                Ok(bytes) => util::sha256_hex(&bytes),
                Err(_) => "absent".to_string(),
            };
            digest.push_str(&part);
            digest.push(';');
        }
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((d, snap)) = cache.as_ref() {
            if *d == digest {
                return Ok(Arc::clone(snap));
            }
        }
        let snap = Arc::new(Snapshot::load(&self.workdir)?);
        *cache = Some((digest, Arc::clone(&snap)));
        Ok(snap)
    }

    fn require<'a, T>(&self, item: &'a Option<T>, file: &str) -> Result<&'a T, ApiError> {
        item.as_ref()
            .ok_or_else(|| ApiError::from(Error::MissingArtifact(self.workdir.path(file))))
    }

    fn derived<'a>(&self, snap: &'a Snapshot) -> Result<&'a Derived, ApiError> {
        self.require(&snap.derived, workdir::DATA_FILE)?
            .as_ref()
            .map_err(|m| ApiError::from(Error::Data(m.clone())))
    }

    fn decoder<'a>(&self, snap: &'a Snapshot) -> Result<&'a DecodeSource, ApiError> {
        self.require(&self.derived(snap)?.decode, workdir::EMBEDDING_FILE)
    }
}

/// Builds the API router over `workdir`.
pub fn router(workdir: impl Into<PathBuf>) -> Router {
    let state = Arc::new(AppState {
        workdir: Workdir::new(workdir),
        cache: Mutex::new(None),
    });
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/api", get(routes))
        .route("/api/embedding", get(get_embedding))
        .route("/api/decode", post(post_decode))
        .route("/api/generate", post(post_generate))
        .route("/api/design/{id}", get(get_design))
        .route("/api/design/{id}/trajectory", get(get_trajectory))
        .route("/api/design/{id}/mesh", get(get_mesh))
        .route("/api/metrics", get(get_metrics))
        .fallback(not_found)
        .layer(cors)
        .with_state(state)
}

/// Serves the API on `addr` until the process is stopped.
pub async fn serve(workdir: impl Into<PathBuf>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, router(workdir)).await
}

#[derive(Debug, Serialize)]
struct FieldError {
    field: String,
    message: String,
}

/// Error response: `{error, message, fields}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
    fields: Vec<FieldError>,
}

impl ApiError {
    fn not_found(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            kind: "not_found",
            message: message.into(),
            fields: Vec::new(),
        }
    }

    fn invalid(fields: Vec<FieldError>) -> Self {
        let message = fields
            .iter()
            .map(|f| format!("{}: {}", f.field, f.message))
            .collect::<Vec<_>>()
            .join("; ");
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            kind: "invalid_request",
            message,
            fields,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, kind) = match &e {
            Error::MissingArtifact(_) => (StatusCode::CONFLICT, "missing_artifact"),
            Error::InvalidParameter { .. } | Error::Config(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_request"),
            Error::Infeasible(_) => (StatusCode::UNPROCESSABLE_ENTITY, "infeasible_design"),
            Error::Numeric { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "numeric_failure"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "data_error"),
        };
        ApiError {
            status,
            kind,
            message: e.to_string(),
            fields: Vec::new(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.kind, "message": self.message, "fields": self.fields});
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.unwrap_or_else(|e| {
        Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            kind: "internal",
            message: e.to_string(),
            fields: Vec::new(),
        })
    })
}

/// Field-by-field reader for JSON request bodies.
struct BodyFields {
    obj: Map<String, Value>,
    errors: Vec<FieldError>,
}

impl BodyFields {
    fn parse(body: &[u8], allowed: &[&str]) -> ApiResult<Self> {
        let value: Value = serde_json::from_slice(body).map_err(|e| {
            ApiError::invalid(vec![FieldError {
                field: "body".into(),
                message: format!("not valid JSON: {e}"),
            }])
        })?;
        let Value::Object(obj) = value else {
            return Err(ApiError::invalid(vec![FieldError {
                field: "body".into(),
                message: "expected a JSON object".into(),
            }]));
        };
        let errors = obj
            .keys()
            .filter(|k| !allowed.contains(&k.as_str()))
            .map(|k| FieldError {
                field: k.clone(),
                message: "unknown field".into(),
            })
            .collect();
        Ok(BodyFields { obj, errors })
    }

    fn error(&mut self, field: &str, message: impl Into<String>) {
        self.errors.push(FieldError {
            field: field.into(),
            message: message.into(),
        });
    }

    fn finite(&mut self, field: &str) -> Option<f64> {
        match self.obj.get(field) {
            None => self.error(field, "required"),
            Some(v) => match v.as_f64() {
                Some(x) if x.is_finite() => return Some(x),
                _ => self.error(field, "must be a finite number"),
            },
        }
        None
    }

    fn count(&mut self, field: &str, default: Option<u64>) -> Option<u64> {
        match self.obj.get(field) {
            None if default.is_some() => return default,
            None => self.error(field, "required"),
            Some(v) => match v.as_u64() {
                Some(x) => return Some(x),
                None => self.error(field, "must be a non-negative integer"),
            },
        }
        None
    }

    fn finish(self) -> ApiResult<()> {
        if self.errors.is_empty() {
            Ok(())
        } else {
            Err(ApiError::invalid(self.errors))
        }
    }
}

async fn not_found() -> ApiError {
    ApiError::not_found("no such route; see /api")
}

async fn routes() -> Json<Value> {
    let list: Vec<Value> = ROUTES
        .iter()
        .map(|(m, p, d)| json!({"method": m, "path": p, "description": d}))
        .collect();
    Json(json!({"title": "Pneu-net generative design API", "routes": list}))
}

#[derive(Serialize)]
struct EmbeddingPoint {
    id: usize,
    dim1: f64,
    dim2: f64,
    mode: String,
}

async fn get_embedding(State(st): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let snap = st.snapshot()?;
        let rows = st.require(&snap.embedding, workdir::EMBEDDING_FILE)?;
        let rows: Vec<EmbeddingPoint> = rows
            .iter()
            .map(|r| EmbeddingPoint {
                id: r.row_id,
                dim1: r.dim1,
                dim2: r.dim2,
                mode: r.mode_label.to_string(),
            })
            .collect();
        Ok(Json(json!({ "rows": rows })))
    })
    .await
}

#[derive(Serialize)]
struct Neighbor {
    id: usize,
    distance: f64,
}

#[derive(Serialize)]
struct DecodeResponse {
    design: DesignParams,
    repair_distance: f64,
    dependent_discrepancy: DependentDiscrepancy,
    neighbors: Vec<Neighbor>,
    feasibility: FeasibilityReport,
    /// Distance to the nearest dataset row in encoded space.
    novelty: f64,
    nearest_training: usize,
}

async fn post_decode(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<DecodeResponse>> {
    blocking(move || {
        let mut f = BodyFields::parse(&body, &["x", "y", "k"])?;
        let x = f.finite("x");
        let y = f.finite("y");
        let k = f.count("k", Some(pipeline::DEFAULT_DECODE_K as u64));
        if k == Some(0) {
            f.error("k", "must be at least 1");
        }
        let snap = st.snapshot()?;
        let src = st.decoder(&snap)?;
        if let Some(k) = k {
            if k as usize > src.row_ids.len() {
                f.error("k", format!("must not exceed the {} embedded rows", src.row_ids.len()));
            }
        }
        f.finish()?;
        let (x, y, k) = (x.unwrap_or_default(), y.unwrap_or_default(), k.unwrap_or_default() as usize);
        let derived = st.derived(&snap)?;
        let (vector, neighbors) = src.decode_point(&[x, y], k)?;
        let decoded = preprocess::decode(&vector, &derived.schema, &snap.bounds)?;
        let encoded = preprocess::encode(&decoded.params, &derived.schema)?;
        let nov = metrics::novelty(&FeatureMatrix::from_rows([encoded])?, &derived.encoded, DistanceSpace::Encoded)?;
        Ok(Json(DecodeResponse {
            feasibility: geometry::geometric_feasibility(&decoded.params, &snap.bounds),
            design: decoded.params,
            repair_distance: decoded.repair_distance,
            dependent_discrepancy: decoded.dependent_discrepancy,
            neighbors: neighbors.into_iter().map(|(id, distance)| Neighbor { id, distance }).collect(),
            novelty: nov.per_sample[0],
            nearest_training: nov.nearest_training[0],
        }))
    })
    .await
}

#[derive(Serialize)]
struct GeneratedRow {
    design: DesignParams,
    repair_distance: f64,
    component: usize,
    novelty: f64,
    nearest_training: usize,
}

#[derive(Serialize)]
struct GenerateResponse {
    n: usize,
    seed: u64,
    space: ModelSpace,
    d_new: f64,
    mode_counts: ModeCounts,
    designs: Vec<GeneratedRow>,
}

async fn post_generate(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<GenerateResponse>> {
    blocking(move || {
        let mut f = BodyFields::parse(&body, &["n", "seed"])?;
        let n = f.count("n", None);
        let seed = f.count("seed", Some(0));
        match n {
            Some(0) => f.error("n", "must be at least 1"),
            Some(v) if v as usize > MAX_GENERATE => f.error("n", format!("must not exceed {MAX_GENERATE}")),
            _ => {}
        }
        f.finish()?;
        let (n, seed) = (n.unwrap_or_default() as usize, seed.unwrap_or_default());
        let snap = st.snapshot()?;
        let model = st.require(&snap.model, workdir::MODEL_FILE)?;
        let derived = st.derived(&snap)?;
        let source = match model.space() {
            ModelSpace::Feature => None,
            ModelSpace::Embedding => Some(st.decoder(&snap)?),
        };
        let designs = pipeline::generate(model, &derived.schema, &snap.bounds, n, seed, source)?;
        let encoded = preprocess::encode_all(designs.iter().map(|d| &d.params), &derived.schema)?;
        let nov = metrics::novelty(&encoded, &derived.encoded, DistanceSpace::Encoded)?;
        Ok(Json(GenerateResponse {
            n,
            seed,
            space: model.space(),
            d_new: nov.d_new,
            mode_counts: ModeCounts::from_designs(designs.iter().map(|d| &d.params)),
            designs: designs
                .into_iter()
                .enumerate()
                .map(|(i, d)| GeneratedRow {
                    design: d.params,
                    repair_distance: d.repair_distance,
                    component: d.component,
                    novelty: nov.per_sample[i],
                    nearest_training: nov.nearest_training[i],
                })
                .collect(),
        }))
    })
    .await
}

/// Looks up dataset row `id`; non-numeric or out-of-range ids are 404.
fn design_by_id(st: &AppState, snap: &Snapshot, id: &str) -> ApiResult<DesignParams> {
    let data = st.require(&snap.data, workdir::DATA_FILE)?;
    id.parse::<usize>()
        .ok()
        .and_then(|i| data.rows.get(i))
        .map(|r| r.params)
        .ok_or_else(|| ApiError::not_found(format!("unknown design id `{id}` ({} rows)", data.len())))
}

async fn get_design(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let snap = st.snapshot()?;
        let p = design_by_id(&st, &snap, &id)?;
        let embedding = snap
            .embedding
            .as_ref()
            .and_then(|rows| rows.iter().find(|r| r.row_id.to_string() == id))
            .map(|r| json!({"dim1": r.dim1, "dim2": r.dim2}));
        Ok(Json(json!({
            "id": id.parse::<usize>().unwrap_or_default(),
            "design": p,
            "feasibility": geometry::geometric_feasibility(&p, &snap.bounds),
            "embedding": embedding,
        })))
    })
    .await
}

#[derive(Serialize)]
struct TrajectoryResponse {
    id: usize,
    pressure: f64,
    points: Vec<[f64; 3]>,
    arc_length: f64,
    classification: ModeClassification,
}

async fn get_trajectory(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> ApiResult<Json<TrajectoryResponse>> {
    blocking(move || {
        let snap = st.snapshot()?;
        let p = design_by_id(&st, &snap, &id)?;
        let cfg = KinematicsConfig::default();
        let pressure = match query.get("pressure") {
            None => cfg.classification_pressure,
            Some(s) => match s.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => v,
                _ => {
                    return Err(ApiError::invalid(vec![FieldError {
                        field: "pressure".into(),
                        message: format!("`{s}` is not a non-negative pressure in kPa"),
                    }]))
                }
            },
        };
        let t = kinematics::backbone_trajectory(&p, pressure, &snap.bounds, &cfg)?;
        Ok(Json(TrajectoryResponse {
            id: id.parse().unwrap_or_default(),
            pressure,
            classification: kinematics::classify_mode(&t),
            arc_length: t.arc_length,
            points: t.points,
        }))
    })
    .await
}

async fn get_mesh(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || {
        let snap = st.snapshot()?;
        let p = design_by_id(&st, &snap, &id)?;
        let bytes = geometry::build_mesh(&p, &snap.bounds, LayoutOptions::default())?.to_stl_bytes();
        let disposition = format!("attachment; filename=\"design-{id}.stl\"");
        Ok((
            [
                (header::CONTENT_TYPE, "application/octet-stream".to_string()),
                (header::CONTENT_DISPOSITION, disposition),
            ],
            bytes,
        )
            .into_response())
    })
    .await
}

async fn get_metrics(State(st): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let path = st.workdir.require(workdir::METRICS_FILE)?;
        let text = util::read_to_string(&path)?;
        let value: Value = serde_json::from_str(&text).map_err(Error::from)?;
        Ok(Json(value))
    })
    .await
}

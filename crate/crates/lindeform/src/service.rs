//! HTTP editing service over a loaded model and dataset.
//!
//! Routes (JSON bodies):
//! - `GET /api/shapes`: shape summaries
//! - `GET /api/shapes/{id}`: full shape with handles and points
//! - `GET /api/model`: `{n, k, variant}`
//! - `GET /api/schema/shapes`: JSON schema of the summaries
//! - `POST /api/shapes/{id}/project` `{edits: [{handle, value}]}` → `{z_hat, points}`
//! - `POST /api/transfer` `{src, tgt_edit, dst}` → `{points}`
//!
//! Every `/api` route answers 503 until the session is installed.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use tower_http::services::ServeDir;

use lindeform_core::datagen::{Dataset, ProcShape};
use lindeform_core::handles::ResidualProjector;
use lindeform_core::nets::Model;

use crate::formats::{
    from_json, to_json, ErrorBody, ModelInfo, PointsResponse, ProjectRequest, ShapeSummary, ShapeView,
    TransferRequest, SHAPES_SCHEMA,
};
use crate::{ops, Error, Result};

/// Model, dataset and per-shape residual projectors; immutable once built.
pub struct Session {
    model: Model,
    data: Dataset,
    index: HashMap<String, usize>,
    residuals: Vec<Option<Arc<ResidualProjector>>>,
}

impl Session {
    /// Builds every cache up front.
    pub fn warm(model: Model, data: Dataset) -> Result<Session> {
        if data.shapes.len() != data.manifest.shapes.len() {
            return Err(Error::format("dataset shapes and manifest disagree"));
        }
        let mut index = HashMap::new();
        let mut residuals = Vec::with_capacity(data.shapes.len());
        for (i, (entry, shape)) in data.manifest.shapes.iter().zip(&data.shapes).enumerate() {
            if shape.cloud.len() != model.n() {
                return Err(Error::format(format!(
                    "{} has {} points, the model expects {}",
                    entry.id,
                    shape.cloud.len(),
                    model.n()
                )));
            }
            index.insert(entry.id.clone(), i);
            residuals.push(ops::residual_for(&model, &shape.cloud)?);
        }
        Ok(Session { model, data, index, residuals })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    fn lookup(&self, id: &str) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| Error::NotFound(format!("shape {id:?}")))
    }

    fn shape(&self, i: usize) -> &ProcShape {
        &self.data.shapes[i]
    }

    pub fn summaries(&self) -> Vec<ShapeSummary> {
        self.data
            .manifest
            .shapes
            .iter()
            .zip(&self.data.shapes)
            .map(|(e, s)| ShapeSummary {
                id: e.id.clone(),
                family: s.family(),
                split: e.split,
                num_handles: s.handle_space.num_handles(),
                num_points: s.cloud.len(),
            })
            .collect()
    }

    pub fn shape_view(&self, id: &str) -> Result<ShapeView> {
        let i = self.lookup(id)?;
        Ok(ShapeView::new(id, self.data.manifest.shapes[i].split, self.shape(i)))
    }

    pub fn model_info(&self) -> ModelInfo {
        ModelInfo {
            n: self.model.n(),
            k: self.model.k(),
            variant: self.model.variant(),
        }
    }

    pub fn project(&self, id: &str, req: &ProjectRequest) -> Result<Vec<u8>> {
        let i = self.lookup(id)?;
        to_json(&ops::project(self.shape(i), self.residuals[i].clone(), &req.edits)?)
    }

    pub fn transfer(&self, req: &TransferRequest) -> Result<Vec<u8>> {
        let src = self.lookup(&req.src)?;
        let dst = self.lookup(&req.dst)?;
        let out = ops::transfer(&self.model, self.shape(src), &req.tgt_edit, &self.shape(dst).cloud)?;
        to_json(&PointsResponse::from(&out))
    }
}

/// Shared handler state; the session is set once warmup finishes.
#[derive(Default)]
pub struct AppState {
    session: OnceLock<Arc<Session>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ready(session: Session) -> Arc<Self> {
        let s = Arc::new(Self::new());
        s.install(session);
        s
    }

    /// Installs the session; later calls are ignored.
    pub fn install(&self, session: Session) {
        let _ = self.session.set(Arc::new(session));
    }

    fn session(&self) -> std::result::Result<Arc<Session>, Response> {
        self.session
            .get()
            .cloned()
            .ok_or_else(|| error_response(StatusCode::SERVICE_UNAVAILABLE, "warming up"))
    }
}

fn json_response(status: StatusCode, body: Vec<u8>) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn error_response(status: StatusCode, msg: &str) -> Response {
    let body = to_json(&ErrorBody { error: msg.to_string() }).unwrap_or_default();
    json_response(status, body)
}

fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::NotFound(_) => StatusCode::NOT_FOUND,
        Error::Usage(_) | Error::Format(_) => StatusCode::UNPROCESSABLE_ENTITY,
        Error::Core(c) if !c.is_numerical() => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn reply(r: Result<Vec<u8>>) -> Response {
    match r {
        Ok(body) => json_response(StatusCode::OK, body),
        Err(e) => error_response(status_for(&e), &e.to_string()),
    }
}

type St = State<Arc<AppState>>;

async fn list_shapes(State(st): St) -> Response {
    match st.session() {
        Ok(s) => reply(to_json(&s.summaries())),
        Err(r) => r,
    }
}

async fn get_shape(State(st): St, Path(id): Path<String>) -> Response {
    match st.session() {
        Ok(s) => reply(s.shape_view(&id).and_then(|v| to_json(&v))),
        Err(r) => r,
    }
}

async fn get_model(State(st): St) -> Response {
    match st.session() {
        Ok(s) => reply(to_json(&s.model_info())),
        Err(r) => r,
    }
}

async fn shapes_schema() -> Response {
    json_response(StatusCode::OK, SHAPES_SCHEMA.as_bytes().to_vec())
}

async fn project(State(st): St, Path(id): Path<String>, body: Bytes) -> Response {
    let s = match st.session() {
        Ok(s) => s,
        Err(r) => return r,
    };
    let req: ProjectRequest = match from_json(&body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::UNPROCESSABLE_ENTITY, &e.to_string()),
    };
    reply(s.project(&id, &req))
}

async fn transfer(State(st): St, body: Bytes) -> Response {
    let s = match st.session() {
        Ok(s) => s,
        Err(r) => return r,
    };
    let req: TransferRequest = match from_json(&body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::UNPROCESSABLE_ENTITY, &e.to_string()),
    };
    reply(s.transfer(&req))
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/shapes", get(list_shapes))
        .route("/api/shapes/{id}", get(get_shape))
        .route("/api/shapes/{id}/project", post(project))
        .route("/api/transfer", post(transfer))
        .route("/api/model", get(get_model))
        .route("/api/schema/shapes", get(shapes_schema))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Warms the session, then binds and serves until the process ends.
pub async fn serve(addr: SocketAddr, session: Session, static_dir: Option<PathBuf>, on_bound: impl FnOnce(SocketAddr)) -> Result<()> {
    let state = AppState::ready(session);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Usage(format!("cannot bind {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| Error::Usage(e.to_string()))?;
    on_bound(local);
    axum::serve(listener, router(state, static_dir))
        .await
        .map_err(|e| Error::Format(format!("server error: {e}")))
}

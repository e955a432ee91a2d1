//! HTTP annotation service.
//!
//! One [`Session`] holds the learner and the queue of the current
//! iteration behind a mutex, so every request sees and leaves a consistent
//! state. Iterations only move forward through `POST /api/iteration/advance`.

use std::sync::{Arc, Mutex, MutexGuard};

use activelab::driver::{ActiveLearner, IterationReport, StopReason};
use activelab::oracle::{AnnotationQueue, AnnotationResult, AnnotationSource, AnnotationTask, QueueTally, TaskStatus};
use activelab::{Error, LabelCombination};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

/// Examples shown per label in the gallery.
const GALLERY_SIZE: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn internal(e: Error) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code,
            message: &self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub sample_id: String,
    #[serde(rename = "final")]
    pub final_combination: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryExample {
    pub sample_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub label: String,
    pub examples: Vec<GalleryExample>,
    /// Shown when no example carries an image.
    pub schematic: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelsResponse {
    pub labels: Vec<String>,
    pub exclusive_index: usize,
    pub gallery: Vec<GalleryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    /// Iteration whose tasks are in the queue, if any.
    pub iteration: Option<usize>,
    pub completed_iterations: usize,
    pub labeled_count: usize,
    pub labeled_fraction: f64,
    pub pool_size: usize,
    pub pool_remaining: usize,
    pub queue: QueueTally,
    pub last_report: Option<IterationReport>,
    pub stop_reason: Option<StopReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvanceResponse {
    pub report: IterationReport,
    pub next_iteration: Option<usize>,
    pub stop_reason: Option<StopReason>,
}

/// Learner plus the queue of its pending proposal.
#[derive(Debug)]
pub struct Session {
    learner: ActiveLearner,
    queue: AnnotationQueue,
}

impl Session {
    pub fn new(learner: ActiveLearner) -> Result<Self, Error> {
        let mut session = Self {
            learner,
            queue: AnnotationQueue::new(),
        };
        session.refill()?;
        Ok(session)
    }

    /// Proposes the next batch unless the run is over.
    fn refill(&mut self) -> Result<(), Error> {
        if self.learner.stop_reason().is_none() {
            let tasks = self.learner.propose()?.tasks.clone();
            self.queue.enqueue(tasks)?;
        }
        Ok(())
    }

    pub fn queue(&self) -> &AnnotationQueue {
        &self.queue
    }

    pub fn learner(&self) -> &ActiveLearner {
        &self.learner
    }

    pub fn next_task(&self) -> Option<AnnotationTask> {
        self.queue.next_pending().cloned()
    }

    pub fn submit(&mut self, req: &SubmitRequest) -> Result<AnnotationResult, ApiError> {
        let task = self.queue.task(&req.sample_id).ok_or_else(|| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                "unknown_task",
                format!("no task for sample {:?}", req.sample_id),
            )
        })?;
        if task.status != TaskStatus::Pending {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "already_finalized",
                format!("task {:?} is already {:?}", req.sample_id, task.status),
            ));
        }
        let m = self.learner.dataset().schema().m();
        let combination = req
            .final_combination
            .parse::<LabelCombination>()
            .and_then(|c| c.check_len(m).map(|()| c))
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "malformed_combination", e.to_string()))?;
        self.queue
            .submit(&req.sample_id, combination, AnnotationSource::Human)
            .map_err(ApiError::internal)
    }

    pub fn labels(&self) -> LabelsResponse {
        let dataset = self.learner.dataset();
        let schema = dataset.schema();
        let labeled = self.learner.partition().labeled();
        let gallery = schema
            .labels()
            .iter()
            .enumerate()
            .map(|(j, label)| {
                // Confirmed annotations first, images preferred.
                let mut examples: Vec<GalleryExample> = labeled
                    .iter()
                    .filter(|(_, c)| c.get(j))
                    .filter_map(|(id, _)| dataset.get(id))
                    .map(|s| GalleryExample {
                        sample_id: s.id.clone(),
                        image_path: s.image_path.clone(),
                    })
                    .collect();
                examples.sort_by_key(|e| e.image_path.is_none());
                examples.truncate(GALLERY_SIZE);
                GalleryEntry {
                    label: label.clone(),
                    examples,
                    schematic: format!("Schematic: frame showing {label}"),
                }
            })
            .collect();
        LabelsResponse {
            labels: schema.labels().to_vec(),
            exclusive_index: schema.exclusive_index(),
            gallery,
        }
    }

    pub fn progress(&self) -> Progress {
        let partition = self.learner.partition();
        Progress {
            iteration: self.learner.pending().map(|p| p.iteration),
            completed_iterations: self.learner.completed_iterations(),
            labeled_count: partition.labeled().len(),
            labeled_fraction: self.learner.labeled_fraction(),
            pool_size: self.learner.pool_size(),
            pool_remaining: partition.candidate().len(),
            queue: self.queue.tally(),
            last_report: self.learner.reports().last().cloned(),
            stop_reason: self.learner.stop_reason(),
        }
    }

    pub fn advance(&mut self) -> Result<AdvanceResponse, ApiError> {
        if self.learner.pending().is_none() {
            return Err(ApiError::new(StatusCode::CONFLICT, "run_finished", "no iteration in progress"));
        }
        let pending = self.queue.tally().pending;
        if pending > 0 {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "queue_not_empty",
                format!("{pending} tasks still pending"),
            ));
        }
        let results = self.queue.drain().map_err(ApiError::internal)?;
        let report = self.learner.complete(&results).map_err(ApiError::internal)?;
        self.refill().map_err(ApiError::internal)?;
        Ok(AdvanceResponse {
            report,
            next_iteration: self.learner.pending().map(|p| p.iteration),
            stop_reason: self.learner.stop_reason(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct AppState(Arc<Mutex<Session>>);

impl AppState {
    pub fn new(session: Session) -> Self {
        Self(Arc::new(Mutex::new(session)))
    }

    /// Locks the session. A panic inside a handler cannot leave the queue
    /// half-updated, so a poisoned lock is still usable.
    pub fn lock(&self) -> MutexGuard<'_, Session> {
        self.0.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/queue/next", get(next_task))
        .route("/api/annotations", post(submit))
        .route("/api/labels", get(labels))
        .route("/api/progress", get(progress))
        .route("/api/iteration/advance", post(advance))
        .with_state(state)
}

async fn next_task(State(state): State<AppState>) -> Response {
    match state.lock().next_task() {
        Some(task) => Json(task).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn submit(State(state): State<AppState>, body: Bytes) -> Result<Json<AnnotationResult>, ApiError> {
    let req: SubmitRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_body", e.to_string()))?;
    state.lock().submit(&req).map(Json)
}

async fn labels(State(state): State<AppState>) -> Json<LabelsResponse> {
    Json(state.lock().labels())
}

async fn progress(State(state): State<AppState>) -> Json<Progress> {
    Json(state.lock().progress())
}

async fn advance(State(state): State<AppState>) -> Result<Json<AdvanceResponse>, ApiError> {
    state.lock().advance().map(Json)
}

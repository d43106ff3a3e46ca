//! HTTP + WebSocket session service over the planner and the AR simulation.
//!
//! Sessions live in memory. Each one owns a planning session, the two
//! rendered views and, after commit, the alignment state and the simulated
//! guidance scene. Mutations of one session are serialized by its mutex.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use cupplan_core::arsim::{
    self, AlignmentError, AlignmentState, GuidanceScene, RgbdSensor, RGBD,
};
use cupplan_core::drr::{build_phantom, default_step, CupShellSpec, PhantomSpec};
use cupplan_core::implant::{make_component, AnglePair, IMPACTOR};
use cupplan_core::planner::{pose_errors, study_views, PlanningSession, PoseDelta, PoseErrors, SessionState};
use cupplan_core::rng::derive_seed;
use cupplan_core::track::{CArmGeometry, MarkerNoise, OrbitAxis};
use cupplan_core::{Error as CoreError, ProjectiveCamera, RigidTransform, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{watch, Mutex};

use crate::error::{is_validation, AppError};
use crate::io::png_bytes;
use crate::render::render_drr;

// ------------------------------------------------------------------ errors

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status: status.as_u16(), code: code.to_string(), message: message.into(), field: None }
    }

    fn bad_request(field: &str, message: impl Into<String>) -> Self {
        ApiError { field: Some(field.to_string()), ..Self::new(StatusCode::BAD_REQUEST, "invalid_request", message) }
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    fn not_committed() -> Self {
        Self::new(StatusCode::CONFLICT, "not_committed", "session has no committed plan")
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let (status, code) = match &e {
            CoreError::SessionCommitted => (StatusCode::CONFLICT, "session_committed"),
            CoreError::RotationLocked => (StatusCode::UNPROCESSABLE_ENTITY, "rotation_locked"),
            e if is_validation(e) => (StatusCode::BAD_REQUEST, "invalid_request"),
            _ => (StatusCode::UNPROCESSABLE_ENTITY, "unprocessable"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        match e {
            AppError::Core(c) => c.into(),
            AppError::Validation(m) => Self::new(StatusCode::BAD_REQUEST, "invalid_request", m),
            AppError::Runtime(m) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", m),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Parses a JSON body, reporting the path of the offending field.
fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    let text = if body.iter().all(u8::is_ascii_whitespace) { &b"{}"[..] } else { body };
    let de = &mut serde_json::Deserializer::from_slice(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ApiError::bad_request(if path == "." { "" } else { &path }, e.inner().to_string())
    })
}

// ---------------------------------------------------------------- requests

/// Session setup. Named presets fill in the study geometry; explicit
/// fields override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreateRequest {
    pub preset: Option<String>,
    pub separation_deg: f64,
    pub axis: OrbitAxis,
    pub seed: u64,
    /// Marker noise of the tracked second view; exact geometry when `None`.
    pub noise: Option<MarkerNoise>,
    pub detector_px: u32,
    pub pixel_spacing_mm: f64,
    /// Voxels per side of the rendered phantom.
    pub volume_size: usize,
    pub volume_spacing_mm: f64,
    pub cup_diameter_mm: f64,
    pub mesh_resolution: usize,
    pub truth_angles: AnglePair,
    /// Offset of the true cup center from the acetabulum center, world mm.
    pub truth_offset_mm: [f64; 3],
    /// Angles the cup starts at.
    pub initial_angles: AnglePair,
    /// Orientation preset target; the true angles when absent.
    pub safe_zone: Option<AnglePair>,
    pub sensor: RgbdSensor,
    pub frame_rate_hz: f64,
    pub table_depth_mm: f64,
    pub subtract_threshold_mm: f64,
}

impl Default for CreateRequest {
    fn default() -> Self {
        CreateRequest {
            preset: None,
            separation_deg: 20.0,
            axis: OrbitAxis::Orbital,
            seed: 0,
            noise: None,
            detector_px: 512,
            pixel_spacing_mm: 0.44,
            volume_size: 128,
            volume_spacing_mm: 1.6,
            cup_diameter_mm: 54.0,
            mesh_resolution: 32,
            truth_angles: AnglePair { inclination_deg: 40.0, anteversion_deg: 25.0 },
            truth_offset_mm: [3.0, -2.0, 4.0],
            initial_angles: AnglePair { inclination_deg: 40.0, anteversion_deg: 15.0 },
            safe_zone: None,
            sensor: RgbdSensor::with_noise(1.0),
            frame_rate_hz: 10.0,
            table_depth_mm: 150.0,
            subtract_threshold_mm: 20.0,
        }
    }
}

/// Named session presets.
pub const PRESETS: &[&str] = &["user-study-20deg", "user-study-45deg", "tracked-20deg"];

impl CreateRequest {
    /// Parses a request body: preset values first, then explicit fields.
    pub fn from_json(body: &[u8]) -> ApiResult<Self> {
        let raw: serde_json::Value = parse_body(body)?;
        let mut merged = serde_json::to_value(CreateRequest::default()).expect("serializable");
        if let Some(name) = raw.get("preset") {
            let name = name.as_str().ok_or_else(|| ApiError::bad_request("preset", "preset must be a string"))?;
            let overrides = match name {
                "user-study-20deg" => json!({ "separation_deg": 20.0 }),
                "user-study-45deg" => json!({ "separation_deg": 45.0 }),
                "tracked-20deg" => json!({ "separation_deg": 20.0, "noise": MarkerNoise::DEFAULT }),
                other => {
                    return Err(ApiError::bad_request(
                        "preset",
                        format!("unknown preset `{other}`; known: {}", PRESETS.join(", ")),
                    ))
                }
            };
            merge(&mut merged, &overrides);
        }
        if let serde_json::Value::Object(_) = raw {
            merge(&mut merged, &raw);
        } else {
            return Err(ApiError::bad_request("", "request must be a JSON object"));
        }
        let req: CreateRequest = parse_body(merged.to_string().as_bytes())?;
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> ApiResult<()> {
        let bad = |f: &str, m: &str| Err(ApiError::bad_request(f, m));
        if !(self.separation_deg > 0.0 && self.separation_deg <= 90.0) {
            return bad("separation_deg", "must be in (0, 90]");
        }
        if !(16..=2048).contains(&self.detector_px) {
            return bad("detector_px", "must be in [16, 2048]");
        }
        if !(self.pixel_spacing_mm > 0.0 && self.pixel_spacing_mm.is_finite()) {
            return bad("pixel_spacing_mm", "must be positive");
        }
        if !(8..=512).contains(&self.volume_size) {
            return bad("volume_size", "must be in [8, 512]");
        }
        if !(self.volume_spacing_mm > 0.0 && self.volume_spacing_mm.is_finite()) {
            return bad("volume_spacing_mm", "must be positive");
        }
        if !(self.cup_diameter_mm > 20.0 && self.cup_diameter_mm < 100.0) {
            return bad("cup_diameter_mm", "must be in (20, 100)");
        }
        if self.mesh_resolution < 8 || self.mesh_resolution > 512 {
            return bad("mesh_resolution", "must be in [8, 512]");
        }
        if self.truth_angles.validate().is_err() {
            return bad("truth_angles", "angles out of range");
        }
        if self.initial_angles.validate().is_err() {
            return bad("initial_angles", "angles out of range");
        }
        if self.safe_zone.is_some_and(|a| a.validate().is_err()) {
            return bad("safe_zone", "angles out of range");
        }
        if !self.truth_offset_mm.iter().all(|v| v.is_finite() && v.abs() <= 50.0) {
            return bad("truth_offset_mm", "components must be within ±50 mm");
        }
        if self.sensor.validate().is_err() {
            return bad("sensor", "invalid sensor parameters");
        }
        if !(self.frame_rate_hz >= 10.0 && self.frame_rate_hz <= 60.0) {
            return bad("frame_rate_hz", "must be in [10, 60]");
        }
        if !(self.table_depth_mm > 0.0) {
            return bad("table_depth_mm", "must be positive");
        }
        if !(self.subtract_threshold_mm > 0.0) {
            return bad("subtract_threshold_mm", "must be positive");
        }
        Ok(())
    }

    pub fn geometry(&self) -> CArmGeometry {
        CArmGeometry::with_detector(self.detector_px, self.pixel_spacing_mm)
    }

    pub fn safe_zone(&self) -> AnglePair {
        self.safe_zone.unwrap_or(self.truth_angles)
    }
}

fn merge(base: &mut serde_json::Value, over: &serde_json::Value) {
    if let (Some(b), Some(o)) = (base.as_object_mut(), over.as_object()) {
        for (k, v) in o {
            b.insert(k.clone(), v.clone());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRequest {
    #[serde(flatten)]
    pub delta: PoseDelta,
    /// Switches the orientation preset on or off before the delta.
    #[serde(default)]
    pub preset: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetRequest {
    pub enabled: bool,
    #[serde(default)]
    pub angles: Option<AnglePair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpactorMessage {
    /// Impactor → RGBD.
    pub impactor_pose: RigidTransform,
}

// --------------------------------------------------------------- responses

pub type ContourLists = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewInfo {
    pub name: String,
    pub camera: ProjectiveCamera,
    pub image_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningResponse {
    pub state: SessionState,
    pub contours: [ContourLists; 2],
    pub angles: AnglePair,
    pub preset: Option<AnglePair>,
    pub cup_pose: RigidTransform,
    pub errors: Option<PoseErrors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateResponse {
    pub id: String,
    pub views: Vec<ViewInfo>,
    #[serde(flatten)]
    pub planning: PlanningResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitResponse {
    pub state: SessionState,
    pub cup_pose: RigidTransform,
    pub angles: AnglePair,
    /// Cup → RGBD.
    pub cup_to_rgbd: RigidTransform,
    pub planned_impactor_pose: RigidTransform,
    pub live_impactor_pose: RigidTransform,
    pub stream_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub state: SessionState,
    pub angles: AnglePair,
    pub preset: Option<AnglePair>,
    pub errors: Option<PoseErrors>,
    pub alignment: Option<AlignmentError>,
    pub pose_updates: u64,
    pub frames_streamed: u64,
}

// ---------------------------------------------------------------- sessions

struct ArRuntime {
    state: AlignmentState,
    scene: GuidanceScene,
    cup_to_rgbd: RigidTransform,
    last_error: Option<AlignmentError>,
    frames: u64,
}

struct SessionData {
    planning: PlanningSession,
    ar: Option<ArRuntime>,
    pose_updates: u64,
}

pub struct Session {
    pub id: String,
    pub created_at: f64,
    pub request: CreateRequest,
    views_png: [Vec<u8>; 2],
    data: Mutex<SessionData>,
    closed: watch::Sender<bool>,
}

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl AppState {
    fn get(&self, id: &str) -> ApiResult<Arc<Session>> {
        self.sessions.read().expect("session map lock").get(id).cloned().ok_or_else(|| ApiError::not_found("session"))
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session map lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Planning session and the two DRRs (hip phantom with the cup shell at the
/// true pose, rendered from the true cameras).
pub fn build_session(req: &CreateRequest) -> Result<(PlanningSession, [Vec<u8>; 2]), AppError> {
    let geometry = req.geometry();
    let noise = req.noise.unwrap_or(MarkerNoise::NONE);
    let views = study_views(&geometry, req.axis, req.separation_deg, &noise, req.seed)?;
    let acetabulum = Vector3::zeros();
    let truth = views.cup_pose(&req.truth_angles, &(acetabulum + Vector3::from(req.truth_offset_mm)))?;
    let initial = views.cup_pose(&req.initial_angles, &acetabulum)?;
    let (cup, impactor) = make_component(req.cup_diameter_mm, req.mesh_resolution)?;
    let mut session = views.session(truth.clone(), Some(initial), cup, impactor)?;

    let mut phantom = PhantomSpec::hip();
    let r = req.cup_diameter_mm / 2.0;
    phantom.cup = Some(CupShellSpec {
        pose: views.world_to_a.inverse().compose(&truth.pose)?,
        inner_radius_mm: r - 3.0,
        outer_radius_mm: r,
        attenuation: 0.3,
    });
    let n = req.volume_size;
    let vol = build_phantom(&phantom, [n; 3], [req.volume_spacing_mm; 3])?;
    let step = default_step(&vol);
    let mut pngs = [Vec::new(), Vec::new()];
    for (k, station) in [&views.station_a, &views.station_b].into_iter().enumerate() {
        let image = render_drr(&vol, &station.xray_cam, step)?;
        pngs[k] = png_bytes(&image)?;
        session.views[k].image = Some(image);
    }
    Ok((session, pngs))
}

fn contour_lists(session: &PlanningSession) -> ApiResult<[ContourLists; 2]> {
    let [a, b] = session.contours()?;
    Ok([cupplan_core::implant::contour_to_lists(&a), cupplan_core::implant::contour_to_lists(&b)])
}

fn errors(session: &PlanningSession) -> Option<PoseErrors> {
    let gt = session.ground_truth.as_ref()?;
    pose_errors(session.cup_pose(), &gt.cup_pose, &session.app_frame).ok()
}

fn planning_response(session: &PlanningSession) -> ApiResult<PlanningResponse> {
    Ok(PlanningResponse {
        state: session.state(),
        contours: contour_lists(session)?,
        angles: session.angles()?,
        preset: session.preset(),
        cup_pose: session.cup_pose().pose.clone(),
        errors: errors(session),
    })
}

fn view_infos(id: &str, session: &PlanningSession) -> Vec<ViewInfo> {
    ["a", "b"]
        .iter()
        .zip(session.cameras())
        .map(|(name, cam)| ViewInfo {
            name: name.to_string(),
            camera: cam.clone(),
            image_url: format!("/sessions/{id}/views/{name}.png"),
        })
        .collect()
}

/// Sensor mount of the AP station in the session frame, `X@a` → RGBD.
fn xray_to_rgbd(planning: &PlanningSession) -> RigidTransform {
    let world = planning.cameras()[0].pose.to_frame().to_string();
    CArmGeometry::desk().rgbd_to_xray.relabel(RGBD, world).inverse()
}

/// Initial simulated impactor: 25 mm off the plan along the sensor x axis
/// and tilted 8° about the sensor y axis through the tip.
pub fn initial_live_pose(planned: &RigidTransform) -> RigidTransform {
    let tilt = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 8f64.to_radians());
    planned.with_rotation(tilt * planned.rotation()).with_translation(planned.translation() + Vector3::new(25.0, 0.0, 0.0))
}

impl ArRuntime {
    /// Renders one live frame and refreshes the alignment state when the
    /// impactor is visible.
    fn step(&mut self, seed: u64, rate_hz: f64) -> (Vec<[f32; 3]>, Option<AlignmentError>) {
        let t = self.frames as f64 / rate_hz;
        let frame_seed = derive_seed(seed, 1_000_000 + self.frames);
        self.frames += 1;
        let fg = match self.scene.foreground(&self.state.live_impactor_pose, frame_seed, t) {
            Ok(f) => f,
            Err(_) => return (Vec::new(), None),
        };
        let points = fg.points.iter().map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect();
        let e = arsim::fit_cylinder_axis(&fg.points, self.scene.impactor.radius_mm).ok().map(|fit| self.state.update(&fit));
        if e.is_some() {
            self.last_error = e;
        }
        (points, e)
    }
}

/// Binary stream frame: `u64` sequence number, `u32` point count, then
/// `x y z` little-endian `f32` triplets.
pub fn encode_frame(seq: u64, points: &[[f32; 3]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + points.len() * 12);
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&(points.len() as u32).to_le_bytes());
    for p in points {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

/// Inverse of [`encode_frame`].
pub fn decode_frame(bytes: &[u8]) -> Option<(u64, Vec<[f32; 3]>)> {
    let seq = u64::from_le_bytes(bytes.get(0..8)?.try_into().ok()?);
    let n = u32::from_le_bytes(bytes.get(8..12)?.try_into().ok()?) as usize;
    let body = bytes.get(12..)?;
    if body.len() != n * 12 {
        return None;
    }
    let f = |c: &[u8]| f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
    Some((seq, body.chunks_exact(12).map(|c| [f(&c[0..4]), f(&c[4..8]), f(&c[8..12])]).collect()))
}

// ---------------------------------------------------------------- handlers

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/views/{file}", get(get_view))
        .route("/sessions/{id}/pose", put(update_pose))
        .route("/sessions/{id}/preset", post(set_preset))
        .route("/sessions/{id}/commit", post(commit))
        .route("/sessions/{id}/ar", get(ar_stream))
        .route("/sessions/{id}/metrics", get(metrics))
        .with_state(state)
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<CreateResponse>)> {
    let req = CreateRequest::from_json(&body)?;
    let build_req = req.clone();
    let (planning, views_png) = tokio::task::spawn_blocking(move || build_session(&build_req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let response = CreateResponse {
        id: id.clone(),
        views: view_infos(&id, &planning),
        planning: planning_response(&planning)?,
    };
    let created_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    let session = Session {
        id: id.clone(),
        created_at,
        request: req,
        views_png,
        data: Mutex::new(SessionData { planning, ar: None, pose_updates: 0 }),
        closed: watch::channel(false).0,
    };
    app.sessions.write().expect("session map lock").insert(id.clone(), Arc::new(session));
    tracing::info!(session = %id, "created");
    Ok((StatusCode::CREATED, Json(response)))
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let s = app.get(&id)?;
    let data = s.data.lock().await;
    let p = &data.planning;
    let ar = data.ar.as_ref().map(|ar| {
        json!({
            "alignment_state": ar.state,
            "cup_to_rgbd": ar.cup_to_rgbd,
            "last_error": ar.last_error,
            "frames": ar.frames,
        })
    });
    Ok(Json(json!({
        "id": s.id,
        "created_at": s.created_at,
        "request": s.request,
        "views": view_infos(&s.id, p),
        "planning": planning_response(p)?,
        "app_frame": p.app_frame,
        "tau": p.tau,
        "ar": ar,
    })))
}

async fn get_view(State(app): State<Arc<AppState>>, Path((id, file)): Path<(String, String)>) -> ApiResult<Response> {
    let s = app.get(&id)?;
    let k = match file.as_str() {
        "a.png" => 0,
        "b.png" => 1,
        _ => return Err(ApiError::not_found("view")),
    };
    Ok(([(header::CONTENT_TYPE, "image/png")], s.views_png[k].clone()).into_response())
}

async fn update_pose(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<PlanningResponse>> {
    let s = app.get(&id)?;
    let req: PoseRequest = parse_body(&body)?;
    let mut data = s.data.lock().await;
    let safe_zone = s.request.safe_zone();
    let p = &mut data.planning;
    if p.state() == SessionState::Committed {
        return Err(CoreError::SessionCommitted.into());
    }
    // validate the delta before touching the preset so a rejected request changes nothing
    let mut trial = p.clone();
    match req.preset {
        Some(true) if trial.preset().is_none() => {
            trial.set_preset(safe_zone)?;
        }
        Some(false) => trial.clear_preset()?,
        _ => {}
    }
    trial.set_cup_pose(&req.delta)?;
    *p = trial;
    data.pose_updates += 1;
    Ok(Json(planning_response(&data.planning)?))
}

async fn set_preset(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<PlanningResponse>> {
    let s = app.get(&id)?;
    let req: PresetRequest = parse_body(&body)?;
    let mut data = s.data.lock().await;
    let p = &mut data.planning;
    if req.enabled {
        p.set_preset(req.angles.unwrap_or(s.request.safe_zone()))?;
    } else {
        p.clear_preset()?;
    }
    data.pose_updates += 1;
    Ok(Json(planning_response(&data.planning)?))
}

async fn commit(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<CommitResponse>> {
    let s = app.get(&id)?;
    let mut data = s.data.lock().await;
    let plan = data.planning.commit()?;
    let x_to_rgbd = xray_to_rgbd(&data.planning);
    let impactor = data.planning.impactor.clone();
    let cup_to_rgbd = arsim::cup_to_rgbd(&plan.pose, &x_to_rgbd)?;
    let planned = arsim::planned_impactor_pose(&plan.pose, &x_to_rgbd, &impactor)?;
    let live = initial_live_pose(&planned);
    let state = AlignmentState::new(planned.clone(), live.clone())?;
    let req = &s.request;
    let scene = GuidanceScene::new(
        impactor,
        &cup_to_rgbd,
        req.sensor,
        req.table_depth_mm,
        req.subtract_threshold_mm,
        derive_seed(req.seed, 77),
    )?;
    let angles = data.planning.angles()?;
    data.ar = Some(ArRuntime { state, scene, cup_to_rgbd: cup_to_rgbd.clone(), last_error: None, frames: 0 });
    Ok(Json(CommitResponse {
        state: data.planning.state(),
        cup_pose: plan.pose,
        angles,
        cup_to_rgbd,
        planned_impactor_pose: planned,
        live_impactor_pose: live,
        stream_url: format!("/sessions/{id}/ar"),
    }))
}

async fn metrics(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Metrics>> {
    let s = app.get(&id)?;
    let data = s.data.lock().await;
    let p = &data.planning;
    Ok(Json(Metrics {
        state: p.state(),
        angles: p.angles()?,
        preset: p.preset(),
        errors: errors(p),
        alignment: data.ar.as_ref().and_then(|a| a.last_error),
        pose_updates: data.pose_updates,
        frames_streamed: data.ar.as_ref().map_or(0, |a| a.frames),
    }))
}

async fn delete_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let s = app.sessions.write().expect("session map lock").remove(&id).ok_or_else(|| ApiError::not_found("session"))?;
    s.closed.send_replace(true);
    tracing::info!(session = %id, "deleted");
    Ok(StatusCode::NO_CONTENT)
}

async fn ar_stream(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> ApiResult<Response> {
    let s = app.get(&id)?;
    if s.data.lock().await.ar.is_none() {
        return Err(ApiError::not_committed());
    }
    Ok(ws.on_upgrade(move |socket| stream_session(socket, s)))
}

/// Pushes frames at the session rate and answers impactor-pose messages.
/// One sequence counter covers both kinds of outgoing message.
async fn stream_session(mut socket: WebSocket, s: Arc<Session>) {
    let mut closed = s.closed.subscribe();
    let rate = s.request.frame_rate_hz;
    let mut ticker = tokio::time::interval(Duration::from_secs_f64(1.0 / rate));
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut seq = 0u64;
    loop {
        tokio::select! {
            _ = until_closed(&mut closed) => {
                let _ = socket.send(Message::Close(None)).await;
                break;
            }
            _ = ticker.tick() => {
                let points = {
                    let mut data = s.data.lock().await;
                    let Some(ar) = data.ar.as_mut() else { break };
                    ar.step(s.request.seed, rate).0
                };
                seq += 1;
                if socket.send(Message::Binary(encode_frame(seq, &points).into())).await.is_err() {
                    break;
                }
            }
            msg = socket.recv() => {
                let text = match msg {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                seq += 1;
                let reply = handle_client_message(&s, text.as_bytes(), seq).await;
                if socket.send(Message::Text(reply.to_string().into())).await.is_err() {
                    break;
                }
            }
        }
    }
}

async fn until_closed(rx: &mut watch::Receiver<bool>) {
    loop {
        let done = *rx.borrow_and_update();
        if done || rx.changed().await.is_err() {
            return;
        }
    }
}

async fn handle_client_message(s: &Session, text: &[u8], seq: u64) -> serde_json::Value {
    let msg: ImpactorMessage = match parse_body(text) {
        Ok(m) => m,
        Err(e) => return json!({ "type": "error", "seq": seq, "code": e.code, "message": e.message, "field": e.field }),
    };
    let pose = msg.impactor_pose;
    if pose.from_frame() != IMPACTOR || pose.to_frame() != RGBD {
        return json!({ "type": "error", "seq": seq, "code": "invalid_request", "message": "impactor pose must map I -> RGBD", "field": "impactor_pose" });
    }
    let mut data = s.data.lock().await;
    let Some(ar) = data.ar.as_mut() else {
        return json!({ "type": "error", "seq": seq, "code": "not_committed", "message": "no committed plan" });
    };
    ar.state.live_impactor_pose = pose;
    match ar.step(s.request.seed, s.request.frame_rate_hz) {
        (points, Some(e)) => json!({ "type": "alignment_error", "seq": seq, "axis_deg": e.axis_deg, "tip_mm": e.tip_mm, "points": points.len() }),
        (points, None) => json!({ "type": "alignment_error", "seq": seq, "axis_deg": null, "tip_mm": null, "points": points.len() }),
    }
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(Arc::new(AppState::default())))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cupplan::service::{decode_frame, router, AppState};
use cupplan_core::implant::{contour_to_lists, make_component, AnglePair};
use cupplan_core::planner::{pose_errors, study_views, PlanningSession, PoseDelta};
use cupplan_core::track::{CArmGeometry, MarkerNoise, OrbitAxis};
use cupplan_core::{RigidTransform, Vector3};
use futures::{SinkExt, StreamExt};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;
use tower::ServiceExt;

fn app() -> Router {
    router(Arc::new(AppState::default()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(app, method, uri, body.map(|b| b.to_string().into_bytes()).unwrap_or_default()).await;
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, v)
}

async fn call_raw(app: &Router, method: &str, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn small() -> Value {
    json!({ "detector_px": 128, "pixel_spacing_mm": 1.76, "volume_size": 40, "volume_spacing_mm": 5.0 })
}

async fn create(app: &Router, body: Value) -> String {
    let (s, v) = call(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

/// Planning session built from core calls alone, mirroring a create request.
fn direct_session(create: &Value) -> PlanningSession {
    let sep = match create["preset"].as_str() {
        Some("user-study-20deg") | None => 20.0,
        Some(other) => panic!("{other}"),
    };
    let geometry = CArmGeometry::with_detector(
        create["detector_px"].as_u64().unwrap() as u32,
        create["pixel_spacing_mm"].as_f64().unwrap(),
    );
    let views =
        study_views(&geometry, OrbitAxis::Orbital, sep, &MarkerNoise::NONE, create["seed"].as_u64().unwrap_or(0)).unwrap();
    let truth = views
        .cup_pose(&AnglePair::new(40.0, 25.0).unwrap(), &Vector3::new(3.0, -2.0, 4.0))
        .unwrap();
    let initial = views.cup_pose(&AnglePair::new(40.0, 15.0).unwrap(), &Vector3::zeros()).unwrap();
    let (cup, impactor) = make_component(54.0, 32).unwrap();
    views.session(truth, Some(initial), cup, impactor).unwrap()
}

fn bits(v: &Value) -> Vec<u64> {
    match v {
        Value::Number(n) => vec![n.as_f64().unwrap().to_bits()],
        Value::Array(a) => a.iter().flat_map(bits).collect(),
        Value::Object(o) => o.values().flat_map(bits).collect(),
        _ => vec![],
    }
}

fn assert_bit_equal(label: &str, served: &Value, direct: &Value) {
    assert_eq!(served, direct, "{label}");
    assert_eq!(bits(served), bits(direct), "{label}: bit patterns");
}

fn check_planning(label: &str, resp: &Value, direct: &PlanningSession) {
    let [a, b] = direct.contours().unwrap();
    let contours = json!([contour_to_lists(&a), contour_to_lists(&b)]);
    assert_bit_equal(&format!("{label} contours"), &resp["contours"], &contours);
    assert_bit_equal(&format!("{label} angles"), &resp["angles"], &json!(direct.angles().unwrap()));
    assert_bit_equal(&format!("{label} pose"), &resp["cup_pose"], &json!(direct.cup_pose().pose));
    let gt = direct.ground_truth.as_ref().unwrap();
    let errors = pose_errors(direct.cup_pose(), &gt.cup_pose, &direct.app_frame).unwrap();
    assert_bit_equal(&format!("{label} errors"), &resp["errors"], &json!(errors));
    assert_eq!(resp["preset"], json!(direct.preset()), "{label} preset");
}

#[tokio::test]
async fn golden_session_replay_matches_direct_planner_bit_exactly() {
    let golden: Value = serde_json::from_str(include_str!("fixtures/golden_session.json")).unwrap();
    let app = app();
    let (s, created) = call(&app, "POST", "/sessions", Some(golden["create"].clone())).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = created["id"].as_str().unwrap();
    let mut direct = direct_session(&golden["create"]);
    check_planning("create", &created, &direct);
    for (k, cam) in direct.cameras().iter().enumerate() {
        assert_bit_equal("camera", &created["views"][k]["camera"], &json!(cam));
    }
    let safe_zone = AnglePair::new(40.0, 25.0).unwrap();

    for (i, step) in golden["steps"].as_array().unwrap().iter().enumerate() {
        let method = step["method"].as_str().unwrap();
        let path = step["path"].as_str().unwrap();
        let body = step["body"].clone();
        let (status, resp) =
            call(&app, method, &format!("/sessions/{id}/{path}"), if body.is_null() { None } else { Some(body.clone()) })
                .await;
        assert_eq!(status.as_u16() as u64, step["status"].as_u64().unwrap(), "step {i}: {resp}");
        let label = format!("step {i}");
        match path {
            "pose" => {
                let delta: PoseDelta = serde_json::from_value(body.clone()).unwrap();
                let mut trial = direct.clone();
                let result = (|| {
                    if body["preset"] == json!(true) && trial.preset().is_none() {
                        trial.set_preset(safe_zone)?;
                    }
                    trial.set_cup_pose(&delta)
                })();
                match result {
                    Ok(update) => {
                        direct = trial;
                        let lists = json!([contour_to_lists(&update.contours[0]), contour_to_lists(&update.contours[1])]);
                        assert_bit_equal(&label, &resp["contours"], &lists);
                        check_planning(&label, &resp, &direct);
                    }
                    Err(e) => assert!(!status.is_success(), "{label}: direct call failed with {e}"),
                }
            }
            "preset" => {
                if body["enabled"] == json!(true) {
                    direct.set_preset(safe_zone).unwrap();
                } else {
                    direct.clear_preset().unwrap();
                }
                check_planning(&label, &resp, &direct);
            }
            "commit" => {
                let plan = direct.commit().unwrap();
                assert_bit_equal(&label, &resp["cup_pose"], &json!(plan.pose));
                assert_eq!(resp["state"], "committed");
            }
            other => panic!("{other}"),
        }
        assert!(status.is_success() || resp["code"].is_string(), "{label}: error body {resp}");
    }

    let (_, bundle) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    check_planning("bundle", &bundle["planning"], &direct);
}

#[tokio::test]
async fn error_statuses_and_bodies() {
    let app = app();
    let (s, v) = call(&app, "GET", "/sessions/nope", None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    for (m, path) in [("PUT", "pose"), ("POST", "commit"), ("GET", "metrics"), ("POST", "preset")] {
        let (s, _) = call(&app, m, &format!("/sessions/nope/{path}"), Some(json!({"kind": "translate", "mm": [0, 0, 0]}))).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{m} {path}");
    }
    assert_eq!(call(&app, "DELETE", "/sessions/nope", None).await.0, StatusCode::NOT_FOUND);

    let (s, v) = call(&app, "POST", "/sessions", Some(json!({"detector_px": 2}))).await;
    assert_eq!((s, v["field"].as_str()), (StatusCode::BAD_REQUEST, Some("detector_px")));
    assert!(v["message"].is_string());
    let (s, v) = call(&app, "POST", "/sessions", Some(json!({"sensor": {"depth_sigma_mm": "x"}}))).await;
    assert_eq!((s, v["field"].as_str()), (StatusCode::BAD_REQUEST, Some("sensor.depth_sigma_mm")));
    let (s, _) = call_raw(&app, "POST", "/sessions", b"{not json".to_vec()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let id = create(&app, small()).await;
    let (s, v) = call(&app, "PUT", &format!("/sessions/{id}/pose"), Some(json!({"kind": "spin"}))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_request")));
    assert_eq!(call(&app, "GET", &format!("/sessions/{id}/views/c.png"), None).await.0, StatusCode::NOT_FOUND);

    call(&app, "POST", &format!("/sessions/{id}/preset"), Some(json!({"enabled": true}))).await;
    let rot = json!({"kind": "rotate", "axis": [1, 0, 0], "angle_deg": 2});
    let (s, v) = call(&app, "PUT", &format!("/sessions/{id}/pose"), Some(rot)).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("rotation_locked")));

    assert_eq!(call(&app, "POST", &format!("/sessions/{id}/commit"), None).await.0, StatusCode::OK);
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/commit"), None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("session_committed")));
    let (s, _) = call(&app, "PUT", &format!("/sessions/{id}/pose"), Some(json!({"kind": "translate", "mm": [1, 0, 0]}))).await;
    assert_eq!(s, StatusCode::CONFLICT);

    assert_eq!(call(&app, "DELETE", &format!("/sessions/{id}"), None).await.0, StatusCode::NO_CONTENT);
    assert_eq!(call(&app, "GET", &format!("/sessions/{id}"), None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn create_returns_views_and_distinct_ids() {
    let app = app();
    let mut body = small();
    body["preset"] = json!("user-study-20deg");
    let (s, v) = call(&app, "POST", "/sessions", Some(body.clone())).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = v["id"].as_str().unwrap().to_string();
    let second = create(&app, body).await;
    assert_ne!(id, second);

    let views = v["views"].as_array().unwrap();
    assert_eq!(views.len(), 2);
    let cam_b: RigidTransform = serde_json::from_value(views[1]["camera"]["pose"].clone()).unwrap();
    let cam_a: RigidTransform = serde_json::from_value(views[0]["camera"]["pose"].clone()).unwrap();
    assert!((cam_b.rotation_angle_to_deg(&cam_a.relabel(cam_b.from_frame(), cam_b.to_frame())) - 20.0).abs() < 1e-9);
    assert_eq!(views[0]["camera"]["intrinsics"]["width"], 128);

    let (s, png) = call_raw(&app, "GET", views[1]["image_url"].as_str().unwrap(), Vec::new()).await;
    assert_eq!(s, StatusCode::OK);
    let img = image::load_from_memory(&png).unwrap();
    assert_eq!((img.width(), img.height()), (128, 128));
    // the phantom and the cup shell give contrast
    let grey = img.into_luma16();
    let (lo, hi) = grey.pixels().fold((u16::MAX, 0), |(lo, hi), p| (lo.min(p.0[0]), hi.max(p.0[0])));
    assert!(lo < 60000 && hi - lo > 5000, "{lo}..{hi}");

    // initial cup at the acetabulum center with the default angles
    let a = &v["angles"];
    assert!((a["inclination_deg"].as_f64().unwrap() - 40.0).abs() < 1e-9);
    assert!((a["anteversion_deg"].as_f64().unwrap() - 15.0).abs() < 1e-9);
}

#[tokio::test]
async fn preset_pins_angles_and_zero_delta_keeps_contours() {
    let app = app();
    let id = create(&app, small()).await;
    let zero = json!({"kind": "translate", "mm": [0, 0, 0]});
    let (_, before) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    let (_, after) = call(&app, "PUT", &format!("/sessions/{id}/pose"), Some(zero)).await;
    assert_eq!(before["planning"]["contours"], after["contours"]);

    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/preset"), Some(json!({"enabled": true}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["preset"], json!({"inclination_deg": 40.0, "anteversion_deg": 25.0}));
    let (_, v) = call(&app, "PUT", &format!("/sessions/{id}/pose"), Some(json!({"kind": "translate", "mm": [2, 1, -1]}))).await;
    let (_, m) = call(&app, "GET", &format!("/sessions/{id}/metrics"), None).await;
    assert!((v["angles"]["inclination_deg"].as_f64().unwrap() - 40.0).abs() < 1e-9);
    assert!((v["angles"]["anteversion_deg"].as_f64().unwrap() - 25.0).abs() < 1e-9);
    assert_eq!(m["errors"]["inclination_deg"], v["errors"]["inclination_deg"]);
    assert!(m["errors"]["inclination_deg"].as_f64().unwrap() < 1e-9);
    assert_eq!(m["pose_updates"], 3);
}

#[tokio::test]
async fn pose_updates_are_fast() {
    let app = app();
    let mut body = small();
    body["detector_px"] = json!(512);
    body["pixel_spacing_mm"] = json!(0.44);
    let id = create(&app, body).await;
    let mut times = Vec::new();
    for k in 0..7 {
        let t = Instant::now();
        let (s, _) = call(&app, "PUT", &format!("/sessions/{id}/pose"), Some(json!({"kind": "translate", "mm": [0.1 * k as f64, 0, 0]}))).await;
        times.push(t.elapsed());
        assert_eq!(s, StatusCode::OK);
    }
    times.sort();
    assert!(times[3] < Duration::from_millis(50), "median {:?}", times[3]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_updates_are_serialized() {
    let app = app();
    let id = create(&app, small()).await;
    let (_, start) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    let t0: RigidTransform = serde_json::from_value(start["planning"]["cup_pose"].clone()).unwrap();
    let deltas: Vec<[f64; 3]> = (0..12).map(|k| [0.25 * k as f64, -0.5, 0.125 * (k % 3) as f64]).collect();
    let tasks: Vec<_> = deltas
        .iter()
        .map(|d| {
            let app = app.clone();
            let uri = format!("/sessions/{id}/pose");
            let body = json!({"kind": "translate", "mm": d});
            tokio::spawn(async move { call(&app, "PUT", &uri, Some(body)).await.0 })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let (_, m) = call(&app, "GET", &format!("/sessions/{id}/metrics"), None).await;
    assert_eq!(m["pose_updates"], 12);
    let (_, end) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    let t1: RigidTransform = serde_json::from_value(end["planning"]["cup_pose"].clone()).unwrap();
    let sum = deltas.iter().fold(Vector3::zeros(), |a, d| a + Vector3::from(*d));
    assert!((t1.translation() - t0.translation() - sum).norm() < 1e-9);
    assert_eq!(t1.rotation(), t0.rotation());
}

async fn spawn_server() -> (String, Router) {
    let app = app();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let served = app.clone();
    tokio::spawn(async move { axum::serve(listener, served).await.unwrap() });
    (format!("127.0.0.1:{}", addr.port()), app)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn ar_stream_frames_replies_and_close() {
    let (addr, app) = spawn_server().await;
    let id = create(&app, small()).await;

    // AR endpoints are valid only after commit
    match tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/{id}/ar")).await {
        Err(tokio_tungstenite::tungstenite::Error::Http(resp)) => assert_eq!(resp.status(), 409),
        other => panic!("expected 409, got {:?}", other.map(|_| ())),
    }

    let (s, commit) = call(&app, "POST", &format!("/sessions/{id}/commit"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}{}", commit["stream_url"].as_str().unwrap()))
        .await
        .unwrap();

    // frames flow without client messages
    let mut seqs = Vec::new();
    let t = Instant::now();
    while seqs.len() < 6 {
        match ws.next().await.unwrap().unwrap() {
            Message::Binary(b) => {
                let (seq, pts) = decode_frame(&b).unwrap();
                assert!(!pts.is_empty(), "impactor visible in the live frame");
                seqs.push(seq);
            }
            other => panic!("{other:?}"),
        }
    }
    let elapsed = t.elapsed();
    assert!(seqs.windows(2).all(|w| w[1] > w[0]), "{seqs:?}");
    // five intervals at >= 10 Hz, with slack for a loaded machine
    assert!(elapsed < Duration::from_millis(900), "{elapsed:?}");

    // planned pose as the impactor pose -> near-zero error
    let msg = json!({ "impactor_pose": commit["planned_impactor_pose"] });
    ws.send(Message::Text(msg.to_string().into())).await.unwrap();
    let mut last = *seqs.last().unwrap();
    let reply = loop {
        match ws.next().await.unwrap().unwrap() {
            Message::Binary(b) => {
                let seq = decode_frame(&b).unwrap().0;
                assert!(seq > last);
                last = seq;
            }
            Message::Text(t) => break serde_json::from_str::<Value>(&t).unwrap(),
            other => panic!("{other:?}"),
        }
    };
    assert_eq!(reply["type"], "alignment_error");
    assert!(reply["seq"].as_u64().unwrap() > last);
    assert!(reply["axis_deg"].as_f64().unwrap() < 0.3, "{reply}");
    assert!(reply["tip_mm"].as_f64().unwrap() < 1.0, "{reply}");

    let (_, m) = call(&app, "GET", &format!("/sessions/{id}/metrics"), None).await;
    assert!(m["frames_streamed"].as_u64().unwrap() >= 7);
    assert!(m["alignment"]["axis_deg"].as_f64().unwrap() < 1.0);

    // a bad message is answered, not fatal
    ws.send(Message::Text("{\"impactor_pose\": 1}".into())).await.unwrap();
    let err = loop {
        if let Message::Text(t) = ws.next().await.unwrap().unwrap() {
            break serde_json::from_str::<Value>(&t).unwrap();
        }
    };
    assert_eq!((err["type"].as_str(), err["field"].as_str()), (Some("error"), Some("impactor_pose")));

    // deleting the session closes the stream
    assert_eq!(call(&app, "DELETE", &format!("/sessions/{id}"), None).await.0, StatusCode::NO_CONTENT);
    let closed = tokio::time::timeout(Duration::from_secs(5), async {
        loop {
            match ws.next().await {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return true,
                Some(Ok(_)) => continue,
            }
        }
    })
    .await;
    assert_eq!(closed, Ok(true));
}

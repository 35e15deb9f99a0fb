use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};

use nse_afs::afs::IterationRecord;
use nse_afs::config::Config;
use nse_afs::envs::DomainKind;
use nse_afs::mdp::{compose_cost, evaluate_policy, plan};
use nse_afs::session::{read_events, ModelView, QueryView, SessionEvent, SessionSummary};
use nse_afs_service::{router, ErrorBody, FormatInfo, SessionStore};

fn app() -> Router {
    router(Arc::new(SessionStore::in_memory()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(v) => req.body(Body::from(v.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = tower::ServiceExt::oneshot(app.clone(), req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn create(app: &Router, body: Value) -> SessionSummary {
    let (status, bytes) = call(app, "POST", "/v1/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&bytes));
    serde_json::from_slice(&bytes).unwrap()
}

async fn query(app: &Router, id: &str) -> QueryView {
    let (status, bytes) = call(app, "GET", &format!("/v1/sessions/{id}/query"), None).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&bytes));
    serde_json::from_slice(&bytes).unwrap()
}

fn error(bytes: &[u8]) -> ErrorBody {
    serde_json::from_slice(bytes).unwrap()
}

fn vase(budget: f64, mode: &str) -> Value {
    json!({"preset": "vase", "budget": budget, "seed": 11, "mode": mode})
}

#[tokio::test]
async fn formats_lists_the_default_table() {
    let (status, bytes) = call(&app(), "GET", "/v1/formats", None).await;
    assert_eq!(status, StatusCode::OK);
    let formats: Vec<FormatInfo> = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(formats.len(), 7);
    let gaze = formats.iter().find(|f| f.format.name() == "gaze").unwrap();
    assert_eq!((gaze.psi, gaze.cost, gaze.annotated), (0.8, 1.0, false));
}

#[tokio::test]
async fn create_and_fetch_query() {
    let app = app();
    let s = create(&app, vase(20.0, "human")).await;
    assert_eq!(serde_json::to_value(s.state).unwrap(), "querying");
    assert_eq!(s.t, 1);
    let (_, first) = call(&app, "GET", &format!("/v1/sessions/{}/query", s.session), None).await;
    let (_, second) = call(&app, "GET", &format!("/v1/sessions/{}/query", s.session), None).await;
    assert_eq!(first, second);
    let q: QueryView = serde_json::from_slice(&first).unwrap();
    assert_eq!(q.t, 1);
    assert_eq!(q.items.len(), 10);
    assert_eq!(q.grid.cells.len(), 64);
    assert!(q.items.iter().all(|i| i.markers.iter().any(|m| m.kind == "agent")));

    let other = create(&app, vase(20.0, "human")).await;
    assert_ne!(other.session, s.session);
}

#[tokio::test]
async fn zero_budget_starts_exhausted() {
    let app = app();
    let s = create(&app, vase(0.0, "human")).await;
    assert_eq!(serde_json::to_value(s.state).unwrap(), "exhausted");
    let (status, bytes) = call(&app, "GET", &format!("/v1/sessions/{}/query", s.session), None).await;
    assert_eq!(status, StatusCode::GONE);
    assert_eq!(error(&bytes).error.code, "exhausted");
}

#[tokio::test]
async fn invalid_config_names_the_field() {
    let app = app();
    let (status, bytes) =
        call(&app, "POST", "/v1/sessions", Some(json!({"preset": "vase", "budget": -1.0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error(&bytes).error.field.as_deref(), Some("budget"));
    let (status, bytes) = call(
        &app,
        "POST",
        "/v1/sessions",
        Some(json!({"preset": "vase", "budget": 10.0, "learning": {"k": 9, "n_critical": 3}})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error(&bytes).error.field.as_deref(), Some("learning.n_critical"));
    let (status, bytes) = call(&app, "POST", "/v1/sessions", Some(json!({"budget": "ten"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error(&bytes).error.code, "invalid_json");
    let (status, _) = call(&app, "GET", "/v1/sessions/nope/query", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn decline_charges_budget_only() {
    let app = app();
    let s = create(&app, vase(20.0, "human")).await;
    let q = query(&app, &s.session).await;
    let (status, bytes) = call(
        &app,
        "POST",
        &format!("/v1/sessions/{}/feedback", s.session),
        Some(json!({"t": q.t, "declined": true})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let sum: SessionSummary = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(sum.dataset_size, 0);
    assert_eq!(sum.remaining_budget, 20.0 - q.cost);
    assert_eq!(sum.t, 2);
    let (_, bytes) = call(&app, "GET", &format!("/v1/sessions/{}/model", s.session), None).await;
    let view: ModelView = serde_json::from_slice(&bytes).unwrap();
    assert!(view.states.iter().all(|st| st.actions.iter().all(|a| a.penalty == 0.0)));
}

#[tokio::test]
async fn rejected_answers_leave_the_session_unchanged() {
    let app = app();
    // Only annotated approval is on offer, so the first query is of that format.
    let body = json!({
        "preset": "vase", "budget": 10.0, "seed": 2,
        "preferences": [{"format": "annotated_approval", "psi": 1.0, "cost": 2.0}]
    });
    let s = create(&app, body).await;
    let q = query(&app, &s.session).await;
    assert_eq!(q.format.name(), "annotated_approval");
    assert_eq!(q.severity_choices.len(), 2);
    let mut answers: Vec<Value> = (0..q.items.len()).map(|_| json!({"kind": "approval", "approve": true})).collect();
    answers[3] = json!({"kind": "approval", "approve": false});
    let uri = format!("/v1/sessions/{}/feedback", s.session);
    let (status, bytes) = call(&app, "POST", &uri, Some(json!({"t": q.t, "answers": answers}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error(&bytes).error.item, Some(3));

    let (status, bytes) =
        call(&app, "POST", &uri, Some(json!({"t": q.t, "format": "approval", "answers": answers}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{}", String::from_utf8_lossy(&bytes));

    let (status, _) = call(&app, "POST", &uri, Some(json!({"t": q.t + 1, "declined": true}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(query(&app, &s.session).await, q);

    let (status, _) = call(&app, "POST", &uri, Some(json!({"t": q.t, "declined": true}))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, bytes) = call(&app, "POST", &uri, Some(json!({"t": q.t, "declined": true}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(error(&bytes).error.code, "conflict");
}

#[tokio::test]
async fn wrong_mode_operations_conflict() {
    let app = app();
    let human = create(&app, vase(10.0, "human")).await;
    let (status, _) = call(&app, "POST", &format!("/v1/sessions/{}/step", human.session), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let sim = create(&app, vase(10.0, "simulated")).await;
    let (status, _) = call(
        &app,
        "POST",
        &format!("/v1/sessions/{}/feedback", sim.session),
        Some(json!({"t": 1, "declined": true})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
}

fn utility(psi: f64, cost: f64, v: f64, n: u32, t: u32, eps: f64) -> f64 {
    psi / ((v + eps) * cost) + ((t as f64).ln() / (n as f64 + eps)).sqrt()
}

#[tokio::test]
async fn second_query_utilities_follow_the_log() {
    let app = app();
    let s = create(&app, vase(20.0, "simulated")).await;
    let (status, _) =
        call(&app, "POST", &format!("/v1/sessions/{}/step", s.session), Some(json!({"max_iterations": 1}))).await;
    assert_eq!(status, StatusCode::OK);
    let (_, bytes) = call(&app, "GET", &format!("/v1/sessions/{}/runlog", s.session), None).await;
    let log: Vec<IterationRecord> = String::from_utf8(bytes)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(log.len(), 1);
    let q = query(&app, &s.session).await;
    assert_eq!(q.t, 2);
    for (f, status) in &q.formats {
        let want = utility(status.psi, status.cost, log[0].v[f], log[0].n[f], 2, 1e-3);
        assert!((status.utility - want).abs() <= 1e-9 * want.abs().max(1.0), "{f}: {} vs {want}", status.utility);
    }
}

/// Drives a human session with the answers a simulated session produced and
/// checks that nothing downstream can tell the difference.
#[tokio::test]
async fn scripted_human_matches_simulated() {
    let app = app();
    let sim = create(&app, vase(30.0, "simulated")).await;
    call(&app, "POST", &format!("/v1/sessions/{}/step", sim.session), Some(json!({}))).await;
    let (_, events) = call(&app, "GET", &format!("/v1/sessions/{}/events", sim.session), None).await;
    let events = read_events(events.as_slice()).unwrap();

    let human = create(&app, vase(30.0, "human")).await;
    for e in &events[1..] {
        let SessionEvent::Feedback { t, response, .. } = e else { panic!("unexpected event") };
        let q = query(&app, &human.session).await;
        assert_eq!(q.t, *t);
        let body = json!({"t": t, "declined": response.declined, "format": response.format_given, "answers": response.answers});
        let (status, bytes) =
            call(&app, "POST", &format!("/v1/sessions/{}/feedback", human.session), Some(body)).await;
        assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&bytes));
    }
    let get = |id: String, what: &'static str| {
        let app = app.clone();
        async move { call(&app, "GET", &format!("/v1/sessions/{id}/{what}"), None).await.1 }
    };
    assert_eq!(get(sim.session.clone(), "runlog").await, get(human.session.clone(), "runlog").await);
    let mut a: ModelView = serde_json::from_slice(&get(sim.session.clone(), "model?metrics=true").await).unwrap();
    let mut b: ModelView = serde_json::from_slice(&get(human.session.clone(), "model?metrics=true").await).unwrap();
    assert!(b.truth_revealed, "human sessions reveal truth once exhausted");
    a.session.clear();
    b.session.clear();
    assert_eq!(a, b);
}

#[tokio::test]
async fn exhausted_metrics_match_offline_evaluation() {
    let app = app();
    let s = create(&app, json!({"preset": "vase", "budget": 8.0, "seed": 5, "mode": "simulated", "trials": 40})).await;
    call(&app, "POST", &format!("/v1/sessions/{}/step", s.session), None).await;
    let (_, bytes) = call(&app, "GET", &format!("/v1/sessions/{}/model?metrics=true", s.session), None).await;
    let view: ModelView = serde_json::from_slice(&bytes).unwrap();
    let metrics = view.metrics.unwrap();

    let cfg = Config::preset(DomainKind::Vase);
    let d = cfg.build_domain().unwrap();
    let penalty: Vec<Vec<f64>> = view.states.iter().map(|st| st.actions.iter().map(|a| a.penalty).collect()).collect();
    let table = nse_afs::PenaltyTable::new(penalty);
    let policy = plan(&compose_cost(&d.mdp, &table, cfg.learning.weights().unwrap()).unwrap()).unwrap().policy;
    for st in &view.states {
        assert_eq!(st.policy, policy.action(st.state));
    }
    let report = evaluate_policy(&d.mdp, &policy, &d.nse, 40, d.mdp.default_horizon(), 5).unwrap();
    assert_eq!(metrics.mean_penalty, report.mean_penalty);
    assert_eq!(metrics.mean_cost, report.mean_cost);
    assert_eq!(metrics.stderr_penalty, report.stderr_penalty);
}

#[tokio::test]
async fn prior_model_before_feedback() {
    let app = app();
    let s = create(&app, vase(10.0, "human")).await;
    let (_, bytes) = call(&app, "GET", &format!("/v1/sessions/{}/model", s.session), None).await;
    let view: ModelView = serde_json::from_slice(&bytes).unwrap();
    assert!(!view.truth_revealed);
    assert!(view.metrics.is_none());
    let d = Config::preset(DomainKind::Vase).build_domain().unwrap();
    let primary = plan(&d.mdp).unwrap().policy;
    for st in &view.states {
        assert!(st.actions.iter().all(|a| a.truth.is_none() && a.predicted.is_acceptable()));
        assert_eq!(st.policy, primary.action(st.state));
    }
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(SessionStore::with_log_dir(dir.path()).unwrap()));
    let sim = create(&app, vase(12.0, "simulated")).await;
    call(&app, "POST", &format!("/v1/sessions/{}/step", sim.session), Some(json!({"max_iterations": 2}))).await;
    let human = create(&app, vase(12.0, "human")).await;
    let q = query(&app, &human.session).await;
    call(&app, "POST", &format!("/v1/sessions/{}/feedback", human.session), Some(json!({"t": q.t, "declined": true})))
        .await;
    let (_, log_sim) = call(&app, "GET", &format!("/v1/sessions/{}/runlog", sim.session), None).await;
    let (_, q_human) = call(&app, "GET", &format!("/v1/sessions/{}/query", human.session), None).await;
    drop(app);

    let text = std::fs::read_to_string(dir.path().join(format!("{}.jsonl", sim.session))).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().next().unwrap().contains("\"event\":\"created\""));

    let store = SessionStore::with_log_dir(dir.path()).unwrap();
    assert_eq!(store.len(), 2);
    let app = router(Arc::new(store));
    let (_, again) = call(&app, "GET", &format!("/v1/sessions/{}/runlog", sim.session), None).await;
    assert_eq!(again, log_sim);
    let recovered = query(&app, &human.session).await;
    let before: QueryView = serde_json::from_slice(&q_human).unwrap();
    assert_eq!(recovered.items, before.items);
    assert_eq!(recovered.t, before.t);
}

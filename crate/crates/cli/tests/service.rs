use std::sync::Arc;

use activelab::driver::{ActiveLearner, ALConfig};
use activelab::oracle::{AnnotationQueue, AnnotationSource, AnnotationTask};
use activelab::synth::{generate_synthetic, SynthConfig};
use activelab::LabelCombination;
use activelab_cli::service::{router, AppState, Session};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use proptest::prelude::*;
use serde_json::{json, Value};
use tower::ServiceExt;

fn session(k: usize) -> Session {
    let cfg = SynthConfig {
        n_pool: 120,
        n_test: 60,
        ..SynthConfig::lusms_synth_v1(5)
    };
    let data = Arc::new(generate_synthetic(&cfg).unwrap());
    let al = ALConfig {
        k_max: k,
        max_iterations: 3,
        ..ALConfig::default()
    };
    Session::new(ActiveLearner::new(al, data).unwrap()).unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn post_final(app: &Router, id: &str, fin: &str) -> (StatusCode, Value) {
    call(app, "POST", "/api/annotations", Some(json!({"sample_id": id, "final": fin}))).await
}

fn setup(k: usize) -> (AppState, Router) {
    let state = AppState::new(session(k));
    (state.clone(), router(state))
}

#[tokio::test]
async fn submitted_task_leaves_the_queue() {
    let (_, app) = setup(5);
    let (status, task) = call(&app, "GET", "/api/queue/next", None).await;
    assert_eq!(status, StatusCode::OK);
    let id = task["sample_id"].as_str().unwrap().to_string();
    let proposed = task["proposed"].as_str().unwrap().to_string();
    let (status, result) = post_final(&app, &id, &proposed).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(result["changed"], json!(false));
    assert_eq!(result["final"], json!(proposed));
    let (_, next) = call(&app, "GET", "/api/queue/next", None).await;
    assert_ne!(next["sample_id"].as_str().unwrap(), id);
}

#[tokio::test]
async fn empty_queue_answers_no_content() {
    let (state, app) = setup(4);
    let ids: Vec<String> = state.lock().queue().pending().map(|t| t.sample_id.clone()).collect();
    for id in &ids {
        assert_eq!(post_final(&app, id, "1000").await.0, StatusCode::OK);
    }
    let (status, body) = call(&app, "GET", "/api/queue/next", None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert_eq!(body, Value::Null);
}

#[tokio::test]
async fn error_codes() {
    let (state, app) = setup(3);
    let id = state.lock().next_task().unwrap().sample_id;

    let (status, body) = post_final(&app, "nope", "1000").await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_task")));

    for bad in ["10x0", "100", "10000", ""] {
        let (status, body) = post_final(&app, &id, bad).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{bad:?}");
        assert_eq!(body["error"], "malformed_combination");
    }

    let (status, body) = call(&app, "POST", "/api/iteration/advance", None).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::CONFLICT, Some("queue_not_empty")));

    assert_eq!(post_final(&app, &id, "0100").await.0, StatusCode::OK);
    let (status, body) = post_final(&app, &id, "0100").await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::CONFLICT, Some("already_finalized")));

    let (status, body) = call(&app, "POST", "/api/annotations", Some(json!({"sample_id": id}))).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::BAD_REQUEST, Some("malformed_body")));
}

#[tokio::test]
async fn labels_and_progress() {
    let (_, app) = setup(6);
    let (status, labels) = call(&app, "GET", "/api/labels", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(labels["labels"], json!(["A-line", "B-line", "P-lesion", "P-effusion"]));
    assert_eq!(labels["exclusive_index"], json!(0));
    assert_eq!(labels["gallery"].as_array().unwrap().len(), 4);

    let (status, progress) = call(&app, "GET", "/api/progress", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(progress["iteration"], json!(1));
    assert_eq!(progress["completed_iterations"], json!(0));
    assert_eq!(progress["queue"]["pending"], json!(6));
    assert_eq!(progress["pool_size"], json!(120));
    assert_eq!(progress["stop_reason"], Value::Null);
}

/// Confirming every default grows the labeled set by the batch size with no
/// corrections; toggling one label produces exactly one.
#[tokio::test]
async fn review_round_trip() {
    let (state, app) = setup(10);
    let mut toggled = false;
    loop {
        let (status, task) = call(&app, "GET", "/api/queue/next", None).await;
        if status == StatusCode::NO_CONTENT {
            break;
        }
        let id = task["sample_id"].as_str().unwrap();
        let fin = task["proposed"].as_str().unwrap().to_string();
        assert_eq!(post_final(&app, id, &fin).await.0, StatusCode::OK);
    }
    let (status, adv) = call(&app, "POST", "/api/iteration/advance", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(adv["report"]["labeled_count"], json!(10));
    assert_eq!(adv["report"]["corrected"], json!(0));
    assert_eq!(adv["next_iteration"], json!(2));

    let pending: Vec<AnnotationTask> = state.lock().queue().pending().cloned().collect();
    assert_eq!(pending.len(), 10);
    for task in &pending {
        let mut bits = task.proposed.bits().to_vec();
        if !toggled {
            bits[3] = !bits[3];
            toggled = true;
        }
        let fin = LabelCombination::new(bits).encode();
        assert_eq!(post_final(&app, &task.sample_id, &fin).await.0, StatusCode::OK);
    }
    let (_, adv) = call(&app, "POST", "/api/iteration/advance", None).await;
    assert_eq!(adv["report"]["labeled_count"], json!(20));
    assert_eq!(adv["report"]["corrected"], json!(1));

    // Finish the run; advancing afterwards is refused.
    let pending: Vec<AnnotationTask> = state.lock().queue().pending().cloned().collect();
    for task in &pending {
        post_final(&app, &task.sample_id, &task.proposed.encode()).await;
    }
    let (_, adv) = call(&app, "POST", "/api/iteration/advance", None).await;
    assert_eq!(adv["stop_reason"], json!("max-iterations"));
    assert_eq!(call(&app, "GET", "/api/queue/next", None).await.0, StatusCode::NO_CONTENT);
    let (status, body) = call(&app, "POST", "/api/iteration/advance", None).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::CONFLICT, Some("run_finished")));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_submissions_serialize() {
    let (state, app) = setup(12);
    let initial = state.lock().queue().clone();
    let ids: Vec<String> = initial.pending().map(|t| t.sample_id.clone()).collect();
    let mut handles = Vec::new();
    for round in 0..3 {
        for (i, id) in ids.iter().enumerate() {
            let app = app.clone();
            let id = id.clone();
            let fin = if (i + round) % 2 == 0 { "0110" } else { "1000" };
            handles.push(tokio::spawn(async move {
                let (status, body) = post_final(&app, &id, fin).await;
                (id, status, body)
            }));
        }
    }
    let mut expected = initial;
    let mut winners = 0;
    for h in handles {
        let (id, status, body) = h.await.unwrap();
        match status {
            StatusCode::OK => {
                winners += 1;
                let fin: LabelCombination = body["final"].as_str().unwrap().parse().unwrap();
                expected.submit(&id, fin, AnnotationSource::Human).unwrap();
            }
            StatusCode::CONFLICT => assert_eq!(body["error"], "already_finalized"),
            other => panic!("unexpected {other}"),
        }
    }
    assert_eq!(winners, ids.len());
    assert_eq!(state.lock().queue(), &expected);
}

#[derive(Debug, Clone)]
enum Op {
    Next,
    Submit(usize, &'static str),
    SubmitUnknown,
    Advance,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        Just(Op::Next),
        (0usize..8, prop::sample::select(vec!["1000", "0100", "0110", "01x0", "010"]))
            .prop_map(|(i, c)| Op::Submit(i, c)),
        Just(Op::SubmitUnknown),
        Just(Op::Advance),
    ]
}

/// Expected status when `op` is applied to `queue`, which is updated on
/// success.
fn replay(queue: &mut AnnotationQueue, ids: &[String], op: &Op) -> StatusCode {
    match op {
        Op::Next => {
            if queue.is_drained() {
                StatusCode::NO_CONTENT
            } else {
                StatusCode::OK
            }
        }
        Op::SubmitUnknown => StatusCode::NOT_FOUND,
        Op::Submit(i, c) => {
            let id = &ids[i % ids.len()];
            if queue.task(id).unwrap().status != activelab::oracle::TaskStatus::Pending {
                return StatusCode::CONFLICT;
            }
            match c.parse::<LabelCombination>() {
                Ok(fin) if fin.len() == 4 => {
                    queue.submit(id, fin, AnnotationSource::Human).unwrap();
                    StatusCode::OK
                }
                _ => StatusCode::UNPROCESSABLE_ENTITY,
            }
        }
        // Only exercised while tasks are pending.
        Op::Advance => StatusCode::CONFLICT,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn service_matches_sequential_queue(ops in prop::collection::vec(op(), 1..40)) {
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        rt.block_on(async {
            let (state, app) = setup(8);
            let mut model = state.lock().queue().clone();
            let ids: Vec<String> = model.tasks().map(|t| t.sample_id.clone()).collect();
            for op in &ops {
                if matches!(op, Op::Advance) && model.is_drained() {
                    continue;
                }
                let want = replay(&mut model, &ids, op);
                let (got, body) = match op {
                    Op::Next => call(&app, "GET", "/api/queue/next", None).await,
                    Op::Submit(i, c) => post_final(&app, &ids[i % ids.len()], c).await,
                    Op::SubmitUnknown => post_final(&app, "ghost", "1000").await,
                    Op::Advance => call(&app, "POST", "/api/iteration/advance", None).await,
                };
                prop_assert_eq!(got, want, "{:?} -> {}", op, body);
                if let Op::Next = op {
                    if got == StatusCode::OK {
                        let head = model.next_pending().unwrap();
                        prop_assert_eq!(body["sample_id"].as_str(), Some(head.sample_id.as_str()));
                    }
                }
            }
            let served = state.lock().queue().clone();
            prop_assert_eq!(served, model);
            Ok(())
        })?;
    }
}

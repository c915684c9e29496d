//! Caption inference against a chat-completions endpoint.
//!
//! Three question orders are supported. `Independent` asks each role in its
//! own conversation. `VehiclePedestrian` asks the vehicle question, keeps the
//! answer in the history and then asks the pedestrian question in the same
//! conversation; `PedestrianVehicle` is the mirror.

mod client;
pub mod mock;

use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{
    parse_reply, request_body, with_retry, ChatClient, ChatError, ChatRole, ChatTurn, EndpointConfig,
    HttpChatClient, ImagePayload, TOKEN_ENV,
};
pub use mock::{MockRequest, MockResponse, MockServer, ScriptedChat};

use crate::corpus::Subject;
use crate::qa_builder::{build_long_prompt, PromptPerspective};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingMode {
    Independent,
    PedestrianVehicle,
    #[default]
    VehiclePedestrian,
}

impl OrderingMode {
    pub const ALL: [OrderingMode; 3] = [
        OrderingMode::Independent,
        OrderingMode::PedestrianVehicle,
        OrderingMode::VehiclePedestrian,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentRequest {
    pub scenario_id: String,
    pub phase_index: u8,
    pub perspective: PromptPerspective,
    /// Global view first.
    pub images: Vec<ImagePayload>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferOptions {
    pub mode: OrderingMode,
    /// Attach the images again to the second question of a sequential
    /// conversation instead of relying on the history.
    #[serde(default)]
    pub resend_images: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub pedestrian_ms: f64,
    pub vehicle_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionPair {
    pub scenario_id: String,
    pub phase_index: u8,
    pub pedestrian_caption: String,
    pub vehicle_caption: String,
    pub mode: OrderingMode,
    pub latency: LatencyStats,
}

/// Row of the predictions document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub scenario_id: String,
    pub phase_index: u8,
    pub pedestrian_caption: String,
    pub vehicle_caption: String,
}

impl From<&CaptionPair> for Prediction {
    fn from(p: &CaptionPair) -> Self {
        Self {
            scenario_id: p.scenario_id.clone(),
            phase_index: p.phase_index,
            pedestrian_caption: p.pedestrian_caption.clone(),
            vehicle_caption: p.vehicle_caption.clone(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentError {
    #[error("{role} question failed: {source}")]
    Chat {
        role: Subject,
        #[source]
        source: ChatError,
    },
    #[error("{0} answer was empty")]
    EmptyAnswer(Subject),
    #[error("segment has no images")]
    NoImages,
}

fn ask(client: &dyn ChatClient, turns: &[ChatTurn], role: Subject) -> Result<(String, f64), SegmentError> {
    let started = Instant::now();
    let answer = client
        .chat(turns)
        .map_err(|source| SegmentError::Chat { role, source })?;
    let ms = started.elapsed().as_secs_f64() * 1e3;
    if answer.trim().is_empty() {
        return Err(SegmentError::EmptyAnswer(role));
    }
    Ok((answer, ms))
}

/// Captions one segment with the configured question order.
pub fn run_segment(
    client: &dyn ChatClient,
    req: &SegmentRequest,
    opts: &InferOptions,
) -> Result<CaptionPair, SegmentError> {
    if req.images.is_empty() {
        return Err(SegmentError::NoImages);
    }
    let question = |role| build_long_prompt(role, req.perspective);
    let first_turn = |role| ChatTurn::user(question(role), req.images.clone());

    let mut answers = [(String::new(), 0.0), (String::new(), 0.0)];
    let slot = |role: Subject| if role == Subject::Pedestrian { 0 } else { 1 };
    match opts.mode {
        OrderingMode::Independent => {
            for role in [Subject::Vehicle, Subject::Pedestrian] {
                answers[slot(role)] = ask(client, &[first_turn(role)], role)?;
            }
        }
        OrderingMode::VehiclePedestrian | OrderingMode::PedestrianVehicle => {
            let (first, second) = if opts.mode == OrderingMode::VehiclePedestrian {
                (Subject::Vehicle, Subject::Pedestrian)
            } else {
                (Subject::Pedestrian, Subject::Vehicle)
            };
            let mut history = vec![first_turn(first)];
            let (answer, ms) = ask(client, &history, first)?;
            history.push(ChatTurn::assistant(answer.clone()));
            answers[slot(first)] = (answer, ms);
            let images = if opts.resend_images { req.images.clone() } else { Vec::new() };
            history.push(ChatTurn::user(question(second), images));
            answers[slot(second)] = ask(client, &history, second)?;
        }
    }
    let [(pedestrian_caption, pedestrian_ms), (vehicle_caption, vehicle_ms)] = answers;
    Ok(CaptionPair {
        scenario_id: req.scenario_id.clone(),
        phase_index: req.phase_index,
        pedestrian_caption,
        vehicle_caption,
        mode: opts.mode,
        latency: LatencyStats { pedestrian_ms, vehicle_ms },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentFailure {
    pub scenario_id: String,
    pub phase_index: u8,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchOutcome {
    /// Sorted by (scenario, phase).
    pub pairs: Vec<CaptionPair>,
    pub failures: Vec<SegmentFailure>,
}

impl BatchOutcome {
    pub fn predictions(&self) -> Vec<Prediction> {
        self.pairs.iter().map(Prediction::from).collect()
    }
}

/// Captions every request with at most `parallelism` segments in flight.
/// Failures are collected per segment; the batch always completes.
pub fn run_batch(
    client: &dyn ChatClient,
    requests: &[SegmentRequest],
    opts: &InferOptions,
    parallelism: usize,
) -> BatchOutcome {
    let sink = Mutex::new(BatchOutcome::default());
    let work = || {
        requests.par_iter().for_each(|req| {
            let result = run_segment(client, req, opts);
            let mut sink = sink.lock().expect("result sink");
            match result {
                Ok(pair) => sink.pairs.push(pair),
                Err(e) => sink.failures.push(SegmentFailure {
                    scenario_id: req.scenario_id.clone(),
                    phase_index: req.phase_index,
                    error: e.to_string(),
                }),
            }
        })
    };
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build() {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    }
    let mut out = sink.into_inner().expect("result sink");
    out.pairs
        .sort_by(|a, b| (a.scenario_id.as_str(), a.phase_index).cmp(&(b.scenario_id.as_str(), b.phase_index)));
    out.failures
        .sort_by(|a, b| (a.scenario_id.as_str(), a.phase_index).cmp(&(b.scenario_id.as_str(), b.phase_index)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(scenario: &str, phase: u8) -> SegmentRequest {
        SegmentRequest {
            scenario_id: scenario.into(),
            phase_index: phase,
            perspective: PromptPerspective::Overhead,
            images: vec![ImagePayload::png(b"global"), ImagePayload::png(b"local")],
        }
    }

    /// Reply depends only on the conversation content.
    fn deterministic(turns: &[ChatTurn]) -> Result<String, ChatError> {
        let last = &turns.last().unwrap().text;
        let role = if last.contains("Describe the pedestrian") { "pedestrian" } else { "vehicle" };
        let prior: Vec<&str> = turns
            .iter()
            .filter(|t| t.role == ChatRole::Assistant)
            .map(|t| t.text.as_str())
            .collect();
        Ok(format!("{role} caption after {} turns [{}]", turns.len(), prior.join("|")))
    }

    fn opts(mode: OrderingMode) -> InferOptions {
        InferOptions { mode, resend_images: false }
    }

    #[test]
    fn vehicle_first_history() {
        let chat = ScriptedChat::new(deterministic);
        let pair = run_segment(&chat, &req("s", 0), &opts(OrderingMode::VehiclePedestrian)).unwrap();
        let t = chat.transcripts();
        assert_eq!(t.len(), 2);
        assert!(t[0][0].text.contains("Describe the vehicle"));
        let assistants: Vec<_> = t[1].iter().filter(|x| x.role == ChatRole::Assistant).collect();
        assert_eq!(assistants.len(), 1);
        assert_eq!(assistants[0].text, pair.vehicle_caption);
        assert!(t[1][0].images.len() == 2 && t[1][2].images.is_empty());
    }

    #[test]
    fn independent_conversations_are_isolated() {
        let chat = ScriptedChat::new(deterministic);
        run_segment(&chat, &req("s", 0), &opts(OrderingMode::Independent)).unwrap();
        let t = chat.transcripts();
        assert_eq!(t.len(), 2);
        assert!(t.iter().all(|c| c.len() == 1 && c[0].images.len() == 2));
    }

    #[test]
    fn vehicle_caption_same_in_independent_and_vehicle_first() {
        let chat = ScriptedChat::new(deterministic);
        let a = run_segment(&chat, &req("s", 0), &opts(OrderingMode::Independent)).unwrap();
        let b = run_segment(&chat, &req("s", 0), &opts(OrderingMode::VehiclePedestrian)).unwrap();
        let c = run_segment(&chat, &req("s", 0), &opts(OrderingMode::PedestrianVehicle)).unwrap();
        assert_eq!(a.vehicle_caption, b.vehicle_caption);
        assert_ne!(a.pedestrian_caption, b.pedestrian_caption);
        assert_eq!(a.pedestrian_caption, c.pedestrian_caption);
        assert_ne!(a.vehicle_caption, c.vehicle_caption);
    }

    #[test]
    fn resend_images_flag() {
        let chat = ScriptedChat::new(deterministic);
        let o = InferOptions { mode: OrderingMode::PedestrianVehicle, resend_images: true };
        run_segment(&chat, &req("s", 0), &o).unwrap();
        assert_eq!(chat.transcripts()[1][2].images.len(), 2);
    }

    #[test]
    fn failures_tag_role() {
        let chat = ScriptedChat::new(|turns| {
            if turns.len() > 1 {
                Err(ChatError::Protocol { endpoint: "m".into(), message: "bad".into() })
            } else {
                Ok("ok".into())
            }
        });
        let err = run_segment(&chat, &req("s", 0), &opts(OrderingMode::VehiclePedestrian)).unwrap_err();
        assert!(matches!(err, SegmentError::Chat { role: Subject::Pedestrian, .. }));
        let mut empty = req("s", 0);
        empty.images.clear();
        assert_eq!(run_segment(&chat, &empty, &opts(OrderingMode::Independent)), Err(SegmentError::NoImages));
    }

    #[test]
    fn batch_counts_order_and_failures() {
        let reqs: Vec<_> = ["b", "a"].iter().flat_map(|s| (0..5).rev().map(move |p| req(s, p))).collect();
        let chat = ScriptedChat::new(deterministic);
        let one = run_batch(&chat, &reqs, &opts(OrderingMode::VehiclePedestrian), 1);
        let eight = run_batch(&chat, &reqs, &opts(OrderingMode::VehiclePedestrian), 8);
        assert_eq!(one.pairs.len(), 10);
        assert_eq!(one.predictions(), eight.predictions());
        assert_eq!((one.pairs[0].scenario_id.as_str(), one.pairs[0].phase_index), ("a", 0));

        let flaky = ScriptedChat::new(|turns| {
            if turns[0].images[0] == ImagePayload::png(b"broken") {
                Err(ChatError::Status { endpoint: "m".into(), status: 400, body: "no".into() })
            } else {
                deterministic(turns)
            }
        });
        let mut reqs = reqs;
        reqs[3].images[0] = ImagePayload::png(b"broken");
        let out = run_batch(&flaky, &reqs, &opts(OrderingMode::Independent), 4);
        assert_eq!(out.pairs.len(), 9);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].scenario_id, "b");
    }

    fn http_client(server: &MockServer) -> HttpChatClient {
        HttpChatClient::new(EndpointConfig {
            url: server.url(),
            backoff_base_ms: 1,
            token: Some("secret".into()),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn http_echo() {
        let server = MockServer::start(|_, _| MockResponse::ok("a canned caption")).unwrap();
        let client = http_client(&server);
        let reply = client.chat(&[ChatTurn::user("hi", vec![ImagePayload::png(b"x")])]).unwrap();
        assert_eq!(reply, "a canned caption");
        let reqs = server.requests();
        assert_eq!(reqs[0].path, "/v1/chat/completions");
        assert_eq!(reqs[0].authorization.as_deref(), Some("Bearer secret"));
        let turns = mock::parse_request_turns(&serde_json::from_str(&reqs[0].body).unwrap()).unwrap();
        assert_eq!(turns, [ChatTurn::user("hi", vec![ImagePayload::png(b"x")])]);
    }

    #[test]
    fn http_retries_then_succeeds() {
        let server = MockServer::start(|_, n| {
            if n < 2 {
                MockResponse { status: 500, body: "boom".into() }
            } else {
                MockResponse::ok("third time")
            }
        })
        .unwrap();
        let client = http_client(&server);
        assert_eq!(client.chat(&[ChatTurn::user("q", vec![])]).unwrap(), "third time");
        assert_eq!(server.requests().len(), 3);
    }

    #[test]
    fn http_errors() {
        let server = MockServer::start(|_, _| MockResponse { status: 200, body: "{\"nope\":1}".into() }).unwrap();
        let err = http_client(&server).chat(&[ChatTurn::user("q", vec![])]).unwrap_err();
        assert!(matches!(err, ChatError::Protocol { .. }));

        let server = MockServer::start(|_, _| MockResponse { status: 403, body: "denied".into() }).unwrap();
        let err = http_client(&server).chat(&[ChatTurn::user("q", vec![])]).unwrap_err();
        assert!(matches!(err, ChatError::Status { status: 403, .. }));
        assert_eq!(server.requests().len(), 1);

        let server = MockServer::start(|_, _| MockResponse { status: 503, body: "busy".into() }).unwrap();
        let err = http_client(&server).chat(&[ChatTurn::user("q", vec![])]).unwrap_err();
        assert!(matches!(err, ChatError::RetriesExhausted { attempts: 3, .. }));
    }

    #[test]
    fn payload_limit() {
        let client = HttpChatClient::new(EndpointConfig { max_payload_bytes: 10, ..Default::default() }).unwrap();
        let err = client.chat(&[ChatTurn::user("a long question", vec![])]).unwrap_err();
        assert!(matches!(err, ChatError::PayloadTooLarge { .. }));
    }
}

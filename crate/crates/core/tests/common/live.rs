//! Live-service contract checks over real sockets. They panic on violation.

use std::collections::BTreeMap;
use std::time::Duration;

use futures_util::StreamExt;
use jamsim::engine::{AppliedCommand, EventKind, JammerLogEntry, RunConfig, Simulation};
use jamsim::experiments::{fig5, Calibration};
use jamsim::jammer::JammerMode;
use jamsim::network::LinkMetrics;
use jamsim::service::{decode_bins, router, AppState, Frame, FrameKind, ServiceConfig, StreamKind};
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

struct Server {
    base: String,
    ws: String,
    http: reqwest::Client,
    _dir: tempfile::TempDir,
}

async fn start(capacity: usize, stream_buffer: usize) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig { capacity, stream_buffer, ..ServiceConfig::new(dir.path()) };
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(AppState::new(cfg))).await.unwrap() });
    Server { base: format!("http://{addr}"), ws: format!("ws://{addr}"), http: reqwest::Client::new(), _dir: dir }
}

impl Server {
    async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let r = self.http.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap_or(Value::Null))
    }

    async fn text(&self, path: &str) -> String {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        assert_eq!(r.status().as_u16(), 200, "{path}");
        r.text().await.unwrap()
    }

    async fn bytes(&self, path: &str) -> Vec<u8> {
        self.http.get(format!("{}{path}", self.base)).send().await.unwrap().bytes().await.unwrap().to_vec()
    }

    async fn start_run(&self, config: &RunConfig, realtime_factor: f64) -> String {
        let (status, body) = self.post("/runs", json!({ "config": config, "realtime_factor": realtime_factor })).await;
        assert_eq!(status, 201, "{body}");
        assert_eq!(body["schema_version"], 1);
        body["run_id"].as_str().unwrap().to_string()
    }

    async fn wait_done(&self, id: &str) -> String {
        for _ in 0..2000 {
            let (_, s) = self.get(&format!("/runs/{id}")).await;
            let state = s["state"].as_str().unwrap().to_string();
            if state == "finished" || state == "aborted" {
                return state;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        panic!("run {id} never ended");
    }

    async fn subscribe(
        &self,
        id: &str,
        stream: &str,
    ) -> tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>> {
        let (ws, _) = tokio_tungstenite::connect_async(format!("{}/runs/{id}/stream/{stream}", self.ws)).await.unwrap();
        ws
    }
}

/// Read frames until end-of-stream.
async fn drain<S>(mut ws: S) -> Vec<Frame>
where
    S: futures_util::Stream<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    let mut out = Vec::new();
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(60), ws.next()).await.expect("stream stalled");
        match msg {
            Some(Ok(Message::Text(t))) => {
                let f: Frame = serde_json::from_str(&t).unwrap();
                assert_eq!(f.schema_version, 1);
                let end = f.kind == FrameKind::End;
                out.push(f);
                if end {
                    return out;
                }
            }
            Some(Ok(Message::Close(_))) | None => panic!("stream closed without an end frame"),
            Some(Ok(_)) => {}
            Some(Err(e)) => panic!("{e}"),
        }
    }
}

fn assert_strictly_increasing(frames: &[Frame]) {
    let ticks: Vec<u64> = frames.iter().filter_map(|f| f.tick).collect();
    assert!(ticks.windows(2).all(|w| w[0] < w[1]), "tick order violated: {ticks:?}");
}

fn metrics_of(f: &Frame) -> Vec<LinkMetrics> {
    serde_json::from_value(f.payload["links"].clone()).unwrap()
}

/// Single downlink plus an unarmed proactive jammer, no fading.
fn fixture(duration_s: f64, spectrogram_every: u64) -> RunConfig {
    let mut p = Calibration::committed().fig5;
    p.fading_sigma_db = 0.0;
    let mut c = RunConfig::new(fig5::scenario(&p), duration_s);
    c.tick_s = 0.01;
    c.seed = 3;
    c.baseline_window_s = 0.1;
    c.spectrogram_every_ticks = spectrogram_every;
    c
}

/// Deterministic replay of a config with commands applied before the given ticks.
fn replay(config: &RunConfig, commands: &[(u64, EventKind)]) -> Vec<Vec<LinkMetrics>> {
    let mut sim = Simulation::new(config.clone()).unwrap();
    let mut out = Vec::new();
    while !sim.is_finished() {
        let now = sim.tick();
        for (_, c) in commands.iter().filter(|(k, _)| *k == now) {
            sim.apply_command(*c).unwrap();
        }
        out.push(sim.step().unwrap().metrics);
    }
    out
}

fn random_command(rng: &mut impl Rng, config: &RunConfig) -> EventKind {
    let band = config.scenario.downlink_band;
    match rng.random_range(0..6) {
        0 => EventKind::JammerOn,
        1 => EventKind::JammerOff,
        2 | 3 => EventKind::SetGain { gain_db: rng.random_range(-15.0..15.0) },
        4 => EventKind::SetCenter { center_hz: band.center_hz + rng.random_range(-0.4..0.4) * band.width_hz },
        _ => EventKind::SetMode {
            mode: if rng.random_bool(0.5) { JammerMode::Proactive } else { JammerMode::Reactive },
        },
    }
}

async fn command_sequence(srv: &Server, seq: u64) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seq);
    let config = fixture(0.6, 10);
    let id = srv.start_run(&config, 1.0).await;
    let ws = srv.subscribe(&id, "metrics").await;
    let reader = tokio::spawn(drain(ws));

    let n = rng.random_range(1..=5);
    let mut acked: Vec<(u64, EventKind)> = Vec::new();
    for i in 0..n {
        tokio::time::sleep(Duration::from_millis(rng.random_range(0..100))).await;
        // the first command always has a visible effect
        let cmd = if i == 0 { EventKind::JammerOn } else { random_command(&mut rng, &config) };
        let (status, ack) = srv.post(&format!("/runs/{id}/jammer"), serde_json::to_value(cmd).unwrap()).await;
        if status == 409 {
            break; // run already ended
        }
        assert_eq!(status, 200, "{ack}");
        acked.push((ack["effective_tick"].as_u64().unwrap(), cmd));
    }
    assert_eq!(srv.wait_done(&id).await, "finished");
    let frames = reader.await.unwrap();
    assert_strictly_increasing(&frames);

    // the persisted command log is exactly the acknowledged one
    let log: Vec<AppliedCommand> = srv
        .text(&format!("/runs/{id}/record/commands.jsonl"))
        .await
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let logged: Vec<(u64, EventKind)> = log.iter().map(|c| (c.tick, c.kind)).collect();
    assert_eq!(logged, acked, "seq {seq}");

    let actual = replay(&config, &acked);
    for f in frames.iter().filter(|f| f.kind == FrameKind::Data) {
        assert_eq!(metrics_of(f), actual[f.tick.unwrap() as usize], "seq {seq} tick {:?}", f.tick);
    }
    // Delaying one command by a tick never changes anything before its ack
    // tick, and changes that tick itself whenever the jammer is proactive.
    // Reactive follow reacts only after sensing latency.
    let mut mode = JammerMode::Proactive;
    for (i, (k, cmd)) in acked.iter().enumerate() {
        let mut delayed = acked.clone();
        delayed[i].0 += 1;
        let alt = replay(&config, &delayed);
        let first = actual.iter().zip(&alt).position(|(a, b)| a != b);
        if let Some(first) = first {
            assert!(first as u64 >= *k, "seq {seq} command {i}: effect before ack");
        }
        if let EventKind::SetMode { mode: m } = cmd {
            mode = *m;
        } else if mode == JammerMode::Proactive {
            match first {
                Some(first) => assert_eq!(first as u64, *k, "seq {seq} command {i}"),
                None => assert!(i > 0, "seq {seq}: the leading jammer_on had no effect"),
            }
        }
    }
}

/// `batches` x 10 randomized command sequences, 10 runs at a time.
pub async fn ack_tick_is_the_first_affected_metrics_tick(batches: u64) {
    let srv = std::sync::Arc::new(start(10, 1024).await);
    for batch in 0..batches {
        let tasks: Vec<_> = (0..10u64)
            .map(|i| {
                let srv = srv.clone();
                tokio::spawn(async move { command_sequence(&srv, batch * 10 + i).await })
            })
            .collect();
        for t in tasks {
            t.await.unwrap();
        }
    }
}

pub async fn jammer_on_raises_in_band_power_at_the_ack_tick_and_record_covers_streams() {
    let srv = start(4, 4096).await;
    let config = fixture(1.5, 1);
    let id = srv.start_run(&config, 1.0).await;
    let readers: Vec<_> = ["metrics", "spectrogram", "jammer_log"]
        .into_iter()
        .map(|s| (s, srv.subscribe(&id, s)))
        .collect();
    let mut tasks = BTreeMap::new();
    for (name, fut) in readers {
        tasks.insert(name, tokio::spawn(drain(fut.await)));
    }
    tokio::time::sleep(Duration::from_millis(300)).await;
    let (status, ack) = srv.post(&format!("/runs/{id}/jammer"), json!({ "kind": "jammer_on" })).await;
    assert_eq!(status, 200, "{ack}");
    let k = ack["effective_tick"].as_u64().unwrap();
    assert!((ack["effective_time_s"].as_f64().unwrap() - k as f64 * 0.01).abs() < 1e-12);
    assert_eq!(srv.wait_done(&id).await, "finished");

    let mut streamed = BTreeMap::new();
    for (name, t) in tasks {
        let frames = t.await.unwrap();
        assert_strictly_increasing(&frames);
        assert_eq!(frames.last().unwrap().payload["state"], "finished");
        streamed.insert(name, frames);
    }

    // waterfall: in-band power jumps exactly at k
    let spec = &streamed["spectrogram"];
    let at = |tick: u64| {
        let f = spec.iter().find(|f| f.tick == Some(tick)).expect("frame streamed");
        let bins = decode_bins(&f.payload).unwrap();
        let start = f.payload["freq_start_hz"].as_f64().unwrap();
        let step = f.payload["freq_step_hz"].as_f64().unwrap();
        let jam = config.scenario.jammer.as_ref().unwrap().tuned_band;
        let inband: Vec<f64> = bins
            .iter()
            .enumerate()
            .filter(|(i, _)| jam.contains(start + *i as f64 * step))
            .map(|(_, p)| 10f64.powf(*p as f64 / 10.0))
            .collect();
        10.0 * (inband.iter().sum::<f64>() / inband.len() as f64).log10()
    };
    assert!(at(k) > at(k - 1) + 10.0, "before {} at {}", at(k - 1), at(k));
    assert!((at(k - 1) - at(k - 2)).abs() < 3.0);

    // the persisted record contains every streamed frame
    let rec_spec =
        jamsim::engine::read_spectrogram(&mut srv.bytes(&format!("/runs/{id}/record/spectrogram.bin")).await.as_slice())
            .unwrap();
    for f in spec.iter().filter(|f| f.kind == FrameKind::Data) {
        let r = rec_spec.iter().find(|r| Some(r.tick) == f.tick).expect("frame persisted");
        let want: Vec<f32> = r.frame.power_db.iter().map(|p| *p as f32).collect();
        assert_eq!(decode_bins(&f.payload).unwrap(), want);
    }
    let log: Vec<JammerLogEntry> = srv
        .text(&format!("/runs/{id}/record/jammer_log.jsonl"))
        .await
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    for f in streamed["jammer_log"].iter().filter(|f| f.kind == FrameKind::Data) {
        let e: JammerLogEntry = serde_json::from_value(f.payload.clone()).unwrap();
        assert!(log.contains(&e));
    }
    let csv = srv.text(&format!("/runs/{id}/record/metrics.csv")).await;
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect();
    for f in streamed["metrics"].iter().filter(|f| f.kind == FrameKind::Data) {
        for m in metrics_of(f) {
            let hit = rows.iter().any(|r| {
                r[0].parse::<f64>().unwrap() == m.time_s
                    && r[2] == m.link_id
                    && r[3].parse::<f64>().unwrap() == m.sinr_db
                    && r[5].parse::<f64>().unwrap() == m.throughput_bps
                    && (r[7] == "1") == m.link_status
            });
            assert!(hit, "metrics row for tick {:?} missing", f.tick);
        }
    }
}

pub async fn finished_runs_replay_then_end() {
    let srv = start(4, 1024).await;
    let config = fixture(0.3, 1);
    let id = srv.start_run(&config, 0.0).await;
    assert_eq!(srv.wait_done(&id).await, "finished");
    for stream in StreamKind::ALL {
        let name = serde_json::to_value(stream).unwrap();
        let frames = drain(srv.subscribe(&id, name.as_str().unwrap()).await).await;
        let data = frames.iter().filter(|f| f.kind == FrameKind::Data).count();
        assert_eq!(frames.last().unwrap().kind, FrameKind::End);
        assert_strictly_increasing(&frames);
        if stream != StreamKind::JammerLog {
            assert_eq!(data, 30, "{stream:?}");
        }
    }
}

pub async fn slow_subscriber_gets_gap_markers_not_reordering() {
    let srv = start(4, 8).await;
    let config = fixture(40.0, 1);
    let id = srv.start_run(&config, 20.0).await;
    let ws = srv.subscribe(&id, "spectrogram").await;
    // read nothing until the run is over
    assert_eq!(srv.wait_done(&id).await, "finished");
    let frames = drain(ws).await;
    assert_strictly_increasing(&frames);
    let gaps = frames.iter().filter(|f| f.kind == FrameKind::Gap).count();
    assert!(gaps >= 1, "expected dropped frames with a 8-frame buffer");
    assert!(frames.iter().filter(|f| f.kind == FrameKind::Gap).all(|f| f.tick.is_none()));
    assert!(frames.len() < 4000);
}

pub async fn lifecycle_and_validation_errors() {
    let srv = start(1, 1024).await;
    let config = fixture(0.5, 5);

    let (s, body) = srv.post("/runs", json!({ "config": { "duration_s": 1.0 } })).await;
    assert_eq!(s, 422);
    assert_eq!(body["field"], "config.scenario", "{body}");

    let mut bad = config.clone();
    bad.tick_s = 0.0;
    let (s, body) = srv.post("/runs", json!({ "config": bad })).await;
    assert_eq!(s, 422);
    assert_eq!(body["field"], "config.tick_s");

    let (s, body) = srv.post("/runs", json!({ "config": config, "realtime_factor": -1.0 })).await;
    assert_eq!(s, 422);
    assert_eq!(body["field"], "realtime_factor");

    let id = srv.start_run(&config, 0.5).await;
    let (s, _) = srv.post("/runs", json!({ "config": config })).await;
    assert_eq!(s, 429, "capacity 1 is taken");

    let (s, body) = srv.post(&format!("/runs/{id}/jammer"), json!({ "kind": "set_center", "center_hz": 5e9 })).await;
    assert_eq!(s, 422, "{body}");
    let (s, _) = srv.post(&format!("/runs/{id}/jammer"), json!({ "kind": "explode" })).await;
    assert_eq!(s, 422);
    let (s, _) = srv.post("/runs/nope/jammer", json!({ "kind": "jammer_on" })).await;
    assert_eq!(s, 404);
    assert_eq!(srv.get("/runs/nope").await.0, 404);
    assert_eq!(srv.get(&format!("/runs/{id}/record")).await.0, 409);
    let r = srv.http.get(format!("{}/runs/{id}/stream/bogus", srv.base)).send().await.unwrap();
    assert_eq!(r.status().as_u16(), 404);

    // abort: partial record persisted, later commands rejected
    let r = srv.http.delete(format!("{}/runs/{id}", srv.base)).send().await.unwrap();
    assert_eq!(r.status().as_u16(), 200);
    assert_eq!(srv.wait_done(&id).await, "aborted");
    let (s, _) = srv.post(&format!("/runs/{id}/jammer"), json!({ "kind": "jammer_on" })).await;
    assert_eq!(s, 409);
    let (s, manifest) = srv.get(&format!("/runs/{id}/record")).await;
    assert_eq!(s, 200);
    assert_eq!(manifest["state"], "aborted");
    let names: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"metrics.csv") && names.contains(&"config.json"));
    let csv = srv.text(&format!("/runs/{id}/record/metrics.csv")).await;
    assert!(csv.lines().count() - 1 < 50, "aborted early, not run to completion");
    assert_eq!(srv.get(&format!("/runs/{id}/record/..%2Fsecret")).await.0, 404);

    // capacity frees up once the run ends
    let id2 = srv.start_run(&config, 0.0).await;
    assert_eq!(srv.wait_done(&id2).await, "finished");
    let (s, _) = srv.post(&format!("/runs/{id2}/jammer"), json!({ "kind": "jammer_on" })).await;
    assert_eq!(s, 409, "commands after the end are lifecycle errors");
}

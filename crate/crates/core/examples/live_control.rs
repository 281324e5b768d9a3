//! Start the service in-process, launch a paced run, steer the jammer over
//! HTTP and watch the metrics stream react at the acknowledged tick.
//!
//!     cargo run --example live_control

use futures_util::StreamExt;
use jamsim::engine::RunConfig;
use jamsim::experiments::{fig5, Calibration};
use jamsim::service::{router, AppState, Frame, FrameKind, ServiceConfig};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

#[tokio::main]
async fn main() {
    let data = tempfile::tempdir().unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(AppState::new(ServiceConfig::new(data.path())))).await });

    let mut config = RunConfig::new(fig5::scenario(&Calibration::committed().fig5), 3.0);
    config.baseline_window_s = 0.5;
    let http = reqwest::Client::new();
    let created: Value = http
        .post(format!("http://{addr}/runs"))
        .json(&json!({ "config": config, "realtime_factor": 1.0 }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let id = created["run_id"].as_str().unwrap().to_string();
    println!("run {id}: {} ticks", created["n_ticks"]);

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/runs/{id}/stream/metrics")).await.unwrap();
    let steer = {
        let (http, id) = (http.clone(), id.clone());
        tokio::spawn(async move {
            for (delay_ms, cmd) in [(800, json!({ "kind": "jammer_on" })), (800, json!({ "kind": "set_gain", "gain_db": -10.0 })), (800, json!({ "kind": "jammer_off" }))] {
                tokio::time::sleep(std::time::Duration::from_millis(delay_ms)).await;
                let ack: Value = http.post(format!("http://{addr}/runs/{id}/jammer")).json(&cmd).send().await.unwrap().json().await.unwrap();
                println!(">>> {} acknowledged for tick {}", cmd["kind"], ack["effective_tick"]);
            }
        })
    };

    while let Some(Ok(Message::Text(text))) = ws.next().await {
        let f: Frame = serde_json::from_str(&text).unwrap();
        if f.kind == FrameKind::End {
            println!("end of stream: {}", f.payload["state"]);
            break;
        }
        let tick = f.tick.unwrap_or_default();
        if tick % 20 == 0 {
            let link = &f.payload["links"][0];
            println!("tick {tick:>3}  throughput {:6.1}%", link["throughput_pct"].as_f64().unwrap_or(f64::NAN));
        }
    }
    steer.await.unwrap();
}

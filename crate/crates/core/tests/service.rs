//! HTTP and websocket contracts of the run service, exercised over real sockets.

mod common;

use common::live;

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn ack_tick_is_the_first_affected_metrics_tick() {
    live::ack_tick_is_the_first_affected_metrics_tick(5).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn jammer_on_raises_in_band_power_at_the_ack_tick_and_record_covers_streams() {
    live::jammer_on_raises_in_band_power_at_the_ack_tick_and_record_covers_streams().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn finished_runs_replay_then_end() {
    live::finished_runs_replay_then_end().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn slow_subscriber_gets_gap_markers_not_reordering() {
    live::slow_subscriber_gets_gap_markers_not_reordering().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn lifecycle_and_validation_errors() {
    live::lifecycle_and_validation_errors().await;
}

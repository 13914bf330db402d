#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use tpc::service::{serve_with_shutdown, AppState, ServeError};
use tpc_core::RouteDb;

/// Runs the CLI in-process; returns (status, stdout, stderr).
pub fn run(args: &[&str]) -> (i32, String, String) {
    let (mut o, mut e) = (Vec::new(), Vec::new());
    let code = tpc::run_cli(std::iter::once("tpc").chain(args.iter().copied()), &mut o, &mut e);
    (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
}

pub fn run_ok(args: &[&str]) -> serde_json::Value {
    let (code, out, err) = run(args);
    assert_eq!(code, 0, "tpc {args:?} failed: {err}");
    serde_json::from_str(&out).unwrap_or_else(|e| panic!("stdout of {args:?} is not JSON ({e}): {out}"))
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A two-configuration grid that trains quickly.
pub fn write_tiny_grid(dir: &Path) -> PathBuf {
    let path = dir.join("grid.json");
    let spec = serde_json::json!({
        "output_size": [8],
        "kernel_init": ["glorot_uniform"],
        "recurrent_init": ["glorot_uniform"],
        "dropout_rate": [0.0],
        "output_activation": ["softmax"],
        "optimizer": [{ "adam": { "lr": 0.02 } }],
        "batch_size": [32],
        "num_layers": [1],
        "epochs": [1, 4]
    });
    std::fs::write(&path, spec.to_string()).unwrap();
    path
}

pub struct Server {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<Result<(), ServeError>>,
}

impl Server {
    pub async fn start(db: RouteDb, alpha: f64, flush_to: Option<PathBuf>) -> Server {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let state = Arc::new(AppState::new(db, alpha));
        let (stop, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(serve_with_shutdown(listener, state.clone(), flush_to, async {
            let _ = rx.await;
        }));
        Server { addr, state, stop: Some(stop), task }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    pub async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.task.await.unwrap().unwrap();
    }
}

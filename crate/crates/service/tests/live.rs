use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use eigenskin::mesh::{primitives, MaterialField};
use eigenskin::pipeline::{precompute, PrecomputeConfig, Precomputed, Simulation};
use eigenskin::rig::{chain_weights, LinearRig};
use eigenskin::solver::{ElasticEnergy, SolverConfig};
use eigenskin_service::{serve, Frame, Pacing, ServeOptions, ServerNotice, Setup, PROTOCOL_VERSION};

type Client = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn pre() -> Precomputed {
    let mesh = primitives::jittered(&primitives::box_grid([5, 2, 2], [2.5, 1.0, 1.0]).unwrap(), 0.05, 3).unwrap();
    let rig = LinearRig::lbs_skeleton(chain_weights(&mesh, 2, 0)).unwrap();
    let mat = MaterialField::homogeneous(mesh.n_tets(), 2.0, 3.0, 1.0);
    let cfg = PrecomputeConfig {
        modes: 3,
        clusters: 5,
        seed: 1,
        ..Default::default()
    };
    precompute(&mesh, &mat, &rig, &cfg).unwrap().0
}

fn animation(frames: usize) -> Vec<Vec<f64>> {
    (0..frames)
        .map(|k| {
            let s = k as f64 / frames as f64;
            let mut p = vec![0.0; 24];
            p[12 + 1] = -0.8 * s;
            p[12 + 4] = 0.8 * s;
            p[12 + 3] = 0.2 * s * s;
            p
        })
        .collect()
}

/// Rest up to solver roundoff.
fn at_rest(z: &[f32]) -> bool {
    z.iter().all(|v| v.abs() < 1e-9)
}

fn options(pacing: Pacing) -> ServeOptions {
    ServeOptions {
        addr: "127.0.0.1:0".parse().unwrap(),
        pacing,
    }
}

async fn connect(addr: std::net::SocketAddr) -> (Client, Setup) {
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}")).await.unwrap();
    let setup = match next(&mut ws).await {
        Message::Binary(b) => Setup::decode(&b).unwrap(),
        m => panic!("expected setup, got {m:?}"),
    };
    (ws, setup)
}

async fn next(ws: &mut Client) -> Message {
    tokio::time::timeout(Duration::from_secs(20), ws.next())
        .await
        .expect("timed out waiting for the server")
        .unwrap()
        .unwrap()
}

async fn next_frame(ws: &mut Client) -> Frame {
    loop {
        match next(ws).await {
            Message::Binary(b) => return Frame::decode(&b).unwrap(),
            Message::Text(t) => panic!("unexpected notice {t}"),
            _ => {}
        }
    }
}

async fn send(ws: &mut Client, json: String) {
    ws.send(Message::Text(json.into())).await.unwrap();
}

fn set_params(p: &[f64]) -> String {
    serde_json::json!({"type": "set_params", "p": p}).to_string()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scripted_client_matches_batch_run() {
    let pre = pre();
    let config = SolverConfig {
        energy: ElasticEnergy::Corot,
        ..Default::default()
    };
    let anim = animation(30);

    let mut batch = Simulation::new(&pre, config).unwrap();
    let expected: Vec<Vec<f32>> = anim
        .iter()
        .map(|p| {
            batch.step(p).unwrap();
            batch.state.z.iter().map(|&v| v as f32).collect()
        })
        .collect();
    assert!(expected.last().unwrap().iter().any(|v| v.abs() > 1e-4));

    let server = serve(&pre, config, options(Pacing::Lockstep)).await.unwrap();
    let (mut ws, setup) = connect(server.local_addr()).await;
    assert_eq!(setup.version, PROTOCOL_VERSION);
    assert_eq!(setup.p_dim, 24);
    assert_eq!(setup.n_modes, 3);
    for (k, p) in anim.iter().enumerate() {
        send(&mut ws, set_params(p)).await;
        let frame = next_frame(&mut ws).await;
        assert_eq!(frame.t, k as u64);
        assert_eq!(frame.z, expected[k], "frame {k}");
        assert_eq!(frame.p, p.iter().map(|&v| v as f32).collect::<Vec<_>>());
    }
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn idle_realtime_streams_rest_frames() {
    let pre = pre();
    let config = SolverConfig {
        h: 0.005,
        ..Default::default()
    };
    let server = serve(&pre, config, options(Pacing::RealTime)).await.unwrap();
    let (mut ws, _) = connect(server.local_addr()).await;
    let mut last = None;
    for _ in 0..10 {
        let frame = next_frame(&mut ws).await;
        assert!(at_rest(&frame.z));
        assert_eq!(frame.z.len(), 36);
        if let Some(t) = last {
            assert!(frame.t > t);
        }
        last = Some(frame.t);
    }
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn reset_mid_motion_returns_to_rest() {
    let pre = pre();
    let server = serve(&pre, SolverConfig::default(), options(Pacing::Lockstep)).await.unwrap();
    let (mut ws, _) = connect(server.local_addr()).await;
    let anim = animation(10);
    let mut t = 0;
    for p in &anim {
        send(&mut ws, set_params(p)).await;
        let f = next_frame(&mut ws).await;
        assert_eq!(f.t, t);
        t += 1;
    }
    send(&mut ws, r#"{"type":"reset"}"#.into()).await;
    send(&mut ws, set_params(&[0.0; 24])).await;
    let frame = next_frame(&mut ws).await;
    assert_eq!(frame.t, t);
    assert!(at_rest(&frame.z));
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_messages_get_error_and_keep_connection() {
    let pre = pre();
    let server = serve(&pre, SolverConfig::default(), options(Pacing::Lockstep)).await.unwrap();
    let (mut ws, _) = connect(server.local_addr()).await;
    for bad in [r#"{"type":"teleport"}"#.to_string(), set_params(&[1.0; 5]), "{".into()] {
        send(&mut ws, bad).await;
        match next(&mut ws).await {
            Message::Text(t) => {
                let notice: ServerNotice = serde_json::from_str(&t).unwrap();
                assert!(matches!(notice, ServerNotice::Error { .. }), "{t}");
            }
            m => panic!("expected an error notice, got {m:?}"),
        }
    }
    ws.send(Message::Binary(vec![1, 2, 3].into())).await.unwrap();
    assert!(matches!(next(&mut ws).await, Message::Text(_)));
    // still served
    send(&mut ws, set_params(&[0.0; 24])).await;
    assert_eq!(next_frame(&mut ws).await.t, 0);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn divergence_triggers_warning_and_reset() {
    let pre = pre();
    let server = serve(&pre, SolverConfig::default(), options(Pacing::Lockstep)).await.unwrap();
    let (mut ws, _) = connect(server.local_addr()).await;
    send(&mut ws, set_params(&[1e300; 24])).await;
    match next(&mut ws).await {
        Message::Text(t) => assert!(matches!(serde_json::from_str(&t).unwrap(), ServerNotice::Warning { .. })),
        m => panic!("expected a warning, got {m:?}"),
    }
    let frame = next_frame(&mut ws).await;
    assert!(at_rest(&frame.z));
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn frames_reach_every_client() {
    let pre = pre();
    let server = serve(&pre, SolverConfig::default(), options(Pacing::Lockstep)).await.unwrap();
    let (mut a, _) = connect(server.local_addr()).await;
    let (mut b, _) = connect(server.local_addr()).await;
    let p = animation(5).pop().unwrap();
    send(&mut a, set_params(&p)).await;
    let fa = next_frame(&mut a).await;
    let fb = next_frame(&mut b).await;
    assert_eq!(fa, fb);
    server.shutdown().await;
}

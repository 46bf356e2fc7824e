use std::net::TcpStream;
use std::time::{Duration, Instant};

use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

use phystalk_core::io::AnimFrame;
use phystalk_session::pipeline::prepare;
use phystalk_session::session::{split_frame_message, PROTOCOL_VERSION};
use phystalk_session::synthetic::cube_scene;
use phystalk_session::{start, Hello, ServeOptions, ServerHandle, Session, SessionOptions};
use phystalk_translate::dsl::KindSpec;
use phystalk_translate::SimSpec;

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn server(kind: KindSpec) -> (ServerHandle, Vec<u8>) {
    let spec = SimSpec::single(kind).validated().unwrap();
    let session = Session::new(
        prepare(&spec, cube_scene(1000, 11)).unwrap(),
        SessionOptions::default(),
    )
    .unwrap();
    let frame0 = session.frame0().to_vec();
    (
        start(session, "127.0.0.1:0", ServeOptions::default()).unwrap(),
        frame0,
    )
}

fn connect(h: &ServerHandle) -> (Client, Hello) {
    let (mut ws, _) = tungstenite::connect(format!("ws://{}", h.addr)).unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_mut() {
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    }
    let hello = match ws.read().unwrap() {
        Message::Text(t) => serde_json::from_str::<Hello>(&t).unwrap(),
        m => panic!("expected hello, got {m:?}"),
    };
    (ws, hello)
}

enum Incoming {
    Frame(u64, Vec<u8>),
    Text(String),
}

fn next(ws: &mut Client) -> Incoming {
    loop {
        match ws.read().unwrap() {
            Message::Binary(b) => {
                let (id, block) = split_frame_message(&b).unwrap();
                return Incoming::Frame(id, block.to_vec());
            }
            Message::Text(t) => return Incoming::Text(t),
            _ => {}
        }
    }
}

fn next_frame(ws: &mut Client) -> (u64, Vec<u8>) {
    loop {
        if let Incoming::Frame(id, b) = next(ws) {
            return (id, b);
        }
    }
}

fn send(ws: &mut Client, json: &str) {
    ws.send(Message::Text(json.to_string())).unwrap();
}

#[test]
fn hello_then_frames_with_increasing_ids() {
    let (h, frame0) = server(KindSpec::Rigid);
    let t0 = Instant::now();
    let (mut ws, hello) = connect(&h);
    assert_eq!(hello.kind, "hello");
    assert_eq!(hello.version, PROTOCOL_VERSION);
    assert_eq!(hello.gaussian_count, 1000);
    let (id, block) = next_frame(&mut ws);
    assert!(
        t0.elapsed() < Duration::from_secs(1),
        "first frame after {:?}",
        t0.elapsed()
    );
    let (frame, used) = AnimFrame::decode(&block, hello.gaussian_count).unwrap();
    assert_eq!(used, block.len());
    assert_eq!(frame.len(), 1000);
    if id == 0 {
        assert_eq!(block, frame0);
    }
    let mut last = id;
    for _ in 0..10 {
        let (id, _) = next_frame(&mut ws);
        assert!(id > last);
        last = id;
    }
    h.stop();
}

#[test]
fn push_rises_and_falls_then_reset_restores_frame_zero() {
    let (h, frame0) = server(KindSpec::Elastic);
    let (mut ws, hello) = connect(&h);
    let n = hello.gaussian_count;
    let decode = |b: &[u8]| AnimFrame::decode(b, n).unwrap().0;
    let mean_z = |f: &AnimFrame| f.centers.iter().map(|c| c.z).sum::<f64>() / n as f64;

    // Let the soft body settle a little, then push from the latest pose.
    let mut base = decode(&next_frame(&mut ws).1);
    while base.timestamp < 0.3 {
        base = decode(&next_frame(&mut ws).1);
    }
    send(&mut ws, r#"{"type":"push","dir":[0,0,1],"mag":2.0}"#);
    let (t0, z0) = (base.timestamp, mean_z(&base));

    // Follow the trajectory in simulation time for 0.8 s after the push.
    let mut traj: Vec<(f64, f64)> = Vec::new();
    let deadline = Instant::now() + Duration::from_secs(10);
    while Instant::now() < deadline && traj.last().is_none_or(|&(t, _)| t < t0 + 0.8) {
        let f = decode(&next_frame(&mut ws).1);
        traj.push((f.timestamp, mean_z(&f) - z0));
    }
    let (t_peak, peak) = traj
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert!(peak > 0.05, "peak rise {peak}");
    assert!(t_peak - t0 <= 0.5, "apex {} s after the push", t_peak - t0);
    let after = traj
        .iter()
        .filter(|(t, _)| *t > t_peak)
        .map(|p| p.1)
        .fold(f64::INFINITY, f64::min);
    assert!(
        after < peak - 0.05,
        "did not come back down: {after} vs {peak}"
    );

    // Reset: a later frame is byte-identical to frame 0, with a fresh id.
    let (before, _) = next_frame(&mut ws);
    send(&mut ws, r#"{"type":"reset"}"#);
    let deadline = Instant::now() + Duration::from_secs(5);
    let mut found = false;
    let mut last = before;
    while Instant::now() < deadline && !found {
        let (id, b) = next_frame(&mut ws);
        assert!(id > last);
        last = id;
        found = b == frame0;
    }
    assert!(found, "no frame 0 after reset");
    h.stop();
}

#[test]
fn bad_commands_get_error_notices() {
    let (h, _) = server(KindSpec::Elastic);
    let (mut ws, _) = connect(&h);
    for bad in [
        r#"{"type":"explode"}"#,
        r#"not json"#,
        r#"{"type":"set","path":"world.fps","value":60}"#,
        r#"{"type":"push","dir":[0,0,0],"mag":1}"#,
    ] {
        send(&mut ws, bad);
        let deadline = Instant::now() + Duration::from_secs(5);
        let text = loop {
            assert!(Instant::now() < deadline, "no reply to {bad}");
            if let Incoming::Text(t) = next(&mut ws) {
                break t;
            }
        };
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["type"], "error", "{text}");
        assert!(!v["message"].as_str().unwrap().is_empty());
    }
    // Still streaming.
    next_frame(&mut ws);
    h.stop();
}

fn set_timeout(ws: &mut Client, d: Duration) {
    if let MaybeTlsStream::Plain(s) = ws.get_mut() {
        s.set_read_timeout(Some(d)).unwrap();
    }
}

/// Ids of every frame that arrives before the stream goes quiet for `quiet`.
fn drain(ws: &mut Client, quiet: Duration) -> Vec<u64> {
    set_timeout(ws, quiet);
    let mut ids = Vec::new();
    loop {
        match ws.read() {
            Ok(Message::Binary(b)) => ids.push(split_frame_message(&b).unwrap().0),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if e.kind() == std::io::ErrorKind::WouldBlock => break,
            Err(e) => panic!("{e}"),
        }
    }
    set_timeout(ws, Duration::from_secs(5));
    ids
}

#[test]
fn pause_holds_and_resume_continues() {
    let (h, _) = server(KindSpec::Rigid);
    let (mut ws, _) = connect(&h);
    let (first, _) = next_frame(&mut ws);
    send(&mut ws, r#"{"type":"pause"}"#);
    let in_flight = drain(&mut ws, Duration::from_millis(300));
    assert!(
        drain(&mut ws, Duration::from_millis(300)).is_empty(),
        "frames while paused"
    );
    let held = in_flight.last().copied().unwrap_or(first);
    send(&mut ws, r#"{"type":"resume"}"#);
    assert!(next_frame(&mut ws).0 > held);
    h.stop();
}

#[test]
fn many_clients_share_one_simulation() {
    let (h, _) = server(KindSpec::Rigid);
    let (mut a, _) = connect(&h);
    let (mut b, _) = connect(&h);
    let (ia, _) = next_frame(&mut a);
    let (ib, _) = next_frame(&mut b);
    // A command from one client is visible to the other.
    send(&mut a, r#"{"type":"pause"}"#);
    std::thread::sleep(Duration::from_millis(300));
    drop(a);
    let (mut c, _) = connect(&h);
    let (held, _) = next_frame(&mut c);
    assert!(held >= ia.max(ib));
    send(&mut c, r#"{"type":"resume"}"#);
    assert!(next_frame(&mut b).0 > ib);
    h.stop();
}

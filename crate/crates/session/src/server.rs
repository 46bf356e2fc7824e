//! WebSocket streaming server.
//!
//! One loop thread owns the session. Clients each get a thread that feeds
//! commands into a queue and sends whichever frame is newest when it is
//! ready to write, so a slow client skips frames instead of stalling the loop.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use tungstenite::{Error as WsError, Message};

use crate::session::{Command, Notice, Session};

#[derive(Clone, Debug)]
pub struct ServeOptions {
    /// Hold the loop to the spec's frame rate. Off, it runs flat out.
    pub pace: bool,
    /// How long a client thread waits for input before checking for frames.
    pub poll: Duration,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            pace: true,
            poll: Duration::from_millis(5),
        }
    }
}

struct Envelope {
    command: Command,
    reply: Sender<String>,
}

type Frame = (u64, Arc<Vec<u8>>);

struct Shared {
    hello: String,
    latest: Mutex<Option<Frame>>,
    shutdown: AtomicBool,
    published: AtomicU64,
    /// Nanoseconds spent in step + skin + encode.
    busy_ns: AtomicU64,
}

/// Loop timing, for logs and budget checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopStats {
    pub frames: u64,
    pub busy: Duration,
}

impl LoopStats {
    /// Frames per second of loop work, ignoring pacing sleeps.
    pub fn throughput(&self) -> f64 {
        self.frames as f64 / self.busy.as_secs_f64().max(1e-12)
    }
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    shared: Arc<Shared>,
    loop_thread: Option<JoinHandle<()>>,
    accept_thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn stats(&self) -> LoopStats {
        LoopStats {
            frames: self.shared.published.load(Ordering::Relaxed),
            busy: Duration::from_nanos(self.shared.busy_ns.load(Ordering::Relaxed)),
        }
    }

    /// Block until the loop ends (it only ends on `stop`).
    pub fn join(mut self) {
        if let Some(t) = self.loop_thread.take() {
            let _ = t.join();
        }
    }

    pub fn stop(mut self) -> LoopStats {
        self.shutdown();
        self.stats()
    }

    fn shutdown(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        for t in [self.loop_thread.take(), self.accept_thread.take()]
            .into_iter()
            .flatten()
        {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Bind `addr` and start the session loop and the accept loop.
pub fn start(
    session: Session,
    addr: impl ToSocketAddrs,
    options: ServeOptions,
) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let hello = serde_json::to_string(&session.hello()).expect("hello serializes");
    let shared = Arc::new(Shared {
        hello,
        latest: Mutex::new(None),
        shutdown: AtomicBool::new(false),
        published: AtomicU64::new(0),
        busy_ns: AtomicU64::new(0),
    });
    let (tx, rx) = mpsc::channel::<Envelope>();

    let loop_shared = Arc::clone(&shared);
    let pace = options.pace;
    let loop_thread = thread::Builder::new()
        .name("session-loop".into())
        .spawn(move || session_loop(session, rx, &loop_shared, pace))?;

    let accept_shared = Arc::clone(&shared);
    let poll = options.poll;
    let accept_thread = thread::Builder::new()
        .name("session-accept".into())
        .spawn(move || accept_loop(listener, tx, accept_shared, poll))?;

    log::info!("serving on ws://{addr}");
    Ok(ServerHandle {
        addr,
        shared,
        loop_thread: Some(loop_thread),
        accept_thread: Some(accept_thread),
    })
}

/// Serve until the process is stopped.
pub fn serve(session: Session, addr: impl ToSocketAddrs, options: ServeOptions) -> io::Result<()> {
    start(session, addr, options)?.join();
    Ok(())
}

fn session_loop(mut session: Session, commands: Receiver<Envelope>, shared: &Shared, pace: bool) {
    let period = Duration::from_secs_f64(1.0 / session.fps());
    let mut next_deadline = Instant::now();
    let mut failed = false;
    while !shared.shutdown.load(Ordering::SeqCst) {
        // Everything queued before this frame's step, nothing after.
        while let Ok(env) = commands.try_recv() {
            if let Err(e) = session.apply(env.command) {
                let notice = Notice::Error { message: e.0 };
                let _ = env
                    .reply
                    .send(serde_json::to_string(&notice).expect("notice serializes"));
            } else {
                failed = false;
            }
        }
        if failed || session.is_paused() {
            thread::sleep(Duration::from_millis(2));
            next_deadline = Instant::now();
            continue;
        }
        let t0 = Instant::now();
        match session.tick() {
            Ok(Some((id, msg))) => {
                *shared.latest.lock().expect("frame slot") = Some((id, Arc::new(msg)));
                shared.published.fetch_add(1, Ordering::Relaxed);
                shared
                    .busy_ns
                    .fetch_add(t0.elapsed().as_nanos() as u64, Ordering::Relaxed);
            }
            Ok(None) => {}
            Err(e) => {
                // Keep serving the last good frame; a reset recovers.
                log::error!("{e}");
                failed = true;
            }
        }
        if pace {
            next_deadline += period;
            let now = Instant::now();
            if next_deadline > now {
                thread::sleep(next_deadline - now);
            } else {
                next_deadline = now;
            }
        }
    }
}

fn accept_loop(
    listener: TcpListener,
    commands: Sender<Envelope>,
    shared: Arc<Shared>,
    poll: Duration,
) {
    let mut clients = Vec::new();
    while !shared.shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let tx = commands.clone();
                let shared = Arc::clone(&shared);
                let spawned =
                    thread::Builder::new()
                        .name(format!("client-{peer}"))
                        .spawn(move || {
                            if let Err(e) = client_loop(stream, tx, &shared, poll) {
                                log::info!("client {peer}: {e}");
                            }
                        });
                match spawned {
                    Ok(t) => clients.push(t),
                    Err(e) => log::error!("cannot start client thread: {e}"),
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(10))
            }
            Err(e) => log::warn!("accept: {e}"),
        }
        clients.retain(|t| !t.is_finished());
    }
    for t in clients {
        let _ = t.join();
    }
}

fn client_loop(
    stream: TcpStream,
    commands: Sender<Envelope>,
    shared: &Shared,
    poll: Duration,
) -> Result<(), WsError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream.try_clone()?).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => {
            WsError::Io(io::ErrorKind::WouldBlock.into())
        }
    })?;
    ws.send(Message::Text(shared.hello.clone()))?;
    stream.set_read_timeout(Some(poll))?;
    let (reply_tx, reply_rx) = mpsc::channel();
    let mut last_sent: Option<u64> = None;
    while !shared.shutdown.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Text(text)) => match Command::parse(&text) {
                Ok(command) => {
                    let env = Envelope {
                        command,
                        reply: reply_tx.clone(),
                    };
                    if commands.send(env).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let notice = Notice::Error { message: e.0 };
                    ws.send(Message::Text(
                        serde_json::to_string(&notice).expect("notice serializes"),
                    ))?;
                }
            },
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(WsError::Io(e))
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                ) => {}
            Err(WsError::ConnectionClosed) | Err(WsError::AlreadyClosed) => break,
            Err(e) => return Err(e),
        }
        while let Ok(text) = reply_rx.try_recv() {
            ws.send(Message::Text(text))?;
        }
        let latest = shared.latest.lock().expect("frame slot").clone();
        if let Some((id, bytes)) = latest {
            if last_sent != Some(id) {
                ws.send(Message::Binary(bytes.to_vec()))?;
                last_sent = Some(id);
            }
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    Ok(())
}

//! Websocket transport for live sessions. One client at a time; the session
//! survives disconnects and resumes when a client reconnects.

use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use hocd_core::harness::{write_run, LiveSession, ServerMessage};
use tungstenite::handshake::server::{Request, Response};
use tungstenite::{Message, WebSocket};

pub struct ServeOptions {
    pub speed: f64,
    pub output_dir: PathBuf,
    /// Stop after the first completed session.
    pub once: bool,
}

/// Session parameters a client may pick through the URL query string.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct QueryOverrides {
    pub scenario: Option<String>,
    pub mode: Option<String>,
    pub seed: Option<u64>,
}

pub fn parse_query(query: &str) -> QueryOverrides {
    let mut q = QueryOverrides::default();
    for pair in query.split('&') {
        let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
        match k {
            "scenario" if !v.is_empty() => q.scenario = Some(v.to_string()),
            "mode" if !v.is_empty() => q.mode = Some(v.to_string()),
            "seed" => q.seed = v.parse().ok(),
            _ => {}
        }
    }
    q
}

enum Pump {
    Open,
    Closed,
}

fn accept(listener: &TcpListener) -> Result<(WebSocket<TcpStream>, QueryOverrides)> {
    loop {
        let (stream, peer) = listener.accept()?;
        stream.set_nodelay(true).ok();
        let mut query = QueryOverrides::default();
        let callback = |req: &Request, resp: Response| {
            query = parse_query(req.uri().query().unwrap_or(""));
            Ok(resp)
        };
        match tungstenite::accept_hdr(stream, callback) {
            Ok(ws) => {
                log::info!("client {peer} connected");
                ws.get_ref().set_nonblocking(true)?;
                return Ok((ws, query));
            }
            Err(e) => log::warn!("handshake with {peer} failed: {e}"),
        }
    }
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMessage) -> Result<(), tungstenite::Error> {
    match ws.send(Message::text(msg.to_json())) {
        Ok(()) => Ok(()),
        Err(tungstenite::Error::Io(e)) if e.kind() == ErrorKind::WouldBlock => loop {
            match ws.flush() {
                Ok(()) => return Ok(()),
                Err(tungstenite::Error::Io(e)) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_micros(200)),
                Err(e) => return Err(e),
            }
        },
        Err(e) => Err(e),
    }
}

fn pump(ws: &mut WebSocket<TcpStream>, session: &mut LiveSession) -> Pump {
    loop {
        match ws.read() {
            Ok(Message::Text(text)) => {
                if let Some(reply) = session.handle_text(text.as_str()) {
                    if send(ws, &reply).is_err() {
                        return Pump::Closed;
                    }
                }
            }
            Ok(Message::Binary(_)) => {
                let reply = ServerMessage::Error { message: "binary frames are not supported".into() };
                if send(ws, &reply).is_err() {
                    return Pump::Closed;
                }
            }
            Ok(Message::Close(_)) => return Pump::Closed,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if e.kind() == ErrorKind::WouldBlock => return Pump::Open,
            Err(_) => return Pump::Closed,
        }
    }
}

/// Serves sessions built by `make` until a session completes (with `once`)
/// or forever.
pub fn serve<F>(listener: TcpListener, mut make: F, opts: &ServeOptions) -> Result<()>
where
    F: FnMut(&QueryOverrides) -> Result<LiveSession>,
{
    loop {
        let (ws, query) = accept(&listener)?;
        let mut session = make(&query)?;
        let period = Duration::from_secs_f64(session.simulation().config().dt / opts.speed);
        let mut connected = Some(ws);
        loop {
            let ws_ref = match connected.as_mut() {
                Some(ws) => ws,
                None => {
                    let (ws, _) = accept(&listener)?;
                    connected = Some(ws);
                    connected.as_mut().expect("just connected")
                }
            };
            if !session.is_running() && !session.is_finished() {
                session.set_connected(true);
                if send(ws_ref, &session.hello()).is_err() {
                    session.set_connected(false);
                    connected = None;
                    continue;
                }
            }
            let outcome = run_connected(ws_ref, &mut session, period);
            match outcome {
                Ok(true) => break,
                Ok(false) => {
                    log::info!("client disconnected; session paused at t = {:.2} s", session.simulation().time());
                    session.set_connected(false);
                    connected = None;
                }
                Err(e) => {
                    let _ = send(ws_ref, &ServerMessage::Error { message: e.to_string() });
                    break;
                }
            }
        }
        let out = session.finish()?;
        write_run(&opts.output_dir, &out).with_context(|| format!("writing {}", opts.output_dir.display()))?;
        if let Some(ws) = connected.as_mut() {
            let _ = send(ws, &LiveSession::end_message(&out));
            let _ = ws.close(None);
            for _ in 0..50 {
                match ws.flush() {
                    Ok(()) => break,
                    Err(tungstenite::Error::Io(e)) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(2)),
                    Err(_) => break,
                }
            }
        }
        println!("session finished: {}", LiveSession::end_message(&out).to_json());
        if opts.once {
            return Ok(());
        }
    }
}

/// Returns `Ok(true)` when the episode ended and `Ok(false)` on disconnect.
fn run_connected(ws: &mut WebSocket<TcpStream>, session: &mut LiveSession, period: Duration) -> Result<bool> {
    let mut next = Instant::now();
    loop {
        if let Pump::Closed = pump(ws, session) {
            return Ok(false);
        }
        if session.is_finished() {
            return Ok(true);
        }
        if !session.is_running() {
            std::thread::sleep(Duration::from_millis(2));
            next = Instant::now();
            continue;
        }
        if let Some(frame) = session.tick()? {
            if send(ws, &frame).is_err() {
                return Ok(false);
            }
        }
        next += period;
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        } else if now - next > Duration::from_millis(250) {
            next = now;
        }
    }
}

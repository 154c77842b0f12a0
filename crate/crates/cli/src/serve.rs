//! WebSocket transport for [`LiveSession`].

use candere::harness::session::{LiveSession, ServerMessage};
use std::io;
use std::net::{TcpListener, TcpStream};
use std::time::Duration;
use tungstenite::{Message, WebSocket};

#[derive(Clone, Debug)]
pub struct ServeOptions {
    /// Delay between frames while the session runs unpaused.
    pub frame_interval: Duration,
    /// Stop after this many client connections have ended.
    pub max_clients: Option<usize>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            frame_interval: Duration::from_millis(200),
            max_clients: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ServeSummary {
    pub clients: usize,
    pub frames_sent: u64,
    pub finished: bool,
}

type Socket = WebSocket<TcpStream>;

fn send(ws: &mut Socket, msgs: Vec<ServerMessage>, summary: &mut ServeSummary) -> tungstenite::Result<()> {
    for m in msgs {
        if matches!(m, ServerMessage::Frame { .. }) {
            summary.frames_sent += 1;
        }
        if matches!(m, ServerMessage::Done { .. }) {
            summary.finished = true;
        }
        ws.send(Message::text(m.to_json()))?;
    }
    Ok(())
}

fn would_block(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

/// Serves one client at a time. The session outlives connections: a
/// disconnect pauses training and the next client picks up where the
/// last one left off. Returns once training is done and the client has
/// gone, or after `max_clients` connections.
pub fn serve(listener: &TcpListener, session: &mut LiveSession, options: &ServeOptions) -> io::Result<ServeSummary> {
    let mut summary = ServeSummary::default();
    let mut started = false;
    for stream in listener.incoming() {
        let stream = stream?;
        let mut ws = match tungstenite::accept(stream) {
            Ok(ws) => ws,
            Err(_) => continue,
        };
        if !started {
            started = true;
            let first = session.next_frame().map_err(io::Error::other)?;
            if send(&mut ws, first, &mut summary).is_err() {
                session.disconnect();
            }
        }
        run_client(&mut ws, session, options, &mut summary)?;
        session.disconnect();
        summary.clients += 1;
        if session.is_done() || options.max_clients.is_some_and(|m| summary.clients >= m) {
            break;
        }
    }
    Ok(summary)
}

fn run_client(
    ws: &mut Socket,
    session: &mut LiveSession,
    options: &ServeOptions,
    summary: &mut ServeSummary,
) -> io::Result<()> {
    let poll = options.frame_interval.max(Duration::from_millis(1));
    loop {
        let timeout = if session.wants_frames() { poll } else { Duration::from_millis(500) };
        ws.get_ref().set_read_timeout(Some(timeout))?;
        match ws.read() {
            Ok(Message::Text(text)) => {
                let replies = session.handle_text(text.as_str()).map_err(io::Error::other)?;
                if send(ws, replies, summary).is_err() {
                    return Ok(());
                }
            }
            Ok(Message::Binary(_)) => {
                let reply = session.handle_text("<binary>").map_err(io::Error::other)?;
                if send(ws, reply, summary).is_err() {
                    return Ok(());
                }
            }
            Ok(Message::Close(_)) => {
                let _ = ws.flush();
                return Ok(());
            }
            Ok(_) => {}
            Err(e) if would_block(&e) => {}
            Err(_) => return Ok(()),
        }
        if session.wants_frames() {
            let msgs = session.next_frame().map_err(io::Error::other)?;
            if send(ws, msgs, summary).is_err() {
                return Ok(());
            }
        }
    }
}

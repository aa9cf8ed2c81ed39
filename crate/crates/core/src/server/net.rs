//! TCP transport: one JSON message per line in each direction.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::wire::{WireBody, WireMessage};
use super::GameService;
use crate::engine::{GameConfig, PlayerId};

const TICK: Duration = Duration::from_millis(200);

type Seats = Arc<Mutex<HashMap<(String, PlayerId), Sender<String>>>>;

pub struct ServerHandle {
    addr: SocketAddr,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }
}

/// Binds `addr` and serves until the process exits.
pub fn serve(service: Arc<GameService>, addr: impl ToSocketAddrs) -> io::Result<()> {
    let listener = TcpListener::bind(addr)?;
    log::info!("listening on {}", listener.local_addr()?);
    run(service, listener);
    Ok(())
}

/// Serves on background threads.
pub fn spawn(service: Arc<GameService>, listener: TcpListener) -> io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    thread::spawn(move || run(service, listener));
    Ok(ServerHandle { addr })
}

fn run(service: Arc<GameService>, listener: TcpListener) {
    let seats: Seats = Arc::default();
    {
        let seats = seats.clone();
        service.set_router(Arc::new(move |session, out| {
            let map = seats.lock().expect("seat lock");
            if let Some(tx) = map.get(&(session.to_string(), out.to)) {
                let _ = tx.send(out.msg.to_line());
            }
        }));
    }
    {
        let service = service.clone();
        thread::spawn(move || loop {
            thread::sleep(TICK);
            service.tick(Instant::now());
        });
    }
    for stream in listener.incoming() {
        match stream {
            Ok(stream) => {
                let service = service.clone();
                let seats = seats.clone();
                thread::spawn(move || {
                    if let Err(e) = connection(service, seats, stream) {
                        log::debug!("connection closed: {e}");
                    }
                });
            }
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
}

fn connection(service: Arc<GameService>, seats: Seats, stream: TcpStream) -> io::Result<()> {
    let (tx, rx) = mpsc::channel::<String>();
    let mut writer = stream.try_clone()?;
    thread::spawn(move || {
        for line in rx {
            if writer.write_all(line.as_bytes()).and_then(|_| writer.write_all(b"\n")).is_err() {
                break;
            }
        }
    });
    let mut bound: Option<(String, PlayerId)> = None;
    let reply = |msg: WireMessage| {
        let _ = tx.send(msg.to_line());
    };
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let msg = match WireMessage::from_line(&line) {
            Ok(m) => m,
            Err(e) => {
                reply(WireMessage::error(format!("malformed message: {e}")));
                continue;
            }
        };
        match msg.body {
            WireBody::Create { seats: plan, seed } => {
                let seed = seed.unwrap_or_else(rand::random);
                match service.create_session(GameConfig::seeded(seed), &plan) {
                    Ok(c) => reply(WireMessage {
                        body: WireBody::Created { tokens: c.tokens },
                        session: c.session,
                        player: None,
                    }),
                    Err(e) => reply(WireMessage::error(e.to_string())),
                }
            }
            WireBody::Join { token } => {
                if bound.is_some() {
                    reply(WireMessage::error("already joined"));
                    continue;
                }
                // Register before joining so the initial state is routed here.
                match service.join_with(&token, |session, player| {
                    seats.lock().expect("seat lock").insert((session.to_string(), player), tx.clone());
                }) {
                    Ok((session, player)) => bound = Some((session, player)),
                    Err(e) => reply(WireMessage::error(e.to_string())),
                }
            }
            body => {
                let Some((session, player)) = &bound else {
                    reply(WireMessage::error("join first"));
                    continue;
                };
                if msg.player.is_some_and(|p| p != *player) || (!msg.session.is_empty() && msg.session != *session) {
                    reply(WireMessage::error("not your seat"));
                    continue;
                }
                if let Err(e) = service.handle(session, *player, body) {
                    reply(WireMessage::error(e.to_string()));
                }
            }
        }
    }
    if let Some(key) = bound {
        seats.lock().expect("seat lock").remove(&key);
    }
    Ok(())
}

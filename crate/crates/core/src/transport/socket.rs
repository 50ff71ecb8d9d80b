use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info, warn};

use super::{
    decode, encode, AuditEvent, Backend, BidCollector, Message, PriceMessage, StopMessage,
};
use crate::agents::UeAgent;
use crate::error::{Error, Result};

/// How long the BS waits for a missing bid (and for registration).
pub const DEFAULT_DEADLINE: Duration = Duration::from_secs(5);

const ACCEPT_POLL: Duration = Duration::from_millis(2);

enum Inbound {
    Line { user_id: usize, message: Message },
    Invalid { user_id: usize, error: String },
    Closed { user_id: usize },
}

/// A bound listener waiting for UEs to register.
pub struct SocketServer {
    listener: TcpListener,
}

impl SocketServer {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        Ok(Self { listener })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Waits until `users` distinct ids have sent `hello`.
    pub fn accept(self, users: usize, deadline: Duration) -> Result<SocketBackend> {
        if users == 0 {
            return Err(Error::invalid("users", "at least one user is required"));
        }
        self.listener.set_nonblocking(true)?;
        let (tx, rx) = mpsc::channel();
        let mut writers: Vec<Option<TcpStream>> = (0..users).map(|_| None).collect();
        let mut registered = 0;
        let until = Instant::now() + deadline;

        while registered < users {
            let stream = match self.listener.accept() {
                Ok((stream, peer)) => {
                    debug!("connection from {peer}");
                    stream
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if Instant::now() >= until {
                        return Err(Error::Timeout {
                            round: 0,
                            missing: users - registered,
                        });
                    }
                    thread::sleep(ACCEPT_POLL);
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            stream.set_nonblocking(false)?;
            stream.set_nodelay(true)?;
            let remaining = until.saturating_duration_since(Instant::now());
            stream.set_read_timeout(Some(remaining.max(Duration::from_millis(1))))?;

            let mut reader = BufReader::new(stream.try_clone()?);
            let mut line = String::new();
            let id = match reader.read_line(&mut line) {
                Ok(0) => continue,
                Ok(_) => match decode(line.as_bytes()) {
                    Ok(Message::Hello { id }) => id,
                    Ok(other) => {
                        warn!("expected hello, got {other:?}");
                        continue;
                    }
                    Err(e) => {
                        warn!("bad hello: {e}");
                        continue;
                    }
                },
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    continue
                }
                Err(e) => return Err(e.into()),
            };
            if id >= users {
                return Err(Error::Protocol(format!("hello from id {id} with only {users} users")));
            }
            if writers[id].is_some() {
                return Err(Error::Protocol(format!("user id {id} registered twice")));
            }
            stream.set_read_timeout(None)?;
            info!("user {id} registered");
            spawn_reader(id, reader, tx.clone());
            writers[id] = Some(stream);
            registered += 1;
        }

        Ok(SocketBackend {
            writers: writers.into_iter().flatten().collect(),
            inbox: rx,
            deadline,
            events: Vec::new(),
        })
    }
}

fn spawn_reader(user_id: usize, mut reader: BufReader<TcpStream>, tx: Sender<Inbound>) {
    thread::spawn(move || {
        let mut line = Vec::new();
        loop {
            line.clear();
            let event = match reader.read_until(b'\n', &mut line) {
                Ok(0) | Err(_) => Inbound::Closed { user_id },
                Ok(_) => match decode(&line) {
                    Ok(message) => Inbound::Line { user_id, message },
                    Err(e) => Inbound::Invalid {
                        user_id,
                        error: e.to_string(),
                    },
                },
            };
            let closed = matches!(event, Inbound::Closed { .. });
            if tx.send(event).is_err() || closed {
                break;
            }
        }
    });
}

/// BS side of the TCP deployment: one connection per registered UE.
///
/// Bids are read concurrently but applied only once all `M` bids of a round
/// have arrived, in user-id order.
pub struct SocketBackend {
    writers: Vec<TcpStream>,
    inbox: Receiver<Inbound>,
    deadline: Duration,
    events: Vec<AuditEvent>,
}

impl SocketBackend {
    /// How long [`Backend::collect_bids`] waits for a round.
    pub fn set_deadline(&mut self, deadline: Duration) {
        self.deadline = deadline;
    }

    fn broadcast(&mut self, message: Message) -> Result<()> {
        let line = encode(&message)?;
        for (user_id, stream) in self.writers.iter_mut().enumerate() {
            debug!("-> {user_id}: {}", String::from_utf8_lossy(&line).trim_end());
            stream.write_all(&line)?;
            stream.flush()?;
        }
        Ok(())
    }
}

impl Backend for SocketBackend {
    fn users(&self) -> usize {
        self.writers.len()
    }

    fn collect_bids(&mut self, n: u64) -> Result<Vec<f64>> {
        let mut collector = BidCollector::new(self.writers.len(), n);
        let mut arrived = Vec::with_capacity(self.writers.len());
        let until = Instant::now() + self.deadline;
        while !collector.is_complete() {
            let remaining = until.saturating_duration_since(Instant::now());
            let event = match self.inbox.recv_timeout(remaining) {
                Ok(event) => event,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::Timeout {
                        round: n,
                        missing: collector.missing(),
                    })
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Protocol("all UE connections closed".into()))
                }
            };
            match event {
                Inbound::Line {
                    user_id,
                    message: Message::Bid(bid),
                } => {
                    debug!("<- {user_id}: {bid:?}");
                    if bid.user_id != user_id {
                        return Err(Error::Protocol(format!(
                            "connection of user {user_id} sent a bid as user {}",
                            bid.user_id
                        )));
                    }
                    collector.add(bid)?;
                    arrived.push(bid.user_id);
                }
                Inbound::Line { user_id, message } => {
                    return Err(Error::Protocol(format!(
                        "unexpected {message:?} from user {user_id}"
                    )))
                }
                Inbound::Invalid { user_id, error } => {
                    return Err(Error::Parse(format!("from user {user_id}: {error}")))
                }
                Inbound::Closed { user_id } => {
                    return Err(Error::Protocol(format!("user {user_id} disconnected")))
                }
            }
        }
        arrived.sort_unstable();
        self.events.extend(
            arrived
                .into_iter()
                .map(|user_id| AuditEvent::BidConsumed { user_id, n }),
        );
        collector.finish()
    }

    fn send_price(&mut self, message: PriceMessage) -> Result<()> {
        self.events.push(AuditEvent::PriceSent { n: message.n });
        self.broadcast(message.into())
    }

    fn send_stop(&mut self, message: StopMessage) -> Result<()> {
        self.events.push(AuditEvent::StopSent { n: message.n });
        self.broadcast(message.into())
    }

    fn audit_log(&self) -> &[AuditEvent] {
        &self.events
    }
}

/// What a UE learned by the end of a socket run.
#[derive(Debug, Clone, PartialEq)]
pub struct UeOutcome {
    pub user_id: usize,
    /// `w_i / p` at the stop price.
    pub power: f64,
    pub price: f64,
    pub final_bid: f64,
    /// Every price and stop message received, in order.
    pub received: Vec<Message>,
}

/// Runs one UE against a BS at `addr` until it receives a stop.
///
/// `timeout` bounds the connect and every wait for the next price.
pub fn run_ue(addr: impl ToSocketAddrs, mut agent: UeAgent, timeout: Duration) -> Result<UeOutcome> {
    let target = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| Error::invalid("addr", "address resolved to nothing"))?;
    let mut stream = TcpStream::connect_timeout(&target, timeout)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(timeout))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let user_id = agent.user_id();

    let send = |stream: &mut TcpStream, message: Message| -> Result<()> {
        let line = encode(&message)?;
        debug!("ue {user_id} -> {}", String::from_utf8_lossy(&line).trim_end());
        stream.write_all(&line)?;
        Ok(())
    };
    send(&mut stream, Message::Hello { id: user_id })?;
    send(&mut stream, agent.current_message().into())?;

    let mut received = Vec::new();
    let mut line = Vec::new();
    loop {
        line.clear();
        let read = reader.read_until(b'\n', &mut line).map_err(|e| {
            if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) {
                Error::Timeout {
                    round: agent.round(),
                    missing: 1,
                }
            } else {
                e.into()
            }
        })?;
        if read == 0 {
            return Err(Error::Protocol("BS closed the connection before stop".into()));
        }
        let message = decode(&line)?;
        debug!("ue {user_id} <- {message:?}");
        received.push(message);
        match message {
            Message::Price(PriceMessage { n, p }) => {
                let bid = agent.on_price(p, n)?;
                send(&mut stream, bid.into())?;
            }
            Message::Stop(StopMessage { p, .. }) => {
                return Ok(UeOutcome {
                    user_id,
                    power: agent.allocation(p),
                    price: p,
                    final_bid: agent.current_bid(),
                    received,
                });
            }
            other => {
                return Err(Error::Protocol(format!("UE received unexpected {other:?}")));
            }
        }
    }
}

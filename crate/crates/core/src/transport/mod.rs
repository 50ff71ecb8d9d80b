//! Wire messages of the bid/price protocol and the backends that carry them.
//!
//! Every message is one line of UTF-8 JSON terminated by `\n`:
//!
//! ```text
//! {"t":"hello","id":0}
//! {"t":"bid","id":0,"n":3,"w":12.5}
//! {"t":"price","n":3,"p":1.25}
//! {"t":"stop","n":9,"p":1.0}
//! ```
//!
//! Reals use the shortest representation that parses back to the same `f64`
//! (never more than 17 significant digits), so a round trip is value-exact.

mod inproc;
mod socket;

use serde::{Deserialize, Serialize};

use crate::agents::{BsAgent, BsDecision};
use crate::error::{Error, Result};

pub use inproc::InProcessBackend;
pub use socket::{run_ue, SocketBackend, SocketServer, UeOutcome, DEFAULT_DEADLINE};

/// `w_i(n)` sent by UE `user_id`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidMessage {
    #[serde(rename = "id")]
    pub user_id: usize,
    pub n: u64,
    pub w: f64,
}

/// `p(n)` broadcast by the BS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceMessage {
    pub n: u64,
    pub p: f64,
}

/// Final price; each UE allocates `w_i / p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopMessage {
    pub n: u64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
pub enum Message {
    Hello {
        id: usize,
    },
    Bid(BidMessage),
    Price(PriceMessage),
    Stop(StopMessage),
}

impl Message {
    fn validate(&self) -> Result<()> {
        match *self {
            Message::Hello { .. } => Ok(()),
            Message::Bid(BidMessage { w, .. }) if !(w.is_finite() && w >= 0.0) => {
                Err(Error::Parse(format!("bid w = {w} must be finite and nonnegative")))
            }
            Message::Price(PriceMessage { p, .. }) | Message::Stop(StopMessage { p, .. })
                if !(p.is_finite() && p > 0.0) =>
            {
                Err(Error::Parse(format!("price p = {p} must be finite and positive")))
            }
            _ => Ok(()),
        }
    }
}

impl From<BidMessage> for Message {
    fn from(m: BidMessage) -> Self {
        Message::Bid(m)
    }
}

impl From<PriceMessage> for Message {
    fn from(m: PriceMessage) -> Self {
        Message::Price(m)
    }
}

impl From<StopMessage> for Message {
    fn from(m: StopMessage) -> Self {
        Message::Stop(m)
    }
}

/// One LF-terminated JSON line.
pub fn encode(message: &Message) -> Result<Vec<u8>> {
    message.validate()?;
    let mut line = serde_json::to_vec(message).map_err(|e| Error::Parse(e.to_string()))?;
    line.push(b'\n');
    Ok(line)
}

/// Parses one line, with or without its trailing LF.
pub fn decode(line: &[u8]) -> Result<Message> {
    let body = line.strip_suffix(b"\n").unwrap_or(line);
    let body = body.strip_suffix(b"\r").unwrap_or(body);
    if body.contains(&b'\n') {
        return Err(Error::Parse("more than one line".into()));
    }
    let text = std::str::from_utf8(body).map_err(|e| Error::Parse(e.to_string()))?;
    let message: Message = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    message.validate()?;
    Ok(message)
}

/// Accumulates the bids of one round and enforces the barrier contract: one
/// bid per registered user, all tagged with the same round.
#[derive(Debug)]
pub struct BidCollector {
    round: u64,
    bids: Vec<Option<f64>>,
    received: usize,
}

impl BidCollector {
    pub fn new(users: usize, round: u64) -> Self {
        Self {
            round,
            bids: vec![None; users],
            received: 0,
        }
    }

    pub fn add(&mut self, bid: BidMessage) -> Result<()> {
        if bid.n != self.round {
            return Err(Error::Protocol(format!(
                "bid from user {} is for round {}, expected {}",
                bid.user_id, bid.n, self.round
            )));
        }
        let slot = self.bids.get_mut(bid.user_id).ok_or_else(|| {
            Error::Protocol(format!("unknown user id {}", bid.user_id))
        })?;
        if slot.is_some() {
            return Err(Error::DuplicateBid {
                user_id: bid.user_id,
                round: bid.n,
            });
        }
        *slot = Some(bid.w);
        self.received += 1;
        Ok(())
    }

    pub fn missing(&self) -> usize {
        self.bids.len() - self.received
    }

    pub fn is_complete(&self) -> bool {
        self.missing() == 0
    }

    /// Bids ordered by user id.
    pub fn finish(self) -> Result<Vec<f64>> {
        if !self.is_complete() {
            return Err(Error::Protocol(format!(
                "round {} closed with {} bid(s) missing",
                self.round,
                self.missing()
            )));
        }
        Ok(self.bids.into_iter().flatten().collect())
    }
}

/// BS-side events, in the order they happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditEvent {
    BidConsumed { user_id: usize, n: u64 },
    PriceSent { n: u64 },
    StopSent { n: u64 },
}

/// Checks that every price or stop for round `n` was preceded by exactly one
/// consumed bid per user for round `n`, and that no round-`n` bid arrived later.
pub fn audit_barrier(events: &[AuditEvent], users: usize) -> Result<()> {
    let mut pending: Vec<usize> = Vec::new();
    let mut round: Option<u64> = None;
    let mut closed: Option<u64> = None;
    for event in events {
        match *event {
            AuditEvent::BidConsumed { user_id, n } => {
                if closed.is_some_and(|c| n <= c) {
                    return Err(Error::Protocol(format!("bid for closed round {n}")));
                }
                if round != Some(n) {
                    if !pending.is_empty() {
                        return Err(Error::Protocol(format!(
                            "round {n} started before round {:?} was priced",
                            round
                        )));
                    }
                    round = Some(n);
                }
                if pending.contains(&user_id) {
                    return Err(Error::DuplicateBid { user_id, round: n });
                }
                pending.push(user_id);
            }
            AuditEvent::PriceSent { n } | AuditEvent::StopSent { n } => {
                if round != Some(n) || pending.len() != users {
                    return Err(Error::Protocol(format!(
                        "round {n} published after {} of {users} bids",
                        if round == Some(n) { pending.len() } else { 0 }
                    )));
                }
                pending.clear();
                closed = Some(n);
            }
        }
    }
    Ok(())
}

/// Carries bids to the BS and prices back to the UEs.
pub trait Backend {
    fn users(&self) -> usize;

    /// Blocks until every UE's bid for round `n` has arrived; ordered by user id.
    fn collect_bids(&mut self, n: u64) -> Result<Vec<f64>>;

    fn send_price(&mut self, message: PriceMessage) -> Result<()>;

    fn send_stop(&mut self, message: StopMessage) -> Result<()>;

    /// Events recorded so far.
    fn audit_log(&self) -> &[AuditEvent];
}

/// One synchronous round: M bids in, then exactly one price or stop out.
pub fn round_exchange<B: Backend + ?Sized>(
    backend: &mut B,
    bs: &mut BsAgent,
    n: u64,
) -> Result<(Vec<f64>, BsDecision)> {
    let bids = backend.collect_bids(n)?;
    let decision = bs.step(&bids)?;
    match &decision {
        BsDecision::Price(p) => backend.send_price(PriceMessage { n, p: *p })?,
        BsDecision::Stop { price, .. } => backend.send_stop(StopMessage { n, p: *price })?,
    }
    Ok((bids, decision))
}

use super::{AuditEvent, Backend, BidCollector, BidMessage, Message, PriceMessage, StopMessage};
use crate::agents::UeAgent;
use crate::error::{Error, Result};

/// Deterministic backend that runs every UE in the caller's thread, in user-id
/// order.
#[derive(Debug)]
pub struct InProcessBackend {
    agents: Vec<UeAgent>,
    outbox: Vec<BidMessage>,
    received: Vec<Vec<Message>>,
    events: Vec<AuditEvent>,
    stopped: bool,
}

impl InProcessBackend {
    /// `agents[i]` must have user id `i`.
    pub fn new(agents: Vec<UeAgent>) -> Result<Self> {
        if let Some((i, agent)) = agents.iter().enumerate().find(|(i, a)| a.user_id() != *i) {
            return Err(Error::invalid(
                "agents",
                format!("agent at position {i} has user id {}", agent.user_id()),
            ));
        }
        let outbox = agents.iter().map(UeAgent::current_message).collect();
        let received = vec![Vec::new(); agents.len()];
        Ok(Self {
            agents,
            outbox,
            received,
            events: Vec::new(),
            stopped: false,
        })
    }

    pub fn agents(&self) -> &[UeAgent] {
        &self.agents
    }

    /// Messages delivered to UE `user_id` so far.
    pub fn received(&self, user_id: usize) -> &[Message] {
        &self.received[user_id]
    }
}

impl Backend for InProcessBackend {
    fn users(&self) -> usize {
        self.agents.len()
    }

    fn collect_bids(&mut self, n: u64) -> Result<Vec<f64>> {
        if self.stopped {
            return Err(Error::Protocol("collect after stop".into()));
        }
        let mut collector = BidCollector::new(self.agents.len(), n);
        for bid in &self.outbox {
            collector.add(*bid)?;
            self.events.push(AuditEvent::BidConsumed {
                user_id: bid.user_id,
                n: bid.n,
            });
        }
        collector.finish()
    }

    fn send_price(&mut self, message: PriceMessage) -> Result<()> {
        self.events.push(AuditEvent::PriceSent { n: message.n });
        for inbox in &mut self.received {
            inbox.push(message.into());
        }
        // Deliver to everyone before anyone answers.
        self.outbox = self
            .agents
            .iter_mut()
            .map(|agent| agent.on_price(message.p, message.n))
            .collect::<Result<_>>()?;
        Ok(())
    }

    fn send_stop(&mut self, message: StopMessage) -> Result<()> {
        self.events.push(AuditEvent::StopSent { n: message.n });
        for inbox in &mut self.received {
            inbox.push(message.into());
        }
        self.stopped = true;
        Ok(())
    }

    fn audit_log(&self) -> &[AuditEvent] {
        &self.events
    }
}

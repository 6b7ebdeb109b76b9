use std::collections::VecDeque;
use std::time::Duration;

use crate::simnet::{Endpoint, SimTime};

use super::wire::Frame;

/// Source port for presence traffic, separate from the overlay socket.
pub const XMPP_CLIENT_PORT: u16 = 15223;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum XmppEvent {
    Bound { jid: String },
    BindFailed { reason: String },
    Presence { jid: String, online: bool },
    Iq { from: String, payload: Vec<u8> },
    IqError { to: String },
}

/// Client end of one presence session. All frames go to `server`.
#[derive(Clone, Debug)]
pub struct XmppClient {
    account: String,
    server: Endpoint,
    resource: Option<String>,
    jid: Option<String>,
    bind_retry: Duration,
    keepalive: Duration,
    next_timer: Option<SimTime>,
    next_iq: u32,
    out: VecDeque<Vec<u8>>,
    events: VecDeque<XmppEvent>,
    iqs_sent: u64,
}

impl XmppClient {
    pub fn new(account: &str, server: Endpoint) -> Self {
        XmppClient {
            account: account.to_string(),
            server,
            resource: None,
            jid: None,
            bind_retry: Duration::from_secs(2),
            keepalive: Duration::from_secs(20),
            next_timer: None,
            next_iq: 1,
            out: VecDeque::new(),
            events: VecDeque::new(),
            iqs_sent: 0,
        }
    }

    pub fn account(&self) -> &str {
        &self.account
    }

    pub fn server(&self) -> Endpoint {
        self.server
    }

    pub fn jid(&self) -> Option<&str> {
        self.jid.as_deref()
    }

    pub fn iqs_sent(&self) -> u64 {
        self.iqs_sent
    }

    /// Binds `resource`, retrying every 2 s until the server answers.
    pub fn bind(&mut self, now: SimTime, resource: &str) {
        self.resource = Some(resource.to_string());
        self.send_bind(now);
    }

    fn send_bind(&mut self, now: SimTime) {
        if let Some(resource) = &self.resource {
            let f = Frame::Bind { account: self.account.clone(), resource: resource.clone() };
            self.out.push_back(f.encode());
            self.next_timer = Some(now + self.bind_retry);
        }
    }

    pub fn send_iq(&mut self, _now: SimTime, to: &str, payload: Vec<u8>) {
        let id = self.next_iq;
        self.next_iq = self.next_iq.wrapping_add(1);
        self.iqs_sent += 1;
        self.out.push_back(Frame::ClientIq { id, to: to.to_string(), payload }.encode());
    }

    pub fn unbind(&mut self) {
        if self.jid.take().is_some() {
            self.out.push_back(Frame::Unbind.encode());
        }
        self.resource = None;
        self.next_timer = None;
    }

    pub fn handle(&mut self, now: SimTime, bytes: &[u8]) {
        let Ok(frame) = Frame::decode(bytes) else { return };
        match frame {
            Frame::Bound { jid } => {
                if self.jid.is_none() {
                    self.jid = Some(jid.clone());
                    self.events.push_back(XmppEvent::Bound { jid });
                }
                self.next_timer = Some(now + self.keepalive);
            }
            Frame::BindError { reason } => {
                self.resource = None;
                self.next_timer = None;
                self.events.push_back(XmppEvent::BindFailed { reason });
            }
            Frame::Presence { from, online } => self.events.push_back(XmppEvent::Presence { jid: from, online }),
            Frame::Iq { from, payload, .. } => self.events.push_back(XmppEvent::Iq { from, payload }),
            Frame::IqError { to, .. } => self.events.push_back(XmppEvent::IqError { to }),
            _ => {}
        }
    }

    pub fn handle_timeout(&mut self, now: SimTime) {
        if self.next_timer.is_none_or(|t| t > now) {
            return;
        }
        if self.jid.is_some() {
            self.out.push_back(Frame::KeepAlive.encode());
            self.next_timer = Some(now + self.keepalive);
        } else {
            self.send_bind(now);
        }
    }

    pub fn poll_timeout(&self) -> Option<SimTime> {
        self.next_timer
    }

    pub fn poll_transmit(&mut self) -> Option<Vec<u8>> {
        self.out.pop_front()
    }

    pub fn poll_event(&mut self) -> Option<XmppEvent> {
        self.events.pop_front()
    }
}

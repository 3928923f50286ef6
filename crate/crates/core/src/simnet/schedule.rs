//! Message delay schedules: seeded random delays plus explicit overrides.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::history::{ClientId, Tick, TxnId};
use crate::protocol::{Payload, ProcessId};

/// Selects messages. Unset fields match anything.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src: Option<ProcessId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst: Option<ProcessId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub txn: Option<TxnId>,
    /// Client that issued the transaction the message belongs to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client: Option<ClientId>,
    /// Only the n-th (0-based) message matching the other fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sent_from: Option<Tick>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sent_until: Option<Tick>,
}

impl MessageMatch {
    pub fn any() -> Self {
        Self::default()
    }

    pub fn src(mut self, p: ProcessId) -> Self {
        self.src = Some(p);
        self
    }

    pub fn dst(mut self, p: ProcessId) -> Self {
        self.dst = Some(p);
        self
    }

    pub fn kind(mut self, k: &str) -> Self {
        self.kind = Some(k.to_string());
        self
    }

    pub fn txn(mut self, t: TxnId) -> Self {
        self.txn = Some(t);
        self
    }

    pub fn client(mut self, c: ClientId) -> Self {
        self.client = Some(c);
        self
    }

    pub fn nth(mut self, n: usize) -> Self {
        self.nth = Some(n);
        self
    }

    pub fn sent_within(mut self, from: Tick, until: Tick) -> Self {
        self.sent_from = Some(from);
        self.sent_until = Some(until);
        self
    }

    fn fields_match(&self, src: ProcessId, dst: ProcessId, sent: Tick, msg: &Payload) -> bool {
        self.src.is_none_or(|p| p == src)
            && self.dst.is_none_or(|p| p == dst)
            && self.kind.as_deref().is_none_or(|k| k == msg.kind())
            && self.txn.is_none_or(|t| msg.txn() == Some(t))
            && self
                .client
                .is_none_or(|c| msg.txn().map(TxnId::client) == Some(c))
            && self.sent_from.is_none_or(|t| sent >= t)
            && self.sent_until.is_none_or(|t| sent <= t)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    /// Deliver at this absolute tick (never earlier than one tick after
    /// sending).
    DeliverAt(Tick),
    /// Fixed delay in ticks (at least one).
    Delay(Tick),
    /// Withhold until the token is released.
    Hold(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Override {
    pub matcher: MessageMatch,
    pub action: Action,
}

/// Full description of how messages are delayed in one run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub seed: u64,
    pub delay_min: Tick,
    pub delay_max: Tick,
    #[serde(default)]
    pub overrides: Vec<Override>,
    /// Release tick of each hold token.
    #[serde(default)]
    pub releases: BTreeMap<String, Tick>,
}

impl Schedule {
    pub fn random(seed: u64, delay_min: Tick, delay_max: Tick) -> Self {
        assert!(
            1 <= delay_min && delay_min <= delay_max,
            "delays must satisfy 1 <= min <= max"
        );
        Self {
            seed,
            delay_min,
            delay_max,
            overrides: Vec::new(),
            releases: BTreeMap::new(),
        }
    }

    pub fn with(mut self, matcher: MessageMatch, action: Action) -> Self {
        self.overrides.push(Override { matcher, action });
        self
    }

    pub fn release(mut self, token: &str, at: Tick) -> Self {
        self.releases.insert(token.to_string(), at);
        self
    }
}

/// Where a sent message goes next.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Fate {
    At(Tick),
    Held(String),
}

/// Stateful application of a [`Schedule`]: one random stream per directed
/// channel, plus per-override match counters.
pub(crate) struct Dispatcher {
    schedule: Schedule,
    streams: BTreeMap<(ProcessId, ProcessId), ChaCha8Rng>,
    seen: Vec<usize>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Dispatcher {
    pub(crate) fn new(schedule: Schedule) -> Self {
        let seen = vec![0; schedule.overrides.len()];
        Self {
            schedule,
            streams: BTreeMap::new(),
            seen,
        }
    }

    /// Decides the fate of a message. The channel's random stream advances
    /// on every send, overridden or not, so an override on one message never
    /// shifts the delays drawn for later ones.
    pub(crate) fn dispatch(
        &mut self,
        src: ProcessId,
        dst: ProcessId,
        sent: Tick,
        msg: &Payload,
    ) -> Fate {
        let seed = self.schedule.seed;
        let rng = self.streams.entry((src, dst)).or_insert_with(|| {
            let chan = splitmix((src.code() << 32) ^ dst.code());
            ChaCha8Rng::seed_from_u64(splitmix(seed ^ chan))
        });
        let drawn = rng.gen_range(self.schedule.delay_min..=self.schedule.delay_max);
        let mut action = None;
        for (i, ov) in self.schedule.overrides.iter().enumerate() {
            if !ov.matcher.fields_match(src, dst, sent, msg) {
                continue;
            }
            let n = self.seen[i];
            self.seen[i] += 1;
            if action.is_none() && ov.matcher.nth.is_none_or(|k| k == n) {
                action = Some(ov.action.clone());
            }
        }
        match action {
            None => Fate::At(sent + drawn),
            Some(Action::DeliverAt(t)) => Fate::At(t.max(sent + 1)),
            Some(Action::Delay(d)) => Fate::At(sent + d.max(1)),
            Some(Action::Hold(token)) => match self.schedule.releases.get(&token) {
                Some(&t) => Fate::At(t.max(sent + 1)),
                None => Fate::Held(token),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::ObjectId;

    fn req(txn: TxnId) -> Payload {
        Payload::RotReq {
            txn,
            objects: vec![ObjectId::new("x")],
            clock: 0,
        }
    }

    #[test]
    fn same_seed_same_delays() {
        let s = Schedule::random(42, 1, 10);
        let (a, b) = (ProcessId::Client(0), ProcessId::Server(0));
        let mut d1 = Dispatcher::new(s.clone());
        let mut d2 = Dispatcher::new(s);
        for t in 0..50 {
            let m = req(TxnId::new(0, t as u32));
            assert_eq!(d1.dispatch(a, b, t, &m), d2.dispatch(a, b, t, &m));
        }
    }

    #[test]
    fn channels_are_independent() {
        let s = Schedule::random(7, 1, 100);
        let (c0, c1, s0) = (
            ProcessId::Client(0),
            ProcessId::Client(1),
            ProcessId::Server(0),
        );
        let mut plain = Dispatcher::new(s.clone());
        let mut noisy = Dispatcher::new(s);
        let m = req(TxnId::new(0, 0));
        let mut a = Vec::new();
        let mut b = Vec::new();
        for t in 0..20 {
            a.push(plain.dispatch(c0, s0, t, &m));
            noisy.dispatch(c1, s0, t, &m);
            b.push(noisy.dispatch(c0, s0, t, &m));
        }
        assert_eq!(a, b);
    }

    #[test]
    fn overrides_apply_in_order_and_nth() {
        let (c, s) = (ProcessId::Client(3), ProcessId::Server(1));
        let sched = Schedule::random(1, 1, 1)
            .with(MessageMatch::any().client(3).nth(1), Action::Delay(9))
            .with(
                MessageMatch::any().kind("ROT_REQ"),
                Action::Hold("h".into()),
            )
            .release("h", 50);
        let mut d = Dispatcher::new(sched);
        let m = req(TxnId::new(3, 0));
        assert_eq!(d.dispatch(c, s, 0, &m), Fate::At(50));
        assert_eq!(d.dispatch(c, s, 0, &m), Fate::At(9));
        assert_eq!(d.dispatch(c, s, 60, &m), Fate::At(61));
    }

    #[test]
    fn unreleased_hold_stays_held() {
        let sched = Schedule::random(1, 1, 1).with(MessageMatch::any(), Action::Hold("z".into()));
        let mut d = Dispatcher::new(sched);
        let m = req(TxnId::new(0, 0));
        assert_eq!(
            d.dispatch(ProcessId::Client(0), ProcessId::Server(0), 3, &m),
            Fate::Held("z".into())
        );
    }
}

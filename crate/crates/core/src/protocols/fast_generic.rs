//! One-round reads over the two-phase write path, for arbitrary read/write
//! transactions. After commit, servers may exchange helping messages before
//! a new version turns visible.

use super::slow::{TwoPhaseClient, TwoPhaseServer};
use crate::history::ClientId;
use crate::protocol::{ClientNode, NodeEnv, Protocol, ServerNode, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HelpDepth {
    /// Versions turn visible as soon as they commit.
    None,
    /// Servers bounce this many helping messages before revealing.
    Rounds(u32),
    /// Helping never stops and committed versions never turn visible.
    Unbounded,
}

pub struct FastGeneric {
    help: HelpDepth,
    name: String,
}

impl FastGeneric {
    pub fn new(help: HelpDepth) -> Self {
        let name = match help {
            HelpDepth::None => "fast-generic".to_string(),
            HelpDepth::Rounds(n) => format!("fast-generic-help{n}"),
            HelpDepth::Unbounded => "fast-generic-help".to_string(),
        };
        Self { help, name }
    }
}

impl Protocol for FastGeneric {
    fn name(&self) -> &str {
        &self.name
    }

    fn shape(&self) -> Shape {
        Shape::Generic
    }

    fn fast_rots(&self) -> bool {
        true
    }

    fn client(&self, id: ClientId, env: &NodeEnv) -> Box<dyn ClientNode> {
        Box::new(TwoPhaseClient::new(id, env, false))
    }

    fn server(&self, index: u32, env: &NodeEnv) -> Box<dyn ServerNode> {
        Box::new(TwoPhaseServer::new(index, env, self.help))
    }
}

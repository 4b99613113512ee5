use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Message, Params, Task};
use crate::geo::GeoCoordinate;
use crate::ids::{Addr, ClientId, NodeId, SimTime, TaskId};
use crate::sim::config::Range;

#[derive(Debug, Clone)]
pub struct Client {
    pub id: ClientId,
    pub position: GeoCoordinate,
    pub contact: Addr,
    /// The last request, while its reply is outstanding.
    pub awaiting: Option<TaskId>,
    /// Contacts that never answered; left out when the cloud bootstraps us.
    pub avoid: BTreeSet<NodeId>,
    pub rebootstraps: u64,
    rng: ChaCha8Rng,
    issued: u32,
}

/// What one client step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientStep {
    pub to: Addr,
    pub msg: Message,
    pub next_in: SimTime,
    pub moved_by: (f64, f64),
}

fn draw(rng: &mut ChaCha8Rng, r: Range) -> f64 {
    if r.lo == r.hi {
        r.lo
    } else {
        rng.random_range(r.lo..=r.hi)
    }
}

impl Client {
    pub fn new(id: ClientId, position: GeoCoordinate, contact: Addr, rng: ChaCha8Rng) -> Self {
        Self { id, position, contact, awaiting: None, avoid: BTreeSet::new(), rebootstraps: 0, rng, issued: 0 }
    }

    /// Delay before the first step.
    pub fn first_step(&mut self, params: &Params) -> SimTime {
        SimTime::from_secs(draw(&mut self.rng, params.client_step))
    }

    pub fn on_message(&mut self, msg: &Message) {
        match msg {
            Message::TaskReply { task, closest, .. } => {
                if self.awaiting == Some(*task) {
                    self.awaiting = None;
                }
                self.contact = *closest;
            }
            Message::ContactUpdate { closest } => self.contact = *closest,
            _ => {}
        }
    }
}

/// Issues one task to the current contact, then moves and picks the next
/// step time. A contact that left the previous request unanswered is dropped
/// in favour of the cloud.
pub fn client_step(client: &mut Client, cloud: NodeId, params: &Params) -> ClientStep {
    if client.awaiting.is_some() && client.contact != Addr::Node(cloud) {
        if let Addr::Node(n) = client.contact {
            client.avoid.insert(n);
        }
        client.contact = Addr::Node(cloud);
        client.rebootstraps += 1;
    }
    let rng = &mut client.rng;
    let id = TaskId(((client.id.0 as u64) << 32) | client.issued as u64);
    client.issued += 1;
    let task = Task {
        id,
        required_capacity: draw(rng, params.task_capacity),
        duration: SimTime::from_secs(draw(rng, params.task_duration)),
        origin_client: client.id,
    };
    let m = params.max_move;
    let moved_by = (draw(rng, Range::new(-m, m)), draw(rng, Range::new(-m, m)));
    let next_in = SimTime::from_secs(draw(rng, params.client_step));
    let msg = Message::TaskRequest { task, position: client.position, avoid: client.avoid.iter().copied().collect() };
    client.position =
        GeoCoordinate::planar(client.position.lon + moved_by.0, client.position.lat + moved_by.1).clamped();
    client.awaiting = Some(id);
    ClientStep { to: client.contact, msg, next_in, moved_by }
}

//! Deterministic discrete-event core: virtual clock, event queue and seeded
//! random streams. Everything above this module is driven by one
//! single-threaded loop per simulation instance.

mod queue;
mod rng;
mod time;

pub use queue::{ComponentId, Event, EventHandle, EventQueue, QueueStats};
pub use rng::{splitmix64, streams, SeededRng};
pub use time::SimTime;

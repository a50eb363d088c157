//! Keep-alive failure detector for the sources of a node's in-edges.
//!
//! Time is passed in explicitly so the state machine can be driven by a
//! scripted clock in tests.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeerState {
    Alive,
    /// The link dropped but the suspicion timeout has not yet elapsed.
    Suspected,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerStatus {
    pub node: usize,
    pub state: PeerState,
    pub last_heartbeat: Instant,
}

#[derive(Debug, Clone)]
pub struct HeartbeatMonitor {
    pub interval: Duration,
    pub suspicion_timeout: Duration,
    peers: Vec<PeerStatus>,
}

impl HeartbeatMonitor {
    /// Every peer starts alive with a heartbeat at `now`.
    pub fn new(peers: &[usize], interval: Duration, suspicion_timeout: Duration, now: Instant) -> Result<Self> {
        if interval >= suspicion_timeout {
            return Err(Error::Config(format!(
                "heartbeat interval {interval:?} must be shorter than the suspicion timeout {suspicion_timeout:?}"
            )));
        }
        Ok(Self {
            interval,
            suspicion_timeout,
            peers: peers
                .iter()
                .map(|&node| PeerStatus { node, state: PeerState::Alive, last_heartbeat: now })
                .collect(),
        })
    }

    fn peer_mut(&mut self, node: usize) -> Option<&mut PeerStatus> {
        self.peers.iter_mut().find(|p| p.node == node)
    }

    /// Any sign of life: an acknowledgement, a greeting or data.
    /// Returns the new state when it changed.
    pub fn heartbeat(&mut self, node: usize, now: Instant) -> Option<PeerState> {
        let peer = self.peer_mut(node)?;
        peer.last_heartbeat = now;
        let changed = peer.state != PeerState::Alive;
        peer.state = PeerState::Alive;
        changed.then_some(PeerState::Alive)
    }

    /// The connection to `node` closed.
    pub fn disconnected(&mut self, node: usize) -> Option<PeerState> {
        let peer = self.peer_mut(node)?;
        if peer.state == PeerState::Alive {
            peer.state = PeerState::Suspected;
            return Some(PeerState::Suspected);
        }
        None
    }

    /// Marks every peer without a heartbeat for longer than the suspicion
    /// timeout as failed; returns the peers that changed.
    pub fn tick(&mut self, now: Instant) -> Vec<usize> {
        let timeout = self.suspicion_timeout;
        self.peers
            .iter_mut()
            .filter(|p| p.state != PeerState::Failed && now.saturating_duration_since(p.last_heartbeat) > timeout)
            .map(|p| {
                p.state = PeerState::Failed;
                p.node
            })
            .collect()
    }

    pub fn state(&self, node: usize) -> Option<PeerState> {
        self.peers.iter().find(|p| p.node == node).map(|p| p.state)
    }

    pub fn is_alive(&self, node: usize) -> bool {
        self.state(node) == Some(PeerState::Alive)
    }

    pub fn peers(&self) -> &[PeerStatus] {
        &self.peers
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INTERVAL: Duration = Duration::from_millis(50);
    const TIMEOUT: Duration = Duration::from_millis(300);

    fn monitor(t0: Instant) -> HeartbeatMonitor {
        HeartbeatMonitor::new(&[3, 7], INTERVAL, TIMEOUT, t0).unwrap()
    }

    #[test]
    fn interval_must_be_shorter_than_timeout() {
        assert!(HeartbeatMonitor::new(&[1], TIMEOUT, INTERVAL, Instant::now()).is_err());
    }

    #[test]
    fn responsive_peer_stays_alive() {
        let t0 = Instant::now();
        let mut m = monitor(t0);
        for k in 1..=1000u32 {
            let now = t0 + INTERVAL * k;
            m.heartbeat(3, now);
            m.heartbeat(7, now);
            assert!(m.tick(now).is_empty());
        }
        assert!(m.is_alive(3) && m.is_alive(7));
    }

    #[test]
    fn silent_peer_fails_within_timeout_plus_interval() {
        let t0 = Instant::now();
        let mut m = monitor(t0);
        let mut failed_at = None;
        for k in 1..=40u32 {
            let now = t0 + INTERVAL * k;
            m.heartbeat(3, now);
            if m.tick(now).contains(&7) {
                failed_at = Some(now - t0);
                break;
            }
        }
        let failed_at = failed_at.expect("peer 7 never failed");
        assert!(failed_at > TIMEOUT && failed_at <= TIMEOUT + INTERVAL, "{failed_at:?}");
        assert_eq!(m.state(7), Some(PeerState::Failed));
        assert!(m.is_alive(3));
    }

    #[test]
    fn flap_shorter_than_timeout_changes_nothing() {
        // Scripted acknowledgement arrival times: regular, then a 250 ms
        // stall, then regular again.
        let t0 = Instant::now();
        let mut m = monitor(t0);
        let arrivals_ms = [50u64, 100, 150, 400, 450, 500];
        let mut clock = 0;
        for &at in &arrivals_ms {
            while clock + 10 < at {
                clock += 10;
                assert!(m.tick(t0 + Duration::from_millis(clock)).is_empty(), "changed at {clock} ms");
                assert!(m.is_alive(3));
            }
            clock = at;
            assert_eq!(m.heartbeat(3, t0 + Duration::from_millis(at)), None);
            m.heartbeat(7, t0 + Duration::from_millis(at));
        }
    }

    #[test]
    fn disconnect_suspects_then_fails_and_revival_restores() {
        let t0 = Instant::now();
        let mut m = monitor(t0);
        assert_eq!(m.disconnected(7), Some(PeerState::Suspected));
        assert_eq!(m.disconnected(7), None);
        assert!(!m.is_alive(7));
        assert!(m.tick(t0 + TIMEOUT).is_empty());
        assert_eq!(m.tick(t0 + TIMEOUT + INTERVAL), vec![3, 7]);
        assert_eq!(m.heartbeat(7, t0 + TIMEOUT * 2), Some(PeerState::Alive));
        assert!(m.is_alive(7));
        assert_eq!(m.heartbeat(99, t0), None);
    }
}

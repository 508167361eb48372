use std::sync::{Condvar, Mutex};

/// Counting semaphore bounding requests in flight.
#[derive(Debug)]
pub struct Limiter {
    state: Mutex<State>,
    freed: Condvar,
    capacity: usize,
}

#[derive(Debug, Default)]
struct State {
    in_flight: usize,
    peak: usize,
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Limiter {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "limiter capacity must be positive");
        Limiter {
            state: Mutex::new(State::default()),
            freed: Condvar::new(),
            capacity,
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut state = self.state.lock().expect("limiter lock");
        while state.in_flight >= self.capacity {
            state = self.freed.wait(state).expect("limiter lock");
        }
        state.in_flight += 1;
        state.peak = state.peak.max(state.in_flight);
        Permit { limiter: self }
    }

    pub fn peak(&self) -> usize {
        self.state.lock().expect("limiter lock").peak
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut state = self.limiter.state.lock().expect("limiter lock");
        state.in_flight -= 1;
        self.limiter.freed.notify_one();
    }
}

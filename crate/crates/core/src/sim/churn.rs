use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::model::{SimTime, WorkerId};

/// Poisson leave/return process for mobile workers. Each worker alternates
/// present → absent → present with i.i.d. exponential gaps of the same
/// mean, drawn from its own RNG stream.
#[derive(Clone, Debug, PartialEq)]
pub struct ChurnProcess {
    pub mobile_workers: Vec<WorkerId>,
    pub mean_interval_sec: f64,
    pub rng_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChurnEvent {
    pub time: SimTime,
    pub worker: WorkerId,
    pub leave: bool,
}

/// Lazily draws one worker's churn events.
#[derive(Clone, Debug)]
pub struct ChurnStream {
    worker: WorkerId,
    rng: ChaCha8Rng,
    exp: Exp<f64>,
    at: SimTime,
    next_is_leave: bool,
}

impl ChurnStream {
    pub fn worker(&self) -> WorkerId {
        self.worker
    }
}

impl Iterator for ChurnStream {
    type Item = ChurnEvent;

    fn next(&mut self) -> Option<ChurnEvent> {
        self.at += self.exp.sample(&mut self.rng);
        let ev = ChurnEvent { time: self.at, worker: self.worker, leave: self.next_is_leave };
        self.next_is_leave = !self.next_is_leave;
        Some(ev)
    }
}

impl ChurnProcess {
    pub fn streams(&self) -> Vec<ChurnStream> {
        let exp = Exp::new(1.0 / self.mean_interval_sec).expect("positive mean interval");
        self.mobile_workers
            .iter()
            .map(|&w| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
                rng.set_stream(u64::from(w.0) + 1);
                ChurnStream { worker: w, rng, exp, at: 0.0, next_is_leave: true }
            })
            .collect()
    }

    /// Every churn event up to `horizon`, ordered by time then worker.
    pub fn schedule(&self, horizon: SimTime) -> Vec<ChurnEvent> {
        let mut all: Vec<ChurnEvent> =
            self.streams().into_iter().flat_map(|s| s.take_while(move |e| e.time <= horizon)).collect();
        all.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.worker.cmp(&b.worker)));
        all
    }

    /// Gaps between consecutive events of each worker up to `horizon`.
    pub fn intervals(&self, horizon: SimTime) -> Vec<f64> {
        self.streams()
            .into_iter()
            .flat_map(|s| {
                let mut last = 0.0;
                s.take_while(move |e| e.time <= horizon).map(move |e| {
                    let gap = e.time - last;
                    last = e.time;
                    gap
                })
            })
            .collect()
    }
}

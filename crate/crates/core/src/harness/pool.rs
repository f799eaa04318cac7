//! Bounded worker pool for emulation. Jobs either run on the pool or, in
//! pure simulation, inline at the point where their result is needed.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

type Work = Box<dyn FnOnce() + Send>;

pub struct Pool {
    tx: Option<Sender<Work>>,
    handles: Vec<JoinHandle<()>>,
}

impl Pool {
    pub fn new(workers: usize) -> Self {
        let (tx, rx) = channel::<Work>();
        let rx = Arc::new(Mutex::new(rx));
        let handles = (0..workers.max(1))
            .map(|_| {
                let rx = Arc::clone(&rx);
                std::thread::spawn(move || loop {
                    let job = match rx.lock() {
                        Ok(guard) => guard.recv(),
                        Err(_) => return,
                    };
                    match job {
                        Ok(job) => job(),
                        Err(_) => return,
                    }
                })
            })
            .collect();
        Pool { tx: Some(tx), handles }
    }

    pub fn workers(&self) -> usize {
        self.handles.len()
    }

    fn submit<T: Send + 'static>(&self, f: impl FnOnce() -> T + Send + 'static) -> Receiver<T> {
        let (rtx, rrx) = channel();
        let work: Work = Box::new(move || {
            let _ = rtx.send(f());
        });
        self.tx.as_ref().expect("pool is running").send(work).expect("pool workers alive");
        rrx
    }
}

impl Drop for Pool {
    fn drop(&mut self) {
        self.tx.take();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

pub enum Job<T> {
    Inline(Box<dyn FnOnce() -> T>),
    Pooled(Receiver<T>),
}

impl<T: Send + 'static> Job<T> {
    /// Starts `f` on the pool if there is one, otherwise defers it.
    pub fn start(pool: Option<&Pool>, f: impl FnOnce() -> T + Send + 'static) -> Self {
        match pool {
            Some(p) => Job::Pooled(p.submit(f)),
            None => Job::Inline(Box::new(f)),
        }
    }

    pub fn wait(self) -> T {
        match self {
            Job::Inline(f) => f(),
            Job::Pooled(rx) => rx.recv().expect("worker finished the job"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooled_and_inline_agree() {
        let pool = Pool::new(3);
        let jobs: Vec<Job<u64>> = (0..20u64).map(|i| Job::start(Some(&pool), move || i * i)).collect();
        let got: Vec<u64> = jobs.into_iter().map(Job::wait).collect();
        let inline: Vec<u64> = (0..20u64).map(|i| Job::start(None, move || i * i).wait()).collect();
        assert_eq!(got, inline);
    }
}

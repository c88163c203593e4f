use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

struct Inner<T> {
    items: VecDeque<T>,
    closed: bool,
}

/// Bounded hand-off queue that never blocks the producer: pushing into a
/// full queue evicts and returns the oldest item.
pub struct DropOldestQueue<T> {
    capacity: usize,
    inner: Mutex<Inner<T>>,
    ready: Condvar,
}

impl<T> DropOldestQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "queue capacity must be at least 1");
        Self {
            capacity,
            inner: Mutex::new(Inner {
                items: VecDeque::with_capacity(capacity),
                closed: false,
            }),
            ready: Condvar::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Enqueues `item`, returning the evicted oldest item when full. Items
    /// pushed after `close` are handed straight back.
    pub fn push(&self, item: T) -> Option<T> {
        let mut inner = self.inner.lock().expect("queue poisoned");
        if inner.closed {
            return Some(item);
        }
        let evicted = if inner.items.len() == self.capacity {
            inner.items.pop_front()
        } else {
            None
        };
        inner.items.push_back(item);
        drop(inner);
        self.ready.notify_one();
        evicted
    }

    /// Blocks for the next item. `None` once the queue is closed and empty.
    pub fn pop(&self) -> Option<T> {
        let mut inner = self.inner.lock().expect("queue poisoned");
        loop {
            if let Some(item) = inner.items.pop_front() {
                return Some(item);
            }
            if inner.closed {
                return None;
            }
            inner = self.ready.wait(inner).expect("queue poisoned");
        }
    }

    /// Like [`pop`](Self::pop) but gives up after `timeout`.
    pub fn pop_timeout(&self, timeout: Duration) -> Option<T> {
        let mut inner = self.inner.lock().expect("queue poisoned");
        if inner.items.is_empty() && !inner.closed {
            inner = self
                .ready
                .wait_timeout_while(inner, timeout, |i| i.items.is_empty() && !i.closed)
                .expect("queue poisoned")
                .0;
        }
        inner.items.pop_front()
    }

    /// Stops accepting items; consumers drain what is left.
    pub fn close(&self) {
        self.inner.lock().expect("queue poisoned").closed = true;
        self.ready.notify_all();
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("queue poisoned").items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::Arc;

    #[derive(Debug, Clone, Copy)]
    enum Op {
        Push,
        Pop,
    }

    /// Reference model: a plain vector with explicit capacity bookkeeping.
    fn model(capacity: usize, ops: &[Op]) -> (Vec<u32>, Vec<u32>) {
        let mut held: Vec<u32> = Vec::new();
        let (mut dropped, mut popped) = (Vec::new(), Vec::new());
        let mut next = 0;
        for op in ops {
            match op {
                Op::Push => {
                    if held.len() == capacity {
                        dropped.push(held.remove(0));
                    }
                    held.push(next);
                    next += 1;
                }
                Op::Pop => {
                    if !held.is_empty() {
                        popped.push(held.remove(0));
                    }
                }
            }
        }
        (dropped, popped)
    }

    proptest! {
        #[test]
        fn matches_reference_model(
            capacity in 1usize..6,
            ops in prop::collection::vec(prop_oneof![3 => Just(Op::Push), 1 => Just(Op::Pop)], 0..80)
        ) {
            let q = DropOldestQueue::new(capacity);
            let (mut dropped, mut popped) = (Vec::new(), Vec::new());
            let mut next = 0u32;
            for op in &ops {
                match op {
                    Op::Push => {
                        dropped.extend(q.push(next));
                        next += 1;
                    }
                    Op::Pop => popped.extend(q.pop_timeout(Duration::ZERO)),
                }
                prop_assert!(q.len() <= capacity);
            }
            prop_assert_eq!((dropped, popped), model(capacity, &ops));
        }
    }

    #[test]
    fn close_wakes_consumers_after_drain() {
        let q = Arc::new(DropOldestQueue::new(2));
        q.push(1);
        let consumer = {
            let q = q.clone();
            std::thread::spawn(move || {
                let mut got = Vec::new();
                while let Some(v) = q.pop() {
                    got.push(v);
                }
                got
            })
        };
        std::thread::sleep(Duration::from_millis(20));
        q.push(2);
        q.close();
        assert_eq!(q.push(3), Some(3));
        assert_eq!(consumer.join().unwrap(), vec![1, 2]);
    }
}

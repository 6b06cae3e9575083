use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Receives candidate uids in ascending order. Returning `false` stops
/// retrieval early.
pub trait Collector {
    fn collect(&mut self, uid: u64) -> bool;
}

/// Keeps the first `cap` uids.
#[derive(Debug, Clone)]
pub struct FirstN {
    cap: usize,
    uids: Vec<u64>,
}

impl FirstN {
    pub fn new(cap: usize) -> Self {
        FirstN {
            cap,
            uids: Vec::with_capacity(cap.min(1 << 16)),
        }
    }

    pub fn into_uids(self) -> Vec<u64> {
        self.uids
    }
}

impl Collector for FirstN {
    fn collect(&mut self, uid: u64) -> bool {
        if self.uids.len() < self.cap {
            self.uids.push(uid);
        }
        self.uids.len() < self.cap
    }
}

pub(super) fn union(lists: &[&[u64]], c: &mut impl Collector) {
    match lists {
        [] => {}
        [only] => {
            for &u in *only {
                if !c.collect(u) {
                    return;
                }
            }
        }
        _ => {
            let mut heap: BinaryHeap<Reverse<(u64, usize)>> = lists
                .iter()
                .enumerate()
                .filter_map(|(i, l)| l.first().map(|&u| Reverse((u, i))))
                .collect();
            let mut pos = vec![0usize; lists.len()];
            let mut last = None;
            while let Some(Reverse((u, i))) = heap.pop() {
                pos[i] += 1;
                if let Some(&next) = lists[i].get(pos[i]) {
                    heap.push(Reverse((next, i)));
                }
                if last == Some(u) {
                    continue;
                }
                last = Some(u);
                if !c.collect(u) {
                    return;
                }
            }
        }
    }
}

pub(super) fn intersection(lists: &[&[u64]], c: &mut impl Collector) {
    if lists.is_empty() {
        return;
    }
    let mut order: Vec<&[u64]> = lists.to_vec();
    order.sort_by_key(|l| l.len());
    let (head, rest) = order.split_first().unwrap();
    let mut cursors = vec![0usize; rest.len()];
    'outer: for &u in *head {
        for (l, cur) in rest.iter().zip(cursors.iter_mut()) {
            *cur += l[*cur..].partition_point(|&x| x < u);
            match l.get(*cur) {
                None => return,
                Some(&x) if x != u => continue 'outer,
                _ => {}
            }
        }
        if !c.collect(u) {
            return;
        }
    }
}

//! Set-associative cache with true LRU replacement.

use crate::addr::{line_number, LineAddr};

#[derive(Clone, Debug)]
struct Way<V> {
    line: LineAddr,
    last_use: u64,
    value: V,
}

#[derive(Clone, Debug)]
pub struct SetAssocCache<V> {
    sets: Vec<Vec<Way<V>>>,
    assoc: usize,
    clock: u64,
    len: usize,
}

impl<V> SetAssocCache<V> {
    pub fn new(num_sets: usize, assoc: usize) -> Self {
        assert!(num_sets > 0 && assoc > 0);
        Self { sets: (0..num_sets).map(|_| Vec::with_capacity(assoc)).collect(), assoc, clock: 0, len: 0 }
    }

    fn set_of(&self, line: LineAddr) -> usize {
        (line_number(line) % self.sets.len() as u64) as usize
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, line: LineAddr) -> bool {
        self.get(line).is_some()
    }

    pub fn get(&self, line: LineAddr) -> Option<&V> {
        self.sets[self.set_of(line)].iter().find(|w| w.line == line).map(|w| &w.value)
    }

    pub fn get_mut(&mut self, line: LineAddr) -> Option<&mut V> {
        let s = self.set_of(line);
        self.sets[s].iter_mut().find(|w| w.line == line).map(|w| &mut w.value)
    }

    /// Marks `line` most recently used. Returns false on a miss.
    pub fn touch(&mut self, line: LineAddr) -> bool {
        self.clock += 1;
        let clock = self.clock;
        let s = self.set_of(line);
        match self.sets[s].iter_mut().find(|w| w.line == line) {
            Some(w) => {
                w.last_use = clock;
                true
            }
            None => false,
        }
    }

    /// Inserts or replaces `line` as most recently used; returns the evicted LRU line if the set was full.
    pub fn insert(&mut self, line: LineAddr, value: V) -> Option<(LineAddr, V)> {
        self.clock += 1;
        let clock = self.clock;
        let s = self.set_of(line);
        let set = &mut self.sets[s];
        if let Some(w) = set.iter_mut().find(|w| w.line == line) {
            w.value = value;
            w.last_use = clock;
            return None;
        }
        let way = Way { line, last_use: clock, value };
        if set.len() < self.assoc {
            set.push(way);
            self.len += 1;
            return None;
        }
        let (idx, _) = set.iter().enumerate().min_by_key(|(_, w)| w.last_use).expect("full set");
        let old = std::mem::replace(&mut set[idx], way);
        Some((old.line, old.value))
    }

    pub fn remove(&mut self, line: LineAddr) -> Option<V> {
        let s = self.set_of(line);
        let set = &mut self.sets[s];
        let idx = set.iter().position(|w| w.line == line)?;
        self.len -= 1;
        Some(set.swap_remove(idx).value)
    }

    /// All resident lines in set order, then way order.
    pub fn iter(&self) -> impl Iterator<Item = (LineAddr, &V)> {
        self.sets.iter().flat_map(|s| s.iter().map(|w| (w.line, &w.value)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lru_eviction_order() {
        let mut c = SetAssocCache::new(1, 2);
        assert!(c.insert(0x0, 'a').is_none());
        assert!(c.insert(0x40, 'b').is_none());
        assert!(c.touch(0x0));
        assert_eq!(c.insert(0x80, 'c'), Some((0x40, 'b')));
        assert!(c.contains(0x0) && c.contains(0x80));
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn sets_are_independent() {
        let mut c = SetAssocCache::new(2, 1);
        c.insert(0x0, 1);
        c.insert(0x40, 2);
        assert_eq!(c.len(), 2);
        assert_eq!(c.insert(0x80, 3), Some((0x0, 1)));
        assert_eq!(c.remove(0x40), Some(2));
        assert!(c.is_empty() == false && c.len() == 1);
    }
}

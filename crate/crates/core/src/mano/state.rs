//! Revisioned key-value state store with prefix watches.
//!
//! Mutation is crate-private: everything outside `mano` goes through the
//! API server, which is the single entry point for writes.

use std::collections::BTreeMap;
use std::sync::mpsc::{channel, Receiver, Sender};

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StateRecord {
    pub key: String,
    pub value: Vec<u8>,
    pub revision: u64,
}

struct Watcher {
    prefix: String,
    tx: Sender<StateRecord>,
}

#[derive(Default)]
pub struct StateStore {
    data: BTreeMap<String, StateRecord>,
    revision: u64,
    watchers: Vec<Watcher>,
}

impl StateStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store-wide revision; every put takes the next one.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub(crate) fn put(&mut self, key: &str, value: Vec<u8>) -> u64 {
        self.revision += 1;
        let rec = StateRecord { key: key.to_string(), value, revision: self.revision };
        self.watchers.retain(|w| !key.starts_with(&w.prefix) || w.tx.send(rec.clone()).is_ok());
        self.data.insert(key.to_string(), rec);
        self.revision
    }

    pub fn get(&self, key: &str) -> Option<(&[u8], u64)> {
        self.data.get(key).map(|r| (r.value.as_slice(), r.revision))
    }

    pub fn list<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a StateRecord> + 'a {
        self.data.range(prefix.to_string()..).take_while(move |(k, _)| k.starts_with(prefix)).map(|(_, v)| v)
    }

    /// Stream of every later update whose key starts with `prefix`, in
    /// revision order.
    pub fn watch(&mut self, prefix: &str) -> Receiver<StateRecord> {
        let (tx, rx) = channel();
        self.watchers.push(Watcher { prefix: prefix.to_string(), tx });
        rx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_put_get() {
        let mut s = StateStore::new();
        let r1 = s.put("k", b"v1".to_vec());
        let r2 = s.put("k", b"v2".to_vec());
        assert!(r2 > r1);
        assert_eq!(s.get("k"), Some((&b"v2"[..], r2)));
        assert_eq!(s.get("absent"), None);
    }

    #[test]
    fn watch_delivers_prefix_updates_in_order() {
        let mut s = StateStore::new();
        let rx = s.watch("/pods/");
        s.put("/pods/1", b"a".to_vec());
        s.put("/nodes/0", b"x".to_vec());
        s.put("/pods/2", b"b".to_vec());
        s.put("/pods/1", b"c".to_vec());
        let got: Vec<_> = rx.try_iter().collect();
        assert_eq!(got.iter().map(|r| r.key.as_str()).collect::<Vec<_>>(), ["/pods/1", "/pods/2", "/pods/1"]);
        assert!(got.windows(2).all(|w| w[0].revision < w[1].revision));
    }

    #[test]
    fn dropped_watchers_are_pruned() {
        let mut s = StateStore::new();
        drop(s.watch("/"));
        s.put("/a", vec![]);
        assert!(s.watchers.is_empty());
    }

    #[test]
    fn list_by_prefix() {
        let mut s = StateStore::new();
        s.put("/grants/1", vec![]);
        s.put("/grants/2", vec![]);
        s.put("/pods/1", vec![]);
        assert_eq!(s.list("/grants/").count(), 2);
    }
}

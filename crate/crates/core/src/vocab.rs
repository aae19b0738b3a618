//! Global word registry shared by every task.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Support;

pub const START: &str = "<start>";
pub const END: &str = "<end>";
pub const START_ID: usize = 0;
pub const END_ID: usize = 1;

/// Word ↔ id map. Ids are assigned in insertion order and never change;
/// the two sentinels hold ids 0 and 1 and belong to every task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    tasks: Vec<BTreeSet<usize>>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    words: Vec<String>,
    tasks: Vec<BTreeSet<usize>>,
}

impl From<VocabFile> for Vocabulary {
    fn from(f: VocabFile) -> Self {
        let index = f.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words: f.words, index, tasks: f.tasks }
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        Self { words: v.words, tasks: v.tasks }
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let words = vec![START.to_string(), END.to_string()];
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index, tasks: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Appends words that are not registered yet; errors on a word listed
    /// twice or already present.
    pub fn add_words(&mut self, new_words: &[String]) -> Result<Vec<usize>> {
        let mut seen = BTreeSet::new();
        for w in new_words {
            if self.index.contains_key(w) || !seen.insert(w) {
                return Err(Error::Vocabulary(format!("word {w:?} is already registered")));
            }
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::Vocabulary(format!("invalid word {w:?}")));
            }
        }
        Ok(new_words
            .iter()
            .map(|w| {
                let id = self.words.len();
                self.words.push(w.clone());
                self.index.insert(w.clone(), id);
                id
            })
            .collect())
    }

    /// Words of `words` that are not registered yet, in first-seen order.
    pub fn unseen<'a>(&self, words: impl IntoIterator<Item = &'a String>) -> Vec<String> {
        let mut seen = BTreeSet::new();
        words
            .into_iter()
            .filter(|w| !self.index.contains_key(*w) && seen.insert(*w))
            .cloned()
            .collect()
    }

    /// Records the members of task `task` (sentinels are added implicitly).
    pub fn set_task_words(&mut self, task: usize, words: &[String]) -> Result<()> {
        let mut ids: BTreeSet<usize> = [START_ID, END_ID].into();
        for w in words {
            ids.insert(self.id(w).ok_or_else(|| Error::Vocabulary(format!("unknown word {w:?}")))?);
        }
        if self.tasks.len() <= task {
            self.tasks.resize(task + 1, BTreeSet::new());
        }
        self.tasks[task] = ids;
        Ok(())
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    /// Membership bitmap of `task` over the current vocabulary.
    pub fn task_support(&self, task: usize) -> Result<Support> {
        let ids = self
            .tasks
            .get(task)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Task(format!("task {task} has no registered vocabulary")))?;
        Ok(Support::from_ids(self.len(), ids.iter().copied()))
    }

    /// Union of the supports of tasks `0..tasks`, over the first `len` ids.
    pub fn union_support(&self, tasks: usize, len: usize) -> Support {
        let ids = self.tasks[..tasks.min(self.tasks.len())]
            .iter()
            .flatten()
            .copied()
            .filter(|&i| i < len);
        Support::from_ids(len, ids)
    }

    /// `[<start>, words…, <end>]` as ids.
    pub fn encode(&self, caption: &[String]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(caption.len() + 2);
        out.push(START_ID);
        for w in caption {
            out.push(self.id(w).ok_or_else(|| Error::Vocabulary(format!("unknown word {w:?}")))?);
        }
        out.push(END_ID);
        Ok(out)
    }

    /// Words of a decoded sequence with the sentinels removed; decoding stops
    /// at the first end sentinel.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != END_ID)
            .filter(|&&i| i != START_ID)
            .filter_map(|&i| self.word(i).map(str::to_string))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn ids_are_stable() {
        let mut v = Vocabulary::new();
        assert_eq!(v.add_words(&s(&["dog", "runs"])).unwrap(), vec![2, 3]);
        assert_eq!(v.add_words(&s(&["cat"])).unwrap(), vec![4]);
        assert_eq!(v.id("dog"), Some(2));
        assert!(v.add_words(&s(&["cat"])).is_err());
        assert!(v.add_words(&s(&["x", "x"])).is_err());
        assert_eq!(v.len(), 5);
        assert_eq!(v.unseen(&s(&["dog", "owl", "owl", "cat", "bat"])), s(&["owl", "bat"]));
    }

    #[test]
    fn supports_and_codec() {
        let mut v = Vocabulary::new();
        v.add_words(&s(&["a", "b", "c"])).unwrap();
        v.set_task_words(0, &s(&["a", "b"])).unwrap();
        v.set_task_words(1, &s(&["c"])).unwrap();
        assert_eq!(v.task_support(0).unwrap().active(), &[0, 1, 2, 3]);
        assert_eq!(v.task_support(1).unwrap().active(), &[0, 1, 4]);
        assert!(v.task_support(2).is_err());
        assert_eq!(v.union_support(1, 4).active(), &[0, 1, 2, 3]);
        let ids = v.encode(&s(&["b", "a"])).unwrap();
        assert_eq!(ids, vec![0, 3, 2, 1]);
        assert_eq!(v.decode(&ids), s(&["b", "a"]));
        assert_eq!(v.decode(&[0, 4, 1, 2]), s(&["c"]));
        assert!(v.encode(&s(&["zzz"])).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let mut v = Vocabulary::new();
        v.add_words(&s(&["a", "b"])).unwrap();
        v.set_task_words(0, &s(&["b"])).unwrap();
        let back: Vocabulary = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
    }
}

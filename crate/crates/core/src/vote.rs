//! Plurality voting with first-occurrence tie-breaking.

use std::collections::HashMap;
use std::hash::Hash;

/// Winner of a plurality vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    /// Position of the winning value's first occurrence.
    pub first_index: usize,
    pub count: usize,
}

/// The most frequent item; among equally frequent items, the one seen first.
///
/// Returns `None` for an empty input.
pub fn mode_first<T: Eq + Hash>(items: impl IntoIterator<Item = T>) -> Option<Mode> {
    let mut tally: HashMap<T, Mode> = HashMap::new();
    for (i, item) in items.into_iter().enumerate() {
        tally.entry(item).and_modify(|m| m.count += 1).or_insert(Mode {
            first_index: i,
            count: 1,
        });
    }
    tally
        .into_values()
        .max_by(|a, b| a.count.cmp(&b.count).then(b.first_index.cmp(&a.first_index)))
}

/// [`mode_first`] over the present entries only, keeping their original positions.
pub fn mode_first_present<T: Eq + Hash>(items: impl IntoIterator<Item = Option<T>>) -> Option<Mode> {
    let mut tally: HashMap<T, Mode> = HashMap::new();
    for (i, item) in items.into_iter().enumerate() {
        if let Some(item) = item {
            tally.entry(item).and_modify(|m| m.count += 1).or_insert(Mode {
                first_index: i,
                count: 1,
            });
        }
    }
    tally
        .into_values()
        .max_by(|a, b| a.count.cmp(&b.count).then(b.first_index.cmp(&a.first_index)))
}

//! Basket co-occurrence counts and lift-ranked pair recommendations.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data_model::{Stream, SubjectId, DAY_MS};
use crate::kvtext::{KvCodec, KvDoc, KvError};
use crate::platform::EventLog;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooccurrenceModel {
    /// Keyed by `(a, b)` with `a < b`.
    pub pair_counts: BTreeMap<(String, String), u64>,
    pub item_counts: BTreeMap<String, u64>,
    pub basket_total: u64,
}

impl CooccurrenceModel {
    pub fn pair_count(&self, a: &str, b: &str) -> u64 {
        let key = if a < b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        };
        self.pair_counts.get(&key).copied().unwrap_or(0)
    }

    /// `pair * total / (count_a * count_b)`.
    pub fn lift(&self, a: &str, b: &str) -> f64 {
        let pair = self.pair_count(a, b);
        let ca = self.item_counts.get(a).copied().unwrap_or(0);
        let cb = self.item_counts.get(b).copied().unwrap_or(0);
        if pair == 0 || ca == 0 || cb == 0 {
            return 0.0;
        }
        (pair as f64 * self.basket_total as f64) / (ca as f64 * cb as f64)
    }
}

pub fn cooccurrence_fit<S: AsRef<str> + Ord>(baskets: &[BTreeSet<S>]) -> CooccurrenceModel {
    let mut items_n: BTreeMap<&str, u64> = BTreeMap::new();
    let mut pairs_n: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    for basket in baskets {
        let items: Vec<&str> = basket.iter().map(AsRef::as_ref).collect();
        for (i, a) in items.iter().enumerate() {
            *items_n.entry(a).or_default() += 1;
            for b in &items[i + 1..] {
                *pairs_n.entry((a, b)).or_default() += 1;
            }
        }
    }
    CooccurrenceModel {
        basket_total: baskets.len() as u64,
        item_counts: items_n.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        pair_counts: pairs_n
            .into_iter()
            .map(|((a, b), v)| ((a.to_string(), b.to_string()), v))
            .collect(),
    }
}

/// Top-`k` items that co-occur with some regular item, excluding the regular
/// items. Ranked by best lift with any regular partner, then by that
/// partner's pair count (descending), then SKU.
pub fn pair_recommend(model: &CooccurrenceModel, regular_items: &BTreeSet<String>, k: usize) -> Vec<String> {
    PairRecommender::new(model).recommend(regular_items, k)
}

/// Per-item neighbour lists with precomputed lift, for answering many
/// recommendation queries against one fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecommender {
    neighbors: BTreeMap<String, Vec<(String, f64, u64)>>,
}

impl PairRecommender {
    pub fn new(model: &CooccurrenceModel) -> Self {
        let mut neighbors: BTreeMap<String, Vec<(String, f64, u64)>> = BTreeMap::new();
        for ((a, b), &count) in &model.pair_counts {
            let lift = model.lift(a, b);
            neighbors.entry(a.clone()).or_default().push((b.clone(), lift, count));
            neighbors.entry(b.clone()).or_default().push((a.clone(), lift, count));
        }
        PairRecommender { neighbors }
    }

    /// Same ranking as [`pair_recommend`].
    pub fn recommend(&self, regular_items: &BTreeSet<String>, k: usize) -> Vec<String> {
        let mut best: BTreeMap<&str, (f64, u64)> = BTreeMap::new();
        for regular in regular_items {
            let Some(list) = self.neighbors.get(regular) else { continue };
            for (candidate, lift, count) in list {
                if *count == 0 || regular_items.contains(candidate) {
                    continue;
                }
                let score = (*lift, *count);
                let slot = best.entry(candidate).or_insert(score);
                if score.0 > slot.0 || (score.0 == slot.0 && score.1 > slot.1) {
                    *slot = score;
                }
            }
        }
        let mut ranked: Vec<(&str, (f64, u64))> = best.into_iter().collect();
        ranked.sort_by(|(sa, (la, ca)), (sb, (lb, cb))| {
            lb.total_cmp(la).then(cb.cmp(ca)).then(sa.cmp(sb))
        });
        ranked.into_iter().take(k).map(|(s, _)| s.to_string()).collect()
    }
}

/// ISO week number counted from the epoch (weeks start on Monday).
pub fn iso_week_index(timestamp_ms: i64) -> i64 {
    (timestamp_ms.div_euclid(DAY_MS) + 3).div_euclid(7)
}

pub const REGULAR_WEEKS: i64 = 8;

/// SKUs ordered in at least half of the 8 complete ISO weeks before the week
/// containing `as_of_ms`.
pub fn regular_items(log: &EventLog, subject: &SubjectId, as_of_ms: i64) -> BTreeSet<String> {
    let current = iso_week_index(as_of_ms);
    let first = current - REGULAR_WEEKS;
    let mut weeks: BTreeMap<&str, BTreeSet<i64>> = BTreeMap::new();
    let from = (first * 7 - 3) * DAY_MS - 1;
    for e in log.subject_events_between(subject, from, as_of_ms) {
        if e.stream != Stream::Ecommerce || e.event_name != "order_placed" {
            continue;
        }
        let w = iso_week_index(e.timestamp_ms);
        if (first..current).contains(&w) {
            if let Some(sku) = e.payload_str("sku") {
                weeks.entry(sku).or_default().insert(w);
            }
        }
    }
    weeks
        .into_iter()
        .filter(|(_, w)| 2 * w.len() as i64 >= REGULAR_WEEKS)
        .map(|(s, _)| s.to_string())
        .collect()
}

/// Baskets from `order_placed` events with `from < ts <= to`, grouped by
/// subject and `basket_id` (or timestamp when no basket id was logged).
pub fn baskets_from_log(log: &EventLog, from_exclusive: i64, to_inclusive: i64) -> Vec<BTreeSet<String>> {
    let mut baskets: BTreeMap<(&SubjectId, Cow<'_, str>), BTreeSet<&str>> = BTreeMap::new();
    let events = log
        .subjects()
        .flat_map(|s| log.subject_events_between(s, from_exclusive, to_inclusive));
    for e in events {
        if e.stream != Stream::Ecommerce || e.event_name != "order_placed" {
            continue;
        }
        let Some(sku) = e.payload_str("sku") else { continue };
        let basket = e
            .payload_str("basket_id")
            .map_or_else(|| Cow::Owned(format!("t{}", e.timestamp_ms)), Cow::Borrowed);
        baskets.entry((&e.subject_id, basket)).or_default().insert(sku);
    }
    baskets
        .into_values()
        .map(|b| b.into_iter().map(str::to_string).collect())
        .collect()
}

impl KvCodec for CooccurrenceModel {
    const KIND: &'static str = "cooccurrence";

    fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::with_kind(Self::KIND);
        d.set("basket_total", self.basket_total);
        for (sku, c) in &self.item_counts {
            d.set(&format!("item.{sku}"), c);
        }
        for ((a, b), c) in &self.pair_counts {
            d.set(&format!("pair.{a}.{b}"), c);
        }
        d
    }

    fn from_kv(doc: &KvDoc) -> Result<Self, KvError> {
        let mut m = CooccurrenceModel {
            basket_total: doc.get("basket_total")?,
            ..Default::default()
        };
        for key in doc.keys() {
            if let Some(sku) = key.strip_prefix("item.") {
                m.item_counts.insert(sku.to_string(), doc.get(key)?);
            } else if let Some(pair) = key.strip_prefix("pair.") {
                let (a, b) = pair.split_once('.').ok_or_else(|| KvError::BadValue {
                    key: key.to_string(),
                    value: String::new(),
                })?;
                m.pair_counts.insert((a.to_string(), b.to_string()), doc.get(key)?);
            }
        }
        Ok(m)
    }
}

use std::collections::{BTreeMap, BTreeSet};

use log::warn;

use super::{Catalog, IndicatorTable, InteractionLog, UserSequence};
use crate::error::{GrapeError, Result};

/// Groups the log into chronological per-user sequences.
///
/// Timestamps are sorted stably, so ties keep input-file order. Users with
/// fewer than three interactions cannot be split and are dropped; the count
/// is returned alongside. Internal item ids follow ascending external id,
/// starting at 1 (0 is padding).
pub fn build_sequences(log: &InteractionLog, table: &IndicatorTable) -> Result<(Catalog, Vec<UserSequence>, usize)> {
    let item_ids: BTreeSet<u64> = log.interactions.iter().map(|r| r.item).collect();
    let n = table.specs.len();
    let mut external_ids = vec![0u64];
    let mut raw = vec![vec![0.0; n]];
    let mut internal = BTreeMap::new();
    for id in item_ids {
        let vals = table
            .rows
            .get(&id)
            .ok_or_else(|| GrapeError::MissingIndicators(vec![id]))?;
        internal.insert(id, external_ids.len());
        external_ids.push(id);
        raw.push(vals.clone());
    }

    let mut per_user: BTreeMap<u64, Vec<(i64, usize)>> = BTreeMap::new();
    for r in &log.interactions {
        per_user
            .entry(r.user)
            .or_default()
            .push((r.timestamp, internal[&r.item]));
    }

    let mut excluded = 0;
    let mut sequences = Vec::with_capacity(per_user.len());
    for (ext, mut events) in per_user {
        if events.len() < 3 {
            excluded += 1;
            continue;
        }
        events.sort_by_key(|&(ts, _)| ts);
        let items: Vec<usize> = events.into_iter().map(|(_, i)| i).collect();
        let indicators = (0..n)
            .map(|j| items.iter().map(|&i| raw[i][j]).collect())
            .collect();
        sequences.push(UserSequence {
            user: sequences.len(),
            external_id: ext,
            items,
            indicators,
        });
    }
    if excluded > 0 {
        warn!("{excluded} users with fewer than 3 interactions excluded");
    }
    if sequences.is_empty() {
        return Err(GrapeError::Ingestion("no user has at least 3 interactions".into()));
    }
    Ok((
        Catalog {
            external_ids,
            normalized: Vec::new(),
            raw,
        },
        sequences,
        excluded,
    ))
}

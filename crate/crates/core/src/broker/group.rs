use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsumerGroup {
    pub group_id: String,
    pub members: Vec<String>,
}

impl ConsumerGroup {
    pub fn new<I, S>(group_id: impl Into<String>, members: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            group_id: group_id.into(),
            members: members.into_iter().map(Into::into).collect(),
        }
    }
}

/// Deterministic round-robin: members sorted by id, partition `p` goes to
/// member `p mod m`. An empty member list yields an empty assignment.
pub fn assign_round_robin(partition_count: u32, members: &[String]) -> BTreeMap<u32, String> {
    let mut sorted: Vec<&String> = members.iter().collect();
    sorted.sort();
    sorted.dedup();
    if sorted.is_empty() {
        return BTreeMap::new();
    }
    (0..partition_count)
        .map(|p| (p, sorted[p as usize % sorted.len()].clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn members(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("m{i}")).collect()
    }

    #[test]
    fn bijective_when_counts_match() {
        let a = assign_round_robin(4, &members(4));
        let mut owners: Vec<_> = a.values().cloned().collect();
        owners.sort();
        owners.dedup();
        assert_eq!(a.len(), 4);
        assert_eq!(owners.len(), 4);
    }

    #[test]
    fn single_member_takes_everything() {
        let a = assign_round_robin(4, &members(1));
        assert!(a.values().all(|m| m == "m0"));
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn three_members_four_partitions() {
        // enumerated by hand: p0->m0, p1->m1, p2->m2, p3->m0
        let a = assign_round_robin(4, &members(3));
        let expected: BTreeMap<u32, String> = [(0, "m0"), (1, "m1"), (2, "m2"), (3, "m0")]
            .into_iter()
            .map(|(p, m)| (p, m.to_string()))
            .collect();
        assert_eq!(a, expected);
        // member order in the request does not matter
        let shuffled = vec!["m2".to_string(), "m0".to_string(), "m1".to_string()];
        assert_eq!(assign_round_robin(4, &shuffled), expected);
    }

    #[test]
    fn empty_group() {
        assert!(assign_round_robin(4, &[]).is_empty());
    }
}

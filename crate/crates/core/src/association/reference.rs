//! Cluster-by-attribute counts from an 837-respondent reference survey with
//! five clusters (sizes 377, 368, 41, 29, 22), and the lift values reported
//! for them to three decimals. Used to check the lift arithmetic end to end.

use std::collections::BTreeMap;

use super::{Attribute, Contingency, ParticipantProfile};

pub const CLUSTERS: [&str; 5] = ["A", "B", "C", "D", "E"];
pub const CLUSTER_SIZES: [u64; 5] = [377, 368, 41, 29, 22];
pub const N_TOTAL: u64 = 837;

/// One coarse attribute value with its per-cluster counts and published lifts.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceCell {
    pub attribute: &'static str,
    pub source: Attribute,
    pub value: &'static str,
    /// A questionnaire answer that falls in this coarse value under the
    /// default binarizations.
    pub raw_value: &'static str,
    pub counts: [u64; 5],
    pub lifts: [f64; 5],
}

const fn cell(
    attribute: &'static str,
    source: Attribute,
    value: &'static str,
    raw_value: &'static str,
    counts: [u64; 5],
    lifts: [f64; 5],
) -> ReferenceCell {
    ReferenceCell {
        attribute,
        source,
        value,
        raw_value,
        counts,
        lifts,
    }
}

pub const CELLS: [ReferenceCell; 17] = [
    cell("Work status", Attribute::Occupation, "Employee", "professional", [168, 179, 18, 15, 14], [0.947, 1.033, 0.933, 1.099, 1.352]),
    cell("Work status", Attribute::Occupation, "Employer", "managerial", [209, 189, 23, 14, 8], [1.047, 0.970, 1.060, 0.912, 0.687]),
    cell("Education level", Attribute::Education, "2 years or less", "high school graduate", [77, 72, 4, 4, 7], [1.042, 0.999, 0.498, 0.704, 1.624]),
    cell("Education level", Attribute::Education, "4 years or more", "4-year degree", [300, 296, 37, 25, 15], [0.990, 1.000, 1.122, 1.072, 0.848]),
    cell("Programming years", Attribute::ProgrammingYears, "5 years or less", "3 to 5 years", [246, 246, 18, 16, 14], [1.011, 1.036, 0.680, 0.855, 0.986]),
    cell("Programming years", Attribute::ProgrammingYears, "More than 5 years", "6 to 10 years", [131, 122, 23, 13, 8], [0.979, 0.934, 1.581, 1.263, 1.025]),
    cell("Income", Attribute::IncomeBand, "High", "$75,000 to $99,999", [113, 122, 13, 12, 14], [0.916, 1.013, 0.969, 1.264, 1.944]),
    cell("Income", Attribute::IncomeBand, "Low", "$50,000 to $74,999", [264, 246, 28, 17, 8], [1.041, 0.994, 1.015, 0.872, 0.541]),
    cell("Age", Attribute::AgeBand, "18 to 44", "25-34", [319, 323, 36, 24, 16], [0.986, 1.023, 1.024, 0.965, 0.848]),
    cell("Age", Attribute::AgeBand, "45 or more", "45-54", [58, 45, 5, 5, 6], [1.082, 0.860, 0.858, 1.213, 1.918]),
    cell("Gender", Attribute::Gender, "Female", "female", [120, 130, 14, 8, 6], [0.958, 1.064, 1.028, 0.831, 0.821]),
    cell("Gender", Attribute::Gender, "Male", "male", [257, 238, 27, 21, 16], [1.021, 0.968, 0.986, 1.084, 1.089]),
    cell("Race", Attribute::Race, "Non-White", "African American", [43, 34, 5, 6, 4], [1.038, 0.841, 1.109, 1.882, 1.654]),
    cell("Race", Attribute::Race, "White", "White", [334, 334, 36, 23, 18], [0.995, 1.020, 0.986, 0.891, 0.919]),
    cell("Political affiliation", Attribute::PoliticalAffiliation, "Democrat", "Democrat", [180, 184, 23, 12, 11], [0.975, 1.021, 1.145, 0.845, 1.021]),
    cell("Political affiliation", Attribute::PoliticalAffiliation, "Republican", "Republican", [153, 143, 14, 13, 8], [1.026, 0.983, 0.863, 1.134, 0.920]),
    cell("Political affiliation", Attribute::PoliticalAffiliation, "Other", "Independent", [44, 41, 4, 4, 3], [1.018, 0.971, 0.851, 1.203, 1.189]),
];

/// The reference counts as one contingency table per attribute.
pub fn contingencies() -> Vec<Contingency> {
    let mut by_attr: BTreeMap<&str, Vec<&ReferenceCell>> = BTreeMap::new();
    for c in &CELLS {
        by_attr.entry(c.attribute).or_default().push(c);
    }
    let mut order: Vec<&str> = Vec::new();
    for c in &CELLS {
        if !order.contains(&c.attribute) {
            order.push(c.attribute);
        }
    }
    order
        .into_iter()
        .map(|attr| {
            let cells = &by_attr[attr];
            Contingency {
                attribute: attr.to_string(),
                values: cells.iter().map(|c| c.value.to_string()).collect(),
                clusters: CLUSTERS.iter().map(|c| c.to_string()).collect(),
                counts: cells.iter().map(|c| c.counts.to_vec()).collect(),
            }
        })
        .collect()
}

/// Synthetic participants whose marginal counts per (attribute value,
/// cluster) equal the reference counts, plus their cluster assignments.
/// Attributes are filled independently, so only the pairwise counts are
/// meaningful.
pub fn participants() -> (Vec<ParticipantProfile>, BTreeMap<String, String>) {
    let mut profiles = Vec::new();
    let mut assignments = BTreeMap::new();
    for (c, &cluster) in CLUSTERS.iter().enumerate() {
        for i in 0..CLUSTER_SIZES[c] as usize {
            let id = format!("ref-{cluster}-{i:03}");
            assignments.insert(id.clone(), cluster.to_string());
            profiles.push(ParticipantProfile::new(id));
        }
    }
    let mut offset = 0;
    for (c, _) in CLUSTERS.iter().enumerate() {
        let members = &mut profiles[offset..offset + CLUSTER_SIZES[c] as usize];
        let mut next: BTreeMap<&str, usize> = BTreeMap::new();
        for cell in &CELLS {
            let start = next.entry(cell.attribute).or_insert(0);
            for p in &mut members[*start..*start + cell.counts[c] as usize] {
                p.values.insert(cell.source, cell.raw_value.to_string());
            }
            *start += cell.counts[c] as usize;
        }
        offset += CLUSTER_SIZES[c] as usize;
    }
    (profiles, assignments)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_add_up_to_cluster_sizes() {
        for t in contingencies() {
            for (c, size) in CLUSTER_SIZES.iter().enumerate() {
                assert_eq!(t.cluster_size(c), *size, "{}", t.attribute);
            }
            assert_eq!(t.total(), N_TOTAL);
        }
    }

    #[test]
    fn participants_match_counts() {
        let (profiles, assignments) = participants();
        assert_eq!(profiles.len(), 837);
        assert_eq!(assignments.len(), 837);
        let employers_in_e = profiles
            .iter()
            .filter(|p| assignments[&p.participant_id] == "E" && p.get(Attribute::Occupation) == Some("managerial"))
            .count();
        assert_eq!(employers_in_e, 8);
    }
}

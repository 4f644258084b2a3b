//! Offline pair-merging plan.
//!
//! Pairs whose difference vectors are parallel (or anti-parallel) and of equal
//! length see the same TDoA magnitude from every direction, so their PHAT
//! spectra can be summed before a single inverse transform. The plan groups
//! such pairs and records, per member, whether it points the same way as the
//! group's reference pair.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{dot, norm, PairSet, TdoaTable};

/// Default merge tolerance (absolute, m^2 for the parallelism test and m for
/// the length test).
pub const DEFAULT_EPSILON: f64 = 1e-4;

/// Orientation of a member pair relative to its group's reference pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn as_i32(self) -> i32 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    fn of(x: f64) -> Self {
        debug_assert!(x != 0.0, "parallel pairs cannot be orthogonal");
        if x > 0.0 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }
}

impl std::ops::Neg for Sign {
    type Output = Sign;

    fn neg(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

/// One set of parallel, equidistant pairs. `members[0]` is always the
/// reference pair with [`Sign::Plus`].
#[derive(Debug, Clone, PartialEq)]
pub struct MergeGroup {
    pub reference: usize,
    pub members: Vec<(usize, Sign)>,
}

impl MergeGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergePlan {
    groups: Vec<MergeGroup>,
    pairs: usize,
    epsilon: f64,
}

impl MergePlan {
    /// Greedy sweep over pairs in ascending index: the lowest unassigned pair
    /// seeds a group and every later unassigned pair that is parallel to it
    /// and of equal length joins with the sign of the dot product.
    ///
    /// `epsilon` is absolute (m² for the parallel test). Two equal-length
    /// baselines of length `L` at angle `θ` pass the parallel test whenever
    /// `L² (1 - cos θ) < epsilon`, so on very small apertures (a few cm) the
    /// default tolerance also merges pairs that are only nearly parallel. Run
    /// [`validate_plan`] against the lookup table when in doubt.
    pub fn build(pairs: &PairSet, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("merge tolerance must be positive, got {epsilon}")));
        }
        let norms: Vec<f64> = pairs.pairs().iter().map(|p| norm(&p.d)).collect();
        if let Some(p) = norms.iter().position(|&n| n == 0.0) {
            return Err(Error::Geometry(format!("pair {} has a zero-length baseline", p + 1)));
        }

        let mut assigned = vec![false; pairs.len()];
        let mut groups = Vec::new();
        for seed in 0..pairs.len() {
            if assigned[seed] {
                continue;
            }
            assigned[seed] = true;
            let d_ref = &pairs.get(seed).d;
            let mut members = vec![(seed, Sign::Plus)];
            for other in seed + 1..pairs.len() {
                if assigned[other] {
                    continue;
                }
                let d = &pairs.get(other).d;
                let projection = dot(d_ref, d);
                let parallel = (projection.abs() - norms[seed] * norms[other]).abs() < epsilon;
                let equidistant = (norms[seed] - norms[other]).abs() < epsilon;
                if parallel && equidistant {
                    assigned[other] = true;
                    members.push((other, Sign::of(projection)));
                }
            }
            groups.push(MergeGroup { reference: seed, members });
        }
        Ok(Self { groups, pairs: pairs.len(), epsilon })
    }

    /// A plan that keeps every pair on its own.
    pub fn singletons(pairs: usize) -> Self {
        let groups = (0..pairs).map(|p| MergeGroup { reference: p, members: vec![(p, Sign::Plus)] }).collect();
        Self { groups, pairs, epsilon: 0.0 }
    }

    /// Assembles a plan from explicit groups, checking that they partition
    /// `0..pairs` and that each reference is its group's lowest index.
    pub fn from_groups(groups: Vec<MergeGroup>, pairs: usize, epsilon: f64) -> Result<Self> {
        let mut seen = vec![false; pairs];
        for g in &groups {
            let lowest = g.members.iter().map(|m| m.0).min();
            if lowest != Some(g.reference) || g.members[0] != (g.reference, Sign::Plus) {
                return Err(Error::InvalidParameter(format!(
                    "group with reference {} must list it first with a plus sign and as its lowest index",
                    g.reference + 1
                )));
            }
            for &(p, _) in &g.members {
                if p >= pairs || std::mem::replace(&mut seen[p], true) {
                    return Err(Error::InvalidParameter(format!("pair {} missing or repeated", p + 1)));
                }
            }
        }
        if let Some(p) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidParameter(format!("pair {} is not assigned to any group", p + 1)));
        }
        Ok(Self { groups, pairs, epsilon })
    }

    pub fn groups(&self) -> &[MergeGroup] {
        &self.groups
    }

    /// Number of groups `Q`.
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Number of pairs `P` the plan covers.
    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn references(&self) -> impl Iterator<Item = usize> + '_ {
        self.groups.iter().map(|g| g.reference)
    }

    /// JSON-friendly view with one-based pair indices.
    pub fn to_json_groups(&self) -> Vec<JsonGroup> {
        self.groups
            .iter()
            .map(|g| JsonGroup {
                reference: g.reference + 1,
                members: g.members.iter().map(|&(p, s)| (p + 1, s.as_i32())).collect(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct JsonGroup {
    #[serde(rename = "ref")]
    pub reference: usize,
    pub members: Vec<(usize, i32)>,
}

/// Outcome of checking `delays[p][i] == sign * delays[ref][i]` exhaustively.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanValidation {
    Valid { checked: usize },
    Violation { group: usize, pair: usize, direction: usize, expected: i32, found: i32 },
}

impl PlanValidation {
    pub fn is_valid(&self) -> bool {
        matches!(self, PlanValidation::Valid { .. })
    }
}

/// Verifies the merged-TDoA identity for every grouped pair and direction,
/// stopping at the first violation (zero-based indices).
pub fn validate_plan(plan: &MergePlan, table: &TdoaTable) -> Result<PlanValidation> {
    if plan.pairs() != table.pairs() {
        return Err(Error::DimensionMismatch(format!(
            "plan covers {} pairs, table has {}",
            plan.pairs(),
            table.pairs()
        )));
    }
    let mut checked = 0;
    for (q, group) in plan.groups().iter().enumerate() {
        let reference = table.row(group.reference);
        for &(p, sign) in &group.members {
            let s = sign.as_i32();
            for (i, (&found, &r)) in table.row(p).iter().zip(reference).enumerate() {
                if found != s * r {
                    return Ok(PlanValidation::Violation { group: q, pair: p, direction: i, expected: s * r, found });
                }
            }
            checked += table.directions();
        }
    }
    Ok(PlanValidation::Valid { checked })
}

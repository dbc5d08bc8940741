use std::collections::BTreeMap;

use super::plan::{ExperimentPlan, Stage};

/// What a derived seed drives. Distinct roles never share a stream, so
/// adding a method leaves every other method's data and initialisation
/// untouched.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Data,
    Intervention,
    Method(String),
}

impl Role {
    fn tag(&self) -> String {
        match self {
            Role::Data => "data".into(),
            Role::Intervention => "intervention".into(),
            Role::Method(m) => format!("method:{m}"),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// 64-bit seed mix of `(base, stage, cell, replicate, role)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedDerivation {
    pub base: u64,
    pub stage: Stage,
}

impl SeedDerivation {
    pub fn new(base: u64, stage: Stage) -> Self {
        Self { base, stage }
    }

    pub fn derive(&self, cell: usize, replicate: usize, role: &Role) -> u64 {
        let mut h = splitmix64(self.base ^ fnv1a(self.stage.as_str()));
        h = splitmix64(h ^ cell as u64);
        h = splitmix64(h ^ (replicate as u64).rotate_left(32));
        splitmix64(h ^ fnv1a(&role.tag()))
    }

    /// Every seed the plan will derive, with the number of distinct values.
    pub fn collision_check(&self, plan: &ExperimentPlan) -> CollisionReport {
        let mut seen: BTreeMap<u64, (usize, usize, Role)> = BTreeMap::new();
        let mut collisions = Vec::new();
        let n_cells = plan.cells.len() + plan.datasets.len();
        let mut total = 0;
        for cell in 0..n_cells {
            let mut roles = vec![Role::Data, Role::Intervention];
            let methods = match plan.cells.get(cell) {
                Some(c) => plan.cell_methods(c),
                None => plan.methods.iter().map(|m| m.spec()).collect(),
            };
            roles.extend(methods.iter().map(|m| Role::Method(m.label().to_string())));
            for rep in 0..plan.seeds {
                for role in &roles {
                    total += 1;
                    let s = self.derive(cell, rep, role);
                    if let Some(prev) = seen.insert(s, (cell, rep, role.clone())) {
                        collisions.push((prev, (cell, rep, role.clone())));
                    }
                }
            }
        }
        CollisionReport { total, collisions }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionReport {
    pub total: usize,
    pub collisions: Vec<((usize, usize, Role), (usize, usize, Role))>,
}

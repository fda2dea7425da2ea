//! Seeded, stratified, subject-disjoint role assignment.
//!
//! Subjects (not samples) are partitioned into test / val / stop / training
//! pools per class, so no subject ever spans a train-side and a test-side
//! role. The labeled subset is then drawn from the training pool; everything
//! left over, plus records that carry no label at all, becomes unlabeled.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};

/// The five dataset roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Labeled,
    Unlabeled,
    Val,
    Stop,
    Test,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::Labeled,
        Role::Unlabeled,
        Role::Val,
        Role::Stop,
        Role::Test,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Role::Labeled => "labeled",
            Role::Unlabeled => "unlabeled",
            Role::Val => "val",
            Role::Stop => "stop",
            Role::Test => "test",
        }
    }
}

/// Split proportions and seeding. `val`/`stop`/`test` fractions apply to the
/// whole manifest; `labeled_fraction` applies to what remains (the training
/// pool).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub labeled_fraction: f64,
    pub val_fraction: f64,
    pub stop_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
    pub num_repeats: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            labeled_fraction: 0.1,
            val_fraction: 0.1,
            stop_fraction: 0.1,
            test_fraction: 0.2,
            seed: 0,
            num_repeats: 5,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.labeled_fraction && self.labeled_fraction <= 1.0) {
            return Err(Error::InvalidConfig(
                "labeled_fraction must be in (0,1]".into(),
            ));
        }
        for (name, f) in [
            ("val_fraction", self.val_fraction),
            ("stop_fraction", self.stop_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(0.0 < f && f < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must be in (0,1)")));
            }
        }
        if self.val_fraction + self.stop_fraction + self.test_fraction >= 1.0 {
            return Err(Error::InvalidConfig(
                "val + stop + test fractions must leave a training pool".into(),
            ));
        }
        if self.num_repeats == 0 {
            return Err(Error::InvalidConfig("num_repeats must be >= 1".into()));
        }
        Ok(())
    }
}

/// One repeat's role map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub repeat: usize,
    /// Sample ids per role, each list sorted ascending.
    pub roles: BTreeMap<Role, Vec<String>>,
}

impl SplitAssignment {
    pub fn ids(&self, role: Role) -> &[String] {
        self.roles.get(&role).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Serializes as `{"repeat": r, "roles": {"labeled": [...], ...}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut roles = serde_json::Map::new();
        for role in Role::ALL {
            roles.insert(
                role.name().to_string(),
                serde_json::json!(self.ids(role)),
            );
        }
        serde_json::json!({ "repeat": self.repeat, "roles": roles })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let repeat = value
            .get("repeat")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::InvalidConfig("split json missing `repeat`".into()))?
            as usize;
        let roles_obj = value
            .get("roles")
            .and_then(|v| v.as_object())
            .ok_or_else(|| Error::InvalidConfig("split json missing `roles`".into()))?;
        let mut roles = BTreeMap::new();
        for role in Role::ALL {
            let ids = roles_obj
                .get(role.name())
                .and_then(|v| v.as_array())
                .map(|arr| {
                    arr.iter()
                        .filter_map(|v| v.as_str().map(String::from))
                        .collect::<Vec<_>>()
                })
                .unwrap_or_default();
            roles.insert(role, ids);
        }
        Ok(Self { repeat, roles })
    }
}

fn rounded(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 0.5).floor() as usize
}

/// Generates `num_repeats` assignments; repeat `r` draws from the derived
/// seed `seed + r`, so the list is reproducible element by element.
pub fn make_splits(
    manifest: &DatasetManifest,
    cfg: &SplitConfig,
) -> Result<Vec<SplitAssignment>> {
    cfg.validate()?;
    (0..cfg.num_repeats)
        .map(|r| make_one_split(manifest, cfg, r))
        .collect()
}

fn make_one_split(
    manifest: &DatasetManifest,
    cfg: &SplitConfig,
    repeat: usize,
) -> Result<SplitAssignment> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(repeat as u64));

    // Group labeled records into subjects, per class. A subject whose
    // records span classes is stratified under its first record's class.
    // Label-less records go straight to the unlabeled role.
    let mut roles: BTreeMap<Role, Vec<String>> =
        Role::ALL.iter().map(|r| (*r, Vec::new())).collect();
    let mut subjects_by_class: BTreeMap<usize, BTreeMap<&str, Vec<&str>>> = BTreeMap::new();
    for record in &manifest.records {
        match record.label {
            None => roles
                .get_mut(&Role::Unlabeled)
                .unwrap()
                .push(record.sample_id.clone()),
            Some(label) => {
                let class_for_subject = subjects_by_class
                    .iter()
                    .find_map(|(c, subjects)| {
                        subjects.contains_key(record.subject_id.as_str()).then_some(*c)
                    })
                    .unwrap_or(label);
                subjects_by_class
                    .entry(class_for_subject)
                    .or_default()
                    .entry(record.subject_id.as_str())
                    .or_default()
                    .push(record.sample_id.as_str());
            }
        }
    }

    for class in 0..manifest.num_classes() {
        let Some(subjects) = subjects_by_class.get(&class) else {
            return Err(Error::InfeasibleSplit {
                class: manifest.class_names[class].clone(),
                role: "any".into(),
                available: 0,
                needed: 1,
            });
        };
        let n_class: usize = subjects.values().map(|v| v.len()).sum();
        let mut order: Vec<&str> = subjects.keys().copied().collect();
        order.shuffle(&mut rng);

        let mut cursor = 0usize;
        let take_records = |target: usize, order: &[&str], cursor: &mut usize| -> Vec<String> {
            let mut taken = Vec::new();
            while taken.len() < target && *cursor < order.len() {
                for sid in &subjects[order[*cursor]] {
                    taken.push(sid.to_string());
                }
                *cursor += 1;
            }
            taken
        };

        let assign = |role: Role, fraction: f64, cursor: &mut usize| -> Result<Vec<String>> {
            let target = rounded(fraction, n_class);
            let taken = take_records(target, &order, cursor);
            if taken.len() < target {
                return Err(Error::InfeasibleSplit {
                    class: manifest.class_names[class].clone(),
                    role: role.name().into(),
                    available: taken.len(),
                    needed: target,
                });
            }
            Ok(taken)
        };

        let test = assign(Role::Test, cfg.test_fraction, &mut cursor)?;
        let val = assign(Role::Val, cfg.val_fraction, &mut cursor)?;
        let stop = assign(Role::Stop, cfg.stop_fraction, &mut cursor)?;

        // Remaining subjects form the training pool.
        let mut pool: Vec<String> = Vec::new();
        while cursor < order.len() {
            for sid in &subjects[order[cursor]] {
                pool.push(sid.to_string());
            }
            cursor += 1;
        }
        if pool.is_empty() {
            return Err(Error::InfeasibleSplit {
                class: manifest.class_names[class].clone(),
                role: "labeled".into(),
                available: 0,
                needed: 1,
            });
        }
        let labeled_target = rounded(cfg.labeled_fraction, pool.len()).max(1);
        let labeled: Vec<String> = pool[..labeled_target.min(pool.len())].to_vec();
        let unlabeled: Vec<String> = pool[labeled_target.min(pool.len())..].to_vec();

        roles.get_mut(&Role::Test).unwrap().extend(test);
        roles.get_mut(&Role::Val).unwrap().extend(val);
        roles.get_mut(&Role::Stop).unwrap().extend(stop);
        roles.get_mut(&Role::Labeled).unwrap().extend(labeled);
        roles.get_mut(&Role::Unlabeled).unwrap().extend(unlabeled);
    }

    for ids in roles.values_mut() {
        ids.sort();
    }
    Ok(SplitAssignment { repeat, roles })
}

//! Seeded synthetic participants that produce task logs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::{log_file_name, SessionExport, SessionManifest};
use crate::geometry::{rotation_group, CubeCoord, Polycube};
use crate::measures::{initial_cube_ids, Action, Outcome, TaskEvent, TaskRecord};
use crate::similarity::best_similarity;
use crate::tasks::{next_guidance_cube, validate_task, Guidance, TaskSpec, TaskViolation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    /// Every action raises similarity.
    MonotoneBuilder,
    /// Builds toward the goal but detours through wrong cubes and undoes them.
    ErraticBuilder,
    /// Monotone, with long pauses between actions.
    SlowBuilder,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::MonotoneBuilder => "monotone",
            AgentKind::ErraticBuilder => "erratic",
            AgentKind::SlowBuilder => "slow",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "monotone" | "monotone_builder" | "monotonebuilder" => Ok(AgentKind::MonotoneBuilder),
            "erratic" | "erratic_builder" | "erraticbuilder" => Ok(AgentKind::ErraticBuilder),
            "slow" | "slow_builder" | "slowbuilder" => Ok(AgentKind::SlowBuilder),
            other => Err(format!("unknown agent kind `{other}` (expected monotone, erratic or slow)")),
        }
    }
}

/// Agent behaviour plus its inter-event delay range, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub kind: AgentKind,
    pub seed: u64,
    pub delay_min_ms: u64,
    pub delay_max_ms: u64,
}

impl AgentProfile {
    pub fn new(kind: AgentKind, seed: u64) -> Self {
        let (delay_min_ms, delay_max_ms) = match kind {
            AgentKind::MonotoneBuilder => (2_000, 8_000),
            AgentKind::ErraticBuilder => (3_000, 12_000),
            AgentKind::SlowBuilder => (8_000, 20_000),
        };
        AgentProfile { kind, seed, delay_min_ms, delay_max_ms }
    }

    pub fn participant_code(&self) -> String {
        format!("{}-{}", self.kind, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimulateError {
    #[error("task {task_id} is invalid: {violations:?}")]
    InvalidTask { task_id: String, violations: Vec<TaskViolation> },
    #[error("agent made no progress on task {0}")]
    Stuck(String),
}

/// Probability of an extra detour after any progress step.
const ERRATIC_DETOUR_RATE: f64 = 0.25;

struct Builder {
    rng: ChaCha8Rng,
    profile: AgentProfile,
    cells: Polycube,
    ids: BTreeMap<CubeCoord, u32>,
    next_id: u32,
    t_ms: u64,
    events: Vec<TaskEvent>,
}

impl Builder {
    fn new(profile: AgentProfile, task_index: usize, initial: &Polycube) -> Self {
        // one independent stream per task keeps logs stable when tasks are added
        let seed = profile.seed ^ (task_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let ids = initial_cube_ids(initial);
        Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            profile,
            cells: initial.clone(),
            next_id: initial.len() as u32,
            ids,
            t_ms: 0,
            events: Vec::new(),
        }
    }

    fn act(&mut self, action: Action, cell: CubeCoord) {
        let (lo, hi) = (self.profile.delay_min_ms, self.profile.delay_max_ms.max(self.profile.delay_min_ms + 1));
        self.t_ms += self.rng.random_range(lo..=hi).max(1);
        let cube_id = match action {
            Action::Connect => {
                let id = self.next_id;
                self.next_id += 1;
                self.ids.insert(cell, id);
                self.cells.insert(cell);
                id
            }
            Action::Disconnect => {
                self.cells.remove(cell);
                self.ids.remove(&cell).unwrap_or(u32::MAX)
            }
        };
        self.events.push(TaskEvent::new(self.t_ms as f64 / 1000.0, action, cell, cube_id));
    }

    /// All legal single-cube moves with the score they lead to.
    fn moves(&self, proto: &Polycube) -> Vec<(Action, CubeCoord, Ratio<i64>)> {
        let mut out = Vec::new();
        for c in self.cells.frontier() {
            let mut next = self.cells.clone();
            next.insert(c);
            out.push((Action::Connect, c, score(&next, proto)));
        }
        for c in self.cells.iter() {
            if c != CubeCoord::ORIGIN && self.cells.can_remove(c) {
                let mut next = self.cells.clone();
                next.remove(c);
                out.push((Action::Disconnect, c, score(&next, proto)));
            }
        }
        out
    }

    /// One step toward `target`; `false` once the goal is met.
    fn progress(&mut self, spec: &TaskSpec, target: &TaskSpec) -> Result<bool, SimulateError> {
        if best_similarity(&self.cells, &spec.prototype).expect("prototype validated").is_perfect() {
            return Ok(false);
        }
        match next_guidance_cube(target, &self.cells).ok().flatten() {
            Some(Guidance::Add { cell }) => self.act(Action::Connect, cell),
            Some(Guidance::Remove { cell }) => self.act(Action::Disconnect, cell),
            None => return Err(SimulateError::Stuck(spec.task_id.clone())),
        }
        Ok(true)
    }

    /// A wrong move followed by its exact undo. Returns whether one was found.
    fn detour(&mut self, proto: &Polycube) -> bool {
        let now = score(&self.cells, proto);
        let worse: Vec<(Action, CubeCoord)> =
            self.moves(proto).into_iter().filter(|m| m.2 < now).map(|(a, c, _)| (a, c)).collect();
        let Some(&(a, c)) = worse.choose(&mut self.rng) else {
            return false;
        };
        self.act(a, c);
        let undo = match a {
            Action::Connect => Action::Disconnect,
            Action::Disconnect => Action::Connect,
        };
        self.act(undo, c);
        true
    }
}

/// The rigid copy of the prototype, with one of its cells on the base, that
/// shares the most cells with `initial`. Ties are broken at random.
fn target_copy(initial: &Polycube, proto: &Polycube, rng: &mut ChaCha8Rng) -> Polycube {
    let mut best: Vec<Polycube> = Vec::new();
    let mut best_overlap = 0;
    for r in rotation_group() {
        for q in proto.iter() {
            let copy = proto.transform(r, CubeCoord::ORIGIN - r.apply(q));
            let k = copy.intersection_len(initial);
            if k > best_overlap || best.is_empty() {
                best_overlap = k;
                best.clear();
            }
            if k == best_overlap && !best.contains(&copy) {
                best.push(copy);
            }
        }
    }
    best.choose(rng).cloned().expect("prototype is not empty")
}

fn score(s: &Polycube, p: &Polycube) -> Ratio<i64> {
    best_similarity(s, p).expect("prototype validated").ratio()
}

/// Plays one task to completion.
pub fn simulate_task(spec: &TaskSpec, profile: &AgentProfile, task_index: usize, participant_code: &str) -> Result<TaskRecord, SimulateError> {
    validate_task(spec).map_err(|violations| SimulateError::InvalidTask { task_id: spec.task_id.clone(), violations })?;
    let mut b = Builder::new(*profile, task_index, &spec.initial);
    let limit = 4 * (spec.prototype.len() + spec.initial.len()) + 16;
    let mut owed_detour = profile.kind == AgentKind::ErraticBuilder && spec.prototype.len() >= 3;
    let mut target = spec.clone();
    target.guided = true;
    target.prototype = target_copy(&spec.initial, &spec.prototype, &mut b.rng);
    let mut steps = 0;
    while b.progress(spec, &target)? {
        steps += 1;
        if steps > limit {
            return Err(SimulateError::Stuck(spec.task_id.clone()));
        }
        if profile.kind == AgentKind::ErraticBuilder {
            let roll = b.rng.random_bool(ERRATIC_DETOUR_RATE);
            if (owed_detour || roll) && b.detour(&spec.prototype) {
                owed_detour = false;
            }
        }
    }
    Ok(TaskRecord {
        task_id: spec.task_id.clone(),
        prototype_id: spec.prototype_id.clone(),
        participant_code: participant_code.to_owned(),
        initial: spec.initial.clone(),
        events: b.events,
        outcome: Some(Outcome::CompletedByParticipant),
    })
}

/// Plays every task in order and packages the result as a session directory.
pub fn simulate_session(tasks: &[TaskSpec], profile: &AgentProfile) -> Result<SessionExport, SimulateError> {
    let code = profile.participant_code();
    let records = tasks
        .iter()
        .enumerate()
        .map(|(i, spec)| simulate_task(spec, profile, i, &code))
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = SessionManifest {
        session_id: format!("sim-{code}"),
        participant_code: code,
        group: Some(profile.kind.to_string()),
        created_at: 0,
        logs: tasks.iter().enumerate().map(|(i, t)| log_file_name(i, &t.task_id)).collect(),
        task_started_at: vec![0; tasks.len()],
        tasks: tasks.to_vec(),
        aborted: false,
    };
    Ok(SessionExport { manifest, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ShapeType;
    use crate::measures::{compute_measures, replay};
    use crate::tasks::TaskKind;

    fn seven_cube_3d() -> Polycube {
        Polycube::from_triples([(0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1), (2, 1, 1), (0, 0, 1), (0, 0, 2)])
    }

    #[test]
    fn fixture_is_seven_cube_3d() {
        let p = seven_cube_3d();
        assert_eq!(p.len(), 7);
        assert_eq!(p.shape_type().unwrap(), ShapeType::ThreeD);
        assert!(p.is_connected().unwrap());
    }

    #[test]
    fn monotone_reaches_goal_without_crossings() {
        for kind in [TaskKind::Match, TaskKind::Follow, TaskKind::Reshape] {
            let spec = TaskSpec::new("t", kind, "p", seven_cube_3d());
            for seed in 0..20 {
                let rec = simulate_task(&spec, &AgentProfile::new(AgentKind::MonotoneBuilder, seed), 0, "m").unwrap();
                let m = compute_measures(&rec, &spec.prototype).unwrap();
                assert_eq!(m.similarity, 100.0, "{kind} seed {seed}");
                assert_eq!(m.zero_crossings, 0, "{kind} seed {seed}");
                assert!(m.derivative > 0.0);
            }
        }
    }

    #[test]
    fn erratic_has_crossings() {
        let spec = TaskSpec::new("t", TaskKind::Match, "p", seven_cube_3d());
        for seed in 0..20 {
            let rec = simulate_task(&spec, &AgentProfile::new(AgentKind::ErraticBuilder, seed), 0, "e").unwrap();
            let m = compute_measures(&rec, &spec.prototype).unwrap();
            assert!(m.zero_crossings >= 1, "seed {seed}");
            assert_eq!(m.similarity, 100.0);
        }
    }

    #[test]
    fn same_seed_same_log() {
        let spec = TaskSpec::new("t", TaskKind::Match, "p", seven_cube_3d());
        let profile = AgentProfile::new(AgentKind::ErraticBuilder, 7);
        assert_eq!(simulate_task(&spec, &profile, 0, "x").unwrap(), simulate_task(&spec, &profile, 0, "x").unwrap());
    }

    #[test]
    fn random_prototypes_stay_valid() {
        for seed in 0..60 {
            let n = 1 + (seed as usize % 10);
            let proto = crate::protogen::random_polycube(n, seed);
            for kind in [TaskKind::Match, TaskKind::Reshape] {
                let spec = TaskSpec::new("t", kind, "p", proto.clone());
                for agent in [AgentKind::MonotoneBuilder, AgentKind::ErraticBuilder] {
                    let rec = simulate_task(&spec, &AgentProfile::new(agent, seed), 0, "x").unwrap();
                    replay(&rec).unwrap();
                    let m = compute_measures(&rec, &spec.prototype);
                    if let Ok(m) = m {
                        assert_eq!(m.similarity, 100.0);
                        if agent == AgentKind::MonotoneBuilder {
                            assert_eq!(m.zero_crossings, 0, "seed {seed} {kind}");
                        } else if n >= 3 {
                            assert!(m.zero_crossings >= 1, "seed {seed} {kind}");
                        }
                    }
                }
            }
        }
    }
}

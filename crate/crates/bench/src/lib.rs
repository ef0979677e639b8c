//! Shared fixtures for the benchmarks.

use cogcubes_core::protogen::random_polycube;
use cogcubes_core::{simulate_task, AgentKind, AgentProfile, Polycube, TaskKind, TaskRecord, TaskSpec};

/// Structure/prototype pairs of the given size, fixed by `seed`.
pub fn pairs(cells: usize, count: usize, seed: u64) -> Vec<(Polycube, Polycube)> {
    (0..count as u64)
        .map(|k| (random_polycube(cells, seed ^ (2 * k)), random_polycube(cells, seed ^ (2 * k + 1))))
        .collect()
}

/// A finished erratic build of a `cells`-cube prototype.
pub fn erratic_record(cells: usize, seed: u64) -> (TaskRecord, Polycube) {
    let proto = random_polycube(cells, seed);
    let spec = TaskSpec::new("bench", TaskKind::Match, "bench", proto.clone());
    let record = simulate_task(&spec, &AgentProfile::new(AgentKind::ErraticBuilder, seed), 0, "bench").expect("simulation succeeds");
    (record, proto)
}

//! Polycube geometry, structural similarity scoring, cube-network topology and
//! per-task process measures for tangible cube construction assessments.

pub mod agents;
pub mod analysis;
pub mod formats;
pub mod geometry;
pub mod measures;
pub mod network;
pub mod protogen;
pub mod similarity;
pub mod tasks;

pub use agents::{simulate_session, simulate_task, AgentKind, AgentProfile, SimulateError};
pub use analysis::{AnalysisError, Factor, Measure, MeasureRow, MeasureTable, SequenceTree};
pub use formats::{FormatError, PrototypeFile, SessionExport, SessionManifest};
pub use geometry::{canonical_form, is_connected, normalize, rotation_group, shape_type, transform};
pub use geometry::{BoundingBox, CubeCoord, GeometryError, Polycube, Rotation, ShapeType};
pub use measures::{compute_measures, replay, Action, MeasureError, MeasureSet, Outcome, ReplayError, TaskEvent, TaskRecord};
pub use network::{CubeNetwork, CubeUnit, Face, NetEvent, NetEventKind, NetworkError, TopologyGraph};
pub use similarity::{best_similarity, score_given_overlap, Placement, SimilarityError, SimilarityScore};
pub use tasks::{next_guidance_cube, validate_task, Guidance, Phase, SessionState, TaskError, TaskKind, TaskSpec};

//! Simulated cube network: units with identified faces, face-to-face links,
//! broadcast discovery from the base cube, and shape reconstruction from the
//! sensed topology.
//!
//! Every cube shares the global orientation, so a link from face `+d` of one
//! cube always lands on face `-d` of its neighbour and the topology alone
//! fixes each cube's cell. Attaching a cube snaps every face that touches an
//! existing cube, so link connectivity and face adjacency of cells coincide.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CubeCoord, Polycube};
use crate::measures::{Action, TaskEvent};

pub const BASE_CUBE: u32 = 0;

/// Spacing between the per-cube events of one cascade, in seconds.
pub const CASCADE_STEP: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Face {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::PosX, Face::NegX, Face::PosY, Face::NegY, Face::PosZ, Face::NegZ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Face {
        match self {
            Face::PosX => Face::NegX,
            Face::NegX => Face::PosX,
            Face::PosY => Face::NegY,
            Face::NegY => Face::PosY,
            Face::PosZ => Face::NegZ,
            Face::NegZ => Face::PosZ,
        }
    }

    pub fn unit(self) -> CubeCoord {
        match self {
            Face::PosX => CubeCoord::new(1, 0, 0),
            Face::NegX => CubeCoord::new(-1, 0, 0),
            Face::PosY => CubeCoord::new(0, 1, 0),
            Face::NegY => CubeCoord::new(0, -1, 0),
            Face::PosZ => CubeCoord::new(0, 0, 1),
            Face::NegZ => CubeCoord::new(0, 0, -1),
        }
    }

    /// The face pointing from `from` to an adjacent `to`.
    pub fn between(from: CubeCoord, to: CubeCoord) -> Option<Face> {
        Face::ALL.into_iter().find(|f| from + f.unit() == to)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Face::PosX => "+X",
            Face::NegX => "-X",
            Face::PosY => "+Y",
            Face::NegY => "-Y",
            Face::PosZ => "+Z",
            Face::NegZ => "-Z",
        }
    }
}

impl fmt::Display for Face {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Face {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Face::ALL.into_iter().find(|f| f.as_str() == s).ok_or_else(|| format!("unknown face `{s}`"))
    }
}

impl Serialize for Face {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Face {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CubeUnit {
    pub cube_id: u32,
    /// Indexed by [`Face::index`].
    pub face_ids: [u32; 6],
}

impl CubeUnit {
    /// A unit whose face IDs are derived from its cube ID, unique across any
    /// set of cubes with unique IDs.
    pub fn new(cube_id: u32) -> Self {
        let base = cube_id * 6;
        Self { cube_id, face_ids: [base, base + 1, base + 2, base + 3, base + 4, base + 5] }
    }

    pub fn base() -> Self {
        Self::new(BASE_CUBE)
    }

    pub fn face_id(&self, face: Face) -> u32 {
        self.face_ids[face.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FaceRef {
    pub cube_id: u32,
    pub face: Face,
}

impl FaceRef {
    pub fn new(cube_id: u32, face: Face) -> Self {
        Self { cube_id, face }
    }
}

impl fmt::Display for FaceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.cube_id, self.face.as_str())
    }
}

/// An unordered pair of joined faces, stored with the smaller end first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Link {
    a: FaceRef,
    b: FaceRef,
}

impl Link {
    pub fn new(x: FaceRef, y: FaceRef) -> Self {
        if x <= y { Link { a: x, b: y } } else { Link { a: y, b: x } }
    }

    pub fn ends(&self) -> (FaceRef, FaceRef) {
        (self.a, self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetworkError {
    #[error("face {face} of cube {cube_id} is already linked")]
    FaceOccupied { cube_id: u32, face: Face },
    #[error("cell {cell} is already filled by cube {by}")]
    CellOccupied { cell: CubeCoord, by: u32 },
    #[error("host cube {0} is not reachable from the base")]
    HostUnreachable(u32),
    #[error("the base cube cannot be detached")]
    BaseRemoval,
    #[error("cube {0} is not in the network")]
    UnknownCube(u32),
    #[error("cube {0} is already in the network")]
    DuplicateCube(u32),
    #[error("cubes {first} and {second} both resolve to cell {cell}")]
    Collision { cell: CubeCoord, first: u32, second: u32 },
    #[error("a link references cube {0}, which is not registered")]
    DanglingLink(u32),
    #[error("faces {0} and {1} cannot be joined")]
    InvalidLink(FaceRef, FaceRef),
    #[error("cube {cube_id} was reported at {reported} but sits at {actual}")]
    CellMismatch { cube_id: u32, reported: CubeCoord, actual: CubeCoord },
    #[error("removing cube {0} alone would cut other cubes off from the base")]
    WouldOrphan(u32),
    #[error("discovery reply disagrees with the replayed topology")]
    DiscoveryMismatch,
    #[error("connect event for cube {0} names no host face")]
    MissingFace(u32),
}

impl NetworkError {
    pub fn code(&self) -> &'static str {
        match self {
            NetworkError::FaceOccupied { .. } => "FaceOccupied",
            NetworkError::CellOccupied { .. } => "CellOccupied",
            NetworkError::HostUnreachable(_) => "HostUnreachable",
            NetworkError::BaseRemoval => "BaseRemoval",
            NetworkError::UnknownCube(_) => "UnknownCube",
            NetworkError::DuplicateCube(_) => "DuplicateCube",
            NetworkError::Collision { .. } => "Collision",
            NetworkError::DanglingLink(_) => "DanglingLink",
            NetworkError::InvalidLink(..) => "InvalidLink",
            NetworkError::CellMismatch { .. } => "CellMismatch",
            NetworkError::WouldOrphan(_) => "WouldOrphan",
            NetworkError::DiscoveryMismatch => "DiscoveryMismatch",
            NetworkError::MissingFace(_) => "MissingFace",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetEventKind {
    Connect,
    Disconnect,
    DiscoveryReply,
}

/// Host side of a new connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HostFace {
    pub host: u32,
    pub face: Face,
}

/// A sensed network event, serialized like a task event plus a `face` field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetEvent {
    pub t: f64,
    pub action: NetEventKind,
    pub x: i32,
    pub y: i32,
    pub z: i32,
    pub cube_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face: Option<HostFace>,
    /// Discovery replies list every reachable cube with its cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cubes: Option<Vec<(u32, CubeCoord)>>,
}

impl NetEvent {
    pub fn cell(&self) -> CubeCoord {
        CubeCoord::new(self.x, self.y, self.z)
    }

    fn at(t: f64, action: NetEventKind, cube_id: u32, cell: CubeCoord) -> Self {
        NetEvent { t, action, x: cell.x, y: cell.y, z: cell.z, cube_id, face: None, cubes: None }
    }

    /// The measures-module view of this event, if it is a structural change.
    pub fn to_task_event(&self) -> Option<TaskEvent> {
        let action = match self.action {
            NetEventKind::Connect => Action::Connect,
            NetEventKind::Disconnect => Action::Disconnect,
            NetEventKind::DiscoveryReply => return None,
        };
        Some(TaskEvent::new(self.t, action, self.cell(), self.cube_id))
    }
}

/// Drops network-only fields and discovery traffic.
pub fn to_task_events(stream: &[NetEvent]) -> Vec<TaskEvent> {
    stream.iter().filter_map(NetEvent::to_task_event).collect()
}

/// Shape recovered from a topology, with each reachable cube's cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reconstruction {
    pub shape: Polycube,
    pub cells: BTreeMap<u32, CubeCoord>,
}

impl Reconstruction {
    pub fn cube_at(&self, cell: CubeCoord) -> Option<u32> {
        self.cells.iter().find(|(_, &c)| c == cell).map(|(&id, _)| id)
    }
}

/// Registered cubes and the links between their faces. Cube 0 is the base.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologyGraph {
    cubes: BTreeMap<u32, CubeUnit>,
    links: BTreeSet<Link>,
}

impl Default for TopologyGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl TopologyGraph {
    /// A network holding only the base cube.
    pub fn new() -> Self {
        Self { cubes: BTreeMap::from([(BASE_CUBE, CubeUnit::base())]), links: BTreeSet::new() }
    }

    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.links.iter()
    }

    pub fn cube_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.cubes.keys().copied()
    }

    pub fn contains_cube(&self, id: u32) -> bool {
        self.cubes.contains_key(&id)
    }

    pub fn register(&mut self, unit: CubeUnit) -> Result<(), NetworkError> {
        if self.cubes.contains_key(&unit.cube_id) {
            return Err(NetworkError::DuplicateCube(unit.cube_id));
        }
        self.cubes.insert(unit.cube_id, unit);
        Ok(())
    }

    fn linked(&self, end: FaceRef) -> Option<FaceRef> {
        self.links.iter().find_map(|l| {
            if l.a == end {
                Some(l.b)
            } else if l.b == end {
                Some(l.a)
            } else {
                None
            }
        })
    }

    pub fn is_face_free(&self, end: FaceRef) -> bool {
        self.linked(end).is_none()
    }

    /// Joins two faces directly, without geometric checks. Used to describe
    /// arbitrary sensed topologies; [`TopologyGraph::attach`] is the checked path.
    pub fn insert_link(&mut self, x: FaceRef, y: FaceRef) -> Result<(), NetworkError> {
        if x.face.opposite() != y.face || x.cube_id == y.cube_id {
            return Err(NetworkError::InvalidLink(x, y));
        }
        for end in [x, y] {
            if !self.is_face_free(end) {
                return Err(NetworkError::FaceOccupied { cube_id: end.cube_id, face: end.face });
            }
        }
        self.links.insert(Link::new(x, y));
        Ok(())
    }

    /// Neighbours of each cube, ordered by the local face they hang off.
    fn adjacency(&self) -> BTreeMap<u32, Vec<(Face, u32)>> {
        let mut adj: BTreeMap<u32, Vec<(Face, u32)>> = BTreeMap::new();
        for l in &self.links {
            adj.entry(l.a.cube_id).or_default().push((l.a.face, l.b.cube_id));
            adj.entry(l.b.cube_id).or_default().push((l.b.face, l.a.cube_id));
        }
        for v in adj.values_mut() {
            v.sort();
        }
        adj
    }

    fn bfs_distances(&self, skip: Option<u32>) -> BTreeMap<u32, usize> {
        let adj = self.adjacency();
        let mut dist = BTreeMap::from([(BASE_CUBE, 0usize)]);
        let mut queue = VecDeque::from([BASE_CUBE]);
        while let Some(cur) = queue.pop_front() {
            let d = dist[&cur];
            for &(_, nb) in adj.get(&cur).map(Vec::as_slice).unwrap_or(&[]) {
                if Some(nb) == skip || dist.contains_key(&nb) {
                    continue;
                }
                dist.insert(nb, d + 1);
                queue.push_back(nb);
            }
        }
        dist
    }

    /// Cube IDs the base can reach, in breadth-first order with neighbours
    /// visited by face order.
    pub fn broadcast_scan(&self) -> Vec<u32> {
        let adj = self.adjacency();
        let mut seen = BTreeSet::from([BASE_CUBE]);
        let mut order = vec![BASE_CUBE];
        let mut queue = VecDeque::from([BASE_CUBE]);
        while let Some(cur) = queue.pop_front() {
            for &(_, nb) in adj.get(&cur).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(nb) {
                    order.push(nb);
                    queue.push_back(nb);
                }
            }
        }
        order
    }

    pub fn reconstruct_shape(&self) -> Result<Reconstruction, NetworkError> {
        for l in &self.links {
            for end in [l.a, l.b] {
                if !self.cubes.contains_key(&end.cube_id) {
                    return Err(NetworkError::DanglingLink(end.cube_id));
                }
            }
        }
        let adj = self.adjacency();
        let mut cells = BTreeMap::from([(BASE_CUBE, CubeCoord::ORIGIN)]);
        let mut occupant = BTreeMap::from([(CubeCoord::ORIGIN, BASE_CUBE)]);
        let mut queue = VecDeque::from([BASE_CUBE]);
        while let Some(cur) = queue.pop_front() {
            let here = cells[&cur];
            for &(face, nb) in adj.get(&cur).map(Vec::as_slice).unwrap_or(&[]) {
                let there = here + face.unit();
                if let Some(&placed) = cells.get(&nb) {
                    if placed != there {
                        let first = occupant.get(&there).copied().unwrap_or(nb);
                        return Err(NetworkError::Collision { cell: there, first, second: nb });
                    }
                    continue;
                }
                if let Some(&other) = occupant.get(&there) {
                    return Err(NetworkError::Collision { cell: there, first: other, second: nb });
                }
                cells.insert(nb, there);
                occupant.insert(there, nb);
                queue.push_back(nb);
            }
        }
        Ok(Reconstruction { shape: cells.values().copied().collect(), cells })
    }

    /// Snaps `new_cube` onto `host_face` of `host`, linking every face of the
    /// new cube that touches an existing cube.
    pub fn attach(
        &self,
        new_cube: CubeUnit,
        host: u32,
        host_face: Face,
        t: f64,
    ) -> Result<(TopologyGraph, NetEvent, CubeCoord), NetworkError> {
        let current = self.reconstruct_shape()?;
        let host_cell = *current.cells.get(&host).ok_or(NetworkError::HostUnreachable(host))?;
        if !self.is_face_free(FaceRef::new(host, host_face)) {
            return Err(NetworkError::FaceOccupied { cube_id: host, face: host_face });
        }
        if self.cubes.contains_key(&new_cube.cube_id) {
            return Err(NetworkError::DuplicateCube(new_cube.cube_id));
        }
        let cell = host_cell + host_face.unit();
        if let Some(by) = current.cube_at(cell) {
            return Err(NetworkError::CellOccupied { cell, by });
        }
        let mut next = self.clone();
        next.register(new_cube)?;
        for face in Face::ALL {
            if let Some(neighbour) = current.cube_at(cell + face.unit()) {
                let theirs = FaceRef::new(neighbour, face.opposite());
                if next.is_face_free(theirs) {
                    next.links.insert(Link::new(FaceRef::new(new_cube.cube_id, face), theirs));
                }
            }
        }
        let mut event = NetEvent::at(t, NetEventKind::Connect, new_cube.cube_id, cell);
        event.face = Some(HostFace { host, face: host_face });
        Ok((next, event, cell))
    }

    /// Unplugs a cube. Every cube that loses its path to the base drops out
    /// too; events come farthest-from-base first so each prefix stays a valid
    /// connected structure.
    pub fn detach(&self, cube_id: u32, t: f64) -> Result<(TopologyGraph, Vec<NetEvent>), NetworkError> {
        if cube_id == BASE_CUBE {
            return Err(NetworkError::BaseRemoval);
        }
        let current = self.reconstruct_shape()?;
        if !current.cells.contains_key(&cube_id) {
            return Err(NetworkError::UnknownCube(cube_id));
        }
        let dist = self.bfs_distances(None);
        let still_reached = self.bfs_distances(Some(cube_id));
        let mut removed: Vec<u32> = current.cells.keys().copied().filter(|id| !still_reached.contains_key(id)).collect();
        removed.sort_by(|a, b| dist[b].cmp(&dist[a]).then(a.cmp(b)));

        let mut next = self.clone();
        let gone: BTreeSet<u32> = removed.iter().copied().collect();
        next.links.retain(|l| !gone.contains(&l.a.cube_id) && !gone.contains(&l.b.cube_id));
        for id in &gone {
            next.cubes.remove(id);
        }
        let events = removed
            .iter()
            .enumerate()
            .map(|(k, id)| NetEvent::at(t + k as f64 * CASCADE_STEP, NetEventKind::Disconnect, *id, current.cells[id]))
            .collect();
        Ok((next, events))
    }

    /// Removes one cube that nothing else depends on.
    fn remove_leaf(&mut self, cube_id: u32) -> Result<(), NetworkError> {
        if cube_id == BASE_CUBE {
            return Err(NetworkError::BaseRemoval);
        }
        if !self.cubes.contains_key(&cube_id) {
            return Err(NetworkError::UnknownCube(cube_id));
        }
        let before = self.bfs_distances(None).len();
        let after = self.bfs_distances(Some(cube_id)).len();
        if after + 1 != before {
            return Err(NetworkError::WouldOrphan(cube_id));
        }
        self.links.retain(|l| l.a.cube_id != cube_id && l.b.cube_id != cube_id);
        self.cubes.remove(&cube_id);
        Ok(())
    }

    pub fn discovery_reply(&self, t: f64) -> Result<NetEvent, NetworkError> {
        let rec = self.reconstruct_shape()?;
        let mut ev = NetEvent::at(t, NetEventKind::DiscoveryReply, BASE_CUBE, CubeCoord::ORIGIN);
        ev.cubes = Some(self.broadcast_scan().into_iter().map(|id| (id, rec.cells[&id])).collect());
        Ok(ev)
    }
}

/// Single-owner simulator that records every sensed event.
#[derive(Debug, Clone, Default)]
pub struct CubeNetwork {
    graph: TopologyGraph,
    log: Vec<NetEvent>,
}

impl CubeNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn graph(&self) -> &TopologyGraph {
        &self.graph
    }

    pub fn log(&self) -> &[NetEvent] {
        &self.log
    }

    pub fn into_log(self) -> Vec<NetEvent> {
        self.log
    }

    pub fn attach(&mut self, new_cube: CubeUnit, host: u32, face: Face, t: f64) -> Result<CubeCoord, NetworkError> {
        let (graph, ev, cell) = self.graph.attach(new_cube, host, face, t)?;
        self.graph = graph;
        self.log.push(ev);
        Ok(cell)
    }

    /// Attaches a cube into `cell`, hosting it on the first neighbour in face
    /// order.
    pub fn attach_at(&mut self, new_cube: CubeUnit, cell: CubeCoord, t: f64) -> Result<(), NetworkError> {
        let rec = self.graph.reconstruct_shape()?;
        let (host, face) = Face::ALL
            .into_iter()
            .find_map(|f| rec.cube_at(cell + f.unit()).map(|h| (h, f.opposite())))
            .ok_or(NetworkError::HostUnreachable(new_cube.cube_id))?;
        self.attach(new_cube, host, face, t).map(|_| ())
    }

    pub fn detach(&mut self, cube_id: u32, t: f64) -> Result<Vec<NetEvent>, NetworkError> {
        let (graph, events) = self.graph.detach(cube_id, t)?;
        self.graph = graph;
        self.log.extend(events.iter().cloned());
        Ok(events)
    }

    pub fn discover(&mut self, t: f64) -> Result<Vec<u32>, NetworkError> {
        let ev = self.graph.discovery_reply(t)?;
        self.log.push(ev);
        Ok(self.graph.broadcast_scan())
    }

    /// Builds `shape` (which must contain the origin and be connected) by
    /// attaching cubes in breadth-first order, numbering them 1, 2, ...
    pub fn build(shape: &Polycube, t0: f64, step: f64) -> Result<CubeNetwork, NetworkError> {
        let mut net = CubeNetwork::new();
        let mut order = vec![CubeCoord::ORIGIN];
        let mut seen = BTreeSet::from([CubeCoord::ORIGIN]);
        let mut i = 0;
        while i < order.len() {
            for n in order[i].neighbors() {
                if shape.contains(n) && seen.insert(n) {
                    order.push(n);
                }
            }
            i += 1;
        }
        for (k, cell) in order.iter().enumerate().skip(1) {
            net.attach_at(CubeUnit::new(k as u32), *cell, t0 + step * k as f64)?;
        }
        Ok(net)
    }
}

/// Replays a sensed event stream from a base-only network, checking each
/// event against the topology it implies.
pub fn replay_net_events(stream: &[NetEvent]) -> Result<Reconstruction, NetworkError> {
    let mut graph = TopologyGraph::new();
    for ev in stream {
        match ev.action {
            NetEventKind::Connect => {
                let hf = ev.face.ok_or(NetworkError::MissingFace(ev.cube_id))?;
                if !graph.contains_cube(hf.host) {
                    return Err(NetworkError::DanglingLink(hf.host));
                }
                let (next, _, cell) = graph.attach(CubeUnit::new(ev.cube_id), hf.host, hf.face, ev.t)?;
                if cell != ev.cell() {
                    return Err(NetworkError::CellMismatch { cube_id: ev.cube_id, reported: ev.cell(), actual: cell });
                }
                graph = next;
            }
            NetEventKind::Disconnect => graph.remove_leaf(ev.cube_id)?,
            NetEventKind::DiscoveryReply => {
                let rec = graph.reconstruct_shape()?;
                let sensed: BTreeMap<u32, CubeCoord> = ev.cubes.iter().flatten().copied().collect();
                if sensed != rec.cells {
                    return Err(NetworkError::DiscoveryMismatch);
                }
            }
        }
    }
    graph.reconstruct_shape()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    Drop(usize),
    /// Re-delivers event `i` immediately after itself.
    Duplicate(usize),
    Swap(usize, usize),
}

/// Applies one fault to an event stream. Indices must be in range.
pub fn inject_fault<E: Clone>(stream: &[E], fault: Fault) -> Vec<E> {
    let mut out = stream.to_vec();
    match fault {
        Fault::Drop(i) => {
            out.remove(i);
        }
        Fault::Duplicate(i) => out.insert(i + 1, stream[i].clone()),
        Fault::Swap(i, j) => out.swap(i, j),
    }
    out
}

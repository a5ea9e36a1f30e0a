//! In-memory typed social graph.
//!
//! Nodes are persons, groups, pages, and postings; the first three are
//! collectively "entities". Edges are typed and directed (friendship is
//! stored as two directed edges). On top of the topology the graph keeps
//! per-(person, entity) interaction records and per-(person, posting) seen
//! timestamps, which feed the rewriter's social features and the ranker's
//! personalization features.
//!
//! The graph is built single-threaded and treated as immutable afterwards;
//! all read operations take `&self`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

/// Seconds in the "recently visited / recently seen" window (30 days).
pub const RECENT_WINDOW_SECS: u64 = 30 * 24 * 3600;

/// Sentinel elapsed time for never-visited entities (10 years).
pub const NEVER_VISITED_SECS: u64 = 10 * 365 * 24 * 3600;

/// Unique identifier shared by all node kinds. Id 0 is valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u64);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Person,
    Group,
    Page,
    Posting,
}

impl NodeKind {
    /// Entities are all non-content nodes: persons, groups, and pages.
    pub fn is_entity(self) -> bool {
        self != NodeKind::Posting
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    FriendOf,
    AuthoredBy,
    Involves,
    PostedInGroup,
    PostedInPage,
    Follows,
    Likes,
    MemberOf,
}

impl EdgeKind {
    /// Required (src, dst) node kinds for this edge type.
    pub fn endpoint_kinds(self) -> (NodeKind, NodeKind) {
        use EdgeKind::*;
        use NodeKind::*;
        match self {
            FriendOf => (Person, Person),
            AuthoredBy => (Posting, Person),
            Involves => (Posting, Person),
            PostedInGroup => (Posting, Group),
            PostedInPage => (Posting, Page),
            Follows => (Person, Page),
            Likes => (Person, Page),
            MemberOf => (Person, Group),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: EdgeKind,
}

/// Interaction state between a person and an entity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionRecord {
    /// Seconds since epoch of the last visit; `None` means never visited.
    pub last_visit_time: Option<u64>,
    pub liked: bool,
    pub joined: bool,
    /// Social network coefficient in [0, 1].
    pub social_coefficient: f64,
}

impl Default for InteractionRecord {
    fn default() -> Self {
        InteractionRecord {
            last_visit_time: None,
            liked: false,
            joined: false,
            social_coefficient: 0.0,
        }
    }
}

/// Group or page a posting was posted in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PostingContainer {
    Group(NodeId),
    Page(NodeId),
}

impl PostingContainer {
    pub fn node_id(self) -> NodeId {
        match self {
            PostingContainer::Group(id) | PostingContainer::Page(id) => id,
        }
    }
}

/// A posting document: the unit of retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct PostingDoc {
    pub id: NodeId,
    pub title: String,
    pub body: String,
    pub author: NodeId,
    pub container: Option<PostingContainer>,
    /// Persons involved in the posting. Always contains the author.
    pub involved: BTreeSet<NodeId>,
    pub created_time: u64,
    pub comment_count: u32,
    pub has_photo: bool,
    pub serp_click_count: u32,
}

impl PostingDoc {
    pub fn new(id: NodeId, author: NodeId, created_time: u64) -> Self {
        let mut involved = BTreeSet::new();
        involved.insert(author);
        PostingDoc {
            id,
            title: String::new(),
            body: String::new(),
            author,
            container: None,
            involved,
            created_time,
            comment_count: 0,
            has_photo: false,
            serp_click_count: 0,
        }
    }

    pub fn involve(&mut self, person: NodeId) -> &mut Self {
        self.involved.insert(person);
        self
    }
}

/// The 5 social features describing a (searcher, entity) relationship,
/// in fixed order: recently visited, ln(1 + seconds since last visit),
/// liked page, joined group, social coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocialFeatureVector(pub [f64; 5]);

impl SocialFeatureVector {
    pub const DIM: usize = 5;

    pub fn recently_visited(&self) -> f64 {
        self.0[0]
    }
    pub fn time_since_last_visit(&self) -> f64 {
        self.0[1]
    }
    pub fn liked_page(&self) -> f64 {
        self.0[2]
    }
    pub fn joined_group(&self) -> f64 {
        self.0[3]
    }
    pub fn social_coefficient(&self) -> f64 {
        self.0[4]
    }
}

/// Sparse per-person attributes used by the ranker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PersonProfile {
    pub region_id: u32,
    pub city_id: u32,
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("node {0} already exists")]
    DuplicateNode(NodeId),
    #[error("node {id} is {actual:?}, expected {expected:?}")]
    KindMismatch {
        id: NodeId,
        expected: NodeKind,
        actual: NodeKind,
    },
    #[error("edge {kind:?} cannot connect {src:?} -> {dst:?}")]
    InvalidEdge {
        kind: EdgeKind,
        src: NodeKind,
        dst: NodeKind,
    },
    #[error("self edge {kind:?} on node {id}")]
    SelfEdge { id: NodeId, kind: EdgeKind },
    #[error("social coefficient {0} outside [0, 1]")]
    CoefficientOutOfRange(f64),
    #[error("node {0} is not an entity")]
    NotAnEntity(NodeId),
}

type Result<T> = std::result::Result<T, GraphError>;

/// Directed typed social graph with interaction metadata.
#[derive(Debug, Default, Clone)]
pub struct SocialGraph {
    nodes: BTreeMap<NodeId, NodeKind>,
    out_edges: HashMap<NodeId, BTreeSet<(NodeId, EdgeKind)>>,
    in_edges: HashMap<NodeId, BTreeSet<(NodeId, EdgeKind)>>,
    edge_count: usize,
    interactions: HashMap<(NodeId, NodeId), InteractionRecord>,
    seen: HashMap<(NodeId, NodeId), u64>,
    impressions: HashMap<NodeId, u64>,
    profiles: HashMap<NodeId, PersonProfile>,
}

impl SocialGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: NodeId, kind: NodeKind) -> Result<()> {
        if self.nodes.contains_key(&id) {
            return Err(GraphError::DuplicateNode(id));
        }
        self.nodes.insert(id, kind);
        Ok(())
    }

    pub fn node_kind(&self, id: NodeId) -> Option<NodeKind> {
        self.nodes.get(&id).copied()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Nodes in ascending id order.
    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, NodeKind)> + '_ {
        self.nodes.iter().map(|(&id, &kind)| (id, kind))
    }

    /// All directed edges, ordered by (src, dst, kind).
    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::with_capacity(self.edge_count);
        for (&src, targets) in &self.out_edges {
            for &(dst, kind) in targets {
                out.push(Edge { src, dst, kind });
            }
        }
        out.sort();
        out
    }

    fn require_kind(&self, id: NodeId, expected: NodeKind) -> Result<()> {
        match self.node_kind(id) {
            None => Err(GraphError::UnknownNode(id)),
            Some(k) if k == expected => Ok(()),
            Some(actual) => Err(GraphError::KindMismatch {
                id,
                expected,
                actual,
            }),
        }
    }

    fn insert_directed(&mut self, src: NodeId, dst: NodeId, kind: EdgeKind) -> bool {
        let inserted = self.out_edges.entry(src).or_default().insert((dst, kind));
        if inserted {
            self.in_edges.entry(dst).or_default().insert((src, kind));
            self.edge_count += 1;
        }
        inserted
    }

    /// Adds a typed edge, validating endpoint kinds. `FriendOf` is stored as
    /// two directed edges. Returns whether anything new was inserted;
    /// re-adding an existing edge is a no-op.
    pub fn add_edge(&mut self, src: NodeId, dst: NodeId, kind: EdgeKind) -> Result<bool> {
        let (want_src, want_dst) = kind.endpoint_kinds();
        let src_kind = self.node_kind(src).ok_or(GraphError::UnknownNode(src))?;
        let dst_kind = self.node_kind(dst).ok_or(GraphError::UnknownNode(dst))?;
        if src_kind != want_src || dst_kind != want_dst {
            return Err(GraphError::InvalidEdge {
                kind,
                src: src_kind,
                dst: dst_kind,
            });
        }
        if src == dst {
            return Err(GraphError::SelfEdge { id: src, kind });
        }
        let mut inserted = self.insert_directed(src, dst, kind);
        if kind == EdgeKind::FriendOf {
            inserted |= self.insert_directed(dst, src, kind);
        }
        Ok(inserted)
    }

    pub fn has_edge(&self, src: NodeId, dst: NodeId, kind: EdgeKind) -> bool {
        self.out_edges
            .get(&src)
            .is_some_and(|set| set.contains(&(dst, kind)))
    }

    /// Registers a posting document's node and social edges. The document
    /// text itself is stored in the inverted index, not the graph.
    pub fn add_posting(&mut self, doc: &PostingDoc) -> Result<()> {
        self.add_node(doc.id, NodeKind::Posting)?;
        self.add_edge(doc.id, doc.author, EdgeKind::AuthoredBy)?;
        for &person in &doc.involved {
            self.add_edge(doc.id, person, EdgeKind::Involves)?;
        }
        match doc.container {
            Some(PostingContainer::Group(g)) => {
                self.add_edge(doc.id, g, EdgeKind::PostedInGroup)?;
            }
            Some(PostingContainer::Page(p)) => {
                self.add_edge(doc.id, p, EdgeKind::PostedInPage)?;
            }
            None => {}
        }
        Ok(())
    }

    pub fn set_interaction(
        &mut self,
        person: NodeId,
        entity: NodeId,
        record: InteractionRecord,
    ) -> Result<()> {
        self.require_kind(person, NodeKind::Person)?;
        let kind = self
            .node_kind(entity)
            .ok_or(GraphError::UnknownNode(entity))?;
        if !kind.is_entity() {
            return Err(GraphError::NotAnEntity(entity));
        }
        if !record.social_coefficient.is_finite()
            || !(0.0..=1.0).contains(&record.social_coefficient)
        {
            return Err(GraphError::CoefficientOutOfRange(
                record.social_coefficient,
            ));
        }
        self.interactions.insert((person, entity), record);
        Ok(())
    }

    pub fn interaction(&self, person: NodeId, entity: NodeId) -> Option<&InteractionRecord> {
        self.interactions.get(&(person, entity))
    }

    /// Interactions ordered by (person, entity).
    pub fn interactions(&self) -> Vec<(NodeId, NodeId, InteractionRecord)> {
        let mut rows: Vec<_> = self
            .interactions
            .iter()
            .map(|(&(p, e), &r)| (p, e, r))
            .collect();
        rows.sort_by_key(|&(p, e, _)| (p, e));
        rows
    }

    pub fn record_seen(&mut self, person: NodeId, posting: NodeId, time: u64) -> Result<()> {
        self.require_kind(person, NodeKind::Person)?;
        self.require_kind(posting, NodeKind::Posting)?;
        let slot = self.seen.entry((person, posting)).or_insert(time);
        *slot = (*slot).max(time);
        Ok(())
    }

    pub fn last_seen(&self, person: NodeId, posting: NodeId) -> Option<u64> {
        self.seen.get(&(person, posting)).copied()
    }

    /// Seen records ordered by (person, posting).
    pub fn seen_records(&self) -> Vec<(NodeId, NodeId, u64)> {
        let mut rows: Vec<_> = self.seen.iter().map(|(&(p, d), &t)| (p, d, t)).collect();
        rows.sort();
        rows
    }

    /// Counts one search-result impression for the person. Impressions
    /// accumulate separately from the seen map, which only keeps the last
    /// time per (person, posting) pair.
    pub fn add_impression(&mut self, person: NodeId) -> Result<()> {
        self.require_kind(person, NodeKind::Person)?;
        *self.impressions.entry(person).or_insert(0) += 1;
        Ok(())
    }

    /// Restores an impression total, e.g. when loading a corpus file.
    pub fn set_impression_count(&mut self, person: NodeId, count: u64) -> Result<()> {
        self.require_kind(person, NodeKind::Person)?;
        self.impressions.insert(person, count);
        Ok(())
    }

    pub fn impression_count(&self, person: NodeId) -> u64 {
        self.impressions.get(&person).copied().unwrap_or(0)
    }

    pub fn set_profile(&mut self, person: NodeId, profile: PersonProfile) -> Result<()> {
        self.require_kind(person, NodeKind::Person)?;
        self.profiles.insert(person, profile);
        Ok(())
    }

    pub fn profile(&self, person: NodeId) -> Option<PersonProfile> {
        self.profiles.get(&person).copied()
    }

    /// Profiles ordered by person id.
    pub fn profiles(&self) -> Vec<(NodeId, PersonProfile)> {
        let mut rows: Vec<_> = self.profiles.iter().map(|(&p, &pr)| (p, pr)).collect();
        rows.sort_by_key(|&(p, _)| p);
        rows
    }

    fn neighbors(&self, id: NodeId) -> impl Iterator<Item = (NodeId, EdgeKind)> + '_ {
        let out = self.out_edges.get(&id).into_iter().flatten().copied();
        let inc = self.in_edges.get(&id).into_iter().flatten().copied();
        out.chain(inc)
    }

    /// 1-degree entity connections of a searcher, including the searcher.
    ///
    /// An entity `e` is connected when an edge exists between `u` and `e`
    /// in either direction. Postings never appear in the result.
    pub fn conn(&self, u: NodeId) -> Result<BTreeSet<NodeId>> {
        self.require_kind(u, NodeKind::Person)?;
        let mut set = BTreeSet::new();
        set.insert(u);
        for (other, _) in self.neighbors(u) {
            if self.node_kind(other).is_some_and(NodeKind::is_entity) {
                set.insert(other);
            }
        }
        Ok(set)
    }

    /// Postings adjacent (either direction) to any member of `conn(u)`.
    pub fn conn_postings(&self, u: NodeId) -> Result<BTreeSet<NodeId>> {
        let connections = self.conn(u)?;
        let mut set = BTreeSet::new();
        for &e in &connections {
            for (other, _) in self.neighbors(e) {
                if self.node_kind(other) == Some(NodeKind::Posting) {
                    set.insert(other);
                }
            }
        }
        Ok(set)
    }

    /// The 5 social features between a searcher and an entity at time `now`.
    pub fn social_features(
        &self,
        searcher: NodeId,
        entity: NodeId,
        now: u64,
    ) -> Result<SocialFeatureVector> {
        if self.node_kind(searcher).is_none() {
            return Err(GraphError::UnknownNode(searcher));
        }
        let kind = self
            .node_kind(entity)
            .ok_or(GraphError::UnknownNode(entity))?;
        if !kind.is_entity() {
            return Err(GraphError::NotAnEntity(entity));
        }
        let record = self
            .interactions
            .get(&(searcher, entity))
            .copied()
            .unwrap_or_default();
        let (recently, elapsed) = match record.last_visit_time {
            Some(t) => {
                let dt = now.saturating_sub(t);
                ((dt <= RECENT_WINDOW_SECS) as u8 as f64, dt)
            }
            None => (0.0, NEVER_VISITED_SECS),
        };
        let liked = (record.liked && kind == NodeKind::Page) as u8 as f64;
        let joined = (record.joined && kind == NodeKind::Group) as u8 as f64;
        Ok(SocialFeatureVector([
            recently,
            (1.0 + elapsed as f64).ln(),
            liked,
            joined,
            record.social_coefficient,
        ]))
    }

    pub fn friend_count(&self, person: NodeId) -> usize {
        self.out_edges
            .get(&person)
            .map(|set| {
                set.iter()
                    .filter(|&&(_, k)| k == EdgeKind::FriendOf)
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn followee_count(&self, person: NodeId) -> usize {
        self.out_edges
            .get(&person)
            .map(|set| {
                set.iter()
                    .filter(|&&(_, k)| k == EdgeKind::Follows)
                    .count()
            })
            .unwrap_or(0)
    }
}

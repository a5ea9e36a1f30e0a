//! Corpus files: one versioned, line-tagged text file holding the whole
//! social world (nodes, edges, interactions, profiles, seen records, and
//! posting documents), plus a sibling format for search workloads.
//!
//! ```text
//! #socsearch-corpus v1 now=<secs>
//! node <TAB> id <TAB> person|group|page
//! profile <TAB> person <TAB> region <TAB> city <TAB> impressions
//! edge <TAB> src <TAB> dst <TAB> friend-of|follows|likes|member-of
//! inter <TAB> person <TAB> entity <TAB> last_visit|- <TAB> liked <TAB> joined <TAB> coefficient
//! seen <TAB> person <TAB> posting <TAB> time
//! doc <TAB> id <TAB> author <TAB> created <TAB> group:N|page:N|- <TAB> comments
//!     <TAB> photo <TAB> clicks <TAB> involved-csv <TAB> title <TAB> body
//! ```
//!
//! Posting-derived edges (authored-by, involves, posted-in-*) are not
//! written; loading a `doc` line recreates them. Title and body escape
//! backslash, tab, and line breaks. Docs are written in ascending id order
//! so rebuilding the index from a loaded corpus is byte-identical.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use socsearch_core::graph::{
    EdgeKind, GraphError, InteractionRecord, NodeId, NodeKind, PersonProfile, PostingContainer,
    PostingDoc, SocialGraph,
};
use socsearch_core::query::{parse, ParseError, SExpr};
use thiserror::Error;

const HEADER_PREFIX: &str = "#socsearch-corpus v1 now=";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Graph {
        line: usize,
        #[source]
        source: GraphError,
    },
    #[error("line {line}: bad query: {source}")]
    Query {
        line: usize,
        #[source]
        source: ParseError,
    },
}

fn malformed(line: usize, msg: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        line,
        msg: msg.into(),
    }
}

/// A loaded corpus: the graph, the documents in index insertion order, and
/// the generation timestamp.
#[derive(Debug)]
pub struct Corpus {
    pub graph: SocialGraph,
    pub docs: Vec<PostingDoc>,
    pub now: u64,
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str, line: usize) -> Result<String, CorpusError> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(malformed(line, format!("bad escape \\{other:?}"))),
        }
    }
    Ok(out)
}

fn node_kind_name(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::Person => "person",
        NodeKind::Group => "group",
        NodeKind::Page => "page",
        NodeKind::Posting => "posting",
    }
}

fn edge_kind_name(kind: EdgeKind) -> &'static str {
    match kind {
        EdgeKind::FriendOf => "friend-of",
        EdgeKind::AuthoredBy => "authored-by",
        EdgeKind::Involves => "involves",
        EdgeKind::PostedInGroup => "posted-in-group",
        EdgeKind::PostedInPage => "posted-in-page",
        EdgeKind::Follows => "follows",
        EdgeKind::Likes => "likes",
        EdgeKind::MemberOf => "member-of",
    }
}

fn parse_id(s: &str, line: usize, what: &str) -> Result<NodeId, CorpusError> {
    s.parse::<u64>()
        .map(NodeId)
        .map_err(|_| malformed(line, format!("bad {what} {s:?}")))
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T, CorpusError> {
    s.parse::<T>()
        .map_err(|_| malformed(line, format!("bad {what} {s:?}")))
}

fn parse_flag(s: &str, line: usize, what: &str) -> Result<bool, CorpusError> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(malformed(line, format!("bad {what} {s:?}, want 0 or 1"))),
    }
}

pub fn write_corpus<W: Write>(
    mut w: W,
    g: &SocialGraph,
    docs: &[&PostingDoc],
    now: u64,
) -> Result<(), CorpusError> {
    writeln!(w, "{HEADER_PREFIX}{now}")?;
    for (id, kind) in g.nodes() {
        if kind != NodeKind::Posting {
            writeln!(w, "node\t{id}\t{}", node_kind_name(kind))?;
        }
    }
    for (id, p) in g.profiles() {
        writeln!(
            w,
            "profile\t{id}\t{}\t{}\t{}",
            p.region_id,
            p.city_id,
            g.impression_count(id)
        )?;
    }
    for e in g.edges() {
        match e.kind {
            // Recreated by doc lines.
            EdgeKind::AuthoredBy
            | EdgeKind::Involves
            | EdgeKind::PostedInGroup
            | EdgeKind::PostedInPage => continue,
            // Stored in both directions; write each friendship once.
            EdgeKind::FriendOf if e.src > e.dst => continue,
            _ => {}
        }
        writeln!(w, "edge\t{}\t{}\t{}", e.src, e.dst, edge_kind_name(e.kind))?;
    }
    for (person, entity, r) in g.interactions() {
        let visit = r
            .last_visit_time
            .map_or("-".to_string(), |t| t.to_string());
        writeln!(
            w,
            "inter\t{person}\t{entity}\t{visit}\t{}\t{}\t{}",
            r.liked as u8, r.joined as u8, r.social_coefficient
        )?;
    }
    for (person, posting, time) in g.seen_records() {
        writeln!(w, "seen\t{person}\t{posting}\t{time}")?;
    }
    let mut ordered: BTreeMap<NodeId, &PostingDoc> = BTreeMap::new();
    for d in docs {
        ordered.insert(d.id, d);
    }
    for d in ordered.values() {
        let container = match d.container {
            Some(PostingContainer::Group(id)) => format!("group:{id}"),
            Some(PostingContainer::Page(id)) => format!("page:{id}"),
            None => "-".to_string(),
        };
        let involved: Vec<String> = d.involved.iter().map(|p| p.to_string()).collect();
        writeln!(
            w,
            "doc\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            d.id,
            d.author,
            d.created_time,
            container,
            d.comment_count,
            d.has_photo as u8,
            d.serp_click_count,
            involved.join(","),
            escape(&d.title),
            escape(&d.body),
        )?;
    }
    Ok(())
}

pub fn read_corpus<R: BufRead>(r: R) -> Result<Corpus, CorpusError> {
    let mut lines = r.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => return Err(malformed(1, "empty file, missing header")),
    };
    let now: u64 = header
        .strip_prefix(HEADER_PREFIX)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| malformed(1, format!("bad header {header:?}")))?;

    let mut g = SocialGraph::new();
    let mut docs = Vec::new();
    // Graph mutations are deferred so records may appear in any order
    // relative to the nodes they reference.
    let mut edges: Vec<(usize, NodeId, NodeId, EdgeKind)> = Vec::new();
    let mut inters: Vec<(usize, NodeId, NodeId, InteractionRecord)> = Vec::new();
    let mut seen: Vec<(usize, NodeId, NodeId, u64)> = Vec::new();
    let mut profiles: Vec<(usize, NodeId, PersonProfile, u64)> = Vec::new();

    for (i, line) in lines {
        let n = i + 1;
        let line = line?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let expect = |want: usize| -> Result<(), CorpusError> {
            if fields.len() != want {
                Err(malformed(
                    n,
                    format!("{} record wants {want} fields, got {}", fields[0], fields.len()),
                ))
            } else {
                Ok(())
            }
        };
        match fields[0] {
            "node" => {
                expect(3)?;
                let id = parse_id(fields[1], n, "node id")?;
                let kind = match fields[2] {
                    "person" => NodeKind::Person,
                    "group" => NodeKind::Group,
                    "page" => NodeKind::Page,
                    other => return Err(malformed(n, format!("bad node kind {other:?}"))),
                };
                g.add_node(id, kind)
                    .map_err(|source| CorpusError::Graph { line: n, source })?;
            }
            "profile" => {
                expect(5)?;
                profiles.push((
                    n,
                    parse_id(fields[1], n, "person id")?,
                    PersonProfile {
                        region_id: parse_num(fields[2], n, "region id")?,
                        city_id: parse_num(fields[3], n, "city id")?,
                    },
                    parse_num(fields[4], n, "impression count")?,
                ));
            }
            "edge" => {
                expect(4)?;
                let kind = match fields[3] {
                    "friend-of" => EdgeKind::FriendOf,
                    "follows" => EdgeKind::Follows,
                    "likes" => EdgeKind::Likes,
                    "member-of" => EdgeKind::MemberOf,
                    other => return Err(malformed(n, format!("bad edge kind {other:?}"))),
                };
                edges.push((
                    n,
                    parse_id(fields[1], n, "edge source")?,
                    parse_id(fields[2], n, "edge target")?,
                    kind,
                ));
            }
            "inter" => {
                expect(7)?;
                let last_visit_time = if fields[3] == "-" {
                    None
                } else {
                    Some(parse_num(fields[3], n, "visit time")?)
                };
                inters.push((
                    n,
                    parse_id(fields[1], n, "person id")?,
                    parse_id(fields[2], n, "entity id")?,
                    InteractionRecord {
                        last_visit_time,
                        liked: parse_flag(fields[4], n, "liked flag")?,
                        joined: parse_flag(fields[5], n, "joined flag")?,
                        social_coefficient: parse_num(fields[6], n, "coefficient")?,
                    },
                ));
            }
            "seen" => {
                expect(4)?;
                seen.push((
                    n,
                    parse_id(fields[1], n, "person id")?,
                    parse_id(fields[2], n, "posting id")?,
                    parse_num(fields[3], n, "seen time")?,
                ));
            }
            "doc" => {
                expect(11)?;
                let mut doc = PostingDoc::new(
                    parse_id(fields[1], n, "doc id")?,
                    parse_id(fields[2], n, "author id")?,
                    parse_num(fields[3], n, "created time")?,
                );
                doc.container = match fields[4] {
                    "-" => None,
                    s => {
                        if let Some(id) = s.strip_prefix("group:") {
                            Some(PostingContainer::Group(parse_id(id, n, "group id")?))
                        } else if let Some(id) = s.strip_prefix("page:") {
                            Some(PostingContainer::Page(parse_id(id, n, "page id")?))
                        } else {
                            return Err(malformed(n, format!("bad container {s:?}")));
                        }
                    }
                };
                doc.comment_count = parse_num(fields[5], n, "comment count")?;
                doc.has_photo = parse_flag(fields[6], n, "photo flag")?;
                doc.serp_click_count = parse_num(fields[7], n, "click count")?;
                if !fields[8].is_empty() {
                    for p in fields[8].split(',') {
                        doc.involve(parse_id(p, n, "involved id")?);
                    }
                }
                doc.title = unescape(fields[9], n)?;
                doc.body = unescape(fields[10], n)?;
                g.add_posting(&doc)
                    .map_err(|source| CorpusError::Graph { line: n, source })?;
                docs.push(doc);
            }
            other => return Err(malformed(n, format!("unknown record kind {other:?}"))),
        }
    }

    for (line, src, dst, kind) in edges {
        g.add_edge(src, dst, kind)
            .map_err(|source| CorpusError::Graph { line, source })?;
    }
    for (line, person, entity, rec) in inters {
        g.set_interaction(person, entity, rec)
            .map_err(|source| CorpusError::Graph { line, source })?;
    }
    for (line, person, posting, time) in seen {
        g.record_seen(person, posting, time)
            .map_err(|source| CorpusError::Graph { line, source })?;
    }
    for (line, person, profile, impressions) in profiles {
        g.set_profile(person, profile)
            .map_err(|source| CorpusError::Graph { line, source })?;
        g.set_impression_count(person, impressions)
            .map_err(|source| CorpusError::Graph { line, source })?;
    }
    Ok(Corpus { graph: g, docs, now })
}

pub fn save_corpus(
    path: &Path,
    g: &SocialGraph,
    docs: &[&PostingDoc],
    now: u64,
) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_corpus(&mut w, g, docs, now)?;
    w.flush()?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    read_corpus(BufReader::new(File::open(path)?))
}

/// Workload files: `searcher TAB s-expression`, one session per line.
pub fn save_workload(path: &Path, workload: &[(NodeId, SExpr)]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    for (searcher, expr) in workload {
        writeln!(w, "{searcher}\t{expr}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_workload(path: &Path) -> Result<Vec<(NodeId, SExpr)>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let n = i + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (searcher, query) = line
            .split_once('\t')
            .ok_or_else(|| malformed(n, "want `searcher TAB query`"))?;
        let searcher = parse_id(searcher, n, "searcher id")?;
        let expr = parse(query).map_err(|source| CorpusError::Query { line: n, source })?;
        out.push((searcher, expr));
    }
    Ok(out)
}

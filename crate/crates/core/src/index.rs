//! Inverted index over prefixed retrieval terms.
//!
//! Each posting document is indexed under text tokens (`text:billie`) and
//! under its social edges (`authored-by:1`, `involves:2`, `group-of:3`,
//! `page-of:4`), so boolean retrieval can constrain by text and social
//! connection in one engine. The index also carries the corpus statistics
//! the ranker's lexical features need: N, df, doc lengths, avgdl.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::binio;
use crate::graph::{NodeId, PostingContainer, PostingDoc};

/// Term namespace tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TermPrefix {
    Text,
    AuthoredBy,
    Involves,
    GroupOf,
    PageOf,
}

impl TermPrefix {
    pub const ALL: [TermPrefix; 5] = [
        TermPrefix::Text,
        TermPrefix::AuthoredBy,
        TermPrefix::Involves,
        TermPrefix::GroupOf,
        TermPrefix::PageOf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TermPrefix::Text => "text",
            TermPrefix::AuthoredBy => "authored-by",
            TermPrefix::Involves => "involves",
            TermPrefix::GroupOf => "group-of",
            TermPrefix::PageOf => "page-of",
        }
    }

    pub fn from_name(name: &str) -> Option<TermPrefix> {
        TermPrefix::ALL.into_iter().find(|p| p.as_str() == name)
    }
}

/// A prefixed retrieval term in canonical `prefix:value` form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Text(String),
    AuthoredBy(NodeId),
    Involves(NodeId),
    GroupOf(NodeId),
    PageOf(NodeId),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TermError {
    #[error("text term value {0:?} is empty or contains whitespace")]
    InvalidTextValue(String),
    #[error("term {0:?} is missing a prefix")]
    MissingPrefix(String),
    #[error("unknown term prefix {0:?}")]
    UnknownPrefix(String),
    #[error("value {0:?} is not a node id")]
    InvalidNodeId(String),
}

impl Term {
    /// Builds a text term; the value is lowercased first.
    pub fn text(value: &str) -> Result<Term, TermError> {
        let value = value.to_lowercase();
        if value.is_empty() || value.chars().any(char::is_whitespace) {
            return Err(TermError::InvalidTextValue(value));
        }
        Ok(Term::Text(value))
    }

    pub fn social(prefix: TermPrefix, id: NodeId) -> Option<Term> {
        match prefix {
            TermPrefix::Text => None,
            TermPrefix::AuthoredBy => Some(Term::AuthoredBy(id)),
            TermPrefix::Involves => Some(Term::Involves(id)),
            TermPrefix::GroupOf => Some(Term::GroupOf(id)),
            TermPrefix::PageOf => Some(Term::PageOf(id)),
        }
    }

    pub fn prefix(&self) -> TermPrefix {
        match self {
            Term::Text(_) => TermPrefix::Text,
            Term::AuthoredBy(_) => TermPrefix::AuthoredBy,
            Term::Involves(_) => TermPrefix::Involves,
            Term::GroupOf(_) => TermPrefix::GroupOf,
            Term::PageOf(_) => TermPrefix::PageOf,
        }
    }

    /// Canonical rendering, e.g. `text:billie` or `group-of:3`.
    pub fn canonical(&self) -> String {
        match self {
            Term::Text(v) => format!("text:{v}"),
            Term::AuthoredBy(id) => format!("authored-by:{id}"),
            Term::Involves(id) => format!("involves:{id}"),
            Term::GroupOf(id) => format!("group-of:{id}"),
            Term::PageOf(id) => format!("page-of:{id}"),
        }
    }

    /// Parses the canonical form back into a term.
    pub fn from_canonical(s: &str) -> Result<Term, TermError> {
        let (name, value) = s
            .split_once(':')
            .ok_or_else(|| TermError::MissingPrefix(s.to_string()))?;
        let prefix = TermPrefix::from_name(name)
            .ok_or_else(|| TermError::UnknownPrefix(name.to_string()))?;
        match prefix {
            TermPrefix::Text => Term::text(value),
            _ => {
                let id: u64 = value
                    .parse()
                    .map_err(|_| TermError::InvalidNodeId(value.to_string()))?;
                Ok(Term::social(prefix, NodeId(id)).unwrap())
            }
        }
    }
}

impl std::fmt::Display for Term {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.canonical())
    }
}

/// Unicode-aware tokenizer: lowercase, split on non-alphanumeric
/// codepoints, drop empties. No stemming, no stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// The set of index terms a document emits: text tokens from title and
/// body plus one term per social edge.
pub fn index_terms(doc: &PostingDoc) -> BTreeSet<Term> {
    let mut terms = BTreeSet::new();
    for token in tokenize(&doc.title).into_iter().chain(tokenize(&doc.body)) {
        terms.insert(Term::Text(token));
    }
    terms.insert(Term::AuthoredBy(doc.author));
    for &p in &doc.involved {
        terms.insert(Term::Involves(p));
    }
    match doc.container {
        Some(PostingContainer::Group(g)) => {
            terms.insert(Term::GroupOf(g));
        }
        Some(PostingContainer::Page(p)) => {
            terms.insert(Term::PageOf(p));
        }
        None => {}
    }
    terms
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("document {0} already indexed")]
    DuplicateDoc(NodeId),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt index file: {0}")]
    Corrupt(String),
}

const MAGIC: &[u8; 4] = b"SSIX";
const VERSION: u8 = 1;

/// Inverted index plus document store and corpus statistics.
#[derive(Debug, Default, Clone)]
pub struct InvertedIndex {
    postings: BTreeMap<Term, Vec<NodeId>>,
    docs: BTreeMap<NodeId, PostingDoc>,
    doc_lens: BTreeMap<NodeId, usize>,
    total_len: u64,
}

impl InvertedIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Indexes one document under all its terms and updates corpus stats.
    pub fn add_doc(&mut self, doc: PostingDoc) -> Result<(), IndexError> {
        if self.docs.contains_key(&doc.id) {
            return Err(IndexError::DuplicateDoc(doc.id));
        }
        for term in index_terms(&doc) {
            let list = self.postings.entry(term).or_default();
            match list.binary_search(&doc.id) {
                Ok(_) => {}
                Err(pos) => list.insert(pos, doc.id),
            }
        }
        let len = tokenize(&doc.title).len() + tokenize(&doc.body).len();
        self.doc_lens.insert(doc.id, len);
        self.total_len += len as u64;
        self.docs.insert(doc.id, doc);
        Ok(())
    }

    /// Posting list for a term; unknown terms yield the empty list.
    pub fn lookup(&self, term: &Term) -> &[NodeId] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc(&self, id: NodeId) -> Option<&PostingDoc> {
        self.docs.get(&id)
    }

    pub fn docs(&self) -> impl Iterator<Item = &PostingDoc> {
        self.docs.values()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.docs.keys().copied()
    }

    /// Corpus size N.
    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    /// Document frequency of a term.
    pub fn df(&self, term: &Term) -> usize {
        self.lookup(term).len()
    }

    /// Combined title+body token count of a document.
    pub fn doc_len(&self, id: NodeId) -> Option<usize> {
        self.doc_lens.get(&id).copied()
    }

    /// Mean document length; 0 for an empty index.
    pub fn avgdl(&self) -> f64 {
        if self.docs.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.docs.len() as f64
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.postings.keys()
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), IndexError> {
        w.write_all(MAGIC)?;
        binio::write_u8(w, VERSION)?;

        let mut entries: Vec<(String, &Vec<NodeId>)> = self
            .postings
            .iter()
            .map(|(t, l)| (t.canonical(), l))
            .collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        binio::write_u32(w, entries.len() as u32)?;
        for (canonical, list) in entries {
            binio::write_bytes(w, canonical.as_bytes())?;
            binio::write_u32(w, list.len() as u32)?;
            let mut prev = 0u64;
            for (i, id) in list.iter().enumerate() {
                let delta = if i == 0 { id.0 } else { id.0 - prev };
                binio::write_varint(w, delta)?;
                prev = id.0;
            }
        }

        binio::write_u32(w, self.docs.len() as u32)?;
        for doc in self.docs.values() {
            let mut buf = Vec::new();
            encode_doc(&mut buf, doc)?;
            binio::write_bytes(w, &buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, IndexError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(IndexError::Corrupt(format!("bad magic {magic:?}")));
        }
        let version = binio::read_u8(r)?;
        if version != VERSION {
            return Err(IndexError::Corrupt(format!(
                "unsupported version {version}"
            )));
        }

        let term_count = binio::read_u32(r)? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..term_count {
            let raw = binio::read_bytes(r)?;
            let canonical = String::from_utf8(raw)
                .map_err(|e| IndexError::Corrupt(format!("term not UTF-8: {e}")))?;
            let term = Term::from_canonical(&canonical)
                .map_err(|e| IndexError::Corrupt(format!("bad term {canonical:?}: {e}")))?;
            let count = binio::read_u32(r)? as usize;
            let mut list = Vec::with_capacity(count);
            let mut prev = 0u64;
            for i in 0..count {
                let delta = binio::read_varint(r)?;
                let id = if i == 0 { delta } else { prev + delta };
                if i > 0 && id <= prev {
                    return Err(IndexError::Corrupt(format!(
                        "posting list for {canonical} not strictly ascending"
                    )));
                }
                list.push(NodeId(id));
                prev = id;
            }
            if postings.insert(term, list).is_some() {
                return Err(IndexError::Corrupt(format!("duplicate term {canonical}")));
            }
        }

        let doc_count = binio::read_u32(r)? as usize;
        let mut index = InvertedIndex {
            postings,
            ..Default::default()
        };
        for _ in 0..doc_count {
            let buf = binio::read_bytes(r)?;
            let doc = decode_doc(&mut buf.as_slice())?;
            let len = tokenize(&doc.title).len() + tokenize(&doc.body).len();
            index.doc_lens.insert(doc.id, len);
            index.total_len += len as u64;
            if index.docs.insert(doc.id, doc).is_some() {
                return Err(IndexError::Corrupt("duplicate doc record".into()));
            }
        }

        for (term, list) in &index.postings {
            for id in list {
                if !index.docs.contains_key(id) {
                    return Err(IndexError::Corrupt(format!(
                        "posting list for {} references unknown doc {id}",
                        term.canonical()
                    )));
                }
            }
        }
        Ok(index)
    }
}

fn encode_doc<W: Write>(w: &mut W, doc: &PostingDoc) -> std::io::Result<()> {
    binio::write_u64(w, doc.id.0)?;
    binio::write_bytes(w, doc.title.as_bytes())?;
    binio::write_bytes(w, doc.body.as_bytes())?;
    binio::write_u64(w, doc.author.0)?;
    match doc.container {
        None => binio::write_u8(w, 0)?,
        Some(PostingContainer::Group(g)) => {
            binio::write_u8(w, 1)?;
            binio::write_u64(w, g.0)?;
        }
        Some(PostingContainer::Page(p)) => {
            binio::write_u8(w, 2)?;
            binio::write_u64(w, p.0)?;
        }
    }
    binio::write_u32(w, doc.involved.len() as u32)?;
    for p in &doc.involved {
        binio::write_u64(w, p.0)?;
    }
    binio::write_u64(w, doc.created_time)?;
    binio::write_u32(w, doc.comment_count)?;
    binio::write_u8(w, doc.has_photo as u8)?;
    binio::write_u32(w, doc.serp_click_count)?;
    Ok(())
}

fn decode_doc<R: Read>(r: &mut R) -> Result<PostingDoc, IndexError> {
    let id = NodeId(binio::read_u64(r)?);
    let title = String::from_utf8(binio::read_bytes(r)?)
        .map_err(|e| IndexError::Corrupt(format!("title not UTF-8: {e}")))?;
    let body = String::from_utf8(binio::read_bytes(r)?)
        .map_err(|e| IndexError::Corrupt(format!("body not UTF-8: {e}")))?;
    let author = NodeId(binio::read_u64(r)?);
    let container = match binio::read_u8(r)? {
        0 => None,
        1 => Some(PostingContainer::Group(NodeId(binio::read_u64(r)?))),
        2 => Some(PostingContainer::Page(NodeId(binio::read_u64(r)?))),
        tag => return Err(IndexError::Corrupt(format!("bad container tag {tag}"))),
    };
    let involved_count = binio::read_u32(r)? as usize;
    let mut involved = BTreeSet::new();
    for _ in 0..involved_count {
        involved.insert(NodeId(binio::read_u64(r)?));
    }
    involved.insert(author);
    let created_time = binio::read_u64(r)?;
    let comment_count = binio::read_u32(r)?;
    let has_photo = binio::read_u8(r)? != 0;
    let serp_click_count = binio::read_u32(r)?;
    Ok(PostingDoc {
        id,
        title,
        body,
        author,
        container,
        involved,
        created_time,
        comment_count,
        has_photo,
        serp_click_count,
    })
}

//! XML authority policies: parsing, the authority database, authorization
//! decisions, and promotion-driven updates.
//!
//! A policy document has the shape
//!
//! ```xml
//! <Policy>
//!   <user>
//!     <name>smith</name>
//!     <id>1</id>
//!     <designation>manager</designation>
//!     <signing_limit>1000</signing_limit>
//!   </user>
//! </Policy>
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::pipeline::{authority_grant, PipelineModel};
use crate::sim::{EventFlag, PromotionEvent};

pub const FIELDS: [&str; 4] = ["name", "id", "designation", "signing_limit"];

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("malformed XML at {line}:{column}: {message}")]
    Xml {
        line: u32,
        column: u32,
        message: String,
    },
    #[error("missing element <{0}>")]
    MissingElement(&'static str),
    #[error("duplicate element <{0}>")]
    DuplicateElement(&'static str),
    #[error("root element must be <Policy>, found <{0}>")]
    UnexpectedRoot(String),
    #[error("<{field}> must be a non-negative base-10 integer, found {text:?}")]
    InvalidValue { field: &'static str, text: String },
    #[error("no authority record for employee {0}")]
    NotFound(u64),
    #[error("employee {0} already has an authority record")]
    DuplicateId(u64),
    #[error("signing limit for employee {id} cannot drop from {current} to {requested}")]
    DecreasingLimit {
        id: u64,
        current: u64,
        requested: u64,
    },
    #[error("event for employee {employee_id} references level {level}, but the model has {depth} levels")]
    UnknownLevel {
        employee_id: u64,
        level: u32,
        depth: u32,
    },
    #[error("{path}: file name does not match employee id {id}")]
    FileNameMismatch { path: PathBuf, id: u64 },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<PolicyError>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl PolicyError {
    /// True for failures of the underlying storage rather than of the data.
    pub fn is_io(&self) -> bool {
        match self {
            PolicyError::Io(_) => true,
            PolicyError::File { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

/// One employee's authority record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PolicyDocument {
    pub name: String,
    pub id: u64,
    pub designation: String,
    pub signing_limit: u64,
}

/// Parses a policy document. Child elements of `<user>` may appear in any
/// order and their text is trimmed.
pub fn parse_policy(text: &str) -> Result<PolicyDocument, PolicyError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        PolicyError::Xml {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "Policy" {
        return Err(PolicyError::UnexpectedRoot(
            root.tag_name().name().to_owned(),
        ));
    }
    let mut users = root
        .children()
        .filter(|n| n.is_element() && n.tag_name().name() == "user");
    let user = users.next().ok_or(PolicyError::MissingElement("user"))?;
    if users.next().is_some() {
        return Err(PolicyError::DuplicateElement("user"));
    }

    let mut values: [Option<String>; 4] = Default::default();
    for child in user.children().filter(|n| n.is_element()) {
        let Some(slot) = FIELDS.iter().position(|f| *f == child.tag_name().name()) else {
            continue;
        };
        if values[slot].is_some() {
            return Err(PolicyError::DuplicateElement(FIELDS[slot]));
        }
        let text: String = child
            .descendants()
            .filter(|n| n.is_text())
            .filter_map(|n| n.text())
            .collect();
        values[slot] = Some(text.trim().to_owned());
    }
    let [name, id, designation, signing_limit] = values;
    let name = name.ok_or(PolicyError::MissingElement("name"))?;
    let id = id.ok_or(PolicyError::MissingElement("id"))?;
    let designation = designation.ok_or(PolicyError::MissingElement("designation"))?;
    let signing_limit = signing_limit.ok_or(PolicyError::MissingElement("signing_limit"))?;

    Ok(PolicyDocument {
        name,
        id: parse_integer("id", &id)?,
        designation,
        signing_limit: parse_integer("signing_limit", &signing_limit)?,
    })
}

fn parse_integer(field: &'static str, text: &str) -> Result<u64, PolicyError> {
    let invalid = || PolicyError::InvalidValue {
        field,
        text: text.to_owned(),
    };
    if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
        return Err(invalid());
    }
    text.parse().map_err(|_| invalid())
}

fn escape_xml(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

pub fn serialize_policy(doc: &PolicyDocument) -> String {
    format!(
        "<Policy>\n<user>\n  <name>{}</name>\n  <id>{}</id>\n  <designation>{}</designation>\n  <signing_limit>{}</signing_limit>\n</user>\n</Policy>\n",
        escape_xml(&doc.name),
        doc.id,
        escape_xml(&doc.designation),
        doc.signing_limit
    )
}

/// A request to exercise authority for `amount` currency units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuthorizationRequest {
    pub name: String,
    pub id: u64,
    pub designation: String,
    pub amount: u64,
}

/// The predicates a request must pass, in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    RecordExists,
    Name,
    Designation,
    SigningLimit,
}

impl Check {
    pub fn failure_reason(self) -> &'static str {
        match self {
            Check::RecordExists => "no authority record for this employee id",
            Check::Name => "name does not match the authority record",
            Check::Designation => "designation does not match the authority record",
            Check::SigningLimit => "amount exceeds the signing limit",
        }
    }
}

pub const ALL_SATISFIED: &str = "all predicates satisfied";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Decision {
    pub allowed: bool,
    pub reason: String,
    pub failed_check: Option<Check>,
}

impl Decision {
    fn allow() -> Self {
        Self {
            allowed: true,
            reason: ALL_SATISFIED.to_owned(),
            failed_check: None,
        }
    }

    fn deny(check: Check) -> Self {
        Self {
            allowed: false,
            reason: check.failure_reason().to_owned(),
            failed_check: Some(check),
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.allowed {
            f.write_str("ALLOWED")
        } else {
            write!(f, "DENIED: {}", self.reason)
        }
    }
}

/// Employee id to current authority record.
///
/// Updates return a new database and leave the original untouched, so a
/// shared value is always a consistent snapshot for readers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AuthorityDatabase {
    records: BTreeMap<u64, PolicyDocument>,
}

impl AuthorityDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_documents(
        docs: impl IntoIterator<Item = PolicyDocument>,
    ) -> Result<Self, PolicyError> {
        let mut db = Self::new();
        for doc in docs {
            db.insert_new(doc)?;
        }
        Ok(db)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&PolicyDocument> {
        self.records.get(&id)
    }

    pub fn records(&self) -> impl Iterator<Item = &PolicyDocument> {
        self.records.values()
    }

    /// Adds or replaces the record keyed by `doc.id`.
    pub fn with_record(&self, doc: PolicyDocument) -> Self {
        let mut next = self.clone();
        next.records.insert(doc.id, doc);
        next
    }

    fn insert_new(&mut self, doc: PolicyDocument) -> Result<(), PolicyError> {
        if self.records.contains_key(&doc.id) {
            return Err(PolicyError::DuplicateId(doc.id));
        }
        self.records.insert(doc.id, doc);
        Ok(())
    }

    /// Checks, in order: a record exists for the id, the name matches, the
    /// designation matches, and the amount is within the signing limit.
    /// Matching is exact and case-sensitive.
    pub fn evaluate(&self, request: &AuthorizationRequest) -> Decision {
        let Some(record) = self.records.get(&request.id) else {
            return Decision::deny(Check::RecordExists);
        };
        if record.name != request.name {
            return Decision::deny(Check::Name);
        }
        if record.designation != request.designation {
            return Decision::deny(Check::Designation);
        }
        if request.amount > record.signing_limit {
            return Decision::deny(Check::SigningLimit);
        }
        Decision::allow()
    }

    pub fn apply_promotion(
        &self,
        employee_id: u64,
        new_designation: &str,
        new_signing_limit: u64,
    ) -> Result<Self, PolicyError> {
        let mut next = self.clone();
        next.promote_in_place(employee_id, new_designation, new_signing_limit)?;
        Ok(next)
    }

    fn promote_in_place(
        &mut self,
        employee_id: u64,
        new_designation: &str,
        new_signing_limit: u64,
    ) -> Result<(), PolicyError> {
        let record = self
            .records
            .get_mut(&employee_id)
            .ok_or(PolicyError::NotFound(employee_id))?;
        if new_signing_limit < record.signing_limit {
            return Err(PolicyError::DecreasingLimit {
                id: employee_id,
                current: record.signing_limit,
                requested: new_signing_limit,
            });
        }
        record.designation = new_designation.to_owned();
        record.signing_limit = new_signing_limit;
        Ok(())
    }

    /// Replays simulator events against the grants of `model`.
    ///
    /// Arrivals create a record named `emp-<id>` with the level 1 grant,
    /// promotions move the record to the destination level's grant, and
    /// departures or lost promotions remove it. An event is identified by
    /// `(employee_id, to_level)`; repeats of an already applied event are
    /// skipped.
    pub fn apply_event_log(
        &self,
        events: &[PromotionEvent],
        model: &PipelineModel,
    ) -> Result<Self, PolicyError> {
        let depth = model.depth();
        let mut next = self.clone();
        let mut applied: HashSet<(u64, u32)> = HashSet::new();
        for event in events {
            if event.to_level > depth + 1 || event.to_level != event.from_level + 1 {
                return Err(PolicyError::UnknownLevel {
                    employee_id: event.employee_id,
                    level: event.to_level,
                    depth,
                });
            }
            if !applied.insert((event.employee_id, event.to_level)) {
                continue;
            }
            let id = event.employee_id;
            if event.flag == EventFlag::Lost || event.to_level == depth + 1 {
                next.records.remove(&id);
                continue;
            }
            let grant =
                authority_grant(model, event.to_level).map_err(|_| PolicyError::UnknownLevel {
                    employee_id: id,
                    level: event.to_level,
                    depth,
                })?;
            if event.from_level == 0 {
                next.records.entry(id).or_insert_with(|| PolicyDocument {
                    name: format!("emp-{id}"),
                    id,
                    designation: grant.designation,
                    signing_limit: grant.signing_limit,
                });
            } else {
                next.promote_in_place(id, &grant.designation, grant.signing_limit)?;
            }
        }
        Ok(next)
    }

    /// Reads every `*.xml` file in `dir`. Each file must be named after the
    /// id it holds.
    pub fn load_dir(dir: &Path) -> Result<Self, PolicyError> {
        let mut db = Self::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .map(|entry| entry.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        paths.sort();
        for path in paths {
            if path.extension().and_then(|e| e.to_str()) != Some("xml") || !path.is_file() {
                continue;
            }
            let in_file = |source: PolicyError| PolicyError::File {
                path: path.clone(),
                source: Box::new(source),
            };
            let text = fs::read_to_string(&path).map_err(|e| in_file(e.into()))?;
            let doc = parse_policy(&text).map_err(in_file)?;
            if path.file_stem().and_then(|s| s.to_str()) != Some(doc.id.to_string().as_str()) {
                return Err(PolicyError::FileNameMismatch { path, id: doc.id });
            }
            db.insert_new(doc)?;
        }
        Ok(db)
    }

    /// Writes one `<id>.xml` per record and removes policy files for ids no
    /// longer present, so the directory mirrors the database.
    pub fn save_dir(&self, dir: &Path) -> Result<(), PolicyError> {
        fs::create_dir_all(dir)?;
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let stale = path.extension().and_then(|e| e.to_str()) == Some("xml")
                && path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .and_then(|s| s.parse::<u64>().ok())
                    .is_some_and(|id| !self.records.contains_key(&id));
            if stale {
                fs::remove_file(&path)?;
            }
        }
        for doc in self.records.values() {
            write_policy_file(dir, doc)?;
        }
        Ok(())
    }
}

pub fn policy_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("{id}.xml"))
}

pub fn write_policy_file(dir: &Path, doc: &PolicyDocument) -> Result<(), PolicyError> {
    fs::write(policy_path(dir, doc.id), serialize_policy(doc))?;
    Ok(())
}

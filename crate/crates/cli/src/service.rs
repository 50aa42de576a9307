//! HTTP service behind the annotation console: rating queue, rating log,
//! verification edits, audio bytes and the per-item export.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use adiff_core::assets::{LOUD_NOTICE, RATING_RUBRIC_JSON, TASK_INSTRUCTIONS};
use adiff_core::forge::{apply_verification, read_records, DifferenceRecord, Provenance};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const ITEMS_FILE: &str = "items.jsonl";
pub const RATINGS_FILE: &str = "ratings.jsonl";
pub const EDITS_FILE: &str = "edits.jsonl";
pub const AUDIO_DIR: &str = "audio";
pub const EXPORT_HEADER: &str = "item,n-raters,COR-mean,GRA-mean,RDB-mean";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pending,
    Rated,
    Verified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub item: u64,
    pub rater: String,
    pub correctness: u8,
    pub granularity: u8,
    pub readability: u8,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub item: u64,
    pub approver: String,
    #[serde(default)]
    pub removed: Vec<String>,
    #[serde(default)]
    pub added: String,
}

/// Immutable view handed to readers.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    /// Item `id` lives at index `id - 1`.
    pub items: Vec<DifferenceRecord>,
    pub ratings: Vec<Rating>,
}

impl Snapshot {
    pub fn record(&self, id: u64) -> Option<&DifferenceRecord> {
        id.checked_sub(1).and_then(|i| self.items.get(i as usize))
    }

    /// Latest rating per (item, rater).
    pub fn latest(&self) -> BTreeMap<(u64, &str), &Rating> {
        let mut out = BTreeMap::new();
        for r in &self.ratings {
            out.insert((r.item, r.rater.as_str()), r);
        }
        out
    }

    pub fn status(&self, id: u64) -> Status {
        match self.record(id) {
            Some(r) if r.provenance == Provenance::HumanVerified => Status::Verified,
            _ if self.ratings.iter().any(|r| r.item == id) => Status::Rated,
            _ => Status::Pending,
        }
    }

    /// Lowest item id this rater has not rated yet.
    pub fn next_for(&self, rater: &str) -> Option<u64> {
        let latest = self.latest();
        (1..=self.items.len() as u64).find(|&id| !latest.contains_key(&(id, rater)))
    }

    pub fn item_json(&self, id: u64) -> Option<Value> {
        let r = self.record(id)?;
        Some(json!({
            "id": id,
            "audio1": r.audio1,
            "audio2": r.audio2,
            "explanation": r.explanation,
            "tier": r.tier,
            "status": self.status(id),
            "notice": LOUD_NOTICE,
            "instructions": TASK_INSTRUCTIONS,
            "rubric": serde_json::from_str::<Value>(RATING_RUBRIC_JSON).unwrap_or(Value::Null),
        }))
    }
}

/// Per-item means over the latest rating of each rater.
pub fn export_csv(ratings: &[Rating]) -> String {
    let mut latest: BTreeMap<(u64, &str), &Rating> = BTreeMap::new();
    for r in ratings {
        latest.insert((r.item, r.rater.as_str()), r);
    }
    let mut per_item: BTreeMap<u64, Vec<&Rating>> = BTreeMap::new();
    for ((item, _), r) in latest {
        per_item.entry(item).or_default().push(r);
    }
    let mut out = String::from(EXPORT_HEADER);
    out.push('\n');
    for (item, rs) in per_item {
        let n = rs.len() as f64;
        let mean = |f: fn(&Rating) -> u8| rs.iter().map(|r| f(r) as f64).sum::<f64>() / n;
        out.push_str(&format!(
            "{item},{},{},{},{}\n",
            rs.len(),
            fmt_mean(mean(|r| r.correctness)),
            fmt_mean(mean(|r| r.granularity)),
            fmt_mean(mean(|r| r.readability))
        ));
    }
    out
}

fn fmt_mean(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

struct Logs {
    ratings: File,
    edits: File,
}

pub struct Service {
    dir: PathBuf,
    logs: Mutex<Logs>,
    snapshot: RwLock<Arc<Snapshot>>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, StoreError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StoreError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

impl Service {
    /// Loads items and replays the edit and rating logs found in `dir`.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        let items_path = dir.join(ITEMS_FILE);
        let f = File::open(&items_path).map_err(io_err(&items_path))?;
        let mut items = read_records(BufReader::new(f))
            .map_err(|e| StoreError::Parse { path: items_path.clone(), line: 0, msg: e.to_string() })?;
        let edits_path = dir.join(EDITS_FILE);
        for (i, e) in read_jsonl::<EditRequest>(&edits_path)?.into_iter().enumerate() {
            let bad = |msg: String| StoreError::Parse { path: edits_path.clone(), line: i + 1, msg };
            let idx = e.item.checked_sub(1).filter(|&k| (k as usize) < items.len()).ok_or_else(|| bad(format!("unknown item {}", e.item)))?;
            let removed: Vec<&str> = e.removed.iter().map(String::as_str).collect();
            items[idx as usize] =
                apply_verification(&items[idx as usize], &removed, &e.added, &e.approver).map_err(|err| bad(err.to_string()))?;
        }
        let ratings_path = dir.join(RATINGS_FILE);
        let ratings = read_jsonl::<Rating>(&ratings_path)?;
        let open_append = |p: &Path| OpenOptions::new().create(true).append(true).open(p).map_err(io_err(p));
        let logs = Logs { ratings: open_append(&ratings_path)?, edits: open_append(&edits_path)? };
        Ok(Self { dir, logs: Mutex::new(logs), snapshot: RwLock::new(Arc::new(Snapshot { items, ratings })) })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn submit_rating(&self, rating: Rating) -> std::io::Result<()> {
        let mut logs = self.logs.lock().expect("log lock");
        let line = serde_json::to_string(&rating).expect("serialisable");
        writeln!(logs.ratings, "{line}")?;
        logs.ratings.flush()?;
        let mut next = (*self.snapshot()).clone();
        next.ratings.push(rating);
        *self.snapshot.write().expect("snapshot lock") = Arc::new(next);
        Ok(())
    }

    pub fn submit_edit(&self, edit: EditRequest) -> Result<DifferenceRecord, ApiError> {
        let mut logs = self.logs.lock().expect("log lock");
        let snap = self.snapshot();
        let record = snap.record(edit.item).ok_or_else(|| ApiError::not_found("item", format!("no item {}", edit.item)))?;
        let removed: Vec<&str> = edit.removed.iter().map(String::as_str).collect();
        let updated = apply_verification(record, &removed, &edit.added, &edit.approver)
            .map_err(|e| ApiError::invalid("approver", e.to_string()))?;
        let line = serde_json::to_string(&edit).expect("serialisable");
        writeln!(logs.edits, "{line}").and_then(|_| logs.edits.flush()).map_err(ApiError::internal)?;
        let mut next = (*snap).clone();
        next.items[(edit.item - 1) as usize] = updated.clone();
        *self.snapshot.write().expect("snapshot lock") = Arc::new(next);
        Ok(updated)
    }

    /// Stored WAV bytes for an audio reference.
    pub fn audio(&self, id: &str) -> Option<Vec<u8>> {
        let ok = !id.is_empty() && id != "." && id != ".." && id.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c));
        if !ok {
            return None;
        }
        let dir = self.dir.join(AUDIO_DIR);
        [dir.join(id), dir.join(format!("{id}.wav"))].into_iter().find(|p| p.is_file()).and_then(|p| fs::read(p).ok())
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub field: Option<String>,
    pub message: String,
}

impl ApiError {
    pub fn invalid(field: &str, message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, field: Some(field.into()), message: message.into() }
    }

    pub fn not_found(field: &str, message: impl Into<String>) -> Self {
        Self { status: StatusCode::NOT_FOUND, field: Some(field.into()), message: message.into() }
    }

    fn internal(e: std::io::Error) -> Self {
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, field: None, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message, "field": self.field }))).into_response()
    }
}

fn int_field(body: &Value, name: &str) -> Result<i64, ApiError> {
    let v = body.get(name).ok_or_else(|| ApiError::invalid(name, format!("{name} is required")))?;
    v.as_i64().ok_or_else(|| ApiError::invalid(name, format!("{name} must be an integer, got {v}")))
}

fn str_field(body: &Value, name: &str) -> Result<String, ApiError> {
    match body.get(name).and_then(Value::as_str).map(str::trim) {
        Some(s) if !s.is_empty() => Ok(s.to_string()),
        _ => Err(ApiError::invalid(name, format!("{name} must be a non-empty string"))),
    }
}

fn score_field(body: &Value, name: &str) -> Result<u8, ApiError> {
    let v = int_field(body, name)?;
    if !(1..=5).contains(&v) {
        return Err(ApiError::invalid(name, format!("{name} must be between 1 and 5, got {v}")));
    }
    Ok(v as u8)
}

/// Validates a rating body against the snapshot; the timestamp is filled in here.
pub fn parse_rating(body: &Value, snap: &Snapshot) -> Result<Rating, ApiError> {
    if !body.is_object() {
        return Err(ApiError::invalid("body", "expected a JSON object"));
    }
    let item = int_field(body, "item")?;
    if item < 1 || snap.record(item as u64).is_none() {
        return Err(ApiError::not_found("item", format!("no item {item}")));
    }
    let rater = str_field(body, "rater")?;
    Ok(Rating {
        item: item as u64,
        rater,
        correctness: score_field(body, "correctness")?,
        granularity: score_field(body, "granularity")?,
        readability: score_field(body, "readability")?,
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64),
    })
}

#[derive(Deserialize)]
struct NextQuery {
    rater: Option<String>,
}

async fn next_item(State(svc): State<Arc<Service>>, Query(q): Query<NextQuery>) -> Result<Json<Value>, ApiError> {
    let rater = q.rater.filter(|r| !r.trim().is_empty()).ok_or_else(|| ApiError::invalid("rater", "rater is required"))?;
    let snap = svc.snapshot();
    Ok(Json(match snap.next_for(&rater) {
        Some(id) => json!({ "empty": false, "item": snap.item_json(id) }),
        None => json!({ "empty": true, "item": null }),
    }))
}

async fn post_rating(State(svc): State<Arc<Service>>, body: Json<Value>) -> Result<Json<Value>, ApiError> {
    let rating = parse_rating(&body, &svc.snapshot())?;
    svc.submit_rating(rating.clone()).map_err(ApiError::internal)?;
    Ok(Json(json!({ "ok": true, "rating": rating })))
}

async fn post_edit(State(svc): State<Arc<Service>>, body: Json<Value>) -> Result<Json<Value>, ApiError> {
    let item = int_field(&body, "item")?;
    let approver = str_field(&body, "approver")?;
    let removed = match body.get("removed") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(a)) => a
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(|| ApiError::invalid("removed", "removed must hold strings")))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(ApiError::invalid("removed", "removed must be an array of strings")),
    };
    let added = match body.get("added") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(ApiError::invalid("added", "added must be a string")),
    };
    if item < 1 {
        return Err(ApiError::not_found("item", format!("no item {item}")));
    }
    let updated = svc.submit_edit(EditRequest { item: item as u64, approver, removed, added })?;
    Ok(Json(json!({ "ok": true, "item": svc.snapshot().item_json(item as u64), "record": updated })))
}

async fn get_audio(State(svc): State<Arc<Service>>, UrlPath(id): UrlPath<String>) -> Response {
    match svc.audio(&id) {
        Some(bytes) => ([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response(),
        None => ApiError::not_found("id", format!("no audio {id:?}")).into_response(),
    }
}

async fn get_export(State(svc): State<Arc<Service>>) -> Response {
    ([(header::CONTENT_TYPE, "text/csv")], export_csv(&svc.snapshot().ratings)).into_response()
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/api/items/next", get(next_item))
        .route("/api/ratings", post(post_rating))
        .route("/api/edits", post(post_edit))
        .route("/api/audio/{id}", get(get_audio))
        .route("/api/export", get(get_export))
        .with_state(service)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(item: u64, rater: &str, s: [u8; 3]) -> Rating {
        Rating { item, rater: rater.into(), correctness: s[0], granularity: s[1], readability: s[2], timestamp: 0 }
    }

    #[test]
    fn export_folds_last_write_wins() {
        let log = vec![r(1, "a", [2, 2, 2]), r(1, "b", [4, 4, 4]), r(2, "a", [3, 4, 5]), r(2, "a", [1, 1, 1])];
        assert_eq!(export_csv(&log), format!("{EXPORT_HEADER}\n1,2,3,3,3\n2,1,1,1,1\n"));
        assert_eq!(export_csv(&[r(1, "a", [1, 2, 2])]).lines().nth(1), Some("1,1,1,2,2"));
        assert_eq!(fmt_mean(10.0 / 3.0), "3.3333");
    }
}

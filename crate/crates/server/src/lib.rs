//! Match service: clients upload a serialized query bootleg score and get
//! back the matching time interval in a registered piece.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use bootleg_core::config::HyperParams;
use bootleg_core::midi::{midi_to_bootleg, MidiBootleg};
use bootleg_core::pipeline::align_query;
use bootleg_core::score::BootlegScore;
use serde::{Deserialize, Serialize};

const MAX_BODY_BYTES: usize = 64 << 20;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("unknown piece `{0}`")]
    UnknownPiece(String),
    #[error("malformed query features: {0}")]
    BadRequest(String),
    #[error("alignment failed: {0}")]
    Alignment(String),
    #[error("piece registry is empty")]
    EmptyRegistry,
    #[error("cannot load piece `{id}`: {source}")]
    Load {
        id: String,
        #[source]
        source: bootleg_core::Error,
    },
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServeError {
    fn status(&self) -> StatusCode {
        match self {
            ServeError::UnknownPiece(_) => StatusCode::NOT_FOUND,
            ServeError::BadRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServeError {
    fn into_response(self) -> Response {
        (self.status(), Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResponse {
    pub start_sec: f64,
    pub end_sec: f64,
    pub cost: f64,
    pub ref_start_col: usize,
    pub ref_end_col: usize,
}

/// Read-only map from piece id to its MIDI bootleg score.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    pieces: BTreeMap<String, MidiBootleg>,
}

impl Registry {
    pub fn new(pieces: BTreeMap<String, MidiBootleg>) -> Self {
        Registry { pieces }
    }

    pub fn insert(&mut self, id: impl Into<String>, midi: MidiBootleg) {
        self.pieces.insert(id.into(), midi);
    }

    pub fn get(&self, id: &str) -> Option<&MidiBootleg> {
        self.pieces.get(id)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.pieces.keys().map(String::as_str)
    }

    /// Loads every `*.mid` / `*.midi` file in `dir`, keyed by file stem.
    pub fn load_dir(dir: &Path, params: &HyperParams) -> Result<Self, ServeError> {
        let mut registry = Registry::default();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let is_midi = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"));
            if !is_midi {
                continue;
            }
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            registry.load_file(id, &path, params)?;
        }
        Ok(registry)
    }

    pub fn load_file(&mut self, id: String, path: &Path, params: &HyperParams) -> Result<(), ServeError> {
        let bytes = std::fs::read(path)?;
        let midi = midi_to_bootleg(&bytes, &params.midi).map_err(|source| ServeError::Load { id: id.clone(), source })?;
        self.pieces.insert(id, midi);
        Ok(())
    }
}

/// Aligns a BSCR-encoded query against a reference. Shared by the HTTP
/// handler and in-process callers so both give identical answers.
pub fn match_query(midi: &MidiBootleg, body: &[u8], params: &HyperParams) -> Result<MatchResponse, ServeError> {
    let query = BootlegScore::deserialize(body).map_err(|e| ServeError::BadRequest(e.to_string()))?;
    if query.is_empty() {
        return Err(ServeError::BadRequest("query has no columns".into()));
    }
    let (alignment, interval) = align_query(&query, midi, params).map_err(|e| ServeError::Alignment(e.to_string()))?;
    Ok(MatchResponse {
        start_sec: interval.start,
        end_sec: interval.end,
        cost: alignment.total_cost,
        ref_start_col: alignment.ref_start_col,
        ref_end_col: alignment.ref_end_col,
    })
}

struct AppState {
    registry: Registry,
    params: HyperParams,
}

async fn handle_match(
    State(state): State<Arc<AppState>>,
    UrlPath(piece_id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<MatchResponse>, ServeError> {
    if state.registry.get(&piece_id).is_none() {
        return Err(ServeError::UnknownPiece(piece_id));
    }
    // Alignment is CPU-bound; keep it off the async workers.
    let result = tokio::task::spawn_blocking(move || {
        let midi = state.registry.get(&piece_id).expect("checked above");
        match_query(midi, &body, &state.params)
    })
    .await
    .map_err(|e| ServeError::Alignment(e.to_string()))??;
    Ok(Json(result))
}

pub fn router(registry: Registry, params: HyperParams) -> Router {
    let state = Arc::new(AppState { registry, params });
    Router::new()
        .route("/match/{piece_id}", post(handle_match))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

/// Binds `addr`; port 0 picks a free port.
pub async fn bind(addr: SocketAddr) -> Result<tokio::net::TcpListener, ServeError> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })
}

/// Serves until the future completes with an I/O error.
pub async fn serve(listener: tokio::net::TcpListener, registry: Registry, params: HyperParams) -> Result<(), ServeError> {
    if registry.is_empty() {
        return Err(ServeError::EmptyRegistry);
    }
    log::info!(
        "serving {} piece(s) on {}",
        registry.len(),
        listener.local_addr().map(|a| a.to_string()).unwrap_or_default()
    );
    axum::serve(listener, router(registry, params)).await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use bootleg_core::midi::{events_to_bootleg, NoteEvent, ProjectionOptions};

    fn piece() -> MidiBootleg {
        let events: Vec<NoteEvent> = (0..20)
            .map(|i| NoteEvent {
                time: i as f64 * 0.5,
                pitches: vec![48 + (i * 5 % 24) as u8, 64 + (i * 3 % 12) as u8],
            })
            .collect();
        events_to_bootleg(&events, ProjectionOptions::default(), true).unwrap()
    }

    #[test]
    fn match_query_finds_the_excerpt() {
        let midi = piece();
        let q = BootlegScore::from_columns(midi.score.columns()[15..30].to_vec());
        let r = match_query(&midi, &q.serialize(), &HyperParams::default()).unwrap();
        // The excerpt ends on a filler column, which ties with the column before it.
        assert_eq!(r.ref_start_col, 15);
        assert!((28..=29).contains(&r.ref_end_col));
        assert_eq!((r.start_sec, r.end_sec), (2.5, 5.0));
    }

    #[test]
    fn bad_bodies_are_bad_requests() {
        let midi = piece();
        let p = HyperParams::default();
        for body in [&b""[..], b"BSCR", b"nonsense bytes here"] {
            let e = match_query(&midi, body, &p).unwrap_err();
            assert_eq!(e.status(), StatusCode::BAD_REQUEST, "{e}");
        }
        let empty = BootlegScore::from_columns(vec![]).serialize();
        assert_eq!(match_query(&midi, &empty, &p).unwrap_err().status(), StatusCode::BAD_REQUEST);
    }

    #[tokio::test]
    async fn empty_registry_refuses_to_start() {
        let listener = bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
        assert!(matches!(
            serve(listener, Registry::default(), HyperParams::default()).await,
            Err(ServeError::EmptyRegistry)
        ));
    }

    #[tokio::test]
    async fn port_in_use_is_a_startup_error() {
        let first = bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
        let addr = first.local_addr().unwrap();
        assert!(matches!(bind(addr).await, Err(ServeError::Bind { .. })));
    }
}

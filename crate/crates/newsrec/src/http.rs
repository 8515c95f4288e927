//! HTTP/1.1 front end for [`RecService`].
//!
//! | route | body |
//! |---|---|
//! | `GET /v1/recommend?user_id=<id>&m=<int>` | [`crate::service::Recommendation`] |
//! | `POST /v1/events` | JSON lines in, [`crate::service::IngestAck`] out |
//! | `GET /v1/health` | [`crate::service::Health`] |
//! | `GET /v1/metrics` | [`crate::service::MetricsReport`] |
//!
//! Errors come back as `{"error": "..."}` with a 4xx/5xx status.

use std::io::Read;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use newsrec_core::Timestamp;
use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use crate::service::{RecService, ServiceError};
use crate::store::ProfileStore;

/// Largest accepted `POST /v1/events` body.
pub const MAX_BODY_BYTES: u64 = 64 << 20;

/// Source of `now` for requests.
#[derive(Debug, Clone, Copy)]
pub enum Clock {
    Wall,
    Fixed(Timestamp),
}

impl Clock {
    pub fn now(self) -> Timestamp {
        match self {
            Clock::Wall => std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs() as Timestamp),
            Clock::Fixed(t) => t,
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

fn json<T: Serialize>(status: u16, body: &T) -> Response<std::io::Cursor<Vec<u8>>> {
    let bytes = serde_json::to_vec(body).expect("response serializes");
    Response::from_data(bytes)
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"))
}

fn error(status: u16, msg: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    json(status, &ErrorBody { error: msg })
}

/// Routes one request and returns the response.
pub fn handle<S: ProfileStore>(
    service: &RecService<S>,
    method: &Method,
    url: &str,
    body: Option<&str>,
    default_m: usize,
    clock: Clock,
) -> Response<std::io::Cursor<Vec<u8>>> {
    let (path, query) = url.split_once('?').unwrap_or((url, ""));
    match (method, path) {
        (Method::Get, "/v1/recommend") => {
            let mut user = None;
            let mut m = default_m;
            for (k, v) in form_urlencoded::parse(query.as_bytes()) {
                match &*k {
                    "user_id" => user = Some(v.into_owned()),
                    "m" => match v.parse::<usize>() {
                        Ok(x) if x > 0 => m = x,
                        _ => return error(400, "m must be a positive integer"),
                    },
                    _ => {}
                }
            }
            let Some(user) = user.filter(|u| !u.is_empty()) else {
                return error(400, "missing user_id");
            };
            match service.recommend(&user, m, clock.now()) {
                Ok(r) => json(200, &r),
                Err(ServiceError::NoSnapshot) => error(503, "no snapshot installed"),
                Err(ServiceError::InvalidM) => error(400, "m must be a positive integer"),
                Err(e) => error(500, &e.to_string()),
            }
        }
        (Method::Post, "/v1/events") => match body {
            Some(b) => match service.ingest(b) {
                Ok(ack) => json(200, &ack),
                Err(e) => error(500, &e.to_string()),
            },
            None => error(400, "body must be UTF-8 JSON lines"),
        },
        (Method::Get, "/v1/health") => {
            let h = service.health();
            json(if h.healthy { 200 } else { 503 }, &h)
        }
        (Method::Get, "/v1/metrics") => json(200, &service.metrics()),
        (_, "/v1/recommend" | "/v1/events" | "/v1/health" | "/v1/metrics") => error(405, "method not allowed"),
        _ => error(404, "not found"),
    }
}

fn respond<S: ProfileStore>(service: &RecService<S>, mut req: Request, default_m: usize, clock: Clock) {
    let body = if *req.method() == Method::Post {
        let mut buf = String::new();
        let limited = req.as_reader().take(MAX_BODY_BYTES).read_to_string(&mut buf);
        limited.ok().map(|_| buf)
    } else {
        None
    };
    let resp = handle(service, req.method(), req.url(), body.as_deref(), default_m, clock);
    let _ = req.respond(resp);
}

/// Serves until `stop` is set; each worker polls it between requests.
pub fn serve<S: ProfileStore + 'static>(
    server: Arc<Server>,
    service: Arc<RecService<S>>,
    workers: usize,
    default_m: usize,
    clock: Clock,
    stop: Arc<AtomicBool>,
) {
    let handles: Vec<_> = (0..workers.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let service = Arc::clone(&service);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    match server.recv_timeout(Duration::from_millis(200)) {
                        Ok(Some(req)) => respond(&service, req, default_m, clock),
                        Ok(None) => {}
                        Err(_) => break,
                    }
                }
            })
        })
        .collect();
    for h in handles {
        let _ = h.join();
    }
}

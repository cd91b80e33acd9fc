//! Transport-neutral request/response envelope shared by the in-process
//! client transport, the server router and the HTTP front end.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::server::Server;

pub const USER_UUID_HEADER: &str = "user_uuid";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
    Delete,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Get => "GET",
            Method::Post => "POST",
            Method::Delete => "DELETE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiRequest {
    pub method: Method,
    /// Path plus optional `?query`.
    pub path: String,
    /// Raw `user_uuid` header value, if sent.
    pub user_uuid: Option<String>,
    pub body: Option<String>,
}

impl ApiRequest {
    pub fn new(method: Method, path: impl Into<String>) -> Self {
        Self {
            method,
            path: path.into(),
            user_uuid: None,
            body: None,
        }
    }

    pub fn user(mut self, uuid: impl Into<String>) -> Self {
        self.user_uuid = Some(uuid.into());
        self
    }

    pub fn body(mut self, body: impl Into<String>) -> Self {
        self.body = Some(body.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiResponse {
    pub status: u16,
    pub body: String,
}

impl ApiResponse {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

pub trait Transport {
    fn send(&mut self, now: u64, req: ApiRequest) -> ApiResponse;
}

/// One request/response pair as it would appear on the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRecord {
    pub t: u64,
    pub request: ApiRequest,
    pub response: ApiResponse,
}

/// Traffic recorded at the client/server boundary.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireCapture {
    pub records: Vec<WireRecord>,
}

impl WireCapture {
    pub fn posts_to<'a>(&'a self, path: &'a str) -> impl Iterator<Item = &'a WireRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| r.request.method == Method::Post && r.request.path == path)
    }
}

/// Calls the server in-process, optionally recording every exchange.
pub struct LocalTransport<'a> {
    pub server: &'a mut Server,
    pub capture: Option<&'a mut WireCapture>,
}

impl<'a> LocalTransport<'a> {
    pub fn new(server: &'a mut Server) -> Self {
        Self { server, capture: None }
    }

    pub fn recording(server: &'a mut Server, capture: &'a mut WireCapture) -> Self {
        Self {
            server,
            capture: Some(capture),
        }
    }
}

impl Transport for LocalTransport<'_> {
    fn send(&mut self, now: u64, req: ApiRequest) -> ApiResponse {
        let response = self.server.handle_at(now, &req);
        if let Some(cap) = self.capture.as_deref_mut() {
            cap.records.push(WireRecord {
                t: now,
                request: req,
                response: response.clone(),
            });
        }
        response
    }
}

//! A small SIP subset: INVITE/ACK/BYE/REGISTER requests and
//! 100/180/200/486 responses.
//!
//! Wire grammar:
//!
//! ```text
//! request-line  = METHOD SP sip:user@host SP "SIP/2.0" CRLF
//! status-line   = "SIP/2.0" SP code SP reason CRLF
//! header        = name ":" [SP] value CRLF
//! message       = start-line *header CRLF [body]
//! ```
//!
//! Mandatory headers are `From`, `To`, `Call-ID`, `CSeq` and
//! `Content-Length`; `Via` is optional and any other header is kept, in
//! order, as an extra. Header names are matched case-insensitively and
//! written back in canonical case.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

const SIP_VERSION: &str = "SIP/2.0";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SipError {
    #[error("message has no blank line terminating the headers")]
    Incomplete,
    #[error("message headers are not valid UTF-8")]
    InvalidUtf8,
    #[error("malformed start line")]
    MalformedStartLine,
    #[error("malformed header line")]
    MalformedHeader,
    #[error("duplicate `{0}` header")]
    DuplicateHeader(&'static str),
    #[error("missing `{0}` header")]
    MissingHeader(&'static str),
    #[error("bad SIP URI in {0}")]
    BadUri(&'static str),
    #[error("bad Call-ID")]
    BadCallId,
    #[error("bad CSeq")]
    BadCSeq,
    #[error("bad Content-Length")]
    BadContentLength,
    #[error("body is {actual} bytes but Content-Length says {declared}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("not an INVITE request")]
    NotAnInvite,
}

fn is_token(s: &str) -> bool {
    !s.is_empty()
        && s.bytes().all(|b| b.is_ascii_graphic() && !matches!(b, b'@' | b':' | b'<' | b'>' | b';' | b',' | b'"'))
}

/// `sip:user@host`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "String", into = "String"))]
pub struct SipUri {
    user: String,
    host: String,
}

impl SipUri {
    pub fn new(user: impl Into<String>, host: impl Into<String>) -> Result<Self, SipError> {
        let (user, host) = (user.into(), host.into());
        if is_token(&user) && is_token(&host) {
            Ok(Self { user, host })
        } else {
            Err(SipError::BadUri("uri"))
        }
    }

    pub fn user(&self) -> &str {
        &self.user
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn to_canonical(&self) -> String {
        alloc::format!("sip:{}@{}", self.user, self.host)
    }
}

impl fmt::Display for SipUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sip:{}@{}", self.user, self.host)
    }
}

impl FromStr for SipUri {
    type Err = SipError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s.strip_prefix("sip:").ok_or(SipError::BadUri("uri"))?;
        let (user, host) = rest.split_once('@').ok_or(SipError::BadUri("uri"))?;
        Self::new(user, host)
    }
}

impl TryFrom<String> for SipUri {
    type Error = SipError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SipUri> for String {
    fn from(u: SipUri) -> Self {
        u.to_canonical()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Invite,
    Ack,
    Bye,
    Register,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Invite, Method::Ack, Method::Bye, Method::Register];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Invite => "INVITE",
            Method::Ack => "ACK",
            Method::Bye => "BYE",
            Method::Register => "REGISTER",
        }
    }
}

impl FromStr for Method {
    type Err = SipError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or(SipError::MalformedStartLine)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StatusCode {
    Trying,
    Ringing,
    Ok,
    BusyHere,
}

impl StatusCode {
    pub const ALL: [StatusCode; 4] = [StatusCode::Trying, StatusCode::Ringing, StatusCode::Ok, StatusCode::BusyHere];

    pub fn code(self) -> u16 {
        match self {
            StatusCode::Trying => 100,
            StatusCode::Ringing => 180,
            StatusCode::Ok => 200,
            StatusCode::BusyHere => 486,
        }
    }

    pub fn reason(self) -> &'static str {
        match self {
            StatusCode::Trying => "Trying",
            StatusCode::Ringing => "Ringing",
            StatusCode::Ok => "OK",
            StatusCode::BusyHere => "Busy Here",
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        StatusCode::ALL.into_iter().find(|s| s.code() == code)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StartLine {
    Request { method: Method, uri: SipUri },
    Response { status: StatusCode, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CSeq {
    pub seq: u32,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SipMessage {
    pub start: StartLine,
    pub via: Option<String>,
    pub from: SipUri,
    pub to: SipUri,
    pub call_id: String,
    pub cseq: CSeq,
    /// Unknown headers in wire order, names as received.
    pub extra: Vec<(String, String)>,
    /// `None` when the message has no body.
    pub body: Option<String>,
}

impl SipMessage {
    pub fn request(method: Method, call_id: &str, from: SipUri, to: SipUri, seq: u32, body: Option<String>) -> Self {
        Self {
            start: StartLine::Request { method, uri: to.clone() },
            via: None,
            from,
            to,
            call_id: call_id.into(),
            cseq: CSeq { seq, method },
            extra: Vec::new(),
            body: body.filter(|b| !b.is_empty()),
        }
    }

    pub fn invite(call_id: &str, from: SipUri, to: SipUri, seq: u32, body: Option<String>) -> Self {
        Self::request(Method::Invite, call_id, from, to, seq, body)
    }

    /// A response to `req` carrying the same dialog headers.
    pub fn response_to(req: &SipMessage, status: StatusCode) -> Self {
        Self {
            start: StartLine::Response { status, reason: status.reason().into() },
            via: req.via.clone(),
            from: req.from.clone(),
            to: req.to.clone(),
            call_id: req.call_id.clone(),
            cseq: req.cseq,
            extra: Vec::new(),
            body: None,
        }
    }

    /// Same request with a different method; the CSeq method follows.
    pub fn with_method(mut self, method: Method) -> Self {
        if let StartLine::Request { method: m, .. } = &mut self.start {
            *m = method;
            self.cseq.method = method;
        }
        self
    }

    pub fn is_request(&self) -> bool {
        matches!(self.start, StartLine::Request { .. })
    }

    pub fn method(&self) -> Option<Method> {
        match self.start {
            StartLine::Request { method, .. } => Some(method),
            StartLine::Response { .. } => None,
        }
    }

    pub fn status(&self) -> Option<StatusCode> {
        match self.start {
            StartLine::Response { status, .. } => Some(status),
            StartLine::Request { .. } => None,
        }
    }

    pub fn serialize(&self) -> Vec<u8> {
        self.to_wire().into_bytes()
    }

    pub fn to_wire(&self) -> String {
        use core::fmt::Write;
        let mut out = String::with_capacity(192 + self.body.as_ref().map_or(0, |b| b.len()));
        match &self.start {
            StartLine::Request { method, uri } => {
                let _ = write!(out, "{} {} {}\r\n", method.as_str(), uri, SIP_VERSION);
            }
            StartLine::Response { status, reason } => {
                let _ = write!(out, "{} {} {}\r\n", SIP_VERSION, status.code(), reason);
            }
        }
        if let Some(via) = &self.via {
            let _ = write!(out, "Via: {via}\r\n");
        }
        let body = self.body.as_deref().unwrap_or("");
        let _ = write!(
            out,
            "From: <{}>\r\nTo: <{}>\r\nCall-ID: {}\r\nCSeq: {} {}\r\nContent-Length: {}\r\n",
            self.from,
            self.to,
            self.call_id,
            self.cseq.seq,
            self.cseq.method.as_str(),
            body.len()
        );
        for (name, value) in &self.extra {
            let _ = write!(out, "{name}: {value}\r\n");
        }
        out.push_str("\r\n");
        out.push_str(body);
        out
    }
}

impl fmt::Display for SipMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_wire())
    }
}

/// Builds the 486 Busy Here answer for an INVITE.
pub fn make_busy_response(invite: &SipMessage) -> Result<SipMessage, SipError> {
    if invite.method() != Some(Method::Invite) {
        return Err(SipError::NotAnInvite);
    }
    Ok(SipMessage::response_to(invite, StatusCode::BusyHere))
}

fn parse_number(s: &str) -> Option<u64> {
    if s.is_empty() || s.len() > 10 || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
        return None;
    }
    s.parse().ok()
}

fn parse_start_line(line: &str) -> Result<StartLine, SipError> {
    if let Some(rest) = line.strip_prefix("SIP/2.0 ") {
        let (code, reason) = rest.split_once(' ').ok_or(SipError::MalformedStartLine)?;
        let code = parse_number(code).filter(|c| *c <= u16::MAX as u64).ok_or(SipError::MalformedStartLine)?;
        let status = StatusCode::from_code(code as u16).ok_or(SipError::MalformedStartLine)?;
        if reason.is_empty() || reason.starts_with(' ') || reason.ends_with(' ') || reason.bytes().any(|b| b.is_ascii_control()) {
            return Err(SipError::MalformedStartLine);
        }
        return Ok(StartLine::Response { status, reason: reason.into() });
    }
    let mut parts = line.split(' ');
    let (Some(method), Some(uri), Some(version), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(SipError::MalformedStartLine);
    };
    if version != SIP_VERSION {
        return Err(SipError::MalformedStartLine);
    }
    let method: Method = method.parse()?;
    let uri = uri.parse().map_err(|_| SipError::MalformedStartLine)?;
    Ok(StartLine::Request { method, uri })
}

fn parse_name_addr(value: &str, header: &'static str) -> Result<SipUri, SipError> {
    let inner = value
        .strip_prefix('<')
        .and_then(|v| v.strip_suffix('>'))
        .ok_or(SipError::BadUri(header))?;
    inner.parse().map_err(|_| SipError::BadUri(header))
}

fn parse_cseq(value: &str) -> Result<CSeq, SipError> {
    let (n, m) = value.split_once(' ').ok_or(SipError::BadCSeq)?;
    let seq = parse_number(n).filter(|n| (1..=u32::MAX as u64).contains(n)).ok_or(SipError::BadCSeq)?;
    let method = m.parse().map_err(|_| SipError::BadCSeq)?;
    Ok(CSeq { seq: seq as u32, method })
}

fn set_once<T>(slot: &mut Option<T>, value: T, name: &'static str) -> Result<(), SipError> {
    if slot.is_some() {
        return Err(SipError::DuplicateHeader(name));
    }
    *slot = Some(value);
    Ok(())
}

/// Parses one complete message.
pub fn parse(bytes: &[u8]) -> Result<SipMessage, SipError> {
    let split = bytes.windows(4).position(|w| w == b"\r\n\r\n").ok_or(SipError::Incomplete)?;
    let head = core::str::from_utf8(&bytes[..split]).map_err(|_| SipError::InvalidUtf8)?;
    let body = &bytes[split + 4..];

    let mut lines = head.split("\r\n");
    let start = parse_start_line(lines.next().unwrap_or(""))?;

    let mut via = None;
    let mut from = None;
    let mut to = None;
    let mut call_id = None;
    let mut cseq = None;
    let mut content_length = None;
    let mut extra = Vec::new();

    for line in lines {
        let (name, value) = line.split_once(':').ok_or(SipError::MalformedHeader)?;
        if !is_token(name) || value.contains(['\r', '\n']) {
            return Err(SipError::MalformedHeader);
        }
        let value = value.trim_matches([' ', '\t']);
        match name.to_ascii_lowercase().as_str() {
            "via" => set_once(&mut via, value.to_owned(), "Via")?,
            "from" => set_once(&mut from, parse_name_addr(value, "From")?, "From")?,
            "to" => set_once(&mut to, parse_name_addr(value, "To")?, "To")?,
            "call-id" => {
                if !is_token(value) {
                    return Err(SipError::BadCallId);
                }
                set_once(&mut call_id, value.to_owned(), "Call-ID")?
            }
            "cseq" => set_once(&mut cseq, parse_cseq(value)?, "CSeq")?,
            "content-length" => {
                let n = parse_number(value).ok_or(SipError::BadContentLength)?;
                set_once(&mut content_length, n as usize, "Content-Length")?
            }
            _ => extra.push((name.to_owned(), value.to_owned())),
        }
    }

    let from = from.ok_or(SipError::MissingHeader("From"))?;
    let to = to.ok_or(SipError::MissingHeader("To"))?;
    let call_id = call_id.ok_or(SipError::MissingHeader("Call-ID"))?;
    let cseq = cseq.ok_or(SipError::MissingHeader("CSeq"))?;
    let declared = content_length.ok_or(SipError::MissingHeader("Content-Length"))?;

    if let StartLine::Request { method, .. } = start {
        if cseq.method != method {
            return Err(SipError::BadCSeq);
        }
    }
    if declared != body.len() {
        return Err(SipError::LengthMismatch { declared, actual: body.len() });
    }
    let body = if body.is_empty() {
        None
    } else {
        Some(String::from_utf8(body.to_vec()).map_err(|_| SipError::InvalidUtf8)?)
    };

    Ok(SipMessage { start, via, from, to, call_id, cseq, extra, body })
}

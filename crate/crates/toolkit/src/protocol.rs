//! Line protocol spoken between the executor and a model runner over the
//! runner's standard streams.
//!
//! ```text
//! -> HELLO
//! <- MODEL <name>
//! -> PREDICT <sample_id> <payload_path>
//! <- RESULT <sample_id> <predicted_label> <confidence>
//! -> BYE
//! ```
//!
//! Confidence is printed with exactly six decimals. Sample ids and payload
//! paths must not contain whitespace.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Hello,
    Predict { sample_id: String, payload: String },
    Bye,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Model(String),
    Result {
        sample_id: String,
        label: u32,
        confidence: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed protocol line `{line}`: {reason}")]
pub struct ProtocolError {
    pub line: String,
    pub reason: &'static str,
}

fn err(line: &str, reason: &'static str) -> ProtocolError {
    ProtocolError {
        line: line.into(),
        reason,
    }
}

/// A token that can travel in one protocol field.
pub fn is_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

impl fmt::Display for Request {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Request::Hello => f.write_str("HELLO"),
            Request::Predict { sample_id, payload } => write!(f, "PREDICT {sample_id} {payload}"),
            Request::Bye => f.write_str("BYE"),
        }
    }
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Response::Model(name) => write!(f, "MODEL {name}"),
            Response::Result {
                sample_id,
                label,
                confidence,
            } => write!(f, "RESULT {sample_id} {label} {confidence:.6}"),
        }
    }
}

fn strip_eol(line: &str) -> &str {
    line.strip_suffix('\n').unwrap_or(line)
}

impl Request {
    pub fn parse(line: &str) -> Result<Self, ProtocolError> {
        let body = strip_eol(line);
        let parts: Vec<&str> = body.split(' ').collect();
        match parts.as_slice() {
            ["HELLO"] => Ok(Request::Hello),
            ["BYE"] => Ok(Request::Bye),
            ["PREDICT", id, payload] if is_token(id) && is_token(payload) => Ok(Request::Predict {
                sample_id: (*id).into(),
                payload: (*payload).into(),
            }),
            ["PREDICT", ..] => Err(err(body, "expected `PREDICT <sample_id> <payload_path>`")),
            _ => Err(err(body, "unknown request")),
        }
    }
}

/// `d+.dddddd`
fn is_fixed6(s: &str) -> bool {
    match s.split_once('.') {
        Some((int, frac)) => {
            !int.is_empty()
                && int.bytes().all(|b| b.is_ascii_digit())
                && frac.len() == 6
                && frac.bytes().all(|b| b.is_ascii_digit())
        }
        None => false,
    }
}

impl Response {
    pub fn parse(line: &str) -> Result<Self, ProtocolError> {
        let body = strip_eol(line);
        if let Some(name) = body.strip_prefix("MODEL ") {
            return if name.is_empty() || name.contains('\n') {
                Err(err(body, "empty model name"))
            } else {
                Ok(Response::Model(name.into()))
            };
        }
        let parts: Vec<&str> = body.split(' ').collect();
        match parts.as_slice() {
            ["RESULT", id, label, conf] if is_token(id) => {
                let label = label
                    .parse()
                    .map_err(|_| err(body, "predicted label is not a class index"))?;
                if !is_fixed6(conf) {
                    return Err(err(body, "confidence must have exactly 6 decimals"));
                }
                let confidence: f64 = conf.parse().map_err(|_| err(body, "bad confidence"))?;
                if confidence > 1.0 {
                    return Err(err(body, "confidence outside [0, 1]"));
                }
                Ok(Response::Result {
                    sample_id: (*id).into(),
                    label,
                    confidence,
                })
            }
            _ => Err(err(
                body,
                "expected `MODEL <name>` or `RESULT <id> <label> <confidence>`",
            )),
        }
    }
}

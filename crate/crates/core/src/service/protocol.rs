//! Newline-delimited JSON framing: one UTF-8 JSON object per line.

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Fixed error code table.
pub mod codes {
    /// Parse or validation failure, including malformed frames.
    pub const VALIDATION: i64 = 1;
    pub const RESOURCE: i64 = 2;
    pub const UNKNOWN_METHOD: i64 = 3;
    pub const BACKEND: i64 = 4;
    pub const INVALID_STATE: i64 = 5;
}

pub const METHODS: [&str; 8] = [
    "create_circuit",
    "sync_run",
    "async_run",
    "get_result",
    "run_ensemble",
    "list_backends",
    "utilization",
    "server_stats",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: Value,
    pub method: String,
    #[serde(default = "empty_params")]
    pub params: Value,
}

fn empty_params() -> Value {
    Value::Object(Default::default())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub code: i64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: Value,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<WireError>,
}

impl WireResponse {
    pub fn success(id: Value, result: Value) -> Self {
        WireResponse {
            id,
            ok: true,
            result: Some(result),
            error: None,
        }
    }

    pub fn failure(id: Value, code: i64, message: impl Into<String>) -> Self {
        WireResponse {
            id,
            ok: false,
            result: None,
            error: Some(WireError {
                code,
                message: message.into(),
            }),
        }
    }

    /// Serialized frame without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("responses always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed frame: {0}")]
pub struct FrameError(pub String);

/// Decode one frame. Anything that is not a JSON object carrying a string or
/// number `id` and a nonempty `method` is malformed.
pub fn decode_request(line: &str) -> Result<WireRequest, FrameError> {
    let value: Value = serde_json::from_str(line).map_err(|e| FrameError(e.to_string()))?;
    if !value.is_object() {
        return Err(FrameError("frame is not a JSON object".into()));
    }
    let req: WireRequest = serde_json::from_value(value).map_err(|e| FrameError(e.to_string()))?;
    if !(req.id.is_string() || req.id.is_number()) {
        return Err(FrameError("id must be a string or number".into()));
    }
    if req.method.is_empty() {
        return Err(FrameError("method must be nonempty".into()));
    }
    Ok(req)
}

pub fn decode_response(line: &str) -> Result<WireResponse, FrameError> {
    let resp: WireResponse = serde_json::from_str(line).map_err(|e| FrameError(e.to_string()))?;
    if resp.ok != resp.error.is_none() || resp.ok != resp.result.is_some() {
        return Err(FrameError("response must carry exactly one of result and error".into()));
    }
    Ok(resp)
}

pub fn encode_request(req: &WireRequest) -> String {
    serde_json::to_string(req).expect("requests always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn decode_ok_and_default_params() {
        let r = decode_request(r#"{"id":"1","method":"list_backends"}"#).unwrap();
        assert_eq!(r.params, json!({}));
        let r = decode_request(r#"{"id":7,"method":"x","params":{"a":1}}"#).unwrap();
        assert_eq!(r.id, json!(7));
    }

    #[test]
    fn malformed_frames() {
        for bad in [
            "not json",
            "[1,2]",
            r#"{"method":"x"}"#,
            r#"{"id":null,"method":"x"}"#,
            r#"{"id":"1","method":""}"#,
            r#"{"id":"1"}"#,
        ] {
            assert!(decode_request(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn response_has_exactly_one_payload() {
        let ok = WireResponse::success(json!("1"), json!([1])).to_line();
        let v: Value = serde_json::from_str(&ok).unwrap();
        assert!(v.get("result").is_some() && v.get("error").is_none());
        let err = WireResponse::failure(json!("2"), codes::UNKNOWN_METHOD, "nope").to_line();
        let v: Value = serde_json::from_str(&err).unwrap();
        assert!(v.get("result").is_none());
        assert_eq!(v["error"]["code"], json!(3));
        assert!(!ok.contains('\n'));
    }
}

//! Line-delimited JSON progress events on standard error.
//!
//! Silent until [`set_enabled`] is called, so library users and tests see no output.

use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};

use serde_json::{Map, Value};

static ENABLED: AtomicBool = AtomicBool::new(false);

pub fn set_enabled(on: bool) {
    ENABLED.store(on, Ordering::Relaxed);
}

pub fn enabled() -> bool {
    ENABLED.load(Ordering::Relaxed)
}

/// Renders `{"event": <event>, ...fields}` as one line.
pub fn render(event: &str, fields: Value) -> String {
    let mut obj = Map::new();
    obj.insert("event".into(), Value::String(event.into()));
    if let Value::Object(extra) = fields {
        obj.extend(extra);
    }
    Value::Object(obj).to_string()
}

pub fn emit(event: &str, fields: Value) {
    if enabled() {
        let line = render(event, fields);
        let _ = writeln!(std::io::stderr().lock(), "{line}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn event_first_then_fields() {
        let line = render("epoch", json!({"benchmark": 3, "loss": 0.5}));
        assert_eq!(line, r#"{"event":"epoch","benchmark":3,"loss":0.5}"#);
        assert!(!line.contains('\n'));
    }
}

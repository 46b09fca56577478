//! One JSON line per event to stderr. Results go to files; the log stream is
//! diagnostics only and carries no timestamps so reruns are comparable.

use serde_json::{json, Value};

pub fn emit(event: &str, fields: Value) {
    let mut obj = json!({ "event": event });
    if let (Some(map), Value::Object(extra)) = (obj.as_object_mut(), fields) {
        for (k, v) in extra {
            map.insert(k, v);
        }
    }
    eprintln!("{obj}");
}

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::ModelRequest;

/// Key-sorted JSON form of a request with image paths replaced by the
/// SHA-256 of their bytes. This is what fixtures store and what gets hashed.
pub fn canonical_request(req: &ModelRequest) -> Value {
    let images: Vec<String> = req
        .image_attachments
        .iter()
        .map(|p| match std::fs::read(p) {
            Ok(bytes) => hex::encode(Sha256::digest(bytes)),
            Err(_) => format!("unreadable:{}", p.display()),
        })
        .collect();
    // serde_json's default Map is a BTreeMap, so keys serialize sorted.
    json!({
        "backend_id": req.backend_id,
        "messages": req.role_messages,
        "images": images,
        "tool_schema": req.tool_schema,
        "max_output_tokens": req.max_output_tokens,
    })
}

fn sha256_json(value: &Value) -> String {
    let bytes = serde_json::to_vec(value).expect("json value serializes");
    hex::encode(Sha256::digest(bytes))
}

/// Stable content hash of a request, independent of field order and image paths.
pub fn canonical_request_hash(req: &ModelRequest) -> String {
    sha256_json(&canonical_request(req))
}

/// Fixture key for embedding one text on one backend.
pub fn embed_text_hash(backend_id: &str, text: &str) -> String {
    sha256_json(&json!({ "kind": "embed", "backend_id": backend_id, "text": text }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_gateway::Message;

    fn req() -> ModelRequest {
        ModelRequest::new("llm", vec![Message::system("sys"), Message::user("what colour?")])
            .with_tools(serde_json::from_str(r#"[{"name":"a","description":"d","parameters":{"x":1,"y":2}}]"#).unwrap())
    }

    #[test]
    fn field_order_does_not_matter() {
        let a = req();
        let text = r#"{
            "max_output_tokens": 2048,
            "tool_schema": [{"parameters":{"y":2,"x":1},"description":"d","name":"a"}],
            "role_messages": [{"text":"sys","role":"system"},{"role":"user","text":"what colour?"}],
            "backend_id": "llm"
        }"#;
        let b: ModelRequest = serde_json::from_str(text).unwrap();
        assert_eq!(canonical_request_hash(&a), canonical_request_hash(&b));
    }

    #[test]
    fn one_character_changes_hash() {
        let a = req();
        let mut b = req();
        b.role_messages[1].text = "what colour!".into();
        assert_ne!(canonical_request_hash(&a), canonical_request_hash(&b));
    }

    #[test]
    fn images_hash_by_content() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("one.jpg");
        let p2 = dir.path().join("sub_two.jpg");
        std::fs::write(&p1, b"same bytes").unwrap();
        std::fs::write(&p2, b"same bytes").unwrap();
        let a = req().with_images(vec![p1.clone()]);
        let b = req().with_images(vec![p2]);
        assert_eq!(canonical_request_hash(&a), canonical_request_hash(&b));
        std::fs::write(&p1, b"other bytes").unwrap();
        assert_ne!(canonical_request_hash(&a), canonical_request_hash(&b));
    }

    #[test]
    fn hash_is_hex_sha256() {
        let h = canonical_request_hash(&req());
        assert_eq!(h.len(), 64);
        assert!(h.chars().all(|c| c.is_ascii_hexdigit()));
    }
}

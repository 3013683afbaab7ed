use privi_core::curation::Snippet;

use super::jsonl::{from_jsonl, to_jsonl};
use crate::error::Result;

/// Rounds to 6 decimals; negative zero becomes zero.
pub fn round6(x: f64) -> f64 {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn rounded(s: &Snippet) -> Snippet {
    let mut s = s.clone();
    s.start_s = round6(s.start_s);
    s.end_s = round6(s.end_s);
    s.keyframe_time_s = round6(s.keyframe_time_s);
    s.relevance_score = s.relevance_score.map(round6);
    for b in &mut s.boxes {
        b.x1 = round6(b.x1);
        b.y1 = round6(b.y1);
        b.x2 = round6(b.x2);
        b.y2 = round6(b.y2);
        b.score = round6(b.score);
    }
    s
}

/// Manifest bytes: one snippet per line in the fixed field order, floats
/// rounded to 6 decimals.
pub fn write_manifest(snippets: &[Snippet]) -> Vec<u8> {
    let rows: Vec<Snippet> = snippets.iter().map(rounded).collect();
    to_jsonl(&rows)
}

pub fn read_manifest(bytes: &[u8], name: &str) -> Result<Vec<Snippet>> {
    let snippets: Vec<Snippet> = from_jsonl(bytes, name)?;
    for s in &snippets {
        s.validate()?;
    }
    Ok(snippets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use privi_core::curation::{DetectionBox, DiscardReason};

    #[test]
    fn field_order_and_rounding() {
        let mut s = Snippet::new("zoo", "v1", 2.0, 5.0);
        s.relevance_score = Some(1.0 / 3.0);
        s.boxes.push(DetectionBox::new(0.1234567, 1.0, 2.0, 3.0, 0.9, "primate"));
        s.discard(DiscardReason::NoDetection);
        let line = String::from_utf8(write_manifest(&[s])).unwrap();
        assert_eq!(
            line,
            "{\"snippet_id\":\"v1@2000\",\"source_id\":\"zoo\",\"video_ref\":\"v1\",\"start_s\":2.0,\"end_s\":5.0,\
             \"keyframe_time_s\":3.5,\"boxes\":[{\"x1\":0.123457,\"y1\":1.0,\"x2\":2.0,\"y2\":3.0,\"score\":0.9,\
             \"label\":\"primate\"}],\"embedding_ref\":null,\"relevance_score\":0.333333,\"species\":null,\
             \"kept\":false,\"discard_reason\":\"no_detection\"}\n"
        );
    }

    #[test]
    fn roundtrip_is_a_fixed_point() {
        let mut s = Snippet::new("zoo", "v1", 0.1 + 0.2, 3.3 + 1e-9);
        s.keyframe_time_s = 0.5 * (s.start_s + s.end_s);
        let once = write_manifest(&[s]);
        let back = read_manifest(&once, "m").unwrap();
        assert_eq!(write_manifest(&back), once);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let line = b"{\"snippet_id\":\"a\",\"extra\":1}\n";
        assert!(read_manifest(line, "m").is_err());
    }
}

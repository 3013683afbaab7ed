use alloc::string::String;

use super::types::{Snippet, SourceDataset};

/// Detector labels that name no particular species (the prompt vocabulary).
pub const GENERIC_LABELS: &[&str] = &["primate", "monkey", "ape"];

/// Species label from source metadata, cross-checked against the detector.
///
/// | source species | top-scoring box label | result |
/// |---|---|---|
/// | one | that species or a generic label | that species |
/// | one | anything else | none (detector disagrees) |
/// | several | one of them | that species |
/// | several | anything else | none |
/// | none | any | none |
pub fn assign_species(snippet: &Snippet, source: &SourceDataset) -> Option<String> {
    let mut top = snippet.boxes.first()?;
    for b in &snippet.boxes[1..] {
        if b.score > top.score {
            top = b;
        }
    }
    if let Some(s) = source.species.iter().find(|s| **s == top.label) {
        return Some(s.clone());
    }
    match source.species.as_slice() {
        [only] if GENERIC_LABELS.contains(&top.label.as_str()) => Some(only.clone()),
        _ => None,
    }
}

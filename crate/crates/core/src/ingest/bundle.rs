use std::path::Path;

use super::IngestError;
use crate::song::{validate_song, Song};

/// Parses one canonical song bundle and validates it.
pub fn parse_song_bundle(text: &str) -> Result<Song, IngestError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let song: Song = serde_path_to_error::deserialize(de).map_err(|e| {
        let mut path = e.path().to_string();
        let message = e.inner().to_string();
        // serde reports a missing field at its parent; point at the field itself.
        if let Some(field) = missing_field_name(&message) {
            path = if path == "." { field.to_string() } else { format!("{path}.{field}") };
        }
        IngestError::SchemaViolation { path, message }
    })?;
    if let Some(v) = validate_song(&song).into_iter().next() {
        let path = match v.measure {
            Some(i) => format!("measures[{i}].{}", v.field),
            None => v.field.clone(),
        };
        return Err(IngestError::SchemaViolation { path, message: v.message });
    }
    Ok(song)
}

fn missing_field_name(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next()
}

pub fn write_song_bundle(song: &Song) -> String {
    let mut text = serde_json::to_string_pretty(song).expect("songs always serialize");
    text.push('\n');
    text
}

pub fn read_song_bundle(path: &Path) -> Result<Song, IngestError> {
    parse_song_bundle(&std::fs::read_to_string(path)?)
}

//! Reading songs into the shared representation and writing arrangements out.

mod bundle;
mod midi;
mod pop909;

pub use bundle::{parse_song_bundle, read_song_bundle, write_song_bundle};
pub use midi::{
    arrangement_notes, midi_bytes, read_midi, write_midi, ArrangedMeasure, Arrangement, MidiFile, MidiNote,
    MidiTrack, PPQN,
};
pub use pop909::{ingest_dataset, ingest_dataset_song, IngestReport, SkippedSong, SourceDirectory};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("malformed annotation {path}: {message}")]
    MalformedAnnotation { path: PathBuf, message: String },
    #[error("cannot identify tracks: {0}")]
    TrackAmbiguity(String),
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("invalid MIDI: {0}")]
    Midi(String),
    #[error("invalid arrangement: {0}")]
    InvalidArrangement(String),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

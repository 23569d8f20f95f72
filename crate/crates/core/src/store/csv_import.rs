//! Import per-loop CSV exports.
//!
//! Each row is one loop. The 256-sample EEG window is synthesized from the
//! row's band powers with the subject generator, since exports carry band
//! powers but not raw samples.

use std::collections::HashMap;
use std::io::Read;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::StoreError;
use crate::codec::{BandPowers, TgamPacket, MAX_BAND_POWER, MAX_ESENSE};
use crate::env::{synthesize_eeg, LOWPASS_HZ};
use crate::session::{
    is_valid_bpm, LoopRecord, Session, SessionHeader, ARRANGEMENT_SLOTS, LOOPS_PER_CYCLE,
};

pub const CSV_COLUMNS: [&str; 14] = [
    "delta",
    "theta",
    "low_alpha",
    "high_alpha",
    "low_beta",
    "high_beta",
    "low_gamma",
    "mid_gamma",
    "attention",
    "meditation",
    "audio",
    "bpm",
    "density",
    "style",
];

/// Read a CSV export into a session with the given header. Column order is
/// free; every documented column must be present and no other.
pub fn import_csv<R: Read>(
    input: R,
    header: SessionHeader,
    seed: u64,
) -> Result<Session, StoreError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let names = rdr
        .headers()
        .map_err(|e| StoreError::SchemaMismatch(e.to_string()))?
        .clone();
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n, i)).collect();
    for col in CSV_COLUMNS {
        if !index.contains_key(col) {
            return Err(StoreError::SchemaMismatch(format!("missing column {col}")));
        }
    }
    if let Some(extra) = names.iter().find(|n| !CSV_COLUMNS.contains(n)) {
        return Err(StoreError::SchemaMismatch(format!(
            "unknown column {extra}"
        )));
    }
    if names.len() != CSV_COLUMNS.len() {
        return Err(StoreError::SchemaMismatch("duplicate column".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut loops = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| StoreError::BadRow {
            row,
            message: e.to_string(),
        })?;
        let field = |name: &str| rec.get(index[name]).unwrap_or("");
        let int = |name: &str, max: u64| -> Result<u64, StoreError> {
            let v: u64 = field(name).parse().map_err(|_| StoreError::BadRow {
                row,
                message: format!("{name}: {:?} is not an unsigned integer", field(name)),
            })?;
            if v > max {
                return Err(StoreError::BadRow {
                    row,
                    message: format!("{name}: {v} exceeds {max}"),
                });
            }
            Ok(v)
        };
        let mut bands = [0u32; 8];
        for (b, name) in bands.iter_mut().zip(&CSV_COLUMNS[..8]) {
            *b = int(name, MAX_BAND_POWER as u64)? as u32;
        }
        let attention = int("attention", MAX_ESENSE as u64)? as u8;
        let meditation = int("meditation", MAX_ESENSE as u64)? as u8;
        let bpm = int("bpm", u32::MAX as u64)? as u32;
        if !is_valid_bpm(bpm) {
            return Err(StoreError::BadRow {
                row,
                message: format!("bpm {bpm} not in 90..=140 step 5"),
            });
        }
        let density = int("density", u32::MAX as u64)? as u32;
        let audio: f64 = field("audio").parse().map_err(|_| StoreError::BadRow {
            row,
            message: format!("audio: {:?} is not a number", field("audio")),
        })?;
        if !audio.is_finite() {
            return Err(StoreError::BadRow {
                row,
                message: "audio is not finite".into(),
            });
        }
        let powers = bands.map(|b| b as f64);
        loops.push(LoopRecord {
            eeg_samples: synthesize_eeg(&powers, bpm, 0.0, LOWPASS_HZ, &mut rng),
            audio_feature: audio,
            packet: TgamPacket {
                poor_signal: 0,
                bands: BandPowers::from_array(bands),
                attention,
                meditation,
            },
            bpm,
            density,
            style: field("style").to_string(),
            arrangement: [0; ARRANGEMENT_SLOTS],
        });
    }
    if loops.is_empty() || loops.len() % LOOPS_PER_CYCLE != 0 {
        return Err(StoreError::RaggedData(loops.len()));
    }
    Ok(Session { header, loops })
}

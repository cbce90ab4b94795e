//! Mixture simulation: room acoustics, loudspeaker nonlinearity, level
//! control, speaker embeddings and AGC targets.

mod agc;
mod dataset;
mod distortion;
mod embedding;
mod mix;
mod room;
mod synth;

pub use agc::{agc_frame_gains, db_to_amplitude, reference_agc, AgcConfig};
pub use dataset::{
    make_dataset, splitmix64, verify_dataset, DatasetManifest, ItemCheck, LoadedItem, ManifestRecord,
    SimulationConfig, CONFIG_FILE, MANIFEST_FILE,
};
pub use distortion::{apply_distortion, sigmoid_curve, DistortionKind, DistortionSpec};
pub use embedding::{
    enroll_embedding, hash_seed, read_embedding, synth_speaker_embedding, write_embedding, EMBEDDING_DIM,
};
pub use mix::{convolve, level_gain, mix, ratio_db, sum3, Mixture, SILENCE_RMS};
pub use room::{
    calibrated_reflection, default_rir_len, energy_decay_db, image_source_rir, image_source_rir_len, schroeder_t60, synthetic_decay_rir,
    Point, Rir, RoomSpec, SPEED_OF_SOUND,
};
pub use synth::{speech_shaped_noise, synth_speech, Voice};

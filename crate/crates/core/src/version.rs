//! Content hash of the library sources, recorded in run manifests.

use sha2::{Digest, Sha256};

macro_rules! sources {
    ($($path:literal),* $(,)?) => {
        &[$(($path, include_str!($path))),*]
    };
}

const SOURCES: &[(&str, &str)] = sources![
    "lib.rs",
    "ablation.rs",
    "error.rs",
    "nn.rs",
    "ga.rs",
    "generator.rs",
    "discriminator.rs",
    "perceptual.rs",
    "losses.rs",
    "checkpoint.rs",
    "metrics.rs",
    "infer.rs",
    "trainer.rs",
    "version.rs",
    "data/mod.rs",
    "data/annotation.rs",
    "data/convert.rs",
    "data/dataset.rs",
    "data/mask.rs",
    "data/pyramid.rs",
    "data/sample.rs",
    "data/synth.rs",
];

/// Hex SHA-256 over `path NUL len NUL contents` of every source file, in a fixed order.
pub fn code_hash() -> String {
    let mut h = Sha256::new();
    for (path, text) in SOURCES {
        h.update(path.as_bytes());
        h.update([0]);
        h.update(text.len().to_string().as_bytes());
        h.update([0]);
        h.update(text.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

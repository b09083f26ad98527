//! Checkpoint files: the flat binary network format on disk.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use opetrl_core::agent::{decode_network, encode_network, QNetwork};

pub fn save(path: &Path, net: &QNetwork) -> Result<()> {
    std::fs::write(path, encode_network(net))
        .with_context(|| format!("writing checkpoint {}", path.display()))
}

/// Loads a checkpoint, rejecting networks whose input width does not match
/// the expected state size.
pub fn load(path: &Path, expected_input_dim: usize) -> Result<QNetwork> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    let net = decode_network(&bytes).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    if net.input_dim() != expected_input_dim {
        return Err(anyhow!(
            "{}: checkpoint expects {} state features, configuration needs {}",
            path.display(),
            net.input_dim(),
            expected_input_dim
        ));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn file_round_trip_and_dim_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let net = QNetwork::xavier(17, &mut rng);
        save(&path, &net).unwrap();
        let back = load(&path, 17).unwrap();
        assert_eq!(net, back);
        assert!(load(&path, 19).is_err());
    }
}

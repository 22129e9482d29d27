//! Checkpoint serialization: a little-endian binary with a version header
//! carrying the environment name, network dimensions, PopArt statistics, and
//! the flat parameter vector.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "EAPOCKPT"
//! version u32      (currently 1)
//! env     u32 length + that many UTF-8 bytes
//! dims    u32 obs_dim, u32 num_actions, u32 hidden_count, u32 per hidden
//! popart  u8 enabled, then per head (value, entropy): f64 mu, nu, beta, sigma_min
//! params  u64 count, then count f64 values in flatten order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DVector;
use rand::SeedableRng;

use super::{DualHeadNetwork, NetError, PopArtStats};

const MAGIC: &[u8; 8] = b"EAPOCKPT";
const VERSION: u32 = 1;

/// A deserialized checkpoint: the network plus the environment it was
/// trained on.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub env_name: String,
    pub net: DualHeadNetwork,
}

pub fn save_checkpoint(path: &Path, env_name: &str, net: &DualHeadNetwork) -> Result<(), NetError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(env_name.len() as u32)?;
    w.write_all(env_name.as_bytes())?;
    w.write_u32::<LittleEndian>(net.obs_dim as u32)?;
    w.write_u32::<LittleEndian>(net.num_actions as u32)?;
    w.write_u32::<LittleEndian>(net.hidden.len() as u32)?;
    for &h in &net.hidden {
        w.write_u32::<LittleEndian>(h as u32)?;
    }
    w.write_u8(net.popart_enabled as u8)?;
    for stats in [&net.value_popart, &net.entropy_popart] {
        w.write_f64::<LittleEndian>(stats.mu)?;
        w.write_f64::<LittleEndian>(stats.nu)?;
        w.write_f64::<LittleEndian>(stats.beta)?;
        w.write_f64::<LittleEndian>(stats.sigma_min)?;
    }
    let params = net.params_flat();
    w.write_u64::<LittleEndian>(params.len() as u64)?;
    for &p in params.iter() {
        w.write_f64::<LittleEndian>(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NetError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NetError::BadCheckpoint("wrong magic bytes".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(NetError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let name_len = r.read_u32::<LittleEndian>()? as usize;
    let mut name_bytes = vec![0u8; name_len];
    r.read_exact(&mut name_bytes)?;
    let env_name = String::from_utf8(name_bytes)
        .map_err(|_| NetError::BadCheckpoint("env name is not UTF-8".into()))?;
    let obs_dim = r.read_u32::<LittleEndian>()? as usize;
    let num_actions = r.read_u32::<LittleEndian>()? as usize;
    let hidden_count = r.read_u32::<LittleEndian>()? as usize;
    let mut hidden = Vec::with_capacity(hidden_count);
    for _ in 0..hidden_count {
        hidden.push(r.read_u32::<LittleEndian>()? as usize);
    }
    let popart_enabled = r.read_u8()? != 0;
    let mut stats = [PopArtStats::identity(0.0); 2];
    for s in &mut stats {
        s.mu = r.read_f64::<LittleEndian>()?;
        s.nu = r.read_f64::<LittleEndian>()?;
        s.beta = r.read_f64::<LittleEndian>()?;
        s.sigma_min = r.read_f64::<LittleEndian>()?;
    }
    let param_count = r.read_u64::<LittleEndian>()? as usize;
    let mut params = Vec::with_capacity(param_count);
    for _ in 0..param_count {
        params.push(r.read_f64::<LittleEndian>()?);
    }

    // Seed irrelevant: every parameter is overwritten below.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut net =
        DualHeadNetwork::new(obs_dim, num_actions, &hidden, stats[0].beta, popart_enabled, &mut rng);
    net.value_popart = stats[0];
    net.entropy_popart = stats[1];
    if param_count != net.num_params() {
        return Err(NetError::BadCheckpoint(format!(
            "parameter count {param_count} does not match dimensions ({})",
            net.num_params()
        )));
    }
    net.set_params_flat(&DVector::from_vec(params))?;
    Ok(Checkpoint { env_name, net })
}

//! Versioned binary checkpoints: layer shapes, flattened little-endian f64
//! weights for the online and target networks, optimizer moments, epsilon
//! state and the episode counter. Loading validates the schema fingerprint.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Adam, EpsilonSchedule, Mlp, QAgent, ReplayBuffer};
use crate::error::{AdvisorError, Result};

const MAGIC: &[u8; 8] = b"PADVQNET";
const VERSION: u32 = 1;

impl QAgent {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        write_string(&mut w, &self.fingerprint)?;
        w.write_f64::<LittleEndian>(self.gamma)?;
        w.write_u32::<LittleEndian>(self.batch_size as u32)?;
        w.write_u32::<LittleEndian>(self.buffer.capacity() as u32)?;
        w.write_f64::<LittleEndian>(self.epsilon.start)?;
        w.write_f64::<LittleEndian>(self.epsilon.decay)?;
        w.write_u64::<LittleEndian>(self.epsilon.episode)?;
        w.write_u64::<LittleEndian>(self.episodes_trained)?;
        w.write_f64::<LittleEndian>(self.optimizer.learning_rate)?;
        w.write_f64::<LittleEndian>(self.optimizer.beta1)?;
        w.write_f64::<LittleEndian>(self.optimizer.beta2)?;
        w.write_f64::<LittleEndian>(self.optimizer.epsilon)?;
        w.write_u64::<LittleEndian>(self.optimizer.step)?;
        let dims = self.net.dims();
        w.write_u32::<LittleEndian>(dims.len() as u32)?;
        for d in &dims {
            w.write_u32::<LittleEndian>(*d as u32)?;
        }
        for net in [&self.net, &self.target, &self.optimizer.m, &self.optimizer.v] {
            write_flat(&mut w, net)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Load a checkpoint, rejecting one written for a different schema.
    pub fn load(path: &Path, expected_fingerprint: &str) -> Result<QAgent> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(AdvisorError::Checkpoint(format!(
                "{} is not an agent checkpoint",
                path.display()
            )));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(AdvisorError::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let fingerprint = read_string(&mut r)?;
        if fingerprint != expected_fingerprint {
            return Err(AdvisorError::Checkpoint(format!(
                "checkpoint was trained for schema fingerprint {fingerprint}, expected {expected_fingerprint}"
            )));
        }
        let gamma = r.read_f64::<LittleEndian>()?;
        let batch_size = r.read_u32::<LittleEndian>()? as usize;
        let buffer_capacity = r.read_u32::<LittleEndian>()? as usize;
        let eps_start = r.read_f64::<LittleEndian>()?;
        let eps_decay = r.read_f64::<LittleEndian>()?;
        let eps_episode = r.read_u64::<LittleEndian>()?;
        let episodes_trained = r.read_u64::<LittleEndian>()?;
        let learning_rate = r.read_f64::<LittleEndian>()?;
        let beta1 = r.read_f64::<LittleEndian>()?;
        let beta2 = r.read_f64::<LittleEndian>()?;
        let adam_eps = r.read_f64::<LittleEndian>()?;
        let step = r.read_u64::<LittleEndian>()?;
        let dim_count = r.read_u32::<LittleEndian>()? as usize;
        if dim_count < 2 || dim_count > 64 {
            return Err(AdvisorError::Checkpoint(format!(
                "implausible layer count {dim_count}"
            )));
        }
        let mut dims = Vec::with_capacity(dim_count);
        for _ in 0..dim_count {
            dims.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let net = read_flat(&mut r, &dims)?;
        let target = read_flat(&mut r, &dims)?;
        let m = read_flat(&mut r, &dims)?;
        let v = read_flat(&mut r, &dims)?;
        let mut optimizer = Adam::new(learning_rate, &net);
        optimizer.beta1 = beta1;
        optimizer.beta2 = beta2;
        optimizer.epsilon = adam_eps;
        optimizer.step = step;
        optimizer.m = m;
        optimizer.v = v;
        Ok(QAgent {
            net,
            target,
            optimizer,
            buffer: ReplayBuffer::new(buffer_capacity),
            epsilon: EpsilonSchedule { start: eps_start, decay: eps_decay, episode: eps_episode },
            gamma,
            batch_size,
            fingerprint,
            episodes_trained,
        })
    }
}

fn write_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    if len > 4096 {
        return Err(AdvisorError::Checkpoint("implausible string length".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| AdvisorError::Checkpoint("non-utf8 string".into()))
}

fn write_flat<W: Write>(w: &mut W, net: &Mlp) -> Result<()> {
    for value in net.flatten() {
        w.write_f64::<LittleEndian>(value)?;
    }
    Ok(())
}

fn read_flat<R: Read>(r: &mut R, dims: &[usize]) -> Result<Mlp> {
    let mut net = Mlp::zeros(dims);
    let mut flat = vec![0.0; net.param_count()];
    for value in flat.iter_mut() {
        *value = r.read_f64::<LittleEndian>()?;
    }
    net.assign_flat(&flat);
    Ok(net)
}

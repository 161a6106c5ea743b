//! Flat binary checkpoint encoding with exact round-trip.
//!
//! Layout conventions (all integers and floats little-endian):
//!
//! * file magic: the 8 raw bytes `RPEXCKPT`, then a `u32` format version;
//! * `f64` vectors: `u64` length followed by the raw float bytes;
//! * MLP block: `u32` width count, widths as `u32`s, `u64` Adam step
//!   counter, then three float vectors of equal length in declaration
//!   order — parameters, first moments, second moments;
//! * Gaussian policy: MLP block, log-std vector, its Adam step/moments,
//!   then bound vectors (low, high);
//! * deterministic policy: MLP block, then bound vectors;
//! * critic ensemble: `u32` size, `f64` quantile level, `u32` state and
//!   action dims, then each member MLP followed by each target MLP;
//! * normalization stats: mean vector, std vector.

use std::io::{Read, Write};

use super::critic::CriticEnsemble;
use super::mlp::{AdamState, Mlp};
use super::policy::{ActionBounds, DeterministicPolicy, GaussianPolicy, Policy};
use super::{NeuralError, Result};
use crate::math::NormalizationStats;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RPEXCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_magic(w: &mut impl Write) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(w, CHECKPOINT_VERSION)
}

pub fn read_magic(r: &mut impl Read) -> Result<()> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NeuralError::Corrupt("bad magic"));
    }
    if read_u32(r)? != CHECKPOINT_VERSION {
        return Err(NeuralError::Corrupt("unsupported version"));
    }
    Ok(())
}

pub fn write_u8(w: &mut impl Write, v: u8) -> Result<()> {
    Ok(w.write_all(&[v])?)
}

pub fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn write_f64_vec(w: &mut impl Write, v: &[f64]) -> Result<()> {
    write_u64(w, v.len() as u64)?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_f64_vec(r: &mut impl Read) -> Result<Vec<f64>> {
    let n = read_u64(r)? as usize;
    if n > (1 << 32) {
        return Err(NeuralError::Corrupt("implausible vector length"));
    }
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        v.push(read_f64(r)?);
    }
    Ok(v)
}

pub fn write_mlp(w: &mut impl Write, mlp: &Mlp) -> Result<()> {
    write_u32(w, mlp.widths().len() as u32)?;
    for width in mlp.widths() {
        write_u32(w, *width as u32)?;
    }
    write_u64(w, mlp.adam().step)?;
    write_f64_vec(w, mlp.params())?;
    write_f64_vec(w, &mlp.adam().m)?;
    write_f64_vec(w, &mlp.adam().v)?;
    Ok(())
}

pub fn read_mlp(r: &mut impl Read) -> Result<Mlp> {
    let n_widths = read_u32(r)? as usize;
    if !(2..=64).contains(&n_widths) {
        return Err(NeuralError::Corrupt("implausible layer count"));
    }
    let mut widths = Vec::with_capacity(n_widths);
    for _ in 0..n_widths {
        widths.push(read_u32(r)? as usize);
    }
    let step = read_u64(r)?;
    let params = read_f64_vec(r)?;
    let m = read_f64_vec(r)?;
    let v = read_f64_vec(r)?;
    if m.len() != params.len() || v.len() != params.len() {
        return Err(NeuralError::Corrupt("adam moment lengths disagree"));
    }
    Mlp::from_parts(widths, params, AdamState { m, v, step }, 0)
}

fn write_bounds(w: &mut impl Write, bounds: &ActionBounds) -> Result<()> {
    write_f64_vec(w, &bounds.low)?;
    write_f64_vec(w, &bounds.high)
}

fn read_bounds(r: &mut impl Read) -> Result<ActionBounds> {
    let low = read_f64_vec(r)?;
    let high = read_f64_vec(r)?;
    ActionBounds::new(low, high)
}

const POLICY_TAG_GAUSSIAN: u8 = 0;
const POLICY_TAG_DETERMINISTIC: u8 = 1;

pub fn write_policy(w: &mut impl Write, policy: &Policy) -> Result<()> {
    match policy {
        Policy::Gaussian(p) => {
            write_u8(w, POLICY_TAG_GAUSSIAN)?;
            write_mlp(w, &p.mean_net)?;
            write_f64_vec(w, p.log_std())?;
            write_u64(w, p.log_std_adam().step)?;
            write_f64_vec(w, &p.log_std_adam().m)?;
            write_f64_vec(w, &p.log_std_adam().v)?;
            write_bounds(w, p.bounds())
        }
        Policy::Deterministic(p) => {
            write_u8(w, POLICY_TAG_DETERMINISTIC)?;
            write_mlp(w, &p.net)?;
            write_bounds(w, p.bounds())
        }
    }
}

pub fn read_policy(r: &mut impl Read) -> Result<Policy> {
    match read_u8(r)? {
        POLICY_TAG_GAUSSIAN => {
            let mean_net = read_mlp(r)?;
            let log_std = read_f64_vec(r)?;
            let step = read_u64(r)?;
            let m = read_f64_vec(r)?;
            let v = read_f64_vec(r)?;
            let bounds = read_bounds(r)?;
            if m.len() != log_std.len() || v.len() != log_std.len() {
                return Err(NeuralError::Corrupt("log-std moment lengths disagree"));
            }
            Ok(Policy::Gaussian(GaussianPolicy::from_parts(
                mean_net,
                log_std,
                AdamState { m, v, step },
                bounds,
            )?))
        }
        POLICY_TAG_DETERMINISTIC => {
            let net = read_mlp(r)?;
            let bounds = read_bounds(r)?;
            Ok(Policy::Deterministic(DeterministicPolicy::from_parts(net, bounds)?))
        }
        _ => Err(NeuralError::Corrupt("unknown policy tag")),
    }
}

pub fn write_critic(w: &mut impl Write, critic: &CriticEnsemble) -> Result<()> {
    write_u32(w, critic.size() as u32)?;
    write_f64(w, critic.quantile_level())?;
    write_u32(w, critic.state_dim() as u32)?;
    write_u32(w, critic.action_dim() as u32)?;
    for m in &critic.members {
        write_mlp(w, m)?;
    }
    for t in &critic.targets {
        write_mlp(w, t)?;
    }
    Ok(())
}

pub fn read_critic(r: &mut impl Read) -> Result<CriticEnsemble> {
    let size = read_u32(r)? as usize;
    if !(1..=256).contains(&size) {
        return Err(NeuralError::Corrupt("implausible ensemble size"));
    }
    let quantile_level = read_f64(r)?;
    let state_dim = read_u32(r)? as usize;
    let action_dim = read_u32(r)? as usize;
    let members: Result<Vec<Mlp>> = (0..size).map(|_| read_mlp(r)).collect();
    let targets: Result<Vec<Mlp>> = (0..size).map(|_| read_mlp(r)).collect();
    CriticEnsemble::from_parts(members?, targets?, quantile_level, state_dim, action_dim)
}

pub fn write_norm_stats(w: &mut impl Write, stats: &NormalizationStats) -> Result<()> {
    write_f64_vec(w, &stats.mean)?;
    write_f64_vec(w, &stats.std)
}

pub fn read_norm_stats(r: &mut impl Read) -> Result<NormalizationStats> {
    let mean = read_f64_vec(r)?;
    let std = read_f64_vec(r)?;
    if mean.len() != std.len() {
        return Err(NeuralError::Corrupt("normalization stat lengths disagree"));
    }
    Ok(NormalizationStats { mean, std })
}

//! Binary checkpoint: `HOCD` magic, `u32` version, layer sizes, then
//! little-endian `f64` parameters in a fixed order.

use std::fs;
use std::path::Path;

use super::mlp::{Adam, Mlp};
use super::{PolicyParams, RlError, OBS_DIM};

pub const MAGIC: &[u8; 4] = b"HOCD";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_sizes(out: &mut Vec<u8>, net: &Mlp) {
    let sizes = net.sizes();
    put_u32(out, sizes.len() as u32);
    for s in sizes {
        put_u32(out, s as u32);
    }
}

fn put_net(out: &mut Vec<u8>, net: &Mlp) {
    for v in net.params() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes in order: actor, critic, actor Adam m and v, critic Adam m
/// and v, actor and critic learning rates, then `u64` counters (actor Adam
/// steps, critic Adam steps, updates).
pub fn to_bytes(p: &PolicyParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * 6 * p.actor.param_count());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_sizes(&mut out, &p.actor);
    put_sizes(&mut out, &p.critic);
    for net in [&p.actor, &p.critic, &p.actor_opt.m, &p.actor_opt.v, &p.critic_opt.m, &p.critic_opt.v] {
        put_net(&mut out, net);
    }
    out.extend_from_slice(&p.actor_opt.lr.to_le_bytes());
    out.extend_from_slice(&p.critic_opt.lr.to_le_bytes());
    for c in [p.actor_opt.t, p.critic_opt.t, p.updates] {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], RlError> {
        let end = self.pos + N;
        let bytes = self.data.get(self.pos..end).ok_or_else(|| RlError::Checkpoint("truncated file".into()))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length"))
    }

    fn u32(&mut self) -> Result<u32, RlError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, RlError> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64, RlError> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn sizes(&mut self) -> Result<Vec<usize>, RlError> {
        let n = self.u32()? as usize;
        if !(2..=16).contains(&n) {
            return Err(RlError::Checkpoint(format!("implausible layer count {n}")));
        }
        let sizes = (0..n).map(|_| self.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        if sizes.iter().any(|s| *s == 0 || *s > 1 << 16) {
            return Err(RlError::Checkpoint("implausible layer size".into()));
        }
        Ok(sizes)
    }

    fn net(&mut self, sizes: &[usize]) -> Result<Mlp, RlError> {
        let mut net = Mlp::zeros(sizes);
        for p in net.params_mut() {
            *p = self.f64()?;
        }
        Ok(net)
    }
}

pub fn from_bytes(data: &[u8]) -> Result<PolicyParams, RlError> {
    let mut r = Reader { data, pos: 0 };
    if &r.take::<4>()? != MAGIC {
        return Err(RlError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(RlError::Checkpoint(format!("unsupported version {version}")));
    }
    let (actor_sizes, critic_sizes) = (r.sizes()?, r.sizes()?);
    if actor_sizes.last() != Some(&2) || critic_sizes.last() != Some(&1) || actor_sizes[0] != OBS_DIM || critic_sizes[0] != OBS_DIM {
        return Err(RlError::Checkpoint("unexpected network shapes".into()));
    }
    let actor = r.net(&actor_sizes)?;
    let critic = r.net(&critic_sizes)?;
    let (am, av) = (r.net(&actor_sizes)?, r.net(&actor_sizes)?);
    let (cm, cv) = (r.net(&critic_sizes)?, r.net(&critic_sizes)?);
    let (alr, clr) = (r.f64()?, r.f64()?);
    let (at, ct, updates) = (r.u64()?, r.u64()?, r.u64()?);
    if r.pos != data.len() {
        return Err(RlError::Checkpoint("trailing bytes".into()));
    }
    if ![&actor, &critic, &am, &av, &cm, &cv].iter().all(|n| n.is_finite()) || !(alr.is_finite() && clr.is_finite()) {
        return Err(RlError::Checkpoint("non-finite values".into()));
    }
    let mut actor_opt = Adam::new(&actor, alr);
    actor_opt.m = am;
    actor_opt.v = av;
    actor_opt.t = at;
    let mut critic_opt = Adam::new(&critic, clr);
    critic_opt.m = cm;
    critic_opt.v = cv;
    critic_opt.t = ct;
    Ok(PolicyParams { actor, critic, actor_opt, critic_opt, updates, log_std_floor: super::ppo::LOG_STD_MIN })
}

pub fn save_checkpoint(path: &Path, p: &PolicyParams) -> Result<(), RlError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, to_bytes(p))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams, RlError> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::PpoConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_exact() {
        let cfg = PpoConfig { hidden: 5, log_std_floor: crate::rl::ppo::LOG_STD_MIN, ..Default::default() };
        let mut p = PolicyParams::new(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        p.actor_opt.m.layers[0].w[(1, 2)] = 0.25;
        p.critic_opt.t = 7;
        p.updates = 3;
        let bytes = to_bytes(&p);
        assert_eq!(&bytes[..4], b"HOCD");
        assert_eq!(from_bytes(&bytes).unwrap(), p);
    }

    #[test]
    fn rejects_corruption() {
        let cfg = PpoConfig { hidden: 3, ..Default::default() };
        let p = PolicyParams::zeros(&cfg);
        let bytes = to_bytes(&p);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(from_bytes(&long).is_err());
        let mut ver = bytes.clone();
        ver[4] = 9;
        assert!(from_bytes(&ver).is_err());
        // Magic, version and two four-layer size headers precede the first weight.
        let mut nan = bytes;
        nan[48..56].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(from_bytes(&nan), Err(RlError::Checkpoint(m)) if m.contains("non-finite")));
    }
}

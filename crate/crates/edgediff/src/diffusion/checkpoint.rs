use super::{AdamState, Denoiser, DenoiserConfig, NoiseSchedule};
use crate::inject::InjectionConfig;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"EDCK";
const VERSION: u32 = 1;

/// Everything needed to resume or sample: architecture, parameters,
/// optimizer state, and the exact noise schedule trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
    pub adam: AdamState,
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn write_f64s(w: &mut impl Write, xs: &[f64]) -> io::Result<()> {
    w.write_u64::<LittleEndian>(xs.len() as u64)?;
    for &x in xs {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read) -> io::Result<Vec<f64>> {
    let n = r.read_u64::<LittleEndian>()? as usize;
    if n > (1 << 32) {
        return Err(bad(format!("implausible array length {n}")));
    }
    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        xs.push(r.read_f64::<LittleEndian>()?);
    }
    Ok(xs)
}

/// Single versioned binary file; magic header, little-endian, f64 payloads.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;

    let cfg = ck.denoiser.config();
    for &width in &cfg.widths {
        w.write_u32::<LittleEndian>(width as u32)?;
    }
    w.write_f64::<LittleEndian>(cfg.injection.lambda_inj)?;
    w.write_u8(cfg.injection.use_laplacian_prefilter as u8)?;

    let t_total = ck.schedule.len();
    let alpha_bar: Vec<f64> =
        (1..=t_total).map(|t| ck.schedule.alpha_bar(t).expect("valid index")).collect();
    write_f64s(&mut w, &alpha_bar)?;

    write_f64s(&mut w, ck.denoiser.params())?;
    w.write_u64::<LittleEndian>(ck.adam.step)?;
    write_f64s(&mut w, &ck.adam.m)?;
    write_f64s(&mut w, &ck.adam.v)?;
    w.flush()
}

pub fn load_checkpoint(path: &Path) -> io::Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }

    let mut widths = [0usize; 3];
    for width in &mut widths {
        *width = r.read_u32::<LittleEndian>()? as usize;
    }
    let lambda_inj = r.read_f64::<LittleEndian>()?;
    let use_laplacian_prefilter = r.read_u8()? != 0;
    let cfg = DenoiserConfig {
        widths,
        injection: InjectionConfig { lambda_inj, use_laplacian_prefilter },
    };

    let alpha_bar = read_f64s(&mut r)?;
    let schedule = NoiseSchedule::from_raw(alpha_bar).map_err(|e| bad(e.to_string()))?;
    let params = read_f64s(&mut r)?;
    let denoiser = Denoiser::from_params(cfg, params).map_err(|e| bad(e.to_string()))?;
    let step = r.read_u64::<LittleEndian>()?;
    let m = read_f64s(&mut r)?;
    let v = read_f64s(&mut r)?;
    if m.len() != denoiser.param_count() || v.len() != denoiser.param_count() {
        return Err(bad("optimizer state length does not match parameter count"));
    }
    Ok(Checkpoint { denoiser, schedule, adam: AdamState { m, v, step } })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_checkpoint() -> Checkpoint {
        let cfg = DenoiserConfig { widths: [2, 3, 4], ..Default::default() };
        let denoiser = Denoiser::new(cfg, 77).unwrap();
        let n = denoiser.param_count();
        let adam = AdamState {
            m: (0..n).map(|i| i as f64 * 0.25).collect(),
            v: (0..n).map(|i| i as f64 * 0.5 + 1.0).collect(),
            step: 42,
        };
        Checkpoint { denoiser, schedule: NoiseSchedule::cosine(17).unwrap(), adam }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = sample_checkpoint();
        save_checkpoint(&path, &ck).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(ck, back);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::File::create(&path).unwrap().write_all(b"NOPE0000").unwrap();
        assert!(load_checkpoint(&path).is_err());

        let good = dir.path().join("model.ckpt");
        save_checkpoint(&good, &sample_checkpoint()).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes[4] = 99; // bump version
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn truncated_file_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("model.ckpt");
        save_checkpoint(&good, &sample_checkpoint()).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let short = dir.path().join("short.ckpt");
        std::fs::write(&short, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&short).is_err());
    }
}

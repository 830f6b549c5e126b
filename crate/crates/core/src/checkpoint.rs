//! Binary checkpoint format: versioned header followed by named
//! little-endian f64 arrays (network parameters, optimizer moments,
//! normalizer statistics, curriculum levels).

use crate::obs::RunningNormalizer;
use crate::rl::{Mlp, PpoConfig, PpoLearner, Real};
use crate::{Error, Result};
use ndarray::Array1;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"TRCK";
const VERSION: u32 = 1;

/// Named f64 sections, order-independent.
#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub sections: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn insert(&mut self, name: &str, data: Vec<f64>) {
        self.sections.insert(name.to_string(), data);
    }

    pub fn get(&self, name: &str) -> Result<&Vec<f64>> {
        self.sections
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint missing section `{name}`")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let v = self.get(name)?;
        if v.len() != 1 {
            return Err(Error::Format(format!("section `{name}` is not a scalar")));
        }
        Ok(v[0])
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.sections.len() as u32).to_le_bytes())?;
        for (name, data) in &self.sections {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(data.len() as u64).to_le_bytes())?;
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        r.read_exact(&mut u32buf)?;
        let count = u32::from_le_bytes(u32buf) as usize;
        let mut sections = BTreeMap::new();
        for _ in 0..count {
            r.read_exact(&mut u32buf)?;
            let name_len = u32::from_le_bytes(u32buf) as usize;
            if name_len > 4096 {
                return Err(Error::Format("implausible section name".into()));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("section name is not utf-8".into()))?;
            let mut u64buf = [0u8; 8];
            r.read_exact(&mut u64buf)?;
            let len = u64::from_le_bytes(u64buf) as usize;
            if len > 256_000_000 {
                return Err(Error::Format("implausible section length".into()));
            }
            let mut data = vec![0.0f64; len];
            let mut f64buf = [0u8; 8];
            for v in data.iter_mut() {
                r.read_exact(&mut f64buf)?;
                *v = f64::from_le_bytes(f64buf);
            }
            sections.insert(name, data);
        }
        Ok(Self { sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }
}

fn push_mlp<F: Real>(ck: &mut Checkpoint, prefix: &str, mlp: &Mlp<F>) {
    let dims: Vec<f64> = mlp.dims().iter().map(|d| *d as f64).collect();
    ck.insert(&format!("{prefix}_dims"), dims);
    ck.insert(prefix, mlp.flatten().iter().map(|v| v.into_f64()).collect());
}

fn read_mlp<F: Real>(ck: &Checkpoint, prefix: &str) -> Result<Mlp<F>> {
    let dims: Vec<usize> = ck.get(&format!("{prefix}_dims"))?.iter().map(|d| *d as usize).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    use rand::SeedableRng;
    let mut mlp = Mlp::new(&dims, 1.0, &mut rng);
    let flat = ck.get(prefix)?;
    if flat.len() != mlp.param_count() {
        return Err(Error::Format(format!("section `{prefix}` has wrong length")));
    }
    let cast: Vec<F> = flat.iter().map(|v| F::from_f64(*v)).collect();
    mlp.unflatten(&cast);
    Ok(mlp)
}

fn push_normalizer(ck: &mut Checkpoint, prefix: &str, norm: &RunningNormalizer) {
    let (mean, m2, count) = norm.raw();
    ck.insert(&format!("{prefix}_mean"), mean);
    ck.insert(&format!("{prefix}_m2"), m2);
    ck.insert(&format!("{prefix}_count"), vec![count]);
}

fn read_normalizer(ck: &Checkpoint, prefix: &str) -> Result<RunningNormalizer> {
    let mean = ck.get(&format!("{prefix}_mean"))?.clone();
    let m2 = ck.get(&format!("{prefix}_m2"))?.clone();
    let count = ck.scalar(&format!("{prefix}_count"))?;
    Ok(RunningNormalizer::from_raw(mean, m2, count))
}

/// Everything needed to resume inference (and inspect training state).
pub struct TrainerSnapshot<F> {
    pub learner: PpoLearner<F>,
    pub policy_norm: RunningNormalizer,
    pub priv_norm: RunningNormalizer,
    pub curriculum_levels: Vec<u8>,
    pub epoch: usize,
}

/// Serializes the learner, normalizers, and curriculum into a checkpoint.
pub fn snapshot_to_checkpoint<F: Real>(snap: &TrainerSnapshot<F>) -> Checkpoint {
    let mut ck = Checkpoint::default();
    push_mlp(&mut ck, "policy", &snap.learner.policy);
    push_mlp(&mut ck, "value", &snap.learner.value);
    ck.insert("log_std", snap.learner.log_std.iter().map(|v| v.into_f64()).collect());
    ck.insert("policy_adam_m", snap.learner.policy_adam.m.clone());
    ck.insert("policy_adam_v", snap.learner.policy_adam.v.clone());
    ck.insert("policy_adam_t", vec![snap.learner.policy_adam.t as f64]);
    ck.insert("value_adam_m", snap.learner.value_adam.m.clone());
    ck.insert("value_adam_v", snap.learner.value_adam.v.clone());
    ck.insert("value_adam_t", vec![snap.learner.value_adam.t as f64]);
    ck.insert("logstd_adam_m", snap.learner.log_std_adam.m.clone());
    ck.insert("logstd_adam_v", snap.learner.log_std_adam.v.clone());
    ck.insert("logstd_adam_t", vec![snap.learner.log_std_adam.t as f64]);
    ck.insert("lr", vec![snap.learner.lr]);
    push_normalizer(&mut ck, "policy_norm", &snap.policy_norm);
    push_normalizer(&mut ck, "priv_norm", &snap.priv_norm);
    ck.insert(
        "curriculum_levels",
        snap.curriculum_levels.iter().map(|l| *l as f64).collect(),
    );
    ck.insert("epoch", vec![snap.epoch as f64]);
    ck
}

/// Rebuilds a trainer snapshot from a checkpoint, using `cfg` for the
/// hyperparameters that are not stored.
pub fn snapshot_from_checkpoint<F: Real>(
    ck: &Checkpoint,
    cfg: PpoConfig,
) -> Result<TrainerSnapshot<F>> {
    let policy = read_mlp::<F>(ck, "policy")?;
    let value = read_mlp::<F>(ck, "value")?;
    let log_std_raw = ck.get("log_std")?;
    let log_std = Array1::from_iter(log_std_raw.iter().map(|v| F::from_f64(*v)));
    let mut learner = {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        PpoLearner::<F>::new(policy.input_dim(), value.input_dim(), policy.output_dim(), cfg, &mut rng)
    };
    learner.policy = policy;
    learner.value = value;
    learner.log_std = log_std;
    learner.policy_adam.m = ck.get("policy_adam_m")?.clone();
    learner.policy_adam.v = ck.get("policy_adam_v")?.clone();
    learner.policy_adam.t = ck.scalar("policy_adam_t")? as u64;
    learner.value_adam.m = ck.get("value_adam_m")?.clone();
    learner.value_adam.v = ck.get("value_adam_v")?.clone();
    learner.value_adam.t = ck.scalar("value_adam_t")? as u64;
    learner.log_std_adam.m = ck.get("logstd_adam_m")?.clone();
    learner.log_std_adam.v = ck.get("logstd_adam_v")?.clone();
    learner.log_std_adam.t = ck.scalar("logstd_adam_t")? as u64;
    learner.lr = ck.scalar("lr")?;
    let policy_norm = read_normalizer(ck, "policy_norm")?;
    let priv_norm = read_normalizer(ck, "priv_norm")?;
    let curriculum_levels =
        ck.get("curriculum_levels")?.iter().map(|l| *l as u8).collect();
    let epoch = ck.scalar("epoch")? as usize;
    Ok(TrainerSnapshot { learner, policy_norm, priv_norm, curriculum_levels, epoch })
}

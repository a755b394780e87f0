use super::tensor::Tensor;
use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SL3DCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameter value plus its AdamW moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    pub value: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

/// Named model parameters with optimizer state. Iteration order is the sorted
/// name order (BTreeMap), which keeps optimizer sweeps deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, ParamState>,
}

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&ParamState> {
        self.params.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    fn insert_new(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Invalid(format!("parameter '{name}' already registered")));
        }
        let shape = value.shape().to_vec();
        self.params.insert(
            name.to_string(),
            ParamState {
                value,
                m: Tensor::zeros(&shape),
                v: Tensor::zeros(&shape),
                step: 0,
            },
        );
        Ok(())
    }

    /// Xavier-uniform init: U(−a, a) with a = sqrt(6/(fan_in+fan_out)).
    pub fn init_xavier(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-a..a)).collect();
        self.insert_new(name, Tensor::from_vec(shape, data)?)
    }

    pub fn init_const(&mut self, name: &str, shape: &[usize], value: f64) -> Result<()> {
        self.insert_new(name, Tensor::full(shape, value))
    }

    /// Overwrite a parameter's value, preserving shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter '{name}'")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter '{name}': cannot replace {:?} with {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    /// One decoupled-weight-decay Adam step over every parameter. Parameters
    /// missing from `grads` are treated as having zero gradient (they still
    /// decay and advance their step counter).
    pub fn adamw_step(&mut self, grads: &BTreeMap<String, Tensor>, cfg: &AdamWConfig) -> Result<()> {
        for (name, g) in grads {
            let p = self
                .params
                .get(name)
                .ok_or_else(|| Error::Invalid(format!("gradient for unknown parameter '{name}'")))?;
            if p.value.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient shape {:?} for parameter '{name}' of shape {:?}",
                    g.shape(),
                    p.value.shape()
                )));
            }
        }
        let zero = Tensor::scalar(0.0);
        for (name, p) in self.params.iter_mut() {
            let g = grads.get(name);
            p.step += 1;
            let t = p.step as f64;
            let bc1 = 1.0 - cfg.beta1.powf(t);
            let bc2 = 1.0 - cfg.beta2.powf(t);
            let gd = g.map_or(zero.data(), |g| g.data());
            let n = p.value.len();
            for i in 0..n {
                let gi = if gd.len() == n { gd[i] } else { 0.0 };
                let m = cfg.beta1 * p.m.data()[i] + (1.0 - cfg.beta1) * gi;
                let v = cfg.beta2 * p.v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
                p.m.data_mut()[i] = m;
                p.v.data_mut()[i] = v;
                let mhat = m / bc1;
                let vhat = v / bc2;
                let theta = p.value.data()[i];
                p.value.data_mut()[i] = theta - cfg.lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * theta);
            }
        }
        Ok(())
    }
}

fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w.write_u64::<LittleEndian>(t.shape().len() as u64)?;
    for &d in t.shape() {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    for &v in t.data() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let ndim = r.read_u64::<LittleEndian>()? as usize;
    if ndim > 8 {
        return Err(Error::Checkpoint(format!("implausible tensor rank {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.read_u64::<LittleEndian>()? as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut data)?;
    Tensor::from_vec(&shape, data)
}

/// Write a checkpoint: magic, version, a JSON header block (model config and
/// run metadata), then per-parameter records with optimizer state. All
/// integers and floats little-endian.
pub fn save_checkpoint(path: &Path, header_json: &str, store: &ParameterStore) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    let hb = header_json.as_bytes();
    w.write_u64::<LittleEndian>(hb.len() as u64)?;
    w.write_all(hb)?;
    w.write_u64::<LittleEndian>(store.params.len() as u64)?;
    for (name, p) in &store.params {
        let nb = name.as_bytes();
        w.write_u64::<LittleEndian>(nb.len() as u64)?;
        w.write_all(nb)?;
        write_tensor(&mut w, &p.value)?;
        write_tensor(&mut w, &p.m)?;
        write_tensor(&mut w, &p.v)?;
        w.write_u64::<LittleEndian>(p.step)?;
    }
    w.flush()?;
    Ok(())
}

/// Read back a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(String, ParameterStore)> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes; not a checkpoint file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let hlen = r.read_u64::<LittleEndian>()? as usize;
    let mut hb = vec![0u8; hlen];
    r.read_exact(&mut hb)?;
    let header = String::from_utf8(hb).map_err(|_| Error::Checkpoint("header is not valid UTF-8".into()))?;
    let count = r.read_u64::<LittleEndian>()? as usize;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let nlen = r.read_u64::<LittleEndian>()? as usize;
        let mut nb = vec![0u8; nlen];
        r.read_exact(&mut nb)?;
        let name = String::from_utf8(nb).map_err(|_| Error::Checkpoint("parameter name is not valid UTF-8".into()))?;
        let value = read_tensor(&mut r)?;
        let m = read_tensor(&mut r)?;
        let v = read_tensor(&mut r)?;
        let step = r.read_u64::<LittleEndian>()?;
        store.params.insert(name, ParamState { value, m, v, step });
    }
    Ok((header, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xavier_bounds_and_duplicate_rejection() {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        store.init_xavier("w", &[40, 30], 30, 40, &mut rng).unwrap();
        let a = (6.0 / 70.0f64).sqrt();
        assert!(store.get("w").unwrap().value.data().iter().all(|v| v.abs() < a));
        assert!(store.init_xavier("w", &[2], 1, 1, &mut rng).is_err());
    }

    #[test]
    fn adamw_zero_grad_no_decay_leaves_params() {
        let mut store = ParameterStore::new();
        store.init_const("p", &[3], 2.0).unwrap();
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), Tensor::zeros(&[3]));
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        store.adamw_step(&grads, &cfg).unwrap();
        assert_eq!(store.get("p").unwrap().value.data(), &[2.0, 2.0, 2.0]);
        assert_eq!(store.get("p").unwrap().step, 1);
    }

    #[test]
    fn adamw_first_step_magnitude_is_lr() {
        let mut store = ParameterStore::new();
        store.init_const("p", &[1], 0.0).unwrap();
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), Tensor::from_vec(&[1], vec![0.37]).unwrap());
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        store.adamw_step(&grads, &cfg).unwrap();
        // m̂=g, v̂=g² ⇒ Δθ = −lr·g/(|g|+ε) ≈ −lr
        let v = store.get("p").unwrap().value.data()[0];
        assert!((v + cfg.lr).abs() < 1e-7, "got {v}");
    }

    #[test]
    fn adamw_minimizes_scalar_quadratic() {
        let mut store = ParameterStore::new();
        store.init_const("theta", &[1], 0.0).unwrap();
        let cfg = AdamWConfig {
            lr: 0.05,
            weight_decay: 0.0,
            ..Default::default()
        };
        for _ in 0..2000 {
            let theta = store.get("theta").unwrap().value.data()[0];
            let g = 2.0 * (theta - 3.0);
            let mut grads = BTreeMap::new();
            grads.insert("theta".to_string(), Tensor::from_vec(&[1], vec![g]).unwrap());
            store.adamw_step(&grads, &cfg).unwrap();
        }
        let theta = store.get("theta").unwrap().value.data()[0];
        assert!((theta - 3.0).abs() < 0.01, "theta = {theta}");
    }

    #[test]
    fn adamw_rejects_unknown_or_misshapen_grads() {
        let mut store = ParameterStore::new();
        store.init_const("p", &[2], 0.0).unwrap();
        let mut grads = BTreeMap::new();
        grads.insert("q".to_string(), Tensor::zeros(&[2]));
        assert!(store.adamw_step(&grads, &AdamWConfig::default()).is_err());
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), Tensor::zeros(&[3]));
        assert!(store.adamw_step(&grads, &AdamWConfig::default()).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.ckpt");
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        store.init_xavier("a.w", &[4, 3], 3, 4, &mut rng).unwrap();
        store.init_xavier("b.w", &[2, 2, 3, 3], 18, 18, &mut rng).unwrap();
        store.init_const("a.b", &[4], 0.0).unwrap();
        // advance optimizer state so m/v/step are non-trivial
        let mut grads = BTreeMap::new();
        grads.insert("a.w".to_string(), Tensor::full(&[4, 3], 0.3));
        store.adamw_step(&grads, &AdamWConfig::default()).unwrap();

        save_checkpoint(&path, "{\"kind\":\"test\"}", &store).unwrap();
        let (header, loaded) = load_checkpoint(&path).unwrap();
        assert_eq!(header, "{\"kind\":\"test\"}");
        assert_eq!(loaded, store);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}

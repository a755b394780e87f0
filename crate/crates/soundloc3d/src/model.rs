//! The localizer network: a strided conv ladder turns the stacked log-mel +
//! correlation maps of one view into a set of query embeddings; a shared
//! decoder reads out positions and class logits; queries optionally absorb
//! appearance features sampled at their decoded positions in every view; a
//! transformer layer mixes the queries; the same decoder reads out the
//! updated predictions.

use crate::autodiff::{
    bind_encoder_layer, init_encoder_layer, transformer_encoder_layer, EncoderLayerVars, ParameterStore, Tape, Tensor,
    Var,
};
use crate::error::{Error, Result};
use crate::geometry::{bilinear_sample, project, FeatureMap, Intrinsics, RigidTransform, Vec3};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Network sizing plus the ablation switches. `conv_channels` is the full
/// ladder including the input channel count; every conv is 3×3, stride 2,
/// pad 1, followed by ReLU, so each stage halves the spatial size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub q: usize,
    pub d: usize,
    pub k: usize,
    pub conv_channels: Vec<usize>,
    pub input_size: usize,
    pub mixer_layers: usize,
    pub mixer_heads: usize,
    pub mixer_ffn: usize,
    pub use_rgb: bool,
    pub use_depth_loss: bool,
    pub use_crossview_loss: bool,
}

impl ModelConfig {
    pub fn paper() -> Self {
        Self {
            q: 16,
            d: 256,
            k: 5,
            conv_channels: vec![10, 32, 64, 128, 256, 512, 256],
            input_size: 256,
            mixer_layers: 1,
            mixer_heads: 4,
            mixer_ffn: 1024,
            use_rgb: true,
            use_depth_loss: true,
            use_crossview_loss: true,
        }
    }

    pub fn desk() -> Self {
        Self {
            q: 16,
            d: 32,
            k: 2,
            conv_channels: vec![10, 16, 32, 64, 32],
            input_size: 64,
            mixer_layers: 1,
            mixer_heads: 4,
            mixer_ffn: 128,
            use_rgb: true,
            use_depth_loss: true,
            use_crossview_loss: true,
        }
    }

    pub fn n_convs(&self) -> usize {
        self.conv_channels.len() - 1
    }

    /// Spatial side of the final conv map.
    pub fn final_grid(&self) -> usize {
        self.input_size >> self.n_convs()
    }

    pub fn classes(&self) -> usize {
        self.k + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.len() < 2 {
            return Err(Error::Config("model: conv ladder needs at least one stage".into()));
        }
        if self.input_size == 0 || self.input_size % (1 << self.n_convs()) != 0 {
            return Err(Error::Config(format!(
                "model: input size {} not divisible by 2^{}",
                self.input_size,
                self.n_convs()
            )));
        }
        let fg = self.final_grid();
        if fg == 0 || fg * fg != self.q {
            return Err(Error::Config(format!(
                "model: final {fg}×{fg} conv map does not yield q = {} queries",
                self.q
            )));
        }
        if *self.conv_channels.last().unwrap() != self.d {
            return Err(Error::Config(format!(
                "model: last conv channels {} must equal query dim {}",
                self.conv_channels.last().unwrap(),
                self.d
            )));
        }
        if self.d % 2 != 0 {
            return Err(Error::Config("model: query dim must be even for the position head".into()));
        }
        if self.mixer_layers == 0 || self.mixer_heads == 0 || self.d % self.mixer_heads != 0 {
            return Err(Error::Config(format!(
                "model: query dim {} not divisible by {} heads",
                self.d, self.mixer_heads
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("model: need at least one real class".into()));
        }
        Ok(())
    }
}

/// Register every model parameter. Weight matrices are Xavier-uniform, biases
/// zero, norm scales one.
pub fn init_params(store: &mut ParameterStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<()> {
    cfg.validate()?;
    for (i, pair) in cfg.conv_channels.windows(2).enumerate() {
        let (cin, cout) = (pair[0], pair[1]);
        store.init_xavier(
            &format!("conv{i}.w"),
            &[cout, cin, 3, 3],
            cin * 9,
            cout * 9,
            rng,
        )?;
        store.init_const(&format!("conv{i}.b"), &[cout], 0.0)?;
    }
    let half = cfg.d / 2;
    store.init_xavier("decode.pos1.w", &[half, cfg.d], cfg.d, half, rng)?;
    store.init_const("decode.pos1.b", &[half], 0.0)?;
    store.init_const("decode.bn.g", &[half], 1.0)?;
    store.init_const("decode.bn.b", &[half], 0.0)?;
    store.init_xavier("decode.pos2.w", &[3, half], half, 3, rng)?;
    store.init_const("decode.pos2.b", &[3], 0.0)?;
    store.init_xavier("decode.cls.w", &[cfg.classes(), cfg.d], cfg.d, cfg.classes(), rng)?;
    store.init_const("decode.cls.b", &[cfg.classes()], 0.0)?;
    for l in 0..cfg.mixer_layers {
        init_encoder_layer(store, &format!("mixer.{l}"), cfg.d, cfg.mixer_ffn, rng)?;
    }
    Ok(())
}

/// Parameter handles bound onto one tape.
pub struct ModelVars {
    conv: Vec<(Var, Var)>,
    mixer: Vec<EncoderLayerVars>,
    pos1: (Var, Var),
    bn: (Var, Var),
    pos2: (Var, Var),
    cls: (Var, Var),
}

pub fn bind_model(tape: &mut Tape, store: &ParameterStore, cfg: &ModelConfig) -> Result<ModelVars> {
    let conv = (0..cfg.n_convs())
        .map(|i| {
            Ok((
                tape.param(store, &format!("conv{i}.w"))?,
                tape.param(store, &format!("conv{i}.b"))?,
            ))
        })
        .collect::<Result<_>>()?;
    let mixer = (0..cfg.mixer_layers)
        .map(|l| bind_encoder_layer(tape, store, &format!("mixer.{l}"), cfg.mixer_heads))
        .collect::<Result<_>>()?;
    Ok(ModelVars {
        conv,
        mixer,
        pos1: (tape.param(store, "decode.pos1.w")?, tape.param(store, "decode.pos1.b")?),
        bn: (tape.param(store, "decode.bn.g")?, tape.param(store, "decode.bn.b")?),
        pos2: (tape.param(store, "decode.pos2.w")?, tape.param(store, "decode.pos2.b")?),
        cls: (tape.param(store, "decode.cls.w")?, tape.param(store, "decode.cls.b")?),
    })
}

/// Conv ladder over the view's input tensor, then each cell of the final
/// feature map becomes one query: `[d, g, g] → [d, q] → qᵀ×d`.
pub fn query_generator(tape: &mut Tape, cfg: &ModelConfig, vars: &ModelVars, input: Var) -> Result<Var> {
    let shape = tape.shape(input).to_vec();
    if shape != [cfg.conv_channels[0], cfg.input_size, cfg.input_size] {
        return Err(Error::Shape(format!(
            "query_generator: input {shape:?}, expected {:?}",
            [cfg.conv_channels[0], cfg.input_size, cfg.input_size]
        )));
    }
    let mut x = input;
    for &(w, b) in &vars.conv {
        x = tape.conv2d(x, w, b, 2, 1)?;
        x = tape.relu(x);
    }
    let flat = tape.reshape(x, &[cfg.d, cfg.q])?;
    tape.transpose(flat)
}

/// Decoded outputs of one query set.
#[derive(Debug, Clone, Copy)]
pub struct DecodedPredictions {
    pub positions: Var,
    pub logits: Var,
}

/// Shared decoder: position head linear→batchnorm→ReLU→linear, class head a
/// single linear (last class = no-source).
pub fn decode_queries(tape: &mut Tape, vars: &ModelVars, queries: Var) -> Result<DecodedPredictions> {
    let h = tape.linear(queries, vars.pos1.0, vars.pos1.1)?;
    let h = tape.batchnorm1d(h, vars.bn.0, vars.bn.1, 1e-5)?;
    let h = tape.relu(h);
    let positions = tape.linear(h, vars.pos2.0, vars.pos2.1)?;
    let logits = tape.linear(queries, vars.cls.0, vars.cls.1)?;
    Ok(DecodedPredictions { positions, logits })
}

/// One view's pose and appearance grid, for cue aggregation.
#[derive(Debug, Clone, Copy)]
pub struct ViewAppearance<'a> {
    pub pose: RigidTransform,
    pub appearance: &'a FeatureMap,
}

/// Carry each query's decoded position into every view, sample that view's
/// appearance grid there (zeros when the projection leaves the image), and
/// add the mean sampled vector to the query embedding. The samples are
/// computed from the position *values*; gradients flow only through the
/// residual into the queries.
pub fn aggregate_rgb_cues(
    tape: &mut Tape,
    queries: Var,
    positions: &Tensor,
    own_view: usize,
    views: &[ViewAppearance],
    intrinsics: &Intrinsics,
) -> Result<Var> {
    let qshape = tape.shape(queries).to_vec();
    if qshape.len() != 2 {
        return Err(Error::Shape(format!("aggregate_rgb_cues: queries {qshape:?}")));
    }
    let (q, d) = (qshape[0], qshape[1]);
    if positions.shape() != [q, 3] {
        return Err(Error::Shape(format!(
            "aggregate_rgb_cues: positions {:?} for {q} queries",
            positions.shape()
        )));
    }
    if own_view >= views.len() {
        return Err(Error::Invalid(format!(
            "aggregate_rgb_cues: view {own_view} of {}",
            views.len()
        )));
    }
    for v in views {
        if v.appearance.channels != d {
            return Err(Error::Shape(format!(
                "aggregate_rgb_cues: appearance dim {} vs query dim {d}",
                v.appearance.channels
            )));
        }
    }
    let own_pose = views[own_view].pose;
    let mut cues = Tensor::zeros(&[q, d]);
    for i in 0..q {
        let p_world = own_pose.apply(&Vec3::new(
            positions.at2(i, 0),
            positions.at2(i, 1),
            positions.at2(i, 2),
        ));
        let row = &mut cues.data_mut()[i * d..(i + 1) * d];
        for view in views {
            let pix = project(intrinsics, &view.pose.inverse().apply(&p_world));
            let feat = bilinear_sample(view.appearance, &pix);
            for (acc, f) in row.iter_mut().zip(&feat) {
                *acc += f;
            }
        }
        for acc in row.iter_mut() {
            *acc /= views.len() as f64;
        }
    }
    let cues = tape.leaf(cues);
    tape.add(queries, cues)
}

/// Transformer layers over the query tokens.
pub fn feature_mixer(tape: &mut Tape, vars: &ModelVars, queries: Var) -> Result<Var> {
    let mut x = queries;
    for layer in &vars.mixer {
        x = transformer_encoder_layer(tape, x, layer)?;
    }
    Ok(x)
}

/// Everything the forward pass needs from one view.
#[derive(Debug, Clone)]
pub struct ViewInput<'a> {
    pub feature: Tensor,
    pub pose: RigidTransform,
    pub appearance: &'a FeatureMap,
}

/// Initial and updated predictions of one view.
#[derive(Debug, Clone, Copy)]
pub struct ViewOutput {
    pub initial: DecodedPredictions,
    pub updated: DecodedPredictions,
}

/// Full per-scene forward pass. Every view runs the generator and decoder
/// independently; with `use_rgb` the queries then absorb appearance cues
/// sampled at the initial positions across all views; the mixer and the
/// shared decoder produce the updated predictions.
pub fn forward_scene(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &ModelConfig,
    views: &[ViewInput],
    intrinsics: &Intrinsics,
) -> Result<Vec<ViewOutput>> {
    if views.is_empty() {
        return Err(Error::Invalid("forward_scene: no views".into()));
    }
    cfg.validate()?;
    let vars = bind_model(tape, store, cfg)?;

    let mut query_sets = Vec::with_capacity(views.len());
    let mut initial = Vec::with_capacity(views.len());
    for view in views {
        let input = tape.leaf(view.feature.clone());
        let queries = query_generator(tape, cfg, &vars, input)?;
        let decoded = decode_queries(tape, &vars, queries)?;
        query_sets.push(queries);
        initial.push(decoded);
    }

    let appearances: Vec<ViewAppearance> = views
        .iter()
        .map(|v| ViewAppearance {
            pose: v.pose,
            appearance: v.appearance,
        })
        .collect();

    let mut outputs = Vec::with_capacity(views.len());
    for (i, (&queries, init)) in query_sets.iter().zip(&initial).enumerate() {
        let fused = if cfg.use_rgb {
            let positions = tape.value(init.positions).clone();
            aggregate_rgb_cues(tape, queries, &positions, i, &appearances, intrinsics)?
        } else {
            queries
        };
        let mixed = feature_mixer(tape, &vars, fused)?;
        let updated = decode_queries(tape, &vars, mixed)?;
        outputs.push(ViewOutput {
            initial: *init,
            updated,
        });
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::rng::{rng_for, stream};

    fn tiny() -> ModelConfig {
        ModelConfig {
            q: 4,
            d: 8,
            k: 2,
            conv_channels: vec![3, 8, 8],
            input_size: 8,
            mixer_layers: 1,
            mixer_heads: 2,
            mixer_ffn: 16,
            use_rgb: true,
            use_depth_loss: true,
            use_crossview_loss: true,
        }
    }

    fn random_tensor(shape: &[usize], rng: &mut impl rand::Rng) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn const_map(channels: usize, grid: usize, scale: f64, value: f64) -> FeatureMap {
        let mut m = FeatureMap::zeros(channels, grid, grid, scale);
        m.values.iter_mut().for_each(|v| *v = value);
        m
    }

    fn init_store(cfg: &ModelConfig, seed: u64) -> ParameterStore {
        let mut store = ParameterStore::new();
        let mut rng = rng_for(seed, stream::MODEL_INIT);
        init_params(&mut store, cfg, &mut rng).unwrap();
        store
    }

    #[test]
    fn presets_are_self_consistent() {
        for cfg in [ModelConfig::paper(), ModelConfig::desk()] {
            cfg.validate().unwrap();
            assert_eq!(cfg.final_grid() * cfg.final_grid(), cfg.q);
            assert_eq!(*cfg.conv_channels.last().unwrap(), cfg.d);
        }
        assert_eq!(ModelConfig::paper().final_grid(), 4);
        assert_eq!(ModelConfig::desk().final_grid(), 4);
    }

    #[test]
    fn validate_rejects_inconsistent_sizes() {
        let mut c = tiny();
        c.q = 9;
        assert!(c.validate().is_err(), "grid/query mismatch");

        let mut c = tiny();
        c.conv_channels = vec![3, 8, 6];
        assert!(c.validate().is_err(), "last channels != d");

        let mut c = tiny();
        c.input_size = 10;
        assert!(c.validate().is_err(), "size not divisible by strides");

        let mut c = tiny();
        c.mixer_heads = 3;
        assert!(c.validate().is_err(), "d not divisible by heads");
    }

    #[test]
    fn query_generator_yields_q_by_d() {
        let cfg = tiny();
        let store = init_store(&cfg, 7);
        let mut rng = rng_for(7, 0x40);
        let mut tape = Tape::new();
        let vars = bind_model(&mut tape, &store, &cfg).unwrap();
        let input = tape.leaf(random_tensor(&[3, 8, 8], &mut rng));
        let q = query_generator(&mut tape, &cfg, &vars, input).unwrap();
        assert_eq!(tape.shape(q), &[4, 8]);
        assert!(tape.value(q).all_finite());

        let wrong = tape.leaf(Tensor::zeros(&[3, 8, 9]));
        assert!(query_generator(&mut tape, &cfg, &vars, wrong).is_err());
    }

    #[test]
    fn desk_generator_shape() {
        let cfg = ModelConfig::desk();
        let store = init_store(&cfg, 11);
        let mut rng = rng_for(11, 0x40);
        let mut tape = Tape::new();
        let vars = bind_model(&mut tape, &store, &cfg).unwrap();
        let input = tape.leaf(random_tensor(&[10, 64, 64], &mut rng));
        let q = query_generator(&mut tape, &cfg, &vars, input).unwrap();
        assert_eq!(tape.shape(q), &[16, 32]);
    }

    #[test]
    fn paper_forward_shapes() {
        let cfg = ModelConfig::paper();
        let store = init_store(&cfg, 3);
        let mut rng = rng_for(3, 0x41);
        let map_a = const_map(cfg.d, 8, 32.0, 0.1);
        let map_b = const_map(cfg.d, 8, 32.0, -0.2);
        let intr = Intrinsics::square_fov90(cfg.input_size);
        let views = vec![
            ViewInput {
                feature: random_tensor(&[10, 256, 256], &mut rng),
                pose: RigidTransform::look_at(&Vec3::new(0.0, -3.0, 1.5), &Vec3::new(0.0, 0.0, 1.5), &Vec3::z())
                    .unwrap(),
                appearance: &map_a,
            },
            ViewInput {
                feature: random_tensor(&[10, 256, 256], &mut rng),
                pose: RigidTransform::look_at(&Vec3::new(1.5, -2.7, 1.4), &Vec3::new(0.0, 0.0, 1.5), &Vec3::z())
                    .unwrap(),
                appearance: &map_b,
            },
        ];
        let mut tape = Tape::new();
        let out = forward_scene(&mut tape, &store, &cfg, &views, &intr).unwrap();
        assert_eq!(out.len(), 2);
        for o in &out {
            for stage in [o.initial, o.updated] {
                assert_eq!(tape.shape(stage.positions), &[16, 3]);
                assert_eq!(tape.shape(stage.logits), &[16, 6]);
                assert!(tape.value(stage.positions).all_finite());
                assert!(tape.value(stage.logits).all_finite());
            }
        }
        // the two stages must not collapse to the same output
        let a = tape.value(out[0].initial.positions);
        let b = tape.value(out[0].updated.positions);
        assert!(a.data().iter().zip(b.data()).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn decoder_gradients_match_finite_differences() {
        let cfg = tiny();
        let store = init_store(&cfg, 5);
        let mut rng = rng_for(5, 0x42);
        let queries = random_tensor(&[4, 8], &mut rng);
        // fixed random reduction: plain means would be blind to directions
        // the batchnorm projects out
        let wp = random_tensor(&[4, 3], &mut rng);
        let wl = random_tensor(&[4, 3], &mut rng);
        let err = grad_check(&[queries, wp, wl], |tape, vars| {
            let mv = bind_model(tape, &store, &cfg)?;
            let dec = decode_queries(tape, &mv, vars[0])?;
            let p = tape.mul(dec.positions, vars[1])?;
            let l = tape.mul(dec.logits, vars[2])?;
            let l = tape.slice_cols(l, 0, 3)?; // reduce a matching block
            let s1 = tape.sum_all(p);
            let s2 = tape.sum_all(l);
            tape.add(s1, s2)
        })
        .unwrap();
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn aggregation_adds_mean_of_constant_maps() {
        let d = 8;
        let map_a = const_map(d, 4, 4.0, 0.5);
        let map_b = const_map(d, 4, 4.0, -0.25);
        let views = [
            ViewAppearance {
                pose: RigidTransform::identity(),
                appearance: &map_a,
            },
            ViewAppearance {
                pose: RigidTransform::identity(),
                appearance: &map_b,
            },
        ];
        let intr = Intrinsics::square_fov90(16);
        let mut tape = Tape::new();
        let qv = Tensor::full(&[2, d], 1.0);
        let queries = tape.leaf(qv.clone());
        // both queries on the optical axis, comfortably inside the image
        let pos = Tensor::from_vec(&[2, 3], vec![0.0, 0.0, 2.0, 0.1, 0.1, 3.0]).unwrap();
        let out = aggregate_rgb_cues(&mut tape, queries, &pos, 0, &views, &intr).unwrap();
        let got = tape.value(out);
        for v in got.data() {
            assert!((v - (1.0 + (0.5 - 0.25) / 2.0)).abs() < 1e-12, "got {v}");
        }
    }

    #[test]
    fn aggregation_skips_invalid_projections() {
        let d = 4;
        let map_a = const_map(d, 4, 4.0, 0.8);
        let map_b = const_map(d, 4, 4.0, 0.4);
        // second camera sits far off to the side, so the point projects
        // outside its image
        let offset = RigidTransform::from_euler_zyx(0.0, 0.0, 0.0, Vec3::new(100.0, 0.0, 0.0));
        let views = [
            ViewAppearance {
                pose: RigidTransform::identity(),
                appearance: &map_a,
            },
            ViewAppearance {
                pose: offset,
                appearance: &map_b,
            },
        ];
        let intr = Intrinsics::square_fov90(16);
        let mut tape = Tape::new();
        let queries = tape.leaf(Tensor::zeros(&[1, d]));
        let pos = Tensor::from_vec(&[1, 3], vec![0.0, 0.0, 2.0]).unwrap();
        let out = aggregate_rgb_cues(&mut tape, queries, &pos, 0, &views, &intr).unwrap();
        for v in tape.value(out).data() {
            assert!((v - 0.8 / 2.0).abs() < 1e-12, "invalid view should contribute zeros, got {v}");
        }

        // behind every camera: the cue vector is all zeros
        let mut tape = Tape::new();
        let queries = tape.leaf(Tensor::full(&[1, d], 0.3));
        let pos = Tensor::from_vec(&[1, 3], vec![0.0, 0.0, -2.0]).unwrap();
        let out = aggregate_rgb_cues(&mut tape, queries, &pos, 0, &views, &intr).unwrap();
        for v in tape.value(out).data() {
            assert_eq!(*v, 0.3);
        }
    }

    #[test]
    fn aggregation_single_view_uses_own_map() {
        let d = 4;
        let map = const_map(d, 4, 4.0, -0.6);
        let views = [ViewAppearance {
            pose: RigidTransform::identity(),
            appearance: &map,
        }];
        let intr = Intrinsics::square_fov90(16);
        let mut tape = Tape::new();
        let queries = tape.leaf(Tensor::zeros(&[1, d]));
        let pos = Tensor::from_vec(&[1, 3], vec![0.2, -0.1, 2.5]).unwrap();
        let out = aggregate_rgb_cues(&mut tape, queries, &pos, 0, &views, &intr).unwrap();
        for v in tape.value(out).data() {
            assert!((v + 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn mixer_is_permutation_equivariant() {
        let cfg = tiny();
        let store = init_store(&cfg, 13);
        let mut rng = rng_for(13, 0x43);
        let x = random_tensor(&[4, 8], &mut rng);
        let perm = [2usize, 0, 3, 1];
        let mut xp = Tensor::zeros(&[4, 8]);
        for (to, &from) in perm.iter().enumerate() {
            xp.data_mut()[to * 8..(to + 1) * 8].copy_from_slice(&x.data()[from * 8..(from + 1) * 8]);
        }

        let run = |input: Tensor| -> Tensor {
            let mut tape = Tape::new();
            let vars = bind_model(&mut tape, &store, &cfg).unwrap();
            let v = tape.leaf(input);
            let y = feature_mixer(&mut tape, &vars, v).unwrap();
            tape.value(y).clone()
        };
        let y = run(x);
        let yp = run(xp);
        for (to, &from) in perm.iter().enumerate() {
            for c in 0..8 {
                assert!(
                    (yp.at2(to, c) - y.at2(from, c)).abs() < 1e-10,
                    "row {from}->{to} col {c}"
                );
            }
        }
    }

    #[test]
    fn no_rgb_forward_ignores_appearance() {
        let mut cfg = tiny();
        cfg.use_rgb = false;
        let store = init_store(&cfg, 17);
        let mut rng = rng_for(17, 0x44);
        let feature = random_tensor(&[3, 8, 8], &mut rng);
        let intr = Intrinsics::square_fov90(8);
        let pose = RigidTransform::identity();

        let run = |map: &FeatureMap| -> (Tensor, Tensor, Tensor) {
            let views = vec![ViewInput {
                feature: feature.clone(),
                pose,
                appearance: map,
            }];
            let mut tape = Tape::new();
            let out = forward_scene(&mut tape, &store, &cfg, &views, &intr).unwrap();
            (
                tape.value(out[0].initial.positions).clone(),
                tape.value(out[0].updated.positions).clone(),
                tape.value(out[0].updated.logits).clone(),
            )
        };
        let a = run(&const_map(8, 4, 2.0, 0.9));
        let b = run(&const_map(8, 4, 2.0, -0.9));
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn initial_stage_never_sees_appearance() {
        let cfg = tiny(); // use_rgb = true
        let store = init_store(&cfg, 19);
        let mut rng = rng_for(19, 0x45);
        let feature = random_tensor(&[3, 8, 8], &mut rng);
        let intr = Intrinsics::square_fov90(8);
        let run = |map: &FeatureMap| -> (Tensor, Tensor) {
            let views = vec![ViewInput {
                feature: feature.clone(),
                pose: RigidTransform::identity(),
                appearance: map,
            }];
            let mut tape = Tape::new();
            let out = forward_scene(&mut tape, &store, &cfg, &views, &intr).unwrap();
            (
                tape.value(out[0].initial.positions).clone(),
                tape.value(out[0].updated.positions).clone(),
            )
        };
        let a = run(&const_map(8, 4, 2.0, 1.3));
        let b = run(&const_map(8, 4, 2.0, -1.3));
        assert_eq!(a.0, b.0, "initial predictions must not depend on appearance");
        assert_ne!(a.1, b.1, "updated predictions should react to appearance");
    }

    #[test]
    fn forward_rejects_empty_scene() {
        let cfg = tiny();
        let store = init_store(&cfg, 23);
        let intr = Intrinsics::square_fov90(8);
        let mut tape = Tape::new();
        assert!(forward_scene(&mut tape, &store, &cfg, &[], &intr).is_err());
    }

    #[test]
    fn forward_is_finite_across_seeds() {
        let cfg = tiny();
        let intr = Intrinsics::square_fov90(8);
        for seed in 0..6u64 {
            let store = init_store(&cfg, seed);
            let mut rng = rng_for(seed, 0x46);
            let map = {
                let mut m = FeatureMap::zeros(8, 4, 4, 2.0);
                m.values.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
                m
            };
            let views = vec![
                ViewInput {
                    feature: random_tensor(&[3, 8, 8], &mut rng),
                    pose: RigidTransform::identity(),
                    appearance: &map,
                },
                ViewInput {
                    feature: random_tensor(&[3, 8, 8], &mut rng),
                    pose: RigidTransform::from_euler_zyx(0.0, 0.0, 0.3, Vec3::new(0.5, 0.0, 0.0)),
                    appearance: &map,
                },
            ];
            let mut tape = Tape::new();
            let out = forward_scene(&mut tape, &store, &cfg, &views, &intr).unwrap();
            for o in out {
                for stage in [o.initial, o.updated] {
                    assert!(tape.value(stage.positions).all_finite());
                    assert!(tape.value(stage.logits).all_finite());
                }
            }
        }
    }
}

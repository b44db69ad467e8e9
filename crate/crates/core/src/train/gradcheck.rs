//! Finite-difference check of the full model's parameter gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{OpKind, Tape, Var};
use crate::error::{Error, Result};
use crate::gradcheck::check_function;
use crate::model::{
    build_adjacency, AgclLayer, BatchNorm, Cam, Ctx, Mode, Model, ModelConfig, PartitionStrategy, Sam, StcConfig,
    Tam,
};
use crate::param::{Binding, ParamGroup, ParamStore};
use crate::skeleton::{build_topology, SkeletonTopology, TopologySpec};
use crate::tensor::Tensor;

/// Central-difference step.
pub const GRADCHECK_EPS: f64 = 1e-4;
const BATCH: usize = 2;
/// Spread added to every parameter so zero-initialized gates, graphs and
/// attention layers are exercised away from their trivial point.
const PERTURB_STD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tol: f64,
    pub entries: Vec<ParamCheck>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.entries.iter().filter(move |e| e.max_rel_error > self.tol)
    }
}

/// Checks d(cross-entropy)/d(parameter) for every parameter of a model built
/// from `config`, on a random batch in training mode. `fault` corrupts the
/// backward rule of one op kind, which the check must then flag.
pub fn grad_check_model(
    config: &ModelConfig,
    topology: &SkeletonTopology,
    tol: f64,
    seed: u64,
    fault: Option<OpKind>,
) -> Result<GradCheckReport> {
    if config.blocks.len() > 3 {
        return Err(Error::Config(format!(
            "gradient check supports at most 3 blocks, config has {}",
            config.blocks.len()
        )));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Argument(format!("tolerance must be positive, got {tol}")));
    }
    let mut model = Model::new(config.clone(), topology.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    for p in model.store.params_mut() {
        let noise = Tensor::randn(p.value.shape(), PERTURB_STD, &mut rng);
        p.value.data_mut().iter_mut().zip(noise.data()).for_each(|(v, n)| *v += n);
    }
    let [c, t, n, m] = model.input_dims();
    let x = Tensor::randn(&[BATCH, c, t, n, m], 1.0, &mut rng);
    let labels: Vec<usize> = (0..BATCH).map(|_| rng.random_range(0..config.num_classes)).collect();

    let inputs: Vec<Tensor> = model.store.params().iter().map(|p| p.value.clone()).collect();
    let model = &model;
    let checks = check_function(&inputs, GRADCHECK_EPS, |tape, vars| {
        if let Some(kind) = fault {
            tape.inject_fault(kind);
        }
        let bind = Binding::from_vars(tape, vars.to_vec());
        let ctx = Ctx::new(&bind, &model.store, Mode::Train);
        model.forward(&ctx, tape.constant(x.clone()))?.cross_entropy(&labels)
    })?;
    let entries: Vec<ParamCheck> = model
        .store
        .params()
        .iter()
        .zip(checks)
        .map(|(p, c)| ParamCheck {
            name: p.name.clone(),
            max_rel_error: c.max_rel_error,
            checked: c.checked,
            skipped: c.skipped,
        })
        .collect();
    let passed = entries.iter().all(|e| e.max_rel_error <= tol);
    Ok(GradCheckReport { tol, entries, passed })
}

/// Shapes drawn for one round of component checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentDims {
    pub batch: usize,
    pub c_in: usize,
    pub channels: usize,
    pub frames: usize,
    pub joints: usize,
    pub partition: PartitionStrategy,
    pub k_v: usize,
    pub stride: usize,
    pub classes: usize,
}

impl ComponentDims {
    /// Batch 2, at most 8 channels, 12 frames, 7 joints and 3 subsets.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let (partition, k_v) = match rng.random_range(0..3) {
            0 => (PartitionStrategy::Uniform, 1),
            1 => (PartitionStrategy::Distance, 2),
            _ => (PartitionStrategy::Spatial, 3),
        };
        Self {
            batch: 2,
            c_in: rng.random_range(1..=8),
            channels: rng.random_range(4..=8),
            frames: rng.random_range(4..=12),
            joints: rng.random_range(2..=7),
            partition,
            k_v,
            stride: rng.random_range(1..=2),
            classes: rng.random_range(2..=5),
        }
    }
}

/// Random tree on `n` joints rooted at a random center.
fn random_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<SkeletonTopology> {
    let edges = (1..n).map(|j| (rng.random_range(0..j), j)).collect();
    build_topology(&TopologySpec::Custom {
        name: format!("tree{n}"),
        num_joints: n,
        edges,
        center: rng.random_range(0..n),
    })
}

type Body<'b> = dyn for<'a, 't> Fn(&Ctx<'a, 't>, &[Var<'t>]) -> Result<Var<'t>> + 'b;

/// Checks `Σ body(inputs) ⊙ R` for a fixed random `R`, with respect to every
/// parameter in `store` and every input.
fn check_component(
    component: &str,
    eps: f64,
    store: &ParamStore,
    inputs: &[(&str, Tensor)],
    rng: &mut ChaCha8Rng,
    body: &Body<'_>,
) -> Result<Vec<ParamCheck>> {
    let run = |tape: &Tape, vars: &[Var<'_>]| -> Result<Tensor> {
        let (params, xs) = vars.split_at(store.params().len());
        let bind = Binding::from_vars(tape, params.to_vec());
        let ctx = Ctx::new(&bind, store, Mode::Train);
        Ok(body(&ctx, xs)?.value())
    };
    let values: Vec<Tensor> = store
        .params()
        .iter()
        .map(|p| p.value.clone())
        .chain(inputs.iter().map(|(_, t)| t.clone()))
        .collect();
    let shape = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = values.iter().map(|v| tape.constant(v.clone())).collect();
        run(&tape, &vars)?.shape().to_vec()
    };
    let projection = Tensor::randn(&shape, 1.0, rng);
    let checks = check_function(&values, eps, |tape, vars| {
        let (params, xs) = vars.split_at(store.params().len());
        let bind = Binding::from_vars(tape, params.to_vec());
        let ctx = Ctx::new(&bind, store, Mode::Train);
        Ok(body(&ctx, xs)?.mul(tape.constant(projection.clone()))?.sum())
    })?;
    let names = store
        .params()
        .iter()
        .map(|p| p.name.clone())
        .chain(inputs.iter().map(|(n, _)| n.to_string()));
    Ok(names
        .zip(checks)
        .map(|(name, c)| ParamCheck {
            name: format!("{component}/{name}"),
            max_rel_error: c.max_rel_error,
            checked: c.checked,
            skipped: c.skipped,
        })
        .collect())
}

/// Gives every parameter a random value, including the zero-initialized
/// gates, graphs and attention layers.
fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for p in store.params_mut() {
        let noise = Tensor::randn(p.value.shape(), PERTURB_STD, rng);
        p.value.data_mut().iter_mut().zip(noise.data()).for_each(|(v, n)| *v += n);
    }
}

/// Checks each layer kind on its own: graph convolution, spatial attention,
/// both temporal attention branches, channel attention, temporal
/// convolution, batch normalization and the pooled classifier with its loss.
pub fn grad_check_components(dims: &ComponentDims, tol: f64, seed: u64) -> Result<GradCheckReport> {
    grad_check_components_with_eps(dims, GRADCHECK_EPS, tol, seed)
}

/// [`grad_check_components`] with a chosen central-difference step.
pub fn grad_check_components_with_eps(dims: &ComponentDims, eps: f64, tol: f64, seed: u64) -> Result<GradCheckReport> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Argument(format!("tolerance must be positive, got {tol}")));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Argument(format!("step must be positive, got {eps}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dims;
    let (b, c, t, n) = (d.batch, d.channels, d.frames, d.joints);
    let features = |rng: &mut ChaCha8Rng, ch: usize| Tensor::randn(&[b, ch, t, n], 1.0, rng);
    let mut entries = Vec::new();

    let topo = random_tree(n, &mut rng)?;
    let adj = build_adjacency(&topo, d.partition, d.k_v)?;
    let mut store = ParamStore::new();
    let c_e = (c / 4).max(1);
    let agcl = AgclLayer::new(&mut store, "agcl", d.c_in, c, c_e, n, d.k_v, None, &mut rng)?;
    randomize(&mut store, &mut rng);
    let x = features(&mut rng, d.c_in);
    entries.extend(check_component("agcl", eps, &store, &[("input", x)], &mut rng, &|ctx, xs| {
        let fixed: Vec<Var<'_>> = adj.normalized.iter().map(|a| ctx.constant(a.clone())).collect();
        agcl.forward(ctx, xs[0], &fixed)
    })?);

    let stc = StcConfig::default();
    let mut store = ParamStore::new();
    let sam = Sam::new(&mut store, "sam", c, stc.sam_kernel)?;
    randomize(&mut store, &mut rng);
    let x = features(&mut rng, c);
    entries.extend(check_component("sam", eps, &store, &[("input", x)], &mut rng, &|ctx, xs| {
        Ok(sam.forward(ctx, xs[0])?.0)
    })?);

    let mut store = ParamStore::new();
    let tam = Tam::new(&mut store, "tam", c, t, stc.reduction, stc.tam_kernel, &mut rng)?;
    randomize(&mut store, &mut rng);
    let x = features(&mut rng, c);
    entries.extend(check_component("tam_short", eps, &store, &[("input", x)], &mut rng, &|ctx, xs| {
        Ok(tam.short_branch(ctx, xs[0])?.0)
    })?);
    let f0 = features(&mut rng, c);
    let pooled = Tensor::randn(&[b, c, t], 1.0, &mut rng);
    entries.extend(check_component(
        "tam_long",
        eps,
        &store,
        &[("f0", f0), ("pooled", pooled)],
        &mut rng,
        &|ctx, xs| Ok(tam.long_branch(ctx, xs[0], xs[1])?.0),
    )?);

    let mut store = ParamStore::new();
    let cam = Cam::new(&mut store, "cam", c, stc.reduction, &mut rng)?;
    randomize(&mut store, &mut rng);
    let x = features(&mut rng, c);
    entries.extend(check_component("cam", eps, &store, &[("input", x)], &mut rng, &|ctx, xs| {
        Ok(cam.forward(ctx, xs[0])?.0)
    })?);

    let kernel = ModelConfig::default().temporal_kernel;
    let mut store = ParamStore::new();
    let w = store.add("tconv.weight", Tensor::randn(&[c, d.c_in, kernel], 0.3, &mut rng), ParamGroup::Weight)?;
    let bias = store.add("tconv.bias", Tensor::randn(&[c], 0.3, &mut rng), ParamGroup::Weight)?;
    let x = features(&mut rng, d.c_in);
    let stride = d.stride;
    entries.extend(check_component("tconv", eps, &store, &[("input", x)], &mut rng, &|ctx, xs| {
        xs[0].conv1d(ctx.p(w), Some(ctx.p(bias)), 1, 2, stride, (kernel - 1) / 2)
    })?);

    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", c)?;
    randomize(&mut store, &mut rng);
    let x = features(&mut rng, c);
    entries.extend(check_component("bn", eps, &store, &[("input", x)], &mut rng, &|ctx, xs| {
        bn.forward(ctx, xs[0], 1)
    })?);

    let mut store = ParamStore::new();
    let w = store.add("classifier.weight", Tensor::randn(&[d.classes, c], 0.5, &mut rng), ParamGroup::Weight)?;
    let bias = store.add("classifier.bias", Tensor::randn(&[d.classes], 0.5, &mut rng), ParamGroup::Weight)?;
    let bodies = 2;
    let x = Tensor::randn(&[b * bodies, c, t, n], 1.0, &mut rng);
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..d.classes)).collect();
    entries.extend(check_component("classifier", eps, &store, &[("input", x)], &mut rng, &|ctx, xs| {
        let pooled = xs[0].mean(&[2, 3])?.reshape(&[b, bodies, c])?.mean(&[1])?;
        let logits = pooled.conv_pointwise(ctx.p(w), Some(ctx.p(bias)), 1)?;
        logits.cross_entropy(&labels)?.reshape(&[1])
    })?);

    let passed = entries.iter().all(|e| e.max_rel_error <= tol);
    Ok(GradCheckReport { tol, entries, passed })
}

/// Component checks on `count` configurations drawn from `seed`.
pub fn grad_check_suite(seed: u64, count: usize, eps: f64, tol: f64) -> Result<Vec<(ComponentDims, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let dims = ComponentDims::random(&mut rng);
            let report = grad_check_components_with_eps(&dims, eps, tol, seed.wrapping_add(i as u64))?;
            Ok((dims, report))
        })
        .collect()
}
